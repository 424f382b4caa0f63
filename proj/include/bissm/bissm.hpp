#pragma once

#include "bissm/autodiff.hpp"
#include "bissm/checkpoint.hpp"
#include "bissm/dataset.hpp"
#include "bissm/error.hpp"
#include "bissm/eval.hpp"
#include "bissm/filtering.hpp"
#include "bissm/layers.hpp"
#include "bissm/model.hpp"
#include "bissm/optim.hpp"
#include "bissm/score_series.hpp"
#include "bissm/scoring.hpp"
#include "bissm/tensor.hpp"

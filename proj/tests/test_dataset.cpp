#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bissm/dataset.hpp"
#include "helpers.hpp"

using namespace bissm;
namespace fs = std::filesystem;

namespace {

TimeSeriesFrame frame_of(std::vector<double> x, std::vector<double> u = {}, std::vector<int> labels = {}) {
  TimeSeriesFrame f;
  for (std::size_t i = 0; i < x.size(); ++i) f.time.push_back(static_cast<double>(i + 1));
  f.signals.push_back({"x", ColumnKind::kContinuous, std::move(x)});
  if (!u.empty()) f.controls.push_back({"u", ColumnKind::kContinuous, std::move(u)});
  if (!labels.empty()) f.labels = std::move(labels);
  return f;
}

const Schema kSchema = Schema::parse("time = t\nsignals = x\ncontrols = u\nlabel = y\n");

}  // namespace

TEST(LoadCsv, ThreeRows) {
  auto dir = testing_util::fresh_dir("csv3");
  io::write_file(dir / "a.csv", "t,x,u,y\n1,0.5,1,0\n2,0.25,2,0\n3,-1,3,1\n");
  auto f = load_csv(dir / "a.csv", kSchema);
  ASSERT_EQ(f.length(), 3u);
  EXPECT_EQ(f.signals[0].values, (std::vector<double>{0.5, 0.25, -1}));
  EXPECT_EQ(f.controls[0].values, (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(*f.labels, (std::vector<int>{0, 0, 1}));
}

TEST(LoadCsv, MissingColumnIsNamed) {
  auto dir = testing_util::fresh_dir("csvmiss");
  io::write_file(dir / "a.csv", "t,x,y\n1,0.5,0\n");
  try {
    load_csv(dir / "a.csv", kSchema);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("'u'"), std::string::npos) << e.what();
  }
}

TEST(LoadCsv, BadNumberReportsLine) {
  auto dir = testing_util::fresh_dir("csvbad");
  io::write_file(dir / "a.csv", "t,x,u,y\n1,0.5,1,0\n2,abc,1,0\n");
  try {
    load_csv(dir / "a.csv", kSchema);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
  io::write_file(dir / "b.csv", "t,x,u,y\n1,0.5,1\n");
  EXPECT_THROW(load_csv(dir / "b.csv", kSchema), DataError);
}

TEST(LoadCsv, GlobsDropsAndLabelStrings) {
  auto dir = testing_util::fresh_dir("csvglob");
  io::write_file(dir / "a.csv", "Timestamp, FIT1, FIT2, AIT1, P1, P2, Normal/Attack\n"
                                "a,1,2,3,1,2,Normal\n"
                                "b,4,5,6,2,2,Attack\n");
  auto s = Schema::parse("label = Normal/Attack\nlabel_positive = Attack\ncontrols = P*:discrete\n"
                         "signals = *\ndrop = Timestamp, AIT1\n");
  auto f = load_csv(dir / "a.csv", s);
  ASSERT_EQ(f.signals.size(), 2u);
  EXPECT_EQ(f.signals[0].name, "FIT1");
  EXPECT_EQ(f.signals[1].name, "FIT2");
  ASSERT_EQ(f.controls.size(), 2u);
  EXPECT_EQ(f.controls[0].kind, ColumnKind::kDiscrete);
  EXPECT_EQ(*f.labels, (std::vector<int>{0, 1}));
  EXPECT_EQ(f.time, (std::vector<double>{1, 2}));
}

TEST(Schema, RejectsUnknownKeysAndKinds) {
  EXPECT_THROW(Schema::parse("signals = x\nwindow = 3\n"), ConfigError);
  EXPECT_THROW(Schema::parse("signals = x:categorical\n"), ConfigError);
  EXPECT_THROW(Schema::parse("controls = u\n"), ConfigError);
  EXPECT_THROW(Schema::parse("signals = x\nxl = 0\n"), ConfigError);
  auto s = Schema::parse("signals = x\nxl = 16\nul = 32\ndownsample = 5\n");
  EXPECT_EQ(s.xl, 16u);
  EXPECT_EQ(s.ul, 32u);
  EXPECT_EQ(s.downsample, 5u);
}

TEST(LoadCsv, WriteThenLoadRoundTrips) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1e3);
  auto dir = testing_util::fresh_dir("csvrt");
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t len = 1 + rng() % 50;
    std::vector<double> x, u;
    std::vector<int> y;
    for (std::size_t i = 0; i < len; ++i) {
      x.push_back(n(rng));
      u.push_back(std::ldexp(n(rng), -static_cast<int>(rng() % 60)));
      y.push_back(static_cast<int>(rng() % 2));
    }
    auto f = frame_of(x, u, y);
    f.time_name = "t";
    write_csv(f, dir / "rt.csv");
    auto s = Schema::parse("time = t\nsignals = x\ncontrols = u\nlabel = label\n");
    EXPECT_EQ(load_csv(dir / "rt.csv", s), f);
  }
}

TEST(Downsample, FactorOneIsIdentity) {
  auto f = frame_of({1, 2, 3, 4}, {5, 6, 7, 8}, {0, 1, 0, 0});
  EXPECT_EQ(downsample(f, 1), f);
}

TEST(Downsample, TenByFiveKeepsTwoRows) {
  std::vector<double> x(10);
  for (std::size_t i = 0; i < 10; ++i) x[i] = static_cast<double>(i);
  auto d = downsample(frame_of(x), 5);
  ASSERT_EQ(d.length(), 2u);
  EXPECT_EQ(d.signals[0].values, (std::vector<double>{0, 5}));
}

TEST(Downsample, BlockWithAnomalyKeepsLabel) {
  auto d = downsample(frame_of({0, 0, 0, 0, 0, 0}, {}, {0, 0, 1, 0, 0, 0}), 3);
  EXPECT_EQ(*d.labels, (std::vector<int>{1, 0}));
  EXPECT_THROW(downsample(frame_of({1}), 0), Error);
}

TEST(Normalization, MinMax) {
  auto f = frame_of({0, 5, 10});
  auto n = apply_normalization(f, fit_normalization(f));
  EXPECT_EQ(n.signals[0].values, (std::vector<double>{0, 0.5, 1}));
}

TEST(Normalization, ConstantColumnMapsToZero) {
  auto f = frame_of({7, 7, 7});
  auto n = apply_normalization(f, fit_normalization(f));
  EXPECT_EQ(n.signals[0].values, (std::vector<double>{0, 0, 0}));
}

TEST(Normalization, NoClampingOutsideTrainingRange) {
  auto spec = fit_normalization(frame_of({0, 10}));
  auto n = apply_normalization(frame_of({20, -5}), spec);
  EXPECT_EQ(n.signals[0].values, (std::vector<double>{2.0, -0.5}));
}

TEST(Normalization, DiscreteOneHotAndUnseenCategory) {
  auto train = frame_of({1, 2, 3}, {1, 2, 1});
  train.controls[0].kind = ColumnKind::kDiscrete;
  auto spec = fit_normalization(train);
  auto test = frame_of({1, 2, 3}, {2, 1, 5});
  test.controls[0].kind = ColumnKind::kDiscrete;
  auto n = apply_normalization(test, spec);
  ASSERT_EQ(n.controls.size(), 2u);
  EXPECT_EQ(n.controls[0].name, "u=1");
  EXPECT_EQ(n.controls[0].values, (std::vector<double>{0, 1, 0}));
  EXPECT_EQ(n.controls[1].values, (std::vector<double>{1, 0, 0}));
}

TEST(Normalization, TrainingValuesLandInUnitInterval) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> d(3.0, 40.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(1 + rng() % 100), u(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = d(rng);
      u[i] = d(rng);
    }
    auto f = frame_of(x, u);
    auto n = apply_normalization(f, fit_normalization(f));
    for (const auto* cols : {&n.signals, &n.controls}) {
      for (const auto& c : *cols) {
        for (double v : c.values) {
          EXPECT_GE(v, 0.0);
          EXPECT_LE(v, 1.0);
        }
      }
    }
  }
}

TEST(Windows, CountWithEqualLengths) {
  std::vector<double> x(10000, 0.0), u(10000, 0.0);
  auto w = make_windows(frame_of(x, u), 8, 8);
  EXPECT_EQ(w.size(), 9993u);
}

TEST(Windows, FirstWindowEndsAtLongerLength) {
  std::vector<double> x(100), u(100);
  for (std::size_t i = 0; i < 100; ++i) {
    x[i] = static_cast<double>(i + 1);
    u[i] = -static_cast<double>(i + 1);
  }
  auto w = make_windows(frame_of(x, u), 16, 32);
  EXPECT_EQ(w.size(), 100u - 32u + 1u);
  EXPECT_EQ(w.end_times[0], 32.0);
  // Signal window: rows 17..32. Control window: (x, u) for rows 1..32.
  auto sig = w.signal_window(0);
  EXPECT_EQ(sig.front(), 17.0);
  EXPECT_EQ(sig.back(), 32.0);
  auto ctl = w.control_window(0);
  ASSERT_EQ(ctl.size(), 64u);
  EXPECT_EQ(ctl[0], 1.0);
  EXPECT_EQ(ctl[1], -1.0);
  EXPECT_EQ(ctl[62], 32.0);
  EXPECT_EQ(ctl[63], -32.0);
}

TEST(Windows, LabelIsLabelOfLastRow) {
  auto w = make_windows(frame_of({1, 2, 3, 4}, {1, 1, 1, 1}, {0, 1, 0, 1}), 2, 2);
  EXPECT_EQ(w.labels, (std::vector<int>{1, 0, 1}));
}

TEST(Windows, ShortSeriesRejected) { EXPECT_THROW(make_windows(frame_of({1, 2, 3}), 4, 2), DataError); }

TEST(Windows, StrideOneIsExhaustive) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t xl = 1 + rng() % 10, ul = 1 + rng() % 20;
    const std::size_t len = std::max(xl, ul) + rng() % 40;
    auto w = make_windows(frame_of(std::vector<double>(len, 1.0), std::vector<double>(len, 0.0)), xl, ul);
    ASSERT_EQ(w.size(), len - std::max(xl, ul) + 1);
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_EQ(w.end_rows[i], std::max(xl, ul) - 1 + i);
  }
}

TEST(Split, ThreeQuarters) {
  std::vector<double> x(107, 0.0);
  auto w = make_windows(frame_of(x), 8, 8);
  ASSERT_EQ(w.size(), 100u);
  auto [tr, va] = split_train_val(w);
  EXPECT_EQ(tr.size(), 75u);
  EXPECT_EQ(va.size(), 25u);

  auto w4 = make_windows(frame_of({1, 2, 3, 4}), 1, 1);
  auto [t4, v4] = split_train_val(w4);
  EXPECT_EQ(t4.size(), 3u);
  EXPECT_EQ(v4.size(), 1u);
}

TEST(Split, IsAChronologicalPartition) {
  std::vector<double> x(60);
  for (std::size_t i = 0; i < 60; ++i) x[i] = static_cast<double>(i);
  auto w = make_windows(frame_of(x), 3, 3);
  auto [tr, va] = split_train_val(w, 0.6);
  EXPECT_EQ(tr.size() + va.size(), w.size());
  EXPECT_EQ(tr.end_rows.back() + 1, va.end_rows.front());
  EXPECT_EQ(va.signal_window(0)[2], static_cast<double>(va.end_rows.front()));
  EXPECT_THROW(split_train_val(make_windows(frame_of({1}), 1, 1)), DataError);
}

TEST(Synthetic, ControlStaircase) {
  EXPECT_EQ(synth_control(1), 1);
  EXPECT_EQ(synth_control(100), 1);
  EXPECT_EQ(synth_control(101), 2);
  EXPECT_EQ(synth_control(1000), 10);
  EXPECT_EQ(synth_control(1001), 1);
}

TEST(Synthetic, NoiselessSeries) {
  auto s = synth_generate(2500, 0.0, 0.0, {}, 1);
  for (std::size_t t = 1; t <= 2500; ++t) {
    const double want = std::sin(static_cast<double>(t) - 1.0) + std::sin(static_cast<double>(synth_control(t)));
    EXPECT_EQ(s.frame.signals[0].values[t - 1], want);
    EXPECT_EQ(s.ground_truth[t - 1], want);
  }
}

TEST(Synthetic, SameSeedSameSeries) {
  auto a = synth_generate(300, 0.5, 1.0, {}, 42);
  auto b = synth_generate(300, 0.5, 1.0, {}, 42);
  auto c = synth_generate(300, 0.5, 1.0, {}, 43);
  EXPECT_EQ(a.frame, b.frame);
  EXPECT_NE(a.frame, c.frame);
}

TEST(Synthetic, AnomalyLabelsMarkLastHundredOfEachThousand) {
  auto s = synth_generate(10000, 0.5, 1.0, AnomalySpec::periodic(10000, 1000, 100, 1.0, 2.0), 5);
  for (std::size_t t = 1; t <= 10000; ++t) {
    const std::size_t r = (t - 1) % 1000 + 1;
    EXPECT_EQ((*s.frame.labels)[t - 1], r >= 901 ? 1 : 0) << "t=" << t;
  }
}

TEST(Synthetic, NoiseScalesAreStandardDeviations) {
  auto s = synth_generate(40000, 0.0, 2.0, {}, 6);
  double sum = 0.0;
  for (std::size_t i = 0; i < 40000; ++i) {
    const double e = s.frame.signals[0].values[i] - s.ground_truth[i];
    sum += e * e;
  }
  EXPECT_NEAR(std::sqrt(sum / 40000.0), 2.0, 0.05);
}

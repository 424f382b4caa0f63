#include "cli.hpp"

int main(int argc, char** argv) { return bissm::cli::run(argc, argv); }

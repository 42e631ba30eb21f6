#include <catch2/catch_amalgamated.hpp>

#include "lyasafe/baseline_suite.hpp"
#include "lyasafe/experiment.hpp"
#include "lyasafe/plot.hpp"

TEST_CASE("headers compile and a trivial kernel evaluates") {
  using namespace lyasafe;
  const auto k = KernelSpec::matern32(Vec::Ones(2), 1.0);
  REQUIRE(kernel_eval(k, Vec::Zero(2), Vec::Zero(2)) == Catch::Approx(1.0));
}

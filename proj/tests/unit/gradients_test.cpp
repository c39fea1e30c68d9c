#include <gtest/gtest.h>

#include <string>

#include "oracles.hpp"

namespace dssd {
namespace {

class GradientSuite : public ::testing::TestWithParam<oracle::GradCase> {};

TEST_P(GradientSuite, MatchesCentralDifferences) {
  const oracle::GradCase& c = GetParam();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const oracle::GraphGradCheck r = c.run(seed, c.step);
    EXPECT_GT(r.checked, 0u) << "seed " << seed;
    EXPECT_LT(r.max_relative_error, c.tolerance) << "seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(Cases, GradientSuite, ::testing::ValuesIn(oracle::gradient_suite()),
                         [](const auto& info) { return info.param.name; });

}  // namespace
}  // namespace dssd

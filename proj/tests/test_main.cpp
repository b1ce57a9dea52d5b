// GoogleTest entry point shared by every unit test binary. After the tests
// run, the binary also fails if any fit lowered its penalized objective by
// more than the ascent slack.

#include <gtest/gtest.h>

#include <iostream>

#include "minb/em_solver.hpp"

namespace {

constexpr double kTraceSlack = 1e-8;

class AscentEnvironment : public ::testing::Environment {
 public:
  void TearDown() override {
    const auto& stats = minb::fit_statistics();
    std::cout << "[ascent] " << stats.fits.load() << " fits, worst objective drop " << stats.worst_descent.load() << "\n";
    EXPECT_LE(stats.worst_descent.load(), kTraceSlack) << "an EM trace decreased";
  }
};

}  // namespace

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  ::testing::AddGlobalTestEnvironment(new AscentEnvironment);
  return RUN_ALL_TESTS();
}

#include <gtest/gtest.h>

#include "txir/battery.hpp"

using namespace txir;

TEST(Battery, QuickPassEveryCheck) {
  BatteryOptions o;
  o.seed = 9;
  o.op_trials = 3;
  o.block_trials = 1;
  const auto results = run_gradcheck_battery(o);
  EXPECT_GE(results.size(), 25u);
  for (const auto& r : results) {
    EXPECT_TRUE(r.passed()) << r.name << " err=" << r.max_rel_error << " at " << r.worst;
    EXPECT_GT(r.entries, 0u) << r.name;
  }
}

TEST(Battery, FilterSelects) {
  BatteryOptions o;
  o.filter = "block.";
  o.block_trials = 1;
  const auto results = run_gradcheck_battery(o);
  ASSERT_FALSE(results.empty());
  for (const auto& r : results) EXPECT_EQ(r.name.rfind("block.", 0), 0u) << r.name;
}

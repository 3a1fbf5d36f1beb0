#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "testkit.hpp"
#include "wlds/core_model.hpp"

using namespace wlds;
using testkit::node;

TEST(NodeId, RejectsNil) {
  EXPECT_THROW(NodeId(NodeId::Bytes{}), std::invalid_argument);
  EXPECT_THROW(NodeId::parse("00000000-0000-0000-0000-000000000000"), std::invalid_argument);
}

TEST(NodeId, ParsesBothFormsAndPrintsCanonical) {
  const auto a = NodeId::parse("3F2A9C4E-8B1D-4E7A-9C3B-5D6E7F8A9B0C");
  const auto b = NodeId::parse("3f2a9c4e8b1d4e7a9c3b5d6e7f8a9b0c");
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.to_string(), "3f2a9c4e-8b1d-4e7a-9c3b-5d6e7f8a9b0c");
  EXPECT_FALSE(NodeId::try_parse("3f2a9c4e-8b1d-4e7a-9c3b-5d6e7f8a9b0"));
  EXPECT_FALSE(NodeId::try_parse("zz2a9c4e-8b1d-4e7a-9c3b-5d6e7f8a9b0c"));
  EXPECT_FALSE(NodeId::try_parse("3f2a9c4e-8b1d4-e7a-9c3b-5d6e7f8a9b0c"));
}

TEST(GeoPoint, RangeChecked) {
  EXPECT_NO_THROW(GeoPoint::make(90, 180));
  EXPECT_NO_THROW(GeoPoint::make(-90, -180));
  EXPECT_THROW(GeoPoint::make(90.0000001, 0), std::invalid_argument);
  EXPECT_THROW(GeoPoint::make(0, -180.5), std::invalid_argument);
  EXPECT_THROW(GeoPoint::make(std::nan(""), 0), std::invalid_argument);
}

TEST(EchoToDistance, HandComputedValues) {
  EXPECT_EQ(echo_to_distance(0, 343), 0.0);
  EXPECT_NEAR(echo_to_distance(10000, 343), 171.5, 171.5 * 1e-12);
  EXPECT_NEAR(echo_to_distance(2000, 343), 34.3, 34.3 * 1e-12);
}

TEST(EchoToDistance, RejectsBadInput) {
  EXPECT_THROW(echo_to_distance(-1, 343), std::invalid_argument);
  EXPECT_THROW(echo_to_distance(100, 0), std::invalid_argument);
  EXPECT_THROW(echo_to_distance(100, -343), std::invalid_argument);
  EXPECT_THROW(echo_to_distance(std::numeric_limits<double>::infinity(), 343), std::invalid_argument);
  EXPECT_THROW(echo_to_distance(100, std::nan("")), std::invalid_argument);
}

TEST(EchoToDistance, InverseRoundTrip) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> d(0.0, 500.0), c(300.0, 360.0);
  for (int i = 0; i < 10000; ++i) {
    const double dist = d(rng), speed = c(rng);
    EXPECT_NEAR(echo_to_distance(distance_to_echo(dist, speed), speed), dist, 1e-9);
  }
}

TEST(ClogLevel, Examples) {
  EXPECT_EQ(clog_level(100, 100), (DerivedDepths{100, 0, false}));
  EXPECT_EQ(clog_level(100, 60), (DerivedDepths{60, 40, false}));
  EXPECT_EQ(clog_level(100, 120), (DerivedDepths{120, 0, true}));
  EXPECT_EQ(clog_level(100, 0), (DerivedDepths{0, 100, false}));
}

TEST(ClogLevel, InvariantsOverRandomInputs) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ph(1.0, 300.0), d(0.0, 600.0);
  for (int i = 0; i < 10000; ++i) {
    const double p = ph(rng), dist = d(rng);
    const auto g = clog_level(p, dist);
    EXPECT_GE(g.garbage_level_cm, 0.0);
    EXPECT_LE(g.garbage_level_cm, p);
    EXPECT_EQ(g.anomalous, dist > p);
    if (!g.anomalous) EXPECT_EQ(g.garbage_level_cm, p - dist);
  }
}

TEST(EvaluateWarning, Examples) {
  const auto s = testkit::spec(node(1));  // setlimit 10, fill 50, gas 300
  const auto clog = evaluate_warning(testkit::reading(node(1), 1, 0, 5, 40, 100), s);
  EXPECT_EQ(clog.state, AlertState::Warning);
  EXPECT_EQ(clog.causes, CauseSet(static_cast<std::uint8_t>(Cause::ClogRule)));
  EXPECT_NEAR(clog.garbage_level_cm, 60, 1e-9);

  const auto fill_only = evaluate_warning(testkit::reading(node(1), 1, 0, 20, 40, 100), s);
  EXPECT_EQ(fill_only.state, AlertState::Normal);
  EXPECT_TRUE(fill_only.causes.empty());

  const auto gas = evaluate_warning(testkit::reading(node(1), 1, 0, 20, 90, 500), s);
  EXPECT_EQ(gas.state, AlertState::Warning);
  EXPECT_EQ(gas.causes, CauseSet(static_cast<std::uint8_t>(Cause::GasThreshold)));

  const auto both = evaluate_warning(testkit::reading(node(1), 1, 0, 5, 40, 500), s);
  EXPECT_TRUE(both.causes.contains(Cause::ClogRule));
  EXPECT_TRUE(both.causes.contains(Cause::GasThreshold));
  EXPECT_EQ(both.causes.names(), (std::vector<std::string>{"ClogRule", "GasThreshold"}));
}

TEST(EvaluateWarning, ThresholdsAreStrict) {
  auto s = testkit::spec(node(1));
  s.gas_threshold_ppm = 300;
  // Flow exactly at the limit is not "below" it; gas exactly at the threshold does not exceed it.
  TelemetryReading r{node(1), 1, 0, 10.0, 0.0, 300.0, {}};
  r.echo_time_us = distance_to_echo(10.0, 343);
  EXPECT_EQ(evaluate_warning(r, s).state, AlertState::Normal);
  r.flow_lpm = 9.999;
  EXPECT_EQ(evaluate_warning(r, s).state, AlertState::Warning);
}

TEST(EvaluateWarning, RejectsForeignNode) {
  EXPECT_THROW(evaluate_warning(testkit::reading(node(2), 1, 0, 5, 40, 100), testkit::spec(node(1))),
               std::invalid_argument);
}

TEST(EvaluateWarning, StateMatchesCauses) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> flow(0, 30), dist(0, 150), gas(0, 600);
  const auto s = testkit::spec(node(1));
  for (int i = 0; i < 10000; ++i) {
    const auto e = evaluate_warning(testkit::reading(node(1), 1, 0, flow(rng), dist(rng), gas(rng)), s);
    EXPECT_EQ(e.state == AlertState::Warning, !e.causes.empty());
  }
}

TEST(ValidatePipeSpec, Examples) {
  auto s = testkit::spec(node(1));
  EXPECT_TRUE(validate_pipe_spec(s).empty());

  s.fill_threshold_cm = 150;
  EXPECT_EQ(validate_pipe_spec(s), std::vector<std::string>{"fill_threshold ≥ pipe_height"});

  s = testkit::spec(node(1));
  s.set_limit_flow_lpm = 0;
  EXPECT_EQ(validate_pipe_spec(s), std::vector<std::string>{"non-positive setlimit"});
}

TEST(ValidatePipeSpec, ReportsEveryViolation) {
  auto s = testkit::spec(node(1));
  s.set_limit_flow_lpm = -1;
  s.gas_threshold_ppm = std::nan("");
  s.fill_threshold_cm = 100;
  s.location = {91, 0};
  const auto v = validate_pipe_spec(s);
  EXPECT_EQ(v.size(), 4u) << ::testing::PrintToString(v);
}

#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <map>
#include <random>
#include <set>

#include "tempdir.hpp"
#include "tokenlens/ablation.hpp"
#include "tokenlens/error.hpp"

using namespace tokenlens;
using namespace tokenlens::ablation;

namespace {

hsd::TokenRoleMap vision_only(std::size_t n) {
  hsd::TokenRoleMap r;
  r.roles.assign(n, hsd::TokenRole::vision);
  return r;
}

}  // namespace

TEST(Plan, EdgeRatios) {
  const auto roles = vision_only(200);
  EXPECT_TRUE(plan_ablation(roles, 0.0, 1).dropped_indices.empty());
  EXPECT_EQ(plan_ablation(roles, 1.0, 1).dropped_indices.size(), 200u);
  EXPECT_EQ(plan_ablation(roles, 0.75, 1).dropped_indices.size(), 150u);
}

TEST(Plan, FloorCountsOverDefaultGrid) {
  for (std::size_t n : {1u, 7u, 200u}) {
    for (double rho : kDefaultRhoGrid) {
      const auto plan = plan_ablation(vision_only(n), rho, 99);
      // Integer percentages avoid the rounding of rho * n in binary.
      const auto pct = static_cast<std::size_t>(std::llround(rho * 100));
      EXPECT_EQ(plan.dropped_indices.size(), pct * n / 100) << "n=" << n << " rho=" << rho;
    }
  }
  EXPECT_EQ(dropped_count(0.29, 100), 29u);
  EXPECT_EQ(dropped_count(0.57, 100), 57u);
}

TEST(Plan, DeterministicAndSorted) {
  const auto roles = vision_only(64);
  const auto a = plan_ablation(roles, 0.5, 1234);
  EXPECT_EQ(a, plan_ablation(roles, 0.5, 1234));
  EXPECT_NE(a.dropped_indices, plan_ablation(roles, 0.5, 1235).dropped_indices);
  EXPECT_TRUE(std::is_sorted(a.dropped_indices.begin(), a.dropped_indices.end()));
  EXPECT_EQ(std::set<std::size_t>(a.dropped_indices.begin(), a.dropped_indices.end()).size(),
            a.dropped_indices.size());
}

TEST(Plan, NeverDropsNonVisionTokens) {
  std::mt19937_64 rng(81);
  std::uniform_int_distribution<int> role(0, 2);
  std::uniform_real_distribution<double> ratio(0.0, 1.0);
  for (int t = 0; t < 300; ++t) {
    hsd::TokenRoleMap roles;
    roles.roles.resize(1 + t % 90);
    for (auto& r : roles.roles) r = static_cast<hsd::TokenRole>(role(rng));
    roles.roles[t % roles.roles.size()] = hsd::TokenRole::vision;
    const auto plan = plan_ablation(roles, ratio(rng), static_cast<std::uint64_t>(t));
    for (std::size_t i : plan.dropped_indices) EXPECT_EQ(roles.roles[i], hsd::TokenRole::vision);
    EXPECT_EQ(plan.vision_token_indices, roles.indices(hsd::TokenRole::vision));
  }
}

TEST(Plan, InclusionIsUniform) {
  const std::size_t n = 50;
  const auto roles = vision_only(n);
  std::vector<double> hits(n, 0.0);
  const int plans = 10000;
  for (int s = 0; s < plans; ++s)
    for (std::size_t i : plan_ablation(roles, 0.2, static_cast<std::uint64_t>(s)).dropped_indices) ++hits[i];
  const double expected = plans * 10.0 / n;
  double chi2 = 0.0;
  for (double h : hits) chi2 += (h - expected) * (h - expected) / expected;
  const boost::math::chi_squared dist(static_cast<double>(n - 1));
  const double critical = boost::math::quantile(boost::math::complement(dist, 0.001));
  EXPECT_LT(chi2, critical);
}

TEST(Plan, Errors) {
  hsd::TokenRoleMap text;
  text.roles.assign(3, hsd::TokenRole::text);
  try {
    plan_ablation(text, 0.5, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::contract);
  }
  EXPECT_THROW(plan_ablation(vision_only(3), 1.5, 1), Error);
  EXPECT_THROW(plan_ablation(vision_only(3), -0.1, 1), Error);
}

TEST(Plan, FileRoundTrip) {
  TempDir dir("plan");
  auto plan = plan_ablation(vision_only(30), 0.9, 5);
  plan.image_id = "b00_baseline_n001";
  plan.prompt_id = "describe";
  write_plan(plan, dir / "p.plan");
  EXPECT_EQ(read_plan(dir / "p.plan"), plan);
  try {
    read_plan(dir / "missing.plan");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::missing_input);
  }
}

TEST(Scoring, RuleExamples) {
  EXPECT_TRUE(score_response("There are 12 shapes.", "12", "count").correct);
  EXPECT_TRUE(score_response("Mostly blue circles", "blue", "dominant-color").correct);
  const auto r = score_response("definitely!", "yes", "shape-pair-presence");
  EXPECT_FALSE(r.correct);
  EXPECT_TRUE(r.unparseable);
}

TEST(Scoring, BoundaryCases) {
  EXPECT_FALSE(score_response("I see 11 or 12", "12", "count").correct);
  const auto none = score_response("many", "3", "count");
  EXPECT_FALSE(none.correct);
  EXPECT_TRUE(none.unparseable);
  EXPECT_TRUE(score_response("BLUE!", "blue", "dominant-color").correct);
  EXPECT_TRUE(score_response("A light-blue square.", "light blue", "dominant-color").correct);
  EXPECT_TRUE(score_response("Yes, both are there.", "yes", "color-pair-presence").correct);
  EXPECT_FALSE(score_response("No.", "yes", "color-pair-presence").correct);
  EXPECT_THROW(score_response("x", "y", "astrology"), Error);
  EXPECT_FALSE(scoring_rule("astrology"));
}

TEST(Curve, AllCorrectAndStep) {
  std::vector<ScoredResponse> all, step;
  for (double rho : kDefaultRhoGrid)
    for (int i = 0; i < 4; ++i) {
      all.push_back({"p", rho, "", "", true, false, "count"});
      step.push_back({"p", rho, "", "", rho < 0.5, false, "count"});
    }
  for (const auto& c : degradation_curve(all).cells) EXPECT_EQ(c.accuracy, 1.0);
  const auto curve = degradation_curve(step);
  for (const auto& c : curve.cells) EXPECT_EQ(c.accuracy, c.rho < 0.5 ? 1.0 : 0.0);
  ASSERT_EQ(curve.monotonicity.size(), 1u);
  EXPECT_LT(*curve.monotonicity[0].second, 0.0);
}

TEST(Curve, MatchesRecountAndWarnsOnMissingCells) {
  std::mt19937_64 rng(82);
  std::bernoulli_distribution coin(0.6);
  const char* families[] = {"count", "dominant-color", "shape-pair-presence"};
  std::vector<ScoredResponse> scored;
  std::map<std::pair<std::string, double>, std::pair<double, std::size_t>> brute;
  for (int i = 0; i < 2000; ++i) {
    const std::string fam = families[i % 3];
    const double rho = kDefaultRhoGrid[(i / 3) % 5];
    const bool ok = coin(rng);
    scored.push_back({"p" + std::to_string(i), rho, "", "", ok, false, fam});
    auto& b = brute[{fam, rho}];
    b.first += ok;
    b.second += 1;
  }
  const auto curve = degradation_curve(scored, kDefaultRhoGrid);
  ASSERT_EQ(curve.cells.size(), brute.size());
  for (const auto& c : curve.cells) {
    const auto& b = brute.at({c.family, c.rho});
    EXPECT_EQ(c.count, b.second);
    EXPECT_NEAR(c.accuracy, b.first / static_cast<double>(b.second), 1e-15);
  }
  EXPECT_EQ(curve.warnings.size(), 3u * 2u);
}

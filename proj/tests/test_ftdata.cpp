#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "ft_fixtures.hpp"
#include "tempdir.hpp"
#include "tokenlens/error.hpp"
#include "tokenlens/ftdata.hpp"

using namespace tokenlens;
using namespace tokenlens::ftdata;

namespace {

AnnotationRecord rec(std::string image, double w, double h, BBox b, std::string cat = "dog") {
  AnnotationRecord r;
  r.image_id = std::move(image);
  r.width = w;
  r.height = h;
  r.bbox = b;
  r.category = std::move(cat);
  return r;
}

}  // namespace

TEST(Iou, HandCases) {
  const BBox a{0, 0, 2, 2};
  EXPECT_DOUBLE_EQ(iou(a, BBox{1, 1, 3, 3}), 1.0 / 7.0);
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, BBox{5, 5, 6, 6}), 0.0);
  EXPECT_DOUBLE_EQ(iou(a, BBox{2, 0, 4, 2}), 0.0);
  EXPECT_THROW(iou(a, BBox{1, 1, 1, 3}), Error);
}

TEST(Iou, SymmetricAndBounded) {
  std::mt19937_64 rng(91);
  std::uniform_real_distribution<double> u(0, 10);
  for (int t = 0; t < 1000; ++t) {
    BBox a{u(rng), u(rng), 0, 0}, b{u(rng), u(rng), 0, 0};
    a.x2 = a.x1 + 0.1 + u(rng);
    a.y2 = a.y1 + 0.1 + u(rng);
    b.x2 = b.x1 + 0.1 + u(rng);
    b.y2 = b.y1 + 0.1 + u(rng);
    const double v = iou(a, b);
    EXPECT_EQ(v, iou(b, a));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Filter, ExactCenterIsRejectedForAnyAlpha) {
  const auto r = rec("a", 100, 100, {40, 40, 60, 60});
  for (double alpha : {1e-12, 1e-6, 0.01, 0.05, 0.4}) {
    FilterConfig cfg;
    cfg.alpha = alpha;
    for (auto join : {CenterJoin::any_axis, CenterJoin::all_axes}) {
      cfg.join = join;
      const auto out = filter_annotations({r}, cfg);
      ASSERT_EQ(out.rejected.size(), 1u);
      EXPECT_EQ(out.rejected[0].reasons, (std::vector<std::string>{"centered"}));
    }
  }
}

TEST(Filter, AreaBounds) {
  const auto big = filter_annotations({rec("a", 100, 100, {0, 0, 70, 70})});
  ASSERT_EQ(big.rejected.size(), 1u);
  EXPECT_EQ(big.rejected[0].reasons, (std::vector<std::string>{"too-large"}));
  const auto small = filter_annotations({rec("a", 100, 100, {0, 0, 10, 10})});
  EXPECT_EQ(small.rejected[0].reasons, (std::vector<std::string>{"too-small"}));
  EXPECT_EQ(filter_annotations({rec("a", 100, 100, {0, 0, 20, 20})}).accepted.size(), 1u);
}

TEST(Filter, DuplicateCategoryInOneImage) {
  const auto out = filter_annotations({rec("a", 100, 100, {0, 0, 20, 20}),
                                       rec("a", 100, 100, {70, 70, 90, 90}),
                                       rec("b", 100, 100, {0, 0, 20, 20})});
  EXPECT_EQ(out.accepted.size(), 1u);
  EXPECT_EQ(out.accepted[0].image_id, "b");
  EXPECT_EQ(out.rejected[0].reasons[0], "duplicate-category");
}

TEST(Filter, JoinSwitch) {
  // Off-center horizontally only.
  const auto r = rec("a", 100, 100, {0, 40, 20, 60});
  FilterConfig cfg;
  EXPECT_EQ(filter_annotations({r}, cfg).accepted.size(), 1u);
  cfg.join = CenterJoin::all_axes;
  EXPECT_EQ(filter_annotations({r}, cfg).accepted.size(), 0u);
}

TEST(Filter, MatchesRuleRecheckAndIsIdempotent) {
  std::mt19937_64 rng(92);
  const auto records = random_records(1000, rng);
  const FilterConfig cfg;
  const auto once = filter_annotations(records, cfg);
  std::map<std::pair<std::string, std::string>, int> occ;
  for (const auto& r : records) ++occ[{r.image_id, r.category}];
  std::vector<AnnotationRecord> expect;
  for (const auto& r : records) {
    const double frac = r.bbox.area() / (r.width * r.height);
    const bool off = std::abs(r.bbox.cx() - r.width / 2) > cfg.alpha * r.width ||
                     std::abs(r.bbox.cy() - r.height / 2) > cfg.alpha * r.height;
    if (occ[{r.image_id, r.category}] == 1 && frac >= cfg.min_area_frac &&
        frac <= cfg.max_area_frac && off)
      expect.push_back(r);
  }
  EXPECT_EQ(once.accepted, expect);
  EXPECT_EQ(once.accepted.size() + once.rejected.size(), records.size());
  EXPECT_FALSE(once.accepted.empty());
  const auto twice = filter_annotations(once.accepted, cfg);
  EXPECT_EQ(twice.accepted, once.accepted);
  EXPECT_TRUE(twice.rejected.empty());
}

TEST(Filter, ConfigAndRecordValidation) {
  FilterConfig cfg;
  cfg.alpha = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.min_area_frac = 0.5;
  cfg.max_area_frac = 0.4;
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_THROW(rec("a", 10, 10, {5, 5, 3, 8}).validate(), Error);
  EXPECT_THROW(rec("a", 10, 10, {5, 5, 11, 8}).validate(), Error);
}

TEST(Preposition, OneObject) {
  EXPECT_EQ(assign_preposition(rec("a", 100, 100, {10, 40, 30, 60})), Preposition::left);
  EXPECT_EQ(assign_preposition(rec("a", 100, 100, {70, 45, 90, 65})), Preposition::right);
  EXPECT_EQ(assign_preposition(rec("a", 100, 100, {45, 0, 55, 10})), Preposition::top);
  EXPECT_EQ(assign_preposition(rec("a", 100, 100, {45, 90, 55, 100})), Preposition::bottom);
  EXPECT_THROW(assign_preposition(rec("a", 100, 100, {0, 0, 20, 20})), Error);
}

TEST(Preposition, TwoObjectsAndAntisymmetry) {
  const auto a = rec("i", 100, 100, {10, 40, 30, 60}, "a");
  const auto b = rec("i", 100, 100, {70, 40, 90, 60}, "b");
  EXPECT_EQ(assign_preposition(a, b), Preposition::left);
  EXPECT_EQ(assign_preposition(b, a), Preposition::right);
  EXPECT_THROW(assign_preposition(a, rec("j", 100, 100, {0, 0, 5, 5})), Error);

  std::mt19937_64 rng(93);
  const auto records = random_records(400, rng);
  int checked = 0;
  for (std::size_t i = 0; i + 1 < records.size(); ++i) {
    AnnotationRecord p = records[i], q = records[i + 1];
    q.image_id = p.image_id;
    q.width = p.width;
    q.height = p.height;
    const double dx = (p.bbox.cx() - q.bbox.cx()) / p.width;
    const double dy = (p.bbox.cy() - q.bbox.cy()) / p.height;
    if (std::abs(dx) == std::abs(dy)) continue;
    Preposition want;
    if (std::abs(dx) > std::abs(dy))
      want = dx > 0 ? Preposition::right : Preposition::left;
    else
      want = dy > 0 ? Preposition::below : Preposition::above;
    EXPECT_EQ(assign_preposition(p, q), want);
    const auto back = assign_preposition(q, p);
    const std::map<Preposition, Preposition> opposite = {{Preposition::left, Preposition::right},
                                                         {Preposition::right, Preposition::left},
                                                         {Preposition::above, Preposition::below},
                                                         {Preposition::below, Preposition::above}};
    EXPECT_EQ(back, opposite.at(want));
    ++checked;
  }
  EXPECT_GT(checked, 300);
}

TEST(Likelihood, ArgmaxAndTies) {
  auto s = likelihood_select({-1.0, -3.0, -2.0}, 0);
  EXPECT_TRUE(s.correct);
  EXPECT_FALSE(s.tie);
  s = likelihood_select({-1.0, -1.0, -2.0}, 0);
  EXPECT_EQ(s.chosen, 0u);
  EXPECT_TRUE(s.tie);
  EXPECT_THROW(likelihood_select({}, 0), Error);
  EXPECT_THROW(likelihood_select({1.0, std::nan("")}, 0), Error);

  std::mt19937_64 rng(94);
  std::uniform_int_distribution<int> v(-5, 5);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> ll(2 + t % 6);
    for (auto& x : ll) x = v(rng);
    std::size_t best = 0;
    for (std::size_t i = 0; i < ll.size(); ++i)
      if (ll[i] > ll[best]) best = i;
    EXPECT_EQ(likelihood_select(ll, 0).chosen, best);
  }
}

TEST(Prepositions, KeywordFilter) {
  const std::vector<std::string> p = FilterConfig{}.prepositions;
  EXPECT_TRUE(mentions_preposition("Is the cup to the LEFT of the plate?", p));
  EXPECT_FALSE(mentions_preposition("Is the cup leftover?", p));
  EXPECT_TRUE(mentions_preposition("cup, top.", p));
}

TEST(PromptTargets, TemplatesAndSkipping) {
  const auto a = rec("i", 100, 100, {10, 40, 30, 60}, "dog");
  const auto b = rec("i", 100, 100, {70, 40, 90, 60}, "cat");
  const auto targets = emit_prompt_targets({a, b});
  // two one-object tasks each, three two-object tasks per ordered pair
  EXPECT_EQ(targets.size(), 2u * 2u + 2u * 3u);
  bool found = false;
  for (const auto& t : targets)
    if (t.task == "refexp-2" && t.prompt == "Point to the dog to the left of cat.") found = true;
  EXPECT_TRUE(found);
  const auto ambiguous = rec("j", 100, 100, {0, 0, 20, 20}, "cup");
  EXPECT_TRUE(emit_prompt_targets({ambiguous}).empty());
}

TEST(Records, JsonLinesRoundTrip) {
  TempDir dir("ft");
  std::mt19937_64 rng(95);
  auto records = random_records(50, rng);
  records[3].qualifiers = {"small", "red"};
  write_records(records, dir / "r.jsonl");
  EXPECT_EQ(read_records(dir / "r.jsonl"), records);
  try {
    read_records(dir / "none.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::missing_input);
  }
}

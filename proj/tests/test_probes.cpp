#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "probe_fixtures.hpp"
#include "tokenlens/error.hpp"
#include "tokenlens/probes.hpp"

using namespace tokenlens;
using namespace tokenlens::probes;

namespace {

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.hidden = {32, 32};
  cfg.epochs = 40;
  cfg.split_seed = 3;
  cfg.init_seed = 4;
  return cfg;
}

synthgen::AttributeManifest with_count(int n) {
  synthgen::AttributeManifest m;
  m.object_count = n;
  return m;
}

}  // namespace

TEST(Labels, Buckets) {
  const auto vocab = synthgen::VisualVocabulary::defaults();
  const auto oc = LabelSpec::for_kind("object_count");
  EXPECT_EQ(oc.n_classes(vocab), 3u);
  EXPECT_EQ(oc.label(with_count(1), vocab), 0);
  EXPECT_EQ(oc.label(with_count(10), vocab), 0);
  EXPECT_EQ(oc.label(with_count(11), vocab), 1);
  EXPECT_EQ(oc.label(with_count(50), vocab), 1);
  EXPECT_EQ(oc.label(with_count(51), vocab), 2);
  EXPECT_EQ(oc.label(with_count(200), vocab), 2);
  const auto sc = LabelSpec::for_kind("scene_complexity");
  std::vector<int> got;
  for (int n : {1, 4, 9}) got.push_back(sc.label(with_count(n), vocab));
  EXPECT_EQ(got, (std::vector<int>{0, 1, 2}));
  synthgen::AttributeManifest m;
  m.unique_shapes = 3;
  m.dominant_color = "blue";
  EXPECT_EQ(LabelSpec::for_kind("unique_shapes").label(m, vocab), 2);
  EXPECT_EQ(LabelSpec::for_kind("dominant_color").label(m, vocab), 1);
  EXPECT_THROW(LabelSpec::for_kind("mood"), Error);
}

TEST(Dataset, OneExamplePerDumpAndShapeContract) {
  std::mt19937_64 rng(111);
  auto set = planted_signal(10, 2, 4, 3, 0, 0, rng);
  const auto vocab = synthgen::VisualVocabulary::defaults();
  const auto ds = build_probe_dataset(set.dumps, set.manifests, LabelSpec::for_kind("object_count"),
                                      vocab, 1, 2);
  EXPECT_EQ(ds.x.size(), 10u);
  for (int y : ds.y) EXPECT_TRUE(y >= 0 && y <= 2);
  const Matrix layer = set.dumps[0].layer_matrix(1);
  EXPECT_EQ(ds.x[0], (std::vector<double>{layer(2, 0), layer(2, 1), layer(2, 2)}));
  set.dumps[3] = hsd::make_dump({Matrix(5, 3, 1.0), Matrix(5, 3, 1.0)});
  try {
    build_probe_dataset(set.dumps, set.manifests, LabelSpec::for_kind("object_count"), vocab, 0, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::contract);
  }
}

TEST(Model, SoftmaxSumsToOne) {
  std::mt19937_64 rng(112);
  std::normal_distribution<double> g(0.0, 30.0);
  const auto model = ProbeModel::init(6, {16, 16}, 5, 9);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> x(6);
    for (auto& v : x) v = g(rng);
    const auto p = model.predict_proba(x);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-9);
    for (double v : p) EXPECT_GE(v, 0.0);
  }
}

TEST(Model, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(113);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int t = 0; t < 10; ++t) {
    auto model = ProbeModel::init(7, {9, 6}, 4, static_cast<std::uint64_t>(t));
    model.mean.assign(7, 0.1);
    model.scale.assign(7, 1.5);
    std::vector<std::vector<double>> x(5, std::vector<double>(7));
    std::vector<int> y(5);
    for (std::size_t i = 0; i < 5; ++i) {
      for (auto& v : x[i]) v = g(rng);
      y[i] = static_cast<int>((i + t) % 4);
    }
    EXPECT_LE(gradient_check(model, x, y), 1e-4);
  }
  auto linear = ProbeModel::init(3, {}, 2, 1);
  std::vector<std::vector<double>> x = {{1, 2, 3}, {-1, 0, 2}, {0.5, 0.5, -1}};
  std::vector<int> y = {0, 1, 1};
  EXPECT_LE(gradient_check(linear, x, y), 1e-4);
}

TEST(Split, StratifiedCounts) {
  std::vector<int> labels;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 10 * (c + 1); ++i) labels.push_back(c);
  const auto s = stratified_split(labels, 0.2, 5);
  std::vector<int> val_per_class(3);
  for (auto i : s.val) ++val_per_class[labels[i]];
  EXPECT_EQ(val_per_class, (std::vector<int>{2, 4, 6}));
  EXPECT_EQ(s.train.size() + s.val.size(), labels.size());
  EXPECT_EQ(stratified_split(labels, 0.2, 5).val, s.val);
}

TEST(Training, SeparableBlobs) {
  std::mt19937_64 rng(114);
  const auto ds = separable_blobs(200, 5, 1.0, rng);
  auto cfg = small_config();
  cfg.epochs = 500;
  cfg.track_history = true;
  const auto r = train_probe(ds, cfg);
  const auto& h = r.train_acc_history;
  ASSERT_EQ(h.size(), 500u);
  EXPECT_GE(*std::max_element(h.begin(), h.end()), 0.99);
  EXPECT_GE(r.train_acc, 0.99);
}

TEST(Training, ShuffledLabelsStayAtChance) {
  std::mt19937_64 rng(115);
  std::normal_distribution<double> g(0.0, 1.0);
  ProbeDataset ds;
  ds.n_classes = 4;
  for (int i = 0; i < 400; ++i) {
    std::vector<double> x(8);
    for (auto& v : x) v = g(rng);
    ds.x.push_back(x);
    ds.y.push_back(i % 4);
  }
  std::shuffle(ds.y.begin(), ds.y.end(), rng);
  const auto r = train_probe(ds, small_config());
  EXPECT_NEAR(r.val_acc, 0.25, 0.1);
}

TEST(Training, DeterministicWeights) {
  std::mt19937_64 rng(116);
  const auto ds = separable_blobs(60, 4, 0.5, rng);
  auto cfg = small_config();
  cfg.epochs = 5;
  EXPECT_EQ(train_probe(ds, cfg).model, train_probe(ds, cfg).model);
  auto other = cfg;
  other.init_seed = 99;
  EXPECT_NE(train_probe(ds, cfg).model, train_probe(ds, other).model);
}

TEST(Training, Refusals) {
  std::mt19937_64 rng(117);
  auto ds = separable_blobs(10, 3, 1.0, rng);
  EXPECT_THROW(train_probe(ds, small_config()), Error);
  ds = separable_blobs(40, 3, 1.0, rng);
  ds.y.assign(40, 0);
  ds.y[0] = 1;
  try {
    auto cfg = small_config();
    cfg.val_fraction = 0.5;  // the lone class-1 example rounds into validation
    train_probe(ds, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate);
  }
  TrainConfig bad;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Training, ConfigJsonRoundTrip) {
  auto cfg = small_config();
  cfg.learning_rate = 3e-4;
  const auto back = train_config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(back), to_json(cfg));
}

TEST(Grid, PlantedSignalIsRecovered) {
  std::mt19937_64 rng(118);
  const auto set = planted_signal(300, 2, 6, 4, 1, 4, rng);
  const auto grid = probe_grid(set.dumps, set.roles, set.manifests, LabelSpec::for_kind("object_count"),
                               synthgen::VisualVocabulary::defaults(), small_config(), 1);
  ASSERT_EQ(grid.n_layers, 2u);
  ASSERT_EQ(grid.n_tokens, 6u);
  ASSERT_EQ(grid.val_acc.size(), 2u);
  ASSERT_EQ(grid.val_acc[0].size(), 6u);
  const double chance = 1.0 / 3.0;
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t p = 0; p < 6; ++p) {
      if (l == 1 && p == 4)
        EXPECT_GE(grid.val_acc[l][p], 0.95);
      else
        EXPECT_LE(grid.val_acc[l][p], chance + 0.15) << "layer " << l << " position " << p;
    }
  ASSERT_EQ(grid.summaries.size(), 2u);
  EXPECT_GT(grid.summaries[1].text_mean, grid.summaries[1].vision_mean);
}

TEST(Grid, ConstantEmbeddingsGiveMajorityRate) {
  PlantedSet set;
  for (int i = 0; i < 50; ++i) {
    set.dumps.push_back(hsd::make_dump({Matrix(3, 2, 1.0)}));
    hsd::TokenRoleMap r;
    r.roles = {hsd::TokenRole::vision, hsd::TokenRole::vision, hsd::TokenRole::text};
    set.roles.push_back(r);
    set.manifests.push_back(with_count(i < 30 ? 5 : 100));
  }
  auto cfg = small_config();
  cfg.epochs = 30;
  const auto grid = probe_grid(set.dumps, set.roles, set.manifests, LabelSpec::for_kind("object_count"),
                               synthgen::VisualVocabulary::defaults(), cfg, 1);
  for (const auto& row : grid.train_acc)
    for (double a : row) EXPECT_DOUBLE_EQ(a, 24.0 / 40.0);
  for (const auto& row : grid.val_acc)
    for (double a : row) EXPECT_DOUBLE_EQ(a, 6.0 / 10.0);
}

TEST(Grid, ParallelMatchesSerial) {
  std::mt19937_64 rng(119);
  const auto set = planted_signal(60, 2, 3, 3, 0, 1, rng);
  auto cfg = small_config();
  cfg.epochs = 3;
  const auto vocab = synthgen::VisualVocabulary::defaults();
  const auto a = probe_grid(set.dumps, set.roles, set.manifests, LabelSpec::for_kind("object_count"), vocab, cfg, 1);
  const auto b = probe_grid(set.dumps, set.roles, set.manifests, LabelSpec::for_kind("object_count"), vocab, cfg, 3);
  EXPECT_EQ(a.val_acc, b.val_acc);
  EXPECT_EQ(a.train_acc, b.train_acc);
}

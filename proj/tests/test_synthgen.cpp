#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "recount.hpp"
#include "tempdir.hpp"
#include "tokenlens/csv.hpp"
#include "tokenlens/error.hpp"
#include "tokenlens/synthgen.hpp"

using namespace tokenlens;
using namespace tokenlens::synthgen;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Point-in-triangle by signs of the three edge cross products.
bool in_triangle(double px, double py, double ax, double ay, double bx, double by, double cx,
                 double cy) {
  auto cross = [](double ox, double oy, double ux, double uy, double x, double y) {
    return (ux - ox) * (y - oy) - (uy - oy) * (x - ox);
  };
  const double d1 = cross(ax, ay, bx, by, px, py);
  const double d2 = cross(bx, by, cx, cy, px, py);
  const double d3 = cross(cx, cy, ax, ay, px, py);
  const bool neg = d1 < 0 || d2 < 0 || d3 < 0;
  const bool pos = d1 > 0 || d2 > 0 || d3 > 0;
  return !(neg && pos);
}

/// Independent geometry: polygons are star-shaped about the center, so
/// each is the union of the triangles (center, v_k, v_k+1).
bool oracle_contains(const SceneObject& o, double x, double y) {
  const double r = o.size_px / 2.0;
  switch (o.shape) {
    case ShapeKind::circle: return std::hypot(x - o.cx, y - o.cy) <= r;
    case ShapeKind::square: return std::max(std::abs(x - o.cx), std::abs(y - o.cy)) <= r;
    case ShapeKind::triangle:
      return in_triangle(x, y, o.cx, o.cy - r, o.cx + r, o.cy + r, o.cx - r, o.cy + r);
    case ShapeKind::pentagon:
    case ShapeKind::star: {
      const int n = o.shape == ShapeKind::pentagon ? 5 : 10;
      std::vector<std::pair<double, double>> v;
      for (int k = 0; k < n; ++k) {
        const double a = -std::numbers::pi / 2 + 2 * std::numbers::pi * k / n;
        const double rad = (o.shape == ShapeKind::star && k % 2) ? 0.382 * r : r;
        v.emplace_back(o.cx + rad * std::cos(a), o.cy + rad * std::sin(a));
      }
      for (int k = 0; k < n; ++k) {
        const auto& p = v[k];
        const auto& q = v[(k + 1) % n];
        if (in_triangle(x, y, o.cx, o.cy, p.first, p.second, q.first, q.second)) return true;
      }
      return false;
    }
  }
  return false;
}

SceneObject object(ShapeKind s, const std::string& color, double cx, double cy, double size = 30) {
  const auto vocab = VisualVocabulary::defaults();
  SceneObject o;
  o.shape = s;
  o.color = color;
  o.rgb = vocab.colors[vocab.color_index(color)].rgb;
  o.size_px = size;
  o.cx = cx;
  o.cy = cy;
  return o;
}

}  // namespace

TEST(Vocabulary, Defaults) {
  const auto v = VisualVocabulary::defaults();
  EXPECT_EQ(v.shapes.size(), 5u);
  EXPECT_EQ(v.colors.size(), 10u);
  EXPECT_EQ(v.sizes.size(), 3u);
  EXPECT_NO_THROW(v.validate());
  auto dup = v;
  dup.colors[1].rgb = dup.colors[0].rgb;
  EXPECT_THROW(dup.validate(), Error);
  auto unordered = v;
  std::swap(unordered.sizes[0], unordered.sizes[1]);
  EXPECT_THROW(unordered.validate(), Error);
}

TEST(Rasterize, EmptySceneIsWhite) {
  SceneSpec s;
  s.width = 16;
  s.height = 12;
  const auto img = rasterize(s);
  EXPECT_EQ(img.pixels, std::vector<std::uint8_t>(16 * 12 * 3, 255));
}

TEST(Rasterize, CenteredRedCircle) {
  SceneSpec s;
  s.width = s.height = 100;
  s.object_count = 1;
  s.objects = {object(ShapeKind::circle, "red", 50, 50, 30)};
  const auto img = rasterize(s);
  EXPECT_EQ(img.at(50, 50), (Rgb{255, 0, 0}));
  EXPECT_EQ(img.at(0, 0), (Rgb{255, 255, 255}));
  EXPECT_EQ(img.at(99, 99), (Rgb{255, 255, 255}));
}

TEST(Rasterize, LaterObjectsPaintOver) {
  SceneSpec s;
  s.width = s.height = 60;
  s.object_count = 2;
  s.objects = {object(ShapeKind::square, "red", 30, 30, 20), object(ShapeKind::square, "blue", 30, 30, 10)};
  EXPECT_EQ(rasterize(s).at(30, 30), (Rgb{0, 0, 255}));
  EXPECT_EQ(rasterize(s).at(22, 30), (Rgb{255, 0, 0}));
}

TEST(Rasterize, MatchesPerPixelGeometry) {
  std::mt19937_64 rng(101);
  const auto vocab = VisualVocabulary::defaults();
  std::uniform_real_distribution<double> pos(25, 175), size(10, 50);
  std::uniform_int_distribution<int> shape(0, 4), color(0, 9);
  for (int t = 0; t < 10; ++t) {
    SceneSpec s;
    s.width = s.height = 200;
    s.object_count = 10;
    for (int i = 0; i < 10; ++i)
      s.objects.push_back(object(vocab.shapes[shape(rng)], vocab.colors[color(rng)].name, pos(rng),
                                 pos(rng), size(rng)));
    const auto img = rasterize(s);
    long lib = 0, ref = 0;
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        lib += img.at(x, y) != Rgb{255, 255, 255};
        bool hit = false;
        for (const auto& o : s.objects) hit = hit || oracle_contains(o, x + 0.5, y + 0.5);
        ref += hit;
      }
    EXPECT_LE(std::abs(lib - ref), static_cast<long>(0.005 * s.width * s.height));
  }
}

TEST(Attributes, ByConstruction) {
  SceneSpec s;
  s.image_id = "x";
  s.object_count = 5;
  for (int i = 0; i < 3; ++i) s.objects.push_back(object(ShapeKind::circle, "red", 100 + 40 * i, 100));
  for (int i = 0; i < 2; ++i) s.objects.push_back(object(ShapeKind::square, "blue", 100 + 40 * i, 300));
  const auto m = derive_attributes(s, VisualVocabulary::defaults());
  EXPECT_EQ(m.object_count, 5);
  EXPECT_EQ(m.unique_shapes, 2);
  EXPECT_EQ(m.unique_colors, 2);
  EXPECT_EQ(m.unique_sizes, 1);
  EXPECT_EQ(m.dominant_shape, "circle");
  EXPECT_EQ(m.dominant_color, "red");
  EXPECT_TRUE(m.shape_present.at("square"));
  EXPECT_FALSE(m.shape_present.at("star"));
}

TEST(Attributes, TiesGoToVocabularyOrder) {
  SceneSpec s;
  s.object_count = 2;
  s.objects = {object(ShapeKind::star, "blue", 100, 100), object(ShapeKind::circle, "red", 200, 200)};
  const auto m = derive_attributes(s, VisualVocabulary::defaults());
  EXPECT_EQ(m.dominant_shape, "circle");
  EXPECT_EQ(m.dominant_color, "red");
}

TEST(Prompts, VerbatimTemplates) {
  const auto vocab = VisualVocabulary::defaults();
  SceneSpec s;
  s.image_id = "img";
  s.object_count = 5;
  for (int i = 0; i < 5; ++i) s.objects.push_back(object(ShapeKind::circle, "red", 100 + 40 * i, 100));
  const auto m = derive_attributes(s, vocab);
  const auto count = emit_prompts(m, "count", vocab);
  ASSERT_EQ(count.size(), 1u);
  EXPECT_EQ(count[0].prompt, "How many shapes are in this image?");
  EXPECT_EQ(count[0].gold, "5");
  const auto dom = emit_prompts(m, "dominant-color", vocab);
  EXPECT_EQ(dom[0].prompt, "What is the most common color of shape in this image?");
  EXPECT_EQ(dom[0].gold, "red");
  EXPECT_EQ(emit_prompts(m, "describe", vocab)[0].prompt, "Describe this image.");
  EXPECT_EQ(emit_prompts(m, "count-unique-shapes", vocab)[0].prompt,
            "How many unique shapes are there in this image?");
  EXPECT_EQ(emit_prompts(m, "count-unique-colors", vocab)[0].prompt,
            "How many unique colors are there in this image?");
  EXPECT_EQ(emit_prompts(m, "dominant-shape", vocab)[0].prompt,
            "What is the most common shape in this image?");

  // Only circles present: no positive pair, one negative pair.
  const auto pair = emit_prompts(m, "shape-pair-presence", vocab);
  ASSERT_EQ(pair.size(), 1u);
  EXPECT_EQ(pair[0].gold, "no");
  EXPECT_EQ(pair[0].prompt, "Are there both circles and squares in this image?");
  EXPECT_THROW(emit_prompts(m, "riddles", vocab), Error);
}

TEST(Prompts, PairPresenceBothCases) {
  const auto vocab = VisualVocabulary::defaults();
  SceneSpec s;
  s.object_count = 2;
  s.objects = {object(ShapeKind::circle, "red", 100, 100), object(ShapeKind::star, "green", 200, 200)};
  const auto m = derive_attributes(s, vocab);
  const auto items = emit_prompts(m, "color-pair-presence", vocab);
  ASSERT_EQ(items.size(), 2u);
  EXPECT_EQ(items[0].prompt, "Can you see both red and green objects in this image?");
  EXPECT_EQ(items[0].gold, "yes");
  EXPECT_EQ(items[1].gold, "no");
  const auto shapes = emit_prompts(m, "shape-pair-presence", vocab);
  EXPECT_EQ(shapes[0].prompt, "Are there both circles and stars in this image?");
}

TEST(Dataset, OneBaseOneCountGivesFiveImages) {
  TempDir dir("gen");
  auto cfg = DatasetConfig::uniform(1, {1}, 5);
  cfg.width = cfg.height = 200;
  const auto index = generate_dataset(cfg, dir.path());
  ASSERT_EQ(index.entries.size(), 5u);
  std::set<VariationAxis> axes;
  for (const auto& e : index.entries) {
    EXPECT_EQ(e.object_count, 1);
    axes.insert(e.axis);
    EXPECT_TRUE(std::filesystem::exists(dir / e.image));
    EXPECT_EQ(slurp(dir / e.image).substr(1, 3), "PNG");
  }
  EXPECT_EQ(axes.size(), 5u);
  EXPECT_EQ(read_index(dir / "index.csv").entries.size(), 5u);
}

TEST(Dataset, CountLawForUniformSchedules) {
  for (std::size_t bases : {1u, 3u})
    for (const auto& grid : {std::vector<int>{1}, std::vector<int>{2, 7, 30}})
      EXPECT_EQ(DatasetConfig::uniform(bases, grid, 1).image_count(), bases * grid.size() * 5);
}

TEST(Dataset, ByteIdenticalRegardlessOfJobs) {
  TempDir a("ga"), b("gb");
  auto cfg = DatasetConfig::uniform(2, {1, 4, 12}, 77);
  cfg.width = cfg.height = 250;
  generate_dataset(cfg, a.path(), 1);
  const auto index = generate_dataset(cfg, b.path(), 3);
  EXPECT_EQ(index.entries.size(), 30u);
  for (const auto& e : index.entries)
    for (const auto& f : {e.image, e.spec, e.manifest, e.prompts})
      EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  EXPECT_EQ(slurp(a / "index.csv"), slurp(b / "index.csv"));
}

TEST(Dataset, ManifestsMatchRecountAndGeometry) {
  TempDir dir("gm");
  auto cfg = DatasetConfig::uniform(2, {3, 25, 60}, 9);
  cfg.image_format = "ppm";
  const auto index = generate_dataset(cfg, dir.path(), 2);
  for (const auto& e : index.entries) {
    const auto spec = scene_from_json(nlohmann::json::parse(slurp(dir / e.spec)));
    EXPECT_NO_THROW(spec.validate());
    EXPECT_EQ(static_cast<int>(spec.objects.size()), e.object_count);
    for (const auto& o : spec.objects) {
      EXPECT_GE(o.cx - o.size_px / 2, 0.0);
      EXPECT_LE(o.cx + o.size_px / 2, cfg.width);
      EXPECT_GE(o.cy - o.size_px / 2, 0.0);
      EXPECT_LE(o.cy + o.size_px / 2, cfg.height);
    }
    const auto m = manifest_from_json(nlohmann::json::parse(slurp(dir / e.manifest)));
    EXPECT_EQ(m, oracle::recount(spec, cfg.vocab)) << e.image_id;
    if (e.axis == VariationAxis::baseline) {
      EXPECT_EQ(m.unique_shapes, 1);
      EXPECT_EQ(m.unique_colors, 1);
    }
    EXPECT_EQ(slurp(dir / e.image).substr(0, 2), "P6");
  }
}

TEST(Dataset, PromptFilesAreCsv) {
  TempDir dir("gp");
  auto cfg = DatasetConfig::uniform(1, {6}, 3);
  cfg.width = cfg.height = 300;
  const auto index = generate_dataset(cfg, dir.path());
  const auto t = csv::read(dir / index.entries[0].prompts);
  EXPECT_EQ(t.header, (std::vector<std::string>{"prompt_id", "family", "prompt", "gold"}));
  std::set<std::string> families;
  for (const auto& r : t.rows) families.insert(r[1]);
  EXPECT_EQ(families.size(), kPromptFamilies.size());
}

TEST(Dataset, ImageIdsAndDeterministicScenes) {
  const auto cfg = DatasetConfig::uniform(3, {1, 5}, 11);
  const auto a = make_scene(cfg, 2, 5, VariationAxis::mixture);
  EXPECT_EQ(a.image_id, "b02_mixture_n005");
  EXPECT_EQ(a, make_scene(cfg, 2, 5, VariationAxis::mixture));
  auto other = cfg;
  other.seed = 12;
  EXPECT_NE(a.objects, make_scene(other, 2, 5, VariationAxis::mixture).objects);
}

TEST(Dataset, PlacementFailureIsReported) {
  auto cfg = DatasetConfig::uniform(1, {200}, 1);
  cfg.vocab.sizes = {0.2, 0.25, 0.3};
  cfg.max_attempts = 50;
  try {
    make_scene(cfg, 0, 200, VariationAxis::baseline);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numerical);
  }
}

TEST(Dataset, ShippedDefaultMatchesConfigFile) {
  const auto shipped = DatasetConfig::shipped_default();
  EXPECT_EQ(shipped.image_count(), 8220u);
  EXPECT_EQ(shipped.n_base_configs, 20u);
  EXPECT_EQ(shipped.width, 1000);
  const auto file = load_dataset_config(std::filesystem::path(TOKENLENS_SOURCE_DIR) / "config" / "default_dataset.json");
  EXPECT_EQ(file, shipped);
  EXPECT_EQ(dataset_config_from_json(to_json(shipped)), shipped);
}

TEST(Dataset, ConfigValidation) {
  auto cfg = DatasetConfig::uniform(1, {0}, 1);
  EXPECT_THROW(cfg.validate(), Error);
  cfg = DatasetConfig::uniform(1, {201}, 1);
  EXPECT_THROW(cfg.validate(), Error);
  cfg = DatasetConfig::uniform(1, {}, 1);
  EXPECT_THROW(cfg.validate(), Error);
  cfg = DatasetConfig::uniform(1, {3}, 1);
  cfg.image_format = "gif";
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Dataset, UnwritableDirectory) {
  TempDir dir("gu");
  std::ofstream(dir / "file") << "x";
  const auto cfg = DatasetConfig::uniform(1, {1}, 1);
  try {
    generate_dataset(cfg, dir / "file" / "sub");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
}

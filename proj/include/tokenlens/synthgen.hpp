#pragma once

// Synthetic 2D-shapes benchmark: scene specs, rasterized images, ground-truth
// attribute manifests, and zero-shot prompt sets.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace tokenlens::synthgen {

enum class ShapeKind { circle, square, triangle, star, pentagon };

const char* to_string(ShapeKind s);
ShapeKind parse_shape(const std::string& name);

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

struct NamedColor {
  std::string name;
  Rgb rgb;
  friend bool operator==(const NamedColor&, const NamedColor&) = default;
};

struct VisualVocabulary {
  std::vector<ShapeKind> shapes;
  std::vector<NamedColor> colors;
  std::vector<double> sizes;  // bounding-box side as a fraction of canvas width

  /// 5 shapes, 10 web colors, sizes 3% / 4.5% / 6%.
  static VisualVocabulary defaults();
  void validate() const;

  std::size_t shape_index(ShapeKind s) const;
  std::size_t color_index(const std::string& name) const;

  friend bool operator==(const VisualVocabulary&, const VisualVocabulary&) = default;
};

enum class VariationAxis { baseline, shape, color, size, mixture };

inline constexpr std::array<VariationAxis, 5> kAllAxes = {
    VariationAxis::baseline, VariationAxis::shape, VariationAxis::color, VariationAxis::size,
    VariationAxis::mixture};

const char* to_string(VariationAxis a);
VariationAxis parse_axis(const std::string& name);

struct SceneObject {
  ShapeKind shape = ShapeKind::circle;
  std::string color;
  Rgb rgb;
  std::size_t size_class = 0;
  double size_px = 0;  // bounding-box side
  double cx = 0;
  double cy = 0;
  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct SceneSpec {
  std::string image_id;
  std::size_t base_config = 0;
  int object_count = 0;
  VariationAxis axis = VariationAxis::baseline;
  std::vector<SceneObject> objects;
  int width = 1000;
  int height = 1000;
  std::uint64_t seed = 0;

  /// Throws unless the object list matches object_count and every bounding
  /// box lies inside the canvas.
  void validate() const;
  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

nlohmann::json to_json(const SceneSpec& spec);
SceneSpec scene_from_json(const nlohmann::json& j);

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB

  Rgb at(int x, int y) const;
};

/// True when the point lies inside the object's filled shape.
bool contains(const SceneObject& obj, double x, double y);

/// White canvas, objects painted in list order (later over earlier); a pixel
/// takes an object's color when its center lies inside the shape.
RgbImage rasterize(const SceneSpec& spec);

void write_png(const RgbImage& image, const std::filesystem::path& path);
void write_ppm(const RgbImage& image, const std::filesystem::path& path);

struct AttributeManifest {
  std::string image_id;
  int object_count = 0;
  int unique_shapes = 0;
  int unique_colors = 0;
  int unique_sizes = 0;
  std::string dominant_shape;
  std::string dominant_color;
  std::map<std::string, bool> shape_present;  // keyed by vocabulary entry
  std::map<std::string, bool> color_present;

  friend bool operator==(const AttributeManifest&, const AttributeManifest&) = default;
};

nlohmann::json to_json(const AttributeManifest& m);
AttributeManifest manifest_from_json(const nlohmann::json& j);

/// Counts and modes over the object list; ties go to the earlier vocabulary
/// entry.
AttributeManifest derive_attributes(const SceneSpec& spec, const VisualVocabulary& vocab);

inline constexpr std::array<const char*, 8> kPromptFamilies = {
    "describe",           "count",         "count-unique-shapes", "count-unique-colors",
    "dominant-shape",     "dominant-color", "shape-pair-presence", "color-pair-presence"};

struct PromptItem {
  std::string prompt_id;
  std::string family;
  std::string prompt;
  std::string gold;
};

/// Zero-shot prompts with gold answers. Pair-presence families emit a
/// positive pair (two present entries, "yes") and a negative pair (present +
/// absent, "no") whenever the scene allows each.
std::vector<PromptItem> emit_prompts(const AttributeManifest& manifest, const std::string& family,
                                     const VisualVocabulary& vocab);

struct DatasetConfig {
  VisualVocabulary vocab = VisualVocabulary::defaults();
  std::size_t n_base_configs = 20;
  int width = 1000;
  int height = 1000;
  std::uint64_t seed = 0;
  double max_overlap = 0.30;
  std::size_t max_attempts = 1000;
  /// Object counts emitted per variation axis.
  std::map<VariationAxis, std::vector<int>> schedule;
  std::string image_format = "png";  // png | ppm

  /// Every axis gets the same count grid.
  static DatasetConfig uniform(std::size_t n_base_configs, std::vector<int> count_grid,
                               std::uint64_t seed);
  /// The shipped 8,220-image schedule: 20 base configs; the baseline axis
  /// takes counts 1..25, 26..100 step 2, 105..200 step 5 (83 counts) and the
  /// four varied axes take the same grid without count 1 (82 counts).
  static DatasetConfig shipped_default();
  void validate() const;
  std::size_t image_count() const;
  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

nlohmann::json to_json(const DatasetConfig& cfg);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);
DatasetConfig load_dataset_config(const std::filesystem::path& path);

/// Base-config attributes (shape, color, size class indices).
struct BaseConfig {
  std::size_t shape = 0;
  std::size_t color = 0;
  std::size_t size = 0;
};

BaseConfig base_config(const DatasetConfig& cfg, std::size_t index);

/// Deterministic scene for (base config, count, axis).
SceneSpec make_scene(const DatasetConfig& cfg, std::size_t base_index, int count,
                     VariationAxis axis);

struct IndexEntry {
  std::string image_id;
  std::size_t base_config = 0;
  int object_count = 0;
  VariationAxis axis = VariationAxis::baseline;
  std::string image;
  std::string spec;
  std::string manifest;
  std::string prompts;
};

struct DatasetIndex {
  std::vector<IndexEntry> entries;
};

/// Writes images/, specs/, manifests/, prompts/ and index.csv under out_dir.
/// Output bytes do not depend on `jobs`. `on_progress(done, total)` is
/// called after each image, serialized across workers.
using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;
DatasetIndex generate_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir,
                              std::size_t jobs = 1, const ProgressFn& on_progress = {});

DatasetIndex read_index(const std::filesystem::path& index_csv);

}  // namespace tokenlens::synthgen

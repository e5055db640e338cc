#include "tokenlens/synthgen.hpp"

#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numbers>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "tokenlens/csv.hpp"
#include "tokenlens/error.hpp"
#include "tokenlens/parallel.hpp"

namespace tokenlens::synthgen {
namespace {

using nlohmann::json;

[[noreturn]] void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, "synthgen", msg);
}

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Counter-based generator: the stream for a key is a pure function of the
// key, so scenes can be produced in any order or in parallel.
class CounterRng {
 public:
  explicit CounterRng(std::initializer_list<std::uint64_t> key) {
    for (auto k : key) key_ = mix64(key_ ^ k);
  }

  std::uint64_t next() { return mix64(key_ ^ mix64(counter_++)); }

  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  std::size_t below(std::size_t n) {
    const std::uint64_t bound = n;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
  }

 private:
  std::uint64_t key_ = 0x746f6b656e6c656eULL;
  std::uint64_t counter_ = 0;
};

constexpr std::uint64_t kBaseStream = 0xba5e;

using Polygon = std::vector<std::pair<double, double>>;

Polygon shape_polygon(const SceneObject& o) {
  const double r = o.size_px / 2.0;
  Polygon p;
  switch (o.shape) {
    case ShapeKind::triangle:
      p = {{o.cx, o.cy - r}, {o.cx + r, o.cy + r}, {o.cx - r, o.cy + r}};
      break;
    case ShapeKind::pentagon:
      for (int k = 0; k < 5; ++k) {
        const double a = -std::numbers::pi / 2 + k * 2 * std::numbers::pi / 5;
        p.emplace_back(o.cx + r * std::cos(a), o.cy + r * std::sin(a));
      }
      break;
    case ShapeKind::star:
      for (int k = 0; k < 10; ++k) {
        const double a = -std::numbers::pi / 2 + k * std::numbers::pi / 5;
        const double rad = (k % 2 == 0) ? r : r * 0.382;
        p.emplace_back(o.cx + rad * std::cos(a), o.cy + rad * std::sin(a));
      }
      break;
    default:
      break;
  }
  return p;
}

bool in_polygon(const Polygon& poly, double x, double y) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto [xi, yi] = poly[i];
    const auto [xj, yj] = poly[j];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) inside = !inside;
  }
  return inside;
}

bool contains_with(const SceneObject& o, const Polygon& poly, double x, double y) {
  const double r = o.size_px / 2.0;
  switch (o.shape) {
    case ShapeKind::circle: return (x - o.cx) * (x - o.cx) + (y - o.cy) * (y - o.cy) <= r * r;
    case ShapeKind::square: return std::abs(x - o.cx) <= r && std::abs(y - o.cy) <= r;
    default: return in_polygon(poly, x, y);
  }
}

double overlap_fraction(const SceneObject& a, const SceneObject& b) {
  const double ra = a.size_px / 2;
  const double rb = b.size_px / 2;
  const double ix = std::min(a.cx + ra, b.cx + rb) - std::max(a.cx - ra, b.cx - rb);
  const double iy = std::min(a.cy + ra, b.cy + rb) - std::max(a.cy - ra, b.cy - rb);
  if (ix <= 0 || iy <= 0) return 0.0;
  const double smaller = std::min(a.size_px * a.size_px, b.size_px * b.size_px);
  return ix * iy / smaller;
}

std::string plural(const std::string& shape) { return shape + "s"; }

std::string join(const std::vector<std::string>& parts, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

}  // namespace

const char* to_string(ShapeKind s) {
  switch (s) {
    case ShapeKind::circle: return "circle";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
    case ShapeKind::star: return "star";
    case ShapeKind::pentagon: return "pentagon";
  }
  return "";
}

ShapeKind parse_shape(const std::string& name) {
  for (auto s : {ShapeKind::circle, ShapeKind::square, ShapeKind::triangle, ShapeKind::star,
                 ShapeKind::pentagon})
    if (name == to_string(s)) return s;
  fail(ErrorKind::invalid_argument, "unknown shape '" + name + "'");
}

const char* to_string(VariationAxis a) {
  switch (a) {
    case VariationAxis::baseline: return "baseline";
    case VariationAxis::shape: return "shape";
    case VariationAxis::color: return "color";
    case VariationAxis::size: return "size";
    case VariationAxis::mixture: return "mixture";
  }
  return "";
}

VariationAxis parse_axis(const std::string& name) {
  for (auto a : kAllAxes)
    if (name == to_string(a)) return a;
  fail(ErrorKind::invalid_argument, "unknown variation axis '" + name + "'");
}

VisualVocabulary VisualVocabulary::defaults() {
  VisualVocabulary v;
  v.shapes = {ShapeKind::circle, ShapeKind::square, ShapeKind::triangle, ShapeKind::star,
              ShapeKind::pentagon};
  v.colors = {{"red", {255, 0, 0}},       {"blue", {0, 0, 255}},      {"green", {0, 128, 0}},
              {"yellow", {255, 255, 0}},  {"orange", {255, 165, 0}},  {"purple", {128, 0, 128}},
              {"pink", {255, 192, 203}},  {"brown", {165, 42, 42}},   {"gray", {128, 128, 128}},
              {"black", {0, 0, 0}}};
  v.sizes = {0.03, 0.045, 0.06};
  return v;
}

void VisualVocabulary::validate() const {
  if (shapes.empty() || colors.empty() || sizes.empty())
    fail(ErrorKind::invalid_argument, "vocabulary needs at least one shape, color and size");
  if (std::set<ShapeKind>(shapes.begin(), shapes.end()).size() != shapes.size())
    fail(ErrorKind::invalid_argument, "duplicate shape in vocabulary");
  std::set<std::string> names;
  std::set<std::tuple<int, int, int>> rgbs;
  for (const auto& c : colors) {
    if (!names.insert(c.name).second) fail(ErrorKind::invalid_argument, "duplicate color name " + c.name);
    if (!rgbs.insert({c.rgb.r, c.rgb.g, c.rgb.b}).second)
      fail(ErrorKind::invalid_argument, "colors must be pairwise distinct in RGB");
    if (c.rgb == Rgb{255, 255, 255}) fail(ErrorKind::invalid_argument, "white is the background color");
  }
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (!(sizes[i] > 0 && sizes[i] < 1)) fail(ErrorKind::invalid_argument, "size fractions must lie in (0, 1)");
    if (i && !(sizes[i] > sizes[i - 1]))
      fail(ErrorKind::invalid_argument, "size fractions must be strictly increasing");
  }
}

std::size_t VisualVocabulary::shape_index(ShapeKind s) const {
  const auto it = std::find(shapes.begin(), shapes.end(), s);
  if (it == shapes.end()) fail(ErrorKind::contract, std::string("shape not in vocabulary: ") + to_string(s));
  return static_cast<std::size_t>(it - shapes.begin());
}

std::size_t VisualVocabulary::color_index(const std::string& name) const {
  for (std::size_t i = 0; i < colors.size(); ++i)
    if (colors[i].name == name) return i;
  fail(ErrorKind::contract, "color not in vocabulary: " + name);
}

void SceneSpec::validate() const {
  if (static_cast<int>(objects.size()) != object_count)
    fail(ErrorKind::contract, image_id + ": object list length differs from object_count");
  for (const auto& o : objects) {
    const double r = o.size_px / 2;
    if (o.cx - r < 0 || o.cy - r < 0 || o.cx + r > width || o.cy + r > height)
      fail(ErrorKind::contract, image_id + ": object extends past the canvas");
  }
}

json to_json(const SceneSpec& s) {
  json objs = json::array();
  for (const auto& o : s.objects) {
    objs.push_back({{"shape", to_string(o.shape)},
                    {"color", o.color},
                    {"rgb", {o.rgb.r, o.rgb.g, o.rgb.b}},
                    {"size_class", o.size_class},
                    {"size_px", o.size_px},
                    {"cx", o.cx},
                    {"cy", o.cy}});
  }
  return {{"format", "tokenlens-scene"},
          {"image_id", s.image_id},
          {"base_config", s.base_config},
          {"object_count", s.object_count},
          {"variation_axis", to_string(s.axis)},
          {"canvas", {s.width, s.height}},
          {"seed", s.seed},
          {"objects", objs}};
}

SceneSpec scene_from_json(const json& j) {
  SceneSpec s;
  s.image_id = j.at("image_id").get<std::string>();
  s.base_config = j.at("base_config").get<std::size_t>();
  s.object_count = j.at("object_count").get<int>();
  s.axis = parse_axis(j.at("variation_axis").get<std::string>());
  s.width = j.at("canvas").at(0).get<int>();
  s.height = j.at("canvas").at(1).get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& o : j.at("objects")) {
    SceneObject obj;
    obj.shape = parse_shape(o.at("shape").get<std::string>());
    obj.color = o.at("color").get<std::string>();
    const auto rgb = o.at("rgb").get<std::array<int, 3>>();
    obj.rgb = {static_cast<std::uint8_t>(rgb[0]), static_cast<std::uint8_t>(rgb[1]),
               static_cast<std::uint8_t>(rgb[2])};
    obj.size_class = o.at("size_class").get<std::size_t>();
    obj.size_px = o.at("size_px").get<double>();
    obj.cx = o.at("cx").get<double>();
    obj.cy = o.at("cy").get<double>();
    s.objects.push_back(std::move(obj));
  }
  return s;
}

Rgb RgbImage::at(int x, int y) const {
  const auto i = (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + x) * 3;
  return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

bool contains(const SceneObject& obj, double x, double y) {
  return contains_with(obj, shape_polygon(obj), x, y);
}

RgbImage rasterize(const SceneSpec& spec) {
  RgbImage img;
  img.width = spec.width;
  img.height = spec.height;
  img.pixels.assign(static_cast<std::size_t>(spec.width) * spec.height * 3, 255);
  for (const auto& o : spec.objects) {
    const Polygon poly = shape_polygon(o);
    const double r = o.size_px / 2;
    const int x0 = std::max(0, static_cast<int>(std::floor(o.cx - r)));
    const int x1 = std::min(spec.width - 1, static_cast<int>(std::ceil(o.cx + r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(o.cy - r)));
    const int y1 = std::min(spec.height - 1, static_cast<int>(std::ceil(o.cy + r)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (!contains_with(o, poly, x + 0.5, y + 0.5)) continue;
        auto* px = &img.pixels[(static_cast<std::size_t>(y) * spec.width + x) * 3];
        px[0] = o.rgb.r;
        px[1] = o.rgb.g;
        px[2] = o.rgb.b;
      }
    }
  }
  return img;
}

void write_png(const RgbImage& image, const std::filesystem::path& path) {
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) fail(ErrorKind::io, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    fail(ErrorKind::io, "libpng initialisation failed");
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
  for (int y = 0; y < image.height; ++y) {
    rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(
        image.pixels.data() + static_cast<std::size_t>(y) * image.width * 3);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    fail(ErrorKind::io, "libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // Flat shapes on white: run-length deflate with no row filter is both
  // fast and compact.
  png_set_filter(png, 0, PNG_FILTER_NONE);
  png_set_compression_strategy(png, Z_RLE);
  png_set_compression_level(png, 6);
  png_set_rows(png, info, rows.data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) fail(ErrorKind::io, "close failed for " + path.string());
}

void write_ppm(const RgbImage& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

json to_json(const AttributeManifest& m) {
  return {{"format", "tokenlens-attributes"},
          {"image_id", m.image_id},
          {"object_count", m.object_count},
          {"unique_shapes", m.unique_shapes},
          {"unique_colors", m.unique_colors},
          {"unique_sizes", m.unique_sizes},
          {"dominant_shape", m.dominant_shape},
          {"dominant_color", m.dominant_color},
          {"shape_present", m.shape_present},
          {"color_present", m.color_present}};
}

AttributeManifest manifest_from_json(const json& j) {
  AttributeManifest m;
  m.image_id = j.at("image_id").get<std::string>();
  m.object_count = j.at("object_count").get<int>();
  m.unique_shapes = j.at("unique_shapes").get<int>();
  m.unique_colors = j.at("unique_colors").get<int>();
  m.unique_sizes = j.at("unique_sizes").get<int>();
  m.dominant_shape = j.at("dominant_shape").get<std::string>();
  m.dominant_color = j.at("dominant_color").get<std::string>();
  m.shape_present = j.at("shape_present").get<std::map<std::string, bool>>();
  m.color_present = j.at("color_present").get<std::map<std::string, bool>>();
  return m;
}

AttributeManifest derive_attributes(const SceneSpec& spec, const VisualVocabulary& vocab) {
  std::vector<int> shapes(vocab.shapes.size(), 0);
  std::vector<int> colors(vocab.colors.size(), 0);
  std::vector<int> sizes(vocab.sizes.size(), 0);
  for (const auto& o : spec.objects) {
    ++shapes[vocab.shape_index(o.shape)];
    ++colors[vocab.color_index(o.color)];
    if (o.size_class >= sizes.size()) fail(ErrorKind::contract, "size class out of vocabulary");
    ++sizes[o.size_class];
  }
  auto nonzero = [](const std::vector<int>& v) {
    return static_cast<int>(std::count_if(v.begin(), v.end(), [](int c) { return c > 0; }));
  };
  // max_element returns the first maximum, i.e. the earliest vocabulary entry.
  auto mode = [](const std::vector<int>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  };
  AttributeManifest m;
  m.image_id = spec.image_id;
  m.object_count = static_cast<int>(spec.objects.size());
  m.unique_shapes = nonzero(shapes);
  m.unique_colors = nonzero(colors);
  m.unique_sizes = nonzero(sizes);
  if (!spec.objects.empty()) {
    m.dominant_shape = to_string(vocab.shapes[mode(shapes)]);
    m.dominant_color = vocab.colors[mode(colors)].name;
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) m.shape_present[to_string(vocab.shapes[i])] = shapes[i] > 0;
  for (std::size_t i = 0; i < colors.size(); ++i) m.color_present[vocab.colors[i].name] = colors[i] > 0;
  return m;
}

std::vector<PromptItem> emit_prompts(const AttributeManifest& m, const std::string& family,
                                     const VisualVocabulary& vocab) {
  const std::string base_id = m.image_id + "/" + family;
  std::vector<std::string> shape_names;
  std::vector<std::string> color_names;
  for (auto s : vocab.shapes) shape_names.emplace_back(to_string(s));
  for (const auto& c : vocab.colors) color_names.push_back(c.name);

  auto present_absent = [](const std::vector<std::string>& names,
                           const std::map<std::string, bool>& presence) {
    std::pair<std::vector<std::string>, std::vector<std::string>> out;
    for (const auto& n : names) {
      const auto it = presence.find(n);
      (it != presence.end() && it->second ? out.first : out.second).push_back(n);
    }
    return out;
  };

  if (family == "describe") {
    auto [shapes, _s] = present_absent(shape_names, m.shape_present);
    auto [colors, _c] = present_absent(color_names, m.color_present);
    return {{base_id, family, "Describe this image.",
             fmt::format("{} shapes on a white background; shapes: {}; colors: {}", m.object_count,
                         join(shapes, ", "), join(colors, ", "))}};
  }
  if (family == "count")
    return {{base_id, family, "How many shapes are in this image?", std::to_string(m.object_count)}};
  if (family == "count-unique-shapes") {
    return {{base_id, family, "How many unique shapes are there in this image?",
             std::to_string(m.unique_shapes)}};
  }
  if (family == "count-unique-colors") {
    return {{base_id, family, "How many unique colors are there in this image?",
             std::to_string(m.unique_colors)}};
  }
  if (family == "dominant-shape")
    return {{base_id, family, "What is the most common shape in this image?", m.dominant_shape}};
  if (family == "dominant-color") {
    return {{base_id, family, "What is the most common color of shape in this image?",
             m.dominant_color}};
  }
  if (family == "shape-pair-presence" || family == "color-pair-presence") {
    const bool shapes = family == "shape-pair-presence";
    const auto [present, absent] = shapes ? present_absent(shape_names, m.shape_present)
                                          : present_absent(color_names, m.color_present);
    auto text = [&](const std::string& a, const std::string& b) {
      return shapes ? fmt::format("Are there both {} and {} in this image?", plural(a), plural(b))
                    : fmt::format("Can you see both {} and {} objects in this image?", a, b);
    };
    std::vector<PromptItem> out;
    if (present.size() >= 2) out.push_back({base_id + "/pos", family, text(present[0], present[1]), "yes"});
    if (!present.empty() && !absent.empty())
      out.push_back({base_id + "/neg", family, text(present[0], absent[0]), "no"});
    return out;
  }
  fail(ErrorKind::invalid_argument, "unknown prompt family '" + family + "'");
}

DatasetConfig DatasetConfig::uniform(std::size_t n_base_configs, std::vector<int> count_grid,
                                     std::uint64_t seed) {
  DatasetConfig cfg;
  cfg.n_base_configs = n_base_configs;
  cfg.seed = seed;
  for (auto a : kAllAxes) cfg.schedule[a] = count_grid;
  return cfg;
}

DatasetConfig DatasetConfig::shipped_default() {
  std::vector<int> counts;
  for (int c = 1; c <= 25; ++c) counts.push_back(c);
  for (int c = 26; c <= 100; c += 2) counts.push_back(c);
  for (int c = 105; c <= 200; c += 5) counts.push_back(c);
  DatasetConfig cfg;
  cfg.seed = 20250101;
  cfg.n_base_configs = 20;
  cfg.schedule[VariationAxis::baseline] = counts;
  counts.erase(counts.begin());
  for (auto a : kAllAxes)
    if (a != VariationAxis::baseline) cfg.schedule[a] = counts;
  return cfg;
}

void DatasetConfig::validate() const {
  vocab.validate();
  if (n_base_configs == 0) fail(ErrorKind::invalid_argument, "need at least one base configuration");
  if (width <= 0 || height <= 0) fail(ErrorKind::invalid_argument, "canvas must be non-empty");
  if (!(max_overlap >= 0 && max_overlap <= 1)) fail(ErrorKind::invalid_argument, "max_overlap must lie in [0,1]");
  if (image_format != "png" && image_format != "ppm")
    fail(ErrorKind::invalid_argument, "image format must be png or ppm");
  bool any = false;
  for (const auto& [axis, counts] : schedule) {
    for (int c : counts) {
      if (c < 1 || c > 200)
        fail(ErrorKind::invalid_argument, fmt::format("object count {} outside [1, 200]", c));
    }
    any = any || !counts.empty();
  }
  if (!any) fail(ErrorKind::invalid_argument, "count grid is empty");
  const double largest = vocab.sizes.back() * width;
  if (largest > width || largest > height)
    fail(ErrorKind::invalid_argument, "largest size class does not fit on the canvas");
}

std::size_t DatasetConfig::image_count() const {
  std::size_t per_base = 0;
  for (const auto& [axis, counts] : schedule) per_base += counts.size();
  return per_base * n_base_configs;
}

json to_json(const DatasetConfig& cfg) {
  json colors = json::array();
  for (const auto& c : cfg.vocab.colors) colors.push_back({{"name", c.name}, {"rgb", {c.rgb.r, c.rgb.g, c.rgb.b}}});
  json shapes = json::array();
  for (auto s : cfg.vocab.shapes) shapes.push_back(to_string(s));
  json schedule = json::object();
  for (auto a : kAllAxes) {
    const auto it = cfg.schedule.find(a);
    schedule[to_string(a)] = it == cfg.schedule.end() ? std::vector<int>{} : it->second;
  }
  return {{"format", "tokenlens-dataset-config"},
          {"n_base_configs", cfg.n_base_configs},
          {"canvas", {cfg.width, cfg.height}},
          {"seed", cfg.seed},
          {"max_overlap", cfg.max_overlap},
          {"max_attempts", cfg.max_attempts},
          {"image_format", cfg.image_format},
          {"vocabulary", {{"shapes", shapes}, {"colors", colors}, {"sizes", cfg.vocab.sizes}}},
          {"schedule", schedule}};
}

DatasetConfig dataset_config_from_json(const json& j) {
  try {
    DatasetConfig cfg;
    cfg.n_base_configs = j.value("n_base_configs", cfg.n_base_configs);
    if (j.contains("canvas")) {
      cfg.width = j.at("canvas").at(0).get<int>();
      cfg.height = j.at("canvas").at(1).get<int>();
    }
    cfg.seed = j.value("seed", cfg.seed);
    cfg.max_overlap = j.value("max_overlap", cfg.max_overlap);
    cfg.max_attempts = j.value("max_attempts", cfg.max_attempts);
    cfg.image_format = j.value("image_format", cfg.image_format);
    if (j.contains("vocabulary")) {
      const auto& v = j.at("vocabulary");
      if (v.contains("shapes")) {
        cfg.vocab.shapes.clear();
        for (const auto& s : v.at("shapes")) cfg.vocab.shapes.push_back(parse_shape(s.get<std::string>()));
      }
      if (v.contains("colors")) {
        cfg.vocab.colors.clear();
        for (const auto& c : v.at("colors")) {
          const auto rgb = c.at("rgb").get<std::array<int, 3>>();
          cfg.vocab.colors.push_back({c.at("name").get<std::string>(),
                                      {static_cast<std::uint8_t>(rgb[0]), static_cast<std::uint8_t>(rgb[1]),
                                       static_cast<std::uint8_t>(rgb[2])}});
        }
      }
      if (v.contains("sizes")) cfg.vocab.sizes = v.at("sizes").get<std::vector<double>>();
    }
    for (const auto& [axis, counts] : j.at("schedule").items())
      cfg.schedule[parse_axis(axis)] = counts.get<std::vector<int>>();
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("dataset config: ") + e.what());
  }
}

DatasetConfig load_dataset_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::missing_input, "cannot open dataset config " + path.string());
  try {
    return dataset_config_from_json(json::parse(in));
  } catch (const json::exception& e) {
    fail(ErrorKind::format, path.string() + ": " + e.what());
  }
}

BaseConfig base_config(const DatasetConfig& cfg, std::size_t index) {
  CounterRng rng({cfg.seed, index, kBaseStream});
  BaseConfig b;
  b.shape = rng.below(cfg.vocab.shapes.size());
  b.color = rng.below(cfg.vocab.colors.size());
  b.size = rng.below(cfg.vocab.sizes.size());
  return b;
}

SceneSpec make_scene(const DatasetConfig& cfg, std::size_t base_index, int count,
                     VariationAxis axis) {
  const BaseConfig base = base_config(cfg, base_index);
  SceneSpec spec;
  spec.image_id = fmt::format("b{:02}_{}_n{:03}", base_index, to_string(axis), count);
  spec.base_config = base_index;
  spec.object_count = count;
  spec.axis = axis;
  spec.width = cfg.width;
  spec.height = cfg.height;
  spec.seed = cfg.seed;

  const bool vary_shape = axis == VariationAxis::shape || axis == VariationAxis::mixture;
  const bool vary_color = axis == VariationAxis::color || axis == VariationAxis::mixture;
  const bool vary_size = axis == VariationAxis::size || axis == VariationAxis::mixture;
  for (int i = 0; i < count; ++i) {
    CounterRng rng({cfg.seed, base_index, static_cast<std::uint64_t>(count),
                    static_cast<std::uint64_t>(axis), static_cast<std::uint64_t>(i)});
    SceneObject o;
    const std::size_t shape = vary_shape ? rng.below(cfg.vocab.shapes.size()) : base.shape;
    const std::size_t color = vary_color ? rng.below(cfg.vocab.colors.size()) : base.color;
    o.size_class = vary_size ? rng.below(cfg.vocab.sizes.size()) : base.size;
    o.shape = cfg.vocab.shapes[shape];
    o.color = cfg.vocab.colors[color].name;
    o.rgb = cfg.vocab.colors[color].rgb;
    o.size_px = cfg.vocab.sizes[o.size_class] * cfg.width;
    const double r = o.size_px / 2;
    bool placed = false;
    for (std::size_t attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
      o.cx = rng.uniform(r, cfg.width - r);
      o.cy = rng.uniform(r, cfg.height - r);
      placed = std::all_of(spec.objects.begin(), spec.objects.end(), [&](const SceneObject& p) {
        return overlap_fraction(o, p) <= cfg.max_overlap;
      });
    }
    if (!placed) {
      fail(ErrorKind::numerical,
           fmt::format("{}: could not place object {} after {} attempts", spec.image_id, i,
                       cfg.max_attempts));
    }
    spec.objects.push_back(std::move(o));
  }
  spec.validate();
  return spec;
}

DatasetIndex generate_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir,
                              std::size_t jobs, const ProgressFn& on_progress) {
  cfg.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  for (const char* sub : {"images", "specs", "manifests", "prompts"}) {
    fs::create_directories(out_dir / sub, ec);
    if (ec) fail(ErrorKind::io, "cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }

  struct Job {
    std::size_t base;
    VariationAxis axis;
    int count;
  };
  std::vector<Job> work;
  for (std::size_t b = 0; b < cfg.n_base_configs; ++b)
    for (auto axis : kAllAxes) {
      const auto it = cfg.schedule.find(axis);
      if (it == cfg.schedule.end()) continue;
      for (int c : it->second) work.push_back({b, axis, c});
    }

  DatasetIndex index;
  index.entries.resize(work.size());
  std::mutex progress_mu;
  std::size_t done = 0;
  parallel_for(work.size(), jobs, [&](std::size_t i) {
    const auto& job = work[i];
    const SceneSpec spec = make_scene(cfg, job.base, job.count, job.axis);
    const auto manifest = derive_attributes(spec, cfg.vocab);

    IndexEntry e;
    e.image_id = spec.image_id;
    e.base_config = job.base;
    e.object_count = job.count;
    e.axis = job.axis;
    e.image = "images/" + spec.image_id + "." + cfg.image_format;
    e.spec = "specs/" + spec.image_id + ".scene";
    e.manifest = "manifests/" + spec.image_id + ".attr";
    e.prompts = "prompts/" + spec.image_id + ".txt";

    const RgbImage img = rasterize(spec);
    if (cfg.image_format == "png") {
      write_png(img, out_dir / e.image);
    } else {
      write_ppm(img, out_dir / e.image);
    }
    write_text(out_dir / e.spec, to_json(spec).dump(1) + "\n");
    write_text(out_dir / e.manifest, to_json(manifest).dump(1) + "\n");

    csv::Table prompts{{"prompt_id", "family", "prompt", "gold"}, {}};
    for (const char* family : kPromptFamilies)
      for (auto& p : emit_prompts(manifest, family, cfg.vocab))
        prompts.rows.push_back({p.prompt_id, p.family, p.prompt, p.gold});
    csv::write(prompts, out_dir / e.prompts);
    index.entries[i] = std::move(e);
    if (on_progress) {
      std::lock_guard lock(progress_mu);
      on_progress(++done, work.size());
    }
  });

  csv::Table t{{"image_id", "base_config", "object_count", "variation_axis", "image", "spec",
                "manifest", "prompts"},
               {}};
  for (const auto& e : index.entries) {
    t.rows.push_back({e.image_id, std::to_string(e.base_config), std::to_string(e.object_count),
                      to_string(e.axis), e.image, e.spec, e.manifest, e.prompts});
  }
  csv::write(t, out_dir / "index.csv");
  write_text(out_dir / "dataset_config.json", to_json(cfg).dump(1) + "\n");
  return index;
}

DatasetIndex read_index(const std::filesystem::path& index_csv) {
  const auto t = csv::read(index_csv);
  DatasetIndex idx;
  const auto c_id = t.column("image_id");
  const auto c_base = t.column("base_config");
  const auto c_count = t.column("object_count");
  const auto c_axis = t.column("variation_axis");
  const auto c_img = t.column("image");
  const auto c_spec = t.column("spec");
  const auto c_man = t.column("manifest");
  const auto c_pr = t.column("prompts");
  for (const auto& r : t.rows) {
    idx.entries.push_back({r[c_id], static_cast<std::size_t>(std::stoul(r[c_base])),
                           std::stoi(r[c_count]), parse_axis(r[c_axis]), r[c_img], r[c_spec],
                           r[c_man], r[c_pr]});
  }
  return idx;
}

}  // namespace tokenlens::synthgen

#include "tokenlens/ftdata.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "tokenlens/error.hpp"

namespace tokenlens::ftdata {
namespace {

[[noreturn]] void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, "ftdata", msg);
}

std::string relation_phrase(Preposition p) {
  switch (p) {
    case Preposition::left: return "to the left of";
    case Preposition::right: return "to the right of";
    case Preposition::above: return "above";
    case Preposition::below: return "below";
    case Preposition::top: return "on the top of";
    case Preposition::bottom: return "on the bottom of";
  }
  return "";
}

std::string side_phrase(Preposition p) {
  switch (p) {
    case Preposition::left: return "to the left";
    case Preposition::right: return "to the right";
    default: return std::string("on the ") + to_string(p);
  }
}

}  // namespace

void AnnotationRecord::validate() const {
  if (!(width > 0 && height > 0)) fail(ErrorKind::invalid_argument, image_id + ": image has no area");
  if (!(bbox.x1 < bbox.x2 && bbox.y1 < bbox.y2))
    fail(ErrorKind::invalid_argument, image_id + ": bbox must satisfy x1<x2, y1<y2");
  if (bbox.x1 < 0 || bbox.y1 < 0 || bbox.x2 > width || bbox.y2 > height)
    fail(ErrorKind::invalid_argument, image_id + ": bbox " + format_bbox(bbox) + " outside image");
}

void FilterConfig::validate() const {
  if (!(0 < min_area_frac && min_area_frac < max_area_frac && max_area_frac < 1))
    fail(ErrorKind::invalid_argument, "area bounds must satisfy 0 < min < max < 1");
  if (!(alpha > 0)) fail(ErrorKind::invalid_argument, "alpha must be positive");
}

FilterResult filter_annotations(const std::vector<AnnotationRecord>& records,
                                const FilterConfig& cfg) {
  cfg.validate();
  std::map<std::pair<std::string, std::string>, std::size_t> occurrences;
  for (const auto& r : records) ++occurrences[{r.image_id, r.category}];

  FilterResult out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    r.validate();
    std::vector<std::string> reasons;
    if (occurrences[{r.image_id, r.category}] > 1) reasons.emplace_back("duplicate-category");
    const double frac = r.bbox.area() / (r.width * r.height);
    if (frac < cfg.min_area_frac) reasons.emplace_back("too-small");
    if (frac > cfg.max_area_frac) reasons.emplace_back("too-large");
    const bool off_x = std::abs(r.bbox.cx() - r.width / 2.0) > cfg.alpha * r.width;
    const bool off_y = std::abs(r.bbox.cy() - r.height / 2.0) > cfg.alpha * r.height;
    const bool off_center = cfg.join == CenterJoin::any_axis ? (off_x || off_y) : (off_x && off_y);
    if (!off_center) reasons.emplace_back("centered");
    if (reasons.empty()) {
      out.accepted.push_back(r);
    } else {
      out.rejected.push_back({i, std::move(reasons)});
    }
  }
  return out;
}

const char* to_string(Preposition p) {
  switch (p) {
    case Preposition::left: return "left";
    case Preposition::right: return "right";
    case Preposition::above: return "above";
    case Preposition::below: return "below";
    case Preposition::top: return "top";
    case Preposition::bottom: return "bottom";
  }
  return "";
}

Preposition assign_preposition(const AnnotationRecord& r) {
  const double dx = (r.bbox.cx() - r.width / 2.0) / r.width;
  const double dy = (r.bbox.cy() - r.height / 2.0) / r.height;
  if (std::abs(dx) == std::abs(dy))
    fail(ErrorKind::degenerate, r.image_id + ": ambiguous preposition for " + r.category);
  if (std::abs(dx) > std::abs(dy)) return dx < 0 ? Preposition::left : Preposition::right;
  return dy < 0 ? Preposition::top : Preposition::bottom;
}

Preposition assign_preposition(const AnnotationRecord& a, const AnnotationRecord& b) {
  if (a.image_id != b.image_id)
    fail(ErrorKind::contract, "two-object preposition needs records from one image");
  const double dx = (a.bbox.cx() - b.bbox.cx()) / a.width;
  const double dy = (a.bbox.cy() - b.bbox.cy()) / a.height;
  if (std::abs(dx) == std::abs(dy))
    fail(ErrorKind::degenerate, a.image_id + ": ambiguous relation between " + a.category +
                                    " and " + b.category);
  if (std::abs(dx) > std::abs(dy)) return dx < 0 ? Preposition::left : Preposition::right;
  return dy < 0 ? Preposition::above : Preposition::below;
}

double iou(const BBox& a, const BBox& b) {
  if (!(a.area() > 0) || !(b.area() > 0)) fail(ErrorKind::degenerate, "zero-area box in IoU");
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

Selection likelihood_select(const std::vector<double>& ll, std::size_t gold_index) {
  if (ll.empty()) fail(ErrorKind::invalid_argument, "no candidates");
  if (ll.size() < 2) fail(ErrorKind::invalid_argument, "need at least two candidates");
  if (gold_index >= ll.size()) fail(ErrorKind::invalid_argument, "gold index out of range");
  for (double x : ll)
    if (!std::isfinite(x)) fail(ErrorKind::invalid_argument, "non-finite log-likelihood");
  Selection s;
  for (std::size_t i = 1; i < ll.size(); ++i)
    if (ll[i] > ll[s.chosen]) s.chosen = i;
  s.tie = std::count(ll.begin(), ll.end(), ll[s.chosen]) > 1;
  s.correct = s.chosen == gold_index;
  return s;
}

bool mentions_preposition(const std::string& text, const std::vector<std::string>& prepositions) {
  std::string lowered;
  for (unsigned char c : text) lowered.push_back(std::isalpha(c) ? static_cast<char>(std::tolower(c)) : ' ');
  std::istringstream words(lowered);
  std::string w;
  while (words >> w)
    if (std::find(prepositions.begin(), prepositions.end(), w) != prepositions.end()) return true;
  return false;
}

std::string format_bbox(const BBox& b) {
  return fmt::format("[{}, {}, {}, {}]", b.x1, b.y1, b.x2, b.y2);
}

std::vector<PromptTarget> emit_prompt_targets(const std::vector<AnnotationRecord>& accepted) {
  std::vector<PromptTarget> out;
  std::map<std::string, std::vector<const AnnotationRecord*>> by_image;
  for (const auto& r : accepted) by_image[r.image_id].push_back(&r);

  for (const auto& r : accepted) {
    Preposition p;
    try {
      p = assign_preposition(r);
    } catch (const Error&) {
      continue;
    }
    out.push_back({r.image_id, "spatial-caption-1",
                   fmt::format("Describe the spatial relationship of the {} relative to the image.",
                               r.category),
                   fmt::format("A photo of a {} {}", r.category, side_phrase(p))});
    out.push_back({r.image_id, "refexp-1",
                   fmt::format("Point to the {} on the {}.", r.category, to_string(p)),
                   format_bbox(r.bbox)});
  }
  for (const auto& [image, recs] : by_image) {
    for (const auto* a : recs) {
      for (const auto* b : recs) {
        if (a == b) continue;
        Preposition p;
        try {
          p = assign_preposition(*a, *b);
        } catch (const Error&) {
          continue;
        }
        const auto rel = relation_phrase(p);
        out.push_back({image, "spatial-caption-2",
                       fmt::format("Describe the spatial relationship between the {} and the {} "
                                   "in the image.",
                                   a->category, b->category),
                       fmt::format("A photo of a {} {} a {}", a->category, rel, b->category)});
        out.push_back({image, "refexp-2",
                       fmt::format("Point to the {} {} {}.", a->category, rel, b->category),
                       format_bbox(a->bbox)});
        out.push_back({image, "refexp-loc-2",
                       fmt::format("Point to the {} {} {} at {}", a->category, rel, b->category,
                                   format_bbox(b->bbox)),
                       format_bbox(a->bbox)});
      }
    }
  }
  return out;
}

std::vector<AnnotationRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::missing_input, "cannot open " + path.string());
  std::vector<AnnotationRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      AnnotationRecord r;
      r.image_id = j.at("image_id").is_string() ? j.at("image_id").get<std::string>()
                                                : j.at("image_id").dump();
      r.width = j.at("width").get<double>();
      r.height = j.at("height").get<double>();
      const auto box = j.at("bbox").get<std::vector<double>>();
      if (box.size() != 4) fail(ErrorKind::format, "bbox needs 4 numbers");
      r.bbox = {box[0], box[1], box[2], box[3]};
      r.category = j.at("category").get<std::string>();
      if (j.contains("qualifiers")) r.qualifiers = j.at("qualifiers").get<std::vector<std::string>>();
      r.validate();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::format, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_records(const std::vector<AnnotationRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  for (const auto& r : records) {
    nlohmann::json j;
    j["image_id"] = r.image_id;
    j["width"] = r.width;
    j["height"] = r.height;
    j["bbox"] = {r.bbox.x1, r.bbox.y1, r.bbox.x2, r.bbox.y2};
    j["category"] = r.category;
    j["qualifiers"] = r.qualifiers;
    out << j.dump() << '\n';
  }
}

}  // namespace tokenlens::ftdata

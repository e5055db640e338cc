#pragma once

// Fine-tuning dataset filters and evaluation primitives for annotation
// records (COCO/GQA-style boxes in pixel coordinates, y pointing down).

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tokenlens::ftdata {

struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double area() const { return (x2 - x1) * (y2 - y1); }
  double cx() const { return (x1 + x2) / 2.0; }
  double cy() const { return (y1 + y2) / 2.0; }
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct AnnotationRecord {
  std::string image_id;
  double width = 0;
  double height = 0;
  BBox bbox;
  std::string category;
  std::vector<std::string> qualifiers;

  /// Throws Error{invalid_argument} unless the box is non-empty and inside
  /// the image.
  void validate() const;
  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

/// How the per-axis "not centered" tests combine.
enum class CenterJoin { any_axis, all_axes };

struct FilterConfig {
  double min_area_frac = 0.03;
  double max_area_frac = 0.30;
  double alpha = 0.05;
  CenterJoin join = CenterJoin::any_axis;
  std::vector<std::string> prepositions = {"left", "right", "above", "below", "bottom", "top"};

  void validate() const;
};

struct Rejection {
  std::size_t record_index = 0;
  std::vector<std::string> reasons;  // "duplicate-category", "too-small", "too-large", "centered"
};

struct FilterResult {
  std::vector<AnnotationRecord> accepted;
  std::vector<Rejection> rejected;
};

/// Keeps records whose area fraction lies in [min, max], whose centroid is
/// off-center by more than alpha * extent (per `join`), and whose category
/// occurs once in its image.
FilterResult filter_annotations(const std::vector<AnnotationRecord>& records,
                                const FilterConfig& cfg = {});

enum class Preposition { left, right, above, below, top, bottom };

const char* to_string(Preposition p);

/// Side of the image the object sits on; the axis with the larger
/// normalized offset from the image center wins. Exact ties throw
/// Error{degenerate} ("ambiguous").
Preposition assign_preposition(const AnnotationRecord& record);

/// Where `a` sits relative to `b` (left/right/above/below), dominant
/// normalized axis first. Both must share image_id.
Preposition assign_preposition(const AnnotationRecord& a, const AnnotationRecord& b);

/// Intersection over union; throws on a zero-area box.
double iou(const BBox& a, const BBox& b);

struct Selection {
  std::size_t chosen = 0;
  bool correct = false;
  bool tie = false;
};

/// Argmax over log-likelihoods; ties resolve to the lowest index and set
/// `tie`.
Selection likelihood_select(const std::vector<double>& log_likelihoods, std::size_t gold_index);

/// True when `text` contains any of `prepositions` as a whole word.
bool mentions_preposition(const std::string& text, const std::vector<std::string>& prepositions);

struct PromptTarget {
  std::string image_id;
  std::string task;  // spatial-caption-1, refexp-1, spatial-caption-2, refexp-2, refexp-loc-2
  std::string prompt;
  std::string target;
};

/// Prompt/target pairs for every accepted record (one-object tasks) and every
/// ordered pair of records within an image (two-object tasks). Records whose
/// preposition is ambiguous are skipped.
std::vector<PromptTarget> emit_prompt_targets(const std::vector<AnnotationRecord>& accepted);

std::string format_bbox(const BBox& b);

/// JSON-lines: {"image_id", "width", "height", "bbox": [x1,y1,x2,y2],
/// "category", "qualifiers": [...]}.
std::vector<AnnotationRecord> read_records(const std::filesystem::path& path);
void write_records(const std::vector<AnnotationRecord>& records, const std::filesystem::path& path);

}  // namespace tokenlens::ftdata

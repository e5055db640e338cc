#pragma once

// Per-(layer, position) MLP probes predicting visual attributes from token
// embeddings.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tokenlens/hsdio.hpp"
#include "tokenlens/matrix.hpp"
#include "tokenlens/synthgen.hpp"

namespace tokenlens::probes {

/// Maps a manifest to a class label. Count-type kinds (object_count,
/// scene_complexity) bucketize with `edges`: class = number of edges strictly
/// below the value. Other kinds use the attribute value directly.
struct LabelSpec {
  std::string kind = "object_count";
  std::vector<int> edges;

  /// Default buckets: object_count {1-10, 11-50, 51-200}; scene_complexity
  /// {<=2, 3-5, >5}; unique_shapes / unique_colors use value - 1.
  static LabelSpec for_kind(const std::string& kind);
  std::size_t n_classes(const synthgen::VisualVocabulary& vocab) const;
  int label(const synthgen::AttributeManifest& manifest,
            const synthgen::VisualVocabulary& vocab) const;
};

inline constexpr const char* kLabelKinds[] = {"object_count",  "scene_complexity",
                                              "unique_shapes", "unique_colors",
                                              "dominant_shape", "dominant_color"};

struct ProbeDataset {
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  std::size_t n_classes = 0;
  std::size_t layer = 0;
  std::size_t position = 0;
  std::string label_kind;

  /// Throws unless shapes agree, labels are in range and >= 2 classes occur.
  void validate() const;
};

/// One example per dump: the embedding at (layer, position) with the label
/// derived from the matching manifest. All dumps must share n_tokens and dim.
ProbeDataset build_probe_dataset(std::span<const hsd::HiddenStateDump> dumps,
                                 std::span<const synthgen::AttributeManifest> manifests,
                                 const LabelSpec& label, const synthgen::VisualVocabulary& vocab,
                                 std::size_t layer, std::size_t position);

struct TrainConfig {
  std::vector<std::size_t> hidden = {256, 256};  // empty = linear softmax probe
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  double val_fraction = 0.2;
  std::uint64_t split_seed = 0;
  std::uint64_t init_seed = 0;
  bool standardize = true;
  /// Record training accuracy after every epoch.
  bool track_history = false;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Fully connected ReLU network with a softmax head. weights[l] is
/// out x in; inputs are standardized with (mean, scale) before layer 0.
struct ProbeModel {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;
  std::vector<double> mean;
  std::vector<double> scale;

  static ProbeModel init(std::size_t in_dim, const std::vector<std::size_t>& hidden,
                         std::size_t n_classes, std::uint64_t seed);

  std::size_t n_classes() const { return biases.empty() ? 0 : biases.back().size(); }
  std::vector<double> predict_proba(std::span<const double> x) const;
  int predict(std::span<const double> x) const;

  friend bool operator==(const ProbeModel&, const ProbeModel&) = default;
};

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;
};

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to every weight and bias (standardization is treated as fixed).
double loss_and_gradient(const ProbeModel& model, std::span<const std::vector<double>> x,
                         std::span<const int> y, Gradients* grad);

/// Largest elementwise relative error between the analytic gradient and
/// central finite differences with step `step`. Relative error uses
/// max(|analytic|, |numeric|, floor) as the denominator.
double gradient_check(const ProbeModel& model, std::span<const std::vector<double>> x,
                      std::span<const int> y, double step = 1e-5, double floor = 1e-6);

struct StratifiedSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Per class, round(val_fraction * n_c) examples go to validation.
StratifiedSplit stratified_split(std::span<const int> labels, double val_fraction,
                                 std::uint64_t seed);

struct TrainResult {
  ProbeModel model;
  double train_acc = 0.0;
  double val_acc = 0.0;  // NaN when the validation split is empty
  std::vector<double> train_acc_history;
};

TrainResult train_probe(const ProbeDataset& ds, const TrainConfig& cfg);

struct LayerSummary {
  std::size_t layer = 0;
  double vision_mean = 0.0;
  double vision_variance = 0.0;
  double text_mean = 0.0;
  double text_variance = 0.0;
};

struct ProbeGrid {
  std::size_t n_layers = 0;
  std::size_t n_tokens = 0;
  std::vector<hsd::TokenRole> roles;  // per position
  std::vector<std::vector<double>> train_acc;  // [layer][position]
  std::vector<std::vector<double>> val_acc;
  std::vector<LayerSummary> summaries;
};

/// Trains one probe per (layer, position). Summaries average validation
/// accuracy over vision-role and text-role positions separately (NaN when a
/// role has no positions). Positions are labelled with the roles of the
/// first dump.
ProbeGrid probe_grid(std::span<const hsd::HiddenStateDump> dumps,
                     std::span<const hsd::TokenRoleMap> roles,
                     std::span<const synthgen::AttributeManifest> manifests,
                     const LabelSpec& label, const synthgen::VisualVocabulary& vocab,
                     const TrainConfig& cfg, std::size_t jobs = 1);

}  // namespace tokenlens::probes

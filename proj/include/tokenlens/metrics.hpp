#pragma once

// Token-norm and spectral compression metrics for a single token matrix.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tokenlens/hsdio.hpp"
#include "tokenlens/matrix.hpp"

namespace tokenlens::metrics {

/// Singular values below this fraction of the largest are treated as zero.
inline constexpr double kRankCutoff = 1e-12;

struct NormProfile {
  std::vector<double> token_norms;
  double gini = 0.0;
  double normalized_entropy = 0.0;
  double cv = 0.0;
};

struct RankProfile {
  std::vector<double> singular_values;  // descending, cutoff applied
  double stable_rank = 0.0;
  double participation_ratio = 0.0;
  double exponential_entropy = 0.0;
};

// Formulas over precomputed values. Entropies use the natural log; the
// standard deviation in cv is the population one.
double gini(std::span<const double> norms);
double normalized_entropy(std::span<const double> norms);
double coefficient_of_variation(std::span<const double> norms);

NormProfile norm_profile_from_norms(std::vector<double> norms);
RankProfile rank_profile_from_singular_values(std::vector<double> sigma);

/// Requires at least two tokens and a nonzero matrix.
NormProfile token_norm_metrics(const Matrix& layer);

/// Requires a nonzero matrix.
RankProfile spectral_metrics(const Matrix& layer);

enum class ModalityFilter { vision, text, all };

const char* to_string(ModalityFilter filter);
ModalityFilter parse_modality_filter(const std::string& name);

struct LayerProfile {
  std::size_t layer = 0;
  NormProfile norms;
  RankProfile ranks;
};

/// Metrics per layer over the token rows selected by `filter`.
std::vector<LayerProfile> profile_dump(const hsd::HiddenStateDump& dump,
                                       const hsd::TokenRoleMap& roles, ModalityFilter filter);

/// Fixed CSV column names, in emission order.
inline constexpr const char* kMetricColumns[] = {
    "gini", "norm_entropy", "cv", "stable_rank", "participation_ratio", "exp_entropy"};

std::vector<double> metric_values(const LayerProfile& profile);

}  // namespace tokenlens::metrics

#pragma once

// SVD alignment between the vision, text and multimodal token matrices of a
// layer. "Primary token component" is the first left singular vector (token
// space); "feature direction" is the first right singular vector. All
// decompositions are uncentered and sign-canonicalized (see svd.hpp).

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tokenlens/hsdio.hpp"
#include "tokenlens/matrix.hpp"
#include "tokenlens/svd.hpp"

namespace tokenlens::svdalign {

/// ||u_c restricted to a modality|| below this is reported as degenerate.
inline constexpr double kDegenerateNorm = 1e-10;
inline constexpr std::size_t kDefaultRank = 5;

struct ModalSvd {
  Svd vision;
  Svd text;
  Svd multimodal;
};

struct Consistency {
  std::optional<double> vision;  // nullopt: degenerate restriction
  std::optional<double> text;
};

struct SubspaceAlignment {
  double e_vision = 0.0;
  double e_text = 0.0;
  std::optional<double> a_vision;  // nullopt when e_vision + e_text == 0
  std::optional<double> a_text;
};

struct Reconstruction {
  double r2 = 0.0;
  double concentration = 0.0;
  std::size_t k_used = 0;
  bool clamped = false;
};

Consistency token_projection_consistency(const Matrix& multi,
                                         std::span<const std::size_t> vision_rows,
                                         std::span<const std::size_t> text_rows);

double feature_space_alignment(const Matrix& unimodal, const Matrix& multi);

SubspaceAlignment subspace_alignment(const Matrix& multi,
                                     std::span<const std::size_t> vision_rows,
                                     std::span<const std::size_t> text_rows);

Reconstruction reconstruction_alignment(const Matrix& multi, const Matrix& unimodal,
                                        std::size_t k = kDefaultRank);

/// Fraction of squared spectrum mass in the top k singular values.
double concentration(std::span<const double> singular_values, std::size_t k);

enum class RankMode {
  fixed,        // use AlignOptions::k
  stable_rank,  // k = round(stable rank) of each unimodal matrix
};

struct AlignOptions {
  std::size_t k = kDefaultRank;
  RankMode rank_mode = RankMode::fixed;
};

struct SvdAlignmentReport {
  std::size_t layer = 0;
  std::optional<double> consist_vision;
  std::optional<double> consist_text;
  double fsa_vision = 0.0;
  double fsa_text = 0.0;
  double e_vision = 0.0;
  double e_text = 0.0;
  std::optional<double> a_vision;
  std::optional<double> a_text;
  double r2_vision = 0.0;
  double r2_text = 0.0;
  double conc_vision = 0.0;
  double conc_text = 0.0;
  double conc_multi = 0.0;
  std::size_t k_vision = 0;
  std::size_t k_text = 0;
  std::vector<std::string> warnings;
};

SvdAlignmentReport align_layer(const hsd::ModalSlices& slices, std::size_t layer,
                               const AlignOptions& options = {});

/// Refuses dumps without at least one vision and one text token.
std::vector<SvdAlignmentReport> align_dump(const hsd::HiddenStateDump& dump,
                                           const hsd::TokenRoleMap& roles,
                                           const AlignOptions& options = {});

/// Report fields in CSV column order; degenerate values are nullopt.
std::vector<std::pair<std::string, std::optional<double>>> report_fields(
    const SvdAlignmentReport& report);

}  // namespace tokenlens::svdalign

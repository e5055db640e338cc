#pragma once

// Toy hidden-state generator: fabricates dumps whose vision-token spectrum
// widens with the scene's object count, standing in for a real model when
// exercising the pipeline end to end.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tokenlens/hsdio.hpp"
#include "tokenlens/matrix.hpp"

namespace tokenlens::toyhsd {

struct ToyConfig {
  std::size_t n_layers = 4;
  std::size_t n_special = 1;  // leading special tokens (e.g. BOS)
  std::size_t n_vision = 48;
  std::size_t n_text = 12;
  std::size_t dim = 32;
  std::uint64_t seed = 0;
  /// Spectral decay length for the vision block: tau = tau_base +
  /// tau_per_object * object_count, times a per-image jitter in
  /// [1 - jitter, 1 + jitter] and a layer factor growing linearly to
  /// 1 + layer_growth at the last layer.
  double tau_base = 0.5;
  double tau_per_object = 0.05;
  double jitter = 0.1;
  double layer_growth = 0.5;
  /// Fixed decay length of the text block.
  double text_tau = 2.0;

  void validate() const;
};

nlohmann::json to_json(const ToyConfig& cfg);
ToyConfig toy_config_from_json(const nlohmann::json& j);

/// m x r matrix with orthonormal columns (Gram-Schmidt on Gaussian draws).
Matrix random_orthonormal(std::size_t m, std::size_t r, std::uint64_t seed);

/// U diag(sigma) V^T with random orthonormal U (rows x r) and V (cols x r),
/// r = sigma.size().
Matrix with_spectrum(std::size_t rows, std::size_t cols, const std::vector<double>& sigma,
                     std::uint64_t seed);

/// sigma_j = exp(-j / tau), j = 0..r-1.
std::vector<double> decaying_spectrum(std::size_t r, double tau);

struct ToyDump {
  hsd::HiddenStateDump dump;
  hsd::TokenRoleMap roles;
};

/// Roles are [special..., vision..., text...]. Deterministic in
/// (cfg.seed, image_id).
ToyDump fabricate(const ToyConfig& cfg, const std::string& image_id, int object_count,
                  const std::string& prompt_id = "describe");

/// Fabricates one dump per dataset-index entry into out_dir/<image_id>.hsd
/// (plus sidecar manifests). Returns the written dump paths in index order.
std::vector<std::filesystem::path> fabricate_dataset(const ToyConfig& cfg,
                                                     const std::filesystem::path& dataset_dir,
                                                     const std::filesystem::path& out_dir,
                                                     std::size_t jobs = 1);

}  // namespace tokenlens::toyhsd

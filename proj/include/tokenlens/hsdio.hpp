#pragma once

// Hidden-state dump (HSD) format.
//
// Binary layout, all integers little-endian:
//   offset 0   "HSD1"                  magic
//   offset 4   u32 version             (1)
//   offset 8   u32 n_layers
//   offset 12  u32 n_tokens
//   offset 16  u32 dim
//   offset 20  u32 dtype               (0 = float32)
//   offset 24  u8  flags               (bit 0: final layer is post-layernorm)
//   offset 25  payload                 n_layers * n_tokens * dim float32,
//                                      layer-major, then row-major
//
// The token-role manifest lives next to the dump as a JSON sidecar with the
// same basename and a `.manifest` extension.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tokenlens/error.hpp"
#include "tokenlens/matrix.hpp"

namespace tokenlens::hsd {

inline constexpr char kMagic[4] = {'H', 'S', 'D', '1'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint32_t kDtypeFloat32 = 0;
inline constexpr std::size_t kHeaderBytes = 25;

enum class Errc {
  io,
  file_missing,
  bad_magic,
  unsupported_version,
  zero_layers,
  zero_tokens,
  zero_dim,
  unsupported_dtype,
  bad_flags,
  truncated_header,
  truncated_payload,
  trailing_bytes,
  non_finite,
  shape_mismatch,
  manifest_missing,
  manifest_invalid,
  layer_out_of_range,
};

const char* to_string(Errc code);

class HsdError : public Error {
 public:
  HsdError(Errc code, const std::string& message);
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

enum class TokenRole : std::uint8_t { vision, text, special };

const char* to_string(TokenRole role);
TokenRole parse_role(const std::string& name);

struct HiddenStateDump {
  std::uint32_t n_layers = 0;
  std::uint32_t n_tokens = 0;
  std::uint32_t dim = 0;
  /// One row-major n_tokens x dim block per layer.
  std::vector<std::vector<float>> layers;
  bool post_layernorm_final = false;

  /// Layer `layer` widened to double.
  Matrix layer_matrix(std::size_t layer) const;

  /// Throws HsdError on any broken invariant (shape, non-finite entries).
  void validate() const;

  friend bool operator==(const HiddenStateDump&, const HiddenStateDump&) = default;
};

/// Builds a dump from double matrices (rounded to float32 storage).
HiddenStateDump make_dump(const std::vector<Matrix>& layers, bool post_layernorm_final = false);

struct TokenRoleMap {
  std::vector<TokenRole> roles;
  std::string prompt_id;
  std::string image_id;
  std::string model_tag;

  std::size_t count(TokenRole role) const;
  std::vector<std::size_t> indices(TokenRole role) const;

  friend bool operator==(const TokenRoleMap&, const TokenRoleMap&) = default;
};

std::filesystem::path manifest_path(const std::filesystem::path& dump_path);

void write_dump(const HiddenStateDump& dump, const TokenRoleMap& roles,
                const std::filesystem::path& path);

struct LoadedDump {
  HiddenStateDump dump;
  TokenRoleMap roles;
};

LoadedDump read_dump(const std::filesystem::path& path);

/// Reads only the role manifest sidecar of a dump.
TokenRoleMap read_manifest(const std::filesystem::path& manifest_file);
void write_manifest(const TokenRoleMap& roles, const std::filesystem::path& manifest_file);

struct ModalSlices {
  Matrix vision;
  Matrix text;
  Matrix multimodal;
  std::vector<std::size_t> vision_rows;
  std::vector<std::size_t> text_rows;
};

/// Splits one layer into vision rows, text rows, and the full layer.
/// Special tokens appear only in the multimodal matrix.
ModalSlices slice_modalities(const HiddenStateDump& dump, const TokenRoleMap& roles,
                             std::size_t layer);

}  // namespace tokenlens::hsd

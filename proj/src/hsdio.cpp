#include "tokenlens/hsdio.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include <nlohmann/json.hpp>

namespace tokenlens::hsd {
namespace {

constexpr std::uint64_t kMaxPayloadBytes = 1ULL << 40;

ErrorKind kind_of(Errc code) {
  switch (code) {
    case Errc::io: return ErrorKind::io;
    case Errc::file_missing:
    case Errc::manifest_missing: return ErrorKind::missing_input;
    case Errc::shape_mismatch:
    case Errc::layer_out_of_range: return ErrorKind::contract;
    default: return ErrorKind::format;
  }
}

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void check_roles(const HiddenStateDump& dump, const TokenRoleMap& roles) {
  if (roles.roles.size() != dump.n_tokens) {
    throw HsdError(Errc::shape_mismatch,
                   "role map has " + std::to_string(roles.roles.size()) +
                       " entries but dump has " + std::to_string(dump.n_tokens) + " tokens");
  }
}

}  // namespace

const char* to_string(Errc code) {
  switch (code) {
    case Errc::io: return "io";
    case Errc::file_missing: return "file-missing";
    case Errc::bad_magic: return "bad-magic";
    case Errc::unsupported_version: return "unsupported-version";
    case Errc::zero_layers: return "zero-layers";
    case Errc::zero_tokens: return "zero-tokens";
    case Errc::zero_dim: return "zero-dim";
    case Errc::unsupported_dtype: return "unsupported-dtype";
    case Errc::bad_flags: return "bad-flags";
    case Errc::truncated_header: return "truncated-header";
    case Errc::truncated_payload: return "truncated-payload";
    case Errc::trailing_bytes: return "trailing-bytes";
    case Errc::non_finite: return "non-finite";
    case Errc::shape_mismatch: return "shape-mismatch";
    case Errc::manifest_missing: return "manifest-missing";
    case Errc::manifest_invalid: return "manifest-invalid";
    case Errc::layer_out_of_range: return "layer-out-of-range";
  }
  return "unknown";
}

HsdError::HsdError(Errc code, const std::string& message)
    : Error(kind_of(code), "hsdio", std::string(to_string(code)) + ": " + message),
      code_(code) {}

const char* to_string(TokenRole role) {
  switch (role) {
    case TokenRole::vision: return "vision";
    case TokenRole::text: return "text";
    case TokenRole::special: return "special";
  }
  return "special";
}

TokenRole parse_role(const std::string& name) {
  if (name == "vision") return TokenRole::vision;
  if (name == "text") return TokenRole::text;
  if (name == "special") return TokenRole::special;
  throw HsdError(Errc::manifest_invalid, "unknown token role '" + name + "'");
}

Matrix HiddenStateDump::layer_matrix(std::size_t layer) const {
  if (layer >= layers.size()) {
    throw HsdError(Errc::layer_out_of_range, "layer " + std::to_string(layer) + " of " +
                                                 std::to_string(layers.size()));
  }
  Matrix m(n_tokens, dim);
  const auto& src = layers[layer];
  auto dst = m.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<double>(src[i]);
  return m;
}

void HiddenStateDump::validate() const {
  if (n_layers == 0) throw HsdError(Errc::zero_layers, "dump has no layers");
  if (n_tokens == 0) throw HsdError(Errc::zero_tokens, "dump has no tokens");
  if (dim == 0) throw HsdError(Errc::zero_dim, "dump has zero embedding dimension");
  if (layers.size() != n_layers) {
    throw HsdError(Errc::shape_mismatch, "header declares " + std::to_string(n_layers) +
                                             " layers, found " + std::to_string(layers.size()));
  }
  const std::size_t expect = static_cast<std::size_t>(n_tokens) * dim;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].size() != expect) {
      throw HsdError(Errc::shape_mismatch, "layer " + std::to_string(l) + " has " +
                                               std::to_string(layers[l].size()) +
                                               " values, expected " + std::to_string(expect));
    }
    for (std::size_t i = 0; i < expect; ++i) {
      if (!std::isfinite(layers[l][i])) {
        throw HsdError(Errc::non_finite, "non-finite value at layer " + std::to_string(l) +
                                             " row " + std::to_string(i / dim) + " column " +
                                             std::to_string(i % dim));
      }
    }
  }
}

HiddenStateDump make_dump(const std::vector<Matrix>& layers, bool post_layernorm_final) {
  HiddenStateDump dump;
  dump.n_layers = static_cast<std::uint32_t>(layers.size());
  if (!layers.empty()) {
    dump.n_tokens = static_cast<std::uint32_t>(layers.front().rows());
    dump.dim = static_cast<std::uint32_t>(layers.front().cols());
  }
  dump.post_layernorm_final = post_layernorm_final;
  for (const auto& m : layers) {
    if (m.rows() != dump.n_tokens || m.cols() != dump.dim)
      throw HsdError(Errc::shape_mismatch, "layers differ in shape");
    std::vector<float> block(m.data().size());
    for (std::size_t i = 0; i < block.size(); ++i) block[i] = static_cast<float>(m.data()[i]);
    dump.layers.push_back(std::move(block));
  }
  return dump;
}

std::size_t TokenRoleMap::count(TokenRole role) const {
  return static_cast<std::size_t>(std::count(roles.begin(), roles.end(), role));
}

std::vector<std::size_t> TokenRoleMap::indices(TokenRole role) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < roles.size(); ++i)
    if (roles[i] == role) out.push_back(i);
  return out;
}

std::filesystem::path manifest_path(const std::filesystem::path& dump_path) {
  auto p = dump_path;
  p.replace_extension(".manifest");
  return p;
}

void write_manifest(const TokenRoleMap& roles, const std::filesystem::path& manifest_file) {
  nlohmann::json j;
  j["format"] = "tokenlens-manifest";
  j["version"] = 1;
  j["prompt_id"] = roles.prompt_id;
  j["image_id"] = roles.image_id;
  j["model_tag"] = roles.model_tag;
  auto arr = nlohmann::json::array();
  for (auto r : roles.roles) arr.push_back(to_string(r));
  j["roles"] = std::move(arr);
  std::ofstream out(manifest_file, std::ios::binary | std::ios::trunc);
  if (!out) throw HsdError(Errc::io, "cannot open " + manifest_file.string() + " for writing");
  out << j.dump() << '\n';
  if (!out) throw HsdError(Errc::io, "write failed for " + manifest_file.string());
}

TokenRoleMap read_manifest(const std::filesystem::path& manifest_file) {
  std::ifstream in(manifest_file, std::ios::binary);
  if (!in) throw HsdError(Errc::manifest_missing, "no manifest at " + manifest_file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw HsdError(Errc::manifest_invalid, manifest_file.string() + ": " + e.what());
  }
  TokenRoleMap roles;
  try {
    if (j.value("format", "") != "tokenlens-manifest")
      throw HsdError(Errc::manifest_invalid, manifest_file.string() + ": wrong format tag");
    roles.prompt_id = j.at("prompt_id").get<std::string>();
    roles.image_id = j.at("image_id").get<std::string>();
    roles.model_tag = j.at("model_tag").get<std::string>();
    for (const auto& r : j.at("roles")) roles.roles.push_back(parse_role(r.get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw HsdError(Errc::manifest_invalid, manifest_file.string() + ": " + e.what());
  }
  return roles;
}

void write_dump(const HiddenStateDump& dump, const TokenRoleMap& roles,
                const std::filesystem::path& path) {
  dump.validate();
  check_roles(dump, roles);

  std::string header;
  header.append(kMagic, 4);
  put_u32(header, kVersion);
  put_u32(header, dump.n_layers);
  put_u32(header, dump.n_tokens);
  put_u32(header, dump.dim);
  put_u32(header, kDtypeFloat32);
  header.push_back(dump.post_layernorm_final ? '\x01' : '\x00');

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw HsdError(Errc::io, "cannot open " + path.string() + " for writing");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  std::string block;
  for (const auto& layer : dump.layers) {
    block.clear();
    block.reserve(layer.size() * 4);
    for (float f : layer) put_u32(block, std::bit_cast<std::uint32_t>(f));
    out.write(block.data(), static_cast<std::streamsize>(block.size()));
  }
  out.close();
  if (!out) throw HsdError(Errc::io, "write failed for " + path.string());
  write_manifest(roles, manifest_path(path));
}

LoadedDump read_dump(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw HsdError(Errc::file_missing, "no such dump: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw HsdError(Errc::io, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 4 || !std::equal(bytes.begin(), bytes.begin() + 4, kMagic))
    throw HsdError(Errc::bad_magic, path.string() + " does not start with \"HSD1\"");
  if (bytes.size() < kHeaderBytes) {
    throw HsdError(Errc::truncated_header, path.string() + ": header needs " +
                                               std::to_string(kHeaderBytes) + " bytes, file has " +
                                               std::to_string(bytes.size()));
  }
  const unsigned char* p = bytes.data();
  const std::uint32_t version = get_u32(p + 4);
  if (version != kVersion)
    throw HsdError(Errc::unsupported_version, "version " + std::to_string(version));

  LoadedDump out;
  auto& dump = out.dump;
  dump.n_layers = get_u32(p + 8);
  dump.n_tokens = get_u32(p + 12);
  dump.dim = get_u32(p + 16);
  const std::uint32_t dtype = get_u32(p + 20);
  const unsigned char flags = p[24];
  if (dump.n_layers == 0) throw HsdError(Errc::zero_layers, path.string() + ": n_layers is 0");
  if (dump.n_tokens == 0) throw HsdError(Errc::zero_tokens, path.string() + ": n_tokens is 0");
  if (dump.dim == 0) throw HsdError(Errc::zero_dim, path.string() + ": dim is 0");
  if (dtype != kDtypeFloat32)
    throw HsdError(Errc::unsupported_dtype, "dtype code " + std::to_string(dtype));
  if (flags > 1) throw HsdError(Errc::bad_flags, "flag byte " + std::to_string(flags));
  dump.post_layernorm_final = flags == 1;

  const std::uint64_t per_layer = static_cast<std::uint64_t>(dump.n_tokens) * dump.dim;
  const std::uint64_t payload = per_layer * dump.n_layers * 4;
  if (payload > kMaxPayloadBytes)
    throw HsdError(Errc::truncated_payload, "declared payload of " + std::to_string(payload) +
                                                " bytes exceeds limit");
  const std::uint64_t expected = kHeaderBytes + payload;
  if (bytes.size() < expected) {
    throw HsdError(Errc::truncated_payload, path.string() + ": expected " +
                                                std::to_string(expected) + " bytes, got " +
                                                std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    throw HsdError(Errc::trailing_bytes, path.string() + ": expected " +
                                             std::to_string(expected) + " bytes, got " +
                                             std::to_string(bytes.size()));
  }
  const unsigned char* cursor = p + kHeaderBytes;
  dump.layers.resize(dump.n_layers);
  for (auto& layer : dump.layers) {
    layer.resize(per_layer);
    for (auto& f : layer) {
      f = std::bit_cast<float>(get_u32(cursor));
      cursor += 4;
    }
  }
  dump.validate();

  out.roles = read_manifest(manifest_path(path));
  check_roles(dump, out.roles);
  return out;
}

ModalSlices slice_modalities(const HiddenStateDump& dump, const TokenRoleMap& roles,
                             std::size_t layer) {
  check_roles(dump, roles);
  ModalSlices s;
  s.multimodal = dump.layer_matrix(layer);
  s.vision_rows = roles.indices(TokenRole::vision);
  s.text_rows = roles.indices(TokenRole::text);
  s.vision = s.multimodal.select_rows(s.vision_rows);
  s.text = s.multimodal.select_rows(s.text_rows);
  return s;
}

}  // namespace tokenlens::hsd

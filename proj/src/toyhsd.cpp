#include "tokenlens/toyhsd.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "tokenlens/error.hpp"
#include "tokenlens/parallel.hpp"
#include "tokenlens/random.hpp"
#include "tokenlens/synthgen.hpp"

namespace tokenlens::toyhsd {
namespace {

[[noreturn]] void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, "toyhsd", msg);
}

// FNV-1a: a stable string hash for seeding (std::hash is not portable).
std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& image_id, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(fnv1a(image_id)),
                    static_cast<std::uint32_t>(fnv1a(image_id) >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::mt19937_64 rng(seq);
  return rng();
}

}  // namespace

void ToyConfig::validate() const {
  if (n_layers == 0 || n_vision == 0 || n_text == 0 || dim == 0)
    fail(ErrorKind::invalid_argument, "layers, vision tokens, text tokens and dim must be positive");
  if (!(tau_base > 0) || tau_per_object < 0 || !(text_tau > 0))
    fail(ErrorKind::invalid_argument, "decay lengths must be positive");
  if (!(jitter >= 0 && jitter < 1)) fail(ErrorKind::invalid_argument, "jitter must lie in [0, 1)");
  if (layer_growth < 0) fail(ErrorKind::invalid_argument, "layer growth must be non-negative");
}

nlohmann::json to_json(const ToyConfig& c) {
  return {{"n_layers", c.n_layers},   {"n_special", c.n_special},
          {"n_vision", c.n_vision},   {"n_text", c.n_text},
          {"dim", c.dim},             {"seed", c.seed},
          {"tau_base", c.tau_base},   {"tau_per_object", c.tau_per_object},
          {"jitter", c.jitter},       {"layer_growth", c.layer_growth},
          {"text_tau", c.text_tau}};
}

ToyConfig toy_config_from_json(const nlohmann::json& j) {
  try {
    ToyConfig c;
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_special = j.value("n_special", c.n_special);
    c.n_vision = j.value("n_vision", c.n_vision);
    c.n_text = j.value("n_text", c.n_text);
    c.dim = j.value("dim", c.dim);
    c.seed = j.value("seed", c.seed);
    c.tau_base = j.value("tau_base", c.tau_base);
    c.tau_per_object = j.value("tau_per_object", c.tau_per_object);
    c.jitter = j.value("jitter", c.jitter);
    c.layer_growth = j.value("layer_growth", c.layer_growth);
    c.text_tau = j.value("text_tau", c.text_tau);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("toy config: ") + e.what());
  }
}

Matrix random_orthonormal(std::size_t m, std::size_t r, std::uint64_t seed) {
  if (r > m) fail(ErrorKind::invalid_argument, "cannot fit more orthonormal columns than rows");
  std::mt19937_64 rng(seed);
  Matrix q(m, r);
  std::vector<double> v(m);
  for (std::size_t c = 0; c < r; ++c) {
    double n = 0.0;
    do {
      for (auto& x : v) x = random::normal(rng);
      // Two Gram-Schmidt passes keep the columns orthogonal to machine precision.
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t p = 0; p < c; ++p) {
          double d = 0.0;
          for (std::size_t i = 0; i < m; ++i) d += q(i, p) * v[i];
          for (std::size_t i = 0; i < m; ++i) v[i] -= d * q(i, p);
        }
      }
      n = norm2(v);
    } while (n < 1e-8);
    for (std::size_t i = 0; i < m; ++i) q(i, c) = v[i] / n;
  }
  return q;
}

Matrix with_spectrum(std::size_t rows, std::size_t cols, const std::vector<double>& sigma,
                     std::uint64_t seed) {
  const std::size_t r = sigma.size();
  const Matrix u = random_orthonormal(rows, r, seed);
  const Matrix v = random_orthonormal(cols, r, seed ^ 0x5bd1e995ULL);
  Matrix us = u;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < r; ++j) us(i, j) *= sigma[j];
  return us * v.transposed();
}

std::vector<double> decaying_spectrum(std::size_t r, double tau) {
  std::vector<double> s(r);
  for (std::size_t j = 0; j < r; ++j) s[j] = std::exp(-static_cast<double>(j) / tau);
  return s;
}

ToyDump fabricate(const ToyConfig& cfg, const std::string& image_id, int object_count,
                  const std::string& prompt_id) {
  cfg.validate();
  std::mt19937_64 rng(derive_seed(cfg.seed, image_id, 0));
  const double jitter = random::uniform(rng, 1.0 - cfg.jitter, 1.0 + cfg.jitter);
  const double tau = (cfg.tau_base + cfg.tau_per_object * object_count) * jitter;
  const std::size_t n_tokens = cfg.n_special + cfg.n_vision + cfg.n_text;
  const std::size_t r_vision = std::min(cfg.n_vision, cfg.dim);
  const std::size_t r_text = std::min(cfg.n_text, cfg.dim);

  std::vector<Matrix> layers;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const double growth =
        cfg.n_layers > 1 ? 1.0 + cfg.layer_growth * static_cast<double>(l) / static_cast<double>(cfg.n_layers - 1)
                         : 1.0;
    const Matrix vision =
        with_spectrum(cfg.n_vision, cfg.dim, decaying_spectrum(r_vision, tau * growth), derive_seed(cfg.seed, image_id, 2 * l + 1));
    const Matrix text = with_spectrum(cfg.n_text, cfg.dim, decaying_spectrum(r_text, cfg.text_tau),
                                      derive_seed(cfg.seed, image_id, 2 * l + 2));
    Matrix full(n_tokens, cfg.dim);
    for (std::size_t i = 0; i < cfg.n_special; ++i)
      for (std::size_t c = 0; c < cfg.dim; ++c) full(i, c) = random::normal(rng) * 0.1;
    for (std::size_t i = 0; i < cfg.n_vision; ++i)
      for (std::size_t c = 0; c < cfg.dim; ++c) full(cfg.n_special + i, c) = vision(i, c);
    for (std::size_t i = 0; i < cfg.n_text; ++i)
      for (std::size_t c = 0; c < cfg.dim; ++c) full(cfg.n_special + cfg.n_vision + i, c) = text(i, c);
    layers.push_back(std::move(full));
  }

  ToyDump out;
  out.dump = hsd::make_dump(layers, true);
  out.roles.roles.assign(cfg.n_special, hsd::TokenRole::special);
  out.roles.roles.insert(out.roles.roles.end(), cfg.n_vision, hsd::TokenRole::vision);
  out.roles.roles.insert(out.roles.roles.end(), cfg.n_text, hsd::TokenRole::text);
  out.roles.image_id = image_id;
  out.roles.prompt_id = prompt_id;
  out.roles.model_tag = "toy-spectral";
  return out;
}

std::vector<std::filesystem::path> fabricate_dataset(const ToyConfig& cfg,
                                                     const std::filesystem::path& dataset_dir,
                                                     const std::filesystem::path& out_dir,
                                                     std::size_t jobs) {
  const auto index = synthgen::read_index(dataset_dir / "index.csv");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> paths(index.entries.size());
  parallel_for(index.entries.size(), jobs, [&](std::size_t i) {
    const auto& e = index.entries[i];
    const auto toy = fabricate(cfg, e.image_id, e.object_count);
    paths[i] = out_dir / (e.image_id + ".hsd");
    hsd::write_dump(toy.dump, toy.roles, paths[i]);
  });
  return paths;
}

}  // namespace tokenlens::toyhsd

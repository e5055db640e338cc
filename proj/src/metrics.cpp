#include "tokenlens/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tokenlens/error.hpp"
#include "tokenlens/svd.hpp"

namespace tokenlens::metrics {
namespace {

[[noreturn]] void degenerate(const std::string& msg) {
  throw Error(ErrorKind::degenerate, "metrics", msg);
}

double sum(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

double gini(std::span<const double> norms) {
  const std::size_t k = norms.size();
  if (k < 2) degenerate("Gini coefficient undefined for fewer than two tokens");
  std::vector<double> sorted(norms.begin(), norms.end());
  std::sort(sorted.begin(), sorted.end());
  const double total = sum(sorted);
  if (total <= 0.0) degenerate("all token norms are zero");
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double rank = static_cast<double>(i + 1);
    acc += (2.0 * rank - static_cast<double>(k) - 1.0) * sorted[i];
  }
  return acc / (static_cast<double>(k) * total);
}

double normalized_entropy(std::span<const double> norms) {
  const std::size_t k = norms.size();
  if (k < 2) degenerate("normalized entropy undefined for fewer than two tokens");
  const double total = sum(norms);
  if (total <= 0.0) degenerate("all token norms are zero");
  double h = 0.0;
  for (double n : norms) {
    const double p = n / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return h / std::log(static_cast<double>(k));
}

double coefficient_of_variation(std::span<const double> norms) {
  const std::size_t k = norms.size();
  if (k < 2) degenerate("coefficient of variation undefined for fewer than two tokens");
  const double mean = sum(norms) / static_cast<double>(k);
  if (mean <= 0.0) degenerate("all token norms are zero");
  double ss = 0.0;
  for (double n : norms) ss += (n - mean) * (n - mean);
  return std::sqrt(ss / static_cast<double>(k)) / mean;
}

NormProfile norm_profile_from_norms(std::vector<double> norms) {
  NormProfile p;
  p.gini = gini(norms);
  p.normalized_entropy = normalized_entropy(norms);
  p.cv = coefficient_of_variation(norms);
  p.token_norms = std::move(norms);
  return p;
}

RankProfile rank_profile_from_singular_values(std::vector<double> sigma) {
  std::sort(sigma.begin(), sigma.end(), std::greater<>());
  if (sigma.empty() || !(sigma.front() > 0.0)) degenerate("zero matrix has no spectrum");
  const double cutoff = kRankCutoff * sigma.front();
  std::erase_if(sigma, [cutoff](double s) { return s < cutoff; });

  double s1 = 0.0;
  double s2 = 0.0;
  for (double s : sigma) {
    s1 += s;
    s2 += s * s;
  }
  RankProfile p;
  p.stable_rank = s2 / (sigma.front() * sigma.front());
  p.participation_ratio = s1 * s1 / s2;
  double h = 0.0;
  for (double s : sigma) {
    const double q = s / s1;
    if (q > 0.0) h -= q * std::log(q);
  }
  p.exponential_entropy = std::exp(h);
  p.singular_values = std::move(sigma);
  return p;
}

NormProfile token_norm_metrics(const Matrix& layer) {
  std::vector<double> norms(layer.rows());
  for (std::size_t r = 0; r < layer.rows(); ++r) norms[r] = norm2(layer.row(r));
  return norm_profile_from_norms(std::move(norms));
}

RankProfile spectral_metrics(const Matrix& layer) {
  if (layer.empty() || frobenius_norm(layer) == 0.0) degenerate("zero matrix has no spectrum");
  SvdOptions opts;
  opts.canonicalize = false;
  return rank_profile_from_singular_values(svd(layer, opts).singular_values);
}

const char* to_string(ModalityFilter filter) {
  switch (filter) {
    case ModalityFilter::vision: return "vision";
    case ModalityFilter::text: return "text";
    case ModalityFilter::all: return "all";
  }
  return "all";
}

ModalityFilter parse_modality_filter(const std::string& name) {
  if (name == "vision") return ModalityFilter::vision;
  if (name == "text") return ModalityFilter::text;
  if (name == "all") return ModalityFilter::all;
  throw Error(ErrorKind::invalid_argument, "metrics", "unknown modality filter '" + name + "'");
}

std::vector<LayerProfile> profile_dump(const hsd::HiddenStateDump& dump,
                                       const hsd::TokenRoleMap& roles, ModalityFilter filter) {
  std::vector<std::size_t> rows;
  switch (filter) {
    case ModalityFilter::vision: rows = roles.indices(hsd::TokenRole::vision); break;
    case ModalityFilter::text: rows = roles.indices(hsd::TokenRole::text); break;
    case ModalityFilter::all:
      rows.resize(roles.roles.size());
      std::iota(rows.begin(), rows.end(), 0);
      break;
  }
  if (rows.empty()) {
    throw Error(ErrorKind::contract, "metrics",
                std::string("empty slice: dump has no ") + to_string(filter) + " tokens");
  }
  if (roles.roles.size() != dump.n_tokens)
    throw Error(ErrorKind::contract, "metrics", "role map length differs from token count");

  std::vector<LayerProfile> out;
  out.reserve(dump.n_layers);
  for (std::size_t l = 0; l < dump.n_layers; ++l) {
    const Matrix slice = dump.layer_matrix(l).select_rows(rows);
    out.push_back({l, token_norm_metrics(slice), spectral_metrics(slice)});
  }
  return out;
}

std::vector<double> metric_values(const LayerProfile& p) {
  return {p.norms.gini,        p.norms.normalized_entropy,  p.norms.cv,
          p.ranks.stable_rank, p.ranks.participation_ratio, p.ranks.exponential_entropy};
}

}  // namespace tokenlens::metrics

#include "tokenlens/svdalign.hpp"

#include <algorithm>
#include <cmath>

#include "tokenlens/error.hpp"
#include "tokenlens/metrics.hpp"

namespace tokenlens::svdalign {
namespace {

[[noreturn]] void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, "svdalign", msg);
}

Svd nonzero_svd(const Matrix& m, const char* what) {
  if (m.rows() == 0) fail(ErrorKind::contract, std::string("empty modality: no ") + what + " tokens");
  if (frobenius_norm(m) == 0.0) fail(ErrorKind::degenerate, std::string(what) + " matrix is zero");
  return svd(m);
}

std::vector<double> first_column(const Matrix& m) { return m.col(0); }

std::vector<double> restrict_rows(std::span<const double> v, std::span<const std::size_t> rows) {
  std::vector<double> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = v[rows[i]];
  return out;
}

std::optional<double> consistency_from(const std::vector<double>& u_c,
                                       std::span<const std::size_t> rows, const Svd& unimodal) {
  const auto restricted = restrict_rows(u_c, rows);
  const double n = norm2(restricted);
  if (n < kDegenerateNorm) return std::nullopt;
  return dot(restricted, first_column(unimodal.u)) / n;
}

double fsa_from(const Svd& unimodal, const Svd& multi) {
  const auto vm = first_column(unimodal.v);
  const auto vc = first_column(multi.v);
  return dot(vm, vc) / (norm2(vm) * norm2(vc));
}

SubspaceAlignment subspace_from(const std::vector<double>& u_c,
                                std::span<const std::size_t> vision_rows,
                                std::span<const std::size_t> text_rows) {
  if (vision_rows.empty() || text_rows.empty())
    fail(ErrorKind::contract, "empty modality in subspace alignment");
  SubspaceAlignment s;
  const auto uv = restrict_rows(u_c, vision_rows);
  const auto ut = restrict_rows(u_c, text_rows);
  s.e_vision = dot(uv, uv) / static_cast<double>(vision_rows.size());
  s.e_text = dot(ut, ut) / static_cast<double>(text_rows.size());
  const double total = s.e_vision + s.e_text;
  if (total > 0.0) {
    s.a_vision = s.e_vision / total;
    s.a_text = 1.0 - *s.a_vision;
  }
  return s;
}

Reconstruction reconstruction_from(const Matrix& q, const Svd& unimodal, std::size_t k) {
  if (k == 0) fail(ErrorKind::invalid_argument, "reconstruction rank k must be >= 1");
  if (q.cols() != unimodal.v.rows())
    fail(ErrorKind::contract, "multimodal and unimodal matrices differ in dimension");
  Reconstruction r;
  const std::size_t available = unimodal.singular_values.size();
  r.clamped = k > available;
  r.k_used = std::min(k, available);

  // Q_hat = (Q V_k) V_k^T
  const std::size_t n = q.rows();
  const std::size_t d = q.cols();
  Matrix coeff(n, r.k_used);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < r.k_used; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += q(i, c) * unimodal.v(c, j);
      coeff(i, j) = s;
    }
  double mean = 0.0;
  for (double x : q.data()) mean += x;
  mean /= static_cast<double>(q.data().size());
  double var = 0.0;
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      double approx = 0.0;
      for (std::size_t j = 0; j < r.k_used; ++j) approx += coeff(i, j) * unimodal.v(c, j);
      const double resid = q(i, c) - approx;
      sse += resid * resid;
      var += (q(i, c) - mean) * (q(i, c) - mean);
    }
  }
  if (var == 0.0) fail(ErrorKind::degenerate, "multimodal matrix has zero variance");
  // mean/var share the element count, so it cancels.
  r.r2 = 1.0 - sse / var;
  r.concentration = concentration(unimodal.singular_values, r.k_used);
  return r;
}

std::size_t pick_rank(const Svd& unimodal, const AlignOptions& options) {
  if (options.rank_mode == RankMode::fixed) return options.k;
  const auto profile = metrics::rank_profile_from_singular_values(unimodal.singular_values);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(profile.stable_rank)));
}

}  // namespace

double concentration(std::span<const double> sigma, std::size_t k) {
  double top = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    const double s2 = sigma[i] * sigma[i];
    total += s2;
    if (i < k) top += s2;
  }
  if (total == 0.0) fail(ErrorKind::degenerate, "concentration of an all-zero spectrum");
  return top / total;
}

Consistency token_projection_consistency(const Matrix& multi,
                                         std::span<const std::size_t> vision_rows,
                                         std::span<const std::size_t> text_rows) {
  const Svd mc = nonzero_svd(multi, "multimodal");
  const Svd mv = nonzero_svd(multi.select_rows(vision_rows), "vision");
  const Svd mt = nonzero_svd(multi.select_rows(text_rows), "text");
  const auto u_c = first_column(mc.u);
  return {consistency_from(u_c, vision_rows, mv), consistency_from(u_c, text_rows, mt)};
}

double feature_space_alignment(const Matrix& unimodal, const Matrix& multi) {
  if (unimodal.cols() != multi.cols()) {
    fail(ErrorKind::contract, "dimension mismatch: " + std::to_string(unimodal.cols()) + " vs " +
                                  std::to_string(multi.cols()));
  }
  return fsa_from(nonzero_svd(unimodal, "unimodal"), nonzero_svd(multi, "multimodal"));
}

SubspaceAlignment subspace_alignment(const Matrix& multi,
                                     std::span<const std::size_t> vision_rows,
                                     std::span<const std::size_t> text_rows) {
  const Svd mc = nonzero_svd(multi, "multimodal");
  auto s = subspace_from(first_column(mc.u), vision_rows, text_rows);
  if (!s.a_vision) fail(ErrorKind::degenerate, "multimodal primary component has no vision/text energy");
  return s;
}

Reconstruction reconstruction_alignment(const Matrix& multi, const Matrix& unimodal,
                                        std::size_t k) {
  return reconstruction_from(multi, nonzero_svd(unimodal, "unimodal"), k);
}

SvdAlignmentReport align_layer(const hsd::ModalSlices& s, std::size_t layer,
                               const AlignOptions& options) {
  const ModalSvd m{nonzero_svd(s.vision, "vision"), nonzero_svd(s.text, "text"),
                   nonzero_svd(s.multimodal, "multimodal")};
  const auto u_c = first_column(m.multimodal.u);

  SvdAlignmentReport r;
  r.layer = layer;
  r.consist_vision = consistency_from(u_c, s.vision_rows, m.vision);
  r.consist_text = consistency_from(u_c, s.text_rows, m.text);
  if (!r.consist_vision) r.warnings.push_back("consist_vision degenerate");
  if (!r.consist_text) r.warnings.push_back("consist_text degenerate");
  r.fsa_vision = fsa_from(m.vision, m.multimodal);
  r.fsa_text = fsa_from(m.text, m.multimodal);

  const auto sub = subspace_from(u_c, s.vision_rows, s.text_rows);
  r.e_vision = sub.e_vision;
  r.e_text = sub.e_text;
  r.a_vision = sub.a_vision;
  r.a_text = sub.a_text;
  if (!r.a_vision) r.warnings.push_back("subspace alignment degenerate");

  const auto rv = reconstruction_from(s.multimodal, m.vision, pick_rank(m.vision, options));
  const auto rt = reconstruction_from(s.multimodal, m.text, pick_rank(m.text, options));
  r.r2_vision = rv.r2;
  r.r2_text = rt.r2;
  r.conc_vision = rv.concentration;
  r.conc_text = rt.concentration;
  r.k_vision = rv.k_used;
  r.k_text = rt.k_used;
  if (rv.clamped) r.warnings.push_back("k clamped to " + std::to_string(rv.k_used) + " for vision");
  if (rt.clamped) r.warnings.push_back("k clamped to " + std::to_string(rt.k_used) + " for text");
  r.conc_multi = concentration(m.multimodal.singular_values,
                               options.rank_mode == RankMode::fixed ? options.k
                                                                    : pick_rank(m.multimodal, options));
  return r;
}

std::vector<SvdAlignmentReport> align_dump(const hsd::HiddenStateDump& dump,
                                           const hsd::TokenRoleMap& roles,
                                           const AlignOptions& options) {
  if (roles.count(hsd::TokenRole::vision) == 0)
    fail(ErrorKind::contract, "empty modality: dump has no vision tokens");
  if (roles.count(hsd::TokenRole::text) == 0)
    fail(ErrorKind::contract, "empty modality: dump has no text tokens");
  std::vector<SvdAlignmentReport> out;
  out.reserve(dump.n_layers);
  for (std::size_t l = 0; l < dump.n_layers; ++l)
    out.push_back(align_layer(hsd::slice_modalities(dump, roles, l), l, options));
  return out;
}

std::vector<std::pair<std::string, std::optional<double>>> report_fields(
    const SvdAlignmentReport& r) {
  return {
      {"consist_vision", r.consist_vision},
      {"consist_text", r.consist_text},
      {"fsa_vision", r.fsa_vision},
      {"fsa_text", r.fsa_text},
      {"e_vision", r.e_vision},
      {"e_text", r.e_text},
      {"a_vision", r.a_vision},
      {"a_text", r.a_text},
      {"r2_vision", r.r2_vision},
      {"r2_text", r.r2_text},
      {"conc_vision", r.conc_vision},
      {"conc_text", r.conc_text},
      {"conc_multi", r.conc_multi},
      {"k_vision", static_cast<double>(r.k_vision)},
      {"k_text", static_cast<double>(r.k_text)},
  };
}

}  // namespace tokenlens::svdalign

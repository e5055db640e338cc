#include "tokenlens/svd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>

#include "tokenlens/error.hpp"

namespace tokenlens {
namespace {

// Column-major scratch matrix; Jacobi rotations and Householder reflections
// both sweep whole columns.
struct ColMajor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  ColMajor(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double* col(std::size_t c) { return data.data() + c * rows; }
  const double* col(std::size_t c) const { return data.data() + c * rows; }
  double& at(std::size_t r, std::size_t c) { return data[c * rows + r]; }
};

double col_dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// In-place Householder QR of a (m x n, m >= n). Returns thin Q (m x n); the
// upper triangle of `a` becomes R.
ColMajor householder_qr(ColMajor& a) {
  const std::size_t m = a.rows;
  const std::size_t n = a.cols;
  std::vector<std::vector<double>> reflectors(n);
  for (std::size_t k = 0; k < n; ++k) {
    double* x = a.col(k) + k;
    const std::size_t len = m - k;
    double norm = std::sqrt(col_dot(x, x, len));
    std::vector<double> v(x, x + len);
    if (norm == 0.0) continue;
    const double alpha = x[0] >= 0.0 ? -norm : norm;
    v[0] -= alpha;
    const double vnorm = std::sqrt(col_dot(v.data(), v.data(), len));
    if (vnorm == 0.0) continue;
    for (double& e : v) e /= vnorm;
    for (std::size_t j = k; j < n; ++j) {
      double* c = a.col(j) + k;
      const double s = 2.0 * col_dot(v.data(), c, len);
      for (std::size_t i = 0; i < len; ++i) c[i] -= s * v[i];
    }
    for (std::size_t i = 1; i < len; ++i) x[i] = 0.0;
    reflectors[k] = std::move(v);
  }
  ColMajor q(m, n);
  for (std::size_t j = 0; j < n; ++j) q.at(j, j) = 1.0;
  for (std::size_t kk = n; kk-- > 0;) {
    const auto& v = reflectors[kk];
    if (v.empty()) continue;
    const std::size_t len = m - kk;
    for (std::size_t j = 0; j < n; ++j) {
      double* c = q.col(j) + kk;
      const double s = 2.0 * col_dot(v.data(), c, len);
      for (std::size_t i = 0; i < len; ++i) c[i] -= s * v[i];
    }
  }
  return q;
}

// Replaces columns flagged in `fill` with unit vectors orthogonal to all
// other columns.
void complete_basis(ColMajor& u, const std::vector<bool>& fill) {
  std::size_t probe = 0;
  for (std::size_t j = 0; j < u.cols; ++j) {
    if (!fill[j]) continue;
    for (; probe < u.rows; ++probe) {
      std::vector<double> cand(u.rows, 0.0);
      cand[probe] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t k = 0; k < u.cols; ++k) {
          if (k == j || (fill[k] && k > j)) continue;
          const double s = col_dot(cand.data(), u.col(k), u.rows);
          for (std::size_t i = 0; i < u.rows; ++i) cand[i] -= s * u.col(k)[i];
        }
      }
      const double nrm = std::sqrt(col_dot(cand.data(), cand.data(), u.rows));
      if (nrm > 0.5) {
        for (std::size_t i = 0; i < u.rows; ++i) u.at(i, j) = cand[i] / nrm;
        ++probe;
        break;
      }
    }
  }
}

// Assumes a.rows() >= a.cols().
Svd svd_tall(const Matrix& a, const SvdOptions& options) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();

  ColMajor work(m, n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) work.at(r, c) = a(r, c);

  std::optional<ColMajor> q;
  ColMajor w(n, n);
  if (m > n) {
    q = householder_qr(work);
    for (std::size_t c = 0; c < n; ++c)
      for (std::size_t r = 0; r <= c; ++r) w.at(r, c) = work.at(r, c);
  } else {
    w = work;
  }

  ColMajor v(n, n);
  for (std::size_t j = 0; j < n; ++j) v.at(j, j) = 1.0;

  const double eps = std::numeric_limits<double>::epsilon();
  const std::size_t len = w.rows;
  // Columns whose norm falls to rounding level of the whole matrix carry no
  // signal; rotating them against each other never settles.
  double frob2 = 0.0;
  for (std::size_t j = 0; j < n; ++j) frob2 += col_dot(w.col(j), w.col(j), len);
  const double noise_norm = eps * static_cast<double>(n) * std::sqrt(frob2);
  const double noise2 = noise_norm * noise_norm;
  std::size_t sweep = 0;
  bool converged = n < 2;
  while (!converged) {
    if (sweep == options.max_sweeps) {
      throw Error(ErrorKind::numerical, "svd",
                  "Jacobi rotations did not converge after " +
                      std::to_string(sweep) + " sweeps");
    }
    ++sweep;
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t qi = p + 1; qi < n; ++qi) {
        double* wp = w.col(p);
        double* wq = w.col(qi);
        const double alpha = col_dot(wp, wp, len);
        const double beta = col_dot(wq, wq, len);
        const double gamma = col_dot(wp, wq, len);
        if (alpha <= noise2 || beta <= noise2) continue;
        if (std::abs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < len; ++i) {
          const double x = wp[i];
          const double y = wq[i];
          wp[i] = c * x - s * y;
          wq[i] = s * x + c * y;
        }
        double* vp = v.col(p);
        double* vq = v.col(qi);
        for (std::size_t i = 0; i < n; ++i) {
          const double x = vp[i];
          const double y = vq[i];
          vp[i] = c * x - s * y;
          vq[i] = s * x + c * y;
        }
      }
    }
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = std::sqrt(col_dot(w.col(j), w.col(j), len));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return sigma[i] > sigma[j]; });

  const double sigma_max = n ? sigma[order[0]] : 0.0;
  const double tiny =
      std::max(sigma_max * eps * static_cast<double>(std::max(m, n)), noise_norm);
  ColMajor us(len, n);
  std::vector<bool> fill(n, false);
  Svd out;
  out.singular_values.resize(n);
  out.v = Matrix(n, n);
  for (std::size_t jj = 0; jj < n; ++jj) {
    const std::size_t j = order[jj];
    out.singular_values[jj] = sigma[j];
    if (sigma[j] <= tiny || sigma[j] == 0.0) {
      fill[jj] = true;
    } else {
      for (std::size_t i = 0; i < len; ++i) us.at(i, jj) = w.col(j)[i] / sigma[j];
    }
    for (std::size_t i = 0; i < n; ++i) out.v(i, jj) = v.col(j)[i];
  }
  complete_basis(us, fill);

  out.u = Matrix(m, n);
  if (q) {
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t k = 0; k < n; ++k) {
        const double qrk = q->at(r, k);
        if (qrk == 0.0) continue;
        for (std::size_t c = 0; c < n; ++c) out.u(r, c) += qrk * us.at(k, c);
      }
  } else {
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) out.u(r, c) = us.at(r, c);
  }
  out.sweeps = sweep;
  return out;
}

}  // namespace

Svd svd(const Matrix& a, const SvdOptions& options) {
  if (a.empty()) throw Error(ErrorKind::invalid_argument, "svd", "empty matrix");
  for (double x : a.data()) {
    if (!std::isfinite(x))
      throw Error(ErrorKind::numerical, "svd", "non-finite matrix entry");
  }
  Svd out;
  if (a.rows() >= a.cols()) {
    out = svd_tall(a, options);
  } else {
    out = svd_tall(a.transposed(), options);
    std::swap(out.u, out.v);
  }
  if (options.canonicalize) canonicalize_signs(out);
  return out;
}

void canonicalize_signs(Svd& d) {
  const std::size_t r = d.singular_values.size();
  for (std::size_t j = 0; j < r; ++j) {
    double peak = 0.0;
    for (std::size_t i = 0; i < d.u.rows(); ++i) peak = std::max(peak, std::abs(d.u(i, j)));
    if (peak == 0.0) continue;
    double lead = 0.0;
    for (std::size_t i = 0; i < d.u.rows(); ++i) {
      if (std::abs(d.u(i, j)) >= peak * (1.0 - 1e-8)) {
        lead = d.u(i, j);
        break;
      }
    }
    if (lead >= 0.0) continue;
    for (std::size_t i = 0; i < d.u.rows(); ++i) d.u(i, j) = -d.u(i, j);
    for (std::size_t i = 0; i < d.v.rows(); ++i) d.v(i, j) = -d.v(i, j);
  }
}

Matrix reconstruct(const Svd& d) {
  Matrix us = d.u;
  for (std::size_t i = 0; i < us.rows(); ++i)
    for (std::size_t j = 0; j < us.cols(); ++j) us(i, j) *= d.singular_values[j];
  return us * d.v.transposed();
}

}  // namespace tokenlens

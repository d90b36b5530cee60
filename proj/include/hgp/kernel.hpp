#pragma once

#include <cmath>
#include <sstream>

#include "hgp/common.hpp"

namespace hgp {

/// ARD-RBF hyperparameters over 2D-dimensional phase space, kept in log-space
/// so positivity is structural.
struct KernelHyper {
  Vec log_lengthscales;       // size 2D, one per phase-space axis
  double log_signal_variance = 0.0;

  KernelHyper() = default;
  KernelHyper(const Vec& lengthscales, double signal_variance)
      : log_lengthscales(lengthscales.array().log().matrix()),
        log_signal_variance(std::log(signal_variance)) {}

  static KernelHyper unit(int dims) {
    KernelHyper h;
    h.log_lengthscales = Vec::Zero(dims);
    h.log_signal_variance = 0.0;
    return h;
  }

  int dims() const { return static_cast<int>(log_lengthscales.size()); }
  Vec lengthscales() const { return log_lengthscales.array().exp().matrix(); }
  double signal_variance() const { return std::exp(log_signal_variance); }
};

namespace detail {
inline void check_dims(const PhaseState& x, const PhaseState& x2,
                       const KernelHyper& hyp) {
  require(x.size() == x2.size() && x.size() == hyp.log_lengthscales.size(),
          "kernel inputs and lengthscales must share the phase-space dimension");
}
}  // namespace detail

/// k_H(x, x') = sigma_f^2 exp(-1/2 sum_d (x_d - x'_d)^2 / l_d^2).
inline double kh(const PhaseState& x, const PhaseState& x2,
                 const KernelHyper& hyp) {
  detail::check_dims(x, x2, hyp);
  const Vec ls = hyp.lengthscales();
  const double r2 = ((x - x2).array() / ls.array()).square().sum();
  return hyp.signal_variance() * std::exp(-0.5 * r2);
}

/// cov[H(x), f(x')]: the derivative operator (d_p; -d_q) applied to the
/// second argument's coordinates, in closed form for the ARD-RBF kernel.
inline Vec khf(const PhaseState& x, const PhaseState& x2,
               const KernelHyper& hyp) {
  detail::check_dims(x, x2, hyp);
  const int dims = hyp.dims();
  const int d = dims / 2;
  const Vec ls = hyp.lengthscales();
  const double k = kh(x, x2, hyp);
  // grad of k wrt x': k * (x - x') / l^2
  const Vec g = (k * (x - x2).array() / ls.array().square()).matrix();
  Vec out(dims);
  out.head(d) = g.tail(d);   // +d/dp'
  out.tail(d) = -g.head(d);  // -d/dq'
  return out;
}

/// cov[f(x), f(x')]: second-derivative block of the joint GP, equal to
/// J (d^2 k / dx dx') J^T with J the Poisson tensor.
inline Mat kff(const PhaseState& x, const PhaseState& x2,
               const KernelHyper& hyp) {
  detail::check_dims(x, x2, hyp);
  const int dims = hyp.dims();
  const int d = dims / 2;
  const Vec ls = hyp.lengthscales();
  const double k = kh(x, x2, hyp);
  const Vec inv_l2 = ls.array().square().inverse().matrix();
  const Vec s = ((x - x2).array() * inv_l2.array()).matrix();
  // d^2 k / dx_e dx'_d = k (delta_ed / l_d^2 - s_e s_d)
  Mat hess = k * (Mat(inv_l2.asDiagonal()) - s * s.transpose());
  Mat out(dims, dims);
  out.topLeftCorner(d, d) = hess.bottomRightCorner(d, d);      //  d2/dp dp'
  out.topRightCorner(d, d) = -hess.bottomLeftCorner(d, d);     // -d2/dp dq'
  out.bottomLeftCorner(d, d) = -hess.topRightCorner(d, d);     // -d2/dq dp'
  out.bottomRightCorner(d, d) = hess.topLeftCorner(d, d);      //  d2/dq dq'
  return out;
}

/// Gram matrix of k_H over rows of X (each row one phase-space point).
inline Mat gram(const Mat& x, const KernelHyper& hyp) {
  require(x.cols() == hyp.log_lengthscales.size(),
          "gram: input columns must match lengthscale count");
  const int n = static_cast<int>(x.rows());
  const Vec inv_l2 = hyp.lengthscales().array().square().inverse().matrix();
  const double sf2 = hyp.signal_variance();
  Mat k(n, n);
  for (int i = 0; i < n; ++i) {
    k(i, i) = sf2;
    for (int j = 0; j < i; ++j) {
      const double r2 =
          ((x.row(i) - x.row(j)).transpose().array().square() * inv_l2.array())
              .sum();
      k(i, j) = k(j, i) = sf2 * std::exp(-0.5 * r2);
    }
  }
  return k;
}

/// Rectangular k_H(X1, X2) over rows.
inline Mat cross_gram(const Mat& x1, const Mat& x2, const KernelHyper& hyp) {
  const int n = static_cast<int>(x1.rows());
  const int m = static_cast<int>(x2.rows());
  Mat k(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      k(i, j) = kh(x1.row(i).transpose(), x2.row(j).transpose(), hyp);
  return k;
}

/// Lower Cholesky factor of k_H(X,X) + jitter*I. On factorization failure the
/// jitter is doubled, up to 3 retries (starting from 1e-6*sigma_f^2 when the
/// caller passed zero).
inline Mat gram_chol(const Mat& x, const KernelHyper& hyp, double jitter) {
  require(x.rows() >= 1, "gram_chol: need at least one point");
  require(jitter >= 0.0, "gram_chol: jitter must be nonnegative");
  const Mat k = gram(x, hyp);
  const int n = static_cast<int>(k.rows());
  double j = jitter;
  for (int attempt = 0; attempt < 4; ++attempt) {
    Eigen::LLT<Mat> llt(k + j * Mat::Identity(n, n));
    if (llt.info() == Eigen::Success) return llt.matrixL();
    j = (j == 0.0) ? 1e-6 * hyp.signal_variance() : 2.0 * j;
  }
  std::ostringstream msg;
  msg << "gram_chol: matrix of size " << n
      << " not positive definite after jitter " << j
      << " (signal variance " << hyp.signal_variance() << ")";
  throw FactorizationError(msg.str());
}

/// Frequencies and phases of the random cosine features: rows of alpha are
/// draws from the RBF spectral density N(0, diag(1/l^2)), beta ~ U[0, 2pi).
struct SpectralFrequencies {
  Mat alpha;  // S x 2D
  Vec beta;   // S
};

inline SpectralFrequencies sample_spectral(const KernelHyper& hyp, int s,
                                           Rng& rng) {
  require(s >= 1, "sample_spectral: need at least one basis function");
  const Vec inv_ls = hyp.lengthscales().array().inverse().matrix();
  SpectralFrequencies out;
  out.alpha = normal_mat(s, hyp.dims(), rng);
  out.alpha *= inv_ls.asDiagonal();
  out.beta = uniform_vec(s, 0.0, 2.0 * M_PI, rng);
  return out;
}

}  // namespace hgp

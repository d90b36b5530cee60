#pragma once

#include "hgp/ad.hpp"
#include "hgp/ad_kernel.hpp"
#include "hgp/common.hpp"
#include "hgp/kernel.hpp"

namespace hgp {

/// Inducing inputs Z with the whitened variational distribution over the
/// inducing energies: unwhitened (m, Q) = (L_K m~, L_K Q~ L_K^T).
struct InducingSet {
  Mat z;              // M x 2D
  Vec whitened_mean;  // M
  Mat whitened_chol;  // M x M lower, positive diagonal
};

/// Raw draws behind one function sample. Freezing these freezes the sample,
/// which is what the common-random-numbers gradient checks rely on.
struct PathNoise {
  Vec w_raw;      // S, standard normal
  Mat eps_alpha;  // S x 2D, standard normal
  Vec beta;       // S, uniform [0, 2pi)
  Vec eps_u;      // M, standard normal
};

inline PathNoise draw_path_noise(int s, int m, int dims, Rng& rng) {
  PathNoise n;
  n.w_raw = normal_vec(s, rng);
  n.eps_alpha = normal_mat(s, dims, rng);
  n.beta = uniform_vec(s, 0.0, 2.0 * M_PI, rng);
  n.eps_u = normal_vec(m, rng);
  return n;
}

/// One deterministic Hamiltonian function sample: cosine features plus a
/// kernel-basis correction anchored at the inducing inputs. The stored
/// weights absorb the sqrt(2 sf2 / S) feature scaling.
struct PathSample {
  Vec w;  // S effective weights
  SpectralFrequencies basis;
  Vec nu;      // M
  Vec u_draw;  // M
  KernelHyper hyp;
  Mat z;  // M x 2D
};

inline double path_jitter(const KernelHyper& hyp) {
  return 1e-6 * hyp.signal_variance();
}

/// Cosine features over rows of X, without the amplitude scaling.
inline Mat cosine_features(const Mat& x, const SpectralFrequencies& basis) {
  Mat theta = x * basis.alpha.transpose();  // N x S
  theta.rowwise() += basis.beta.transpose();
  return theta.array().cos().matrix();
}

/// Builds the sample deterministically from raw noise. nu solves
/// k(Z,Z) nu = u - Phi w through the cached Cholesky factor.
inline PathSample materialize_path(const InducingSet& ind,
                                   const KernelHyper& hyp,
                                   const PathNoise& noise) {
  const int s = static_cast<int>(noise.w_raw.size());
  const int m = static_cast<int>(ind.z.rows());
  require(noise.eps_u.size() == m, "materialize_path: eps_u size");
  PathSample p;
  p.hyp = hyp;
  p.z = ind.z;
  const Vec inv_ls = hyp.lengthscales().array().inverse().matrix();
  p.basis.alpha = noise.eps_alpha * inv_ls.asDiagonal();
  p.basis.beta = noise.beta;
  p.w = std::sqrt(2.0 * hyp.signal_variance() / std::max(s, 1)) * noise.w_raw;
  const Mat l_k = gram_chol(ind.z, hyp, path_jitter(hyp));
  p.u_draw =
      l_k * (ind.whitened_mean + ind.whitened_chol * noise.eps_u);
  Vec resid = p.u_draw;
  if (s > 0) resid -= cosine_features(ind.z, p.basis) * p.w;
  Vec tmp = l_k.triangularView<Eigen::Lower>().solve(resid);
  p.nu = l_k.transpose().triangularView<Eigen::Upper>().solve(tmp);
  return p;
}

inline PathSample draw_path(const InducingSet& ind, const KernelHyper& hyp,
                            int s, Rng& rng) {
  require(s >= 1, "draw_path: need at least one basis function");
  return materialize_path(
      ind, hyp, draw_path_noise(s, static_cast<int>(ind.z.rows()),
                                static_cast<int>(ind.z.cols()), rng));
}

/// Posterior-mean sample: no cosine part, u at the variational mean.
inline PathSample mean_path(const InducingSet& ind, const KernelHyper& hyp) {
  const int dims = static_cast<int>(ind.z.cols());
  PathSample p;
  p.hyp = hyp;
  p.z = ind.z;
  p.w = Vec::Zero(0);
  p.basis.alpha = Mat::Zero(0, dims);
  p.basis.beta = Vec::Zero(0);
  const Mat l_k = gram_chol(ind.z, hyp, path_jitter(hyp));
  p.u_draw = l_k * ind.whitened_mean;
  p.nu = l_k.transpose().triangularView<Eigen::Upper>().solve(
      Vec(ind.whitened_mean));
  return p;
}

inline double eval_h(const PathSample& p, const PhaseState& x) {
  require(x.size() == p.hyp.dims(), "eval_h: dimension mismatch");
  double h = 0.0;
  if (p.w.size() > 0)
    h += p.w.dot(((p.basis.alpha * x + p.basis.beta).array().cos()).matrix());
  const Vec inv_l2 =
      p.hyp.lengthscales().array().square().inverse().matrix();
  const double sf2 = p.hyp.signal_variance();
  for (int j = 0; j < p.z.rows(); ++j) {
    const double r2 = ((x - p.z.row(j).transpose()).array().square() *
                       inv_l2.array())
                          .sum();
    h += p.nu[j] * sf2 * std::exp(-0.5 * r2);
  }
  return h;
}

inline Vec grad_h(const PathSample& p, const PhaseState& x) {
  require(x.size() == p.hyp.dims(), "grad_h: dimension mismatch");
  Vec g = Vec::Zero(x.size());
  if (p.w.size() > 0) {
    const Vec theta = p.basis.alpha * x + p.basis.beta;
    g -= p.basis.alpha.transpose() *
         p.w.cwiseProduct(theta.array().sin().matrix());
  }
  const Vec inv_l2 =
      p.hyp.lengthscales().array().square().inverse().matrix();
  const double sf2 = p.hyp.signal_variance();
  for (int j = 0; j < p.z.rows(); ++j) {
    const Vec delta = x - p.z.row(j).transpose();
    const Vec s = delta.cwiseProduct(inv_l2);
    const double k = sf2 * std::exp(-0.5 * delta.dot(s));
    g -= p.nu[j] * k * s;
  }
  return g;
}

/// f = (dH/dp, -dH/dq): the Poisson tensor applied to the energy gradient.
inline Vec vector_field(const PathSample& p, const PhaseState& x) {
  const Vec g = grad_h(p, x);
  const int d = static_cast<int>(x.size()) / 2;
  Vec f(x.size());
  f.head(d) = g.tail(d);
  f.tail(d) = -g.head(d);
  return f;
}

// ---- tape-side path --------------------------------------------------------

/// The same sample materialized on a tape so bounds differentiate through it.
struct AdPath {
  ad::Var w;        // S, effective weights
  ad::Var alpha;    // S x 2D
  ad::Var beta;     // S (constant)
  ad::Var nu;       // M
  ad::Var z;        // M x 2D
  ad::Var log_ls;   // 2D
  ad::Var log_sf2;  // 1x1
};

/// Builds alpha = eps / l, w = sqrt(2 sf2/S) eps_w, u = L_K(m~ + L~ eps_u)
/// and nu = k(Z,Z)^{-1}(u - Phi w) in-graph, so gradients reach Z, the
/// whitened parameters and the kernel hyperparameters.
inline AdPath make_ad_path(ad::Tape& t, ad::Var z, ad::Var log_ls,
                           ad::Var log_sf2, ad::Var whitened_mean,
                           ad::Var whitened_chol_raw, const PathNoise& noise) {
  using namespace ad;
  const int s = static_cast<int>(noise.w_raw.size());
  const int m = static_cast<int>(t.val(z).rows());
  AdPath p;
  p.z = z;
  p.log_ls = log_ls;
  p.log_sf2 = log_sf2;
  p.beta = t.constant(Mat(noise.beta));
  Var inv_ls = exp_(neg(log_ls));
  p.alpha = scale_cols(t.constant(noise.eps_alpha), inv_ls);
  Var amp = cmul(exp_(cmul(log_sf2, 0.5)), std::sqrt(2.0 / std::max(s, 1)));
  p.w = mul_scalar(t.constant(Mat(noise.w_raw)), amp);
  Var k = rbf_gram(z, log_ls, log_sf2);
  Var jit = cmul(exp_(log_sf2), 1e-6);
  Var kj = add(k, mul_scalar(t.constant(Mat(Mat::Identity(m, m))), jit));
  Var l_k = cholesky(kj);
  Var wchol = tril_expdiag(whitened_chol_raw);
  Var u = matmul(
      l_k, add(whitened_mean, matmul(wchol, t.constant(Mat(noise.eps_u)))));
  Var theta_z = add_rowvec(matmul(z, transpose_(p.alpha)), p.beta);
  Var phi_w = matmul(cos_(theta_z), p.w);
  p.nu = solve_lower_t(l_k, solve_lower(l_k, sub(u, phi_w)));
  return p;
}

/// Rebinds an already-materialized path onto a fresh tape as interface
/// leaves; gradients wrt (w, alpha, nu) are bridged back by the caller.
inline AdPath bind_ad_path(ad::Tape& t, const AdPath& src,
                           const ad::Tape& src_tape, ad::Var z, ad::Var log_ls,
                           ad::Var log_sf2) {
  AdPath p;
  p.w = t.leaf(src_tape.val(src.w));
  p.alpha = t.leaf(src_tape.val(src.alpha));
  p.beta = t.constant(src_tape.val(src.beta));
  p.nu = t.leaf(src_tape.val(src.nu));
  p.z = z;
  p.log_ls = log_ls;
  p.log_sf2 = log_sf2;
  return p;
}

inline ad::Var ad_eval_h(const AdPath& p, ad::Var x) {
  using namespace ad;
  Var h = dot(p.nu, rbf_kvec(x, p.z, p.log_ls, p.log_sf2));
  if (x.tape->val(p.w).size() > 0) {
    Var theta = add(matmul(p.alpha, x), p.beta);
    h = add(h, dot(p.w, cos_(theta)));
  }
  return h;
}

inline ad::Var ad_grad_h(const AdPath& p, ad::Var x) {
  using namespace ad;
  Var g = rbf_grad_sum(x, p.z, p.log_ls, p.log_sf2, p.nu);
  if (x.tape->val(p.w).size() > 0) {
    Var theta = add(matmul(p.alpha, x), p.beta);
    g = sub(g, tmatmul(p.alpha, mul(p.w, sin_(theta))));
  }
  return g;
}

inline ad::Var ad_vector_field(const AdPath& p, ad::Var x) {
  using namespace ad;
  Var g = ad_grad_h(p, x);
  const int d = static_cast<int>(x.tape->val(x).rows()) / 2;
  return vcat({segment(g, d, d), neg(segment(g, 0, d))});
}

}  // namespace hgp

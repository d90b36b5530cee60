#pragma once

#include "hgp/ad.hpp"
#include "hgp/common.hpp"

namespace hgp::ad {

/// ARD-RBF Gram matrix node: K_ij = sf2 * exp(-1/2 sum_d (Z_id-Z_jd)^2/l_d^2).
/// Differentiable wrt Z, log lengthscales and log signal variance.
inline Var rbf_gram(Var z, Var log_ls, Var log_sf2) {
  Tape& t = detail::tape_of(z, log_ls);
  require(log_sf2.tape == &t, "rbf_gram: operands on one tape");
  const Mat& zs = t.val(z);
  const int m = static_cast<int>(zs.rows());
  const int dims = static_cast<int>(zs.cols());
  require(t.val(log_ls).rows() == dims, "rbf_gram: lengthscale count");
  const Vec inv_l2 =
      (-2.0 * t.val(log_ls).col(0).array()).exp().matrix();
  const double sf2 = std::exp(t.scalar(log_sf2));
  Mat k(m, m);
  for (int i = 0; i < m; ++i) {
    k(i, i) = sf2;
    for (int j = 0; j < i; ++j) {
      const double r2 = ((zs.row(i) - zs.row(j)).transpose().array().square() *
                         inv_l2.array())
                            .sum();
      k(i, j) = k(j, i) = sf2 * std::exp(-0.5 * r2);
    }
  }
  const bool rg = t.rg(z) || t.rg(log_ls) || t.rg(log_sf2);
  Var out = t.emplace(std::move(k), rg, "rbf_gram");
  if (rg)
    t.set_pull(out, [zi = z.idx, li = log_ls.idx, si = log_sf2.idx,
                     o = out.idx](Tape& t) {
      const Mat& g = t.adj_of(o);
      const Mat& k = t.val(o);
      const Mat& zs = t.val(zi);
      const int m = static_cast<int>(zs.rows());
      const int dims = static_cast<int>(zs.cols());
      const Vec inv_l2 =
          (-2.0 * t.val(li).col(0).array()).exp().matrix();
      Mat zbar = Mat::Zero(m, dims);
      Vec lbar = Vec::Zero(dims);
      double sbar = 0.0;
      for (int i = 0; i < m; ++i) {
        sbar += g(i, i) * k(i, i);
        for (int j = 0; j < i; ++j) {
          const double c = (g(i, j) + g(j, i)) * k(i, j);
          sbar += c;
          const Vec delta = (zs.row(i) - zs.row(j)).transpose();
          const Vec ds = delta.cwiseProduct(inv_l2);  // delta / l^2
          zbar.row(i) -= c * ds.transpose();
          zbar.row(j) += c * ds.transpose();
          lbar += c * delta.cwiseProduct(ds);  // delta^2 / l^2
        }
      }
      if (t.rg(zi)) t.adj_ref(zi) += zbar;
      if (t.rg(li)) t.adj_ref(li) += lbar;
      if (t.rg(si)) t.adj_ref(si)(0, 0) += sbar;
    });
  return out;
}

/// Kernel vector k(x, Z) as an M-vector node.
inline Var rbf_kvec(Var x, Var z, Var log_ls, Var log_sf2) {
  Tape& t = detail::tape_of(x, z);
  const Mat& zs = t.val(z);
  const Vec xv = t.val(x).col(0);
  const int m = static_cast<int>(zs.rows());
  const Vec inv_l2 = (-2.0 * t.val(log_ls).col(0).array()).exp().matrix();
  const double sf2 = std::exp(t.scalar(log_sf2));
  Vec k(m);
  for (int j = 0; j < m; ++j) {
    const double r2 = ((xv - zs.row(j).transpose()).array().square() *
                       inv_l2.array())
                          .sum();
    k[j] = sf2 * std::exp(-0.5 * r2);
  }
  const bool rg =
      t.rg(x) || t.rg(z) || t.rg(log_ls) || t.rg(log_sf2);
  Var out = t.emplace(std::move(k), rg, "rbf_kvec");
  if (rg)
    t.set_pull(out, [xi = x.idx, zi = z.idx, li = log_ls.idx,
                     si = log_sf2.idx, o = out.idx](Tape& t) {
      const Mat& g = t.adj_of(o);
      const Mat& k = t.val(o);
      const Mat& zs = t.val(zi);
      const Vec xv = t.val(xi).col(0);
      const int m = static_cast<int>(zs.rows());
      const int dims = static_cast<int>(xv.size());
      const Vec inv_l2 = (-2.0 * t.val(li).col(0).array()).exp().matrix();
      Vec xbar = Vec::Zero(dims);
      Mat zbar = Mat::Zero(m, dims);
      Vec lbar = Vec::Zero(dims);
      double sbar = 0.0;
      for (int j = 0; j < m; ++j) {
        const double c = g(j, 0) * k(j, 0);
        sbar += c;
        const Vec delta = xv - zs.row(j).transpose();
        const Vec ds = delta.cwiseProduct(inv_l2);
        xbar -= c * ds;
        zbar.row(j) += c * ds.transpose();
        lbar += c * delta.cwiseProduct(ds);
      }
      if (t.rg(xi)) t.adj_ref(xi) += xbar;
      if (t.rg(zi)) t.adj_ref(zi) += zbar;
      if (t.rg(li)) t.adj_ref(li) += lbar;
      if (t.rg(si)) t.adj_ref(si)(0, 0) += sbar;
    });
  return out;
}

/// sum_j nu_j dk(x, z_j)/dx, the kernel-basis part of the sampled energy
/// gradient. The pullback needs the kernel Hessian terms, done in closed form.
inline Var rbf_grad_sum(Var x, Var z, Var log_ls, Var log_sf2, Var nu) {
  Tape& t = detail::tape_of(x, z);
  const Mat& zs = t.val(z);
  const Vec xv = t.val(x).col(0);
  const Vec nuv = t.val(nu).col(0);
  const int m = static_cast<int>(zs.rows());
  const int dims = static_cast<int>(xv.size());
  const Vec inv_l2 = (-2.0 * t.val(log_ls).col(0).array()).exp().matrix();
  const double sf2 = std::exp(t.scalar(log_sf2));
  Vec kvals(m);
  Vec g = Vec::Zero(dims);
  for (int j = 0; j < m; ++j) {
    const Vec delta = xv - zs.row(j).transpose();
    const Vec s = delta.cwiseProduct(inv_l2);
    const double r2 = delta.cwiseProduct(s).sum();
    kvals[j] = sf2 * std::exp(-0.5 * r2);
    g -= nuv[j] * kvals[j] * s;
  }
  const bool rg = t.rg(x) || t.rg(z) || t.rg(log_ls) || t.rg(log_sf2) ||
                  t.rg(nu);
  Var out = t.emplace(std::move(g), rg, "rbf_grad_sum");
  if (rg)
    t.set_pull(out, [xi = x.idx, zi = z.idx, li = log_ls.idx,
                     si = log_sf2.idx, ni = nu.idx, kvals,
                     o = out.idx](Tape& t) {
      const Vec gbar = t.adj_of(o).col(0);
      const Mat& zs = t.val(zi);
      const Vec xv = t.val(xi).col(0);
      const Vec nuv = t.val(ni).col(0);
      const int m = static_cast<int>(zs.rows());
      const int dims = static_cast<int>(xv.size());
      const Vec ls = t.val(li).col(0).array().exp().matrix();
      const Vec inv_l2 = ls.array().square().inverse().matrix();
      Vec xbar = Vec::Zero(dims);
      Mat zbar = Mat::Zero(m, dims);
      Vec lbar = Vec::Zero(dims);
      Vec nubar = Vec::Zero(m);
      const Vec gscaled = gbar.cwiseProduct(inv_l2);
      for (int j = 0; j < m; ++j) {
        const Vec delta = xv - zs.row(j).transpose();
        const Vec s = delta.cwiseProduct(inv_l2);
        const double tj = s.dot(gbar);
        const double ck = nuv[j] * kvals[j];
        nubar[j] -= kvals[j] * tj;
        const Vec hx = ck * (tj * s - gscaled);
        xbar += hx;
        zbar.row(j) -= hx.transpose();
        const Vec r = delta.cwiseQuotient(ls);
        lbar += ck * (2.0 * s.cwiseProduct(gbar) -
                      tj * r.cwiseProduct(r));
      }
      if (t.rg(xi)) t.adj_ref(xi) += xbar;
      if (t.rg(zi)) t.adj_ref(zi) += zbar;
      if (t.rg(li)) t.adj_ref(li) += lbar;
      if (t.rg(si)) t.adj_ref(si)(0, 0) += gbar.dot(t.val(o).col(0));
      if (t.rg(ni)) t.adj_ref(ni) += nubar;
    });
  return out;
}

}  // namespace hgp::ad

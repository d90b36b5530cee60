#include <catch2/catch_amalgamated.hpp>

#include "hgp/kernel.hpp"

using namespace hgp;

namespace {

KernelHyper random_hyper(int dims, Rng& rng) {
  return KernelHyper(uniform_vec(dims, 0.5, 2.0, rng),
                     uniform_vec(1, 0.5, 2.0, rng)[0]);
}

// Central finite differences of k_H wrt the second argument, mapped through
// the Poisson tensor; the independent oracle for khf.
Vec khf_fd(const PhaseState& x, const PhaseState& x2, const KernelHyper& hyp,
           double h = 1e-4) {
  const int dims = static_cast<int>(x.size());
  const int d = dims / 2;
  Vec grad(dims);
  for (int i = 0; i < dims; ++i) {
    Vec hi = x2, lo = x2;
    hi[i] += h;
    lo[i] -= h;
    grad[i] = (kh(x, hi, hyp) - kh(x, lo, hyp)) / (2.0 * h);
  }
  Vec out(dims);
  out.head(d) = grad.tail(d);
  out.tail(d) = -grad.head(d);
  return out;
}

// Mixed central second differences of k_H, then J D J^T; the oracle for kff.
Mat kff_fd(const PhaseState& x, const PhaseState& x2, const KernelHyper& hyp,
           double h = 1e-4) {
  const int dims = static_cast<int>(x.size());
  const int d = dims / 2;
  Mat d2(dims, dims);
  for (int e = 0; e < dims; ++e)
    for (int f = 0; f < dims; ++f) {
      Vec xpp = x, xpm = x, xmp = x, xmm = x;
      Vec ypp = x2, ypm = x2, ymp = x2, ymm = x2;
      xpp[e] += h; ypp[f] += h;
      xpm[e] += h; ypm[f] -= h;
      xmp[e] -= h; ymp[f] += h;
      xmm[e] -= h; ymm[f] -= h;
      d2(e, f) = (kh(xpp, ypp, hyp) - kh(xpm, ypm, hyp) - kh(xmp, ymp, hyp) +
                  kh(xmm, ymm, hyp)) /
                 (4.0 * h * h);
    }
  const Mat j = poisson_tensor(d);
  return j * d2 * j.transpose();
}

}  // namespace

TEST_CASE("kh basic values") {
  Rng rng(11);
  KernelHyper unit = KernelHyper::unit(2);
  Vec x = normal_vec(2, rng);
  CHECK(kh(x, x, unit) == Catch::Approx(1.0));

  // direct formula evaluation: D=1, l=(1,1), sf2=2, x=(0,0), x'=(1,0)
  KernelHyper hyp(Vec::Ones(2), 2.0);
  Vec a = Vec::Zero(2), b = Vec::Zero(2);
  b[0] = 1.0;
  CHECK(kh(a, b, hyp) == Catch::Approx(2.0 * std::exp(-0.5)).epsilon(1e-12));

  for (int rep = 0; rep < 10; ++rep) {
    KernelHyper h = random_hyper(4, rng);
    Vec u = normal_vec(4, rng), v = normal_vec(4, rng);
    CHECK(kh(u, v, h) == Catch::Approx(kh(v, u, h)).epsilon(1e-14));
    CHECK(kh(u, u, h) == Catch::Approx(h.signal_variance()).epsilon(1e-14));
  }
}

TEST_CASE("kh dimension mismatch is a contract violation") {
  KernelHyper hyp = KernelHyper::unit(2);
  Vec a = Vec::Zero(2), b = Vec::Zero(4);
  CHECK_THROWS_AS(kh(a, b, hyp), ContractError);
  CHECK_THROWS_AS(khf(a, b, hyp), ContractError);
  CHECK_THROWS_AS(kff(a, b, hyp), ContractError);
}

TEST_CASE("khf matches finite differences and vanishes at zero lag") {
  Rng rng(123);
  for (int dims : {2, 4}) {
    for (int rep = 0; rep < 25; ++rep) {
      KernelHyper hyp = random_hyper(dims, rng);
      Vec x = uniform_vec(dims, -2.0, 2.0, rng);
      Vec x2 = uniform_vec(dims, -2.0, 2.0, rng);
      Vec got = khf(x, x2, hyp);
      Vec want = khf_fd(x, x2, hyp);
      CHECK((got - want).norm() <= 1e-5 * (want.norm() + 1e-8));
      CHECK(khf(x, x, hyp).norm() <= 1e-13);
    }
  }
}

TEST_CASE("khf is linear in the signal variance") {
  Rng rng(7);
  Vec ls = uniform_vec(4, 0.5, 2.0, rng);
  KernelHyper h1(ls, 1.0), h3(ls, 3.0);
  Vec x = normal_vec(4, rng), x2 = normal_vec(4, rng);
  CHECK((khf(x, x2, h3) - 3.0 * khf(x, x2, h1)).norm() <= 1e-13);
}

TEST_CASE("kff matches finite differences, zero-lag diagonal, transpose") {
  Rng rng(321);
  for (int dims : {2, 4}) {
    for (int rep = 0; rep < 25; ++rep) {
      KernelHyper hyp = random_hyper(dims, rng);
      Vec x = uniform_vec(dims, -2.0, 2.0, rng);
      Vec x2 = uniform_vec(dims, -2.0, 2.0, rng);
      Mat got = kff(x, x2, hyp);
      Mat want = kff_fd(x, x2, hyp);
      CHECK((got - want).norm() <= 1e-5 * (want.norm() + 1e-8));
      CHECK((kff(x2, x, hyp) - got.transpose()).norm() <= 1e-13);
    }
  }

  // zero lag, D=1: diagonal is (sf2/l_p^2, sf2/l_q^2)
  Vec ls(2);
  ls << 0.7, 1.3;
  KernelHyper hyp(ls, 1.7);
  Vec x = normal_vec(2, rng);
  Mat at0 = kff(x, x, hyp);
  CHECK(at0(0, 0) == Catch::Approx(1.7 / (1.3 * 1.3)).epsilon(1e-12));
  CHECK(at0(1, 1) == Catch::Approx(1.7 / (0.7 * 0.7)).epsilon(1e-12));
  CHECK(std::abs(at0(0, 1)) <= 1e-13);
}

TEST_CASE("joint gram over energies and field values is PSD") {
  Rng rng(55);
  for (int dims : {2, 4}) {
    KernelHyper hyp = random_hyper(dims, rng);
    const int n = 5, m = 5;
    Mat xh = normal_mat(n, dims, rng);
    Mat xf = normal_mat(m, dims, rng);
    const int total = n + m * dims;
    Mat joint(total, total);
    joint.topLeftCorner(n, n) = gram(xh, hyp);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j)
        joint.block(i, n + j * dims, 1, dims) =
            khf(xh.row(i).transpose(), xf.row(j).transpose(), hyp).transpose();
    joint.bottomLeftCorner(m * dims, n) =
        joint.topRightCorner(n, m * dims).transpose();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j)
        joint.block(n + i * dims, n + j * dims, dims, dims) =
            kff(xf.row(i).transpose(), xf.row(j).transpose(), hyp);
    Eigen::SelfAdjointEigenSolver<Mat> eig(joint);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-8);
  }
}

TEST_CASE("gram_chol") {
  Rng rng(99);
  KernelHyper hyp = KernelHyper::unit(2);

  Mat one = Mat::Zero(1, 2);
  Mat l1 = gram_chol(one, hyp, 0.0);
  CHECK(l1(0, 0) == Catch::Approx(1.0));

  Mat x = normal_mat(6, 2, rng);
  Mat l = gram_chol(x, hyp, 1e-8);
  Mat k = gram(x, hyp) + 1e-8 * Mat::Identity(6, 6);
  CHECK((l * l.transpose() - k).norm() <= 1e-10);

  // duplicated inputs are rank deficient; the jitter keeps them factorable
  Mat dup(4, 2);
  dup << 0.3, -0.2, 0.3, -0.2, 1.0, 0.5, 1.0, 0.5;
  CHECK_NOTHROW(gram_chol(dup, hyp, 1e-6));
}

TEST_CASE("sample_spectral statistics and determinism") {
  Vec ls(2);
  ls << 0.5, 2.0;
  KernelHyper hyp(ls, 1.0);
  const int s = 100000;
  Rng rng(2024);
  SpectralFrequencies f = sample_spectral(hyp, s, rng);
  REQUIRE(f.alpha.rows() == s);
  for (int d = 0; d < 2; ++d) {
    const double sd = 1.0 / ls[d];
    const double mean = f.alpha.col(d).mean();
    const double var =
        (f.alpha.col(d).array() - mean).square().sum() / (s - 1);
    CHECK(std::abs(mean) <= 3.0 * sd / std::sqrt(double(s)));
    CHECK(var == Catch::Approx(sd * sd).epsilon(0.05));
  }
  CHECK(f.beta.minCoeff() >= 0.0);
  CHECK(f.beta.maxCoeff() < 2.0 * M_PI);

  Rng r1(77), r2(77);
  SpectralFrequencies a = sample_spectral(hyp, 64, r1);
  SpectralFrequencies b = sample_spectral(hyp, 64, r2);
  CHECK((a.alpha - b.alpha).norm() == 0.0);
  CHECK((a.beta - b.beta).norm() == 0.0);
}

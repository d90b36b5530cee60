#pragma once

#include <Eigen/Dense>

#include <random>
#include <stdexcept>
#include <string>

namespace hgp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

/// A point x = (q, p) in 2D-dimensional phase space.
using PhaseState = Eigen::VectorXd;

struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct FactorizationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IntegrationError : std::runtime_error {
  IntegrationError(const std::string& what, double last_good)
      : std::runtime_error(what), last_good_time(last_good) {}
  double last_good_time;
};

struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

/// Poisson tensor ((0, I), (-I, 0)) for D position/momentum pairs.
inline Mat poisson_tensor(int d) {
  Mat j = Mat::Zero(2 * d, 2 * d);
  j.topRightCorner(d, d) = Mat::Identity(d, d);
  j.bottomLeftCorner(d, d) = -Mat::Identity(d, d);
  return j;
}

inline Vec normal_vec(int n, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

inline Mat normal_mat(int rows, int cols, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

inline Vec uniform_vec(int n, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

}  // namespace hgp

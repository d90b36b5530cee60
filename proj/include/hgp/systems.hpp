#pragma once

#include <cmath>

#include "hgp/common.hpp"
#include "hgp/odeint.hpp"

namespace hgp {

enum class SystemId { Fp, Sp, Hh };

inline const char* system_name(SystemId s) {
  switch (s) {
    case SystemId::Fp: return "fp";
    case SystemId::Sp: return "sp";
    default: return "hh";
  }
}

inline SystemId system_from_name(const std::string& name) {
  if (name == "fp") return SystemId::Fp;
  if (name == "sp") return SystemId::Sp;
  if (name == "hh") return SystemId::Hh;
  throw ContractError("unknown system '" + name + "'");
}

struct SystemParams {
  double mass = 1.0;         // kg
  double rest_length = 1.0;  // m (3 for the spring pendulum)
  double gravity = 9.81;     // m/s^2
  double spring_k = 10.0;    // N/m
  double hh_mu = 0.8;        // 1/m
};

inline SystemParams default_params(SystemId s) {
  SystemParams p;
  if (s == SystemId::Sp) p.rest_length = 3.0;
  return p;
}

inline int system_dim(SystemId s) { return s == SystemId::Fp ? 2 : 4; }

inline double true_h(SystemId s, const SystemParams& prm, const PhaseState& x) {
  require(x.size() == system_dim(s), "true_h: dimension mismatch");
  switch (s) {
    case SystemId::Fp: {
      const double q = x[0], p = x[1];
      return prm.mass * prm.gravity * prm.rest_length * (1.0 - std::cos(q)) +
             p * p / (2.0 * prm.mass * prm.rest_length * prm.rest_length);
    }
    case SystemId::Sp: {
      const double q1 = x[0], q2 = x[1], p1 = x[2], p2 = x[3];
      const double arm = q1 + prm.rest_length;
      if (arm == 0.0)
        throw std::domain_error("spring pendulum: q1 + r = 0 is singular");
      return (p1 * p1 + p2 * p2 / (arm * arm)) / (2.0 * prm.mass) +
             0.5 * prm.spring_k * q1 * q1 -
             prm.mass * prm.gravity * prm.rest_length * std::cos(q2);
    }
    default: {
      const double q1 = x[0], q2 = x[1], p1 = x[2], p2 = x[3];
      return 0.5 * (q1 * q1 + q2 * q2 + p1 * p1 + p2 * p2) +
             prm.hh_mu * (q2 * q1 * q1 - q2 * q2 * q2 / 3.0);
    }
  }
}

/// Hand-derived (dH/dp, -dH/dq) per system.
inline Vec true_field(SystemId s, const SystemParams& prm,
                      const PhaseState& x) {
  require(x.size() == system_dim(s), "true_field: dimension mismatch");
  Vec f(x.size());
  switch (s) {
    case SystemId::Fp: {
      const double q = x[0], p = x[1];
      f[0] = p / (prm.mass * prm.rest_length * prm.rest_length);
      f[1] = -prm.mass * prm.gravity * prm.rest_length * std::sin(q);
      return f;
    }
    case SystemId::Sp: {
      const double q1 = x[0], q2 = x[1], p1 = x[2], p2 = x[3];
      const double arm = q1 + prm.rest_length;
      if (arm == 0.0)
        throw std::domain_error("spring pendulum: q1 + r = 0 is singular");
      f[0] = p1 / prm.mass;
      f[1] = p2 / (prm.mass * arm * arm);
      f[2] = p2 * p2 / (prm.mass * arm * arm * arm) - prm.spring_k * q1;
      f[3] = -prm.mass * prm.gravity * prm.rest_length * std::sin(q2);
      return f;
    }
    default: {
      const double q1 = x[0], q2 = x[1], p1 = x[2], p2 = x[3];
      f[0] = p1;
      f[1] = p2;
      f[2] = -q1 - 2.0 * prm.hh_mu * q1 * q2;
      f[3] = -q2 - prm.hh_mu * (q1 * q1 - q2 * q2);
      return f;
    }
  }
}

inline double energy_cutoff(SystemId s, const SystemParams& prm) {
  switch (s) {
    case SystemId::Fp:
      return prm.mass * prm.gravity * prm.rest_length;
    case SystemId::Hh:
      return 1.0 / (6.0 * prm.hh_mu * prm.hh_mu);
    default:
      return std::numeric_limits<double>::infinity();
  }
}

/// FP: U(-1,1)^2 rejecting E > mgr; SP: U(-0.25,0.25)^4; HH: U(-1,1)^4
/// rejecting E > 1/(6 mu^2). Acceptance is E <= cutoff.
inline PhaseState sample_initial(SystemId s, const SystemParams& prm,
                                 Rng& rng) {
  const int dims = system_dim(s);
  const double lim = s == SystemId::Sp ? 0.25 : 1.0;
  const double cutoff = energy_cutoff(s, prm);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    Vec x = uniform_vec(dims, -lim, lim, rng);
    if (true_h(s, prm, x) <= cutoff) return x;
  }
  throw std::runtime_error("sample_initial: rejection sampler exhausted");
}

// ---- trajectories and datasets ----------------------------------------------

struct Trajectory {
  TimeGrid grid;
  Mat states;  // N x 2D

  int size() const { return grid.size(); }
  int dims() const { return static_cast<int>(states.cols()); }
  Vec state(int i) const { return states.row(i).transpose(); }
};

/// Per-dimension affine map to zero mean, unit variance.
struct Standardizer {
  Vec mean;
  Vec std;

  Vec apply(const Vec& x) const {
    return (x - mean).cwiseQuotient(std);
  }
  Vec invert(const Vec& x) const { return x.cwiseProduct(std) + mean; }
  Mat apply_rows(const Mat& x) const {
    Mat out = x;
    out.rowwise() -= mean.transpose();
    out.array().rowwise() /= std.transpose().array();
    return out;
  }
  Mat invert_rows(const Mat& x) const {
    Mat out = x;
    out.array().rowwise() *= std.transpose().array();
    out.rowwise() += mean.transpose();
    return out;
  }
  Trajectory apply(const Trajectory& t) const {
    return Trajectory{t.grid, apply_rows(t.states)};
  }
};

inline Standardizer fit_standardizer(const std::vector<Trajectory>& train) {
  require(!train.empty(), "standardizer: no training data");
  const int dims = train[0].dims();
  int n = 0;
  Vec mean = Vec::Zero(dims);
  for (const auto& t : train) {
    mean += t.states.colwise().sum().transpose();
    n += t.size();
  }
  mean /= n;
  Vec var = Vec::Zero(dims);
  for (const auto& t : train) {
    Mat c = t.states;
    c.rowwise() -= mean.transpose();
    var += c.array().square().colwise().sum().matrix().transpose();
  }
  var /= n;
  return Standardizer{mean, var.cwiseSqrt()};
}

struct DatasetSpec {
  SystemId system = SystemId::Fp;
  SystemParams params;
  double t_train = 8.0;
  double train_rate = 8.0;  // Hz
  double test_rate = 15.0;  // Hz
  double noise_frac = 0.05;
  int n_train = 1;
  int n_test = 1;
  bool test_fresh_initial = false;  // false: continuation over [T, 2T]
  double test_t_factor = 1.0;       // fresh tests run for factor * t_train
  std::uint64_t seed = 0;
};

inline DatasetSpec default_dataset_spec(SystemId s, int task) {
  DatasetSpec d;
  d.system = s;
  d.params = default_params(s);
  switch (s) {
    case SystemId::Fp:
      d.train_rate = 8.0;
      d.test_rate = 15.0;
      d.t_train = task == 1 ? 8.0 : 4.0;
      break;
    case SystemId::Sp:
      d.train_rate = 6.0;
      d.test_rate = 10.0;
      d.t_train = task == 1 ? 16.0 : 6.0;
      break;
    default:
      d.train_rate = 4.0;
      d.test_rate = 10.0;
      d.t_train = task == 1 ? 40.0 : 12.0;
      break;
  }
  if (task == 2) {
    d.n_train = 8;
    d.n_test = 25;
    d.test_fresh_initial = true;
    d.test_t_factor = 3.0;
  }
  return d;
}

struct Dataset {
  DatasetSpec spec;
  std::vector<Trajectory> train_noisy;  // raw coordinates
  std::vector<Trajectory> train_clean;
  std::vector<Trajectory> test_clean;
  Standardizer standardizer;            // fitted on noisy train points
  std::vector<double> train_energy;     // true H at each train initial state

  std::vector<Trajectory> train_noisy_std() const {
    std::vector<Trajectory> out;
    out.reserve(train_noisy.size());
    for (const auto& t : train_noisy) out.push_back(standardizer.apply(t));
    return out;
  }
};

namespace detail {
inline TimeGrid rate_grid(double t0, double t1, double rate,
                          bool include_start) {
  const int n = static_cast<int>(std::floor((t1 - t0) * rate + 1e-9));
  std::vector<double> times;
  if (include_start) times.push_back(t0);
  for (int k = 1; k <= n; ++k) times.push_back(t0 + k / rate);
  Vec t(static_cast<int>(times.size()));
  for (std::size_t i = 0; i < times.size(); ++i) t[i] = times[i];
  return make_time_grid(std::move(t));
}
}  // namespace detail

/// Generates clean trajectories with a tight-tolerance adaptive solve, adds
/// observation noise with per-dimension variance = noise_frac * that
/// dimension's clean signal variance, and fits the standardizer on the noisy
/// training points.
inline Dataset generate(const DatasetSpec& spec, Rng& rng) {
  Dataset out;
  out.spec = spec;
  const SolverSpec truth = SolverSpec::dopri5(1e-10, 1e-12);
  auto field = [&](const Vec& x) { return true_field(spec.system, spec.params, x); };

  for (int k = 0; k < spec.n_train; ++k) {
    const Vec x0 = sample_initial(spec.system, spec.params, rng);
    out.train_energy.push_back(true_h(spec.system, spec.params, x0));
    TimeGrid grid = detail::rate_grid(0.0, spec.t_train, spec.train_rate, true);
    std::vector<Vec> xs = integrate(field, x0, grid, truth);
    Trajectory clean{grid, Mat(grid.size(), x0.size())};
    for (int i = 0; i < grid.size(); ++i)
      clean.states.row(i) = xs[i].transpose();
    out.train_clean.push_back(clean);
    if (!spec.test_fresh_initial) {
      // continuation test over [T, 2T] at the test rate
      TimeGrid tg =
          detail::rate_grid(spec.t_train, 2.0 * spec.t_train, spec.test_rate,
                            false);
      std::vector<double> targets(tg.times.data(),
                                  tg.times.data() + tg.size());
      std::vector<Vec> ts =
          integrate_from(field, xs.back(), spec.t_train, targets, truth);
      Trajectory test{tg, Mat(tg.size(), x0.size())};
      for (int i = 0; i < tg.size(); ++i)
        test.states.row(i) = ts[i].transpose();
      out.test_clean.push_back(test);
    }
  }
  if (spec.test_fresh_initial) {
    for (int k = 0; k < spec.n_test; ++k) {
      const Vec x0 = sample_initial(spec.system, spec.params, rng);
      TimeGrid tg = detail::rate_grid(0.0, spec.test_t_factor * spec.t_train,
                                      spec.test_rate, true);
      std::vector<Vec> xs = integrate(field, x0, tg, truth);
      Trajectory test{tg, Mat(tg.size(), x0.size())};
      for (int i = 0; i < tg.size(); ++i)
        test.states.row(i) = xs[i].transpose();
      out.test_clean.push_back(test);
    }
  }

  // per-dimension signal variance over the pooled clean training points
  const int dims = system_dim(spec.system);
  Vec mean = Vec::Zero(dims), var = Vec::Zero(dims);
  int n = 0;
  for (const auto& t : out.train_clean) {
    mean += t.states.colwise().sum().transpose();
    n += t.size();
  }
  mean /= n;
  for (const auto& t : out.train_clean) {
    Mat c = t.states;
    c.rowwise() -= mean.transpose();
    var += c.array().square().colwise().sum().matrix().transpose();
  }
  var /= n;
  const Vec noise_std = (spec.noise_frac * var.array()).sqrt().matrix();

  for (const auto& clean : out.train_clean) {
    Trajectory noisy = clean;
    if (spec.noise_frac > 0.0)
      for (int i = 0; i < noisy.size(); ++i)
        noisy.states.row(i) +=
            normal_vec(dims, rng).cwiseProduct(noise_std).transpose();
    out.train_noisy.push_back(std::move(noisy));
  }
  out.standardizer = fit_standardizer(out.train_noisy);
  return out;
}

}  // namespace hgp

#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "hgp/ad.hpp"
#include "hgp/common.hpp"
#include "hgp/threadpool.hpp"

namespace hgp {

struct TimeGrid {
  Vec times;

  int size() const { return static_cast<int>(times.size()); }
  double operator[](int i) const { return times[i]; }
};

inline TimeGrid make_time_grid(Vec times) {
  require(times.size() >= 1, "time grid must be nonempty");
  for (int i = 0; i + 1 < times.size(); ++i)
    require(times[i + 1] > times[i], "time grid must be strictly increasing");
  require(times.allFinite(), "time grid must be finite");
  return TimeGrid{std::move(times)};
}

inline TimeGrid uniform_grid(double t0, double t1, int n) {
  Vec t(n);
  for (int i = 0; i < n; ++i)
    t[i] = t0 + (t1 - t0) * static_cast<double>(i) / std::max(1, n - 1);
  return make_time_grid(std::move(t));
}

struct SolverSpec {
  enum class Method { Rk4, Dopri5 };
  Method method = Method::Rk4;
  double step = 1e-2;   // rk4
  double rtol = 1e-6;   // dopri5
  double atol = 1e-8;

  static SolverSpec rk4(double step) {
    SolverSpec s;
    s.method = Method::Rk4;
    s.step = step;
    return s;
  }
  static SolverSpec dopri5(double rtol, double atol) {
    SolverSpec s;
    s.method = Method::Dopri5;
    s.rtol = rtol;
    s.atol = atol;
    return s;
  }
};

// ---- generic RK4 -----------------------------------------------------------

namespace detail {
inline Vec ode_axpy(double a, const Vec& x, const Vec& y) { return a * x + y; }
inline ad::Var ode_axpy(double a, ad::Var x, ad::Var y) {
  return ad::add(ad::cmul(x, a), y);
}
inline Vec ode_rk4_update(const Vec& x, double h, const Vec& k1, const Vec& k2,
                          const Vec& k3, const Vec& k4) {
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}
inline ad::Var ode_rk4_update(ad::Var x, double h, ad::Var k1, ad::Var k2,
                              ad::Var k3, ad::Var k4) {
  return ad::lincomb({{1.0, x},
                      {h / 6.0, k1},
                      {h / 3.0, k2},
                      {h / 3.0, k3},
                      {h / 6.0, k4}});
}
}  // namespace detail

template <class State, class Field>
State rk4_step(Field&& f, const State& x, double h) {
  using detail::ode_axpy;
  State k1 = f(x);
  State k2 = f(ode_axpy(0.5 * h, k1, x));
  State k3 = f(ode_axpy(0.5 * h, k2, x));
  State k4 = f(ode_axpy(h, k3, x));
  return detail::ode_rk4_update(x, h, k1, k2, k3, k4);
}

/// Fixed-step RK4 from (t0, x0) to each target time in order, landing on
/// every target exactly (the interval is split into round(dt/step) substeps).
template <class State, class Field>
std::vector<State> integrate_rk4_from(Field&& f, const State& x0, double t0,
                                      const std::vector<double>& targets,
                                      double step) {
  require(step > 0.0, "rk4: step must be positive");
  std::vector<State> out;
  out.reserve(targets.size());
  State x = x0;
  double t = t0;
  for (double target : targets) {
    require(target >= t, "integrate: targets must be nondecreasing");
    const double dt = target - t;
    if (dt > 0.0) {
      const int n = std::max<int>(1, static_cast<int>(std::llround(dt / step)));
      const double h = dt / n;
      for (int i = 0; i < n; ++i) x = rk4_step(f, x, h);
    }
    out.push_back(x);
    t = target;
  }
  return out;
}

// ---- adaptive Dormand-Prince 4(5), plain states only ------------------------

namespace detail {

struct Dopri5Work {
  Vec k1, k2, k3, k4, k5, k6, k7;
  bool have_k1 = false;
};

/// One accepted adaptive step from (t, x); updates t, x, h. Throws
/// IntegrationError on step-size underflow.
template <class Field>
void dopri5_step(Field&& f, double& t, Vec& x, double& h, double t_limit,
                 double rtol, double atol, Dopri5Work& w) {
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                          a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33,
                          a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                          b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695,
                          e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                          e6 = 22.0 / 525, e7 = -1.0 / 40;
  if (!w.have_k1) {
    w.k1 = f(x);
    w.have_k1 = true;
  }
  for (;;) {
    if (t + h > t_limit) h = t_limit - t;
    if (h <= 1e-14 * std::max(1.0, std::abs(t)))
      throw IntegrationError("dopri5: step size underflow", t);
    w.k2 = f(x + h * (a21 * w.k1));
    w.k3 = f(x + h * (a31 * w.k1 + a32 * w.k2));
    w.k4 = f(x + h * (a41 * w.k1 + a42 * w.k2 + a43 * w.k3));
    w.k5 = f(x + h * (a51 * w.k1 + a52 * w.k2 + a53 * w.k3 + a54 * w.k4));
    w.k6 = f(x + h * (a61 * w.k1 + a62 * w.k2 + a63 * w.k3 + a64 * w.k4 +
                      a65 * w.k5));
    Vec x_new =
        x + h * (b1 * w.k1 + b3 * w.k3 + b4 * w.k4 + b5 * w.k5 + b6 * w.k6);
    w.k7 = f(x_new);
    Vec err_vec = h * (e1 * w.k1 + e3 * w.k3 + e4 * w.k4 + e5 * w.k5 +
                       e6 * w.k6 + e7 * w.k7);
    double err = 0.0;
    for (int i = 0; i < x.size(); ++i) {
      const double sc =
          atol + rtol * std::max(std::abs(x[i]), std::abs(x_new[i]));
      const double r = err_vec[i] / sc;
      err += r * r;
    }
    err = std::sqrt(err / x.size());
    if (err <= 1.0) {
      t += h;
      x = std::move(x_new);
      w.k1 = w.k7;  // first-same-as-last
      const double fac =
          std::min(5.0, std::max(0.2, 0.9 * std::pow(std::max(err, 1e-10),
                                                     -0.2)));
      h *= fac;
      return;
    }
    h *= std::max(0.2, 0.9 * std::pow(err, -0.2));
  }
}

}  // namespace detail

template <class Field>
std::vector<Vec> integrate_dopri5_from(Field&& f, const Vec& x0, double t0,
                                       const std::vector<double>& targets,
                                       double rtol, double atol) {
  std::vector<Vec> out;
  out.reserve(targets.size());
  Vec x = x0;
  double t = t0;
  detail::Dopri5Work work;
  double h = 0.0;
  for (double target : targets) {
    require(target >= t, "integrate: targets must be nondecreasing");
    if (h <= 0.0) h = std::max(1e-6, (target - t) / 16.0);
    while (t < target - 1e-12 * std::max(1.0, std::abs(target)))
      detail::dopri5_step(f, t, x, h, target, rtol, atol, work);
    t = target;
    out.push_back(x);
  }
  return out;
}

/// States of the sampled system at requested times; works for plain vector
/// states with either solver, and for tape states with RK4.
template <class Field>
std::vector<Vec> integrate_from(Field&& f, const Vec& x0, double t0,
                                const std::vector<double>& targets,
                                const SolverSpec& solver) {
  if (solver.method == SolverSpec::Method::Rk4)
    return integrate_rk4_from(f, x0, t0, targets, solver.step);
  return integrate_dopri5_from(f, x0, t0, targets, solver.rtol, solver.atol);
}

template <class Field>
std::vector<ad::Var> integrate_from(Field&& f, ad::Var x0, double t0,
                                    const std::vector<double>& targets,
                                    const SolverSpec& solver) {
  require(solver.method == SolverSpec::Method::Rk4,
          "tape states integrate with the fixed-step solver");
  return integrate_rk4_from(f, x0, t0, targets, solver.step);
}

/// Trajectory on a full grid; the first output equals x0 at grid.times[0].
template <class Field>
std::vector<Vec> integrate(Field&& f, const Vec& x0, const TimeGrid& grid,
                           const SolverSpec& solver) {
  std::vector<double> targets(grid.times.data() + 1,
                              grid.times.data() + grid.size());
  std::vector<Vec> rest = integrate_from(f, x0, grid[0], targets, solver);
  std::vector<Vec> out;
  out.reserve(grid.size());
  out.push_back(x0);
  for (auto& v : rest) out.push_back(std::move(v));
  return out;
}

// ---- multiple shooting segments ---------------------------------------------

/// Shooting split of an observation grid: state l sits at observation index
/// boundary_idx[l]; observation i belongs to the last state at or before it.
struct SegmentPlan {
  std::vector<int> boundary_idx;
  Vec boundary_times;
  std::vector<int> obs_state;  // l(i) per observation index

  int n_states() const { return static_cast<int>(boundary_idx.size()); }
};

/// Boundaries at observation indices {0, stride, 2*stride, ...}.
inline SegmentPlan make_segment_plan(const TimeGrid& grid, int stride) {
  require(stride >= 1, "segment plan: stride must be >= 1");
  const int n = grid.size();
  SegmentPlan plan;
  for (int i = 0; i < n; i += stride) plan.boundary_idx.push_back(i);
  plan.boundary_times.resize(plan.boundary_idx.size());
  for (std::size_t l = 0; l < plan.boundary_idx.size(); ++l)
    plan.boundary_times[l] = grid[plan.boundary_idx[l]];
  plan.obs_state.resize(n);
  int l = 0;
  for (int i = 0; i < n; ++i) {
    while (l + 1 < plan.n_states() && plan.boundary_idx[l + 1] <= i) ++l;
    plan.obs_state[i] = l;
  }
  return plan;
}

/// Plan with an explicit number of states, spread evenly from the front.
inline SegmentPlan make_segment_plan_states(const TimeGrid& grid,
                                            int n_states) {
  require(n_states >= 1, "segment plan: need at least one state");
  const int n = grid.size();
  const int stride = std::max(1, (n + n_states - 1) / n_states);
  SegmentPlan plan = make_segment_plan(grid, stride);
  return plan;
}

struct SegmentResult {
  std::vector<Vec> obs_states;  // aligned with the observation grid
  std::vector<Vec> end_states;  // x(t_{l+1}; s_l) for l = 0..n_states-2
};

/// Integrates every segment independently from its shooting state. Segments
/// may run concurrently; per-segment outputs land in preassigned slots so
/// the result is identical to sequential execution.
template <class Field>
SegmentResult integrate_segments(Field&& f, const std::vector<Vec>& states,
                                 const SegmentPlan& plan, const TimeGrid& grid,
                                 const SolverSpec& solver,
                                 ThreadPool* pool = nullptr) {
  const int n_states = plan.n_states();
  require(static_cast<int>(states.size()) == n_states,
          "integrate_segments: one state per boundary");
  require(static_cast<int>(plan.obs_state.size()) == grid.size(),
          "integrate_segments: plan does not cover the grid");
  SegmentResult res;
  res.obs_states.resize(grid.size());
  res.end_states.resize(std::max(0, n_states - 1));
  auto run_segment = [&](int l) {
    const int b = plan.boundary_idx[l];
    res.obs_states[b] = states[l];
    std::vector<double> targets;
    std::vector<int> target_obs;
    const int hi = (l + 1 < n_states) ? plan.boundary_idx[l + 1] : grid.size();
    for (int i = b + 1; i < hi; ++i) {
      targets.push_back(grid[i]);
      target_obs.push_back(i);
    }
    if (l + 1 < n_states) {
      targets.push_back(plan.boundary_times[l + 1]);
      target_obs.push_back(-1);
    }
    std::vector<Vec> xs =
        integrate_from(f, states[l], plan.boundary_times[l], targets, solver);
    for (std::size_t k = 0; k < xs.size(); ++k) {
      if (target_obs[k] >= 0)
        res.obs_states[target_obs[k]] = std::move(xs[k]);
      else
        res.end_states[l] = std::move(xs[k]);
    }
  };
  if (pool)
    pool->parallel_for(n_states, run_segment);
  else
    for (int l = 0; l < n_states; ++l) run_segment(l);
  return res;
}

}  // namespace hgp

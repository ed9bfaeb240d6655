#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace lshazard::optimize {

struct AscentOptions {
  double gradient_tolerance = 1e-8;  // on the infinity norm
  int max_iterations = 10000;
  double max_step = 2.0;  // cap on the infinity norm of a trial step
  double bound = 40.0;    // |x_i| beyond this is reported as a boundary solution
  // Below this gradient norm a stalled line search is attributed to rounding
  // in the objective and counts as convergence.
  double precision_floor = 1e-6;
};

struct AscentResult {
  std::vector<double> x;
  double value = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string reason;
};

// Objective evaluates f(x) and writes the gradient; returns a non-finite value
// outside the feasible region.
using Objective = std::function<double(const std::vector<double>&, std::vector<double>&)>;

[[nodiscard]] inline double inf_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// Monotone gradient ascent with an Armijo backtracking line search. The
// search direction is the gradient preconditioned by a BFGS inverse-Hessian
// estimate; whenever that is not an ascent direction the plain gradient is
// used. Every accepted step strictly increases the objective.
[[nodiscard]] inline AscentResult maximize(const Objective& objective, std::vector<double> x,
                                           const AscentOptions& opts = {}) {
  const std::size_t d = x.size();
  std::vector<double> g(d), g_new(d), x_new(d), dir(d);
  AscentResult res;
  double f = objective(x, g);
  if (!std::isfinite(f)) {
    res.x = x;
    res.value = f;
    res.reason = "objective not finite at the starting point";
    return res;
  }
  std::vector<double> h(d * d, 0.0);
  auto reset_h = [&] {
    std::fill(h.begin(), h.end(), 0.0);
    for (std::size_t i = 0; i < d; ++i) h[i * d + i] = 1.0;
  };
  reset_h();
  bool h_is_identity = true;

  int it = 0;
  for (; it < opts.max_iterations; ++it) {
    if (inf_norm(g) < opts.gradient_tolerance) {
      res.converged = true;
      res.reason = "gradient tolerance reached";
      break;
    }
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += h[i * d + j] * g[j];
      dir[i] = s;
    }
    double slope = 0.0;
    for (std::size_t i = 0; i < d; ++i) slope += dir[i] * g[i];
    if (!(slope > 0.0)) {
      reset_h();
      h_is_identity = true;
      dir = g;
      slope = 0.0;
      for (double gi : g) slope += gi * gi;
    }
    double scale = inf_norm(dir) > opts.max_step ? opts.max_step / inf_norm(dir) : 1.0;
    double step = scale;
    bool accepted = false;
    double f_new = f;
    for (int k = 0; k < 60; ++k) {
      for (std::size_t i = 0; i < d; ++i) x_new[i] = x[i] + step * dir[i];
      f_new = objective(x_new, g_new);
      if (std::isfinite(f_new) && f_new > f && f_new >= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (!h_is_identity) {
        reset_h();
        h_is_identity = true;
        continue;
      }
      if (inf_norm(g) < opts.precision_floor) {
        res.converged = true;
        res.reason = "line search stalled at numerical precision";
      } else {
        res.reason = "line search failed";
      }
      break;
    }
    // BFGS update of the inverse Hessian of -f.
    std::vector<double> s(d), y(d);
    double sy = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      s[i] = x_new[i] - x[i];
      y[i] = g[i] - g_new[i];
      sy += s[i] * y[i];
    }
    if (sy > 1e-14) {
      std::vector<double> hy(d, 0.0);
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) hy[i] += h[i * d + j] * y[j];
      double yhy = 0.0;
      for (std::size_t i = 0; i < d; ++i) yhy += y[i] * hy[i];
      const double rho = 1.0 / sy;
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
          h[i * d + j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
      h_is_identity = false;
    }
    x = x_new;
    g = g_new;
    f = f_new;
    if (inf_norm(x) > opts.bound) {
      res.reason = "iterate diverged towards the parameter-space boundary";
      ++it;
      break;
    }
  }
  if (it >= opts.max_iterations && !res.converged && res.reason.empty())
    res.reason = "iteration limit reached";
  res.x = x;
  res.value = f;
  res.gradient_norm = inf_norm(g);
  res.iterations = it;
  return res;
}

}  // namespace lshazard::optimize

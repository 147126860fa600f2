#pragma once

// Limited-memory BFGS with a strong Wolfe line search (bracketing + zoom
// with safeguarded cubic interpolation).

#include <algorithm>
#include <cmath>
#include <concepts>
#include <deque>
#include <limits>
#include <string>
#include <vector>

#include "pairlab/error.hpp"
#include "pairlab/linalg.hpp"

namespace pairlab {

/// Objective: returns f(z) and writes the gradient into `grad`.
template <typename F>
concept Objective = requires(F f, const Vector& z, Vector& g) {
  { f(z, g) } -> std::convertible_to<double>;
};

struct LbfgsConfig {
  int memory = 10;
  int max_iterations = 100;
  double c1 = 1e-4;
  double c2 = 0.9;
  double gradient_tolerance = 1e-8;
  int max_line_search = 25;

  void validate() const {
    if (memory < 1) throw ArgumentError("lbfgs: memory must be >= 1");
    if (!(0.0 < c1 && c1 < c2 && c2 < 1.0)) throw ArgumentError("lbfgs: need 0 < c1 < c2 < 1");
    if (max_iterations < 0 || max_line_search < 1) throw ArgumentError("lbfgs: invalid iteration budget");
    if (!(gradient_tolerance >= 0.0)) throw ArgumentError("lbfgs: gradient tolerance must be >= 0");
  }
};

enum class Termination { gradient_tolerance, max_iterations, line_search_failure };

inline std::string to_string(Termination t) {
  switch (t) {
    case Termination::gradient_tolerance: return "gradient_tolerance";
    case Termination::max_iterations: return "max_iterations";
    case Termination::line_search_failure: return "line_search_failure";
  }
  return "";
}

/// One accepted step, kept so callers can audit the Wolfe conditions.
struct AcceptedStep {
  double alpha = 0.0;
  double f0 = 0.0;       // value before the step
  double slope0 = 0.0;   // directional derivative before the step (< 0)
  double f = 0.0;        // value after the step
  double slope = 0.0;    // directional derivative after the step

  bool sufficient_decrease(double c1) const { return f <= f0 + c1 * alpha * slope0; }
  bool curvature(double c2) const { return std::abs(slope) <= c2 * std::abs(slope0); }
};

struct LbfgsResult {
  Vector z;
  double value = 0.0;
  Vector gradient;
  std::vector<double> history;  // f at z0 and after each accepted step
  std::vector<AcceptedStep> steps;
  int iterations = 0;
  int evaluations = 0;
  Termination reason = Termination::max_iterations;
};

namespace detail {

// Minimizer of the cubic interpolating (a, fa, ga), (b, fb, gb), clamped into
// the safeguarded interior of [a, b]; bisection when the cubic is degenerate.
inline double cubic_min(double a, double fa, double ga, double b, double fb, double gb) {
  const double lo = std::min(a, b), hi = std::max(a, b);
  const double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - ga * gb;
  double t = 0.5 * (a + b);
  if (disc >= 0.0) {
    const double d2 = std::copysign(std::sqrt(disc), b - a);
    const double denom = gb - ga + 2.0 * d2;
    if (denom != 0.0) {
      const double c = b - (b - a) * (gb + d2 - d1) / denom;
      if (std::isfinite(c)) t = c;
    }
  }
  const double margin = 0.1 * (hi - lo);
  return std::clamp(t, lo + margin, hi - margin);
}

}  // namespace detail

template <Objective F>
LbfgsResult lbfgs_minimize(F&& objective, const Vector& z0, const LbfgsConfig& cfg) {
  cfg.validate();
  LbfgsResult out;
  Vector z = z0;
  Vector g(z.size());
  double f = objective(z, g);
  out.evaluations = 1;
  if (!std::isfinite(f) || !g.allFinite()) throw ArgumentError("lbfgs: objective is not finite at the starting point");
  out.history.push_back(f);

  std::deque<Vector> s_hist, y_hist;
  std::deque<double> rho_hist;
  Vector z_new(z.size()), g_new(z.size()), p(z.size());

  auto evaluate = [&](double alpha, double& fa, double& slope) {
    z_new = z + alpha * p;
    fa = objective(z_new, g_new);
    ++out.evaluations;
    slope = g_new.dot(p);
    return std::isfinite(fa) && std::isfinite(slope);
  };

  out.reason = Termination::max_iterations;
  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    if (g.norm() <= cfg.gradient_tolerance) {
      out.reason = Termination::gradient_tolerance;
      break;
    }
    // Two-loop recursion.
    p = -g;
    std::vector<double> alphas(s_hist.size());
    for (std::size_t k = s_hist.size(); k-- > 0;) {
      alphas[k] = rho_hist[k] * s_hist[k].dot(p);
      p -= alphas[k] * y_hist[k];
    }
    if (!s_hist.empty()) p *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double beta = rho_hist[k] * y_hist[k].dot(p);
      p += (alphas[k] - beta) * s_hist[k];
    }
    double slope0 = g.dot(p);
    if (!(slope0 < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      p = -g;
      slope0 = -g.squaredNorm();
    }

    // Strong Wolfe line search.
    const double f0 = f;
    int evals = 0;
    bool accepted = false;
    double acc_alpha = 0.0, acc_f = 0.0, acc_slope = 0.0;
    Vector acc_z, acc_g;

    auto accept = [&](double alpha, double fa, double slope) {
      accepted = true;
      acc_alpha = alpha;
      acc_f = fa;
      acc_slope = slope;
      acc_z = z_new;
      acc_g = g_new;
    };

    auto zoom = [&](double lo, double f_lo, double s_lo, double hi, double f_hi, double s_hi) {
      while (evals < cfg.max_line_search) {
        if (std::abs(hi - lo) <= 1e-16 * std::max(1.0, std::abs(lo))) return;
        const double a = detail::cubic_min(lo, f_lo, s_lo, hi, f_hi, s_hi);
        double fa = 0.0, sa = 0.0;
        ++evals;
        if (!evaluate(a, fa, sa)) {
          hi = a;
          f_hi = std::numeric_limits<double>::infinity();
          s_hi = 0.0;
          continue;
        }
        if (fa > f0 + cfg.c1 * a * slope0 || fa >= f_lo) {
          hi = a;
          f_hi = fa;
          s_hi = sa;
        } else {
          if (std::abs(sa) <= -cfg.c2 * slope0) {
            accept(a, fa, sa);
            return;
          }
          if (sa * (hi - lo) >= 0.0) {
            hi = lo;
            f_hi = f_lo;
            s_hi = s_lo;
          }
          lo = a;
          f_lo = fa;
          s_lo = sa;
        }
      }
    };

    double a_prev = 0.0, f_prev = f0, s_prev = slope0;
    double a = 1.0;
    while (evals < cfg.max_line_search && !accepted) {
      double fa = 0.0, sa = 0.0;
      ++evals;
      if (!evaluate(a, fa, sa)) {
        // Step left the finite region: shrink toward the last good point.
        a = a_prev + 0.5 * (a - a_prev);
        continue;
      }
      if (fa > f0 + cfg.c1 * a * slope0 || (a_prev > 0.0 && fa >= f_prev)) {
        zoom(a_prev, f_prev, s_prev, a, fa, sa);
        break;
      }
      if (std::abs(sa) <= -cfg.c2 * slope0) {
        accept(a, fa, sa);
        break;
      }
      if (sa >= 0.0) {
        zoom(a, fa, sa, a_prev, f_prev, s_prev);
        break;
      }
      a_prev = a;
      f_prev = fa;
      s_prev = sa;
      a *= 2.0;
    }

    if (!accepted) {
      out.reason = Termination::line_search_failure;
      break;
    }

    Vector s = acc_z - z;
    Vector y = acc_g - g;
    out.steps.push_back({acc_alpha, f0, slope0, acc_f, acc_slope});
    z = std::move(acc_z);
    g = std::move(acc_g);
    f = acc_f;
    out.history.push_back(f);
    ++out.iterations;

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm() && sy > 0.0) {
      if (static_cast<int>(s_hist.size()) == cfg.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
    }
  }
  if (out.reason == Termination::max_iterations && g.norm() <= cfg.gradient_tolerance) {
    out.reason = Termination::gradient_tolerance;
  }

  // Accepted steps decrease f, so the current iterate is the best one seen.
  out.z = std::move(z);
  out.value = f;
  out.gradient = std::move(g);
  return out;
}

}  // namespace pairlab

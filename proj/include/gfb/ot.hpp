#pragma once

// Minibatch optimal transport over squared-L2 costs with uniform marginals.
//
// Two solvers are provided: an exact assignment solver (shortest augmenting
// paths with dual potentials, O(M^3)) and a log-domain Sinkhorn solver for the
// entropy-regularized problem. Soft plans are turned into pairings by per-row
// categorical sampling or by row argmax.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gfb/grid.hpp"

namespace gfb::ot {

/// Square matrix of pairwise squared Euclidean distances.
class CostMatrix {
 public:
  CostMatrix() = default;
  explicit CostMatrix(Grid<double> values) : values_(std::move(values)) {
    if (values_.rows() != values_.cols()) {
      throw ShapeError("cost matrix must be square, got " +
                       std::to_string(values_.rows()) + "x" +
                       std::to_string(values_.cols()));
    }
    for (double v : values_.flat()) {
      if (!std::isfinite(v) || v < 0.0) {
        throw ValidationError("cost matrix entries must be finite and >= 0");
      }
    }
  }

  std::size_t m() const noexcept { return values_.rows(); }
  double operator()(std::size_t i, std::size_t j) const { return values_(i, j); }
  const Grid<double>& values() const noexcept { return values_; }

  double mean() const {
    if (values_.empty()) return 0.0;
    double s = 0.0;
    for (double v : values_.flat()) s += v;
    return s / static_cast<double>(values_.size());
  }

 private:
  Grid<double> values_;
};

/// Bijection row i -> column sigma[i].
struct Assignment {
  std::vector<std::size_t> sigma;

  std::size_t size() const noexcept { return sigma.size(); }
  bool is_permutation() const {
    std::vector<bool> seen(sigma.size(), false);
    for (std::size_t j : sigma) {
      if (j >= sigma.size() || seen[j]) return false;
      seen[j] = true;
    }
    return true;
  }
  static Assignment identity(std::size_t m) {
    Assignment a;
    a.sigma.resize(m);
    std::iota(a.sigma.begin(), a.sigma.end(), std::size_t{0});
    return a;
  }
};

/// Entropic plan with uniform marginals 1/M.
struct TransportPlan {
  Grid<double> pi;
  double epsilon = 0.0;
  bool converged = false;
  std::size_t iterations = 0;     ///< total, including newton_steps
  std::size_t newton_steps = 0;
  double residual = 0.0;  ///< max absolute marginal violation at exit

  std::size_t m() const noexcept { return pi.rows(); }
};

struct SinkhornOptions {
  double epsilon = 0.0;  // required, no default
  std::size_t max_iter = 1000;
  double tol = 1e-6;
  /// Largest problem for which a stalled run switches to dense Newton steps
  /// on the dual; 0 disables them.
  std::size_t newton_max_m = 256;
};

/// C_ij = ||a_i - b_j||^2 for row-major point sets of equal shape.
template <typename T>
CostMatrix cost_matrix(const Grid<T>& a, const Grid<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("cost_matrix: point sets differ in count or dimension (" +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
  if (!all_finite(a.flat()) || !all_finite(b.flat())) {
    throw ValidationError("cost_matrix: non-finite input coordinate");
  }
  const std::size_t m = a.rows();
  const std::size_t d = a.cols();
  Grid<double> c(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto ai = a.row(i);
    for (std::size_t j = 0; j < m; ++j) {
      const auto bj = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = static_cast<double>(ai[k]) - static_cast<double>(bj[k]);
        s += diff * diff;
      }
      c(i, j) = s;
    }
  }
  return CostMatrix(std::move(c));
}

/// Exact minimum-cost assignment via shortest augmenting paths with row and
/// column potentials. Rows are inserted one at a time; each insertion runs a
/// Dijkstra-like scan over columns. Ties go to the lowest column index.
inline Assignment solve_exact(const CostMatrix& c) {
  const std::size_t m = c.m();
  constexpr double inf = std::numeric_limits<double>::infinity();
  constexpr std::size_t none = std::numeric_limits<std::size_t>::max();

  // Column index m is a virtual source column.
  std::vector<double> u(m + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> row_of(m + 1, none);  // column -> row
  std::vector<std::size_t> way(m + 1, none);
  std::vector<double> minv(m + 1);
  std::vector<bool> used(m + 1);

  for (std::size_t i = 0; i < m; ++i) {
    row_of[m] = i;
    std::size_t j0 = m;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), false);
    do {
      used[j0] = true;
      const std::size_t i0 = row_of[j0];
      double delta = inf;
      std::size_t j1 = none;
      for (std::size_t j = 0; j < m; ++j) {
        if (used[j]) continue;
        const double reduced = c(i0, j) - u[i0] - v[j];
        if (reduced < minv[j]) {
          minv[j] = reduced;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[row_of[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (row_of[j0] != none);
    // Flip the alternating path back to the source column.
    while (j0 != m) {
      const std::size_t prev = way[j0];
      row_of[j0] = row_of[prev];
      j0 = prev;
    }
  }

  Assignment a;
  a.sigma.assign(m, 0);
  for (std::size_t j = 0; j < m; ++j) a.sigma[row_of[j]] = j;
  return a;
}

namespace detail {

inline double log_sum_exp(std::span<const double> xs) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : xs) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - hi);
  return hi + std::log(s);
}


// Solves a x = b in place (dense, partial pivoting). False when singular.
inline bool solve_dense(std::vector<double>& a, std::vector<double>& b, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    for (std::size_t i = k + 1; i < n; ++i) {
      if (std::abs(a[i * n + k]) > std::abs(a[p * n + k])) p = i;
    }
    if (!(std::abs(a[p * n + k]) > 0.0)) return false;
    if (p != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a[k * n + j], a[p * n + j]);
      std::swap(b[k], b[p]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a[i * n + k] / a[k * n + k];
      if (f == 0.0) continue;
      for (std::size_t j = k; j < n; ++j) a[i * n + j] -= f * a[k * n + j];
      b[i] -= f * b[k];
    }
  }
  for (std::size_t k = n; k-- > 0;) {
    double s = b[k];
    for (std::size_t j = k + 1; j < n; ++j) s -= a[k * n + j] * b[j];
    b[k] = s / a[k * n + k];
  }
  return true;
}

}  // namespace detail

/// Entropy-regularized OT with uniform marginals, iterated on dual
/// potentials in the log domain. Non-convergence is reported through the
/// plan's flags, not thrown.
inline TransportPlan solve_sinkhorn(const CostMatrix& c, const SinkhornOptions& opt) {
  if (!(opt.epsilon > 0.0) || !std::isfinite(opt.epsilon)) {
    throw ValidationError("solve_sinkhorn: epsilon must be positive, got " +
                          std::to_string(opt.epsilon));
  }
  if (opt.max_iter < 1) throw ValidationError("solve_sinkhorn: max_iter must be >= 1");
  if (!(opt.tol > 0.0)) throw ValidationError("solve_sinkhorn: tol must be positive");

  const std::size_t m = c.m();
  const double eps = opt.epsilon;
  const double log_mass = -std::log(static_cast<double>(m));
  const double target = 1.0 / static_cast<double>(m);

  // Potentials in units of eps: pi_ij = exp(u_i + v_j - C_ij / eps).
  std::vector<double> u(m, 0.0), v(m, 0.0), scratch(m);
  TransportPlan plan;
  plan.epsilon = eps;
  plan.pi = Grid<double>(m, m);

  auto fill_plan = [&] {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) plan.pi(i, j) = std::exp(u[i] + v[j] - c(i, j) / eps);
    }
  };
  auto marginal_residual = [&] {
    double worst = 0.0;
    std::vector<double> col(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      double r = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        r += plan.pi(i, j);
        col[j] += plan.pi(i, j);
      }
      worst = std::max(worst, std::abs(r - target));
    }
    for (double s : col) worst = std::max(worst, std::abs(s - target));
    return worst;
  };
  auto dual = [&] {
    double d = 0.0;
    for (std::size_t i = 0; i < m; ++i) d += target * (u[i] + v[i]);
    for (double p : plan.pi.flat()) d -= p;
    return d;
  };
  auto sinkhorn_sweep = [&] {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) scratch[j] = v[j] - c(i, j) / eps;
      u[i] = log_mass - detail::log_sum_exp(scratch);
    }
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < m; ++i) scratch[i] = u[i] - c(i, j) / eps;
      v[j] = log_mass - detail::log_sum_exp(scratch);
    }
    fill_plan();
  };
  // One damped Newton ascent step on the concave dual, with v_{m-1} pinned
  // to remove the constant shift. Returns false (state unchanged) on failure.
  auto newton_step = [&] {
    const std::size_t n = 2 * m - 1;
    std::vector<double> h(n * n, 0.0), step(n, 0.0);
    double diag_max = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double r = 0.0;
      for (std::size_t j = 0; j < m; ++j) r += plan.pi(i, j);
      step[i] = target - r;
      h[i * n + i] = r;
      diag_max = std::max(diag_max, r);
    }
    for (std::size_t j = 0; j + 1 < m; ++j) {
      double col = 0.0;
      for (std::size_t i = 0; i < m; ++i) col += plan.pi(i, j);
      step[m + j] = target - col;
      h[(m + j) * n + m + j] = col;
      for (std::size_t i = 0; i < m; ++i) {
        h[i * n + m + j] = plan.pi(i, j);
        h[(m + j) * n + i] = plan.pi(i, j);
      }
    }
    for (std::size_t k = 0; k < n; ++k) h[k * n + k] += 1e-12 * diag_max;
    if (!detail::solve_dense(h, step, n)) return false;
    const double d0 = dual();
    const auto u0 = u, v0 = v;
    double t = 1.0;
    for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
      for (std::size_t i = 0; i < m; ++i) u[i] = u0[i] + t * step[i];
      for (std::size_t j = 0; j + 1 < m; ++j) v[j] = v0[j] + t * step[m + j];
      fill_plan();
      const double d = dual();
      if (std::isfinite(d) && d >= d0) return true;
    }
    u = u0;
    v = v0;
    fill_plan();
    return false;
  };

  // Plain log-domain sweeps; when progress stalls close to feasibility on a
  // small problem, switch to Newton steps, falling back on any failure.
  const bool newton_allowed = opt.newton_max_m > 0 && m <= opt.newton_max_m;
  bool newton = false;
  double best = std::numeric_limits<double>::infinity();
  std::size_t stalled = 0;
  for (std::size_t it = 1; it <= opt.max_iter; ++it) {
    if (newton) {
      ++plan.newton_steps;
      if (!newton_step()) {
        newton = false;
        stalled = 0;
      }
    } else {
      sinkhorn_sweep();
    }
    plan.iterations = it;
    plan.residual = marginal_residual();
    if (plan.residual < opt.tol) {
      plan.converged = true;
      break;
    }
    if (!newton) {
      if (plan.residual < 0.5 * best) {
        best = plan.residual;
        stalled = 0;
      } else if (++stalled >= 20 && plan.residual < 1e-2 && newton_allowed) {
        newton = true;
      }
    }
  }
  return plan;
}

/// Hard pairing drawn from a soft plan: row i picks column j with
/// probability pi_ij / sum_j pi_ij. Columns may repeat.
template <std::uniform_random_bit_generator Rng>
std::vector<std::size_t> plan_to_pairs(const TransportPlan& plan, Rng& rng) {
  const std::size_t m = plan.m();
  std::vector<std::size_t> pairs(m);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < m; ++i) {
    const auto row = plan.pi.row(i);
    double total = 0.0;
    for (double p : row) {
      if (!(p >= 0.0) || !std::isfinite(p)) {
        throw ValidationError("plan_to_pairs: invalid plan entry in row " + std::to_string(i));
      }
      total += p;
    }
    if (!(total > 0.0)) {
      throw ValidationError("plan_to_pairs: row " + std::to_string(i) + " has zero mass");
    }
    const double u = unit(rng) * total;
    double acc = 0.0;
    std::size_t pick = m;
    for (std::size_t j = 0; j < m; ++j) {
      if (row[j] <= 0.0) continue;
      acc += row[j];
      pick = j;
      if (u < acc) break;
    }
    pairs[i] = pick;
  }
  return pairs;
}

/// Deterministic pairing: each row takes its largest entry (lowest index on ties).
inline std::vector<std::size_t> plan_argmax_pairs(const TransportPlan& plan) {
  const std::size_t m = plan.m();
  std::vector<std::size_t> pairs(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto row = plan.pi.row(i);
    const auto it = std::max_element(row.begin(), row.end());
    if (!(*it > 0.0)) {
      throw ValidationError("plan_argmax_pairs: row " + std::to_string(i) + " has zero mass");
    }
    pairs[i] = static_cast<std::size_t>(it - row.begin());
  }
  return pairs;
}

/// Sum of C_{i, pairs[i]}; pairs need not be a bijection.
inline double transport_cost(const CostMatrix& c, std::span<const std::size_t> pairs) {
  if (pairs.size() != c.m()) {
    throw ShapeError("transport_cost: pairing of size " + std::to_string(pairs.size()) +
                     " for cost matrix of side " + std::to_string(c.m()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i] >= c.m()) throw ShapeError("transport_cost: column index out of range");
    s += c(i, pairs[i]);
  }
  return s;
}

inline double transport_cost(const CostMatrix& c, const Assignment& a) {
  return transport_cost(c, std::span<const std::size_t>(a.sigma));
}

/// <pi, C> scaled by M so it is comparable with assignment costs.
inline double transport_cost(const CostMatrix& c, const TransportPlan& plan) {
  if (plan.m() != c.m()) {
    throw ShapeError("transport_cost: plan side " + std::to_string(plan.m()) +
                     " vs cost side " + std::to_string(c.m()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < c.m(); ++i) {
    for (std::size_t j = 0; j < c.m(); ++j) s += plan.pi(i, j) * c(i, j);
  }
  return s * static_cast<double>(c.m());
}

}  // namespace gfb::ot

#pragma once

// Conditional flow matching on the linear path x_tau = (1 - tau) x0 + tau x1,
// whose target velocity x1 - x0 is constant in tau.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gfb/coupling.hpp"
#include "gfb/grid.hpp"
#include "gfb/nn.hpp"

namespace gfb {

template <typename T>
struct PathPoint {
  Grid<T> x_tau;
  std::vector<T> tau;
};

struct CfmLossReport {
  double loss = 0.0;
  std::vector<double> per_sample;
};

/// Anything that maps (x, tau, condition, presence) to a velocity batch.
template <typename F, typename T>
concept VelocityField = requires(const F& f, const Grid<T>& x, std::span<const T> tau,
                                 const Grid<T>& cond, std::span<const std::uint8_t> present) {
  { f.forward(x, tau, cond, present) } -> std::convertible_to<Grid<T>>;
};

template <typename T>
PathPoint<T> interpolate(const Grid<T>& x0, const Grid<T>& x1, std::span<const T> tau) {
  require_same_shape(x0, x1, "interpolate");
  if (tau.size() != x0.rows()) throw ShapeError("interpolate: one tau per sample required");
  PathPoint<T> pt{Grid<T>(x0.rows(), x0.cols()), std::vector<T>(tau.begin(), tau.end())};
  for (std::size_t i = 0; i < x0.rows(); ++i) {
    const T t = tau[i];
    if (!(t >= T{0} && t <= T{1})) {
      throw ValidationError("interpolate: tau[" + std::to_string(i) + "] outside [0, 1]");
    }
    const auto a = x0.row(i);
    const auto b = x1.row(i);
    auto out = pt.x_tau.row(i);
    for (std::size_t j = 0; j < a.size(); ++j) out[j] = (T{1} - t) * a[j] + t * b[j];
  }
  return pt;
}

template <typename T>
Grid<T> cfm_target(const Grid<T>& x0, const Grid<T>& x1) {
  require_same_shape(x0, x1, "cfm_target");
  Grid<T> u(x0.rows(), x0.cols());
  for (std::size_t i = 0; i < u.size(); ++i) u.flat()[i] = x1.flat()[i] - x0.flat()[i];
  return u;
}

/// gamma * v_cond + (1 - gamma) * v_uncond
template <typename T>
Grid<T> cfg_combine(const Grid<T>& v_cond, const Grid<T>& v_uncond, T gamma) {
  require_same_shape(v_cond, v_uncond, "cfg_combine");
  Grid<T> out(v_cond.rows(), v_cond.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    // Same as gamma * v_c + (1 - gamma) * v_u, exact when the branches agree.
    out.flat()[i] = v_uncond.flat()[i] + gamma * (v_cond.flat()[i] - v_uncond.flat()[i]);
  }
  return out;
}

/// Mean squared velocity residual over batch and coordinates. Samples with
/// drop_mask set are evaluated with the null condition. When grads is
/// non-empty and the field is a VectorFieldModel, d loss / d theta is added to
/// it in the same pass.
template <typename T, VelocityField<T> Field>
CfmLossReport cfm_loss(const Field& field, const Coupling<T>& c, std::span<const T> tau,
                       std::span<const std::uint8_t> drop_mask, std::span<T> grads = {}) {
  const std::size_t b = c.x0.rows();
  const std::size_t n = c.x0.cols();
  if (drop_mask.size() != b) throw ShapeError("cfm_loss: one drop flag per sample required");
  const PathPoint<T> pt = interpolate(c.x0, c.x1, tau);
  const Grid<T> target = cfm_target(c.x0, c.x1);

  std::vector<std::uint8_t> present(b, 0);
  for (std::size_t i = 0; i < b; ++i) {
    present[i] = (i < c.present.size() && c.present[i] && !drop_mask[i]) ? 1 : 0;
  }

  nn::ForwardCache<T> cache;
  Grid<T> v;
  constexpr bool differentiable = std::is_same_v<Field, nn::VectorFieldModel<T>>;
  if constexpr (differentiable) {
    v = field.forward(pt.x_tau, tau, c.condition, present, grads.empty() ? nullptr : &cache);
  } else {
    v = field.forward(pt.x_tau, tau, c.condition, present);
  }
  if (v.rows() != b || v.cols() != n) {
    throw ShapeError("cfm_loss: model output shape does not match the coupling");
  }

  CfmLossReport rep;
  rep.per_sample.assign(b, 0.0);
  Grid<T> upstream(b, n);
  const double norm = 1.0 / static_cast<double>(b * n);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double r = static_cast<double>(v(i, j)) - static_cast<double>(target(i, j));
      s += r * r;
      upstream(i, j) = static_cast<T>(2.0 * r * norm);
    }
    rep.per_sample[i] = s / static_cast<double>(n);
    total += s;
  }
  rep.loss = total * norm;

  if constexpr (differentiable) {
    if (!grads.empty()) field.backward(cache, upstream, grads);
  }
  return rep;
}

}  // namespace gfb

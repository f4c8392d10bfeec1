#pragma once

// Fixed-step ODE integration of a velocity field, time grids, and the
// encode/decode bridge built from two opposite-direction flows.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gfb/flow.hpp"
#include "gfb/grid.hpp"

namespace gfb {

enum class ScheduleKind { uniform, raised_cosine };
enum class Direction { forward, backward };
enum class Integrator { euler, midpoint };

/// Strictly increasing grid from exactly 0 to exactly 1.
struct TimeSchedule {
  std::vector<double> taus;
  ScheduleKind kind = ScheduleKind::uniform;

  std::size_t steps() const noexcept { return taus.empty() ? 0 : taus.size() - 1; }
  friend bool operator==(const TimeSchedule&, const TimeSchedule&) = default;
};

inline TimeSchedule schedule_uniform(std::size_t t_steps) {
  if (t_steps < 1) throw ValidationError("schedule: steps must be >= 1");
  TimeSchedule s{std::vector<double>(t_steps + 1), ScheduleKind::uniform};
  for (std::size_t i = 0; i <= t_steps; ++i) {
    s.taus[i] = static_cast<double>(i) / static_cast<double>(t_steps);
  }
  s.taus.front() = 0.0;
  s.taus.back() = 1.0;
  return s;
}

/// tau_i = 0.5 + 0.5 cos(pi i / T + pi); steps shrink toward both ends.
inline TimeSchedule schedule_raised_cosine(std::size_t t_steps) {
  if (t_steps < 1) throw ValidationError("schedule: steps must be >= 1");
  TimeSchedule s{std::vector<double>(t_steps + 1), ScheduleKind::raised_cosine};
  for (std::size_t i = 0; i <= t_steps; ++i) {
    const double phase =
        std::numbers::pi * static_cast<double>(i) / static_cast<double>(t_steps) + std::numbers::pi;
    s.taus[i] = 0.5 + 0.5 * std::cos(phase);
  }
  s.taus.front() = 0.0;
  s.taus.back() = 1.0;
  return s;
}

inline TimeSchedule make_schedule(ScheduleKind kind, std::size_t t_steps) {
  return kind == ScheduleKind::uniform ? schedule_uniform(t_steps)
                                       : schedule_raised_cosine(t_steps);
}

/// One integrated sample. states are in traversal order (states[0] is the
/// start point); velocities[i] is the field value used for step i.
template <typename T>
struct Trajectory {
  Grid<T> states;
  Grid<T> velocities;
  TimeSchedule schedule;
  Direction direction = Direction::forward;
};

/// Condition and guidance weight for an integration. An empty condition grid
/// means every evaluation uses the null condition.
template <typename T>
struct Guidance {
  Grid<T> condition;  // B x K, or 1 x K broadcast to every row
  T gamma = T{1};

  bool conditional() const noexcept { return condition.rows() > 0; }
};

template <typename T>
struct IntegrationResult {
  Grid<T> x_end;
  std::vector<Trajectory<T>> trajectories;  // filled when recording
};

namespace detail {

template <typename T>
Grid<T> broadcast_condition(const Grid<T>& cond, std::size_t rows) {
  if (cond.rows() == rows) return cond;
  if (cond.rows() != 1) {
    throw ShapeError("condition has " + std::to_string(cond.rows()) + " rows for a batch of " +
                     std::to_string(rows));
  }
  Grid<T> out(rows, cond.cols());
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy(cond.row(0).begin(), cond.row(0).end(), out.row(i).begin());
  }
  return out;
}

/// Guided velocity: conditional branch only at gamma = 1, null branch only at
/// gamma = 0 or without a condition, otherwise the affine combination.
template <typename T, VelocityField<T> Field>
Grid<T> guided_velocity(const Field& field, const Grid<T>& x, T tau, const Grid<T>& cond,
                        bool conditional, T gamma) {
  const std::vector<T> taus(x.rows(), tau);
  const Grid<T> none(x.rows(), 0);
  if (!conditional || gamma == T{0}) return field.forward(x, taus, none, {});
  const std::vector<std::uint8_t> on(x.rows(), 1);
  Grid<T> v_cond = field.forward(x, taus, cond, on);
  if (gamma == T{1}) return v_cond;
  const Grid<T> v_null = field.forward(x, taus, none, {});
  return cfg_combine(v_cond, v_null, gamma);
}

}  // namespace detail

/// Explicit fixed-step integration along the schedule. Forward runs tau from
/// 0 to 1; backward runs the reversed schedule with negative steps.
template <typename T, VelocityField<T> Field>
IntegrationResult<T> integrate(const Field& field, const Grid<T>& x_start,
                               const TimeSchedule& schedule, Direction direction,
                               Integrator integrator = Integrator::midpoint,
                               const Guidance<T>& guidance = {}, bool record = false) {
  if (schedule.steps() < 1) throw ValidationError("integrate: empty schedule");
  if (!all_finite(x_start.flat())) throw ValidationError("integrate: non-finite start state");
  if (!std::isfinite(guidance.gamma)) throw ValidationError("integrate: gamma must be finite");
  const std::size_t b = x_start.rows();
  const std::size_t n = x_start.cols();
  const std::size_t steps = schedule.steps();
  const bool conditional = guidance.conditional();
  const Grid<T> cond = conditional ? detail::broadcast_condition(guidance.condition, b) : Grid<T>();

  IntegrationResult<T> res;
  res.x_end = x_start;
  Grid<T>& x = res.x_end;
  if (record) {
    res.trajectories.resize(b);
    for (std::size_t i = 0; i < b; ++i) {
      auto& tr = res.trajectories[i];
      tr.states = Grid<T>(steps + 1, n);
      tr.velocities = Grid<T>(steps, n);
      tr.schedule = schedule;
      tr.direction = direction;
      std::copy(x.row(i).begin(), x.row(i).end(), tr.states.row(0).begin());
    }
  }

  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t from = direction == Direction::forward ? k : steps - k;
    const std::size_t to = direction == Direction::forward ? k + 1 : steps - k - 1;
    const double t0 = schedule.taus[from];
    const double dt = schedule.taus[to] - t0;
    Grid<T> v =
        detail::guided_velocity(field, x, static_cast<T>(t0), cond, conditional, guidance.gamma);
    if (integrator == Integrator::midpoint) {
      Grid<T> mid = x;
      const T half = static_cast<T>(0.5 * dt);
      for (std::size_t i = 0; i < mid.size(); ++i) mid.flat()[i] += half * v.flat()[i];
      // Clamp guards the embedding against rounding just outside [0, 1].
      const double tm = std::min(1.0, std::max(0.0, t0 + 0.5 * dt));
      v = detail::guided_velocity(field, mid, static_cast<T>(tm), cond, conditional,
                                  guidance.gamma);
    }
    const T step = static_cast<T>(dt);
    for (std::size_t i = 0; i < x.size(); ++i) x.flat()[i] += step * v.flat()[i];
    if (!all_finite(x.flat())) {
      throw DivergenceError("integrate: non-finite state at step " + std::to_string(k + 1) +
                            " of " + std::to_string(steps));
    }
    if (record) {
      for (std::size_t i = 0; i < b; ++i) {
        auto& tr = res.trajectories[i];
        std::copy(v.row(i).begin(), v.row(i).end(), tr.velocities.row(k).begin());
        std::copy(x.row(i).begin(), x.row(i).end(), tr.states.row(k + 1).begin());
      }
    }
  }
  return res;
}

template <typename T>
struct BridgeRequest {
  Grid<T> input;             // B x N
  Grid<T> target_condition;  // B x K or 1 x K; empty for an unconditional decode
  T gamma = T{1};
  std::size_t steps = 25;
  ScheduleKind schedule = ScheduleKind::raised_cosine;
  Integrator integrator = Integrator::midpoint;
  std::optional<std::size_t> decode_steps;  // defaults to steps
  bool record = false;
};

template <typename T>
struct BridgeResult {
  Grid<T> latent;
  Grid<T> output;
  std::vector<Trajectory<T>> encode;
  std::vector<Trajectory<T>> decode;
};

/// Unconditional encode to the Gaussian latent, then guided decode back.
template <typename T, VelocityField<T> Field>
BridgeResult<T> gfb_transfer(const Field& field, const BridgeRequest<T>& req) {
  if (req.steps < 1) throw ValidationError("bridge: steps must be >= 1");
  if (!std::isfinite(req.gamma)) throw ValidationError("bridge: gamma must be finite");
  const TimeSchedule enc_schedule = make_schedule(req.schedule, req.steps);
  const TimeSchedule dec_schedule = make_schedule(req.schedule, req.decode_steps.value_or(req.steps));

  BridgeResult<T> out;
  auto enc = integrate(field, req.input, enc_schedule, Direction::forward, req.integrator,
                       Guidance<T>{}, req.record);
  out.latent = std::move(enc.x_end);
  out.encode = std::move(enc.trajectories);
  Guidance<T> guide{req.target_condition, req.gamma};
  auto dec = integrate(field, out.latent, dec_schedule, Direction::backward, req.integrator,
                       guide, req.record);
  out.output = std::move(dec.x_end);
  out.decode = std::move(dec.trajectories);
  return out;
}

}  // namespace gfb

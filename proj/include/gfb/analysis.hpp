#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gfb/grid.hpp"
#include "gfb/ot.hpp"
#include "gfb/sampler.hpp"

namespace gfb::analysis {

inline constexpr double kDbCap = 100.0;

/// Per-step curvature ||(x(1) - x(0)) - v_i|| / sqrt(N), where x(0) and x(1)
/// are the realized endpoints at tau = 0 and tau = 1 regardless of the
/// direction the trajectory was integrated in.
template <typename T>
std::vector<double> curvature(const Trajectory<T>& traj) {
  const std::size_t steps = traj.schedule.steps();
  if (traj.velocities.rows() == 0 || traj.velocities.rows() != steps) {
    throw ValidationError("curvature: trajectory has no recorded velocities");
  }
  if (traj.states.rows() != steps + 1) {
    throw ShapeError("curvature: state count does not match the schedule");
  }
  const std::size_t n = traj.states.cols();
  const auto first = traj.states.row(0);
  const auto last = traj.states.row(steps);
  std::vector<double> disp(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double d = static_cast<double>(last[j]) - static_cast<double>(first[j]);
    disp[j] = traj.direction == Direction::forward ? d : -d;
  }
  std::vector<double> out(steps);
  const double norm = 1.0 / std::sqrt(static_cast<double>(n));
  for (std::size_t i = 0; i < steps; ++i) {
    const auto v = traj.velocities.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double r = disp[j] - static_cast<double>(v[j]);
      s += r * r;
    }
    out[i] = std::sqrt(s) * norm;
  }
  return out;
}

/// Linear-interpolation percentile (q in [0, 100]) of an unsorted sample.
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("percentile: empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

struct CurvatureProfile {
  std::vector<double> mean;
  std::vector<double> p25;
  std::vector<double> p75;
  TimeSchedule schedule;

  std::size_t steps() const noexcept { return mean.size(); }
  double time_average() const {
    double s = 0.0;
    for (double v : mean) s += v;
    return mean.empty() ? 0.0 : s / static_cast<double>(mean.size());
  }
};

template <typename T>
CurvatureProfile curvature_profile(std::span<const Trajectory<T>> trajs) {
  if (trajs.empty()) throw ValidationError("curvature_profile: no trajectories");
  const TimeSchedule& sched = trajs.front().schedule;
  for (const auto& t : trajs) {
    if (!(t.schedule == sched)) throw ValidationError("curvature_profile: mixed schedules");
  }
  const std::size_t steps = sched.steps();
  std::vector<std::vector<double>> per_step(steps);
  for (const auto& t : trajs) {
    const auto c = curvature(t);
    for (std::size_t i = 0; i < steps; ++i) per_step[i].push_back(c[i]);
  }
  CurvatureProfile p;
  p.schedule = sched;
  for (std::size_t i = 0; i < steps; ++i) {
    double s = 0.0;
    for (double v : per_step[i]) s += v;
    p.mean.push_back(s / static_cast<double>(per_step[i].size()));
    p.p25.push_back(percentile(per_step[i], 25.0));
    p.p75.push_back(percentile(per_step[i], 75.0));
  }
  return p;
}

/// sqrt(min over assignments of the mean squared distance).
template <typename T>
double empirical_w2(const Grid<T>& a, const Grid<T>& b) {
  if (a.rows() == 0) throw ValidationError("empirical_w2: empty point sets");
  const ot::CostMatrix c = ot::cost_matrix(a, b);
  const double cost = ot::transport_cost(c, ot::solve_exact(c));
  return std::sqrt(std::max(0.0, cost) / static_cast<double>(a.rows()));
}

/// 10 log10(||x||^2 / ||x - x_hat||^2), capped at +100 dB.
template <typename T>
double sdr(std::span<const T> reference, std::span<const T> estimate) {
  if (reference.size() != estimate.size()) throw ShapeError("sdr: length mismatch");
  double signal = 0.0, residual = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double x = static_cast<double>(reference[i]);
    const double r = x - static_cast<double>(estimate[i]);
    signal += x * x;
    residual += r * r;
  }
  if (!(signal > 0.0)) throw ValidationError("sdr: reference signal is all zero");
  if (residual <= 0.0) return kDbCap;
  return std::min(kDbCap, 10.0 * std::log10(signal / residual));
}

struct DecayEstimate {
  double t60 = 0.0;
  bool ok = false;
};

/// Reverberation time from the Schroeder backward-integrated energy curve:
/// least-squares line over the -5 dB .. -35 dB region, extrapolated to -60 dB.
template <typename T>
DecayEstimate estimate_decay(std::span<const T> signal, double fs) {
  if (!(fs > 0.0)) throw ValidationError("estimate_decay: sample rate must be positive");
  const std::size_t n = signal.size();
  std::vector<double> edc(n);
  double acc = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double v = static_cast<double>(signal[i]);
    acc += v * v;
    edc[i] = acc;
  }
  DecayEstimate est;
  if (n < 2 || !(acc > 0.0)) return est;
  const double total = edc[0];
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  std::size_t count = 0;
  bool reached_end = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(edc[i] > 0.0)) break;
    const double db = 10.0 * std::log10(edc[i] / total);
    if (db > -5.0) continue;
    if (db < -35.0) {
      reached_end = true;
      break;
    }
    const double t = static_cast<double>(i) / fs;
    sx += t;
    sy += db;
    sxx += t * t;
    sxy += t * db;
    ++count;
  }
  // A curve that drops straight to zero energy also ends the fit window.
  if (!reached_end) {
    const auto last_positive = static_cast<std::size_t>(
        std::find_if(edc.begin(), edc.end(), [](double e) { return !(e > 0.0); }) - edc.begin());
    reached_end = last_positive < n;
  }
  if (!reached_end || count < 2) return est;
  const double c = static_cast<double>(count);
  const double denom = c * sxx - sx * sx;
  if (!(denom > 0.0)) return est;
  const double slope = (c * sxy - sx * sy) / denom;  // dB per second
  if (!(slope < 0.0)) return est;
  est.t60 = -60.0 / slope;
  est.ok = std::isfinite(est.t60);
  return est;
}

}  // namespace gfb::analysis

#pragma once

// Synthetic data: 2-D toy distributions (one with a continuous condition) and
// 1-D toy signals degraded by exponential-decay reverb or hard clipping.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gfb/analysis.hpp"
#include "gfb/coupling.hpp"
#include "gfb/grid.hpp"

namespace gfb::tasks {

enum class Family { two_moons, checkerboard, eight_gaussians, cond_ring, toy_signal };
enum class Degradation { reverb, clip };

inline constexpr double kLn1000 = 6.907755278982137;  // 60 dB in amplitude nepers
inline constexpr double kCleanT60 = 0.01;
inline constexpr double kClarityWindow = 0.05;  // seconds

struct ConditionDescriptor {
  std::string name;
  std::string unit;
  double lo = 0.0;
  double hi = 1.0;
};

struct TaskSpec {
  Family family = Family::eight_gaussians;
  std::size_t length = 2048;  // toy_signal only; 2-D families are always N = 2
  double fs = 16000.0;
  double noise_std = 0.1;     // two_moons jitter, eight_gaussians cluster std
  double ring_jitter = 0.02;
  double radius = 2.0;        // eight_gaussians centre radius
  Degradation degradation = Degradation::reverb;
  double clean_mix_prob = 0.1;
  double t60_min = 0.05;
  double t60_max = 0.6;
  double sdr_min = 1.0;
  double sdr_max = 20.0;

  std::size_t dim() const { return family == Family::toy_signal ? length : 2; }

  std::vector<ConditionDescriptor> descriptors() const {
    switch (family) {
      case Family::cond_ring:
        return {{"radius", "1", 0.5, 2.0}};
      case Family::toy_signal:
        if (degradation == Degradation::reverb) {
          return {{"t60", "s", t60_min, t60_max}, {"c50", "dB", -10.0, 40.0}};
        }
        return {{"sdr", "dB", sdr_min, sdr_max}};
      default:
        return {};
    }
  }

  void validate() const {
    if (!(clean_mix_prob >= 0.0 && clean_mix_prob <= 1.0)) {
      throw ValidationError("task.clean_mix_prob must lie in [0, 1]");
    }
    if (!(noise_std >= 0.0) || !(ring_jitter >= 0.0)) {
      throw ValidationError("task jitter must be >= 0");
    }
    if (family == Family::toy_signal) {
      if (length < 64) throw ValidationError("task.length must be >= 64");
      if (!(fs > 0.0)) throw ValidationError("task.fs must be > 0");
      if (static_cast<double>(length) / fs < kClarityWindow) {
        throw ValidationError("task.length must cover at least 50 ms for clarity");
      }
      if (!(t60_min > 0.0 && t60_max > t60_min)) {
        throw ValidationError("task.t60 range must be positive and non-degenerate");
      }
      if (!(sdr_min >= 1.0 && sdr_max > sdr_min && sdr_max <= 40.0)) {
        throw ValidationError("task.sdr range must be non-degenerate within [1, 40] dB");
      }
    }
  }
};

inline const char* to_string(Family f) {
  switch (f) {
    case Family::two_moons: return "two_moons";
    case Family::checkerboard: return "checkerboard";
    case Family::eight_gaussians: return "eight_gaussians";
    case Family::cond_ring: return "cond_ring";
    case Family::toy_signal: return "toy_signal";
  }
  return "?";
}

inline Family family_from_string(const std::string& s) {
  for (Family f : {Family::two_moons, Family::checkerboard, Family::eight_gaussians,
                   Family::cond_ring, Family::toy_signal}) {
    if (s == to_string(f)) return f;
  }
  throw ValidationError("task.family: unknown value '" + s + "'");
}

inline const char* to_string(Degradation d) { return d == Degradation::reverb ? "reverb" : "clip"; }

inline Degradation degradation_from_string(const std::string& s) {
  if (s == "reverb") return Degradation::reverb;
  if (s == "clip") return Degradation::clip;
  throw ValidationError("task.degradation: unknown value '" + s + "'");
}

// ---------------------------------------------------------------------------
// 2-D families

/// Two interleaved unit half-circles: upper arc centred at (0, 0), lower arc
/// centred at (1, 0.5).
template <std::uniform_random_bit_generator Rng>
SignalBatch<float> gen_two_moons(std::size_t count, double noise_std, Rng& rng) {
  Grid<float> pts(count, 2);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::bernoulli_distribution lower(0.5);
  std::normal_distribution<double> jitter(0.0, 1.0);
  for (std::size_t i = 0; i < count; ++i) {
    const double t = angle(rng);
    const bool second = lower(rng);
    double x = second ? 1.0 - std::cos(t) : std::cos(t);
    double y = second ? 0.5 - std::sin(t) : std::sin(t);
    x += noise_std * jitter(rng);
    y += noise_std * jitter(rng);
    pts(i, 0) = static_cast<float>(x);
    pts(i, 1) = static_cast<float>(y);
  }
  return SignalBatch<float>::unconditional(std::move(pts));
}

/// Uniform over the dark squares of a 4x4 board on [-2, 2]^2.
template <std::uniform_random_bit_generator Rng>
SignalBatch<float> gen_checkerboard(std::size_t count, Rng& rng) {
  Grid<float> pts(count, 2);
  std::uniform_int_distribution<int> cell(0, 7);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < count; ++i) {
    const int c = cell(rng);
    const int row = c / 2;
    const int col = 2 * (c % 2) + (row % 2);
    pts(i, 0) = static_cast<float>(-2.0 + col + unit(rng));
    pts(i, 1) = static_cast<float>(-2.0 + row + unit(rng));
  }
  return SignalBatch<float>::unconditional(std::move(pts));
}

/// Mixture of 8 isotropic Gaussians centred on a circle.
template <std::uniform_random_bit_generator Rng>
SignalBatch<float> gen_eight_gaussians(std::size_t count, double radius, double std_dev,
                                       Rng& rng) {
  Grid<float> pts(count, 2);
  std::uniform_int_distribution<int> which(0, 7);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < count; ++i) {
    const double a = 2.0 * std::numbers::pi * which(rng) / 8.0;
    pts(i, 0) = static_cast<float>(radius * std::cos(a) + std_dev * normal(rng));
    pts(i, 1) = static_cast<float>(radius * std::sin(a) + std_dev * normal(rng));
  }
  return SignalBatch<float>::unconditional(std::move(pts));
}

/// Points on circles of radius r (stored as the condition) plus jitter.
/// When fixed_radius is set every sample uses it, otherwise r ~ U[0.5, 2].
template <std::uniform_random_bit_generator Rng>
SignalBatch<float> gen_cond_ring(std::size_t count, Rng& rng, double jitter = 0.02,
                                 double fixed_radius = 0.0) {
  SignalBatch<float> b;
  b.values = Grid<float>(count, 2);
  b.condition = Grid<float>(count, 1);
  b.present.assign(count, 1);
  std::uniform_real_distribution<double> radius(0.5, 2.0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < count; ++i) {
    const double r = fixed_radius > 0.0 ? fixed_radius : radius(rng);
    const double a = angle(rng);
    b.values(i, 0) = static_cast<float>(r * std::cos(a) + jitter * normal(rng));
    b.values(i, 1) = static_cast<float>(r * std::sin(a) + jitter * normal(rng));
    b.condition(i, 0) = static_cast<float>(r);
  }
  return b;
}

// ---------------------------------------------------------------------------
// 1-D signals

/// Sum of 3..8 sinusoids below fs/8 with slow amplitude envelopes, peak
/// normalized to 0.9.
template <std::uniform_random_bit_generator Rng>
std::vector<float> gen_toy_signal_one(std::size_t n, double fs, Rng& rng) {
  if (n < 64) throw ValidationError("gen_toy_signal: length must be >= 64");
  std::uniform_int_distribution<int> parts(3, 8);
  std::uniform_real_distribution<double> freq(fs / 200.0, fs / 8.0);
  std::uniform_real_distribution<double> amp(0.3, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> env_freq(1.0, 20.0);
  std::vector<double> acc(n, 0.0);
  const int k = parts(rng);
  for (int c = 0; c < k; ++c) {
    const double f = freq(rng), a = amp(rng), ph = phase(rng);
    const double fe = env_freq(rng), phe = phase(rng);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / fs;
      const double env = 0.6 + 0.4 * std::sin(2.0 * std::numbers::pi * fe * t + phe);
      acc[i] += a * env * std::sin(2.0 * std::numbers::pi * f * t + ph);
    }
  }
  double peak = 0.0;
  for (double v : acc) peak = std::max(peak, std::abs(v));
  std::vector<float> out(n);
  const double scale = peak > 0.0 ? 0.9 / peak : 0.0;
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(acc[i] * scale);
  // Rounding may leave the peak one ulp off 0.9; pin it.
  const auto it = std::max_element(out.begin(), out.end(),
                                   [](float a, float b) { return std::abs(a) < std::abs(b); });
  if (it != out.end()) *it = std::copysign(0.9f, *it);
  return out;
}

template <std::uniform_random_bit_generator Rng>
SignalBatch<float> gen_toy_signal(std::size_t count, std::size_t n, double fs, Rng& rng) {
  Grid<float> g(count, n);
  for (std::size_t i = 0; i < count; ++i) {
    const auto s = gen_toy_signal_one(n, fs, rng);
    std::copy(s.begin(), s.end(), g.row(i).begin());
  }
  return SignalBatch<float>::unconditional(std::move(g));
}

struct ClarityResult {
  double db = 0.0;
  bool capped = false;
};

/// 10 log10(early / late) with the split at 50 ms; capped at +100 dB.
inline ClarityResult compute_c50(std::span<const float> taps, double fs) {
  const auto split = static_cast<std::size_t>(std::floor(kClarityWindow * fs + 1e-9));
  if (taps.size() <= split) {
    throw ValidationError("compute_c50: kernel shorter than the 50 ms clarity window");
  }
  double early = 0.0, late = 0.0;
  for (std::size_t i = 0; i < taps.size(); ++i) {
    const double e = static_cast<double>(taps[i]) * static_cast<double>(taps[i]);
    (i <= split ? early : late) += e;
  }
  if (!(late > 0.0)) return {analysis::kDbCap, true};
  if (!(early > 0.0)) throw ValidationError("compute_c50: kernel has no early energy");
  const double db = 10.0 * std::log10(early / late);
  if (db >= analysis::kDbCap) return {analysis::kDbCap, true};
  return {db, false};
}

struct ToyReverbKernel {
  std::vector<float> taps;
  double fs = 16000.0;
  double t60 = 0.0;
  double c50 = 0.0;
  bool c50_capped = false;
};

/// Gaussian white noise shaped by exp(-ln(1000) t / t60) with a unit direct path.
template <std::uniform_random_bit_generator Rng>
ToyReverbKernel make_reverb_kernel(double t60, double fs, double length_s, Rng& rng) {
  if (!(t60 > 0.0)) throw ValidationError("make_reverb_kernel: t60 must be > 0");
  if (!(fs > 0.0)) throw ValidationError("make_reverb_kernel: fs must be > 0");
  if (!(length_s >= kClarityWindow)) {
    throw ValidationError("make_reverb_kernel: length below 50 ms leaves c50 undefined");
  }
  const auto len = static_cast<std::size_t>(std::ceil(length_s * fs));
  ToyReverbKernel k;
  k.fs = fs;
  k.t60 = t60;
  k.taps.resize(std::max<std::size_t>(len, 1));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < k.taps.size(); ++i) {
    const double t = static_cast<double>(i) / fs;
    k.taps[i] = static_cast<float>(normal(rng) * std::exp(-kLn1000 * t / t60));
  }
  k.taps[0] = 1.0f;
  const auto c = compute_c50(k.taps, fs);
  k.c50 = c.db;
  k.c50_capped = c.capped;
  return k;
}

/// Linear convolution truncated to the input length.
inline std::vector<float> apply_reverb(std::span<const float> x, std::span<const float> taps) {
  std::vector<double> acc(x.size(), 0.0);
  for (std::size_t k = 0; k < taps.size() && k < x.size(); ++k) {
    const double w = taps[k];
    if (w == 0.0) continue;
    for (std::size_t i = k; i < x.size(); ++i) acc[i] += w * static_cast<double>(x[i - k]);
  }
  return {acc.begin(), acc.end()};
}

struct ClipResult {
  std::vector<float> signal;
  double threshold = 0.0;
  double achieved_sdr = 0.0;
  bool unreachable = false;  // output is the unclipped input
};

inline std::vector<float> hard_clip(std::span<const float> x, double threshold) {
  std::vector<float> out(x.size());
  const auto th = static_cast<float>(threshold);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::clamp(x[i], -th, th);
  return out;
}

/// Symmetric hard clipping whose SDR against the input hits target_sdr
/// within 0.1 dB, found by bisection on the threshold.
inline ClipResult clip_to_sdr(std::span<const float> x, double target_sdr) {
  if (!std::isfinite(target_sdr) || target_sdr < 1.0) {
    throw ValidationError("clip_to_sdr: target must be >= 1 dB");
  }
  double peak = 0.0;
  for (float v : x) peak = std::max(peak, static_cast<double>(std::abs(v)));
  if (!(peak > 0.0)) throw ValidationError("clip_to_sdr: input is all zero");

  ClipResult res;
  // Highest clip threshold still representable below the peak.
  const double top = static_cast<double>(std::nextafter(static_cast<float>(peak), 0.0f));
  const auto at_top = hard_clip(x, top);
  if (analysis::sdr<float>(x, at_top) < target_sdr) {
    res.signal.assign(x.begin(), x.end());
    res.threshold = peak;
    res.achieved_sdr = analysis::kDbCap;
    res.unreachable = true;
    return res;
  }
  double lo = 0.0, hi = top;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    auto y = hard_clip(x, mid);
    const double s = analysis::sdr<float>(x, y);
    res.signal = std::move(y);
    res.threshold = mid;
    res.achieved_sdr = s;
    if (std::abs(s - target_sdr) < 0.01) break;
    (s < target_sdr ? lo : hi) = mid;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Training stream

/// Infinite source of conditioned training batches for one task.
class TrainingStream {
 public:
  TrainingStream(TaskSpec spec, std::uint64_t seed) : spec_(std::move(spec)), rng_(seed) {
    spec_.validate();
  }

  const TaskSpec& spec() const noexcept { return spec_; }

  SignalBatch<float> next(std::size_t batch) {
    switch (spec_.family) {
      case Family::two_moons: return gen_two_moons(batch, spec_.noise_std, rng_);
      case Family::checkerboard: return gen_checkerboard(batch, rng_);
      case Family::eight_gaussians:
        return gen_eight_gaussians(batch, spec_.radius, spec_.noise_std, rng_);
      case Family::cond_ring: return gen_cond_ring(batch, rng_, spec_.ring_jitter);
      case Family::toy_signal: return next_signals(batch);
    }
    throw ValidationError("unknown task family");
  }

 private:
  SignalBatch<float> next_signals(std::size_t batch) {
    const auto desc = spec_.descriptors();
    SignalBatch<float> b;
    b.values = Grid<float>(batch, spec_.length);
    b.condition = Grid<float>(batch, desc.size());
    b.present.assign(batch, 1);
    std::bernoulli_distribution clean(spec_.clean_mix_prob);
    for (std::size_t i = 0; i < batch; ++i) {
      auto x = gen_toy_signal_one(spec_.length, spec_.fs, rng_);
      auto cond = b.condition.row(i);
      if (clean(rng_)) {
        if (spec_.degradation == Degradation::reverb) {
          cond[0] = static_cast<float>(kCleanT60);
          cond[1] = static_cast<float>(analysis::kDbCap);
        } else {
          cond[0] = static_cast<float>(analysis::kDbCap);
        }
      } else if (spec_.degradation == Degradation::reverb) {
        std::uniform_real_distribution<double> t60(spec_.t60_min, spec_.t60_max);
        const auto kernel = make_reverb_kernel(t60(rng_), spec_.fs,
                                               static_cast<double>(spec_.length) / spec_.fs, rng_);
        x = normalize_peak(apply_reverb(x, kernel.taps));
        cond[0] = static_cast<float>(kernel.t60);
        cond[1] = static_cast<float>(kernel.c50);
      } else {
        std::uniform_real_distribution<double> target(spec_.sdr_min, spec_.sdr_max);
        const double sdr = target(rng_);
        x = clip_to_sdr(x, sdr).signal;
        cond[0] = static_cast<float>(sdr);
      }
      std::copy(x.begin(), x.end(), b.values.row(i).begin());
    }
    return b;
  }

  static std::vector<float> normalize_peak(std::vector<float> x) {
    float peak = 0.0f;
    for (float v : x) peak = std::max(peak, std::abs(v));
    if (peak > 0.0f) {
      for (float& v : x) v = v * (0.9f / peak);
    }
    return x;
  }

  TaskSpec spec_;
  std::mt19937_64 rng_;
};

inline TrainingStream make_training_stream(const TaskSpec& spec, std::uint64_t seed) {
  return TrainingStream(spec, seed);
}

}  // namespace gfb::tasks

#pragma once

// Data/noise pairings for flow-matching training: independent pairing and
// chunk-based minibatch OT pairing.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gfb/grid.hpp"
#include "gfb/ot.hpp"

namespace gfb {

/// B samples of length N with optional per-sample condition vectors.
template <typename T>
struct SignalBatch {
  Grid<T> values;                      // B x N
  Grid<T> condition;                   // B x K (K may be 0)
  std::vector<std::uint8_t> present;   // B flags

  std::size_t batch() const noexcept { return values.rows(); }
  std::size_t length() const noexcept { return values.cols(); }
  std::size_t cond_dim() const noexcept { return condition.cols(); }

  static SignalBatch unconditional(Grid<T> values) {
    SignalBatch b;
    const std::size_t rows = values.rows();
    b.values = std::move(values);
    b.condition = Grid<T>(rows, 0);
    b.present.assign(rows, 0);
    return b;
  }

  void validate() const {
    if (values.rows() < 1 || values.cols() < 1) {
      throw ValidationError("signal batch must have B >= 1 and N >= 1");
    }
    if (!all_finite(values.flat())) throw ValidationError("signal batch has non-finite values");
    if (condition.rows() != values.rows() || present.size() != values.rows()) {
      throw ShapeError("signal batch condition rows do not match batch size");
    }
  }
};

/// Paired endpoints: x0 is data (tau = 0), x1 is Gaussian (tau = 1).
template <typename T>
struct Coupling {
  Grid<T> x0;
  Grid<T> x1;
  Grid<T> condition;
  std::vector<std::uint8_t> present;
  /// Data chunk k was paired with drawn noise chunk pairs[k].
  std::vector<std::size_t> pairs;
};

enum class SolverKind { exact, sinkhorn };
enum class PairingMode { sample, argmax };

struct SolverConfig {
  SolverKind kind = SolverKind::exact;
  /// Sinkhorn regularization. When relative, the effective value is
  /// epsilon * mean(C) of each cost matrix.
  double epsilon = 0.05;
  bool epsilon_relative = true;
  std::size_t max_iter = 1000;
  double tol = 1e-6;
  PairingMode pairing = PairingMode::sample;
};

/// Split each row into contiguous chunks of length n_c. Row-major storage
/// makes this a pure reshape: sample 0 chunks come first, in time order.
template <typename T>
Grid<T> chunk(const Grid<T>& batch, std::size_t n_c) {
  if (n_c < 1) throw ValidationError("chunk: n_c must be >= 1");
  if (batch.cols() % n_c != 0) {
    throw ValidationError("chunk: n_c=" + std::to_string(n_c) +
                          " does not divide sample length N=" + std::to_string(batch.cols()));
  }
  const std::size_t b_c = batch.rows() * (batch.cols() / n_c);
  return Grid<T>(b_c, n_c, batch.storage());
}

template <typename T>
Grid<T> unchunk(const Grid<T>& chunks, std::size_t b, std::size_t n) {
  if (chunks.rows() * chunks.cols() != b * n) {
    throw ShapeError("unchunk: " + std::to_string(chunks.rows()) + "x" +
                     std::to_string(chunks.cols()) + " chunks cannot form " +
                     std::to_string(b) + "x" + std::to_string(n));
  }
  if (chunks.cols() == 0 || n % chunks.cols() != 0) {
    throw ShapeError("unchunk: chunk length does not divide N");
  }
  return Grid<T>(b, n, chunks.storage());
}

template <typename T, std::uniform_random_bit_generator Rng>
Grid<T> draw_standard_normal(std::size_t rows, std::size_t cols, Rng& rng) {
  Grid<T> g(rows, cols);
  std::normal_distribution<T> normal(T{0}, T{1});
  for (T& v : g.flat()) v = normal(rng);
  return g;
}

/// Sum over rows of ||x0_i - x1_i||^2, accumulated in double.
template <typename T>
double pairing_cost(const Grid<T>& x0, const Grid<T>& x1) {
  require_same_shape(x0, x1, "pairing_cost");
  double s = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double d = static_cast<double>(x0.flat()[i]) - static_cast<double>(x1.flat()[i]);
    s += d * d;
  }
  return s;
}

template <typename T, std::uniform_random_bit_generator Rng>
Coupling<T> couple_independent(const SignalBatch<T>& data, Rng& rng) {
  data.validate();
  Coupling<T> c;
  c.x0 = data.values;
  c.x1 = draw_standard_normal<T>(data.batch(), data.length(), rng);
  c.condition = data.condition;
  c.present = data.present;
  c.pairs = ot::Assignment::identity(data.batch()).sigma;
  return c;
}

/// Chunked OT pairing against a given noise draw. Noise chunks are reordered
/// into data-chunk slots; data order and conditions are untouched.
template <typename T, std::uniform_random_bit_generator Rng>
Coupling<T> couple_chunked_ot_with_noise(const SignalBatch<T>& data, const Grid<T>& noise,
                                         std::size_t n_c, const SolverConfig& solver,
                                         Rng& rng) {
  data.validate();
  require_same_shape(data.values, noise, "couple_chunked_ot: data vs noise");
  const Grid<T> data_chunks = chunk(data.values, n_c);
  const Grid<T> noise_chunks = chunk(noise, n_c);
  const ot::CostMatrix cost = ot::cost_matrix(data_chunks, noise_chunks);

  std::vector<std::size_t> pairs;
  if (solver.kind == SolverKind::exact) {
    pairs = ot::solve_exact(cost).sigma;
  } else {
    ot::SinkhornOptions opt;
    opt.epsilon = solver.epsilon_relative ? solver.epsilon * cost.mean() : solver.epsilon;
    // all-zero cost: any positive value gives the uniform plan
    if (!(opt.epsilon > 0.0) && solver.epsilon > 0.0) opt.epsilon = solver.epsilon;
    opt.max_iter = solver.max_iter;
    opt.tol = solver.tol;
    const ot::TransportPlan plan = ot::solve_sinkhorn(cost, opt);
    pairs = solver.pairing == PairingMode::sample ? ot::plan_to_pairs(plan, rng)
                                                  : ot::plan_argmax_pairs(plan);
  }

  Grid<T> coupled(noise_chunks.rows(), n_c);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto src = noise_chunks.row(pairs[k]);
    auto dst = coupled.row(k);
    std::copy(src.begin(), src.end(), dst.begin());
  }

  Coupling<T> c;
  c.x0 = data.values;
  c.x1 = unchunk(coupled, data.batch(), data.length());
  c.condition = data.condition;
  c.present = data.present;
  c.pairs = std::move(pairs);
  return c;
}

/// Algorithm: draw fresh noise, chunk both streams, solve OT over all chunks
/// of the minibatch, reassemble.
template <typename T, std::uniform_random_bit_generator Rng>
Coupling<T> couple_chunked_ot(const SignalBatch<T>& data, std::size_t n_c,
                              const SolverConfig& solver, Rng& rng) {
  data.validate();
  if (n_c < 1 || data.length() % n_c != 0) {
    throw ValidationError("couple_chunked_ot: n_c=" + std::to_string(n_c) +
                          " does not divide sample length N=" + std::to_string(data.length()));
  }
  const Grid<T> noise = draw_standard_normal<T>(data.batch(), data.length(), rng);
  return couple_chunked_ot_with_noise(data, noise, n_c, solver, rng);
}

}  // namespace gfb

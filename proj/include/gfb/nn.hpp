#pragma once

// Parametric velocity field v(x, tau, c) with hand-written reverse-mode
// gradients and an Adam optimizer.
//
// Two backbones share the same conditioning path:
//   mlp    : x and the time embedding are concatenated into a dense input
//            layer, followed by residual dense blocks.
//   conv1d : a single-channel signal is lifted to C channels by a same-padded
//            convolution, followed by residual convolution blocks.
// Every residual block is modulated by a per-feature scale and shift computed
// from a context vector [time embedding, condition embedding, presence flag].
// An absent condition is replaced by a learned null embedding with flag 0.
//
// All parameters live in one flat vector; the order of the blocks in that
// vector is the declaration order used by checkpoints.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gfb/grid.hpp"

namespace gfb::nn {

enum class Backbone { mlp, conv1d };
enum class Activation { silu, relu };

struct ModelConfig {
  Backbone backbone = Backbone::mlp;
  std::size_t data_dim = 2;      // N
  std::size_t hidden = 64;       // width (mlp) or channels (conv1d)
  std::size_t depth = 2;         // residual blocks
  std::size_t kernel = 5;        // conv1d only, odd
  std::size_t time_freqs = 8;    // F
  double max_freq = 16.0;        // highest embedding frequency
  std::size_t cond_dim = 0;      // K
  std::size_t cond_width = 16;   // E
  Activation activation = Activation::silu;
  std::vector<double> cond_offset;  // K entries, subtracted before embedding
  std::vector<double> cond_scale;   // K entries, divides after offset

  std::size_t context_dim() const {
    return 2 * time_freqs + (cond_dim > 0 ? cond_width + 1 : 0);
  }

  void validate() const {
    if (data_dim < 1) throw ValidationError("model.data_dim must be >= 1");
    if (hidden < 1) throw ValidationError("model.hidden must be >= 1");
    if (time_freqs < 1) throw ValidationError("model.time_freqs must be >= 1");
    if (!(max_freq >= 1.0)) throw ValidationError("model.max_freq must be >= 1");
    if (backbone == Backbone::conv1d) {
      if (depth < 1) throw ValidationError("model.depth must be >= 1 for conv1d");
      if (kernel < 1 || kernel % 2 == 0) throw ValidationError("model.kernel must be odd");
    }
    if (cond_dim > 0 && cond_width < 1) throw ValidationError("model.cond_width must be >= 1");
    if (!cond_offset.empty() && cond_offset.size() != cond_dim) {
      throw ValidationError("model.cond_offset must have cond_dim entries");
    }
    if (!cond_scale.empty()) {
      if (cond_scale.size() != cond_dim) {
        throw ValidationError("model.cond_scale must have cond_dim entries");
      }
      for (double s : cond_scale) {
        if (!(s > 0.0)) throw ValidationError("model.cond_scale entries must be > 0");
      }
    }
  }
};

/// [sin(2 pi f_k tau)]_k followed by [cos(2 pi f_k tau)]_k, with f_k spaced
/// geometrically from 1 to max_freq.
template <typename T>
std::vector<T> time_embedding(T tau, std::size_t freqs, double max_freq) {
  if (!(tau >= T{0} && tau <= T{1})) {
    throw ValidationError("time_embedding: tau must lie in [0, 1]");
  }
  std::vector<T> out(2 * freqs);
  for (std::size_t k = 0; k < freqs; ++k) {
    const double f =
        freqs == 1 ? 1.0
                   : std::pow(max_freq, static_cast<double>(k) / static_cast<double>(freqs - 1));
    const double phase = 2.0 * std::numbers::pi * f * static_cast<double>(tau);
    out[k] = static_cast<T>(std::sin(phase));
    out[freqs + k] = static_cast<T>(std::cos(phase));
  }
  return out;
}

namespace detail {

template <typename T>
T activate(Activation a, T x) {
  if (a == Activation::relu) return x > T{0} ? x : T{0};
  const T s = T{1} / (T{1} + std::exp(-x));
  return x * s;
}

template <typename T>
T activate_grad(Activation a, T x) {
  if (a == Activation::relu) return x > T{0} ? T{1} : T{0};
  const T s = T{1} / (T{1} + std::exp(-x));
  return s * (T{1} + x * (T{1} - s));
}

struct Span {
  std::size_t offset = 0;
  std::size_t size = 0;
};

}  // namespace detail

/// Offsets of every parameter block inside the flat vector.
struct Layout {
  struct Block {
    detail::Span weight, bias, mod_weight, mod_bias;
  };
  detail::Span cond_weight, cond_bias, null_embed;
  detail::Span in_weight, in_bias;
  std::vector<Block> blocks;
  detail::Span out_weight, out_bias;
  std::size_t total = 0;

  static Layout build(const ModelConfig& cfg) {
    Layout l;
    std::size_t at = 0;
    auto take = [&at](std::size_t n) {
      detail::Span s{at, n};
      at += n;
      return s;
    };
    const std::size_t h = cfg.hidden;
    const std::size_t n = cfg.data_dim;
    const std::size_t ctx = cfg.context_dim();
    if (cfg.cond_dim > 0) {
      l.cond_weight = take(cfg.cond_width * cfg.cond_dim);
      l.cond_bias = take(cfg.cond_width);
      l.null_embed = take(cfg.cond_width);
    }
    if (cfg.backbone == Backbone::mlp) {
      l.in_weight = take(h * (n + 2 * cfg.time_freqs));
    } else {
      l.in_weight = take(h * cfg.kernel);
    }
    l.in_bias = take(h);
    for (std::size_t b = 0; b < cfg.depth; ++b) {
      Block blk;
      blk.weight = take(cfg.backbone == Backbone::mlp ? h * h : h * h * cfg.kernel);
      blk.bias = take(h);
      blk.mod_weight = take(2 * h * ctx);
      blk.mod_bias = take(2 * h);
      l.blocks.push_back(blk);
    }
    if (cfg.backbone == Backbone::mlp) {
      l.out_weight = take(n * h);
      l.out_bias = take(n);
    } else {
      l.out_weight = take(h * cfg.kernel);
      l.out_bias = take(1);
    }
    l.total = at;
    return l;
  }
};

/// Activations recorded by a forward pass, consumed by backward.
template <typename T>
struct ForwardCache {
  struct Sample {
    std::vector<T> input;    // mlp: [x, temb]; conv1d: x
    std::vector<T> ctx;      // context vector
    std::vector<T> cond;     // normalized condition (empty when absent)
    bool present = false;
    std::vector<T> pre_in;   // input-layer pre-activation, H*P
    std::vector<std::vector<T>> h;    // depth+1 hidden states, H*P each
    std::vector<std::vector<T>> lin;  // block linear outputs before modulation
    std::vector<std::vector<T>> pre;  // block pre-activations after modulation
    std::vector<std::vector<T>> mod;  // block modulation [scale, shift], 2H
  };
  std::vector<Sample> samples;
  bool valid = false;
};

template <typename T>
class VectorFieldModel {
 public:
  VectorFieldModel() = default;
  explicit VectorFieldModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (cfg_.cond_offset.empty()) cfg_.cond_offset.assign(cfg_.cond_dim, 0.0);
    if (cfg_.cond_scale.empty()) cfg_.cond_scale.assign(cfg_.cond_dim, 1.0);
    layout_ = Layout::build(cfg_);
    params_.assign(layout_.total, T{0});
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  const Layout& layout() const noexcept { return layout_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }
  std::span<T> parameters() noexcept { return params_; }
  std::span<const T> parameters() const noexcept { return params_; }

  /// Uniform(+-1/sqrt(fan_in)) weights, zero biases, unit-scale null embedding.
  void initialize(std::uint64_t seed, bool zero_output = false) {
    std::mt19937_64 rng(seed);
    std::fill(params_.begin(), params_.end(), T{0});
    auto uniform = [&](detail::Span s, double fan_in) {
      const double bound = 1.0 / std::sqrt(std::max(fan_in, 1.0));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (std::size_t i = 0; i < s.size; ++i) params_[s.offset + i] = static_cast<T>(dist(rng));
    };
    const double h = static_cast<double>(cfg_.hidden);
    const double k = static_cast<double>(cfg_.kernel);
    const double ctx = static_cast<double>(cfg_.context_dim());
    if (cfg_.cond_dim > 0) {
      uniform(layout_.cond_weight, static_cast<double>(cfg_.cond_dim));
      uniform(layout_.null_embed, 1.0);
    }
    if (cfg_.backbone == Backbone::mlp) {
      uniform(layout_.in_weight, static_cast<double>(cfg_.data_dim + 2 * cfg_.time_freqs));
    } else {
      uniform(layout_.in_weight, k);
    }
    for (const auto& blk : layout_.blocks) {
      uniform(blk.weight, cfg_.backbone == Backbone::mlp ? h : h * k);
      uniform(blk.mod_weight, ctx);
    }
    if (zero_output) return;
    uniform(layout_.out_weight, cfg_.backbone == Backbone::mlp ? h : h * k);
  }

  /// Velocity for every row of x. Rows with present[i] == 0 use the null
  /// embedding and their condition row is never read.
  Grid<T> forward(const Grid<T>& x, std::span<const T> tau, const Grid<T>& cond,
                  std::span<const std::uint8_t> present,
                  ForwardCache<T>* cache = nullptr) const {
    check_inputs(x, tau, cond, present);
    const std::size_t b = x.rows();
    Grid<T> out(b, cfg_.data_dim);
    if (cache) {
      cache->samples.assign(b, {});
      cache->valid = true;
    }
    typename ForwardCache<T>::Sample local;
    for (std::size_t i = 0; i < b; ++i) {
      auto& rec = cache ? cache->samples[i] : local;
      const bool has = cfg_.cond_dim > 0 && !present.empty() && present[i] != 0;
      forward_one(x.row(i), tau[i], has ? cond.row(i) : std::span<const T>{}, has, rec,
                  out.row(i));
    }
    return out;
  }

  /// Evaluates every row with the null condition.
  Grid<T> forward_null(const Grid<T>& x, std::span<const T> tau,
                       ForwardCache<T>* cache = nullptr) const {
    const Grid<T> none(x.rows(), 0);
    return forward(x, tau, none, {}, cache);
  }

  /// Accumulates parameter gradients of sum_i <upstream_i, out_i> into grads.
  /// When dx is given it receives the gradient with respect to x.
  void backward(const ForwardCache<T>& cache, const Grid<T>& upstream, std::span<T> grads,
                Grid<T>* dx = nullptr) const {
    if (!cache.valid) throw ValidationError("backward: no recorded forward pass");
    if (upstream.rows() != cache.samples.size() || upstream.cols() != cfg_.data_dim) {
      throw ShapeError("backward: upstream gradient shape does not match forward batch");
    }
    if (grads.size() != params_.size()) {
      throw ShapeError("backward: gradient buffer has " + std::to_string(grads.size()) +
                       " entries, model has " + std::to_string(params_.size()));
    }
    if (dx) *dx = Grid<T>(upstream.rows(), cfg_.data_dim);
    for (std::size_t i = 0; i < cache.samples.size(); ++i) {
      backward_one(cache.samples[i], upstream.row(i), grads,
                   dx ? dx->row(i) : std::span<T>{});
    }
  }

 private:
  const T* p(detail::Span s) const { return params_.data() + s.offset; }
  static T* g(std::span<T> grads, detail::Span s) { return grads.data() + s.offset; }

  std::size_t positions() const {
    return cfg_.backbone == Backbone::mlp ? 1 : cfg_.data_dim;
  }

  void check_inputs(const Grid<T>& x, std::span<const T> tau, const Grid<T>& cond,
                    std::span<const std::uint8_t> present) const {
    if (x.cols() != cfg_.data_dim) {
      throw ShapeError("forward: input dimension " + std::to_string(x.cols()) +
                       " does not match model data_dim " + std::to_string(cfg_.data_dim));
    }
    if (tau.size() != x.rows()) throw ShapeError("forward: tau count does not match batch");
    if (!present.empty()) {
      if (present.size() != x.rows()) throw ShapeError("forward: presence flags vs batch");
      bool any = false;
      for (auto f : present) any = any || f != 0;
      if (any) {
        if (cfg_.cond_dim == 0) {
          throw ShapeError("forward: condition supplied to an unconditional model");
        }
        if (cond.rows() != x.rows() || cond.cols() != cfg_.cond_dim) {
          throw ShapeError("forward: condition shape " + std::to_string(cond.rows()) + "x" +
                           std::to_string(cond.cols()) + ", model expects K=" +
                           std::to_string(cfg_.cond_dim));
        }
      }
    }
  }

  // Same-padded 1-D convolution: out[co][n] += sum w[co][ci][k] in[ci][n+k-pad].
  void conv(const T* w, const T* bias, const T* in, std::size_t cin, std::size_t cout,
            T* out) const {
    const std::size_t n = cfg_.data_dim;
    const std::size_t kk = cfg_.kernel;
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kk / 2);
    for (std::size_t co = 0; co < cout; ++co) {
      T* o = out + co * n;
      std::fill(o, o + n, bias ? bias[co] : T{0});
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* src = in + ci * n;
        const T* wk = w + (co * cin + ci) * kk;
        for (std::size_t k = 0; k < kk; ++k) {
          const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - pad;
          const std::size_t lo = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
          const std::size_t hi = shift > 0 ? n - static_cast<std::size_t>(shift) : n;
          const T wv = wk[k];
          for (std::size_t t = lo; t < hi; ++t) o[t] += wv * src[t + shift];
        }
      }
    }
  }

  void conv_backward(const T* w, const T* in, const T* dout, std::size_t cin,
                     std::size_t cout, T* dw, T* db, T* din) const {
    const std::size_t n = cfg_.data_dim;
    const std::size_t kk = cfg_.kernel;
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kk / 2);
    for (std::size_t co = 0; co < cout; ++co) {
      const T* d = dout + co * n;
      if (db) {
        T s{0};
        for (std::size_t t = 0; t < n; ++t) s += d[t];
        db[co] += s;
      }
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* src = in + ci * n;
        const T* wk = w + (co * cin + ci) * kk;
        T* dwk = dw + (co * cin + ci) * kk;
        T* dsrc = din ? din + ci * n : nullptr;
        for (std::size_t k = 0; k < kk; ++k) {
          const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - pad;
          const std::size_t lo = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
          const std::size_t hi = shift > 0 ? n - static_cast<std::size_t>(shift) : n;
          T acc{0};
          for (std::size_t t = lo; t < hi; ++t) acc += d[t] * src[t + shift];
          dwk[k] += acc;
          if (dsrc) {
            const T wv = wk[k];
            for (std::size_t t = lo; t < hi; ++t) dsrc[t + shift] += wv * d[t];
          }
        }
      }
    }
  }

  void build_context(T tau, std::span<const T> cond, bool has,
                     typename ForwardCache<T>::Sample& rec) const {
    rec.ctx = time_embedding(tau, cfg_.time_freqs, cfg_.max_freq);
    rec.present = has;
    rec.cond.clear();
    if (cfg_.cond_dim == 0) return;
    const std::size_t e = cfg_.cond_width;
    const std::size_t k = cfg_.cond_dim;
    std::vector<T> z(e);
    if (has) {
      rec.cond.resize(k);
      for (std::size_t j = 0; j < k; ++j) {
        rec.cond[j] = static_cast<T>((static_cast<double>(cond[j]) - cfg_.cond_offset[j]) /
                                     cfg_.cond_scale[j]);
      }
      const T* w = p(layout_.cond_weight);
      const T* bias = p(layout_.cond_bias);
      for (std::size_t r = 0; r < e; ++r) {
        T s = bias[r];
        for (std::size_t j = 0; j < k; ++j) s += w[r * k + j] * rec.cond[j];
        z[r] = s;
      }
    } else {
      const T* nul = p(layout_.null_embed);
      std::copy(nul, nul + e, z.begin());
    }
    rec.ctx.insert(rec.ctx.end(), z.begin(), z.end());
    rec.ctx.push_back(has ? T{1} : T{0});
  }

  void forward_one(std::span<const T> x, T tau, std::span<const T> cond, bool has,
                   typename ForwardCache<T>::Sample& rec, std::span<T> out) const {
    build_context(tau, cond, has, rec);
    const std::size_t h = cfg_.hidden;
    const std::size_t n = cfg_.data_dim;
    const std::size_t np = positions();
    const std::size_t ctx_dim = rec.ctx.size();
    const Activation act = cfg_.activation;

    rec.pre_in.assign(h * np, T{0});
    if (cfg_.backbone == Backbone::mlp) {
      rec.input.assign(x.begin(), x.end());
      rec.input.insert(rec.input.end(), rec.ctx.begin(),
                       rec.ctx.begin() + static_cast<std::ptrdiff_t>(2 * cfg_.time_freqs));
      const std::size_t in_dim = rec.input.size();
      const T* w = p(layout_.in_weight);
      const T* bias = p(layout_.in_bias);
      for (std::size_t r = 0; r < h; ++r) {
        T s = bias[r];
        for (std::size_t c = 0; c < in_dim; ++c) s += w[r * in_dim + c] * rec.input[c];
        rec.pre_in[r] = s;
      }
    } else {
      rec.input.assign(x.begin(), x.end());
      conv(p(layout_.in_weight), p(layout_.in_bias), rec.input.data(), 1, h,
           rec.pre_in.data());
    }

    rec.h.assign(cfg_.depth + 1, {});
    rec.lin.assign(cfg_.depth, {});
    rec.pre.assign(cfg_.depth, {});
    rec.mod.assign(cfg_.depth, {});
    rec.h[0].resize(h * np);
    for (std::size_t i = 0; i < h * np; ++i) rec.h[0][i] = detail::activate(act, rec.pre_in[i]);

    for (std::size_t l = 0; l < cfg_.depth; ++l) {
      const auto& blk = layout_.blocks[l];
      auto& lin = rec.lin[l];
      lin.assign(h * np, T{0});
      if (cfg_.backbone == Backbone::mlp) {
        const T* w = p(blk.weight);
        const T* bias = p(blk.bias);
        for (std::size_t r = 0; r < h; ++r) {
          T s = bias[r];
          for (std::size_t c = 0; c < h; ++c) s += w[r * h + c] * rec.h[l][c];
          lin[r] = s;
        }
      } else {
        conv(p(blk.weight), p(blk.bias), rec.h[l].data(), h, h, lin.data());
      }
      auto& mod = rec.mod[l];
      mod.assign(2 * h, T{0});
      const T* mw = p(blk.mod_weight);
      const T* mb = p(blk.mod_bias);
      for (std::size_t r = 0; r < 2 * h; ++r) {
        T s = mb[r];
        for (std::size_t c = 0; c < ctx_dim; ++c) s += mw[r * ctx_dim + c] * rec.ctx[c];
        mod[r] = s;
      }
      auto& pre = rec.pre[l];
      pre.resize(h * np);
      rec.h[l + 1].resize(h * np);
      for (std::size_t c = 0; c < h; ++c) {
        const T scale = T{1} + mod[c];
        const T shift = mod[h + c];
        for (std::size_t t = 0; t < np; ++t) {
          const std::size_t idx = c * np + t;
          pre[idx] = lin[idx] * scale + shift;
          rec.h[l + 1][idx] = rec.h[l][idx] + detail::activate(act, pre[idx]);
        }
      }
    }

    const auto& last = rec.h[cfg_.depth];
    if (cfg_.backbone == Backbone::mlp) {
      const T* w = p(layout_.out_weight);
      const T* bias = p(layout_.out_bias);
      for (std::size_t r = 0; r < n; ++r) {
        T s = bias[r];
        for (std::size_t c = 0; c < h; ++c) s += w[r * h + c] * last[c];
        out[r] = s;
      }
    } else {
      conv(p(layout_.out_weight), p(layout_.out_bias), last.data(), h, 1, out.data());
    }
  }

  void backward_one(const typename ForwardCache<T>::Sample& rec, std::span<const T> up,
                    std::span<T> grads, std::span<T> dx) const {
    const std::size_t h = cfg_.hidden;
    const std::size_t n = cfg_.data_dim;
    const std::size_t np = positions();
    const std::size_t ctx_dim = rec.ctx.size();
    const Activation act = cfg_.activation;

    std::vector<T> dh(h * np, T{0});
    const auto& last = rec.h[cfg_.depth];
    if (cfg_.backbone == Backbone::mlp) {
      const T* w = p(layout_.out_weight);
      T* dw = g(grads, layout_.out_weight);
      T* db = g(grads, layout_.out_bias);
      for (std::size_t r = 0; r < n; ++r) {
        const T u = up[r];
        db[r] += u;
        for (std::size_t c = 0; c < h; ++c) {
          dw[r * h + c] += u * last[c];
          dh[c] += w[r * h + c] * u;
        }
      }
    } else {
      conv_backward(p(layout_.out_weight), last.data(), up.data(), h, 1,
                    g(grads, layout_.out_weight), g(grads, layout_.out_bias), dh.data());
    }

    std::vector<T> dctx(ctx_dim, T{0});
    std::vector<T> dpre(h * np), dlin(h * np), dmod(2 * h);
    for (std::size_t li = cfg_.depth; li-- > 0;) {
      const auto& blk = layout_.blocks[li];
      const auto& pre = rec.pre[li];
      const auto& lin = rec.lin[li];
      const auto& mod = rec.mod[li];
      std::fill(dmod.begin(), dmod.end(), T{0});
      for (std::size_t c = 0; c < h; ++c) {
        const T scale = T{1} + mod[c];
        for (std::size_t t = 0; t < np; ++t) {
          const std::size_t idx = c * np + t;
          const T dq = dh[idx] * detail::activate_grad(act, pre[idx]);
          dpre[idx] = dq;
          dlin[idx] = dq * scale;
          dmod[c] += dq * lin[idx];
          dmod[h + c] += dq;
        }
      }
      const T* mw = p(blk.mod_weight);
      T* dmw = g(grads, blk.mod_weight);
      T* dmb = g(grads, blk.mod_bias);
      for (std::size_t r = 0; r < 2 * h; ++r) {
        const T d = dmod[r];
        dmb[r] += d;
        for (std::size_t c = 0; c < ctx_dim; ++c) {
          dmw[r * ctx_dim + c] += d * rec.ctx[c];
          dctx[c] += mw[r * ctx_dim + c] * d;
        }
      }
      // dh already carries the residual path; add the block branch.
      const auto& hin = rec.h[li];
      if (cfg_.backbone == Backbone::mlp) {
        const T* w = p(blk.weight);
        T* dw = g(grads, blk.weight);
        T* db = g(grads, blk.bias);
        for (std::size_t r = 0; r < h; ++r) {
          const T d = dlin[r];
          db[r] += d;
          for (std::size_t c = 0; c < h; ++c) {
            dw[r * h + c] += d * hin[c];
            dh[c] += w[r * h + c] * d;
          }
        }
      } else {
        conv_backward(p(blk.weight), hin.data(), dlin.data(), h, h, g(grads, blk.weight),
                      g(grads, blk.bias), dh.data());
      }
    }

    std::vector<T> dpre_in(h * np);
    for (std::size_t i = 0; i < h * np; ++i) {
      dpre_in[i] = dh[i] * detail::activate_grad(act, rec.pre_in[i]);
    }
    if (cfg_.backbone == Backbone::mlp) {
      const std::size_t in_dim = rec.input.size();
      const T* w = p(layout_.in_weight);
      T* dw = g(grads, layout_.in_weight);
      T* db = g(grads, layout_.in_bias);
      for (std::size_t r = 0; r < h; ++r) {
        const T d = dpre_in[r];
        db[r] += d;
        for (std::size_t c = 0; c < in_dim; ++c) dw[r * in_dim + c] += d * rec.input[c];
        if (!dx.empty()) {
          for (std::size_t c = 0; c < n; ++c) dx[c] += w[r * in_dim + c] * d;
        }
      }
    } else {
      conv_backward(p(layout_.in_weight), rec.input.data(), dpre_in.data(), 1, h,
                    g(grads, layout_.in_weight), g(grads, layout_.in_bias),
                    dx.empty() ? nullptr : dx.data());
    }

    if (cfg_.cond_dim == 0) return;
    const std::size_t e = cfg_.cond_width;
    const std::size_t k = cfg_.cond_dim;
    const std::size_t z0 = 2 * cfg_.time_freqs;
    if (rec.present) {
      T* dw = g(grads, layout_.cond_weight);
      T* db = g(grads, layout_.cond_bias);
      for (std::size_t r = 0; r < e; ++r) {
        const T d = dctx[z0 + r];
        db[r] += d;
        for (std::size_t j = 0; j < k; ++j) dw[r * k + j] += d * rec.cond[j];
      }
    } else {
      T* dn = g(grads, layout_.null_embed);
      for (std::size_t r = 0; r < e; ++r) dn[r] += dctx[z0 + r];
    }
  }

  ModelConfig cfg_;
  Layout layout_;
  std::vector<T> params_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct OptimizerState {
  AdamConfig hyper;
  std::uint64_t step = 0;
  std::vector<T> m;
  std::vector<T> v;

  OptimizerState() = default;
  OptimizerState(std::size_t n, AdamConfig cfg) : hyper(cfg), m(n, T{0}), v(n, T{0}) {}
};

/// Bias-corrected Adam update applied in place.
template <typename T>
void adam_step(OptimizerState<T>& state, std::span<T> params, std::span<const T> grads) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment sizes differ");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double b1 = state.hyper.beta1;
  const double b2 = state.hyper.beta2;
  const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(b1, t)));
  const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(b2, t)));
  const T lr = static_cast<T>(state.hyper.lr);
  const T eps = static_cast<T>(state.hyper.eps);
  const T tb1 = static_cast<T>(b1), tb2 = static_cast<T>(b2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T gi = grads[i];
    state.m[i] = tb1 * state.m[i] + (T{1} - tb1) * gi;
    state.v[i] = tb2 * state.v[i] + (T{1} - tb2) * gi * gi;
    const T mhat = state.m[i] * c1;
    const T vhat = state.v[i] * c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace gfb::nn

#pragma once

// Experiment runner: configuration, the training loop, and the curvature,
// bridge, eval and plot commands. The CLI in tools/ is a thin wrapper.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "gfb/analysis.hpp"
#include "gfb/checkpoint.hpp"
#include "gfb/coupling.hpp"
#include "gfb/flow.hpp"
#include "gfb/io.hpp"
#include "gfb/nn.hpp"
#include "gfb/sampler.hpp"
#include "gfb/svg.hpp"
#include "gfb/tasks.hpp"

namespace gfb::experiment {

using json = nlohmann::json;

enum class CouplingMode { independent, chunked_ot };

struct CouplingConfig {
  CouplingMode mode = CouplingMode::independent;
  std::size_t n_c = 0;  // 0 means the full sample length
  SolverConfig solver;
};

struct TrainingConfig {
  std::size_t iterations = 5000;
  std::size_t batch_size = 8;
  double learning_rate = 1e-4;
  double dropout = 0.2;
  std::uint64_t seed = 0;
  std::size_t log_every = 100;
};

struct SamplingConfig {
  ScheduleKind schedule = ScheduleKind::raised_cosine;
  std::size_t steps = 25;
  Integrator integrator = Integrator::midpoint;
  double gamma = 1.0;
};

struct EvalConfig {
  std::size_t count = 256;
  std::vector<double> gammas = {0.0, 0.5, 1.0, 1.5, 2.0};
  std::vector<double> source_condition;  // empty: draw from the task
  std::vector<double> target_condition;
  std::size_t workers = 1;
};

struct ModelHyper {
  nn::Backbone backbone = nn::Backbone::mlp;
  std::size_t hidden = 64;
  std::size_t depth = 2;
  std::size_t kernel = 5;
  std::size_t time_freqs = 8;
  double max_freq = 16.0;
  std::size_t cond_width = 16;
  nn::Activation activation = nn::Activation::silu;
};

struct ExperimentConfig {
  tasks::TaskSpec task;
  ModelHyper model;
  CouplingConfig coupling;
  TrainingConfig training;
  SamplingConfig sampling;
  EvalConfig eval;
  std::string output = "out";
};

// ---------------------------------------------------------------------------
// Serialization

inline const char* to_string(CouplingMode m) {
  return m == CouplingMode::independent ? "independent" : "chunked_ot";
}
inline const char* to_string(SolverKind k) { return k == SolverKind::exact ? "exact" : "sinkhorn"; }
inline const char* to_string(PairingMode p) { return p == PairingMode::sample ? "sample" : "argmax"; }
inline const char* to_string(ScheduleKind s) {
  return s == ScheduleKind::uniform ? "uniform" : "raised_cosine";
}
inline const char* to_string(Integrator i) { return i == Integrator::euler ? "euler" : "midpoint"; }

template <typename E>
E parse_enum(const std::string& field, const std::string& value,
             std::initializer_list<std::pair<const char*, E>> options) {
  for (const auto& [name, e] : options) {
    if (value == name) return e;
  }
  throw ValidationError(field + ": unknown value '" + value + "'");
}

inline json to_json(const ExperimentConfig& c) {
  const auto& t = c.task;
  json j;
  j["task"] = {{"family", tasks::to_string(t.family)},
               {"length", t.length},
               {"fs", t.fs},
               {"noise_std", t.noise_std},
               {"ring_jitter", t.ring_jitter},
               {"radius", t.radius},
               {"degradation", tasks::to_string(t.degradation)},
               {"clean_mix_prob", t.clean_mix_prob},
               {"t60_min", t.t60_min},
               {"t60_max", t.t60_max},
               {"sdr_min", t.sdr_min},
               {"sdr_max", t.sdr_max}};
  const auto& m = c.model;
  j["model"] = {{"backbone", nn::to_string(m.backbone)},
                {"hidden", m.hidden},
                {"depth", m.depth},
                {"kernel", m.kernel},
                {"time_freqs", m.time_freqs},
                {"max_freq", m.max_freq},
                {"cond_width", m.cond_width},
                {"activation", nn::to_string(m.activation)}};
  const auto& s = c.coupling.solver;
  j["coupling"] = {{"mode", to_string(c.coupling.mode)},
                   {"n_c", c.coupling.n_c},
                   {"solver", to_string(s.kind)},
                   {"epsilon", s.epsilon},
                   {"epsilon_relative", s.epsilon_relative},
                   {"max_iter", s.max_iter},
                   {"tol", s.tol},
                   {"pairing", to_string(s.pairing)}};
  const auto& tr = c.training;
  j["training"] = {{"iterations", tr.iterations}, {"batch_size", tr.batch_size},
                   {"learning_rate", tr.learning_rate}, {"dropout", tr.dropout},
                   {"seed", tr.seed}, {"log_every", tr.log_every}};
  j["sampling"] = {{"schedule", to_string(c.sampling.schedule)},
                   {"steps", c.sampling.steps},
                   {"integrator", to_string(c.sampling.integrator)},
                   {"gamma", c.sampling.gamma}};
  j["eval"] = {{"count", c.eval.count},
               {"gammas", c.eval.gammas},
               {"source_condition", c.eval.source_condition},
               {"target_condition", c.eval.target_condition},
               {"workers", c.eval.workers}};
  j["output"] = c.output;
  return j;
}

namespace detail {

inline void reject_unknown(const json& obj, const std::string& where,
                           std::initializer_list<const char*> known) {
  if (!obj.is_object()) throw ValidationError(where + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ValidationError(where + "." + it.key() + ": unknown field");
  }
}

template <typename V>
void read(const json& obj, const char* key, V& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<V>();
  } catch (const json::exception&) {
    throw ValidationError(where + "." + key + ": wrong type");
  }
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
  using detail::read;
  ExperimentConfig c;
  detail::reject_unknown(j, "config",
                         {"task", "model", "coupling", "training", "sampling", "eval", "output"});
  if (j.contains("task")) {
    const auto& t = j["task"];
    detail::reject_unknown(t, "task",
                           {"family", "length", "fs", "noise_std", "ring_jitter", "radius",
                            "degradation", "clean_mix_prob", "t60_min", "t60_max", "sdr_min",
                            "sdr_max"});
    std::string family = tasks::to_string(c.task.family);
    std::string degradation = tasks::to_string(c.task.degradation);
    read(t, "family", family, "task");
    read(t, "degradation", degradation, "task");
    c.task.family = tasks::family_from_string(family);
    c.task.degradation = tasks::degradation_from_string(degradation);
    read(t, "length", c.task.length, "task");
    read(t, "fs", c.task.fs, "task");
    read(t, "noise_std", c.task.noise_std, "task");
    read(t, "ring_jitter", c.task.ring_jitter, "task");
    read(t, "radius", c.task.radius, "task");
    read(t, "clean_mix_prob", c.task.clean_mix_prob, "task");
    read(t, "t60_min", c.task.t60_min, "task");
    read(t, "t60_max", c.task.t60_max, "task");
    read(t, "sdr_min", c.task.sdr_min, "task");
    read(t, "sdr_max", c.task.sdr_max, "task");
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    detail::reject_unknown(m, "model",
                           {"backbone", "hidden", "depth", "kernel", "time_freqs", "max_freq",
                            "cond_width", "activation"});
    std::string backbone = nn::to_string(c.model.backbone);
    std::string activation = nn::to_string(c.model.activation);
    read(m, "backbone", backbone, "model");
    read(m, "activation", activation, "model");
    c.model.backbone = nn::backbone_from_string(backbone);
    c.model.activation = nn::activation_from_string(activation);
    read(m, "hidden", c.model.hidden, "model");
    read(m, "depth", c.model.depth, "model");
    read(m, "kernel", c.model.kernel, "model");
    read(m, "time_freqs", c.model.time_freqs, "model");
    read(m, "max_freq", c.model.max_freq, "model");
    read(m, "cond_width", c.model.cond_width, "model");
  }
  if (j.contains("coupling")) {
    const auto& cp = j["coupling"];
    detail::reject_unknown(cp, "coupling",
                           {"mode", "n_c", "solver", "epsilon", "epsilon_relative", "max_iter",
                            "tol", "pairing"});
    std::string mode = to_string(c.coupling.mode);
    std::string solver = to_string(c.coupling.solver.kind);
    std::string pairing = to_string(c.coupling.solver.pairing);
    read(cp, "mode", mode, "coupling");
    read(cp, "solver", solver, "coupling");
    read(cp, "pairing", pairing, "coupling");
    c.coupling.mode = parse_enum<CouplingMode>(
        "coupling.mode", mode,
        {{"independent", CouplingMode::independent}, {"chunked_ot", CouplingMode::chunked_ot}});
    c.coupling.solver.kind = parse_enum<SolverKind>(
        "coupling.solver", solver, {{"exact", SolverKind::exact}, {"sinkhorn", SolverKind::sinkhorn}});
    c.coupling.solver.pairing = parse_enum<PairingMode>(
        "coupling.pairing", pairing,
        {{"sample", PairingMode::sample}, {"argmax", PairingMode::argmax}});
    read(cp, "n_c", c.coupling.n_c, "coupling");
    read(cp, "epsilon", c.coupling.solver.epsilon, "coupling");
    read(cp, "epsilon_relative", c.coupling.solver.epsilon_relative, "coupling");
    read(cp, "max_iter", c.coupling.solver.max_iter, "coupling");
    read(cp, "tol", c.coupling.solver.tol, "coupling");
  }
  if (j.contains("training")) {
    const auto& t = j["training"];
    detail::reject_unknown(t, "training",
                           {"iterations", "batch_size", "learning_rate", "dropout", "seed",
                            "log_every"});
    read(t, "iterations", c.training.iterations, "training");
    read(t, "batch_size", c.training.batch_size, "training");
    read(t, "learning_rate", c.training.learning_rate, "training");
    read(t, "dropout", c.training.dropout, "training");
    read(t, "seed", c.training.seed, "training");
    read(t, "log_every", c.training.log_every, "training");
  }
  if (j.contains("sampling")) {
    const auto& s = j["sampling"];
    detail::reject_unknown(s, "sampling", {"schedule", "steps", "integrator", "gamma"});
    std::string schedule = to_string(c.sampling.schedule);
    std::string integrator = to_string(c.sampling.integrator);
    read(s, "schedule", schedule, "sampling");
    read(s, "integrator", integrator, "sampling");
    c.sampling.schedule = parse_enum<ScheduleKind>(
        "sampling.schedule", schedule,
        {{"uniform", ScheduleKind::uniform}, {"raised_cosine", ScheduleKind::raised_cosine}});
    c.sampling.integrator = parse_enum<Integrator>(
        "sampling.integrator", integrator,
        {{"euler", Integrator::euler}, {"midpoint", Integrator::midpoint}});
    read(s, "steps", c.sampling.steps, "sampling");
    read(s, "gamma", c.sampling.gamma, "sampling");
  }
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    detail::reject_unknown(e, "eval",
                           {"count", "gammas", "source_condition", "target_condition", "workers"});
    read(e, "count", c.eval.count, "eval");
    read(e, "gammas", c.eval.gammas, "eval");
    read(e, "source_condition", c.eval.source_condition, "eval");
    read(e, "target_condition", c.eval.target_condition, "eval");
    read(e, "workers", c.eval.workers, "eval");
  }
  detail::read(j, "output", c.output, "config");
  return c;
}

/// Applies "a.b.c=value"; value is parsed as JSON when possible, else taken
/// as a string.
inline void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ValidationError("override '" + assignment + "' must look like key.path=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (key.empty()) throw ValidationError("override '" + assignment + "': empty key");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

inline void validate(const ExperimentConfig& c) {
  c.task.validate();
  const std::size_t n = c.task.dim();
  if (c.coupling.mode == CouplingMode::chunked_ot) {
    const std::size_t n_c = c.coupling.n_c == 0 ? n : c.coupling.n_c;
    if (n % n_c != 0) {
      throw ValidationError("coupling.n_c=" + std::to_string(n_c) +
                            " does not divide the sample length N=" + std::to_string(n));
    }
    if (c.coupling.solver.kind == SolverKind::sinkhorn && !(c.coupling.solver.epsilon > 0.0)) {
      throw ValidationError("coupling.epsilon must be > 0 for the sinkhorn solver");
    }
  }
  if (c.training.batch_size < 1) throw ValidationError("training.batch_size must be >= 1");
  if (!(c.training.learning_rate > 0.0)) throw ValidationError("training.learning_rate must be > 0");
  if (!(c.training.dropout >= 0.0 && c.training.dropout <= 1.0)) {
    throw ValidationError("training.dropout must lie in [0, 1]");
  }
  if (c.training.log_every < 1) throw ValidationError("training.log_every must be >= 1");
  if (c.sampling.steps < 1) throw ValidationError("sampling.steps must be >= 1");
  if (!std::isfinite(c.sampling.gamma)) throw ValidationError("sampling.gamma must be finite");
  if (c.model.backbone == nn::Backbone::conv1d && c.task.family != tasks::Family::toy_signal) {
    throw ValidationError("model.backbone=conv1d requires task.family=toy_signal");
  }
}

inline ExperimentConfig load_config(const std::string& path,
                                    const std::vector<std::string>& overrides = {}) {
  json j = json::object();
  if (!path.empty()) {
    try {
      j = json::parse(io::read_text(path));
    } catch (const json::parse_error& e) {
      throw ValidationError("config " + path + ": " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(j, o);
  auto c = config_from_json(j);
  validate(c);
  return c;
}

inline nn::ModelConfig model_config_for(const ExperimentConfig& c) {
  nn::ModelConfig m;
  m.backbone = c.model.backbone;
  m.data_dim = c.task.dim();
  m.hidden = c.model.hidden;
  m.depth = c.model.depth;
  m.kernel = c.model.kernel;
  m.time_freqs = c.model.time_freqs;
  m.max_freq = c.model.max_freq;
  m.cond_width = c.model.cond_width;
  m.activation = c.model.activation;
  for (const auto& d : c.task.descriptors()) {
    m.cond_offset.push_back(0.5 * (d.lo + d.hi));
    m.cond_scale.push_back(0.5 * (d.hi - d.lo));
  }
  m.cond_dim = m.cond_offset.size();
  return m;
}

/// Independent child seed for a named purpose.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

// ---------------------------------------------------------------------------
// Training

struct TrainOutcome {
  nn::VectorFieldModel<float> model;
  nn::OptimizerState<float> optimizer;
  std::vector<double> losses;  // one per iteration
};

using ProgressFn = std::function<void(std::size_t iteration, double window_loss)>;

/// Sample data, couple with noise, regress the field onto x1 - x0 at random
/// tau with condition dropout, take an Adam step; repeat.
inline TrainOutcome train(const ExperimentConfig& cfg, const ProgressFn& progress = {}) {
  validate(cfg);
  TrainOutcome out;
  out.model = nn::VectorFieldModel<float>(model_config_for(cfg));
  out.model.initialize(derive_seed(cfg.training.seed, 1));
  nn::AdamConfig adam;
  adam.lr = cfg.training.learning_rate;
  out.optimizer = nn::OptimizerState<float>(out.model.parameter_count(), adam);

  auto stream = tasks::make_training_stream(cfg.task, derive_seed(cfg.training.seed, 2));
  std::mt19937_64 rng(derive_seed(cfg.training.seed, 3));
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  std::bernoulli_distribution drop(cfg.training.dropout);
  const std::size_t n = cfg.task.dim();
  const std::size_t n_c = cfg.coupling.n_c == 0 ? n : cfg.coupling.n_c;
  const std::size_t b = cfg.training.batch_size;

  std::vector<float> grads(out.model.parameter_count());
  std::vector<float> tau(b);
  std::vector<std::uint8_t> mask(b);
  double window = 0.0;
  out.losses.reserve(cfg.training.iterations);
  for (std::size_t it = 1; it <= cfg.training.iterations; ++it) {
    const auto batch = stream.next(b);
    const Coupling<float> coupling =
        cfg.coupling.mode == CouplingMode::independent
            ? couple_independent(batch, rng)
            : couple_chunked_ot(batch, n_c, cfg.coupling.solver, rng);
    for (std::size_t i = 0; i < b; ++i) {
      tau[i] = std::min(1.0f, unit(rng));
      mask[i] = drop(rng) ? 1 : 0;
    }
    std::fill(grads.begin(), grads.end(), 0.0f);
    const auto rep = cfm_loss<float>(out.model, coupling, tau, mask, grads);
    if (!std::isfinite(rep.loss)) {
      throw DivergenceError("training diverged: non-finite loss at iteration " +
                            std::to_string(it));
    }
    nn::adam_step<float>(out.optimizer, out.model.parameters(), grads);
    out.losses.push_back(rep.loss);
    window += rep.loss;
    if (it % cfg.training.log_every == 0) {
      if (progress) progress(it, window / static_cast<double>(cfg.training.log_every));
      window = 0.0;
    }
  }
  return out;
}

inline void write_loss_csv(const std::string& path, const std::vector<double>& losses,
                           std::size_t log_every) {
  io::CsvWriter w(path, {"iteration", "loss"});
  double window = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    window += losses[i];
    if ((i + 1) % log_every == 0) {
      w.write_row({std::to_string(i + 1),
                   io::format_float(static_cast<float>(window / static_cast<double>(log_every)))});
      window = 0.0;
    }
  }
}

struct TrainPaths {
  std::string checkpoint;
  std::string loss_csv;
  std::string config;
};

inline TrainPaths cmd_train(const ExperimentConfig& cfg, TrainOutcome* keep = nullptr,
                            const ProgressFn& progress = {}) {
  auto outcome = train(cfg, progress);
  std::filesystem::create_directories(cfg.output);
  TrainPaths p;
  p.checkpoint = (std::filesystem::path(cfg.output) / "model.ckpt").string();
  p.loss_csv = (std::filesystem::path(cfg.output) / "loss.csv").string();
  p.config = (std::filesystem::path(cfg.output) / "config.json").string();
  nn::save_checkpoint<float>(p.checkpoint, outcome.model, &outcome.optimizer, to_json(cfg),
                             cfg.training.seed);
  write_loss_csv(p.loss_csv, outcome.losses, cfg.training.log_every);
  std::ofstream(p.config) << to_json(cfg).dump(2) << '\n';
  if (keep) *keep = std::move(outcome);
  return p;
}

// ---------------------------------------------------------------------------
// Models on disk

struct LoadedModel {
  std::string name;
  nn::VectorFieldModel<float> model;
  ExperimentConfig config;
};

inline LoadedModel load_model(const std::string& path) {
  auto ck = nn::load_checkpoint<float>(path);
  LoadedModel m;
  m.name = std::filesystem::path(path).parent_path().filename().string();
  if (m.name.empty()) m.name = std::filesystem::path(path).stem().string();
  m.model = std::move(ck.model);
  m.config = config_from_json(ck.training);
  return m;
}

/// Draws count task samples; a non-empty condition pins the condition where
/// the task family supports it.
inline SignalBatch<float> draw_task(const tasks::TaskSpec& spec, std::size_t count,
                                    std::uint64_t seed,
                                    const std::vector<double>& condition = {}) {
  std::mt19937_64 rng(seed);
  if (spec.family == tasks::Family::cond_ring && !condition.empty()) {
    return tasks::gen_cond_ring(count, rng, spec.ring_jitter, condition.at(0));
  }
  if (spec.family == tasks::Family::toy_signal && !condition.empty()) {
    SignalBatch<float> b;
    b.values = Grid<float>(count, spec.length);
    b.condition = Grid<float>(count, condition.size());
    b.present.assign(count, 1);
    for (std::size_t i = 0; i < count; ++i) {
      auto x = tasks::gen_toy_signal_one(spec.length, spec.fs, rng);
      if (spec.degradation == tasks::Degradation::reverb) {
        const auto k = tasks::make_reverb_kernel(condition.at(0), spec.fs,
                                                 static_cast<double>(spec.length) / spec.fs, rng);
        x = tasks::apply_reverb(x, k.taps);
        float peak = 0.0f;
        for (float v : x) peak = std::max(peak, std::abs(v));
        if (peak > 0.0f) {
          for (float& v : x) v *= 0.9f / peak;
        }
        b.condition(i, 0) = static_cast<float>(k.t60);
        if (condition.size() > 1) b.condition(i, 1) = static_cast<float>(k.c50);
      } else if (condition.at(0) < analysis::kDbCap) {
        x = tasks::clip_to_sdr(x, condition.at(0)).signal;
        b.condition(i, 0) = static_cast<float>(condition.at(0));
      } else {
        b.condition(i, 0) = static_cast<float>(analysis::kDbCap);
      }
      std::copy(x.begin(), x.end(), b.values.row(i).begin());
    }
    return b;
  }
  tasks::TrainingStream stream(spec, seed);
  return stream.next(count);
}

/// Condition measured from a generated sample; NaN where not measurable.
inline std::vector<double> measure_condition(const tasks::TaskSpec& spec,
                                             std::span<const float> sample,
                                             std::span<const float> clean_reference = {}) {
  switch (spec.family) {
    case tasks::Family::cond_ring:
      return {std::hypot(static_cast<double>(sample[0]), static_cast<double>(sample[1]))};
    case tasks::Family::toy_signal:
      if (spec.degradation == tasks::Degradation::reverb) {
        const auto est = analysis::estimate_decay(sample, spec.fs);
        return {est.ok ? est.t60 : std::numeric_limits<double>::quiet_NaN(),
                std::numeric_limits<double>::quiet_NaN()};
      }
      if (clean_reference.empty()) return {std::numeric_limits<double>::quiet_NaN()};
      return {analysis::sdr(clean_reference, sample)};
    default:
      return {};
  }
}

inline std::vector<std::string> condition_names(const tasks::TaskSpec& spec) {
  std::vector<std::string> names;
  for (const auto& d : spec.descriptors()) names.push_back(d.name);
  return names;
}

inline double row_distance(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

inline Grid<float> condition_row(const std::vector<double>& c) {
  Grid<float> g(c.empty() ? 0 : 1, c.size());
  for (std::size_t j = 0; j < c.size(); ++j) g(0, j) = static_cast<float>(c[j]);
  return g;
}

// ---------------------------------------------------------------------------
// Curvature

struct CurvatureStudy {
  std::vector<std::string> names;
  std::vector<analysis::CurvatureProfile> profiles;
};

/// Forward-integrates every eval point with each model and profiles the
/// per-step curvature across the batch.
inline CurvatureStudy curvature_study(const std::vector<const LoadedModel*>& models,
                                      const Grid<float>& points,
                                      const std::vector<SamplingConfig>& sampling) {
  if (models.empty()) throw ValidationError("curvature: no models");
  CurvatureStudy study;
  std::optional<TimeSchedule> shared;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto& m = *models[i];
    const auto& s = sampling.at(i);
    const TimeSchedule sched = make_schedule(s.schedule, s.steps);
    if (shared && !(*shared == sched)) {
      throw ValidationError("curvature: model '" + m.name +
                            "' uses a different sampling schedule; profiles are not comparable");
    }
    shared = sched;
    if (m.model.config().data_dim != points.cols()) {
      throw ShapeError("curvature: model '" + m.name + "' expects dimension " +
                       std::to_string(m.model.config().data_dim));
    }
    auto res = integrate(m.model, points, sched, Direction::forward, s.integrator,
                         Guidance<float>{}, true);
    study.names.push_back(m.name);
    study.profiles.push_back(
        analysis::curvature_profile<float>(std::span<const Trajectory<float>>(res.trajectories)));
  }
  return study;
}

inline void write_curvature_csv(const std::string& path, const CurvatureStudy& study) {
  io::CsvWriter w(path, {"model", "step", "tau", "mean", "p25", "p75"});
  for (std::size_t m = 0; m < study.profiles.size(); ++m) {
    const auto& p = study.profiles[m];
    for (std::size_t i = 0; i < p.steps(); ++i) {
      w.write_row({study.names[m], std::to_string(i), io::format_double(p.schedule.taus[i]),
                   io::format_float(static_cast<float>(p.mean[i])),
                   io::format_float(static_cast<float>(p.p25[i])),
                   io::format_float(static_cast<float>(p.p75[i]))});
    }
  }
}

// ---------------------------------------------------------------------------
// Plotting

enum class PlotKind { curvature, tradeoff, scatter2d };

inline PlotKind plot_kind_from_string(const std::string& s) {
  return parse_enum<PlotKind>("plot kind", s,
                              {{"curvature", PlotKind::curvature},
                               {"tradeoff", PlotKind::tradeoff},
                               {"scatter2d", PlotKind::scatter2d}});
}

inline std::string render_plot(const std::vector<std::string>& csv_paths, PlotKind kind) {
  svg::Chart chart;
  auto series_for = [&](const std::string& label) -> svg::Series& {
    for (auto& s : chart.series) {
      if (s.label == label) return s;
    }
    chart.series.push_back({});
    chart.series.back().label = label;
    return chart.series.back();
  };
  for (const auto& path : csv_paths) {
    const auto t = io::read_csv(path);
    switch (kind) {
      case PlotKind::curvature: {
        chart.title = "Trajectory curvature";
        chart.x_label = "tau";
        chart.y_label = "curvature";
        const auto cm = t.column("model"), ct = t.column("tau"), cmean = t.column("mean"),
                   c25 = t.column("p25"), c75 = t.column("p75");
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
          auto& s = series_for(t.rows[r][cm]);
          s.x.push_back(io::csv_number(t, r, ct, path));
          s.y.push_back(io::csv_number(t, r, cmean, path));
          s.band_lo.push_back(io::csv_number(t, r, c25, path));
          s.band_hi.push_back(io::csv_number(t, r, c75, path));
        }
        break;
      }
      case PlotKind::tradeoff: {
        chart.title = "Accuracy vs consistency";
        chart.x_label = "condition MAE";
        chart.y_label = "mean displacement";
        const auto cm = t.column("model"), cn = t.column("n_c"), cx = t.column("cond_mae"),
                   cy = t.column("disp_mean");
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
          auto& s = series_for(t.rows[r][cm] + " (n_c=" + t.rows[r][cn] + ")");
          s.style = svg::Style::scatter;
          s.x.push_back(io::csv_number(t, r, cx, path));
          s.y.push_back(io::csv_number(t, r, cy, path));
        }
        break;
      }
      case PlotKind::scatter2d: {
        chart.title = "Samples";
        chart.x_label = "x0";
        chart.y_label = "x1";
        if (t.header.size() < 2) throw FormatError(path + ":1: need at least two columns");
        auto& s = series_for(std::filesystem::path(path).stem().string());
        s.style = svg::Style::scatter;
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
          s.x.push_back(io::csv_number(t, r, 0, path));
          s.y.push_back(io::csv_number(t, r, 1, path));
        }
        break;
      }
    }
  }
  return svg::render(chart);
}

inline void cmd_plot(const std::vector<std::string>& csv_paths, PlotKind kind,
                     const std::string& out_svg) {
  if (csv_paths.empty()) throw ValidationError("plot: no input csv files");
  const std::string doc = render_plot(csv_paths, kind);
  std::ofstream f(out_svg, std::ios::trunc);
  if (!f) throw Error("cannot open svg for writing: " + out_svg);
  f << doc;
}

inline CurvatureStudy cmd_curvature(const std::vector<std::string>& checkpoints,
                                    const Grid<float>* eval_points, std::size_t count,
                                    std::uint64_t seed, const std::string& out_dir,
                                    const std::optional<SamplingConfig>& sampling_override = {}) {
  std::vector<LoadedModel> models;
  for (const auto& p : checkpoints) models.push_back(load_model(p));
  if (models.empty()) throw ValidationError("curvature: no checkpoints given");
  // Repeated directory names are disambiguated by position.
  for (std::size_t i = 0; i < models.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (models[j].name == models[i].name) models[i].name += "_" + std::to_string(i);
    }
  }
  const std::size_t dim = models.front().model.config().data_dim;
  for (const auto& m : models) {
    if (m.model.config().data_dim != dim) {
      throw ShapeError("curvature: checkpoints differ in data dimension");
    }
  }
  Grid<float> points = eval_points
                           ? *eval_points
                           : draw_task(models.front().config.task, count, seed).values;
  std::vector<const LoadedModel*> ptrs;
  std::vector<SamplingConfig> sampling;
  for (const auto& m : models) {
    ptrs.push_back(&m);
    sampling.push_back(sampling_override.value_or(m.config.sampling));
  }
  auto study = curvature_study(ptrs, points, sampling);
  std::filesystem::create_directories(out_dir);
  const auto csv = (std::filesystem::path(out_dir) / "curvature.csv").string();
  write_curvature_csv(csv, study);
  cmd_plot({csv}, PlotKind::curvature, (std::filesystem::path(out_dir) / "curvature.svg").string());
  return study;
}

// ---------------------------------------------------------------------------
// Bridge

struct BridgeReport {
  Grid<float> input;
  Grid<float> latent;
  Grid<float> output;
  std::vector<std::vector<double>> measured;  // per sample
  std::vector<double> displacement;           // ||output - input||
};

/// Runs the encode/decode bridge on a batch and measures the outputs.
inline BridgeReport run_bridge(const LoadedModel& m, const Grid<float>& input,
                               const std::vector<double>& target, double gamma,
                               const SamplingConfig& sampling,
                               const Grid<float>* clean_reference = nullptr) {
  const auto& mc = m.model.config();
  if (input.cols() != mc.data_dim) {
    throw ShapeError("bridge: input dimension " + std::to_string(input.cols()) +
                     " does not match model dimension " + std::to_string(mc.data_dim));
  }
  if (!target.empty() && target.size() != mc.cond_dim) {
    throw ShapeError("bridge: target condition has " + std::to_string(target.size()) +
                     " values, model expects " + std::to_string(mc.cond_dim));
  }
  BridgeRequest<float> req;
  req.input = input;
  req.target_condition = condition_row(target);
  req.gamma = static_cast<float>(gamma);
  req.steps = sampling.steps;
  req.schedule = sampling.schedule;
  req.integrator = sampling.integrator;
  auto res = gfb_transfer(m.model, req);
  BridgeReport rep;
  rep.input = input;
  rep.latent = std::move(res.latent);
  rep.output = std::move(res.output);
  for (std::size_t i = 0; i < input.rows(); ++i) {
    rep.measured.push_back(measure_condition(
        m.config.task, rep.output.row(i),
        clean_reference ? clean_reference->row(i) : std::span<const float>{}));
    rep.displacement.push_back(row_distance(rep.output.row(i), input.row(i)));
  }
  return rep;
}

inline void write_samples(const std::string& base, const tasks::TaskSpec& spec,
                          const Grid<float>& samples, const Grid<float>& conditions) {
  if (spec.family == tasks::Family::toy_signal) {
    io::SignalFile sf{samples, spec.fs, condition_names(spec), conditions};
    io::write_signal_file(base + ".f32", sf);
  } else {
    io::write_points_csv(base + ".csv", samples);
  }
}

inline BridgeReport cmd_bridge(const std::string& checkpoint, const Grid<float>* input,
                               std::size_t count, std::uint64_t seed,
                               const std::vector<double>& source_condition,
                               const std::vector<double>& target, double gamma,
                               const std::string& out_dir,
                               const std::optional<SamplingConfig>& sampling_override = {}) {
  const auto m = load_model(checkpoint);
  Grid<float> in;
  std::optional<Grid<float>> clean;
  if (input) {
    in = *input;
  } else {
    in = draw_task(m.config.task, count, seed, source_condition).values;
    if (m.config.task.family == tasks::Family::toy_signal &&
        m.config.task.degradation == tasks::Degradation::clip) {
      // Same seed, no degradation: the clean signals behind the inputs.
      std::mt19937_64 rng(seed);
      clean = tasks::gen_toy_signal(count, m.config.task.length, m.config.task.fs, rng).values;
    }
  }
  const auto rep = run_bridge(m, in, target, gamma, sampling_override.value_or(m.config.sampling),
                              clean ? &*clean : nullptr);
  std::filesystem::create_directories(out_dir);
  const auto dir = std::filesystem::path(out_dir);
  const Grid<float> tgt(in.rows(), target.size(), [&] {
    std::vector<float> v;
    for (std::size_t i = 0; i < in.rows(); ++i) {
      for (double c : target) v.push_back(static_cast<float>(c));
    }
    return v;
  }());
  write_samples((dir / "input").string(), m.config.task, rep.input,
                Grid<float>(in.rows(), target.size()));
  write_samples((dir / "latent").string(), m.config.task, rep.latent,
                Grid<float>(in.rows(), target.size()));
  write_samples((dir / "output").string(), m.config.task, rep.output, tgt);

  std::vector<std::string> header{"index"};
  for (const auto& n : condition_names(m.config.task)) header.push_back("measured_" + n);
  header.push_back("displacement");
  io::CsvWriter w((dir / "bridge_metrics.csv").string(), header);
  for (std::size_t i = 0; i < in.rows(); ++i) {
    std::vector<std::string> row{std::to_string(i)};
    for (double v : rep.measured[i]) row.push_back(io::format_float(static_cast<float>(v)));
    row.push_back(io::format_float(static_cast<float>(rep.displacement[i])));
    w.write_row(row);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Eval

inline const std::vector<std::string>& eval_columns() {
  static const std::vector<std::string> cols{"model", "task",  "n_c",        "gamma",
                                             "count", "w2",    "w2_baseline", "cond_mae",
                                             "disp_mean", "disp_median"};
  return cols;
}

struct EvalRow {
  std::string model;
  std::string task;
  std::size_t n_c = 0;
  double gamma = 1.0;
  std::size_t count = 0;
  double w2 = 0.0;
  double w2_baseline = 0.0;
  double cond_mae = std::numeric_limits<double>::quiet_NaN();
  double disp_mean = 0.0;
  double disp_median = 0.0;
};

/// One (model, gamma) cell. Inputs are shared across cells; the reference
/// draws use the cell seed.
inline EvalRow evaluate_cell(const LoadedModel& m, const EvalConfig& ev, double gamma,
                             std::uint64_t input_seed, std::uint64_t cell_seed) {
  if (ev.count < 2) throw ValidationError("eval.count must be >= 2");
  const auto& task = m.config.task;
  const bool conditional = m.model.config().cond_dim > 0;
  EvalRow row;
  row.model = m.name;
  row.task = tasks::to_string(task.family);
  row.n_c = m.config.coupling.mode == CouplingMode::independent
                ? 0
                : (m.config.coupling.n_c == 0 ? task.dim() : m.config.coupling.n_c);
  row.gamma = gamma;
  row.count = ev.count;

  const auto& target = ev.target_condition;
  if (conditional && target.size() != m.model.config().cond_dim) {
    throw ValidationError("eval.target_condition must have " +
                          std::to_string(m.model.config().cond_dim) + " values");
  }
  const auto inputs = draw_task(task, ev.count, input_seed, ev.source_condition);
  std::optional<Grid<float>> clean;
  if (task.family == tasks::Family::toy_signal && task.degradation == tasks::Degradation::clip &&
      !ev.source_condition.empty()) {
    std::mt19937_64 rng(input_seed);
    clean = tasks::gen_toy_signal(ev.count, task.length, task.fs, rng).values;
  }
  const auto rep = run_bridge(m, inputs.values, conditional ? target : std::vector<double>{},
                              gamma, m.config.sampling, clean ? &*clean : nullptr);

  // Distribution fit: decode fresh noise, compare with a fresh target draw.
  std::mt19937_64 rng(cell_seed);
  const Grid<float> noise = draw_standard_normal<float>(ev.count, task.dim(), rng);
  Guidance<float> guide{condition_row(conditional ? target : std::vector<double>{}),
                        static_cast<float>(gamma)};
  const auto generated =
      integrate(m.model, noise, make_schedule(m.config.sampling.schedule, m.config.sampling.steps),
                Direction::backward, m.config.sampling.integrator, guide)
          .x_end;
  const auto ref_a = draw_task(task, ev.count, derive_seed(cell_seed, 1),
                               conditional ? target : std::vector<double>{});
  const auto ref_b = draw_task(task, ev.count, derive_seed(cell_seed, 2),
                               conditional ? target : std::vector<double>{});
  row.w2 = analysis::empirical_w2(generated, ref_a.values);
  row.w2_baseline = analysis::empirical_w2(ref_b.values, ref_a.values);

  if (conditional) {
    double err = 0.0;
    std::size_t used = 0;
    for (const auto& meas : rep.measured) {
      for (std::size_t k = 0; k < meas.size() && k < target.size(); ++k) {
        if (std::isfinite(meas[k])) {
          err += std::abs(meas[k] - target[k]);
          ++used;
        }
      }
    }
    if (used > 0) row.cond_mae = err / static_cast<double>(used);
  }
  double s = 0.0;
  for (double d : rep.displacement) s += d;
  row.disp_mean = s / static_cast<double>(rep.displacement.size());
  row.disp_median = analysis::percentile(rep.displacement, 50.0);
  return row;
}

inline std::vector<EvalRow> cmd_eval(const std::vector<std::string>& checkpoints,
                                     const EvalConfig& ev, std::uint64_t seed,
                                     const std::string& out_csv) {
  if (ev.count < 2) throw ValidationError("eval.count must be >= 2");
  if (checkpoints.empty()) throw ValidationError("eval: no checkpoints given");
  std::vector<LoadedModel> models;
  for (const auto& p : checkpoints) models.push_back(load_model(p));

  struct Cell {
    std::size_t model;
    double gamma;
  };
  std::vector<Cell> cells;
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (models[i].model.config().cond_dim == 0) {
      cells.push_back({i, 1.0});
    } else {
      for (double g : ev.gammas) cells.push_back({i, g});
    }
  }
  std::vector<EvalRow> rows(cells.size());
  std::vector<std::string> errors(cells.size());
  const std::uint64_t input_seed = derive_seed(seed, 100);
  auto run = [&](std::size_t k) {
    try {
      rows[k] = evaluate_cell(models[cells[k].model], ev, cells[k].gamma, input_seed,
                              derive_seed(seed, 1000 + k));
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(ev.workers, cells.size()));
  if (workers == 1) {
    for (std::size_t k = 0; k < cells.size(); ++k) run(k);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t k = w; k < cells.size(); k += workers) run(k);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw Error("eval: " + e);
  }

  if (!out_csv.empty()) {
    const auto parent = std::filesystem::path(out_csv).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    io::CsvWriter w(out_csv, eval_columns(), true);
    for (const auto& r : rows) {
      w.write_row({r.model, r.task, std::to_string(r.n_c), io::format_double(r.gamma),
                   std::to_string(r.count), io::format_float(static_cast<float>(r.w2)),
                   io::format_float(static_cast<float>(r.w2_baseline)),
                   io::format_float(static_cast<float>(r.cond_mae)),
                   io::format_float(static_cast<float>(r.disp_mean)),
                   io::format_float(static_cast<float>(r.disp_median))});
    }
  }
  return rows;
}

}  // namespace gfb::experiment

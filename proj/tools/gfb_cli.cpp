// Command-line front end: train, curvature, bridge, eval, plot.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "gfb/gfb.hpp"

namespace ex = gfb::experiment;

namespace {

gfb::Grid<float> read_input(const std::string& path) {
  if (path.size() > 4 && path.substr(path.size() - 4) == ".csv") {
    return gfb::io::read_points_csv(path);
  }
  return gfb::io::read_signal_file(path).signals;
}

struct SamplingFlags {
  std::string schedule;
  std::size_t steps = 0;
  std::string integrator;

  void add(CLI::App* cmd) {
    cmd->add_option("--schedule", schedule, "uniform | raised_cosine (default: from checkpoint)");
    cmd->add_option("--steps", steps, "integration steps (default: from checkpoint)");
    cmd->add_option("--integrator", integrator, "euler | midpoint (default: from checkpoint)");
  }

  std::optional<ex::SamplingConfig> resolve() const {
    if (schedule.empty() && steps == 0 && integrator.empty()) return std::nullopt;
    nlohmann::json j = {{"sampling", nlohmann::json::object()}};
    if (!schedule.empty()) j["sampling"]["schedule"] = schedule;
    if (steps != 0) j["sampling"]["steps"] = steps;
    if (!integrator.empty()) j["sampling"]["integrator"] = integrator;
    return ex::config_from_json(j).sampling;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian flow bridges: training, bridging, curvature and evaluation"};
  app.require_subcommand(1);

  // train
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
  auto* train = app.add_subcommand("train", "train a vector field and write a checkpoint");
  train->add_option("--config", config_path, "experiment config (JSON)");
  train->add_option("--set", overrides, "dotted-key override, e.g. training.iterations=2000");
  train->add_option("--seed", seed, "master seed");
  train->add_option("--out", out, "output directory");

  // curvature
  std::vector<std::string> checkpoints;
  std::string eval_input;
  std::size_t count = 256;
  std::uint64_t seed_plain = 0;
  SamplingFlags sampling;
  auto* curv = app.add_subcommand("curvature", "per-step trajectory curvature of one or more models");
  curv->add_option("--checkpoint", checkpoints, "checkpoint file(s)")->required();
  curv->add_option("--input", eval_input, "eval points (.csv) or signal file");
  curv->add_option("--count", count, "task draws when no input is given");
  curv->add_option("--seed", seed_plain, "seed for task draws");
  curv->add_option("--out", out, "output directory")->required();
  sampling.add(curv);

  // bridge
  std::string checkpoint;
  std::vector<double> source, target;
  double gamma = 1.0;
  auto* bridge = app.add_subcommand("bridge", "encode inputs to noise and decode under a target");
  bridge->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  bridge->add_option("--input", eval_input, "input points (.csv) or signal file");
  bridge->add_option("--count", count, "task draws when no input is given");
  bridge->add_option("--source", source, "condition for the task draw");
  bridge->add_option("--target", target, "target condition");
  bridge->add_option("--gamma", gamma, "guidance scale");
  bridge->add_option("--seed", seed_plain, "seed for task draws");
  bridge->add_option("--out", out, "output directory")->required();
  SamplingFlags bridge_sampling;
  bridge_sampling.add(bridge);

  // eval
  std::optional<std::size_t> eval_count, workers;
  std::vector<double> gammas;
  auto* eval = app.add_subcommand("eval", "metrics over a (gamma, n_c) grid, appended to a CSV");
  eval->add_option("--checkpoint", checkpoints, "checkpoint file(s)")->required();
  eval->add_option("--config", config_path, "config whose eval section is used");
  eval->add_option("--set", overrides, "dotted-key override, e.g. eval.count=128");
  eval->add_option("--count", eval_count, "samples per cell");
  eval->add_option("--gammas", gammas, "guidance scales");
  eval->add_option("--source", source, "source condition for bridged inputs");
  eval->add_option("--target", target, "target condition");
  eval->add_option("--workers", workers, "parallel cells");
  eval->add_option("--seed", seed_plain, "master seed");
  eval->add_option("--out", out, "output CSV")->required();

  // plot
  std::string kind;
  std::vector<std::string> inputs;
  auto* plot = app.add_subcommand("plot", "render CSV results to SVG");
  plot->add_option("--kind", kind, "curvature | tradeoff | scatter2d")->required();
  plot->add_option("--input", inputs, "CSV file(s)")->required();
  plot->add_option("--out", out, "output SVG")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      if (seed) overrides.push_back("training.seed=" + std::to_string(*seed));
      if (!out.empty()) overrides.push_back("output=\"" + out + "\"");
      const auto cfg = ex::load_config(config_path, overrides);
      const auto paths = ex::cmd_train(cfg, nullptr, [](std::size_t it, double loss) {
        std::cout << "iter " << it << " loss " << gfb::io::format_double(loss) << '\n';
      });
      std::cout << "checkpoint " << paths.checkpoint << '\n';
    } else if (*curv) {
      std::optional<gfb::Grid<float>> pts;
      if (!eval_input.empty()) pts = read_input(eval_input);
      const auto study = ex::cmd_curvature(checkpoints, pts ? &*pts : nullptr, count, seed_plain,
                                           out, sampling.resolve());
      for (std::size_t i = 0; i < study.names.size(); ++i) {
        std::cout << study.names[i] << " mean curvature "
                  << gfb::io::format_double(study.profiles[i].time_average()) << '\n';
      }
    } else if (*bridge) {
      std::optional<gfb::Grid<float>> in;
      if (!eval_input.empty()) in = read_input(eval_input);
      const auto rep = ex::cmd_bridge(checkpoint, in ? &*in : nullptr, count, seed_plain, source,
                                      target, gamma, out, bridge_sampling.resolve());
      double d = 0.0;
      for (double v : rep.displacement) d += v;
      std::cout << "bridged " << rep.output.rows() << " samples, mean displacement "
                << gfb::io::format_double(d / static_cast<double>(rep.displacement.size()))
                << '\n';
    } else if (*eval) {
      auto cfg = ex::load_config(config_path, overrides);
      auto ev = cfg.eval;
      if (eval_count) ev.count = *eval_count;
      if (!gammas.empty()) ev.gammas = gammas;
      if (!source.empty()) ev.source_condition = source;
      if (!target.empty()) ev.target_condition = target;
      if (workers) ev.workers = *workers;
      const auto rows = ex::cmd_eval(checkpoints, ev, seed_plain, out);
      std::cout << "wrote " << rows.size() << " rows to " << out << '\n';
    } else if (*plot) {
      ex::cmd_plot(inputs, ex::plot_kind_from_string(kind), out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

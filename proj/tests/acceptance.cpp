// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "gfb/gfb.hpp"
#include "gradcheck.hpp"

using namespace gfb;
using namespace gfb::experiment;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ot::CostMatrix random_cost(std::size_t m, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Grid<double> a(m, dim), b(m, dim);
  for (double& v : a.flat()) v = n(rng);
  for (double& v : b.flat()) v = n(rng);
  return ot::cost_matrix(a, b);
}

double brute_force_min(const ot::CostMatrix& c) {
  std::vector<std::size_t> p(c.m());
  std::iota(p.begin(), p.end(), std::size_t{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += c(i, p[i]);
    best = std::min(best, s);
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

Outcome ot_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    const auto c = random_cost(6, 3, rng);
    const auto a = ot::solve_exact(c);
    worst = std::max(worst, std::abs(ot::transport_cost(c, a.sigma) - brute_force_min(c)));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && secs < 5.0,
          fmt("200 M=6 instances, max |cost - brute force| = %.2e, %.2f s", worst, secs)};
}

Outcome sinkhorn_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(102);
  double worst_gap = 0.0, worst_marginal = 0.0;
  std::size_t unconverged = 0;
  for (int k = 0; k < 50; ++k) {
    const auto c = random_cost(8, 3, rng);
    const auto plan = ot::solve_sinkhorn(c, {.epsilon = 0.01 * c.mean()});
    unconverged += plan.converged ? 0 : 1;
    double cost = 0.0;
    std::vector<double> col(8, 0.0);
    for (std::size_t i = 0; i < 8; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < 8; ++j) {
        cost += plan.pi(i, j) * c(i, j);
        row += plan.pi(i, j);
        col[j] += plan.pi(i, j);
      }
      worst_marginal = std::max(worst_marginal, std::abs(row - 0.125));
    }
    for (double s : col) worst_marginal = std::max(worst_marginal, std::abs(s - 0.125));
    const double exact = ot::transport_cost(c, ot::solve_exact(c).sigma);
    worst_gap = std::max(worst_gap, std::abs(cost * 8.0 - exact) / exact);
  }
  const double secs = seconds_since(t0);
  return {worst_gap <= 0.02 && worst_marginal <= 1e-6 && unconverged == 0 && secs < 10.0,
          fmt("50 M=8 instances, max cost gap %.3f%%, max marginal error %.2e, %zu unconverged, "
              "%.2f s",
              100.0 * worst_gap, worst_marginal, unconverged, secs)};
}

Outcome gradient_exactness() {
  nn::ModelConfig cfg;
  cfg.data_dim = 2;
  cfg.hidden = 16;
  cfg.depth = 1;  // 2 -> 16 -> 16 -> 2
  nn::VectorFieldModel<double> model(cfg);
  model.initialize(103);
  std::mt19937_64 rng(104);
  const auto c = gradcheck::random_coupling<double>(8, cfg, rng);
  std::vector<double> tau(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& t : tau) t = u(rng);
  std::vector<std::uint8_t> drop(8, 0);
  const auto probes = gradcheck::check_gradients<double>(model, c, tau, drop, 20, 1e-3, rng);
  double worst = 0.0;
  for (const auto& p : probes) worst = std::max(worst, p.rel_error);
  return {probes.size() == 20 && worst < 1e-3,
          fmt("2-16-16-2 model, %zu probes, max relative error %.2e", probes.size(), worst)};
}

Outcome coupling_dominance() {
  std::mt19937_64 rng(105);
  const std::size_t b = 8, n = 64;
  int strict = 0, violations = 0;
  for (int k = 0; k < 100; ++k) {
    tasks::TaskSpec spec;
    std::mt19937_64 draw(rng());
    auto data = SignalBatch<float>::unconditional(
        tasks::gen_toy_signal(b, n, spec.fs, draw).values);
    const auto noise = draw_standard_normal<float>(b, n, rng);
    const double indep = pairing_cost(data.values, noise);
    double prev = std::numeric_limits<double>::infinity();
    bool all_strict = true;
    for (std::size_t n_c : {n, n / 2, n / 4}) {
      const auto c = couple_chunked_ot_with_noise(data, noise, n_c, SolverConfig{}, rng);
      const double cost = pairing_cost(c.x0, c.x1);
      if (cost > indep * (1.0 + 1e-9) || cost > prev * (1.0 + 1e-9)) ++violations;
      all_strict = all_strict && cost < indep;
      prev = cost;
    }
    strict += all_strict ? 1 : 0;
  }
  return {violations == 0 && strict >= 95,
          fmt("100 draws (B=8, N=64, n_c in {64,32,16}): %d strictly cheaper at every n_c, "
              "%d ordering violations",
              strict, violations)};
}

ExperimentConfig gaussians_config(CouplingMode mode, const std::string& out) {
  ExperimentConfig c;
  c.task.family = tasks::Family::eight_gaussians;
  c.coupling.mode = mode;
  c.training.iterations = 5000;
  c.training.batch_size = 256;
  c.training.learning_rate = 1e-3;
  c.training.seed = 5;
  c.training.log_every = 500;
  c.output = out;
  return c;
}

double time_average(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

Outcome curvature_ordering(const fs::path& root, std::string& ot_checkpoint) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto indep = cmd_train(gaussians_config(CouplingMode::independent,
                                                (root / "gaussians_independent").string()));
  const auto ot = cmd_train(gaussians_config(CouplingMode::chunked_ot,
                                             (root / "gaussians_ot").string()));
  ot_checkpoint = ot.checkpoint;
  const auto study = cmd_curvature({indep.checkpoint, ot.checkpoint}, nullptr, 256, 106,
                                   (root / "curvature").string());
  const auto& ci = study.profiles[0].mean;
  const auto& co = study.profiles[1].mean;
  const double avg_i = time_average(ci), avg_o = time_average(co);
  std::size_t interior_bad = 0;
  for (std::size_t s = 1; s + 1 < ci.size(); ++s) interior_bad += co[s] < ci[s] ? 0 : 1;
  const double reduction = 1.0 - avg_o / avg_i;
  const double secs = seconds_since(t0);
  return {reduction >= 0.2 && interior_bad == 0 && secs < 600.0,
          fmt("mean curvature independent %.4f vs OT %.4f (%.1f%% lower), %zu interior steps "
              "not lower, %.0f s",
              avg_i, avg_o, 100.0 * reduction, interior_bad, secs)};
}

Outcome schedule_exactness() {
  const auto s = schedule_raised_cosine(25);
  double worst = 0.0;
  bool monotone = true;
  for (std::size_t i = 0; i <= 25; ++i) {
    const double ref = 0.5 + 0.5 * std::cos(M_PI * static_cast<double>(i) / 25.0 + M_PI);
    worst = std::max(worst, std::abs(s.taus[i] - ref));
    if (i > 0) monotone = monotone && s.taus[i] > s.taus[i - 1];
  }
  const double uniform = 1.0 / 25.0;
  const bool dense_ends = s.taus[1] - s.taus[0] < uniform && s.taus[25] - s.taus[24] < uniform &&
                          s.taus[13] - s.taus[12] > uniform;
  const bool ends = s.taus.front() == 0.0 && s.taus.back() == 1.0;
  return {worst <= 1e-12 && monotone && dense_ends && ends,
          fmt("T=25, max deviation %.1e, endpoints exact %s, monotone %s, denser at ends %s", worst,
              ends ? "yes" : "no", monotone ? "yes" : "no", dense_ends ? "yes" : "no")};
}

double median_round_trip_error(const LoadedModel& m, const Grid<float>& x, std::size_t steps) {
  BridgeRequest<float> req;
  req.input = x;
  req.steps = steps;
  req.integrator = Integrator::midpoint;
  const auto out = gfb_transfer(m.model, req).output;  // empty condition: null both ways
  std::vector<double> rel;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double norm = row_distance(x.row(i), std::vector<float>(x.cols(), 0.0f));
    rel.push_back(row_distance(out.row(i), x.row(i)) / norm);
  }
  return analysis::percentile(rel, 50.0);
}

Outcome bridge_round_trip(const std::string& checkpoint) {
  const auto m = load_model(checkpoint);
  const auto x = draw_task(m.config.task, 256, 107).values;
  const double e25 = median_round_trip_error(m, x, 25);
  const double e100 = median_round_trip_error(m, x, 100);
  return {e100 <= 0.05 && e100 < e25,
          fmt("256 points, median relative L2 error T=25: %.2e, T=100: %.2e", e25, e100)};
}

Outcome conditional_steering(const fs::path& root) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig c;
  c.task.family = tasks::Family::cond_ring;
  c.coupling.mode = CouplingMode::independent;
  c.training.iterations = 10000;
  c.training.batch_size = 128;
  c.training.learning_rate = 1e-3;
  c.training.seed = 8;
  c.training.log_every = 500;
  c.output = (root / "cond_ring").string();
  const auto paths = cmd_train(c);
  const auto m = load_model(paths.checkpoint);

  const std::size_t count = 256;
  const auto inputs = draw_task(c.task, count, 108, {0.7}).values;
  const auto rep = run_bridge(m, inputs, {1.5}, 1.0, c.sampling);
  double radius = 0.0, disp = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    radius += rep.measured[i][0];
    disp += rep.displacement[i];
  }
  radius /= count;
  disp /= count;

  // Resampling from scratch: decode fresh noise at the target.
  std::mt19937_64 rng(109);
  const auto noise = draw_standard_normal<float>(count, 2, rng);
  const auto fresh = integrate(m.model, noise, make_schedule(c.sampling.schedule, c.sampling.steps),
                               Direction::backward, c.sampling.integrator,
                               Guidance<float>{condition_row({1.5}), 1.0f})
                         .x_end;
  double scratch_disp = 0.0;
  for (std::size_t i = 0; i < count; ++i) scratch_disp += row_distance(fresh.row(i), inputs.row(i));
  scratch_disp /= count;
  const double secs = seconds_since(t0);
  return {std::abs(radius - 1.5) <= 0.15 && disp < scratch_disp && secs < 900.0,
          fmt("r 0.7 -> 1.5 at gamma=1: mean radius %.3f, displacement %.3f vs resampling %.3f, "
              "%.0f s",
              radius, disp, scratch_disp, secs)};
}

Outcome clip_accuracy() {
  std::mt19937_64 rng(110);
  double worst = 0.0;
  std::size_t unreachable = 0;
  for (int k = 0; k < 50; ++k) {
    const auto x = tasks::gen_toy_signal_one(2048, 16000.0, rng);
    for (double target : {3.0, 6.0, 12.0}) {
      const auto r = tasks::clip_to_sdr(x, target);
      unreachable += r.unreachable ? 1 : 0;
      worst = std::max(worst, std::abs(analysis::sdr<float>(x, r.signal) - target));
    }
  }
  return {worst <= 0.1 && unreachable == 0,
          fmt("50 signals x {3,6,12} dB, max |SDR - target| = %.4f dB", worst)};
}

Outcome reverb_consistency() {
  std::mt19937_64 rng(111);
  const double fs = 16000.0;
  double worst = 0.0, worst_c50 = 0.0;
  for (double t60 : {0.1, 0.3, 0.6}) {
    const auto k = tasks::make_reverb_kernel(t60, fs, 1.5 * t60 + 0.1, rng);
    const auto est = analysis::estimate_decay<float>(k.taps, fs);
    worst = std::max(worst, est.ok ? std::abs(est.t60 / t60 - 1.0) : 1.0);
    for (float scale : {0.01f, 0.5f, 4.0f}) {
      std::vector<float> scaled(k.taps);
      for (float& v : scaled) v *= scale;
      worst_c50 = std::max(worst_c50, std::abs(tasks::compute_c50(scaled, fs).db - k.c50));
    }
  }
  return {worst <= 0.1 && worst_c50 <= 1e-6,
          fmt("T60 in {0.1,0.3,0.6} s: max relative error %.2f%%; C50 scale drift %.1e dB",
              100.0 * worst, worst_c50)};
}

Outcome determinism(const fs::path& root) {
  ExperimentConfig c;
  c.task.family = tasks::Family::cond_ring;
  c.coupling.mode = CouplingMode::chunked_ot;
  c.coupling.solver.kind = SolverKind::sinkhorn;
  c.training.iterations = 200;
  c.training.batch_size = 32;
  c.training.seed = 12;
  c.training.log_every = 20;
  c.output = (root / "determinism").string();
  const auto a = cmd_train(c);
  const auto ckpt = io::read_text(a.checkpoint), loss = io::read_text(a.loss_csv);
  const auto b = cmd_train(c);
  const bool same = io::read_text(b.checkpoint) == ckpt && io::read_text(b.loss_csv) == loss;
  return {same, fmt("two runs: checkpoint (%zu bytes) and loss CSV %s", ckpt.size(),
                    same ? "bitwise identical" : "differ")};
}

}  // namespace

int main() {
  const fs::path root = fs::temp_directory_path() / "gfb_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);

  std::string ot_checkpoint;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"OT correctness", ot_correctness},
      {"Sinkhorn fidelity", sinkhorn_fidelity},
      {"gradient exactness", gradient_exactness},
      {"coupling dominance", coupling_dominance},
      {"curvature ordering", [&] { return curvature_ordering(root, ot_checkpoint); }},
      {"schedule exactness", schedule_exactness},
      {"bridge round trip",
       [&] {
         return ot_checkpoint.empty() ? Outcome{false, "no trained model"}
                                      : bridge_round_trip(ot_checkpoint);
       }},
      {"conditional steering", [&] { return conditional_steering(root); }},
      {"clip_to_sdr accuracy", clip_accuracy},
      {"toy reverb consistency", reverb_consistency},
      {"determinism", [&] { return determinism(root); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s criterion %zu: %s - %s\n", o.pass ? "PASS" : "FAIL", i + 1,
                criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}

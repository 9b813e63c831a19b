// End-to-end acceptance checks. One PASS/FAIL line per criterion; exit code 1
// if any fails. Pass criterion numbers as arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "oracles.hpp"
#include "rpl/experiment.hpp"

namespace {

using namespace rpl;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome()> run;
};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

fs::path work_dir() {
  if (const char* env = std::getenv("RPL_ACCEPTANCE_OUT")) return env;
  return fs::current_path() / "acceptance_out";
}

std::size_t worker_count() { return std::max(1u, std::thread::hardware_concurrency()); }

// -- 1 ------------------------------------------------------------------------

Outcome gradient_correctness() {
  std::size_t cases = 0;
  double worst = 0.0;
  for (std::size_t k : {1u, 3u, 5u, 7u})
    for (bool multi : {false, true})
      for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        PercepNetSpec s;
        s.in_channels = 4;
        s.blocks = {1, 1, 1, 1, 1};
        s.channels = {6, 6, 8, 8, 8};
        s.kernel_size = k;
        s.seed = 1000 * k + seed;
        const PercepNet net = build(s);
        const LossConfig cfg{0.1, multi ? LevelSelection{levels::MultiLevel{halving_scales(5)}}
                                        : LevelSelection{levels::FinalOnly{}}};
        std::mt19937_64 gen(s.seed);
        const Tensor pred = oracle::random_tensor(gen, Shape{1, 4, 32, 32});
        const Tensor target = oracle::random_tensor(gen, Shape{1, 4, 32, 32});
        const LossAndGrad lg = percep_loss_grad(net, pred, target, cfg);
        // 256 sampled coordinates keep the whole check well inside two minutes.
        std::vector<std::size_t> coords(256);
        std::uniform_int_distribution<std::size_t> pick(0, pred.size() - 1);
        for (auto& c : coords) c = pick(gen);
        auto f = [&](const Tensor& z) { return percep_loss(net, z, target, cfg); };
        const std::vector<double> fd = oracle::finite_difference_at(f, pred, coords, 1e-5);
        std::vector<double> an;
        for (std::size_t c : coords) an.push_back(lg.grad[c]);
        worst = std::max(worst, oracle::relative_error(an, fd));
        ++cases;
      }
  return {cases >= 20 && worst < 1e-5, std::to_string(cases) + " cases, worst relative error " + num(worst)};
}

// -- 2 ------------------------------------------------------------------------

Outcome conv_oracle() {
  std::mt19937_64 gen(2);
  std::uniform_int_distribution<std::size_t> small(1, 5), spatial(1, 13), kpick(0, 3);
  const std::size_t ks[] = {1, 3, 5, 7};
  double worst = 0.0;
  const std::size_t shapes = 60;
  for (std::size_t t = 0; t < shapes; ++t) {
    const Tensor x = oracle::random_tensor(gen, Shape{small(gen) % 2 + 1, small(gen), spatial(gen), spatial(gen)});
    const ConvKernel k = oracle::random_kernel(gen, small(gen), x.c(), ks[kpick(gen)]);
    worst = std::max(worst, oracle::max_abs_diff(conv2d_forward(x, k), oracle::naive_conv(x, k)));
  }
  return {worst <= 1e-10, std::to_string(shapes) + " shapes, max abs diff " + num(worst)};
}

// -- 3 ------------------------------------------------------------------------

Outcome variance_law() {
  PercepNetSpec s;
  s.in_channels = 4;
  s.blocks = {1, 1, 1, 1, 1};
  s.channels = {64, 128, 256, 512, 512};
  const VarianceReport cal = measure_variance_propagation(s, 10);
  bool band = true;
  std::string ratios, steps;
  for (const auto& l : cal.layers) {
    band = band && l.ratio >= 0.25 && l.ratio <= 4.0;
    ratios += (ratios.empty() ? "" : ",") + num(l.ratio);
    if (l.layer > 1) steps += (steps.empty() ? "" : ",") + num(l.step_ratio);
  }
  s.init = init::Gaussian{1.0};
  const VarianceReport g = measure_variance_propagation(s, 10);
  bool slopes = true;
  std::string rel;
  for (std::size_t l = 1; l < g.layers.size(); ++l) {
    const double expect = std::log(g.layers[l].factor);
    const double r = g.layers[l].step_log_slope / expect;
    slopes = slopes && g.layers[l].step_log_slope > 0.0 && std::abs(r - 1.0) <= 0.3;
    rel += (rel.empty() ? "" : ",") + num(r);
  }
  return {band && slopes, "calibrated measured/predicted [" + ratios + "] in [0.25,4]: " + (band ? "yes" : "no") +
                              " (single-step ratios across each pool [" + steps + "]); gaussian(1) slope/log f [" + rel + "] within 30%: " + (slopes ? "yes" : "no")};
}

// -- 4 ------------------------------------------------------------------------

Outcome init_table() {
  const std::pair<InitScheme, Verdict> expect[] = {
      {init::Calibrated{}, Verdict::Stable},       {init::XavierNormal{}, Verdict::Stable},
      {init::Gaussian{1.0}, Verdict::Exploded},    {init::Uniform{1.0}, Verdict::Exploded},
      {init::Gaussian{0.01}, Verdict::Vanished},   {init::Uniform{0.01}, Verdict::Vanished}};
  bool ok = true;
  std::string detail;
  for (const auto& [scheme, want] : expect) {
    const StabilityProbe p = probe_stability(scheme, 16, 3);
    std::size_t hits = 0;
    for (Verdict v : p.trial_verdicts) hits += v == want;
    ok = ok && hits == 3;
    detail += (detail.empty() ? "" : "; ") + to_string(scheme) + " " + to_string(p.verdict) + " " +
              std::to_string(hits) + "/3";
  }
  return {ok, detail};
}

// -- 5 ------------------------------------------------------------------------

Outcome loss_identities() {
  bool ok = true;
  std::string failures;
  auto check = [&](bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      failures += " " + what;
    }
  };
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    PercepNetSpec s;
    s.in_channels = 4;
    s.blocks = {1, 1, 2, 1, 1};
    s.channels = {8, 16, 16, 32, 32};
    s.kernel_size = seed % 2 ? 3 : 5;
    s.seed = seed;
    const PercepNet net = build(s);
    std::mt19937_64 gen(seed);
    const Tensor x = oracle::random_tensor(gen, Shape{1, 4, 32, 32});
    const Tensor y = oracle::random_tensor(gen, Shape{1, 4, 32, 32});
    for (const LossConfig& cfg : {LossConfig{}, LossConfig{0.1, levels::MultiLevel{halving_scales(5)}}}) {
      const LossAndGrad id = percep_loss_grad(net, x, x, cfg);
      bool zero = id.loss == 0.0 && percep_loss(net, x, x, cfg) == 0.0;
      for (double v : id.grad.data()) zero = zero && v == 0.0;
      check(zero, "identity(seed " + std::to_string(seed) + ")");
      check(percep_loss(net, x, y, cfg) == percep_loss(net, y, x, cfg), "symmetry(seed " + std::to_string(seed) + ")");
    }
    const Tensor tg = oracle::random_tensor(gen, x.shape());
    const LossAndGrad c = combined_loss(0.5, tg, net, x, y, LossConfig{0.0, levels::FinalOnly{}});
    check(c.loss == 0.5 && c.grad == tg, "combined lambda=0(seed " + std::to_string(seed) + ")");
  }

  // Whole training runs: lambda = 0 with the loss net must equal the baseline.
  ExperimentConfig e;
  e.data.n_train = 4;
  e.data.n_eval = 2;
  e.data.height = 32;
  e.data.width = 32;
  e.percep.blocks = {1, 1, 1, 1, 1};
  e.percep.channels = {8, 8, 16, 16, 16};
  for (const std::string task : {"shapes", "restore"}) {
    e.task = task;
    TrainConfig tc = base_train_config(e, 1);
    tc.max_iter = 10;
    tc.eval_every = 5;
    tc.lambda = 0.0;
    const TaskData d = make_task_data(e, run_seeds(e, 1).data);
    const RunMetrics a = train(d, tc, true), b = train(d, tc, false);
    bool same = a.records.size() == b.records.size();
    for (std::size_t i = 0; same && i < a.records.size(); ++i)
      same = a.records[i].train_loss == b.records[i].train_loss &&
             a.records[i].eval_task_loss == b.records[i].eval_task_loss &&
             a.records[i].eval_metric == b.records[i].eval_metric;
    check(same, "trainer lambda=0 (" + task + ")");
  }
  return {ok, ok ? "10 nets: identity loss and gradient exactly 0, symmetry and lambda=0 bitwise"
                 : "failed:" + failures};
}

// -- 6 ------------------------------------------------------------------------

Outcome discrepancy_bound() {
  PercepNetSpec s;
  s.in_channels = 4;
  s.blocks = {1, 1, 1, 1, 1};
  s.channels = {64, 128, 256, 512, 512};
  const DiscrepancyReport r = measure_discrepancy_bound(s, 10);
  std::size_t within = 0, seeds = 0;
  for (const auto& row : r.rows)
    if (row.layer == s.conv_count()) {
      ++seeds;
      within += row.bound_ratio <= 1.5;
    }
  return {seeds == 10 && within == 10, std::to_string(within) + "/" + std::to_string(seeds) +
                                           " seeds within 1.5x, worst ratio " + num(r.worst_final_bound_ratio())};
}

// -- 7 ------------------------------------------------------------------------

Outcome training_benefit() {
  std::string detail;
  bool ok = true;
  for (const std::string task : {"shapes", "restore"}) {
    ExperimentConfig c;
    c.command = "train-compare";
    c.task = task;
    c.jobs = worker_count();
    const auto t0 = std::chrono::steady_clock::now();
    const CommandResult r = run_experiment(c, work_dir() / ("train-compare-" + task));
    const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
    const auto& percep = r.summary["arms"][1];
    const std::size_t wins = percep["wins"], diverged = percep["diverged"];
    const double mean = percep["mean_improvement"];
    const std::size_t need = task == "shapes" ? 4 : 3;
    const bool pass = wins >= need && diverged == 0 && (task != "shapes" || mean > 0.0);
    ok = ok && pass;
    std::string imps;
    for (double v : percep["improvements"].get<std::vector<double>>()) imps += (imps.empty() ? "" : ",") + num(v);
    detail += (detail.empty() ? "" : "; ") + task + " " + std::to_string(wins) + "/5 wins (need " +
              std::to_string(need) + "), improvements [" + imps + "], mean " + num(mean) + ", " +
              num(minutes) + " min";
  }
  return {ok, detail};
}

// -- 8 ------------------------------------------------------------------------

ExperimentConfig small_config(const std::string& command) {
  ExperimentConfig c;
  c.command = command;
  c.seeds = {1, 2};
  c.data.height = 32;
  c.data.width = 32;
  c.data.n_train = 4;
  c.data.n_eval = 2;
  c.percep.blocks = {1, 1, 1, 1, 1};
  c.percep.channels = {8, 8, 16, 16, 16};
  c.train.iters = 6;
  c.train.eval_every = 3;
  c.structures = {"1,1,1,1,1", "1,1,2,2,2"};
  c.kernels = {1, 5};
  c.depth = 8;
  c.probe = {1, 32, 32};
  c.jobs = worker_count();
  return c;
}

std::vector<fs::path> artifacts(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() != ".json") files.push_back(fs::relative(e.path(), dir));
  std::sort(files.begin(), files.end());
  return files;
}

Outcome determinism() {
  std::size_t compared = 0;
  std::string mismatches;
  for (const std::string& cmd : experiment_commands()) {
    const fs::path first = work_dir() / "determinism" / cmd / "first";
    const fs::path second = work_dir() / "determinism" / cmd / "second";
    fs::remove_all(first);
    fs::remove_all(second);
    run_experiment(small_config(cmd), first);

    // Replay from the config embedded in the first CSV's preamble.
    const auto files = artifacts(first);
    nlohmann::json embedded = nlohmann::json::parse(io::read_text(first / "resolved_config.json"));
    for (const auto& f : files)
      if (f.extension() == ".csv") {
        const std::string text = io::read_text(first / f);
        const std::string tag = "# resolved_config=";
        if (text.rfind(tag, 0) == 0) {
          embedded = nlohmann::json::parse(text.substr(tag.size(), text.find('\n') - tag.size()));
          break;
        }
      }
    ExperimentConfig replay;
    merge_json(replay, embedded);
    run_experiment(replay, second);

    if (artifacts(second) != files) mismatches += " " + cmd + "(file set)";
    for (const auto& f : files) {
      ++compared;
      if (!fs::exists(second / f) || io::read_text(first / f) != io::read_text(second / f))
        mismatches += " " + cmd + "/" + f.string();
    }
  }
  return {mismatches.empty(), std::to_string(experiment_commands().size()) + " commands, " +
                                  std::to_string(compared) + " files compared" +
                                  (mismatches.empty() ? ", all identical" : "; differ:" + mismatches)};
}

// -- 9 ------------------------------------------------------------------------

Outcome multi_level() {
  PercepNetSpec s;
  s.in_channels = 4;
  s.seed = 9;
  const PercepNet net = build(s);
  std::mt19937_64 gen(9);
  const Tensor a = oracle::random_tensor(gen, Shape{1, 4, 64, 64});
  const Tensor b = oracle::random_tensor(gen, Shape{1, 4, 64, 64});
  const std::vector<double> w{1.0 / 16, 1.0 / 8, 1.0 / 4, 1.0 / 2, 1.0};
  const BlockActivations pa = net.forward(a), pb = net.forward(b);
  double manual = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) manual += w[j] * oracle::naive_mse(pa.blocks[j], pb.blocks[j]);
  const double got = percep_loss(net, a, b, LossConfig{0.1, levels::MultiLevel{w}});
  const double err = std::abs(got - manual);

  ExperimentConfig c;
  c.command = "sweep-levels";
  c.seeds = {1};
  c.train.iters = 20;
  c.train.eval_every = 10;
  c.data.n_eval = 10;
  c.jobs = worker_count();
  const CommandResult r = run_experiment(c, work_dir() / "sweep-levels");
  std::set<std::string> arms;
  bool finite = true;
  for (const auto& arm : r.summary["arms"]) {
    arms.insert(arm["arm"].get<std::string>());
    finite = finite && arm["diverged"] == 0;
  }
  const std::string metrics = io::read_text(work_dir() / "sweep-levels" / "metrics.csv");
  finite = finite && metrics.find("nan") == std::string::npos && metrics.find("inf") == std::string::npos;
  const bool all_arms = arms.count("levels=final") && arms.count("levels=equal") && arms.count("levels=halving");
  return {err <= 1e-12 && finite && all_arms,
          "weighted sum error " + num(err) + ", sweep arms " + std::to_string(arms.size()) +
              (all_arms ? " (final, equal, halving present)" : " (missing arms)") +
              (finite ? ", all losses finite" : ", non-finite loss")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "gradient correctness", gradient_correctness}, {2, "conv oracle equivalence", conv_oracle},
      {3, "variance law", variance_law},                 {4, "init stability table", init_table},
      {5, "loss identities", loss_identities},           {6, "discrepancy bound", discrepancy_bound},
      {7, "directional training benefit", training_benefit}, {8, "determinism", determinism},
      {9, "multi-level configuration", multi_level}};
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const Criterion& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %d (%s): %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d criteria failed\n", failed);
  return failed ? 1 : 0;
}

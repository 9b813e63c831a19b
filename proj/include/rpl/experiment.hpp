#pragma once

// Experiment orchestration behind the rpl command-line tool: configuration,
// paired training comparisons, ablation sweeps and diagnostics reports.
//
// Every command writes into one output directory:
//   resolved_config.json   the full configuration; feeding it back through
//                          --config reproduces every CSV bit for bit
//   *.csv                  tables, first line "# resolved_config=<json>"
//   summary.json           aggregate results plus the resolved config

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "rpl/diagnostics.hpp"
#include "rpl/error.hpp"
#include "rpl/io.hpp"
#include "rpl/percep_loss.hpp"
#include "rpl/percep_net.hpp"
#include "rpl/rng.hpp"
#include "rpl/toy_tasks.hpp"
#include "rpl/trainer.hpp"

namespace rpl {

inline const std::vector<std::string>& experiment_commands() {
  static const std::vector<std::string> cmds{"diagnose-variance", "probe-init",   "train-compare", "sweep-structure",
                                             "sweep-kernel",      "sweep-levels", "export-data"};
  return cmds;
}

struct DataConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t classes = 4;
  std::size_t n_train = 200;
  std::size_t n_eval = 50;
  ShapesOptions shapes{};
  double blur_sigma = 1.5;
  double noise_sigma = 0.05;
};

// Restoration diverges at the segmentation rate, so each task has its own default.
inline double default_lr(const std::string& task) { return task == "restore" ? 0.01 : 0.05; }

struct TrainerConfig {
  std::optional<double> lr;  // unset: default_lr(task)
  std::size_t iters = 2000;
  std::size_t batch = 1;
  double poly_power = 0.9;
  double lambda = 0.1;
  nlohmann::json levels = "final";
  std::size_t eval_every = 500;
  bool flip = true;
};

struct ExperimentConfig {
  std::string command = "train-compare";
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string task = "shapes";  // shapes | restore
  DataConfig data{};
  PercepNetSpec percep{};       // in_channels follows the task; seed is a base offset
  TrainerConfig train{};
  std::vector<std::string> structures{"1,1,1,1,1", "2,2,3,3,3", "2,2,4,4,4"};
  std::vector<std::size_t> kernels{1, 3, 5, 7};
  std::vector<std::string> schemes{"all"};
  std::size_t depth = 16;
  ProbeInput probe{1, 64, 64};
  std::size_t probe_in_channels = 4;
  std::size_t jobs = 1;

  double resolved_lr() const { return train.lr.value_or(default_lr(task)); }

  void validate() const {
    const auto& cmds = experiment_commands();
    detail::require(std::find(cmds.begin(), cmds.end(), command) != cmds.end(), "unknown command '" + command + "'");
    detail::require(!seeds.empty(), "seed list is empty");
    detail::require(task == "shapes" || task == "restore", "task must be shapes or restore, got '" + task + "'");
    detail::require(jobs >= 1, "jobs must be >= 1");
    detail::require(data.n_train >= 1 && data.n_eval >= 1, "train and eval sets must be nonempty");
    detail::require(data.classes >= 2, "classes must be >= 2");
    detail::require(probe.height > 0 && probe.width > 0 && probe.batch > 0, "probe dims must be positive");
    percep.validate();
    if (command == "probe-init")
      detail::require(percep.channels.size() == 5, "probe-init needs five percep channel widths");
  }
};

// JSON schema of the resolved configuration (all keys optional on input):
//   command, seeds[], task, jobs, depth, structures[], kernels[], schemes[],
//   data{height,width,classes,train,eval,pixel_noise,color_jitter,
//        soft_temperature,soft_radius,blur_sigma,noise_sigma},
//   percep{blocks,channels,kernel_size,in_channels,init,seed},
//   train{lr,iters,batch,poly_power,lambda,levels,eval_every,flip},
//   probe{height,width,batch,in_channels}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["command"] = c.command;
  j["seeds"] = c.seeds;
  j["task"] = c.task;
  j["jobs"] = c.jobs;
  j["depth"] = c.depth;
  j["structures"] = c.structures;
  j["kernels"] = c.kernels;
  j["schemes"] = c.schemes;
  j["data"] = {{"height", c.data.height},
               {"width", c.data.width},
               {"classes", c.data.classes},
               {"train", c.data.n_train},
               {"eval", c.data.n_eval},
               {"pixel_noise", c.data.shapes.pixel_noise},
               {"color_jitter", c.data.shapes.color_jitter},
               {"soft_temperature", c.data.shapes.soft_temperature},
               {"soft_radius", c.data.shapes.soft_radius},
               {"blur_sigma", c.data.blur_sigma},
               {"noise_sigma", c.data.noise_sigma}};
  j["percep"] = c.percep;
  j["train"] = {{"lr", c.resolved_lr()},       {"iters", c.train.iters},         {"batch", c.train.batch},
                {"poly_power", c.train.poly_power}, {"lambda", c.train.lambda}, {"levels", c.train.levels},
                {"eval_every", c.train.eval_every}, {"flip", c.train.flip}};
  j["probe"] = {{"height", c.probe.height},
                {"width", c.probe.width},
                {"batch", c.probe.batch},
                {"in_channels", c.probe_in_channels}};
  return j;
}

/// Overlays the keys present in `j` onto `c`.
inline void merge_json(ExperimentConfig& c, const nlohmann::json& j) {
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    c.command = j.value("command", c.command);
    c.seeds = j.value("seeds", c.seeds);
    c.task = j.value("task", c.task);
    c.jobs = j.value("jobs", c.jobs);
    c.depth = j.value("depth", c.depth);
    c.structures = j.value("structures", c.structures);
    c.kernels = j.value("kernels", c.kernels);
    c.schemes = j.value("schemes", c.schemes);
    if (j.contains("data")) {
      const auto& d = j.at("data");
      c.data.height = d.value("height", c.data.height);
      c.data.width = d.value("width", c.data.width);
      c.data.classes = d.value("classes", c.data.classes);
      c.data.n_train = d.value("train", c.data.n_train);
      c.data.n_eval = d.value("eval", c.data.n_eval);
      c.data.shapes.pixel_noise = d.value("pixel_noise", c.data.shapes.pixel_noise);
      c.data.shapes.color_jitter = d.value("color_jitter", c.data.shapes.color_jitter);
      c.data.shapes.soft_temperature = d.value("soft_temperature", c.data.shapes.soft_temperature);
      c.data.shapes.soft_radius = d.value("soft_radius", c.data.shapes.soft_radius);
      c.data.blur_sigma = d.value("blur_sigma", c.data.blur_sigma);
      c.data.noise_sigma = d.value("noise_sigma", c.data.noise_sigma);
    }
    if (j.contains("percep")) {
      nlohmann::json merged = c.percep;
      merged.update(j.at("percep"));
      c.percep = merged.get<PercepNetSpec>();
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      if (t.contains("lr")) {
        if (t.at("lr").is_null())
          c.train.lr.reset();
        else
          c.train.lr = t.at("lr").get<double>();
      }
      c.train.iters = t.value("iters", c.train.iters);
      c.train.batch = t.value("batch", c.train.batch);
      c.train.poly_power = t.value("poly_power", c.train.poly_power);
      c.train.lambda = t.value("lambda", c.train.lambda);
      if (t.contains("levels")) c.train.levels = t.at("levels");
      c.train.eval_every = t.value("eval_every", c.train.eval_every);
      c.train.flip = t.value("flip", c.train.flip);
    }
    if (j.contains("probe")) {
      const auto& p = j.at("probe");
      c.probe.height = p.value("height", c.probe.height);
      c.probe.width = p.value("width", c.probe.width);
      c.probe.batch = p.value("batch", c.probe.batch);
      c.probe_in_channels = p.value("in_channels", c.probe_in_channels);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

/// Parses "1,2,3" or a range "1..5" (inclusive), or a mix "1..3,9".
inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  auto num = [&](const std::string& s) -> std::uint64_t {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    detail::require(!s.empty() && used == s.size() && s[0] != '-', "bad seed '" + s + "' in '" + text + "'");
    return v;
  };
  while (std::getline(ss, item, ',')) {
    const auto dots = item.find("..");
    if (dots == std::string::npos) {
      out.push_back(num(item));
    } else {
      const auto lo = num(item.substr(0, dots)), hi = num(item.substr(dots + 2));
      detail::require(lo <= hi && hi - lo < 100000, "bad seed range '" + item + "'");
      for (auto s = lo; s <= hi; ++s) out.push_back(s);
    }
  }
  detail::require(!out.empty(), "seed list '" + text + "' is empty");
  return out;
}

/// Seeds of one paired run: data and student are shared by every arm.
struct RunSeeds {
  std::uint64_t data;
  std::uint64_t student;
  std::uint64_t percep;
};

inline RunSeeds run_seeds(const ExperimentConfig& c, std::uint64_t seed) {
  return {Rng::derive(seed, 100), Rng::derive(seed, 200), Rng::derive(seed + c.percep.seed, 300)};
}

inline std::size_t task_channels(const ExperimentConfig& c) { return c.task == "shapes" ? c.data.classes : 1; }

inline TaskData make_task_data(const ExperimentConfig& c, std::uint64_t data_seed) {
  Rng rng(data_seed);
  if (c.task == "shapes") {
    SegmentationData d;
    d.n_classes = c.data.classes;
    d.train = gen_shapes(rng, c.data.n_train, c.data.height, c.data.width, c.data.classes, c.data.shapes);
    d.eval = gen_shapes(rng, c.data.n_eval, c.data.height, c.data.width, c.data.classes, c.data.shapes);
    return d;
  }
  RestorationData d;
  d.train = gen_restore(rng, c.data.n_train, c.data.height, c.data.width, c.data.blur_sigma, c.data.noise_sigma);
  d.eval = gen_restore(rng, c.data.n_eval, c.data.height, c.data.width, c.data.blur_sigma, c.data.noise_sigma);
  return d;
}

/// One arm of a comparison: a label and how it changes the base trainer config.
struct Arm {
  std::string label;
  bool use_percep = true;
  std::function<void(TrainConfig&)> adjust;
};

struct ArmRun {
  std::string arm;
  std::uint64_t seed = 0;
  RunMetrics metrics;
};

inline TrainConfig base_train_config(const ExperimentConfig& c, std::uint64_t seed) {
  const RunSeeds rs = run_seeds(c, seed);
  TrainConfig t;
  t.base_lr = c.resolved_lr();
  t.max_iter = c.train.iters;
  t.batch_size = c.train.batch;
  t.poly_power = c.train.poly_power;
  t.lambda = c.train.lambda;
  t.percep = c.percep;
  t.percep.in_channels = task_channels(c);
  t.percep.seed = rs.percep;
  t.levels = parse_levels(c.train.levels, t.percep.block_count());
  t.seed = rs.student;
  t.eval_every = c.train.eval_every;
  t.flip = c.train.flip;
  return t;
}

/// Runs every (arm, seed) pair; `jobs` > 1 runs them on worker threads. Results
/// come back in (seed, arm) order regardless of scheduling.
inline std::vector<ArmRun> run_arms(const ExperimentConfig& c, const std::vector<Arm>& arms) {
  struct Job {
    std::size_t seed_index, arm_index;
  };
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < c.seeds.size(); ++s)
    for (std::size_t a = 0; a < arms.size(); ++a) jobs.push_back({s, a});
  std::vector<ArmRun> results(jobs.size());

  std::vector<TaskData> data(c.seeds.size());
  for (std::size_t s = 0; s < c.seeds.size(); ++s) data[s] = make_task_data(c, run_seeds(c, c.seeds[s]).data);

  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto worker = [&]() {
    for (std::size_t k = next++; k < jobs.size(); k = next++) {
      try {
        const Job& jb = jobs[k];
        const Arm& arm = arms[jb.arm_index];
        TrainConfig tc = base_train_config(c, c.seeds[jb.seed_index]);
        if (arm.adjust) arm.adjust(tc);
        results[k] = ArmRun{arm.label, c.seeds[jb.seed_index], train(data[jb.seed_index], tc, arm.use_percep)};
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min(c.jobs, jobs.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return results;
}

/// Per-arm comparison against the baseline arm (label "baseline") on the same seed.
struct ArmSummary {
  std::string arm;
  std::vector<double> finals;
  std::vector<double> improvements;  // signed so that positive is better
  std::size_t wins = 0;
  std::size_t diverged = 0;
  double mean_final = 0.0;
  double mean_improvement = 0.0;
};

inline bool lower_is_better(const std::string& metric) { return metric == "rmse"; }

inline std::vector<ArmSummary> summarize(const std::vector<ArmRun>& runs, const std::vector<Arm>& arms) {
  std::vector<ArmSummary> out;
  for (const Arm& a : arms) {
    ArmSummary s;
    s.arm = a.label;
    for (const ArmRun& r : runs) {
      if (r.arm != a.label) continue;
      if (r.metrics.diverged) ++s.diverged;
      const double f = r.metrics.final_metric();
      s.finals.push_back(f);
      const auto base = std::find_if(runs.begin(), runs.end(),
                                     [&](const ArmRun& b) { return b.arm == "baseline" && b.seed == r.seed; });
      if (base != runs.end() && a.label != "baseline") {
        const double b = base->metrics.final_metric();
        const double imp = lower_is_better(r.metrics.metric_name) ? b - f : f - b;
        s.improvements.push_back(imp);
        if (imp > 0.0) ++s.wins;
      }
    }
    s.mean_final = detail::mean_of(s.finals);
    s.mean_improvement = detail::mean_of(s.improvements);
    out.push_back(std::move(s));
  }
  return out;
}

struct CommandResult {
  nlohmann::json summary;
  std::vector<std::filesystem::path> files;
};

namespace detail {

inline io::CsvTable metrics_table(const std::vector<ArmRun>& runs, const nlohmann::json& cfg) {
  io::CsvTable t({"arm", "seed", "iteration", "lr", "train_loss", "eval_task_loss", "eval_percep_loss", "metric",
                  "eval_metric"});
  t.set_preamble(cfg);
  for (const ArmRun& r : runs)
    for (const EvalRecord& e : r.metrics.records)
      t.row()
          .cell(r.arm)
          .cell(r.seed, 0)
          .cell(e.iteration)
          .cell(e.lr)
          .cell(e.train_loss)
          .cell(e.eval_task_loss)
          .cell(e.eval_percep_loss)
          .cell(r.metrics.metric_name)
          .cell(e.eval_metric);
  return t;
}

inline io::CsvTable finals_table(const std::vector<ArmRun>& runs, const nlohmann::json& cfg) {
  io::CsvTable t({"arm", "seed", "metric", "final", "baseline", "improvement", "diverged", "last_iteration",
                  "diagnostic"});
  t.set_preamble(cfg);
  for (const ArmRun& r : runs) {
    const auto base = std::find_if(runs.begin(), runs.end(),
                                   [&](const ArmRun& b) { return b.arm == "baseline" && b.seed == r.seed; });
    const double f = r.metrics.final_metric();
    const double b = base != runs.end() ? base->metrics.final_metric() : std::nan("");
    const double imp = lower_is_better(r.metrics.metric_name) ? b - f : f - b;
    t.row()
        .cell(r.arm)
        .cell(r.seed, 0)
        .cell(r.metrics.metric_name)
        .cell(f)
        .cell(b)
        .cell(imp)
        .cell(r.metrics.diverged)
        .cell(r.metrics.last_iteration)
        .cell(r.metrics.diagnostic);
  }
  return t;
}

inline nlohmann::json summary_json(const std::vector<ArmSummary>& arms) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& a : arms)
    out.push_back({{"arm", a.arm},
                   {"finals", a.finals},
                   {"improvements", a.improvements},
                   {"wins", a.wins},
                   {"diverged", a.diverged},
                   {"mean_final", a.mean_final},
                   {"mean_improvement", a.mean_improvement}});
  return out;
}

}  // namespace detail

inline std::vector<Arm> arms_for(const ExperimentConfig& c) {
  std::vector<Arm> arms{{"baseline", false, {}}};
  if (c.command == "train-compare") {
    arms.push_back({"percep", true, {}});
  } else if (c.command == "sweep-structure") {
    for (const auto& s : c.structures) {
      const auto blocks = parse_structure(s);
      arms.push_back({"structure=" + s, true, [blocks, levels = c.train.levels](TrainConfig& t) {
                        t.percep.blocks = blocks;
                        t.percep.channels.resize(blocks.size(), t.percep.channels.empty() ? 64 : t.percep.channels.back());
                        t.levels = parse_levels(levels, blocks.size());
                      }});
    }
  } else if (c.command == "sweep-kernel") {
    for (std::size_t k : c.kernels)
      arms.push_back({"kernel=" + std::to_string(k), true, [k](TrainConfig& t) { t.percep.kernel_size = k; }});
  } else if (c.command == "sweep-levels") {
    for (const char* l : {"final", "equal", "halving"})
      arms.push_back({std::string("levels=") + l, true, [l](TrainConfig& t) {
                        t.levels = parse_levels(nlohmann::json(l), t.percep.block_count());
                      }});
  }
  return arms;
}

inline void check_arms(const ExperimentConfig& c, const std::vector<Arm>& arms) {
  for (const Arm& a : arms) {
    TrainConfig t = base_train_config(c, c.seeds.front());
    if (a.adjust) a.adjust(t);
    t.validate();
    if (const auto* ml = std::get_if<levels::MultiLevel>(&t.levels))
      detail::require(ml->scales.size() == t.percep.block_count(), "arm " + a.label + ": level count mismatch");
  }
}

inline CommandResult run_training_command(const ExperimentConfig& c, const std::filesystem::path& out) {
  const auto arms = arms_for(c);
  check_arms(c, arms);
  const nlohmann::json cfg = to_json(c);
  const auto runs = run_arms(c, arms);
  const auto sums = summarize(runs, arms);
  CommandResult r;
  r.summary = {{"command", c.command}, {"arms", detail::summary_json(sums)}, {"resolved_config", cfg}};
  io::ensure_dir(out);
  detail::metrics_table(runs, cfg).write(out / "metrics.csv");
  detail::finals_table(runs, cfg).write(out / "final.csv");
  r.files = {out / "metrics.csv", out / "final.csv"};
  return r;
}

inline std::vector<InitScheme> resolve_schemes(const std::vector<std::string>& names) {
  std::vector<InitScheme> out;
  for (const auto& n : names) {
    if (n == "all") {
      for (const auto& s : standard_init_schemes()) out.push_back(s);
    } else {
      out.push_back(parse_init_scheme(n));
    }
  }
  detail::require(!out.empty(), "no init schemes selected");
  return out;
}

inline CommandResult run_probe_init(const ExperimentConfig& c, const std::filesystem::path& out) {
  const nlohmann::json cfg = to_json(c);
  StabilityOptions opt;
  opt.in_channels = c.probe_in_channels;
  opt.channels = c.percep.channels;
  opt.kernel_size = c.percep.kernel_size;
  opt.input = c.probe;
  io::CsvTable t({"scheme", "depth", "trials", "ratio", "predicted_log10_ratio", "verdict", "trial_ratios",
                  "trial_verdicts"});
  t.set_preamble(cfg);
  nlohmann::json rows = nlohmann::json::array();
  for (const InitScheme& s : resolve_schemes(c.schemes)) {
    const StabilityProbe p = probe_stability(s, c.depth, c.seeds, opt);
    std::string ratios, verdicts;
    for (std::size_t i = 0; i < p.trial_ratios.size(); ++i) {
      ratios += (i ? ";" : "") + io::fmt(p.trial_ratios[i]);
      verdicts += (i ? ";" : "") + to_string(p.trial_verdicts[i]);
    }
    t.row()
        .cell(to_string(s))
        .cell(p.depth)
        .cell(p.trial_ratios.size())
        .cell(p.ratio)
        .cell(p.predicted_log10_ratio)
        .cell(to_string(p.verdict))
        .cell(ratios)
        .cell(verdicts);
    rows.push_back({{"scheme", to_string(s)}, {"ratio", p.ratio}, {"verdict", to_string(p.verdict)}});
  }
  io::ensure_dir(out);
  t.write(out / "stability.csv");
  return {{{"command", c.command}, {"schemes", rows}, {"resolved_config", cfg}}, {out / "stability.csv"}};
}

inline CommandResult run_diagnose_variance(const ExperimentConfig& c, const std::filesystem::path& out) {
  const nlohmann::json cfg = to_json(c);
  PercepNetSpec spec = c.percep;
  spec.in_channels = c.probe_in_channels;
  const VarianceReport vr = measure_variance_propagation(spec, c.seeds, c.probe);
  const DiscrepancyReport dr = measure_discrepancy_bound(spec, c.seeds, c.probe);

  io::CsvTable vt({"layer", "block", "after_pool", "fan_in", "factor", "measured_var", "predicted_var", "ratio",
                   "step_log_slope", "step_log_factor", "step_ratio"});
  vt.set_preamble(cfg);
  for (const auto& l : vr.layers)
    vt.row()
        .cell(l.layer)
        .cell(l.block)
        .cell(l.after_pool)
        .cell(l.fan_in)
        .cell(l.factor)
        .cell(l.measured)
        .cell(l.predicted)
        .cell(l.ratio)
        .cell(l.step_log_slope)
        .cell(l.layer == 1 ? 0.0 : std::log(l.factor))
        .cell(l.step_ratio);
  io::CsvTable dt({"seed", "layer", "var_independent", "bound", "bound_ratio", "var_identical", "var_perturbed",
                   "perturbed_over_independent"});
  dt.set_preamble(cfg);
  for (const auto& r : dr.rows)
    dt.row()
        .cell(dr.seeds[r.seed_index], 0)
        .cell(r.layer)
        .cell(r.var_independent)
        .cell(r.bound)
        .cell(r.bound_ratio)
        .cell(r.var_identical)
        .cell(r.var_perturbed)
        .cell(r.perturbed_over_independent);
  io::ensure_dir(out);
  vt.write(out / "variance.csv");
  dt.write(out / "discrepancy.csv");
  nlohmann::json summary = {{"command", c.command},
                            {"max_abs_log_ratio", vr.max_abs_log_ratio()},
                            {"worst_final_bound_ratio", dr.worst_final_bound_ratio()},
                            {"resolved_config", cfg}};
  return {summary, {out / "variance.csv", out / "discrepancy.csv"}};
}

inline CommandResult run_export_data(const ExperimentConfig& c, const std::filesystem::path& out) {
  const nlohmann::json cfg = to_json(c);
  CommandResult r;
  r.summary = {{"command", c.command}, {"resolved_config", cfg}};
  for (std::uint64_t s : c.seeds) {
    const auto dir = out / ("seed_" + std::to_string(s));
    const TaskData d = make_task_data(c, run_seeds(c, s).data);
    if (const auto* seg = std::get_if<SegmentationData>(&d))
      io::write_shapes_dataset(dir, seg->train, seg->eval);
    else
      io::write_restore_dataset(dir, std::get<RestorationData>(d).train, std::get<RestorationData>(d).eval);
    r.files.push_back(dir / "manifest.csv");
  }
  return r;
}

/// Executes one command and writes its artifacts plus resolved_config.json and
/// summary.json into `out`.
inline CommandResult run_experiment(const ExperimentConfig& c, const std::filesystem::path& out) {
  c.validate();
  CommandResult r;
  if (c.command == "diagnose-variance")
    r = run_diagnose_variance(c, out);
  else if (c.command == "probe-init")
    r = run_probe_init(c, out);
  else if (c.command == "export-data")
    r = run_export_data(c, out);
  else
    r = run_training_command(c, out);
  io::ensure_dir(out);
  io::write_text(out / "resolved_config.json", to_json(c).dump(2) + "\n");
  io::write_text(out / "summary.json", r.summary.dump(2) + "\n");
  r.files.push_back(out / "resolved_config.json");
  r.files.push_back(out / "summary.json");
  return r;
}

}  // namespace rpl

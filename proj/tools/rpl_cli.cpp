// rpl: diagnostics, paired training comparisons and ablation sweeps.
//
//   rpl <command> [flags]
//
// Flags override values read from --config. Artifacts go to --out, else
// $RPL_OUTPUT_DIR/<command>, else ./rpl_out/<command>.
//
// Exit codes: 0 ok, 2 invalid configuration or flags, 3 file error,
// 4 numeric failure, 1 anything else. Failures print a one-line JSON error
// record on stderr and, when the output directory is writable, error.json.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rpl/experiment.hpp"

namespace {

using nlohmann::json;

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

struct Flags {
  std::string command;
  std::string config_path;
  std::string out;
  std::optional<std::string> seeds, task, structure, structures, kernels, schemes, init, levels;
  std::optional<std::size_t> kernel, depth, iters, batch, eval_every, jobs, height, width, classes, n_train, n_eval;
  std::optional<std::size_t> probe_height, probe_width, probe_batch, probe_channels;
  std::optional<double> lr, lambda, pixel_noise;
  std::optional<std::uint64_t> percep_seed;
  bool no_flip = false;
};

json flags_overlay(const Flags& f) {
  json j = json::object();
  j["command"] = f.command;
  if (f.seeds) j["seeds"] = rpl::parse_seed_list(*f.seeds);
  if (f.task) j["task"] = *f.task;
  if (f.jobs) j["jobs"] = *f.jobs;
  if (f.depth) j["depth"] = *f.depth;
  if (f.structures) j["structures"] = split(*f.structures, ';');
  if (f.kernels) {
    std::vector<std::size_t> ks;
    for (const auto& k : split(*f.kernels, ',')) {
      std::size_t used = 0;
      long v = -1;
      try {
        v = std::stol(k, &used);
      } catch (const std::exception&) {
      }
      if (v <= 0 || used != k.size()) throw rpl::ConfigError("bad kernel size '" + k + "'");
      ks.push_back(static_cast<std::size_t>(v));
    }
    j["kernels"] = ks;
  }
  if (f.schemes) j["schemes"] = split(*f.schemes, ',');
  json data = json::object(), percep = json::object(), train = json::object(), probe = json::object();
  if (f.height) data["height"] = *f.height;
  if (f.width) data["width"] = *f.width;
  if (f.classes) data["classes"] = *f.classes;
  if (f.n_train) data["train"] = *f.n_train;
  if (f.n_eval) data["eval"] = *f.n_eval;
  if (f.pixel_noise) data["pixel_noise"] = *f.pixel_noise;
  if (f.structure) percep["blocks"] = rpl::parse_structure(*f.structure);
  if (f.kernel) percep["kernel_size"] = *f.kernel;
  if (f.init) percep["init"] = *f.init;
  if (f.percep_seed) percep["seed"] = *f.percep_seed;
  if (f.lr) train["lr"] = *f.lr;
  if (f.iters) train["iters"] = *f.iters;
  if (f.batch) train["batch"] = *f.batch;
  if (f.lambda) train["lambda"] = *f.lambda;
  if (f.eval_every) train["eval_every"] = *f.eval_every;
  if (f.no_flip) train["flip"] = false;
  if (f.levels) {
    const auto& l = *f.levels;
    if (l == "final" || l == "equal" || l == "halving") {
      train["levels"] = l;
    } else {
      std::vector<double> scales;
      for (const auto& s : split(l, ',')) {
        try {
          scales.push_back(std::stod(s));
        } catch (const std::exception&) {
          throw rpl::ConfigError("bad level scale '" + s + "'");
        }
      }
      train["levels"] = scales;
    }
  }
  if (f.probe_height) probe["height"] = *f.probe_height;
  if (f.probe_width) probe["width"] = *f.probe_width;
  if (f.probe_batch) probe["batch"] = *f.probe_batch;
  if (f.probe_channels) probe["in_channels"] = *f.probe_channels;
  if (!data.empty()) j["data"] = data;
  if (!percep.empty()) j["percep"] = percep;
  if (!train.empty()) j["train"] = train;
  if (!probe.empty()) j["probe"] = probe;
  return j;
}

std::filesystem::path output_dir(const Flags& f) {
  if (!f.out.empty()) return f.out;
  const char* env = std::getenv("RPL_OUTPUT_DIR");
  return std::filesystem::path(env && *env ? env : "rpl_out") / f.command;
}

int report_error(const std::string& kind, const std::string& message, int code, const std::filesystem::path& out) {
  const json rec = {{"status", "error"}, {"kind", kind}, {"message", message}, {"exit_code", code}};
  std::cerr << rec.dump() << "\n";
  if (!out.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(out, ec);
    if (!ec) {
      std::ofstream os(out / "error.json");
      if (os) os << rec.dump(2) << "\n";
    }
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random-weight perceptual loss experiments"};
  app.set_version_flag("--version", "rpl 0.1.0");
  Flags f;
  app.add_option("command", f.command, "Command to run")
      ->required()
      ->check(CLI::IsMember(rpl::experiment_commands()));
  app.add_option("--config", f.config_path, "JSON config (e.g. a previous resolved_config.json)");
  app.add_option("--out", f.out, "Output directory");
  app.add_option("--seeds", f.seeds, "Seeds, e.g. 1,2,3 or 1..5");
  app.add_option("--task", f.task, "shapes or restore");
  app.add_option("--jobs", f.jobs, "Worker threads for independent runs");

  app.add_option("--structure", f.structure, "Loss-net conv counts per block, e.g. 2,2,3,3,3");
  app.add_option("--kernel", f.kernel, "Loss-net kernel size");
  app.add_option("--init", f.init, "calibrated, xavier, gaussian:<sigma> or uniform:<a>");
  app.add_option("--percep-seed", f.percep_seed, "Offset mixed into every loss-net seed");
  app.add_option("--levels", f.levels, "final, equal, halving or comma-separated scales");

  app.add_option("--lr", f.lr, "Base learning rate (default 0.05 for shapes, 0.01 for restore)");
  app.add_option("--iters", f.iters, "Training iterations");
  app.add_option("--batch", f.batch, "Batch size");
  app.add_option("--lambda", f.lambda, "Perceptual loss weight");
  app.add_option("--eval-every", f.eval_every, "Iterations between evaluations");
  app.add_flag("--no-flip", f.no_flip, "Disable horizontal-flip augmentation");

  app.add_option("--height", f.height, "Image height");
  app.add_option("--width", f.width, "Image width");
  app.add_option("--classes", f.classes, "Segmentation classes");
  app.add_option("--n-train", f.n_train, "Training samples");
  app.add_option("--n-eval", f.n_eval, "Evaluation samples");
  app.add_option("--pixel-noise", f.pixel_noise, "Shapes pixel noise std");

  app.add_option("--structures", f.structures, "sweep-structure arms, ';'-separated");
  app.add_option("--kernels", f.kernels, "sweep-kernel arms, e.g. 1,3,5,7");
  app.add_option("--schemes", f.schemes, "probe-init schemes, comma-separated, or all");
  app.add_option("--depth", f.depth, "probe-init conv depth");
  app.add_option("--probe-height", f.probe_height, "Probe input height");
  app.add_option("--probe-width", f.probe_width, "Probe input width");
  app.add_option("--probe-batch", f.probe_batch, "Probe input batch");
  app.add_option("--probe-channels", f.probe_channels, "Probe input channels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what(), 2, {});
  }

  const auto out = output_dir(f);
  try {
    rpl::ExperimentConfig cfg;
    if (!f.config_path.empty()) rpl::merge_json(cfg, nlohmann::json::parse(rpl::io::read_text(f.config_path)));
    rpl::merge_json(cfg, flags_overlay(f));
    const auto result = rpl::run_experiment(cfg, out);
    std::cout << result.summary.dump(2) << "\n";
    return 0;
  } catch (const nlohmann::json::parse_error& e) {
    return report_error("config", e.what(), 2, out);
  } catch (const rpl::ConfigError& e) {
    return report_error("config", e.what(), 2, out);
  } catch (const rpl::IoError& e) {
    return report_error("io", e.what(), 3, {});
  } catch (const rpl::NumericError& e) {
    return report_error("numeric", e.what(), 4, out);
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), 1, out);
  }
}

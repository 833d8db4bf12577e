#include <atomic>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vfd/config.hpp"
#include "vfd/verification.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

struct RunOutput {
  std::string metrics;  // JSONL lines
  std::string summary_row;
  bool diverged = false;
  std::string divergence;
};

// Runs every seed (optionally on a worker pool) and buffers outputs in seed
// order so the files are byte-identical regardless of worker count.
std::vector<RunOutput> run_all_seeds(const vfd::ExperimentConfig& cfg,
                                     const vfd::MixerSpec& mixer,
                                     int workers) {
  const long n = static_cast<long>(cfg.seeds.size());
  std::vector<RunOutput> outputs(n);
  std::atomic<long> next{0};
  auto worker = [&] {
    while (true) {
      const long i = next.fetch_add(1);
      if (i >= n) break;
      vfd::TrainConfig train = cfg.train;
      train.seed = cfg.seeds[i];
      RunOutput& out = outputs[i];
      try {
        const auto records =
            vfd::run_experiment(*cfg.env, mixer, cfg.agents, train,
                                cfg.options, cfg.master_seed);
        std::ostringstream lines;
        for (const auto& rec : records) {
          lines << vfd::metrics_record_json(rec) << "\n";
        }
        out.metrics = lines.str();
        const auto& last = records.back();
        std::ostringstream row;
        row << last.seed << "," << last.step << "," << last.td_loss << ","
            << last.anneal_loss << "," << last.eval_return_mean << ","
            << last.eval_return_std;
        out.summary_row = row.str();
      } catch (const vfd::DivergenceError& e) {
        out.diverged = true;
        json dump = {{"error", e.what()},
                     {"step", e.step},
                     {"seed", e.seed},
                     {"param_norm", e.param_norm}};
        out.divergence = dump.dump(2);
      }
    }
  };
  std::vector<std::thread> pool;
  const int k = std::max(1, std::min<int>(workers, n));
  pool.reserve(k);
  for (int i = 0; i < k; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  return outputs;
}

int refuse_overwrite(const fs::path& path, bool force) {
  if (!force && fs::exists(path)) {
    std::cerr << "refusing to overwrite " << path
              << " (pass --force to allow)\n";
    return kExitConfig;
  }
  return kExitOk;
}

int write_run_outputs(const std::vector<RunOutput>& outputs,
                      const fs::path& out_dir, const std::string& tag,
                      bool force) {
  fs::create_directories(out_dir);
  const fs::path metrics_path =
      out_dir / (tag.empty() ? "metrics.jsonl" : "metrics-" + tag + ".jsonl");
  const fs::path summary_path =
      out_dir / (tag.empty() ? "summary.csv" : "summary-" + tag + ".csv");
  if (int rc = refuse_overwrite(metrics_path, force)) return rc;
  if (int rc = refuse_overwrite(summary_path, force)) return rc;

  for (const auto& out : outputs) {
    if (out.diverged) {
      const fs::path dump_path = out_dir / "divergence.json";
      vfd::write_file(dump_path.string(), out.divergence);
      std::cerr << "training diverged; dump written to " << dump_path << "\n";
      return kExitDivergence;
    }
  }
  std::ostringstream metrics;
  std::ostringstream summary;
  summary << "seed,final_step,td_loss,anneal_loss,eval_return_mean,"
             "eval_return_std\n";
  for (const auto& out : outputs) {
    metrics << out.metrics;
    summary << out.summary_row << "\n";
  }
  vfd::write_file(metrics_path.string(), metrics.str());
  vfd::write_file(summary_path.string(), summary.str());
  std::cout << "wrote " << metrics_path << " and " << summary_path << "\n";
  return kExitOk;
}

int cmd_run(const std::string& config_path, const std::string& out_override,
            int workers, bool force) {
  vfd::ExperimentConfig cfg;
  try {
    cfg = vfd::load_experiment_config(
        vfd::read_file(config_path),
        fs::path(config_path).parent_path().string());
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  }
  const fs::path out_dir =
      !out_override.empty() ? out_override
                            : (!cfg.output_dir.empty() ? cfg.output_dir
                                                       : "out");
  const auto outputs = run_all_seeds(cfg, cfg.mixer, workers);
  return write_run_outputs(outputs, out_dir, "", force);
}

int cmd_sweep(const std::string& config_path, const std::string& out_override,
              int workers, bool force) {
  vfd::SweepConfig sweep;
  try {
    sweep = vfd::load_sweep_config(
        vfd::read_file(config_path),
        fs::path(config_path).parent_path().string());
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  }
  const fs::path out_dir =
      !out_override.empty()
          ? out_override
          : (!sweep.base.output_dir.empty() ? sweep.base.output_dir : "out");
  fs::create_directories(out_dir);
  const fs::path summary_path = out_dir / "summary.csv";
  if (int rc = refuse_overwrite(summary_path, force)) return rc;

  std::ostringstream summary;
  summary << "mixer,conditioning,seed,final_step,td_loss,anneal_loss,"
             "eval_return_mean,eval_return_std\n";
  for (const auto& mixer : sweep.mixers) {
    const std::string tag =
        vfd::to_string(mixer.kind) + "-" + vfd::to_string(mixer.conditioning);
    const auto outputs = run_all_seeds(sweep.base, mixer, workers);
    if (int rc = write_run_outputs(outputs, out_dir, tag, force)) return rc;
    for (const auto& out : outputs) {
      summary << vfd::to_string(mixer.kind) << ","
              << vfd::to_string(mixer.conditioning) << "," << out.summary_row
              << "\n";
    }
  }
  vfd::write_file(summary_path.string(), summary.str());
  std::cout << "wrote " << summary_path << "\n";
  return kExitOk;
}

int cmd_verify(const std::string& suite, const std::string& out_path,
               int threads, std::uint64_t seed) {
  vfd::SuiteOptions opts;
  opts.threads = threads;
  opts.seed = seed;
  std::vector<vfd::SuiteReport> reports;
  try {
    reports = vfd::run_suites(suite, opts);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  }
  bool all_passed = true;
  json jreports = json::array();
  for (const auto& rep : reports) {
    all_passed = all_passed && rep.passed;
    std::cout << (rep.passed ? "[PASS] " : "[FAIL] ") << rep.check_name
              << ": " << rep.instances << " instances, " << rep.failures
              << " failures";
    if (!rep.detail.empty()) std::cout << " (" << rep.detail << ")";
    std::cout << "\n";
    for (const auto& w : rep.witnesses) {
      std::cout << "       witness: " << w << "\n";
    }
    jreports.push_back({{"check_name", rep.check_name},
                        {"instances", rep.instances},
                        {"failures", rep.failures},
                        {"passed", rep.passed},
                        {"detail", rep.detail},
                        {"witnesses", rep.witnesses}});
  }
  if (!out_path.empty()) {
    vfd::write_file(out_path,
                    json{{"suite", suite}, {"reports", jreports}}.dump(2));
    std::cout << "report written to " << out_path << "\n";
  }
  return all_passed ? kExitOk : 1;
}

int cmd_fit(const std::string& target_path, const std::string& mixer_kind,
            long steps, double lr, const std::string& out_path,
            std::uint64_t seed) {
  vfd::JointValueTable target;
  vfd::MixerSpec spec;
  try {
    target = vfd::load_target_table(vfd::read_file(target_path));
    spec.kind = vfd::mixer_kind_from_string(mixer_kind);
    spec.conditioning = vfd::Conditioning::stateless;
    spec.detach_advantages = false;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  }
  const vfd::IgmReport pre = vfd::igm_check(target);
  if (!pre.holds) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < pre.witness->size(); ++i) {
      if (i) os << ",";
      os << (*pre.witness)[i];
    }
    os << ")";
    std::cerr << "target does not satisfy IGM; witness joint action "
              << os.str() << "\n";
    return kExitConfig;
  }
  const vfd::FitResult fit =
      vfd::fit_target_table(spec, target, steps, lr, seed);
  json j = {{"mixer", mixer_kind},
            {"max_abs_error", fit.max_abs_error},
            {"steps_used", fit.steps_used}};
  std::cout << j.dump() << "\n";
  if (!out_path.empty()) vfd::write_file(out_path, j.dump(2));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "vfdlab: value function decomposition laboratory (VDN, QMIX, QPLEX, "
      "QFIX, Q+FIX)"};
  app.require_subcommand(1);

  std::string config_path, out_path, suite = "all", mixer_kind, target_path;
  int workers = 1;
  int threads = 2;
  std::uint64_t seed = 20250607;
  long steps = 20000;
  double lr = 1e-2;
  bool force = false;

  auto* run = app.add_subcommand("run", "train one mixer over seeds");
  run->add_option("--config", config_path, "experiment JSON")->required();
  run->add_option("--out", out_path, "output directory");
  run->add_option("--workers", workers, "parallel seed workers");
  run->add_flag("--force", force, "overwrite existing outputs");

  auto* sweep = app.add_subcommand("sweep", "train several mixers");
  sweep->add_option("--config", config_path, "sweep JSON")->required();
  sweep->add_option("--out", out_path, "output directory");
  sweep->add_option("--workers", workers, "parallel seed workers");
  sweep->add_flag("--force", force, "overwrite existing outputs");

  auto* verify = app.add_subcommand("verify", "run property suites");
  verify->add_option("--suite", suite,
                     "igm|stateful|detach|grad|completeness|all");
  verify->add_option("--out", out_path, "report JSON path");
  verify->add_option("--threads", threads, "worker threads");
  verify->add_option("--seed", seed, "suite RNG seed");

  auto* fit = app.add_subcommand("fit", "fit a mixer to a target table");
  fit->add_option("--target", target_path, "target table JSON")->required();
  fit->add_option("--mixer", mixer_kind, "mixer kind")->required();
  fit->add_option("--steps", steps, "max optimization steps");
  fit->add_option("--lr", lr, "learning rate");
  fit->add_option("--out", out_path, "fit report JSON path");
  fit->add_option("--seed", seed, "fit RNG seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, out_path, workers, force);
    if (sweep->parsed()) {
      return cmd_sweep(config_path, out_path, workers, force);
    }
    if (verify->parsed()) return cmd_verify(suite, out_path, threads, seed);
    if (fit->parsed()) {
      return cmd_fit(target_path, mixer_kind, steps, lr, out_path, seed);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}

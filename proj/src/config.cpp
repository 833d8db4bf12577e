#include "vfd/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace vfd {

namespace {

using nlohmann::json;

// Collects field-level problems so a bad config reports everything at once.
struct Diagnostics {
  std::vector<std::string> errors;

  void add(const std::string& field, const std::string& problem) {
    errors.push_back(field + ": " + problem);
  }
  void throw_if_any() const {
    if (errors.empty()) return;
    std::ostringstream os;
    os << "invalid config:";
    for (const auto& e : errors) os << "\n  " << e;
    throw ConfigError(os.str());
  }
};

template <typename T>
T get_or(const json& j, const std::string& key, T fallback, Diagnostics& diag,
         const std::string& field) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const std::exception&) {
    diag.add(field, "has the wrong type");
    return fallback;
  }
}

MixerSpec parse_mixer(const json& j, Diagnostics& diag,
                      const std::string& field) {
  MixerSpec spec;
  if (!j.contains("kind")) {
    diag.add(field + ".kind", "is required");
    return spec;
  }
  try {
    spec.kind = mixer_kind_from_string(j.at("kind").get<std::string>());
  } catch (const std::exception& e) {
    diag.add(field + ".kind", e.what());
  }
  if (j.contains("conditioning")) {
    try {
      spec.conditioning =
          conditioning_from_string(j.at("conditioning").get<std::string>());
    } catch (const std::exception& e) {
      diag.add(field + ".conditioning", e.what());
    }
  }
  spec.detach_advantages = get_or(j, "detach_advantages",
                                  spec.detach_advantages, diag,
                                  field + ".detach_advantages");
  spec.mixing_hidden =
      get_or(j, "mixing_hidden", spec.mixing_hidden, diag,
             field + ".mixing_hidden");
  spec.hypernet_hidden =
      get_or(j, "hypernet_hidden", spec.hypernet_hidden, diag,
             field + ".hypernet_hidden");
  spec.fixing_hidden =
      get_or(j, "fixing_hidden", spec.fixing_hidden, diag,
             field + ".fixing_hidden");
  return spec;
}

std::unique_ptr<Env> parse_env(const json& j, const std::string& base_dir,
                               Diagnostics& diag) {
  try {
    if (j.contains("file")) {
      std::filesystem::path p = j.at("file").get<std::string>();
      if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
      return env_from_json_text(read_file(p.string()));
    }
    return env_from_json_text(j.dump());
  } catch (const std::exception& e) {
    diag.add("env", e.what());
    return nullptr;
  }
}

void parse_train(const json& j, TrainConfig& cfg, Diagnostics& diag) {
  cfg.lr = get_or(j, "lr", cfg.lr, diag, "train.lr");
  cfg.gamma = get_or(j, "gamma", cfg.gamma, diag, "train.gamma");
  cfg.batch_episodes = get_or(j, "batch_episodes", cfg.batch_episodes, diag,
                              "train.batch_episodes");
  cfg.target_sync_interval =
      get_or(j, "target_sync_interval", cfg.target_sync_interval, diag,
             "train.target_sync_interval");
  cfg.epsilon_start = get_or(j, "epsilon_start", cfg.epsilon_start, diag,
                             "train.epsilon_start");
  cfg.epsilon_end =
      get_or(j, "epsilon_end", cfg.epsilon_end, diag, "train.epsilon_end");
  cfg.epsilon_anneal_fraction =
      get_or(j, "epsilon_anneal_fraction", cfg.epsilon_anneal_fraction, diag,
             "train.epsilon_anneal_fraction");
  cfg.total_steps =
      get_or(j, "total_steps", cfg.total_steps, diag, "train.total_steps");
  cfg.anneal_lambda_start =
      get_or(j, "anneal_lambda_start", cfg.anneal_lambda_start, diag,
             "train.anneal_lambda_start");
  cfg.anneal_fraction = get_or(j, "anneal_fraction", cfg.anneal_fraction, diag,
                               "train.anneal_fraction");
  cfg.anneal_detach_fixee =
      get_or(j, "anneal_detach_fixee", cfg.anneal_detach_fixee, diag,
             "train.anneal_detach_fixee");
  cfg.buffer_episodes = get_or(j, "buffer_episodes", cfg.buffer_episodes, diag,
                               "train.buffer_episodes");
  if (cfg.gamma < 0.0 || cfg.gamma >= 1.0) {
    diag.add("train.gamma", "must be in [0,1)");
  }
  if (cfg.anneal_fraction < 0.0 || cfg.anneal_fraction > 1.0) {
    diag.add("train.anneal_fraction", "must be in [0,1]");
  }
  if (cfg.total_steps < 0) diag.add("train.total_steps", "must be >= 0");
  if (cfg.batch_episodes < 1) diag.add("train.batch_episodes", "must be >= 1");
  if (cfg.buffer_episodes < cfg.batch_episodes) {
    diag.add("train.buffer_episodes", "must be >= batch_episodes");
  }
  if (cfg.target_sync_interval < 1) {
    diag.add("train.target_sync_interval", "must be >= 1");
  }
}

ExperimentConfig parse_experiment(const json& j, const std::string& base_dir,
                                  Diagnostics& diag, bool require_mixer) {
  ExperimentConfig cfg;
  if (j.contains("env")) {
    cfg.env = parse_env(j.at("env"), base_dir, diag);
  } else {
    diag.add("env", "is required");
  }
  if (j.contains("mixer")) {
    cfg.mixer = parse_mixer(j.at("mixer"), diag, "mixer");
  } else if (require_mixer) {
    diag.add("mixer", "is required");
  }
  if (j.contains("agents")) {
    const auto& a = j.at("agents");
    cfg.agents.window =
        get_or(a, "window", cfg.agents.window, diag, "agents.window");
    cfg.agents.hidden =
        get_or(a, "hidden", cfg.agents.hidden, diag, "agents.hidden");
    cfg.agents.share_parameters =
        get_or(a, "share_parameters", cfg.agents.share_parameters, diag,
               "agents.share_parameters");
    if (cfg.agents.window < 1) diag.add("agents.window", "must be >= 1");
    if (cfg.agents.hidden < 1) diag.add("agents.hidden", "must be >= 1");
  }
  if (j.contains("train")) parse_train(j.at("train"), cfg.train, diag);
  cfg.options.eval_interval =
      get_or(j, "eval_interval", cfg.options.eval_interval, diag,
             "eval_interval");
  cfg.options.eval_episodes =
      get_or(j, "eval_episodes", cfg.options.eval_episodes, diag,
             "eval_episodes");
  if (cfg.options.eval_interval < 1) {
    diag.add("eval_interval", "must be >= 1");
  }
  if (cfg.options.eval_episodes < 1) {
    diag.add("eval_episodes", "must be >= 1");
  }
  cfg.master_seed = get_or<std::uint64_t>(j, "master_seed", 0, diag,
                                          "master_seed");
  cfg.output_dir = get_or<std::string>(j, "output_dir", "", diag,
                                       "output_dir");
  if (!j.contains("seeds")) {
    diag.add("seeds", "is required");
  } else {
    try {
      cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    } catch (const std::exception&) {
      diag.add("seeds", "must be an array of non-negative integers");
    }
    if (cfg.seeds.empty()) diag.add("seeds", "must be non-empty");
    std::set<std::uint64_t> uniq(cfg.seeds.begin(), cfg.seeds.end());
    if (uniq.size() != cfg.seeds.size()) {
      diag.add("seeds", "must be distinct");
    }
  }
  return cfg;
}

}  // namespace

ExperimentConfig load_experiment_config(const std::string& json_text,
                                        const std::string& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid config: JSON parse error: ") +
                      e.what());
  }
  Diagnostics diag;
  ExperimentConfig cfg = parse_experiment(j, base_dir, diag, true);
  diag.throw_if_any();
  return cfg;
}

SweepConfig load_sweep_config(const std::string& json_text,
                              const std::string& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid config: JSON parse error: ") +
                      e.what());
  }
  Diagnostics diag;
  SweepConfig sweep;
  sweep.base = parse_experiment(j, base_dir, diag, false);
  if (!j.contains("mixers") || !j.at("mixers").is_array() ||
      j.at("mixers").empty()) {
    diag.add("mixers", "must be a non-empty array");
  } else {
    int idx = 0;
    for (const auto& m : j.at("mixers")) {
      sweep.mixers.push_back(
          parse_mixer(m, diag, "mixers[" + std::to_string(idx) + "]"));
      ++idx;
    }
  }
  diag.throw_if_any();
  return sweep;
}

MixerSpec mixer_spec_from_json_text(const std::string& json_text) {
  Diagnostics diag;
  MixerSpec spec = parse_mixer(json::parse(json_text), diag, "mixer");
  diag.throw_if_any();
  return spec;
}

JointValueTable load_target_table(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid target: JSON parse error: ") +
                      e.what());
  }
  JointValueTable tv;
  try {
    tv.utilities =
        j.at("utilities").get<std::vector<std::vector<double>>>();
    // reuse the env fixture parser for the nested payoff arrays
    std::unique_ptr<Env> env = env_from_json_text(
        json{{"type", "matrix"}, {"payoff", j.at("table")}}.dump());
    tv.table = static_cast<const MatrixGame&>(*env).payoff();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid target: ") + e.what());
  }
  if (tv.utilities.size() != tv.table.action_counts.size()) {
    throw ConfigError("invalid target: utilities/table arity mismatch");
  }
  for (std::size_t i = 0; i < tv.utilities.size(); ++i) {
    if (static_cast<int>(tv.utilities[i].size()) !=
        tv.table.action_counts[i]) {
      throw ConfigError("invalid target: utilities[" + std::to_string(i) +
                        "] length does not match the table");
    }
  }
  return tv;
}

std::string metrics_record_json(const MetricsRecord& rec) {
  json j = {{"step", rec.step},
            {"seed", rec.seed},
            {"td_loss", rec.td_loss},
            {"anneal_loss", rec.anneal_loss},
            {"eval_return_mean", rec.eval_return_mean},
            {"eval_return_std", rec.eval_return_std},
            {"epsilon", rec.epsilon},
            {"lambda_delta", rec.lambda_delta}};
  return j.dump();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << content;
}

}  // namespace vfd

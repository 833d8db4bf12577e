#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "vfd/agents.hpp"
#include "vfd/envs.hpp"
#include "vfd/mixers.hpp"
#include "vfd/training.hpp"
#include "vfd/verification.hpp"

namespace vfd {

// Invalid configuration; the message carries field-level diagnostics.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ExperimentConfig {
  std::unique_ptr<Env> env;
  MixerSpec mixer;
  AgentConfig agents;
  TrainConfig train;
  ExperimentOptions options;
  std::vector<std::uint64_t> seeds;
  std::uint64_t master_seed = 0;
  std::string output_dir;
};

struct SweepConfig {
  ExperimentConfig base;  // base.mixer unused
  std::vector<MixerSpec> mixers;
};

// `base_dir` resolves relative {"env": {"file": ...}} references.
ExperimentConfig load_experiment_config(const std::string& json_text,
                                        const std::string& base_dir);
SweepConfig load_sweep_config(const std::string& json_text,
                              const std::string& base_dir);

MixerSpec mixer_spec_from_json_text(const std::string& json_text);

// Fit targets: {"utilities": [[...], ...], "table": nested arrays}.
JointValueTable load_target_table(const std::string& json_text);

std::string metrics_record_json(const MetricsRecord& rec);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace vfd

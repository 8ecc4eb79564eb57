#pragma once

// Config-driven experiment runner behind the `cascadelab` executable.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cascadelab/cascade_sim.hpp"
#include "cascadelab/distill.hpp"
#include "cascadelab/predictor.hpp"
#include "cascadelab/ssfs.hpp"
#include "cascadelab/sslfm.hpp"
#include "cascadelab/synthgen.hpp"
#include "json.hpp"

namespace cascadelab::cli {

struct NoiseVariant {
  double sigma1 = 0.8;
  double sigma2 = 0.3;
};

struct SimulateConfig {
  // k1, sigma1 and sigma2 of `base` are replaced by the sweep values and variants.
  sim::TwoStageSpec base;
  std::vector<double> k1_values{50, 100, 200, 500, 1000};
  std::vector<NoiseVariant> variants{{0.4, 0.3}, {0.8, 0.3}, {1.2, 0.3}};

  void validate() const;
};

struct GenDataConfig {
  data::PoolConfig pool;
  std::size_t requests = 1;
  std::vector<std::size_t> stage_sizes{5000, 500};
  // Logit noise of each stage's noisy-oracle scorer.
  std::vector<double> stage_noise{1.0, 0.5};

  void validate() const;
};

struct TrainCommandConfig {
  // Impression JSONL to train on, relative to the config file. When empty the
  // impressions are generated from `data`.
  std::string impressions;
  GenDataConfig data = [] {
    GenDataConfig c;
    c.requests = 16;
    return c;
  }();
  // Feature columns the model sees; empty means all.
  std::vector<std::size_t> features;
  // input_dim follows the selected columns.
  model::PredictorArch arch = model::PredictorArch::linear(20);
  model::TrainConfig train{.learning_rate = 5e-2, .epochs = 50, .batch_size = 128, .l2 = 1e-4, .lr_decay = 0.98};
  double train_fraction = 0.8;
};

struct SsfsCommandConfig {
  ssfs::PipelineConfig pipeline;
  bool verify_planted = true;
  std::size_t planted_permutations = 10;
};

/// Parsed config file. Absent sections are absent; a command falls back to
/// defaults when its section is missing.
struct RunConfig {
  std::uint64_t seed = 0;
  std::optional<std::string> out;
  std::optional<std::string> format;
  std::optional<SimulateConfig> simulate;
  std::optional<GenDataConfig> gen_data;
  std::optional<TrainCommandConfig> train;
  std::optional<distill::ExperimentConfig> distill;
  std::optional<SsfsCommandConfig> ssfs;
  std::optional<sslfm::ExperimentConfig> sslfm;
  // Directory that relative paths in the config resolve against.
  std::filesystem::path base_dir;
};

/// Strict parse: unknown keys and mistyped values throw ConfigError naming
/// the key path, e.g. "ssfs.pool.bias".
RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});

nlohmann::json pool_to_json(const data::PoolConfig& pool);
nlohmann::json train_config_to_json(const model::TrainConfig& config);

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

/// Runs one subcommand. args excludes the program name. Reports go to `out`,
/// diagnostics to `err`; the return value is the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cascadelab::cli

#pragma once

// Semi-supervised feature selection: permutation importance measured once on
// labeled impressions and once on consideration data labeled by a teacher,
// then combined into one feature set.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cascadelab/metrics.hpp"
#include "cascadelab/predictor.hpp"
#include "cascadelab/synthgen.hpp"
#include "json.hpp"

namespace cascadelab::ssfs {

enum class Regime { impression, consideration_mixed };
std::string to_string(Regime regime);

struct FeatureImportance {
  std::size_t feature = 0;
  double mean = 0.0;    // mean loss increase over batches
  double stddev = 0.0;  // sample standard deviation; 0 with one batch
  std::size_t batches = 0;
};

struct FeatureImportanceReport {
  Regime regime = Regime::impression;
  std::vector<FeatureImportance> features;  // features[j].feature == j

  void validate() const;
  /// Feature indices by descending mean importance, ties by index.
  std::vector<std::size_t> ranking() const;
};

/// For each batch (rows sampled without replacement) and each feature: mean
/// BCE after shuffling that feature's column within the batch minus mean BCE
/// on the intact batch. Batch b uses stream "batch:b" of `seed`; the column
/// shuffle of feature j uses "batch:b:feature:j". Batches larger than the
/// dataset are clipped to its size.
FeatureImportanceReport perturb_importance(const model::Predictor& model, const model::Dataset& data,
                                           std::size_t num_batches, std::size_t batch_size, std::uint64_t seed,
                                           Regime regime = Regime::impression, std::size_t threads = 1);

/// Header: feature_index,mean_importance,std_importance,batches,regime
void write_importance_csv(std::ostream& out, const FeatureImportanceReport& report);

enum class Strategy { imp_only, cd_only, average_rank, average_importance, intersection_top, union_top };
inline constexpr std::array<Strategy, 6> kAllStrategies = {Strategy::imp_only,         Strategy::cd_only,
                                                           Strategy::average_rank,     Strategy::average_importance,
                                                           Strategy::intersection_top, Strategy::union_top};
std::string to_string(Strategy strategy);
Strategy strategy_from_string(const std::string& text);
/// Row label used in the comparison table, e.g. "Union of Top Features".
std::string display_name(Strategy strategy);

/// Selected feature indices in ascending order. average_importance averages
/// min-max normalized means (a constant report normalizes to all zeros).
std::vector<std::size_t> combine_rankings(const FeatureImportanceReport& imp, const FeatureImportanceReport& cd,
                                          Strategy strategy, std::size_t top_n);

/// The cheaper model used for importance: a linear model stays linear, a
/// feed-forward model keeps one hidden layer of half the first width.
model::PredictorArch simplified_arch(const model::PredictorArch& arch);

/// Ground truth with informative features 0-7 and a planted feature 8 that
/// stage 2 also selects on, so impressions carry little of its variation.
data::PoolConfig planted_pool();

struct PipelineConfig {
  data::PoolConfig pool = planted_pool();
  std::size_t requests = 8;
  std::vector<std::size_t> stage_sizes{5000, 500};
  double stage1_noise = 1.0;
  double stage2_noise = 0.3;
  // Stage 2 adds stage2_boost * x[boosted_feature] to its logit; 0 disables.
  std::size_t boosted_feature = 8;
  double stage2_boost = 10.0;
  model::PredictorArch teacher_arch = model::PredictorArch::linear(20);
  // Architecture of the restricted student; input_dim is the full feature count.
  model::PredictorArch candidate_arch = model::PredictorArch::feedforward(20, {8}, model::Activation::tanh);
  model::TrainConfig teacher_train{
      .learning_rate = 5e-2, .epochs = 200, .batch_size = 128, .l2 = 1e-4, .lr_decay = 0.98};
  model::TrainConfig student_train{
      .learning_rate = 5e-2, .epochs = 200, .batch_size = 128, .l2 = 1e-4, .lr_decay = 0.98};
  std::size_t top_n = 8;
  std::size_t importance_batches = 50;
  std::size_t importance_batch_size = 256;
  double train_fraction = 0.8;
  std::vector<Strategy> strategies{kAllStrategies.begin(), kAllStrategies.end()};
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const;
};

/// Pipeline inputs after the cascade ran and the teacher was trained.
/// Consideration teacher_pred holds the teacher's pseudo-labels.
struct PipelineData {
  data::Traffic traffic;  // raw cascade output with logged stage-2 scores
  data::ImpressionSet impression_train, impression_holdout;
  data::ConsiderationSet consideration_train, consideration_holdout;
  std::vector<double> consideration_holdout_true_prob;
  model::Predictor teacher{model::PredictorArch::linear(1)};
  double teacher_holdout_ne = 0.0;
};

PipelineData prepare_data(const PipelineConfig& config);

/// Importance of config.boosted_feature under the ground-truth logistic model,
/// computed on whole sets with `permutations` full-column shuffles: once on
/// impressions, once on consideration rows. Ranks are 1-based. The targets are
/// the true probabilities.
struct PlantedRankCheck {
  std::size_t feature = 0;
  std::size_t impression_rank = 0;
  std::size_t mixed_rank = 0;
  std::size_t top_n = 0;

  bool recovered_in_mixed() const { return mixed_rank <= top_n; }
  bool hidden_in_impression() const { return impression_rank > top_n; }
};
PlantedRankCheck verify_planted_rank(const PipelineConfig& config, const PipelineData& data,
                                     std::size_t permutations = 10);

struct StrategyOutcome {
  Strategy strategy = Strategy::imp_only;
  std::vector<std::size_t> selected;
  metrics::NEReport impression_ne;     // holdout labels as targets
  metrics::NEReport consideration_ne;  // teacher pseudo-labels as targets
  double impression_ne_change = 0.0;     // percent vs imp_only
  double consideration_ne_change = 0.0;  // percent vs imp_only
};

struct PipelineResult {
  FeatureImportanceReport impression_report;
  FeatureImportanceReport consideration_report;
  std::vector<StrategyOutcome> outcomes;  // imp_only first
  double teacher_holdout_ne = 0.0;
  std::size_t top_n = 0;

  const StrategyOutcome& outcome(Strategy strategy) const;
};

/// Trains the simplified model on impressions (impression regime) and on
/// impressions plus pseudo-labeled consideration rows (mixed regime), measures
/// importance on the holdouts, then trains one restricted student per strategy
/// on the mixed training set. Errors carry the failing step's name.
PipelineResult run_pipeline(const PipelineConfig& config);
PipelineResult run_pipeline(const PipelineConfig& config, const PipelineData& data);

std::string render_table(const PipelineResult& result);
nlohmann::json to_json(const PipelineResult& result);
nlohmann::json to_json(const FeatureImportanceReport& report);

}  // namespace cascadelab::ssfs

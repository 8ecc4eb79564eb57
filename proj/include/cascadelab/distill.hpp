#pragma once

// Cross-stage distillation: an earlier-stage student learns from labeled
// impressions plus the later-stage teacher's logged scores on unlabeled
// consideration candidates.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cascadelab/metrics.hpp"
#include "cascadelab/predictor.hpp"
#include "cascadelab/synthgen.hpp"
#include "json.hpp"

namespace cascadelab::distill {

struct DistillConfig {
  double distill_weight = 1.0;       // lambda on the pseudo-label loss
  double unlabeled_batch_mix = 0.5;  // share of each batch drawn from consideration data
  std::size_t student_stage = 1;
  std::size_t teacher_stage = 2;
  model::TrainConfig train;

  /// Throws ConfigError unless lambda >= 0, mix in [0, 1] and the teacher is
  /// the stage right after the student.
  void validate() const;
};

/// Copy of `consideration` whose teacher_pred is recomputed by `teacher`.
data::ConsiderationSet make_pseudo_labels(const model::Predictor& teacher, const data::ConsiderationSet& consideration);

/// Objective per batch: mean BCE on the impression portion plus lambda times
/// mean BCE against the teacher on the consideration portion. Each batch has
/// round(mix * batch_size) consideration rows; an epoch lasts until the longer
/// stream has been seen once, and the shorter stream wraps around.
///
/// With lambda = 0, mix = 0 or no consideration data this is exactly
/// model::train on the impressions.
model::TrainResult distill_train(model::Predictor& student, const model::Dataset& impression,
                                 const model::Dataset& consideration, const DistillConfig& config);

/// Student vs teacher, one model on both data regimes.
struct RegimeScores {
  metrics::CalibrationReport impression_calibration;     // vs teacher
  metrics::CalibrationReport consideration_calibration;  // vs teacher
  metrics::CalibrationReport impression_truth_calibration;  // vs labels
  metrics::NEReport impression_ne;       // labels as targets
  metrics::NEReport consideration_ne;    // teacher scores as targets
};

struct CrossStageEvaluation {
  std::string baseline_id = "baseline";
  std::string candidate_id = "cross_stage_distillation";
  RegimeScores baseline;
  RegimeScores candidate;
  double impression_ne_change = 0.0;     // percent, candidate vs baseline
  double consideration_ne_change = 0.0;  // percent, candidate vs baseline
};

RegimeScores score_model(const model::Predictor& student, const data::ImpressionSet& impression,
                         const data::ConsiderationSet& consideration);

/// Feature matrices must already be in the student's input space. Teacher
/// scores come from `teacher` when given, otherwise from the logged
/// teacher_pred of both sets.
CrossStageEvaluation evaluate_cross_stage(const model::Predictor& student_baseline,
                                          const model::Predictor& student_distilled, const model::Predictor* teacher,
                                          const data::ImpressionSet& impression,
                                          const data::ConsiderationSet& consideration);

/// Text table with one row per model and calibration / NE change columns for
/// each data regime.
std::string render_table(const CrossStageEvaluation& evaluation);
nlohmann::json to_json(const CrossStageEvaluation& evaluation);

/// Two simulated traffic days. Day 0 runs a noisy-oracle cascade; the teacher
/// and the serving student are trained on its impressions. Day 1 runs the
/// cascade with those two models, and its logged teacher scores become the
/// pseudo-labels. Baseline and distilled students are trained on an 80% split
/// of day 1 and evaluated on the rest.
struct ExperimentConfig {
  data::PoolConfig pool;
  std::size_t requests = 32;  // independent pools per day
  std::vector<std::size_t> stage_sizes = {5000, 500};
  double day0_stage1_noise = 1.0;  // logit-space noise of the day-0 scorers
  double day0_stage2_noise = 0.5;
  std::vector<std::size_t> student_hidden_features = {7};
  model::PredictorArch teacher_arch = model::PredictorArch::linear(20);
  // Impression features are range-restricted, which makes the bias poorly
  // conditioned; the decaying schedule is needed to get close to the optimum.
  model::TrainConfig teacher_train{
      .learning_rate = 5e-2, .epochs = 200, .batch_size = 128, .l2 = 1e-4, .lr_decay = 0.98};
  model::TrainConfig student_train{
      .learning_rate = 5e-2, .epochs = 200, .batch_size = 128, .l2 = 1e-4, .lr_decay = 0.98};
  DistillConfig distill;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const;
  /// Feature columns visible to the student.
  std::vector<std::size_t> student_columns() const;
};

struct ExperimentResult {
  CrossStageEvaluation evaluation;
  // Student-vs-truth calibration on consideration holdout (true_prob as reference).
  double baseline_truth_calibration = 0.0;
  double distilled_truth_calibration = 0.0;
  std::size_t impression_train = 0, impression_holdout = 0;
  std::size_t consideration_train = 0, consideration_holdout = 0;
  double teacher_holdout_ne = 0.0;
  std::string impression_hash;
  std::string consideration_hash;
};

ExperimentResult run_experiment(const ExperimentConfig& config);
nlohmann::json to_json(const ExperimentResult& result);

}  // namespace cascadelab::distill

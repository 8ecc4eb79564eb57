#pragma once

// Multi-task students that learn from a larger, non-serving teacher through
// two extra heads trained on unlabeled data only: a dependent head reading the
// main output and an auxiliary head reading the shared representation.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cascadelab/metrics.hpp"
#include "cascadelab/predictor.hpp"
#include "cascadelab/synthgen.hpp"
#include "json.hpp"

namespace cascadelab::sslfm {

enum class Variant { baseline, dependent_only, auxiliary_only, both };
inline constexpr Variant kAllVariants[] = {Variant::baseline, Variant::dependent_only, Variant::auxiliary_only,
                                           Variant::both};
std::string to_string(Variant variant);
Variant variant_from_string(const std::string& text);
/// Row label of the comparison table, e.g. "Dependent + auxiliary task".
std::string display_name(Variant variant);

/// Per-example values of one forward pass.
struct Outputs {
  double main_logit = 0.0;
  double dependent_logit = 0.0;  // 0 without a dependent head
  double auxiliary_logit = 0.0;  // 0 without an auxiliary head
};

class MultiTaskStudent {
 public:
  /// Main head = a predictor of `trunk` initialized exactly like
  /// Predictor::initialized(trunk, seed). The auxiliary head is logistic over
  /// the representation. The dependent head maps the main logit l to
  /// sum_k v_k tanh(a_k l + c_k) + d; a_k and v_k start positive, so the head
  /// starts as an increasing function of l.
  static MultiTaskStudent build(const model::PredictorArch& trunk, Variant variant, std::uint64_t seed,
                                std::size_t dependent_hidden = 4);

  Variant variant() const { return variant_; }
  bool has_dependent() const { return variant_ == Variant::dependent_only || variant_ == Variant::both; }
  bool has_auxiliary() const { return variant_ == Variant::auxiliary_only || variant_ == Variant::both; }
  std::size_t dependent_hidden() const { return dependent_hidden_; }

  const model::Predictor& main() const { return main_; }
  model::Predictor& main() { return main_; }
  std::span<const double> head_parameters() const { return heads_; }
  std::span<double> mutable_head_parameters() { return heads_; }
  /// Head weights (true) versus biases (false).
  const std::vector<bool>& head_weight_mask() const { return head_mask_; }

  std::size_t auxiliary_parameter_count() const;
  std::size_t dependent_parameter_count() const;
  std::size_t parameter_count() const { return main_.parameters().size() + heads_.size(); }

  Outputs forward(std::span<const double> x, model::Workspace& ws) const;
  /// Main-task probability, identical to main().predict(x).
  double predict(std::span<const double> x) const { return main_.predict(x); }
  /// Dependent head probability for a given main logit.
  double dependent_from_main(double main_logit) const;
  double predict_auxiliary(std::span<const double> x) const;

  /// Adds gradients of dmain * main_logit + ddep * dependent_logit +
  /// daux * auxiliary_logit. With stop_gradient the dependent term does not
  /// reach the main head. `main_grad` and `head_grad` follow parameter order.
  void backward(std::span<const double> x, model::Workspace& ws, const Outputs& out, double dmain, double ddep,
                double daux, bool stop_gradient, std::span<double> main_grad, std::span<double> head_grad) const;

 private:
  MultiTaskStudent(model::Predictor main, Variant variant, std::size_t dependent_hidden);
  std::size_t dependent_offset() const { return auxiliary_parameter_count(); }

  model::Predictor main_;
  Variant variant_;
  std::size_t dependent_hidden_;
  // [auxiliary weights, auxiliary bias][a, c, v, d]
  std::vector<double> heads_;
  std::vector<bool> head_mask_;
};

struct SslfmConfig {
  double dependent_weight = 0.5;  // lambda_dep
  double auxiliary_weight = 0.5;  // lambda_aux
  // Head losses only ever see unlabeled batches; false is rejected.
  bool unlabeled_only = true;
  bool stop_gradient_dependent = false;
  // Rows per unlabeled batch; 0 means train.batch_size.
  std::size_t unlabeled_batch_size = 0;
  model::TrainConfig train;

  void validate() const;
};

/// Which losses one batch fed.
struct BatchRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  bool labeled = true;
  std::size_t rows = 0;
  bool supervised_loss = false;
  bool head_loss = false;
};

struct SslfmTrainResult {
  // Supervised objective of the main head (mean BCE on labeled data plus L2
  // of the main weights) before training and after every epoch.
  std::vector<double> loss_history;
  std::vector<BatchRecord> audit;
  std::size_t steps = 0;
};

/// Each step takes the next labeled batch in model::train's order and the
/// next unlabeled batch from stream "unlabeled:epoch:<pass>". Loss:
/// mean BCE(labels, main) on the labeled batch plus, on the unlabeled batch,
/// lambda_dep mean BCE(teacher, dependent) + lambda_aux mean BCE(teacher,
/// auxiliary), plus L2 on every weight. The main parameters follow exactly the
/// trajectory of model::train when both lambdas are 0.
/// `unlabeled` holds student features with teacher probabilities as targets.
SslfmTrainResult sslfm_train(MultiTaskStudent& student, const model::Dataset& labeled,
                             const model::Dataset& unlabeled, const SslfmConfig& config);

/// Builds the unlabeled targets from the teacher's view of the same rows.
SslfmTrainResult sslfm_train(MultiTaskStudent& student, const model::Predictor& teacher,
                             const model::Dataset& labeled, const Matrix& unlabeled_student_features,
                             const Matrix& unlabeled_teacher_features, const SslfmConfig& config);

/// Full objective of sslfm_train on one labeled and one unlabeled batch, with
/// its gradient over [main parameters, head parameters]; for gradient checks.
double multitask_loss(const MultiTaskStudent& student, const model::Dataset& labeled,
                      const model::Dataset& unlabeled, const SslfmConfig& config, std::span<double> gradient = {});
/// model::grad_check for multitask_loss.
double grad_check(const MultiTaskStudent& student, const model::Dataset& labeled, const model::Dataset& unlabeled,
                  const SslfmConfig& config, double epsilon = 1e-6);

/// Desk-scale scenario: the student sees the first student_features columns,
/// the foundation teacher every column.
struct ExperimentConfig {
  data::PoolConfig pool = foundation_pool();
  std::size_t requests = 4;
  // The teacher trains on the impressions of its own, larger traffic; 0 means
  // it shares the student's training impressions.
  std::size_t teacher_requests = 32;
  std::vector<std::size_t> stage_sizes{4000, 1000};
  double stage1_noise = 1.0;
  double stage2_noise = 0.5;
  std::size_t student_features = 20;
  model::PredictorArch student_arch = model::PredictorArch::feedforward(20, {8}, model::Activation::tanh);
  model::PredictorArch teacher_arch = model::PredictorArch::feedforward(30, {32}, model::Activation::tanh);
  model::TrainConfig teacher_train{
      .learning_rate = 1e-2, .epochs = 30, .batch_size = 128, .l2 = 1e-4, .lr_decay = 0.98};
  SslfmConfig sslfm{.train = {.learning_rate = 1e-2, .epochs = 30, .batch_size = 128, .l2 = 1e-4, .lr_decay = 0.9}};
  std::size_t dependent_hidden = 4;
  std::vector<Variant> variants{std::begin(kAllVariants), std::end(kAllVariants)};
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  /// Default ground truth: synthgen's 20 student-visible features followed by
  /// 10 informative features only the teacher sees, over pools of 10000.
  static data::PoolConfig foundation_pool();
  void validate() const;
};

struct VariantOutcome {
  Variant variant = Variant::baseline;
  metrics::NEReport impression_ne;  // holdout labels, relative to baseline
};

struct ExperimentResult {
  std::vector<VariantOutcome> outcomes;  // baseline first
  double teacher_holdout_ne = 0.0;
  double baseline_holdout_ne = 0.0;
  // Teacher NE below baseline student NE on the labeled holdout.
  bool teacher_dominates = false;
  std::size_t impression_train = 0, impression_holdout = 0, consideration_train = 0, teacher_train = 0;

  const VariantOutcome& outcome(Variant variant) const;
};

ExperimentResult run_experiment(const ExperimentConfig& config);

std::string render_table(const ExperimentResult& result);
nlohmann::json to_json(const ExperimentResult& result);

}  // namespace cascadelab::sslfm

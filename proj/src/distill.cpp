#include "cascadelab/distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <sstream>

#include "cascadelab/content_hash.hpp"
#include "cascadelab/error.hpp"
#include "cascadelab/random.hpp"

namespace cascadelab::distill {

void DistillConfig::validate() const {
  if (!(distill_weight >= 0.0) || !std::isfinite(distill_weight)) {
    throw ConfigError("DistillConfig: distill_weight must be >= 0");
  }
  if (!(unlabeled_batch_mix >= 0.0 && unlabeled_batch_mix <= 1.0)) {
    throw ConfigError("DistillConfig: unlabeled_batch_mix must lie in [0, 1]");
  }
  if (student_stage < 1) throw ConfigError("DistillConfig: student_stage must be >= 1");
  if (teacher_stage <= student_stage) throw ConfigError("DistillConfig: the teacher must be a later stage than the student");
  if (teacher_stage != student_stage + 1) throw ConfigError("DistillConfig: the teacher must be the next stage");
  train.validate();
}

data::ConsiderationSet make_pseudo_labels(const model::Predictor& teacher, const data::ConsiderationSet& consideration) {
  if (consideration.features.cols != teacher.input_dim() && consideration.size() > 0) {
    throw DimensionError("make_pseudo_labels: teacher expects " + std::to_string(teacher.input_dim()) +
                         " features, consideration rows have " + std::to_string(consideration.features.cols));
  }
  data::ConsiderationSet out = consideration;
  out.teacher_pred = teacher.predict_batch(consideration.features);
  return out;
}

model::TrainResult distill_train(model::Predictor& student, const model::Dataset& impression,
                                 const model::Dataset& consideration, const DistillConfig& config) {
  config.validate();
  const double lambda = config.distill_weight;
  const double mix = config.unlabeled_batch_mix;
  if (lambda == 0.0 || mix == 0.0 || consideration.size() == 0) {
    if (consideration.size() == 0 && lambda > 0.0 && mix > 0.0) {
      throw ConfigError("distill_train: consideration data is empty but distill_weight and mix are positive");
    }
    return model::train(student, impression, config.train);
  }
  consideration.validate();
  const std::size_t batch = config.train.batch_size;
  std::size_t cons_part = static_cast<std::size_t>(std::llround(mix * static_cast<double>(batch)));
  cons_part = std::clamp<std::size_t>(cons_part, 1, batch);
  std::size_t imp_part = batch - cons_part;
  if (mix < 1.0 && imp_part == 0) imp_part = 1;
  if (mix == 1.0) imp_part = 0;
  if (imp_part > 0) impression.validate();
  for (const auto* d : {&impression, &consideration}) {
    if (d->size() > 0 && d->features.cols != student.input_dim()) {
      throw DimensionError("distill_train: dataset feature count does not match the student");
    }
  }

  const std::size_t n_imp = imp_part > 0 ? impression.size() : 0;
  const std::size_t n_cons = consideration.size();
  auto objective = [&]() {
    double loss = lambda * model::dataset_loss(student, consideration);
    if (n_imp > 0) loss += model::dataset_loss(student, impression);
    const auto params = student.parameters();
    const auto& mask = student.weight_mask();
    double sq = 0.0;
    for (std::size_t j = 0; j < params.size(); ++j) {
      if (mask[j]) sq += params[j] * params[j];
    }
    return loss + 0.5 * config.train.l2 * sq;
  };

  model::TrainResult result;
  auto record = [&](std::size_t epoch) {
    const double loss = objective();
    if (!std::isfinite(loss)) {
      throw DivergenceError("distill_train: loss became non-finite after epoch " + std::to_string(epoch) +
                            "; lower the learning rate");
    }
    result.loss_history.push_back(loss);
  };
  record(0);

  model::OptimizerState optimizer(config.train, student.parameters().size());
  std::vector<double> grad(student.parameters().size());
  model::Workspace ws;
  const auto ceil_div = [](std::size_t a, std::size_t b) { return (a + b - 1) / b; };
  const std::size_t steps = std::max(n_imp > 0 ? ceil_div(n_imp, imp_part) : 0, ceil_div(n_cons, cons_part));
  std::vector<std::size_t> imp_rows(imp_part);
  std::vector<std::size_t> cons_rows(cons_part);
  for (std::size_t epoch = 0; epoch < config.train.epochs; ++epoch) {
    const auto imp_order = model::epoch_order(n_imp, config.train.seed, epoch);
    const auto cons_order = model::epoch_order(n_cons, config.train.seed, epoch, "shuffle-consideration");
    optimizer.set_epoch(epoch);
    for (std::size_t s = 0; s < steps; ++s) {
      std::fill(grad.begin(), grad.end(), 0.0);
      if (n_imp > 0) {
        for (std::size_t t = 0; t < imp_part; ++t) imp_rows[t] = imp_order[(s * imp_part + t) % n_imp];
        model::accumulate_batch(student, impression, imp_rows, 1.0 / static_cast<double>(imp_part), grad, ws);
      }
      for (std::size_t t = 0; t < cons_part; ++t) cons_rows[t] = cons_order[(s * cons_part + t) % n_cons];
      model::accumulate_batch(student, consideration, cons_rows, lambda / static_cast<double>(cons_part), grad, ws);
      model::add_l2_gradient(student, config.train.l2, grad);
      optimizer.step(student.mutable_parameters(), grad);
      ++result.steps;
    }
    record(epoch + 1);
  }
  return result;
}

RegimeScores score_model(const model::Predictor& student, const data::ImpressionSet& impression,
                         const data::ConsiderationSet& consideration) {
  if (impression.teacher_pred.size() != impression.size() ||
      consideration.teacher_pred.size() != consideration.size()) {
    throw DimensionError("score_model: teacher predictions are missing");
  }
  const auto imp_pred = student.predict_batch(impression.features);
  const auto cons_pred = student.predict_batch(consideration.features);
  const std::vector<double> labels(impression.labels.begin(), impression.labels.end());
  RegimeScores s;
  s.impression_calibration = metrics::calibration_ratio(imp_pred, impression.teacher_pred);
  s.consideration_calibration = metrics::calibration_ratio(cons_pred, consideration.teacher_pred);
  s.impression_truth_calibration = metrics::calibration_ratio(imp_pred, labels, metrics::ReferenceKind::ground_truth);
  s.impression_ne = metrics::normalized_entropy(labels, imp_pred);
  s.consideration_ne =
      metrics::normalized_entropy(consideration.teacher_pred, cons_pred, metrics::TargetKind::teacher_prediction);
  return s;
}

CrossStageEvaluation evaluate_cross_stage(const model::Predictor& student_baseline,
                                          const model::Predictor& student_distilled, const model::Predictor* teacher,
                                          const data::ImpressionSet& impression,
                                          const data::ConsiderationSet& consideration) {
  data::ImpressionSet imp = impression;
  data::ConsiderationSet cons = consideration;
  if (teacher != nullptr) {
    imp.teacher_pred = teacher->predict_batch(imp.features);
    cons.teacher_pred = teacher->predict_batch(cons.features);
  }
  CrossStageEvaluation e;
  e.baseline = score_model(student_baseline, imp, cons);
  e.candidate = score_model(student_distilled, imp, cons);
  e.candidate.impression_ne = metrics::compared_to(e.candidate.impression_ne, e.baseline.impression_ne, e.baseline_id);
  e.candidate.consideration_ne =
      metrics::compared_to(e.candidate.consideration_ne, e.baseline.consideration_ne, e.baseline_id);
  e.impression_ne_change = e.candidate.impression_ne.ne_relative_change;
  e.consideration_ne_change = e.candidate.consideration_ne.ne_relative_change;
  return e;
}

std::string render_table(const CrossStageEvaluation& evaluation) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-26s | %-28s | %-28s\n", "", "Impression data", "Consideration data");
  out << line;
  std::snprintf(line, sizeof line, "%-26s | %-12s %-15s | %-12s %-15s\n", "Model", "Calibration", "NE change",
                "Calibration", "NE change");
  out << line << std::string(88, '-') << '\n';
  auto row = [&](const std::string& name, const RegimeScores& s, double imp_change, double cons_change) {
    std::snprintf(line, sizeof line, "%-26s | %-12.2f %-15s | %-12.2f %-15s\n", name.c_str(),
                  s.impression_calibration.ratio, metrics::format_pct(imp_change, 2).c_str(),
                  s.consideration_calibration.ratio, metrics::format_pct(cons_change, 2).c_str());
    out << line;
  };
  row(evaluation.baseline_id, evaluation.baseline, 0.0, 0.0);
  row(evaluation.candidate_id, evaluation.candidate, evaluation.impression_ne_change,
      evaluation.consideration_ne_change);
  return out.str();
}

namespace {

nlohmann::json scores_json(const RegimeScores& s) {
  return {{"impression", {{"calibration_vs_teacher", metrics::to_json(s.impression_calibration)},
                          {"calibration_vs_labels", metrics::to_json(s.impression_truth_calibration)},
                          {"ne", metrics::to_json(s.impression_ne)}}},
          {"consideration", {{"calibration_vs_teacher", metrics::to_json(s.consideration_calibration)},
                             {"ne", metrics::to_json(s.consideration_ne)}}}};
}

}  // namespace

nlohmann::json to_json(const CrossStageEvaluation& evaluation) {
  return {{"baseline_id", evaluation.baseline_id},
          {"candidate_id", evaluation.candidate_id},
          {"baseline", scores_json(evaluation.baseline)},
          {"candidate", scores_json(evaluation.candidate)},
          {"impression_ne_change_pct", evaluation.impression_ne_change},
          {"consideration_ne_change_pct", evaluation.consideration_ne_change}};
}

void ExperimentConfig::validate() const {
  pool.validate();
  if (requests < 1) throw ConfigError("distill experiment: requests must be >= 1");
  if (stage_sizes.size() != 2) throw ConfigError("distill experiment: the cascade must have exactly two stages");
  for (std::size_t c : student_hidden_features) {
    if (c >= pool.num_features) throw ConfigError("distill experiment: hidden feature index out of range");
  }
  if (student_columns().empty()) throw ConfigError("distill experiment: the student must see at least one feature");
  if (teacher_arch.input_dim != pool.num_features) {
    throw DimensionError("distill experiment: teacher input_dim must equal num_features");
  }
  teacher_arch.validate();
  teacher_train.validate();
  student_train.validate();
  distill.validate();
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("distill experiment: train_fraction must lie in (0, 1)");
  }
  if (!(day0_stage1_noise >= 0.0) || !(day0_stage2_noise >= 0.0)) {
    throw ConfigError("distill experiment: day-0 noise levels must be >= 0");
  }
}

std::vector<std::size_t> ExperimentConfig::student_columns() const {
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < pool.num_features; ++c) {
    if (std::find(student_hidden_features.begin(), student_hidden_features.end(), c) ==
        student_hidden_features.end()) {
      cols.push_back(c);
    }
  }
  return cols;
}

namespace {

std::string jsonl_hash(const data::ImpressionSet& set) {
  std::ostringstream s;
  data::write_jsonl(s, set);
  return git_blob_sha1(s.str());
}

std::string jsonl_hash(const data::ConsiderationSet& set) {
  std::ostringstream s;
  data::write_jsonl(s, set);
  return git_blob_sha1(s.str());
}

template <typename Set>
Set project(const Set& set, const std::vector<std::size_t>& columns) {
  Set out = set;
  out.features = set.features.select_cols(columns);
  return out;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  const auto columns = config.student_columns();
  const std::uint64_t seed = config.seed;
  data::PoolConfig pool = config.pool;
  const std::size_t per_day = config.requests * pool.num_candidates;

  // Day 0: noisy-oracle cascade.
  const std::vector<data::StageModel> day0_stages{
      data::noisy_oracle_stage(config.day0_stage1_noise, derive_seed(seed, "day0:stage1")),
      data::noisy_oracle_stage(config.day0_stage2_noise, derive_seed(seed, "day0:stage2"))};
  pool.id_base = 0;
  const auto day0 = data::simulate_traffic(pool, config.requests, day0_stages, config.stage_sizes,
                                           derive_seed(seed, "day0"), config.threads);

  auto teacher = std::make_shared<model::Predictor>(
      model::Predictor::initialized(config.teacher_arch, derive_seed(seed, "teacher")));
  auto teacher_train = config.teacher_train;
  teacher_train.seed = derive_seed(seed, "teacher:train");
  model::train(*teacher, model::Dataset::from_impressions(day0.impression), teacher_train);

  const auto student_arch = model::PredictorArch::linear(columns.size());
  auto serving = std::make_shared<model::Predictor>(
      model::Predictor::initialized(student_arch, derive_seed(seed, "serving-student")));
  auto student_train = config.student_train;
  student_train.seed = derive_seed(seed, "serving-student:train");
  model::train(*serving, model::Dataset::from_impressions(project(day0.impression, columns)), student_train);

  // Day 1: the trained models serve; the teacher's scores are logged.
  const std::vector<data::StageModel> day1_stages{model::predictor_stage(serving, columns),
                                                  model::predictor_stage(teacher)};
  pool.id_base = per_day;
  const auto day1 = data::simulate_traffic(pool, config.requests, day1_stages, config.stage_sizes,
                                           derive_seed(seed, "day1"), config.threads);

  ExperimentResult result;
  result.impression_hash = jsonl_hash(day1.impression);
  result.consideration_hash = jsonl_hash(day1.consideration);

  const auto [imp_train_rows, imp_test_rows] =
      data::split_indices(day1.impression.size(), config.train_fraction, derive_seed(seed, "split:impression"));
  const auto [cons_train_rows, cons_test_rows] = data::split_indices(
      day1.consideration.size(), config.train_fraction, derive_seed(seed, "split:consideration"));
  const auto imp_train = project(data::subset(day1.impression, imp_train_rows), columns);
  const auto imp_test = project(data::subset(day1.impression, imp_test_rows), columns);
  const auto cons_train = project(data::subset(day1.consideration, cons_train_rows), columns);
  const auto cons_test = project(data::subset(day1.consideration, cons_test_rows), columns);
  result.impression_train = imp_train.size();
  result.impression_holdout = imp_test.size();
  result.consideration_train = cons_train.size();
  result.consideration_holdout = cons_test.size();

  {
    const auto holdout = data::subset(day1.impression, imp_test_rows);
    const std::vector<double> labels(holdout.labels.begin(), holdout.labels.end());
    result.teacher_holdout_ne = metrics::normalized_entropy(labels, holdout.teacher_pred).ne;
  }

  const auto init = model::Predictor::initialized(student_arch, derive_seed(seed, "student"));
  auto train_config = config.student_train;
  train_config.seed = derive_seed(seed, "student:train");
  model::Predictor baseline = init;
  model::train(baseline, model::Dataset::from_impressions(imp_train), train_config);

  model::Predictor distilled = init;
  auto dc = config.distill;
  dc.train = train_config;
  distill_train(distilled, model::Dataset::from_impressions(imp_train), model::Dataset::from_consideration(cons_train),
                dc);

  result.evaluation = evaluate_cross_stage(baseline, distilled, nullptr, imp_test, cons_test);
  std::vector<double> truth;
  for (std::size_t r : cons_test_rows) truth.push_back(day1.consideration_true_prob[r]);
  result.baseline_truth_calibration =
      metrics::calibration_ratio(baseline.predict_batch(cons_test.features), truth, metrics::ReferenceKind::ground_truth)
          .ratio;
  result.distilled_truth_calibration =
      metrics::calibration_ratio(distilled.predict_batch(cons_test.features), truth,
                                 metrics::ReferenceKind::ground_truth)
          .ratio;
  return result;
}

nlohmann::json to_json(const ExperimentResult& result) {
  return {{"evaluation", to_json(result.evaluation)},
          {"consideration_calibration_vs_truth",
           {{"baseline", result.baseline_truth_calibration}, {"distilled", result.distilled_truth_calibration}}},
          {"sizes",
           {{"impression_train", result.impression_train},
            {"impression_holdout", result.impression_holdout},
            {"consideration_train", result.consideration_train},
            {"consideration_holdout", result.consideration_holdout}}},
          {"teacher_holdout_ne", result.teacher_holdout_ne},
          {"dataset_hashes", {{"impression", result.impression_hash}, {"consideration", result.consideration_hash}}}};
}

}  // namespace cascadelab::distill

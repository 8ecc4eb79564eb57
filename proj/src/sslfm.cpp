#include "cascadelab/sslfm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cascadelab/error.hpp"
#include "cascadelab/parallel.hpp"
#include "cascadelab/random.hpp"

namespace cascadelab::sslfm {

std::string to_string(Variant variant) {
  switch (variant) {
    case Variant::baseline: return "baseline";
    case Variant::dependent_only: return "dependent_only";
    case Variant::auxiliary_only: return "auxiliary_only";
    case Variant::both: return "both";
  }
  throw ConfigError("unknown variant");
}

Variant variant_from_string(const std::string& text) {
  for (Variant v : kAllVariants) {
    if (to_string(v) == text) return v;
  }
  throw ConfigError("unknown variant '" + text + "'");
}

std::string display_name(Variant variant) {
  switch (variant) {
    case Variant::baseline: return "Baseline";
    case Variant::dependent_only: return "Dependent task only";
    case Variant::auxiliary_only: return "Auxiliary task only";
    case Variant::both: return "Dependent + auxiliary task";
  }
  throw ConfigError("unknown variant");
}

MultiTaskStudent::MultiTaskStudent(model::Predictor main, Variant variant, std::size_t dependent_hidden)
    : main_(std::move(main)), variant_(variant), dependent_hidden_(dependent_hidden) {}

std::size_t MultiTaskStudent::auxiliary_parameter_count() const {
  return has_auxiliary() ? main_.arch().representation_dim() + 1 : 0;
}

std::size_t MultiTaskStudent::dependent_parameter_count() const {
  return has_dependent() ? 3 * dependent_hidden_ + 1 : 0;
}

MultiTaskStudent MultiTaskStudent::build(const model::PredictorArch& trunk, Variant variant, std::uint64_t seed,
                                         std::size_t dependent_hidden) {
  trunk.validate();
  MultiTaskStudent s(model::Predictor::initialized(trunk, seed), variant, dependent_hidden);
  if (s.has_dependent() && dependent_hidden < 1) {
    throw ConfigError("MultiTaskStudent: the dependent head needs at least one hidden unit");
  }
  const std::size_t aux = s.auxiliary_parameter_count();
  const std::size_t dep = s.dependent_parameter_count();
  s.heads_.assign(aux + dep, 0.0);
  s.head_mask_.assign(aux + dep, true);
  if (aux > 0) {
    const std::size_t rep = aux - 1;
    SplitMix64 rng(derive_seed(seed, "auxiliary-init"));
    const double limit = std::sqrt(6.0 / static_cast<double>(rep + 1));
    for (std::size_t i = 0; i < rep; ++i) s.heads_[i] = (2.0 * rng.uniform() - 1.0) * limit;
    s.head_mask_[rep] = false;
  }
  if (dep > 0) {
    const std::size_t h = dependent_hidden;
    double* p = s.heads_.data() + aux;
    SplitMix64 rng(derive_seed(seed, "dependent-init"));
    const double limit_in = std::sqrt(6.0 / static_cast<double>(1 + h));
    const double limit_out = std::sqrt(6.0 / static_cast<double>(h + 1));
    for (std::size_t k = 0; k < h; ++k) p[k] = (0.5 + 0.5 * rng.uniform()) * limit_in;          // a
    for (std::size_t k = 0; k < h; ++k) p[2 * h + k] = (0.5 + 0.5 * rng.uniform()) * limit_out;  // v
    for (std::size_t k = 0; k < h; ++k) s.head_mask_[aux + h + k] = false;                      // c
    s.head_mask_[aux + 3 * h] = false;                                                           // d
  }
  return s;
}

Outputs MultiTaskStudent::forward(std::span<const double> x, model::Workspace& ws) const {
  Outputs out;
  out.main_logit = main_.forward(x, ws);
  if (has_auxiliary()) {
    const auto rep = main_.representation(x, ws);
    double acc = heads_[rep.size()];
    for (std::size_t i = 0; i < rep.size(); ++i) acc += heads_[i] * rep[i];
    out.auxiliary_logit = acc;
  }
  if (has_dependent()) {
    const std::size_t h = dependent_hidden_;
    const double* q = heads_.data() + dependent_offset();
    double acc = q[3 * h];
    for (std::size_t k = 0; k < h; ++k) acc += q[2 * h + k] * std::tanh(q[k] * out.main_logit + q[h + k]);
    out.dependent_logit = acc;
  }
  return out;
}

double MultiTaskStudent::dependent_from_main(double main_logit) const {
  if (!has_dependent()) throw ConfigError("MultiTaskStudent: this variant has no dependent head");
  const std::size_t h = dependent_hidden_;
  const double* q = heads_.data() + dependent_offset();
  double acc = q[3 * h];
  for (std::size_t k = 0; k < h; ++k) acc += q[2 * h + k] * std::tanh(q[k] * main_logit + q[h + k]);
  return model::logistic(acc);
}

double MultiTaskStudent::predict_auxiliary(std::span<const double> x) const {
  if (!has_auxiliary()) throw ConfigError("MultiTaskStudent: this variant has no auxiliary head");
  if (x.size() != main_.input_dim()) throw DimensionError("MultiTaskStudent: input length mismatch");
  model::Workspace ws;
  return model::logistic(forward(x, ws).auxiliary_logit);
}

void MultiTaskStudent::backward(std::span<const double> x, model::Workspace& ws, const Outputs& out, double dmain,
                                double ddep, double daux, bool stop_gradient, std::span<double> main_grad,
                                std::span<double> head_grad) const {
  std::vector<double> drep;
  if (has_auxiliary() && daux != 0.0) {
    const auto rep = main_.representation(x, ws);
    drep.resize(rep.size());
    for (std::size_t i = 0; i < rep.size(); ++i) {
      head_grad[i] += daux * rep[i];
      drep[i] = daux * heads_[i];
    }
    head_grad[rep.size()] += daux;
  }
  if (has_dependent() && ddep != 0.0) {
    const double l = out.main_logit;
    const std::size_t h = dependent_hidden_;
    const std::size_t off = dependent_offset();
    const double* q = heads_.data() + off;
    double* g = head_grad.data() + off;
    double dl = 0.0;
    for (std::size_t k = 0; k < h; ++k) {
      const double t = std::tanh(q[k] * l + q[h + k]);
      g[2 * h + k] += ddep * t;
      const double dpre = ddep * q[2 * h + k] * (1.0 - t * t);
      g[k] += dpre * l;
      g[h + k] += dpre;
      dl += dpre * q[k];
    }
    g[3 * h] += ddep;
    if (!stop_gradient) dmain += dl;
  }
  if (dmain != 0.0 || !drep.empty()) main_.backward(x, ws, dmain, main_grad, drep);
}

void SslfmConfig::validate() const {
  if (!(dependent_weight >= 0.0) || !std::isfinite(dependent_weight) || !(auxiliary_weight >= 0.0) ||
      !std::isfinite(auxiliary_weight)) {
    throw ConfigError("sslfm: head loss weights must be finite and >= 0");
  }
  if (!unlabeled_only) throw ConfigError("sslfm: head losses are defined on unlabeled data only");
  train.validate();
}

namespace {

void check_dims(const MultiTaskStudent& student, const model::Dataset& labeled, const model::Dataset& unlabeled) {
  labeled.validate();
  if (unlabeled.size() > 0) unlabeled.validate();
  const std::size_t d = student.main().input_dim();
  if (labeled.features.cols != d) throw DimensionError("sslfm: labeled data width does not match the student");
  if (unlabeled.size() > 0 && unlabeled.features.cols != d) {
    throw DimensionError("sslfm: unlabeled data width does not match the student");
  }
}

// Adds the head losses of `rows` to the gradients; returns their weighted sum.
double accumulate_heads(const MultiTaskStudent& student, const model::Dataset& unlabeled,
                        std::span<const std::size_t> rows, const SslfmConfig& config, double scale,
                        std::span<double> main_grad, std::span<double> head_grad, model::Workspace& ws) {
  const double ld = student.has_dependent() ? config.dependent_weight : 0.0;
  const double la = student.has_auxiliary() ? config.auxiliary_weight : 0.0;
  double loss = 0.0;
  for (std::size_t r : rows) {
    const auto x = unlabeled.features.row(r);
    const Outputs out = student.forward(x, ws);
    const double t = unlabeled.targets[r];
    const double w = unlabeled.weight(r);
    double ddep = 0.0, daux = 0.0;
    if (student.has_dependent()) {
      loss += ld * w * model::bce_from_logit(t, out.dependent_logit);
      ddep = scale * ld * w * (model::logistic(out.dependent_logit) - t);
    }
    if (student.has_auxiliary()) {
      loss += la * w * model::bce_from_logit(t, out.auxiliary_logit);
      daux = scale * la * w * (model::logistic(out.auxiliary_logit) - t);
    }
    student.backward(x, ws, out, 0.0, ddep, daux, config.stop_gradient_dependent, main_grad, head_grad);
  }
  return loss;
}

}  // namespace

SslfmTrainResult sslfm_train(MultiTaskStudent& student, const model::Dataset& labeled,
                             const model::Dataset& unlabeled, const SslfmConfig& config) {
  config.validate();
  check_dims(student, labeled, unlabeled);
  const bool has_heads = student.has_dependent() || student.has_auxiliary();
  const bool head_loss = (student.has_dependent() && config.dependent_weight > 0.0) ||
                         (student.has_auxiliary() && config.auxiliary_weight > 0.0);
  if (head_loss && unlabeled.size() == 0) throw ConfigError("sslfm: head losses need unlabeled data");

  const auto& tc = config.train;
  model::Predictor& main = student.main();
  model::OptimizerState main_opt(tc, main.parameters().size());
  model::OptimizerState head_opt(tc, student.head_parameters().size());
  std::vector<double> main_grad(main.parameters().size());
  std::vector<double> head_grad(student.head_parameters().size());
  model::Workspace ws;

  SslfmTrainResult result;
  auto record = [&](std::size_t epoch) {
    const double loss = model::dataset_loss(main, labeled, tc.l2);
    const auto heads = student.head_parameters();
    const bool heads_finite = std::all_of(heads.begin(), heads.end(), [](double v) { return std::isfinite(v); });
    if (!std::isfinite(loss) || !heads_finite) {
      throw DivergenceError("sslfm_train: parameters became non-finite after epoch " + std::to_string(epoch) +
                            "; lower the learning rate");
    }
    result.loss_history.push_back(loss);
  };
  record(0);

  const std::size_t n = labeled.size();
  const std::size_t nu = unlabeled.size();
  const std::size_t ub = std::min(config.unlabeled_batch_size > 0 ? config.unlabeled_batch_size : tc.batch_size, nu);
  std::size_t pass = 0, cursor = 0;
  std::vector<std::size_t> unlabeled_order;
  if (has_heads && nu > 0) unlabeled_order = model::epoch_order(nu, tc.seed, pass, "unlabeled");
  std::vector<std::size_t> urows(ub);

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const auto order = model::epoch_order(n, tc.seed, epoch);
    main_opt.set_epoch(epoch);
    head_opt.set_epoch(epoch);
    for (std::size_t start = 0; start < n; start += tc.batch_size) {
      const std::size_t len = std::min(tc.batch_size, n - start);
      const std::span<const std::size_t> rows(order.data() + start, len);
      std::fill(main_grad.begin(), main_grad.end(), 0.0);
      std::fill(head_grad.begin(), head_grad.end(), 0.0);
      model::accumulate_batch(main, labeled, rows, 1.0 / static_cast<double>(len), main_grad, ws);
      result.audit.push_back({epoch, result.steps, true, len, true, false});

      if (has_heads && nu > 0) {
        for (std::size_t r = 0; r < ub; ++r) {
          if (cursor == nu) {
            unlabeled_order = model::epoch_order(nu, tc.seed, ++pass, "unlabeled");
            cursor = 0;
          }
          urows[r] = unlabeled_order[cursor++];
        }
        accumulate_heads(student, unlabeled, urows, config, 1.0 / static_cast<double>(ub), main_grad, head_grad, ws);
        result.audit.push_back({epoch, result.steps, false, ub, false, head_loss});
      }

      model::add_l2_gradient(main, tc.l2, main_grad);
      const auto heads = student.mutable_head_parameters();
      const auto& mask = student.head_weight_mask();
      for (std::size_t i = 0; i < heads.size(); ++i) {
        if (mask[i]) head_grad[i] += tc.l2 * heads[i];
      }
      main_opt.step(main.mutable_parameters(), main_grad);
      if (!heads.empty()) head_opt.step(heads, head_grad);
      ++result.steps;
    }
    record(epoch + 1);
  }
  return result;
}

SslfmTrainResult sslfm_train(MultiTaskStudent& student, const model::Predictor& teacher,
                             const model::Dataset& labeled, const Matrix& unlabeled_student_features,
                             const Matrix& unlabeled_teacher_features, const SslfmConfig& config) {
  if (unlabeled_student_features.rows != unlabeled_teacher_features.rows) {
    throw DimensionError("sslfm_train: student and teacher views have different row counts");
  }
  if (unlabeled_teacher_features.rows > 0 && unlabeled_teacher_features.cols != teacher.input_dim()) {
    throw DimensionError("sslfm_train: teacher features do not match the teacher");
  }
  model::Dataset unlabeled{unlabeled_student_features, teacher.predict_batch(unlabeled_teacher_features), {}};
  return sslfm_train(student, labeled, unlabeled, config);
}

double multitask_loss(const MultiTaskStudent& student, const model::Dataset& labeled,
                      const model::Dataset& unlabeled, const SslfmConfig& config, std::span<double> gradient) {
  config.validate();
  check_dims(student, labeled, unlabeled);
  if (labeled.size() == 0) throw ConfigError("multitask_loss: labeled batch is empty");
  const std::size_t nm = student.main().parameters().size();
  std::vector<double> main_grad(nm, 0.0), head_grad(student.head_parameters().size(), 0.0);
  model::Workspace ws;
  std::vector<std::size_t> rows(labeled.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  double loss = model::accumulate_batch(student.main(), labeled, rows, 1.0 / static_cast<double>(rows.size()),
                                        main_grad, ws) /
                static_cast<double>(rows.size());
  if (unlabeled.size() > 0) {
    std::vector<std::size_t> urows(unlabeled.size());
    std::iota(urows.begin(), urows.end(), std::size_t{0});
    const double scale = 1.0 / static_cast<double>(urows.size());
    loss += scale * accumulate_heads(student, unlabeled, urows, config, scale, main_grad, head_grad, ws);
  }
  const double l2 = config.train.l2;
  const auto params = student.main().parameters();
  const auto& mask = student.main().weight_mask();
  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (mask[i]) sq += params[i] * params[i];
  }
  const auto heads = student.head_parameters();
  const auto& hmask = student.head_weight_mask();
  for (std::size_t i = 0; i < heads.size(); ++i) {
    if (hmask[i]) {
      sq += heads[i] * heads[i];
      head_grad[i] += l2 * heads[i];
    }
  }
  loss += 0.5 * l2 * sq;
  model::add_l2_gradient(student.main(), l2, main_grad);
  if (!gradient.empty()) {
    if (gradient.size() != student.parameter_count()) throw DimensionError("multitask_loss: gradient size mismatch");
    std::copy(main_grad.begin(), main_grad.end(), gradient.begin());
    std::copy(head_grad.begin(), head_grad.end(), gradient.begin() + static_cast<std::ptrdiff_t>(nm));
  }
  return loss;
}

double grad_check(const MultiTaskStudent& student, const model::Dataset& labeled, const model::Dataset& unlabeled,
                  const SslfmConfig& config, double epsilon) {
  const std::size_t nm = student.main().parameters().size();
  MultiTaskStudent probe = student;
  auto load = [&](std::span<const double> params) {
    std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(nm),
              probe.main().mutable_parameters().begin());
    std::copy(params.begin() + static_cast<std::ptrdiff_t>(nm), params.end(),
              probe.mutable_head_parameters().begin());
  };
  std::vector<double> flat(student.main().parameters().begin(), student.main().parameters().end());
  flat.insert(flat.end(), student.head_parameters().begin(), student.head_parameters().end());
  return model::grad_check(
      flat,
      [&](std::span<const double> p) {
        load(p);
        return multitask_loss(probe, labeled, unlabeled, config);
      },
      [&](std::span<const double> p, std::span<double> g) {
        load(p);
        multitask_loss(probe, labeled, unlabeled, config, g);
      },
      epsilon);
}

data::PoolConfig ExperimentConfig::foundation_pool() {
  data::PoolConfig pool;
  pool.num_features = 30;
  pool.num_candidates = 10000;
  pool.bias = -5.0;
  const double extra[] = {0.6, -0.6, 0.5, -0.5, 0.5, 0.4, -0.4, 0.4, 0.3, -0.3};
  pool.informative_weights.insert(pool.informative_weights.end(), std::begin(extra), std::end(extra));
  return pool;
}

void ExperimentConfig::validate() const {
  pool.validate();
  if (requests < 1) throw ConfigError("sslfm experiment: requests must be >= 1");
  if (stage_sizes.size() != 2) throw ConfigError("sslfm experiment: the cascade must have exactly two stages");
  if (!(stage1_noise >= 0.0) || !(stage2_noise >= 0.0)) throw ConfigError("sslfm experiment: noise must be >= 0");
  student_arch.validate();
  teacher_arch.validate();
  if (student_features < 1 || student_features > pool.num_features) {
    throw ConfigError("sslfm experiment: student_features must lie in [1, num_features]");
  }
  if (student_arch.input_dim != student_features) {
    throw DimensionError("sslfm experiment: student input_dim must equal student_features");
  }
  if (teacher_arch.input_dim != pool.num_features) {
    throw DimensionError("sslfm experiment: teacher input_dim must equal num_features");
  }
  if (teacher_arch.parameter_count() <= student_arch.parameter_count()) {
    throw ConfigError("sslfm experiment: the teacher must be strictly larger than the student trunk");
  }
  teacher_train.validate();
  sslfm.validate();
  if (dependent_hidden < 1) throw ConfigError("sslfm experiment: dependent_hidden must be >= 1");
  if (variants.empty()) throw ConfigError("sslfm experiment: at least one variant is required");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("sslfm experiment: train_fraction must lie in (0, 1)");
  }
}

const VariantOutcome& ExperimentResult::outcome(Variant variant) const {
  for (const auto& o : outcomes) {
    if (o.variant == variant) return o;
  }
  throw ConfigError("sslfm: variant '" + to_string(variant) + "' was not run");
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  const std::uint64_t seed = config.seed;
  const std::vector<data::StageModel> stages{
      data::noisy_oracle_stage(config.stage1_noise, derive_seed(seed, "stage1")),
      data::noisy_oracle_stage(config.stage2_noise, derive_seed(seed, "stage2"))};
  const auto traffic = data::simulate_traffic(config.pool, config.requests, stages, config.stage_sizes,
                                              derive_seed(seed, "traffic"), config.threads);
  const auto [train_rows, test_rows] =
      data::split_indices(traffic.impression.size(), config.train_fraction, derive_seed(seed, "split:impression"));
  const auto imp_train = data::subset(traffic.impression, train_rows);
  const auto imp_test = data::subset(traffic.impression, test_rows);

  std::vector<std::size_t> cols(config.student_features);
  std::iota(cols.begin(), cols.end(), std::size_t{0});
  auto student_view = [&](const data::ImpressionSet& set) {
    auto ds = model::Dataset::from_impressions(set);
    ds.features = ds.features.select_cols(cols);
    return ds;
  };

  auto teacher = model::Predictor::initialized(config.teacher_arch, derive_seed(seed, "teacher"));
  auto teacher_train = config.teacher_train;
  teacher_train.seed = derive_seed(seed, "teacher:train");
  model::Dataset teacher_data;
  if (config.teacher_requests > 0) {
    auto pool = config.pool;
    pool.id_base += config.requests * pool.num_candidates;
    const auto foundation = data::simulate_traffic(pool, config.teacher_requests, stages, config.stage_sizes,
                                                   derive_seed(seed, "teacher-traffic"), config.threads);
    teacher_data = model::Dataset::from_impressions(foundation.impression);
  } else {
    teacher_data = model::Dataset::from_impressions(imp_train);
  }
  model::train(teacher, teacher_data, teacher_train);

  const auto labeled = student_view(imp_train);
  const auto holdout = student_view(imp_test);
  const model::Dataset unlabeled{traffic.consideration.features.select_cols(cols),
                                 teacher.predict_batch(traffic.consideration.features, config.threads),
                                 {}};

  ExperimentResult result;
  result.impression_train = labeled.size();
  result.impression_holdout = holdout.size();
  result.consideration_train = unlabeled.size();
  result.teacher_train = teacher_data.size();
  result.teacher_holdout_ne = metrics::normalized_entropy(holdout.targets, teacher.predict_batch(imp_test.features)).ne;

  std::vector<Variant> variants{Variant::baseline};
  for (Variant v : config.variants) {
    if (std::find(variants.begin(), variants.end(), v) == variants.end()) variants.push_back(v);
  }
  std::vector<metrics::NEReport> ne(variants.size());
  auto sc = config.sslfm;
  sc.train.seed = derive_seed(seed, "student:train");
  parallel_for(variants.size(), config.threads, [&](std::size_t i) {
    auto student =
        MultiTaskStudent::build(config.student_arch, variants[i], derive_seed(seed, "student"), config.dependent_hidden);
    sslfm_train(student, labeled, unlabeled, sc);
    ne[i] = metrics::normalized_entropy(holdout.targets, student.main().predict_batch(holdout.features));
  });
  result.baseline_holdout_ne = ne.front().ne;
  result.teacher_dominates = result.teacher_holdout_ne < result.baseline_holdout_ne;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    result.outcomes.push_back({variants[i], metrics::compared_to(ne[i], ne.front(), "baseline")});
  }
  return result;
}

std::string render_table(const ExperimentResult& result) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-28s | %s\n", "Model", "NE relative change");
  out << line << std::string(50, '-') << '\n';
  for (const auto& o : result.outcomes) {
    std::snprintf(line, sizeof line, "%-28s | %s\n", display_name(o.variant).c_str(),
                  metrics::format_pct(o.impression_ne.ne_relative_change).c_str());
    out << line;
  }
  return out.str();
}

nlohmann::json to_json(const ExperimentResult& result) {
  auto rows = nlohmann::json::array();
  for (const auto& o : result.outcomes) {
    rows.push_back({{"variant", to_string(o.variant)},
                    {"model", display_name(o.variant)},
                    {"impression_ne", metrics::to_json(o.impression_ne)},
                    {"ne_relative_change_pct", o.impression_ne.ne_relative_change}});
  }
  return {{"variants", rows},
          {"teacher_holdout_ne", result.teacher_holdout_ne},
          {"baseline_holdout_ne", result.baseline_holdout_ne},
          {"teacher_dominates", result.teacher_dominates},
          {"sizes",
           {{"impression_train", result.impression_train},
            {"impression_holdout", result.impression_holdout},
            {"consideration_unlabeled", result.consideration_train},
            {"teacher_train", result.teacher_train}}}};
}

}  // namespace cascadelab::sslfm

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

#include "cascadelab/error.hpp"
#include "cascadelab/random.hpp"
#include "cascadelab/sslfm.hpp"

using namespace cascadelab;
using namespace cascadelab::sslfm;

namespace {

model::Dataset gaussian_data(std::size_t n, std::size_t d, std::uint64_t seed, bool soft) {
  SplitMix64 rng(seed);
  boost::random::normal_distribution<double> normal;
  boost::random::uniform_01<double> unif;
  model::Dataset ds;
  ds.features = Matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    double z = -0.5;
    for (std::size_t j = 0; j < d; ++j) {
      ds.features(i, j) = normal(rng);
      z += (j % 2 ? -0.4 : 0.6) * ds.features(i, j);
    }
    const double p = model::logistic(z);
    ds.targets.push_back(soft ? p : (unif(rng) < p ? 1.0 : 0.0));
  }
  return ds;
}

const auto kTrunk = model::PredictorArch::feedforward(5, {6}, model::Activation::tanh);

SslfmConfig quick_config(double ld, double la) {
  SslfmConfig c;
  c.dependent_weight = ld;
  c.auxiliary_weight = la;
  c.train = {.learning_rate = 1e-2, .epochs = 4, .batch_size = 32, .l2 = 1e-3, .seed = 9};
  return c;
}

std::vector<double> main_params(const MultiTaskStudent& s) {
  return {s.main().parameters().begin(), s.main().parameters().end()};
}

ExperimentConfig small_experiment(std::uint64_t seed) {
  ExperimentConfig c;
  c.pool.num_candidates = 4000;
  c.stage_sizes = {1500, 400};
  c.requests = 2;
  c.teacher_requests = 4;
  c.teacher_train.epochs = 5;
  c.sslfm.train.epochs = 5;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(MultiTaskStudent, BaselineIsPlainPredictor) {
  const auto s = MultiTaskStudent::build(kTrunk, Variant::baseline, 42);
  const auto plain = model::Predictor::initialized(kTrunk, 42);
  EXPECT_EQ(s.parameter_count(), plain.parameters().size());
  EXPECT_FALSE(s.has_dependent());
  EXPECT_FALSE(s.has_auxiliary());
  const auto x = gaussian_data(100, 5, 3, true);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(s.predict(x.features.row(i)), plain.predict(x.features.row(i)));
}

TEST(MultiTaskStudent, ParameterCountsAddUp) {
  // Trunk 5 -> 6 -> 1: 30 + 6 + 6 + 1 = 43. Auxiliary: 6 + 1. Dependent, 4 units: 3 * 4 + 1.
  EXPECT_EQ(MultiTaskStudent::build(kTrunk, Variant::baseline, 1).parameter_count(), 43u);
  EXPECT_EQ(MultiTaskStudent::build(kTrunk, Variant::auxiliary_only, 1).parameter_count(), 43u + 7u);
  EXPECT_EQ(MultiTaskStudent::build(kTrunk, Variant::dependent_only, 1).parameter_count(), 43u + 13u);
  const auto both = MultiTaskStudent::build(kTrunk, Variant::both, 1);
  EXPECT_EQ(both.parameter_count(), 43u + 7u + 13u);
  EXPECT_EQ(both.auxiliary_parameter_count() + both.dependent_parameter_count(), 20u);
  // A linear trunk represents with its inputs.
  EXPECT_EQ(MultiTaskStudent::build(model::PredictorArch::linear(5), Variant::auxiliary_only, 1).parameter_count(),
            6u + 6u);
}

TEST(MultiTaskStudent, DependentHeadStartsMonotone) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto s = MultiTaskStudent::build(kTrunk, Variant::both, seed, 3 + seed);
    double prev = -1.0;
    for (double l = -8.0; l <= 8.0; l += 0.05) {
      const double d = s.dependent_from_main(l);
      EXPECT_GT(d, prev) << "seed " << seed << " logit " << l;
      prev = d;
    }
  }
  EXPECT_THROW(MultiTaskStudent::build(kTrunk, Variant::baseline, 0).dependent_from_main(0.0), ConfigError);
  EXPECT_THROW(MultiTaskStudent::build(kTrunk, Variant::both, 0, 0), ConfigError);
}

TEST(MultiTaskStudent, AuxiliaryHeadReadsRepresentation) {
  const auto s = MultiTaskStudent::build(kTrunk, Variant::auxiliary_only, 8);
  const auto x = gaussian_data(1, 5, 2, true);
  model::Workspace ws;
  s.main().forward(x.features.row(0), ws);
  const auto rep = s.main().representation(x.features.row(0), ws);
  const auto heads = s.head_parameters();
  double z = heads[rep.size()];
  for (std::size_t i = 0; i < rep.size(); ++i) z += heads[i] * rep[i];
  EXPECT_DOUBLE_EQ(s.predict_auxiliary(x.features.row(0)), model::logistic(z));
}

TEST(SslfmTrain, ZeroWeightsReproduceBaselineTraining) {
  const auto labeled = gaussian_data(300, 5, 1, false);
  const auto unlabeled = gaussian_data(700, 5, 2, true);
  const auto config = quick_config(0.0, 0.0);
  auto plain = model::Predictor::initialized(kTrunk, 5);
  const auto plain_result = model::train(plain, labeled, config.train);
  for (Variant v : kAllVariants) {
    auto s = MultiTaskStudent::build(kTrunk, v, 5);
    const auto r = sslfm_train(s, labeled, unlabeled, config);
    EXPECT_EQ(main_params(s), std::vector<double>(plain.parameters().begin(), plain.parameters().end()))
        << to_string(v);
    EXPECT_EQ(r.loss_history, plain_result.loss_history);
    EXPECT_EQ(r.steps, plain_result.steps);
  }
}

TEST(SslfmTrain, InactiveDependentHeadLeavesTrajectoryUnchanged) {
  const auto labeled = gaussian_data(300, 5, 3, false);
  const auto unlabeled = gaussian_data(500, 5, 4, true);
  auto aux = MultiTaskStudent::build(kTrunk, Variant::auxiliary_only, 6);
  auto both = MultiTaskStudent::build(kTrunk, Variant::both, 6);
  sslfm_train(aux, labeled, unlabeled, quick_config(0.0, 0.7));
  sslfm_train(both, labeled, unlabeled, quick_config(0.0, 0.7));
  EXPECT_EQ(main_params(aux), main_params(both));
  EXPECT_TRUE(std::equal(aux.head_parameters().begin(), aux.head_parameters().end(), both.head_parameters().begin()));

  // With stop-gradient the dependent head cannot move the main head.
  auto plain = MultiTaskStudent::build(kTrunk, Variant::baseline, 6);
  auto dep = MultiTaskStudent::build(kTrunk, Variant::dependent_only, 6);
  auto config = quick_config(0.9, 0.0);
  sslfm_train(plain, labeled, unlabeled, config);
  config.stop_gradient_dependent = true;
  sslfm_train(dep, labeled, unlabeled, config);
  EXPECT_EQ(main_params(plain), main_params(dep));
}

TEST(SslfmTrain, ActiveHeadsChangeTheMainHead) {
  const auto labeled = gaussian_data(300, 5, 3, false);
  const auto unlabeled = gaussian_data(500, 5, 4, true);
  auto plain = MultiTaskStudent::build(kTrunk, Variant::baseline, 6);
  sslfm_train(plain, labeled, unlabeled, quick_config(0.5, 0.5));
  for (Variant v : {Variant::dependent_only, Variant::auxiliary_only, Variant::both}) {
    auto s = MultiTaskStudent::build(kTrunk, v, 6);
    sslfm_train(s, labeled, unlabeled, quick_config(0.5, 0.5));
    EXPECT_NE(main_params(s), main_params(plain)) << to_string(v);
  }
}

TEST(SslfmTrain, AuditShowsHeadLossesOnlyOnUnlabeledBatches) {
  const auto labeled = gaussian_data(100, 5, 5, false);
  const auto unlabeled = gaussian_data(90, 5, 6, true);
  auto config = quick_config(0.5, 0.5);
  config.unlabeled_batch_size = 40;
  auto s = MultiTaskStudent::build(kTrunk, Variant::both, 2);
  const auto r = sslfm_train(s, labeled, unlabeled, config);
  // 4 labeled batches per epoch (32, 32, 32, 4), each paired with an unlabeled batch.
  ASSERT_EQ(r.steps, 16u);
  ASSERT_EQ(r.audit.size(), 32u);
  for (const auto& rec : r.audit) {
    if (rec.labeled) {
      EXPECT_TRUE(rec.supervised_loss);
      EXPECT_FALSE(rec.head_loss);
    } else {
      EXPECT_FALSE(rec.supervised_loss);
      EXPECT_TRUE(rec.head_loss);
      EXPECT_EQ(rec.rows, 40u);
    }
  }
  EXPECT_EQ(r.audit[6].rows, 4u);
  EXPECT_EQ(r.audit[7].step, 3u);

  auto plain = MultiTaskStudent::build(kTrunk, Variant::baseline, 2);
  const auto rp = sslfm_train(plain, labeled, unlabeled, config);
  EXPECT_TRUE(std::all_of(rp.audit.begin(), rp.audit.end(), [](const BatchRecord& b) { return b.labeled; }));
}

TEST(SslfmTrain, GradientsMatchFiniteDifferences) {
  const auto labeled = gaussian_data(12, 5, 7, false);
  const auto unlabeled = gaussian_data(15, 5, 8, true);
  const auto config = quick_config(0.8, 0.6);
  for (auto trunk : {kTrunk, model::PredictorArch::feedforward(5, {4, 3}, model::Activation::tanh),
                     model::PredictorArch::feedforward(20, {8}, model::Activation::tanh)}) {
    const auto lab = trunk.input_dim == 5 ? labeled : gaussian_data(12, 20, 7, false);
    const auto unl = trunk.input_dim == 5 ? unlabeled : gaussian_data(15, 20, 8, true);
    for (Variant v : kAllVariants) {
      const auto s = MultiTaskStudent::build(trunk, v, 3);
      EXPECT_LT(grad_check(s, lab, unl, config), 1e-4) << to_string(v);
    }
  }
  for (Variant v : kAllVariants) {
    const auto s = MultiTaskStudent::build(model::PredictorArch::linear(5), v, 3);
    EXPECT_LT(grad_check(s, labeled, unlabeled, config), 1e-6) << to_string(v);
  }
}

TEST(SslfmTrain, TeacherOverloadLabelsWithTeacher) {
  const auto labeled = gaussian_data(100, 5, 1, false);
  const auto teacher_view = gaussian_data(200, 7, 2, true);
  const auto teacher = model::Predictor::initialized(model::PredictorArch::linear(7), 4);
  const std::size_t cols[] = {0, 1, 2, 3, 4};
  const auto student_view = teacher_view.features.select_cols(cols);
  auto a = MultiTaskStudent::build(kTrunk, Variant::both, 1);
  auto b = a;
  const auto config = quick_config(0.5, 0.5);
  sslfm_train(a, teacher, labeled, student_view, teacher_view.features, config);
  sslfm_train(b, labeled, model::Dataset{student_view, teacher.predict_batch(teacher_view.features), {}}, config);
  EXPECT_EQ(main_params(a), main_params(b));
  EXPECT_THROW(sslfm_train(a, teacher, labeled, student_view, student_view, config), DimensionError);
}

TEST(SslfmTrain, Errors) {
  const auto labeled = gaussian_data(50, 5, 1, false);
  const model::Dataset none{Matrix(0, 5), {}, {}};
  auto s = MultiTaskStudent::build(kTrunk, Variant::both, 1);
  EXPECT_THROW(sslfm_train(s, labeled, none, quick_config(0.5, 0.0)), ConfigError);
  EXPECT_NO_THROW(sslfm_train(s, labeled, none, quick_config(0.0, 0.0)));
  EXPECT_THROW(sslfm_train(s, labeled, gaussian_data(10, 4, 2, true), quick_config(0.5, 0.5)), DimensionError);
  auto bad = quick_config(-0.1, 0.5);
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = quick_config(0.5, 0.5);
  bad.unlabeled_only = false;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = quick_config(0.5, 0.5);
  bad.train.learning_rate = 1e308;
  bad.train.optimizer = model::Optimizer::sgd;
  auto diverging = MultiTaskStudent::build(kTrunk, Variant::both, 1);
  EXPECT_THROW(sslfm_train(diverging, labeled, gaussian_data(50, 5, 3, true), bad), DivergenceError);
}

TEST(SslfmExperiment, ZeroHeadWeightsMatchBaselineExactly) {
  auto c = small_experiment(2);
  c.sslfm.dependent_weight = 0.0;
  c.sslfm.auxiliary_weight = 0.0;
  const auto r = run_experiment(c);
  ASSERT_EQ(r.outcomes.size(), 4u);
  for (const auto& o : r.outcomes) {
    EXPECT_EQ(o.impression_ne.ne, r.baseline_holdout_ne);
    EXPECT_EQ(o.impression_ne.ne_relative_change, 0.0);
  }
}

TEST(SslfmExperiment, DeterministicAcrossThreads) {
  auto c = small_experiment(3);
  const auto a = to_json(run_experiment(c)).dump();
  c.threads = 4;
  EXPECT_EQ(to_json(run_experiment(c)).dump(), a);
}

TEST(SslfmExperiment, TableRowsAndValidation) {
  const auto r = run_experiment(small_experiment(4));
  const auto table = render_table(r);
  for (const char* row : {"Baseline", "Dependent task only", "Auxiliary task only", "Dependent + auxiliary task"}) {
    EXPECT_NE(table.find(row), std::string::npos) << row;
  }
  EXPECT_NE(table.find("Baseline                     | 0.000%"), std::string::npos) << table;
  EXPECT_EQ(r.outcomes.front().variant, Variant::baseline);

  auto c = small_experiment(4);
  c.teacher_arch = model::PredictorArch::linear(30);
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_experiment(4);
  c.student_arch = model::PredictorArch::feedforward(19, {8});
  EXPECT_THROW(c.validate(), DimensionError);
  EXPECT_EQ(variant_from_string("auxiliary_only"), Variant::auxiliary_only);
  EXPECT_THROW(variant_from_string("aux"), ConfigError);
}

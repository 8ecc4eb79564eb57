#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "cascadelab/distill.hpp"
#include "cascadelab/error.hpp"
#include "cascadelab/random.hpp"

using namespace cascadelab;
using namespace cascadelab::distill;

namespace {

struct SmallScenario {
  data::CandidatePool pool;
  data::Splits splits;
};

SmallScenario small_scenario(std::uint64_t seed) {
  data::PoolConfig pc;
  pc.num_candidates = 20000;
  pc.seed = seed;
  SmallScenario s;
  s.pool = data::generate_pool(pc);
  const std::vector<data::StageModel> stages{data::noisy_oracle_stage(1.0, seed + 1),
                                             data::noisy_oracle_stage(0.5, seed + 2)};
  const std::size_t sizes[] = {2000, 300};
  s.splits = data::make_splits(data::run_cascade(s.pool, stages, sizes), s.pool);
  return s;
}

model::Predictor oracle_teacher(const data::PoolConfig& pc) {
  std::vector<double> params = pc.informative_weights;
  params.push_back(pc.bias);
  return model::Predictor(model::PredictorArch::linear(pc.num_features), params, 0);
}

}  // namespace

TEST(DistillConfig, Validation) {
  DistillConfig c;
  EXPECT_NO_THROW(c.validate());
  c.teacher_stage = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c.teacher_stage = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = DistillConfig{};
  c.distill_weight = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = DistillConfig{};
  c.unlabeled_batch_mix = 1.2;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(PseudoLabels, ZeroTeacherGivesHalf) {
  const auto s = small_scenario(1);
  const model::Predictor teacher(model::PredictorArch::linear(20));
  const auto labeled = make_pseudo_labels(teacher, s.splits.consideration);
  for (double t : labeled.teacher_pred) EXPECT_EQ(t, 0.5);
  EXPECT_EQ(labeled.ids, s.splits.consideration.ids);
}

TEST(PseudoLabels, OracleTeacherReproducesTruth) {
  const auto s = small_scenario(2);
  const auto teacher = oracle_teacher(data::PoolConfig{});
  const auto labeled = make_pseudo_labels(teacher, s.splits.consideration);
  for (std::size_t r = 0; r < labeled.size(); ++r) {
    EXPECT_NEAR(labeled.teacher_pred[r], s.pool.true_prob[labeled.ids[r]], 1e-12);
  }
  // Idempotent.
  EXPECT_EQ(make_pseudo_labels(teacher, labeled).teacher_pred, labeled.teacher_pred);
}

TEST(PseudoLabels, LiftedMeanOnConsideration) {
  const auto s = small_scenario(3);
  const auto teacher = oracle_teacher(data::PoolConfig{});
  const auto labeled = make_pseudo_labels(teacher, s.splits.consideration);
  const double pseudo = std::accumulate(labeled.teacher_pred.begin(), labeled.teacher_pred.end(), 0.0) /
                        static_cast<double>(labeled.size());
  const double pool_rate =
      std::accumulate(s.pool.label.begin(), s.pool.label.end(), 0.0) / static_cast<double>(s.pool.size());
  EXPECT_GT(pseudo, pool_rate);
}

TEST(PseudoLabels, DimensionMismatch) {
  const auto s = small_scenario(4);
  EXPECT_THROW(make_pseudo_labels(model::Predictor(model::PredictorArch::linear(3)), s.splits.consideration),
               DimensionError);
}

TEST(DistillTrain, ZeroLambdaOrMixIsBaseline) {
  const auto s = small_scenario(5);
  const auto imp = model::Dataset::from_impressions(s.splits.impression);
  const auto cons = model::Dataset::from_consideration(s.splits.consideration);
  const auto init = model::Predictor::initialized(model::PredictorArch::feedforward(20, {4}), 1);
  DistillConfig c;
  c.train = {.learning_rate = 1e-2, .epochs = 3, .batch_size = 32, .seed = 9};
  model::Predictor baseline = init;
  const auto rb = model::train(baseline, imp, c.train);
  for (auto [lambda, mix] : {std::pair{0.0, 0.5}, std::pair{1.0, 0.0}}) {
    c.distill_weight = lambda;
    c.unlabeled_batch_mix = mix;
    model::Predictor student = init;
    const auto rs = distill_train(student, imp, cons, c);
    EXPECT_EQ(rs.loss_history, rb.loss_history);
    for (std::size_t j = 0; j < init.parameters().size(); ++j) {
      ASSERT_EQ(student.parameters()[j], baseline.parameters()[j]);
    }
  }
  c.distill_weight = 0.0;
  model::Predictor student = init;
  distill_train(student, imp, model::Dataset{}, c);
  EXPECT_TRUE(std::equal(student.parameters().begin(), student.parameters().end(), baseline.parameters().begin()));
  c.distill_weight = 1.0;
  c.unlabeled_batch_mix = 0.5;
  EXPECT_THROW(distill_train(student, imp, model::Dataset{}, c), ConfigError);
}

TEST(DistillTrain, StationaryWhenStudentMatchesTeacher) {
  const auto s = small_scenario(6);
  const auto student_init = model::Predictor::initialized(model::PredictorArch::feedforward(20, {5}), 2);
  auto cons = model::Dataset::from_consideration(make_pseudo_labels(student_init, s.splits.consideration));
  const auto imp = model::Dataset::from_impressions(s.splits.impression);
  DistillConfig c;
  c.unlabeled_batch_mix = 1.0;
  c.train = {.learning_rate = 1e-2, .epochs = 2, .batch_size = 16, .seed = 1};
  model::Predictor student = student_init;
  distill_train(student, imp, cons, c);
  for (std::size_t j = 0; j < student.parameters().size(); ++j) {
    EXPECT_EQ(student.parameters()[j], student_init.parameters()[j]);
  }
}

TEST(DistillTrain, DeterministicAndDecreasing) {
  const auto s = small_scenario(7);
  const auto imp = model::Dataset::from_impressions(s.splits.impression);
  const auto cons = model::Dataset::from_consideration(s.splits.consideration);
  DistillConfig c;
  c.train = {.learning_rate = 2e-2, .epochs = 10, .batch_size = 64, .seed = 3};
  auto a = model::Predictor::initialized(model::PredictorArch::linear(20), 4);
  auto b = a;
  const auto ra = distill_train(a, imp, cons, c);
  const auto rb = distill_train(b, imp, cons, c);
  EXPECT_EQ(ra.loss_history, rb.loss_history);
  EXPECT_LT(ra.loss_history.back(), ra.loss_history.front());
  // 1700 consideration rows at 32 per batch.
  EXPECT_EQ(ra.steps, 10u * 54u);
}

TEST(DistillTrain, LambdaMonotoneInTeacherLoss) {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const auto s = small_scenario(seed);
    const auto imp = model::Dataset::from_impressions(s.splits.impression);
    const auto cons = model::Dataset::from_consideration(s.splits.consideration);
    const auto init = model::Predictor::initialized(model::PredictorArch::linear(20), seed);
    double previous = 1e300;
    for (double lambda : {0.0, 0.5, 1.0}) {
      DistillConfig c;
      c.distill_weight = lambda;
      c.train = {.learning_rate = 5e-2, .epochs = 60, .batch_size = 64, .l2 = 1e-4, .seed = seed, .lr_decay = 0.95};
      model::Predictor student = init;
      distill_train(student, imp, cons, c);
      const double loss = model::dataset_loss(student, cons);
      EXPECT_LE(loss, previous + 1e-3) << "seed " << seed << " lambda " << lambda;
      previous = loss;
    }
  }
}

TEST(Evaluate, StudentEqualToTeacher) {
  const auto s = small_scenario(8);
  const auto teacher = oracle_teacher(data::PoolConfig{});
  const auto e = evaluate_cross_stage(teacher, teacher, &teacher, s.splits.impression, s.splits.consideration);
  EXPECT_EQ(e.baseline.impression_calibration.ratio, 1.0);
  EXPECT_EQ(e.baseline.consideration_calibration.ratio, 1.0);
  EXPECT_EQ(e.consideration_ne_change, 0.0);
  EXPECT_EQ(e.impression_ne_change, 0.0);
}

TEST(Evaluate, TableLayout) {
  CrossStageEvaluation e;
  e.baseline.impression_calibration.ratio = 1.01;
  e.baseline.consideration_calibration.ratio = 1.27;
  e.candidate.impression_calibration.ratio = 1.01;
  e.candidate.consideration_calibration.ratio = 1.12;
  e.impression_ne_change = 0.0;
  e.consideration_ne_change = -1.98;
  const std::string table = render_table(e);
  EXPECT_NE(table.find("Impression data"), std::string::npos);
  EXPECT_NE(table.find("Consideration data"), std::string::npos);
  const auto baseline_row = table.substr(table.find("baseline"));
  EXPECT_EQ(baseline_row.substr(0, baseline_row.find('\n')),
            "baseline                   | 1.01         0.00%           | 1.27         0.00%          ");
  EXPECT_NE(table.find("-1.98%"), std::string::npos);
  const auto j = to_json(e);
  EXPECT_EQ(j["consideration_ne_change_pct"], -1.98);
}

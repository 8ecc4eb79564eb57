#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "cascadelab/content_hash.hpp"
#include "cascadelab/error.hpp"
#include "cascadelab/synthgen.hpp"

using namespace cascadelab;
using namespace cascadelab::data;

namespace {

PoolConfig small_pool(std::size_t n, std::uint64_t seed) {
  PoolConfig c;
  c.num_candidates = n;
  c.seed = seed;
  return c;
}

std::vector<StageModel> noisy_stages(std::uint64_t seed) {
  return {noisy_oracle_stage(1.0, seed), noisy_oracle_stage(0.5, seed + 1)};
}

}  // namespace

TEST(PoolConfig, Validation) {
  PoolConfig c;
  EXPECT_NO_THROW(c.validate());
  c.informative_weights.assign(20, 0.0);
  EXPECT_THROW(c.validate(), ConfigError);
  c = PoolConfig{};
  c.informative_weights.pop_back();
  EXPECT_THROW(c.validate(), DimensionError);
  c = PoolConfig{};
  c.feature_correlation = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = PoolConfig{};
  c.num_features = 0;
  c.informative_weights.clear();
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(GeneratePool, ZeroLogitGivesHalf) {
  // An all-zero weight vector is rejected, so the first weight is chosen to
  // vanish in the logit.
  PoolConfig c;
  c.num_candidates = 100;
  c.num_features = 2;
  c.informative_weights = {1e-300, 0.0};
  c.bias = 0.0;
  const auto pool = generate_pool(c);
  for (double p : pool.true_prob) EXPECT_EQ(p, 0.5);
}

TEST(GeneratePool, SymmetricLogitGivesHalfTheLabels) {
  PoolConfig c;
  c.num_candidates = 100000;
  c.num_features = 2;
  c.informative_weights = {1.0, 0.0};
  c.bias = 0.0;
  c.feature_correlation = 0.0;
  c.seed = 5;
  const auto pool = generate_pool(c);
  const double mean = std::accumulate(pool.label.begin(), pool.label.end(), 0.0) / 100000.0;
  EXPECT_NEAR(mean, 0.5, 0.005);
}

TEST(GeneratePool, FeatureMomentsMatchCorrelation) {
  auto c = small_pool(50000, 9);
  const auto pool = generate_pool(c);
  double m0 = 0, v0 = 0, c01 = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    m0 += pool.features(i, 0);
    v0 += pool.features(i, 0) * pool.features(i, 0);
    c01 += pool.features(i, 0) * pool.features(i, 1);
  }
  const double n = static_cast<double>(pool.size());
  EXPECT_NEAR(m0 / n, 0.0, 0.02);
  EXPECT_NEAR(v0 / n, 1.0, 0.03);
  EXPECT_NEAR(c01 / n, 0.3, 0.03);
  for (double p : pool.true_prob) {
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
}

TEST(GeneratePool, DeterministicAndThreadIndependent) {
  auto c = small_pool(10000, 3);
  c.nonlinearity = true;
  const auto a = generate_pool(c, 1);
  const auto b = generate_pool(c, 3);
  EXPECT_EQ(a.features.data, b.features.data);
  EXPECT_EQ(a.true_prob, b.true_prob);
  EXPECT_EQ(a.label, b.label);
  c.seed = 4;
  EXPECT_NE(generate_pool(c).true_prob, a.true_prob);
}

TEST(GeneratePool, IdBase) {
  auto c = small_pool(10, 1);
  c.id_base = 1000;
  const auto pool = generate_pool(c);
  EXPECT_EQ(pool.candidate_id.front(), 1000u);
  EXPECT_EQ(pool.candidate_id.back(), 1009u);
}

TEST(RunCascade, SingleFullStage) {
  const auto pool = generate_pool(small_pool(200, 1));
  const std::vector<StageModel> stages{oracle_stage()};
  const std::size_t sizes[] = {200};
  const auto trace = run_cascade(pool, stages, sizes);
  EXPECT_EQ(trace.stage_sets[1].size(), 200u);
  EXPECT_EQ(trace.impression_labels.size(), 200u);
  const auto splits = make_splits(trace, pool);
  EXPECT_EQ(splits.impression.size(), 200u);
  EXPECT_EQ(splits.consideration.size(), 0u);
  EXPECT_TRUE(splits.impression.teacher_pred.empty());
}

TEST(RunCascade, OracleFirstStageSelectsTopProbabilities) {
  const auto pool = generate_pool(small_pool(1000, 2));
  const std::vector<StageModel> stages{oracle_stage(), noisy_oracle_stage(0.5, 1)};
  const std::size_t sizes[] = {100, 10};
  const auto trace = run_cascade(pool, stages, sizes);
  std::vector<double> sorted = pool.true_prob;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  for (std::size_t r = 0; r < 100; ++r) EXPECT_EQ(pool.true_prob[trace.stage_sets[1][r]], sorted[r]);
}

TEST(RunCascade, SelectionLiftsMean) {
  const auto pool = generate_pool(small_pool(1000, 8));
  const std::size_t sizes[] = {100, 10};
  const auto trace = run_cascade(pool, noisy_stages(3), sizes);
  double pool_mean = 0, s1_mean = 0;
  for (double p : pool.true_prob) pool_mean += p / 1000.0;
  for (std::size_t i : trace.stage_sets[1]) s1_mean += pool.true_prob[i] / 100.0;
  EXPECT_GT(s1_mean, pool_mean);
}

TEST(RunCascade, NestingAndLogging) {
  const auto pool = generate_pool(small_pool(2000, 4));
  const std::vector<StageModel> stages{noisy_oracle_stage(1.0, 1), noisy_oracle_stage(0.7, 2),
                                       noisy_oracle_stage(0.3, 3)};
  const std::size_t sizes[] = {500, 50, 5};
  const auto trace = run_cascade(pool, stages, sizes);
  ASSERT_EQ(trace.num_stages(), 3u);
  for (std::size_t j = 1; j <= 3; ++j) {
    EXPECT_EQ(trace.stage_predictions[j - 1].size(), trace.stage_sets[j - 1].size());
    const std::set<std::size_t> outer(trace.stage_sets[j - 1].begin(), trace.stage_sets[j - 1].end());
    for (std::size_t i : trace.stage_sets[j]) EXPECT_TRUE(outer.count(i));
  }
  EXPECT_EQ(trace.impression_labels.size(), 5u);
  const std::set<std::size_t> s2(trace.stage_sets[2].begin(), trace.stage_sets[2].end());
  std::size_t outside = 0;
  while (s2.count(outside)) ++outside;
  EXPECT_THROW(trace.logged_prediction(3, outside), ConfigError);
}

TEST(RunCascade, RejectsBadSizes) {
  const auto pool = generate_pool(small_pool(100, 1));
  const auto stages = noisy_stages(1);
  const std::size_t equal[] = {50, 50};
  const std::size_t growing[] = {10, 20};
  const std::size_t too_big[] = {101, 10};
  const std::size_t zero[] = {10, 0};
  EXPECT_THROW(run_cascade(pool, stages, equal), ConfigError);
  EXPECT_THROW(run_cascade(pool, stages, growing), ConfigError);
  EXPECT_THROW(run_cascade(pool, stages, too_big), ConfigError);
  EXPECT_THROW(run_cascade(pool, stages, zero), ConfigError);
  const std::size_t one[] = {10};
  EXPECT_THROW(run_cascade(pool, stages, one), ConfigError);
}

TEST(MakeSplits, SizesAndTeacherPredictions) {
  const auto pool = generate_pool(small_pool(1000, 6));
  const std::size_t sizes[] = {100, 10};
  const auto trace = run_cascade(pool, noisy_stages(6), sizes);
  const auto splits = make_splits(trace, pool);
  EXPECT_EQ(splits.impression.size(), 10u);
  EXPECT_EQ(splits.consideration.size(), 90u);
  // teacher_pred is the stage-2 logged score.
  for (std::size_t r = 0; r < splits.consideration.size(); ++r) {
    const std::size_t row = splits.consideration.ids[r];
    EXPECT_EQ(splits.consideration.teacher_pred[r], trace.logged_prediction(2, row));
    EXPECT_EQ(splits.consideration.features.row(r)[0], pool.features(row, 0));
  }
  for (std::size_t r = 0; r < splits.impression.size(); ++r) {
    EXPECT_EQ(splits.impression.labels[r], pool.label[splits.impression.ids[r]]);
  }
}

TEST(MakeSplits, DisjointOverManySeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto c = small_pool(300 + seed, seed);
    const auto pool = generate_pool(c);
    const std::size_t k1 = 20 + seed % 50;
    const std::size_t sizes[] = {k1, 1 + seed % 19};
    const auto splits = make_splits(run_cascade(pool, noisy_stages(seed), sizes), pool);
    const std::set<std::uint64_t> imp(splits.impression.ids.begin(), splits.impression.ids.end());
    for (std::uint64_t id : splits.consideration.ids) ASSERT_FALSE(imp.count(id)) << "seed " << seed;
    ASSERT_EQ(splits.impression.size() + splits.consideration.size(), k1);
  }
}

TEST(MakeSplits, ImpressionLabelsShowSelectionBias) {
  const auto pool = generate_pool(small_pool(100000, 12));
  const std::size_t sizes[] = {5000, 500};
  const auto splits = make_splits(run_cascade(pool, noisy_stages(12), sizes), pool);
  const double pool_mean = std::accumulate(pool.true_prob.begin(), pool.true_prob.end(), 0.0) / 100000.0;
  const double imp_mean =
      std::accumulate(splits.impression.labels.begin(), splits.impression.labels.end(), 0.0) / 500.0;
  EXPECT_GE(imp_mean, pool_mean + 0.02);
}

TEST(SplitIndices, PartitionsAllRows) {
  const auto [a, b] = split_indices(101, 0.8, 7);
  EXPECT_EQ(a.size(), 81u);
  EXPECT_EQ(b.size(), 20u);
  std::vector<std::size_t> all(a);
  all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 101; ++i) EXPECT_EQ(all[i], i);
  EXPECT_EQ(split_indices(101, 0.8, 7).first, a);
  EXPECT_THROW(split_indices(10, 1.5, 0), ConfigError);
}

TEST(Jsonl, RoundTripAndLabelFreeConsideration) {
  const auto pool = generate_pool(small_pool(500, 10));
  const std::size_t sizes[] = {50, 5};
  const auto splits = make_splits(run_cascade(pool, noisy_stages(10), sizes), pool);
  std::stringstream imp, cons;
  write_jsonl(imp, splits.impression);
  write_jsonl(cons, splits.consideration);
  EXPECT_EQ(cons.str().find("label"), std::string::npos);
  const auto imp_back = read_impression_jsonl(imp);
  const auto cons_back = read_consideration_jsonl(cons);
  EXPECT_EQ(imp_back.ids, splits.impression.ids);
  EXPECT_EQ(imp_back.labels, splits.impression.labels);
  EXPECT_EQ(imp_back.features.data, splits.impression.features.data);
  EXPECT_EQ(imp_back.teacher_pred, splits.impression.teacher_pred);
  EXPECT_EQ(cons_back.features.data, splits.consideration.features.data);
  EXPECT_EQ(cons_back.teacher_pred, splits.consideration.teacher_pred);
}

TEST(Jsonl, RejectsMalformedLines) {
  std::stringstream labeled(R"({"id":1,"features":[0.5],"label":1,"teacher_pred":0.2})" "\n");
  EXPECT_THROW(read_consideration_jsonl(labeled), ConfigError);
  std::stringstream unlabeled(R"({"id":1,"features":[0.5]})" "\n");
  EXPECT_THROW(read_impression_jsonl(unlabeled), ConfigError);
  std::stringstream ragged(R"({"id":1,"features":[0.5],"label":0})" "\n" R"({"id":2,"features":[0.5,1],"label":0})" "\n");
  EXPECT_THROW(read_impression_jsonl(ragged), DimensionError);
  std::stringstream garbage("{not json\n");
  EXPECT_THROW(read_impression_jsonl(garbage), ConfigError);
}

TEST(ContentHash, MatchesGitBlobIds) {
  // `printf 'hello\n' | git hash-object --stdin`
  EXPECT_EQ(git_blob_sha1("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
  EXPECT_EQ(git_blob_sha1(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

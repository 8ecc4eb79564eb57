#pragma once

// Synthetic candidate pools with known click probabilities, a multi-stage
// cascade over them, and the labeled-impression / unlabeled-consideration
// split that the cascade produces.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "cascadelab/matrix.hpp"

namespace cascadelab::data {

struct PoolConfig {
  std::size_t num_candidates = 100000;
  std::size_t num_features = 20;
  // Ground-truth logit weights; zeros mark nuisance features.
  std::vector<double> informative_weights = {0.8, -0.7, 0.6, 0.5, -0.5, 0.4, 0.4, 0.2, 0, 0,
                                             0,   0,    0,   0,   0,    0,   0,   0,   0, 0};
  double bias = -4.0;
  double feature_correlation = 0.3;
  // Adds interaction_weight * x0 * x1 to the logit.
  bool nonlinearity = false;
  double interaction_weight = 0.5;
  std::uint64_t seed = 0;
  // Candidate ids are id_base, id_base + 1, ...
  std::uint64_t id_base = 0;

  void validate() const;
};

struct CandidatePool {
  Matrix features;
  std::vector<double> true_prob;
  std::vector<std::uint8_t> label;
  std::vector<std::uint64_t> candidate_id;

  std::size_t size() const { return true_prob.size(); }
};

/// Features are equicorrelated standard normals: x_j = sqrt(rho) g + sqrt(1 - rho) e_j.
/// Each candidate draws from its own substream, so generation is parallel-safe.
CandidatePool generate_pool(const PoolConfig& config, std::size_t threads = 1);

/// Scores rows of a pool. `rows` are row positions in the pool; the model
/// writes one probability per row into `out`.
using StageModel =
    std::function<void(const CandidatePool& pool, std::span<const std::size_t> rows, std::span<double> out)>;

/// Scores with the true probability.
StageModel oracle_stage();

/// logistic(logit(true_prob) + sigma * noise), with the noise keyed by
/// (seed, candidate id) so it does not depend on which stage set a row is in.
StageModel noisy_oracle_stage(double sigma, std::uint64_t seed);

/// Like noisy_oracle_stage with boost * x[feature] added to the logit, so the
/// stage selects on that feature beyond its true effect.
StageModel feature_boosted_stage(double sigma, std::size_t feature, double boost, std::uint64_t seed);

struct CascadeTrace {
  // stage_sets[0] is S0 (every row in pool order); stage_sets[j] is S_j in
  // descending stage-j score order.
  std::vector<std::vector<std::size_t>> stage_sets;
  // stage_predictions[j - 1][r] is stage j's score of stage_sets[j - 1][r].
  std::vector<std::vector<double>> stage_predictions;
  // Labels of S_N, aligned with stage_sets.back().
  std::vector<std::uint8_t> impression_labels;

  std::size_t num_stages() const { return stage_predictions.size(); }
  /// Stage j's logged score of a row in S_{j-1}.
  double logged_prediction(std::size_t stage, std::size_t row) const;
};

/// Runs the stages in order. Sizes must be strictly decreasing, at least 1,
/// and the first must not exceed the pool size. Ties go to the lower id.
CascadeTrace run_cascade(const CandidatePool& pool, std::span<const StageModel> stage_models,
                         std::span<const std::size_t> stage_sizes);

/// S_N with labels revealed.
struct ImpressionSet {
  std::vector<std::uint64_t> ids;
  Matrix features;
  std::vector<std::uint8_t> labels;
  std::vector<double> teacher_pred;  // stage-2 logged score; empty for one-stage cascades

  std::size_t size() const { return ids.size(); }
};

/// S1 minus S_N. Carries no labels.
struct ConsiderationSet {
  std::vector<std::uint64_t> ids;
  Matrix features;
  std::vector<double> teacher_pred;

  std::size_t size() const { return ids.size(); }
};

struct Splits {
  ImpressionSet impression;
  ConsiderationSet consideration;
};

/// Impression rows follow S_N order, consideration rows follow S1 order.
/// teacher_pred is the stage-2 logged score, which covers every row of S1.
Splits make_splits(const CascadeTrace& trace, const CandidatePool& pool);

ImpressionSet concat(const ImpressionSet& a, const ImpressionSet& b);
ConsiderationSet concat(const ConsiderationSet& a, const ConsiderationSet& b);

/// Deterministic shuffle of 0..count-1 split into (first, second) with
/// round(fraction * count) rows in the first part.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t count, double fraction,
                                                                             std::uint64_t seed);

ImpressionSet subset(const ImpressionSet& set, std::span<const std::size_t> rows);
ConsiderationSet subset(const ConsiderationSet& set, std::span<const std::size_t> rows);

/// Several independent requests: pool r uses seed derive_seed(seed, "request:r")
/// and ids starting at id_base + r * num_candidates. Splits are concatenated
/// in request order.
struct Traffic {
  ImpressionSet impression;
  ConsiderationSet consideration;
  std::vector<double> impression_true_prob;
  std::vector<double> consideration_true_prob;
};
Traffic simulate_traffic(const PoolConfig& pool, std::size_t requests, std::span<const StageModel> stages,
                         std::span<const std::size_t> stage_sizes, std::uint64_t seed, std::size_t threads = 1);

// JSONL, one candidate per line: {"id", "features", "label", "teacher_pred"}.
// Consideration lines never carry "label".
void write_jsonl(std::ostream& out, const ImpressionSet& set);
void write_jsonl(std::ostream& out, const ConsiderationSet& set);
ImpressionSet read_impression_jsonl(std::istream& in);
ConsiderationSet read_consideration_jsonl(std::istream& in);

}  // namespace cascadelab::data

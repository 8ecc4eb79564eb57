#include "cascadelab/synthgen.hpp"

#include <algorithm>
#include <boost/random/normal_distribution.hpp>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>
#include <unordered_set>

#include "cascadelab/error.hpp"
#include "cascadelab/parallel.hpp"
#include "cascadelab/random.hpp"
#include "cascadelab/selection.hpp"
#include "json.hpp"

namespace cascadelab::data {

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double p) { return std::log(p) - std::log1p(-p); }

constexpr double kLogitClamp = 30.0;

}  // namespace

void PoolConfig::validate() const {
  if (num_candidates < 1) throw ConfigError("PoolConfig: num_candidates must be >= 1");
  if (num_features < 1) throw ConfigError("PoolConfig: num_features must be >= 1");
  if (informative_weights.size() != num_features) {
    throw DimensionError("PoolConfig: informative_weights has " + std::to_string(informative_weights.size()) +
                         " entries for " + std::to_string(num_features) + " features");
  }
  if (std::none_of(informative_weights.begin(), informative_weights.end(), [](double w) { return w != 0.0; })) {
    throw ConfigError("PoolConfig: at least one informative weight must be nonzero");
  }
  for (double w : informative_weights) {
    if (!std::isfinite(w)) throw ConfigError("PoolConfig: weights must be finite");
  }
  if (!std::isfinite(bias)) throw ConfigError("PoolConfig: bias must be finite");
  if (!(feature_correlation >= 0.0 && feature_correlation < 1.0)) {
    throw ConfigError("PoolConfig: feature_correlation must lie in [0, 1)");
  }
  if (nonlinearity && num_features < 2) throw ConfigError("PoolConfig: the interaction term needs two features");
  if (!std::isfinite(interaction_weight)) throw ConfigError("PoolConfig: interaction_weight must be finite");
}

CandidatePool generate_pool(const PoolConfig& config, std::size_t threads) {
  config.validate();
  const std::size_t n = config.num_candidates;
  const std::size_t d = config.num_features;
  CandidatePool pool;
  pool.features = Matrix(n, d);
  pool.true_prob.resize(n);
  pool.label.resize(n);
  pool.candidate_id.resize(n);
  const std::uint64_t stream = derive_seed(config.seed, "pool");
  const double shared = std::sqrt(config.feature_correlation);
  const double own = std::sqrt(1.0 - config.feature_correlation);
  constexpr std::size_t kBlock = 4096;
  parallel_for((n + kBlock - 1) / kBlock, threads, [&](std::size_t block) {
    boost::random::normal_distribution<double> normal;
    const std::size_t end = std::min(n, (block + 1) * kBlock);
    for (std::size_t i = block * kBlock; i < end; ++i) {
      SplitMix64 rng(derive_seed(stream, i));
      auto x = pool.features.row(i);
      const double g = normal(rng);
      double z = config.bias;
      for (std::size_t j = 0; j < d; ++j) {
        x[j] = shared * g + own * normal(rng);
        z += config.informative_weights[j] * x[j];
      }
      if (config.nonlinearity) z += config.interaction_weight * x[0] * x[1];
      pool.true_prob[i] = logistic(std::clamp(z, -kLogitClamp, kLogitClamp));
      pool.label[i] = rng.uniform() < pool.true_prob[i] ? 1 : 0;
      pool.candidate_id[i] = config.id_base + i;
    }
  });
  return pool;
}

StageModel oracle_stage() {
  return [](const CandidatePool& pool, std::span<const std::size_t> rows, std::span<double> out) {
    for (std::size_t r = 0; r < rows.size(); ++r) out[r] = pool.true_prob[rows[r]];
  };
}

StageModel noisy_oracle_stage(double sigma, std::uint64_t seed) {
  return feature_boosted_stage(sigma, 0, 0.0, seed);
}

StageModel feature_boosted_stage(double sigma, std::size_t feature, double boost, std::uint64_t seed) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("noisy_oracle_stage: sigma must be >= 0");
  if (!std::isfinite(boost)) throw ConfigError("feature_boosted_stage: boost must be finite");
  return [sigma, feature, boost, seed](const CandidatePool& pool, std::span<const std::size_t> rows,
                                       std::span<double> out) {
    if (boost != 0.0 && feature >= pool.features.cols) {
      throw DimensionError("feature_boosted_stage: feature index out of range");
    }
    boost::random::normal_distribution<double> normal;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::size_t i = rows[r];
      SplitMix64 rng(derive_seed(seed, pool.candidate_id[i]));
      double z = logit(pool.true_prob[i]) + sigma * normal(rng);
      if (boost != 0.0) z += boost * pool.features(i, feature);
      out[r] = logistic(std::clamp(z, -kLogitClamp, kLogitClamp));
    }
  };
}

double CascadeTrace::logged_prediction(std::size_t stage, std::size_t row) const {
  if (stage < 1 || stage > num_stages()) throw ConfigError("CascadeTrace: stage index out of range");
  const auto& set = stage_sets[stage - 1];
  const auto it = std::find(set.begin(), set.end(), row);
  if (it == set.end()) throw ConfigError("CascadeTrace: row was not scored by this stage");
  return stage_predictions[stage - 1][static_cast<std::size_t>(it - set.begin())];
}

CascadeTrace run_cascade(const CandidatePool& pool, std::span<const StageModel> stage_models,
                         std::span<const std::size_t> stage_sizes) {
  if (stage_models.size() != stage_sizes.size()) {
    throw ConfigError("run_cascade: need one stage model per stage size");
  }
  if (stage_sizes.empty()) throw ConfigError("run_cascade: at least one stage is required");
  if (stage_sizes.front() > pool.size()) throw ConfigError("run_cascade: first stage size exceeds the pool");
  for (std::size_t j = 0; j < stage_sizes.size(); ++j) {
    if (stage_sizes[j] < 1) throw ConfigError("run_cascade: stage sizes must be >= 1");
    if (j > 0 && stage_sizes[j] >= stage_sizes[j - 1]) {
      throw ConfigError("run_cascade: stage sizes must be strictly decreasing");
    }
  }
  CascadeTrace trace;
  std::vector<std::size_t> current(pool.size());
  std::iota(current.begin(), current.end(), std::size_t{0});
  trace.stage_sets.push_back(current);
  for (std::size_t j = 0; j < stage_sizes.size(); ++j) {
    std::vector<double> scores(current.size());
    stage_models[j](pool, current, scores);
    std::vector<std::uint64_t> keys(current.size());
    for (std::size_t r = 0; r < current.size(); ++r) keys[r] = pool.candidate_id[current[r]];
    std::vector<std::size_t> next;
    next.reserve(stage_sizes[j]);
    for (std::size_t pos : top_k(scores, stage_sizes[j], keys)) next.push_back(current[pos]);
    trace.stage_predictions.push_back(std::move(scores));
    trace.stage_sets.push_back(next);
    current = std::move(next);
  }
  for (std::size_t i : current) trace.impression_labels.push_back(pool.label[i]);
  return trace;
}

Splits make_splits(const CascadeTrace& trace, const CandidatePool& pool) {
  if (trace.num_stages() < 1) throw ConfigError("make_splits: empty trace");
  const auto& final_set = trace.stage_sets.back();
  const auto& first_set = trace.stage_sets[1];
  const bool has_teacher = trace.num_stages() >= 2;
  // Stage-2 scores are logged over S1, in S1 order.
  auto teacher_of = [&](std::size_t position_in_s1) { return trace.stage_predictions[1][position_in_s1]; };

  Splits out;
  std::unordered_set<std::size_t> final_rows(final_set.begin(), final_set.end());
  std::vector<std::size_t> s1_position(pool.size(), 0);
  for (std::size_t r = 0; r < first_set.size(); ++r) s1_position[first_set[r]] = r;

  out.impression.features = pool.features.select_rows(final_set);
  out.impression.labels = trace.impression_labels;
  for (std::size_t i : final_set) {
    out.impression.ids.push_back(pool.candidate_id[i]);
    if (has_teacher) out.impression.teacher_pred.push_back(teacher_of(s1_position[i]));
  }

  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < first_set.size(); ++r) {
    const std::size_t i = first_set[r];
    if (final_rows.count(i)) continue;
    rows.push_back(i);
    out.consideration.ids.push_back(pool.candidate_id[i]);
    out.consideration.teacher_pred.push_back(teacher_of(r));
  }
  out.consideration.features = pool.features.select_rows(rows);
  return out;
}

ImpressionSet concat(const ImpressionSet& a, const ImpressionSet& b) {
  ImpressionSet out = a;
  out.ids.insert(out.ids.end(), b.ids.begin(), b.ids.end());
  out.features.append_rows(b.features);
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  if (a.teacher_pred.size() != a.size() || b.teacher_pred.size() != b.size()) {
    out.teacher_pred.clear();
  } else {
    out.teacher_pred.insert(out.teacher_pred.end(), b.teacher_pred.begin(), b.teacher_pred.end());
  }
  return out;
}

ConsiderationSet concat(const ConsiderationSet& a, const ConsiderationSet& b) {
  ConsiderationSet out = a;
  out.ids.insert(out.ids.end(), b.ids.begin(), b.ids.end());
  out.features.append_rows(b.features);
  out.teacher_pred.insert(out.teacher_pred.end(), b.teacher_pred.begin(), b.teacher_pred.end());
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t count, double fraction,
                                                                             std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("split_indices: fraction must lie in [0, 1]");
  const std::vector<std::size_t> order = random_permutation(count, seed);
  const auto first = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(count)));
  std::vector<std::size_t> a(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(first));
  std::vector<std::size_t> b(order.begin() + static_cast<std::ptrdiff_t>(first), order.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {a, b};
}

ImpressionSet subset(const ImpressionSet& set, std::span<const std::size_t> rows) {
  ImpressionSet out;
  out.features = set.features.select_rows(rows);
  for (std::size_t r : rows) {
    out.ids.push_back(set.ids[r]);
    out.labels.push_back(set.labels[r]);
    if (!set.teacher_pred.empty()) out.teacher_pred.push_back(set.teacher_pred[r]);
  }
  return out;
}

ConsiderationSet subset(const ConsiderationSet& set, std::span<const std::size_t> rows) {
  ConsiderationSet out;
  out.features = set.features.select_rows(rows);
  for (std::size_t r : rows) {
    out.ids.push_back(set.ids[r]);
    out.teacher_pred.push_back(set.teacher_pred[r]);
  }
  return out;
}

Traffic simulate_traffic(const PoolConfig& pool, std::size_t requests, std::span<const StageModel> stages,
                         std::span<const std::size_t> stage_sizes, std::uint64_t seed, std::size_t threads) {
  if (requests < 1) throw ConfigError("simulate_traffic: requests must be >= 1");
  Traffic out;
  for (std::size_t r = 0; r < requests; ++r) {
    PoolConfig config = pool;
    config.seed = derive_seed(seed, "request:" + std::to_string(r));
    config.id_base = pool.id_base + r * pool.num_candidates;
    const CandidatePool candidates = generate_pool(config, threads);
    const CascadeTrace trace = run_cascade(candidates, stages, stage_sizes);
    Splits splits = make_splits(trace, candidates);
    for (std::uint64_t id : splits.impression.ids) {
      out.impression_true_prob.push_back(candidates.true_prob[id - config.id_base]);
    }
    for (std::uint64_t id : splits.consideration.ids) {
      out.consideration_true_prob.push_back(candidates.true_prob[id - config.id_base]);
    }
    if (r == 0) {
      out.impression = std::move(splits.impression);
      out.consideration = std::move(splits.consideration);
    } else {
      out.impression = concat(out.impression, splits.impression);
      out.consideration = concat(out.consideration, splits.consideration);
    }
  }
  return out;
}

namespace {

nlohmann::json row_json(std::uint64_t id, std::span<const double> features) {
  nlohmann::json j;
  j["id"] = id;
  j["features"] = std::vector<double>(features.begin(), features.end());
  return j;
}

template <typename Fn>
void for_each_line(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("jsonl line " + std::to_string(number) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("features")) {
      throw ConfigError("jsonl line " + std::to_string(number) + ": expected an object with id and features");
    }
    try {
      fn(j, number);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("jsonl line " + std::to_string(number) + ": " + e.what());
    }
  }
}

void append_features(Matrix& m, const std::vector<double>& x, std::size_t line) {
  if (m.rows == 0) m.cols = x.size();
  if (x.size() != m.cols) {
    throw DimensionError("jsonl line " + std::to_string(line) + ": feature count differs from earlier lines");
  }
  m.data.insert(m.data.end(), x.begin(), x.end());
  ++m.rows;
}

}  // namespace

void write_jsonl(std::ostream& out, const ImpressionSet& set) {
  for (std::size_t r = 0; r < set.size(); ++r) {
    auto j = row_json(set.ids[r], set.features.row(r));
    j["label"] = static_cast<int>(set.labels[r]);
    if (!set.teacher_pred.empty()) j["teacher_pred"] = set.teacher_pred[r];
    out << j.dump() << '\n';
  }
}

void write_jsonl(std::ostream& out, const ConsiderationSet& set) {
  for (std::size_t r = 0; r < set.size(); ++r) {
    auto j = row_json(set.ids[r], set.features.row(r));
    if (!set.teacher_pred.empty()) j["teacher_pred"] = set.teacher_pred[r];
    out << j.dump() << '\n';
  }
}

ImpressionSet read_impression_jsonl(std::istream& in) {
  ImpressionSet set;
  bool with_teacher = true;
  for_each_line(in, [&](const nlohmann::json& j, std::size_t line) {
    if (!j.contains("label")) throw ConfigError("jsonl line " + std::to_string(line) + ": impression row without label");
    const int label = j.at("label").get<int>();
    if (label != 0 && label != 1) throw ConfigError("jsonl line " + std::to_string(line) + ": label must be 0 or 1");
    set.ids.push_back(j.at("id").get<std::uint64_t>());
    append_features(set.features, j.at("features").get<std::vector<double>>(), line);
    set.labels.push_back(static_cast<std::uint8_t>(label));
    if (j.contains("teacher_pred")) {
      set.teacher_pred.push_back(j.at("teacher_pred").get<double>());
    } else {
      with_teacher = false;
    }
  });
  if (!with_teacher) set.teacher_pred.clear();
  return set;
}

ConsiderationSet read_consideration_jsonl(std::istream& in) {
  ConsiderationSet set;
  for_each_line(in, [&](const nlohmann::json& j, std::size_t line) {
    if (j.contains("label")) {
      throw ConfigError("jsonl line " + std::to_string(line) + ": consideration rows must not carry labels");
    }
    if (!j.contains("teacher_pred")) {
      throw ConfigError("jsonl line " + std::to_string(line) + ": consideration row without teacher_pred");
    }
    set.ids.push_back(j.at("id").get<std::uint64_t>());
    append_features(set.features, j.at("features").get<std::vector<double>>(), line);
    set.teacher_pred.push_back(j.at("teacher_pred").get<double>());
  });
  return set;
}

}  // namespace cascadelab::data

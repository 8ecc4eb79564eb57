#include "cascadelab/ssfs.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "cascadelab/error.hpp"
#include "cascadelab/parallel.hpp"
#include "cascadelab/random.hpp"

namespace cascadelab::ssfs {

std::string to_string(Regime regime) {
  return regime == Regime::impression ? "impression" : "consideration_mixed";
}

void FeatureImportanceReport::validate() const {
  for (std::size_t j = 0; j < features.size(); ++j) {
    if (features[j].feature != j) throw DimensionError("FeatureImportanceReport: records must be in feature order");
    if (features[j].batches < 1) throw ConfigError("FeatureImportanceReport: batches must be >= 1");
  }
}

std::vector<std::size_t> FeatureImportanceReport::ranking() const {
  std::vector<std::size_t> order(features.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return features[a].mean > features[b].mean; });
  return order;
}

namespace {

double batch_loss(const model::Predictor& model, const Matrix& x, std::span<const double> targets,
                  std::span<const double> weights) {
  double total = 0.0;
  for (std::size_t r = 0; r < x.rows; ++r) total += weights[r] * model::bce_loss(targets[r], model.predict(x.row(r)));
  return total / static_cast<double>(x.rows);
}

}  // namespace

FeatureImportanceReport perturb_importance(const model::Predictor& model, const model::Dataset& data,
                                           std::size_t num_batches, std::size_t batch_size, std::uint64_t seed,
                                           Regime regime, std::size_t threads) {
  data.validate();
  if (data.size() == 0) throw ConfigError("perturb_importance: dataset is empty");
  if (model.input_dim() != data.features.cols) {
    throw DimensionError("perturb_importance: model input_dim does not match the dataset");
  }
  if (num_batches < 1) throw ConfigError("perturb_importance: num_batches must be >= 1");
  if (batch_size < 1) throw ConfigError("perturb_importance: batch_size must be >= 1");

  const std::size_t d = data.features.cols;
  const std::size_t b_rows = std::min(batch_size, data.size());

  struct Batch {
    Matrix x;
    std::vector<double> targets, weights;
    double base = 0.0;
  };
  std::vector<Batch> batches(num_batches);
  parallel_for(num_batches, threads, [&](std::size_t b) {
    auto rows = random_permutation(data.size(), derive_seed(seed, "batch:" + std::to_string(b)));
    rows.resize(b_rows);
    Batch& batch = batches[b];
    batch.x = data.features.select_rows(rows);
    for (std::size_t i : rows) {
      batch.targets.push_back(data.targets[i]);
      batch.weights.push_back(data.weight(i));
    }
    batch.base = batch_loss(model, batch.x, batch.targets, batch.weights);
  });

  std::vector<double> delta(num_batches * d);
  parallel_for(num_batches * d, threads, [&](std::size_t item) {
    const std::size_t b = item / d, j = item % d;
    const Batch& batch = batches[b];
    const auto perm =
        random_permutation(b_rows, derive_seed(seed, "batch:" + std::to_string(b) + ":feature:" + std::to_string(j)));
    Matrix shuffled = batch.x;
    for (std::size_t r = 0; r < b_rows; ++r) shuffled(r, j) = batch.x(perm[r], j);
    delta[item] = batch_loss(model, shuffled, batch.targets, batch.weights) - batch.base;
  });

  FeatureImportanceReport report;
  report.regime = regime;
  for (std::size_t j = 0; j < d; ++j) {
    double sum = 0.0;
    for (std::size_t b = 0; b < num_batches; ++b) sum += delta[b * d + j];
    const double mean = sum / static_cast<double>(num_batches);
    double ss = 0.0;
    for (std::size_t b = 0; b < num_batches; ++b) ss += (delta[b * d + j] - mean) * (delta[b * d + j] - mean);
    const double sd = num_batches > 1 ? std::sqrt(ss / static_cast<double>(num_batches - 1)) : 0.0;
    report.features.push_back({j, mean, sd, num_batches});
  }
  return report;
}

void write_importance_csv(std::ostream& out, const FeatureImportanceReport& report) {
  out << "feature_index,mean_importance,std_importance,batches,regime\n";
  char buf[64];
  for (const auto& f : report.features) {
    out << f.feature << ',';
    std::snprintf(buf, sizeof buf, "%.17g", f.mean);
    out << buf << ',';
    std::snprintf(buf, sizeof buf, "%.17g", f.stddev);
    out << buf << ',' << f.batches << ',' << to_string(report.regime) << '\n';
  }
}

std::string to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::imp_only: return "imp_only";
    case Strategy::cd_only: return "cd_only";
    case Strategy::average_rank: return "average_rank";
    case Strategy::average_importance: return "average_importance";
    case Strategy::intersection_top: return "intersection_top";
    case Strategy::union_top: return "union_top";
  }
  throw ConfigError("unknown combination strategy");
}

Strategy strategy_from_string(const std::string& text) {
  for (Strategy s : kAllStrategies) {
    if (to_string(s) == text) return s;
  }
  throw ConfigError("unknown combination strategy '" + text + "'");
}

std::string display_name(Strategy strategy) {
  switch (strategy) {
    case Strategy::imp_only: return "IMP Importance Only";
    case Strategy::cd_only: return "CD Importance Only";
    case Strategy::average_rank: return "Average Rank";
    case Strategy::average_importance: return "Average Importance";
    case Strategy::intersection_top: return "Intersection of Top Features";
    case Strategy::union_top: return "Union of Top Features";
  }
  throw ConfigError("unknown combination strategy");
}

namespace {

std::vector<std::size_t> top_by_key(const std::vector<double>& key, std::size_t top_n, bool descending) {
  std::vector<std::size_t> order(key.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return descending ? key[a] > key[b] : key[a] < key[b];
  });
  order.resize(top_n);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<double> normalized_means(const FeatureImportanceReport& report) {
  std::vector<double> m;
  for (const auto& f : report.features) m.push_back(f.mean);
  const auto [lo, hi] = std::minmax_element(m.begin(), m.end());
  const double min = *lo, range = *hi - *lo;
  for (double& v : m) v = range > 0.0 ? (v - min) / range : 0.0;
  return m;
}

}  // namespace

std::vector<std::size_t> combine_rankings(const FeatureImportanceReport& imp, const FeatureImportanceReport& cd,
                                          Strategy strategy, std::size_t top_n) {
  imp.validate();
  cd.validate();
  if (imp.features.size() != cd.features.size()) {
    throw DimensionError("combine_rankings: reports cover different feature sets");
  }
  const std::size_t d = imp.features.size();
  if (top_n < 1 || top_n > d) throw ConfigError("combine_rankings: top_n must lie in [1, num_features]");

  auto top_of = [&](const FeatureImportanceReport& r) {
    auto order = r.ranking();
    order.resize(top_n);
    std::sort(order.begin(), order.end());
    return order;
  };
  std::vector<std::size_t> out;
  switch (strategy) {
    case Strategy::imp_only: return top_of(imp);
    case Strategy::cd_only: return top_of(cd);
    case Strategy::average_rank: {
      std::vector<double> pos(d, 0.0);
      const auto ri = imp.ranking(), rc = cd.ranking();
      for (std::size_t p = 0; p < d; ++p) {
        pos[ri[p]] += static_cast<double>(p);
        pos[rc[p]] += static_cast<double>(p);
      }
      return top_by_key(pos, top_n, false);
    }
    case Strategy::average_importance: {
      auto a = normalized_means(imp);
      const auto b = normalized_means(cd);
      for (std::size_t j = 0; j < d; ++j) a[j] = 0.5 * (a[j] + b[j]);
      return top_by_key(a, top_n, true);
    }
    case Strategy::intersection_top: {
      const auto a = top_of(imp), b = top_of(cd);
      std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
      return out;
    }
    case Strategy::union_top: {
      const auto a = top_of(imp), b = top_of(cd);
      std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
      return out;
    }
  }
  throw ConfigError("combine_rankings: unknown strategy");
}

model::PredictorArch simplified_arch(const model::PredictorArch& arch) {
  arch.validate();
  if (arch.kind == model::Kind::linear) return arch;
  return model::PredictorArch::feedforward(arch.input_dim, {std::max<std::size_t>(1, arch.hidden_sizes.front() / 2)},
                                           arch.activation);
}

data::PoolConfig planted_pool() {
  data::PoolConfig pool;
  pool.informative_weights.assign(pool.num_features, 0.0);
  const double weights[] = {0.8, -0.7, 0.65, 0.6, -0.55, 0.5, 0.5, 0.45, 0.9};
  std::copy(std::begin(weights), std::end(weights), pool.informative_weights.begin());
  pool.feature_correlation = 0.0;
  return pool;
}

void PipelineConfig::validate() const {
  pool.validate();
  if (requests < 1) throw ConfigError("ssfs: requests must be >= 1");
  if (stage_sizes.size() != 2) throw ConfigError("ssfs: the cascade must have exactly two stages");
  if (!(stage1_noise >= 0.0) || !(stage2_noise >= 0.0)) throw ConfigError("ssfs: stage noise must be >= 0");
  if (stage2_boost != 0.0 && boosted_feature >= pool.num_features) {
    throw ConfigError("ssfs: boosted_feature out of range");
  }
  teacher_arch.validate();
  candidate_arch.validate();
  if (teacher_arch.input_dim != pool.num_features || candidate_arch.input_dim != pool.num_features) {
    throw DimensionError("ssfs: teacher and candidate input_dim must equal num_features");
  }
  teacher_train.validate();
  student_train.validate();
  if (top_n < 1 || top_n > pool.num_features) throw ConfigError("ssfs: top_n must lie in [1, num_features]");
  if (importance_batches < 1 || importance_batch_size < 1) {
    throw ConfigError("ssfs: importance batches and batch size must be >= 1");
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("ssfs: train_fraction must lie in (0, 1)");
  if (strategies.empty()) throw ConfigError("ssfs: at least one strategy is required");
}

namespace {

std::string step_message(const char* step, const std::exception& e) {
  return std::string("ssfs step '") + step + "': " + e.what();
}

// Runs one pipeline step, prefixing any error with the step name while keeping
// its type.
template <typename F>
auto run_step(const char* step, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const DimensionError& e) {
    throw DimensionError(step_message(step, e));
  } catch (const ConfigError& e) {
    throw ConfigError(step_message(step, e));
  } catch (const DegenerateError& e) {
    throw DegenerateError(step_message(step, e));
  } catch (const DivergenceError& e) {
    throw DivergenceError(step_message(step, e));
  }
}

model::Dataset impression_dataset(const data::ImpressionSet& set, std::span<const std::size_t> columns) {
  auto ds = model::Dataset::from_impressions(set);
  if (!columns.empty()) ds.features = ds.features.select_cols(columns);
  return ds;
}

model::Dataset consideration_dataset(const data::ConsiderationSet& set, std::span<const std::size_t> columns) {
  auto ds = model::Dataset::from_consideration(set);
  if (!columns.empty()) ds.features = ds.features.select_cols(columns);
  return ds;
}

model::Dataset mixed_dataset(const PipelineData& data, std::span<const std::size_t> columns) {
  auto ds = impression_dataset(data.impression_train, columns);
  const auto cons = consideration_dataset(data.consideration_train, columns);
  ds.features.append_rows(cons.features);
  ds.targets.insert(ds.targets.end(), cons.targets.begin(), cons.targets.end());
  return ds;
}

model::Predictor fit(const model::PredictorArch& arch, const model::Dataset& ds, model::TrainConfig train,
                     std::uint64_t seed, const std::string& name) {
  auto m = model::Predictor::initialized(arch, derive_seed(seed, name));
  train.seed = derive_seed(seed, name + ":train");
  model::train(m, ds, train);
  return m;
}

}  // namespace

PipelineData prepare_data(const PipelineConfig& config) {
  config.validate();
  const std::uint64_t seed = config.seed;
  PipelineData out;
  out.traffic = run_step("cascade", [&] {
    const std::vector<data::StageModel> stages{
        data::noisy_oracle_stage(config.stage1_noise, derive_seed(seed, "stage1")),
        data::feature_boosted_stage(config.stage2_noise, config.boosted_feature, config.stage2_boost,
                                    derive_seed(seed, "stage2"))};
    return data::simulate_traffic(config.pool, config.requests, stages, config.stage_sizes,
                                  derive_seed(seed, "traffic"), config.threads);
  });
  const auto& t = out.traffic;
  const auto [imp_train, imp_test] =
      data::split_indices(t.impression.size(), config.train_fraction, derive_seed(seed, "split:impression"));
  const auto [cons_train, cons_test] =
      data::split_indices(t.consideration.size(), config.train_fraction, derive_seed(seed, "split:consideration"));
  out.impression_train = data::subset(t.impression, imp_train);
  out.impression_holdout = data::subset(t.impression, imp_test);
  out.consideration_train = data::subset(t.consideration, cons_train);
  out.consideration_holdout = data::subset(t.consideration, cons_test);
  for (std::size_t r : cons_test) out.consideration_holdout_true_prob.push_back(t.consideration_true_prob[r]);

  out.teacher = run_step("teacher", [&] {
    return fit(config.teacher_arch, impression_dataset(out.impression_train, {}), config.teacher_train, seed,
               "teacher");
  });
  out.consideration_train.teacher_pred = out.teacher.predict_batch(out.consideration_train.features, config.threads);
  out.consideration_holdout.teacher_pred =
      out.teacher.predict_batch(out.consideration_holdout.features, config.threads);
  out.teacher_holdout_ne = run_step("teacher evaluation", [&] {
    const std::vector<double> labels(out.impression_holdout.labels.begin(), out.impression_holdout.labels.end());
    return metrics::normalized_entropy(labels, out.teacher.predict_batch(out.impression_holdout.features)).ne;
  });
  return out;
}

PlantedRankCheck verify_planted_rank(const PipelineConfig& config, const PipelineData& data,
                                     std::size_t permutations) {
  config.validate();
  if (config.pool.nonlinearity) throw ConfigError("verify_planted_rank: requires a logistic-linear ground truth");
  if (permutations < 1) throw ConfigError("verify_planted_rank: permutations must be >= 1");
  const std::size_t d = config.pool.num_features;
  std::vector<double> params(config.pool.informative_weights);
  params.push_back(config.pool.bias);
  const model::Predictor oracle(model::PredictorArch::linear(d), params, 0);

  auto rank_of = [&](const Matrix& x, const std::vector<double>& truth, const char* name) {
    const model::Dataset ds{x, truth, {}};
    const auto report = perturb_importance(oracle, ds, permutations, ds.size(), derive_seed(config.seed, name),
                                           Regime::impression, config.threads);
    const auto order = report.ranking();
    return static_cast<std::size_t>(std::find(order.begin(), order.end(), config.boosted_feature) - order.begin()) +
           1;
  };
  PlantedRankCheck check;
  check.feature = config.boosted_feature;
  check.top_n = config.top_n;
  check.impression_rank = rank_of(data.traffic.impression.features, data.traffic.impression_true_prob,
                                  "oracle:impression");
  check.mixed_rank = rank_of(data.traffic.consideration.features, data.traffic.consideration_true_prob,
                             "oracle:consideration");
  return check;
}

const StrategyOutcome& PipelineResult::outcome(Strategy strategy) const {
  for (const auto& o : outcomes) {
    if (o.strategy == strategy) return o;
  }
  throw ConfigError("PipelineResult: strategy '" + to_string(strategy) + "' was not run");
}

PipelineResult run_pipeline(const PipelineConfig& config) { return run_pipeline(config, prepare_data(config)); }

PipelineResult run_pipeline(const PipelineConfig& config, const PipelineData& data) {
  config.validate();
  const std::uint64_t seed = config.seed;
  const auto fi_arch = simplified_arch(config.candidate_arch);
  PipelineResult result;
  result.top_n = config.top_n;
  result.teacher_holdout_ne = data.teacher_holdout_ne;

  result.impression_report = run_step("impression importance", [&] {
    const auto m = fit(fi_arch, impression_dataset(data.impression_train, {}), config.student_train, seed,
                       "importance:impression");
    return perturb_importance(m, impression_dataset(data.impression_holdout, {}), config.importance_batches,
                              config.importance_batch_size, derive_seed(seed, "perturb:impression"),
                              Regime::impression, config.threads);
  });
  result.consideration_report = run_step("mixed importance", [&] {
    const auto m = fit(fi_arch, mixed_dataset(data, {}), config.student_train, seed, "importance:mixed");
    return perturb_importance(m, consideration_dataset(data.consideration_holdout, {}), config.importance_batches,
                              config.importance_batch_size, derive_seed(seed, "perturb:consideration"),
                              Regime::consideration_mixed, config.threads);
  });

  std::vector<Strategy> strategies{Strategy::imp_only};
  for (Strategy s : config.strategies) {
    if (std::find(strategies.begin(), strategies.end(), s) == strategies.end()) strategies.push_back(s);
  }
  std::vector<std::vector<std::size_t>> selections;
  for (Strategy s : strategies) {
    selections.push_back(run_step("combine", [&] {
      return combine_rankings(result.impression_report, result.consideration_report, s, config.top_n);
    }));
  }

  // One student per distinct feature set; identical sets share a result.
  std::map<std::vector<std::size_t>, std::size_t> distinct;
  std::vector<std::vector<std::size_t>> sets;
  for (const auto& sel : selections) {
    if (distinct.emplace(sel, sets.size()).second) sets.push_back(sel);
  }
  std::vector<std::pair<metrics::NEReport, metrics::NEReport>> scores(sets.size());
  run_step("restricted students", [&] {
    parallel_for(sets.size(), config.threads, [&](std::size_t k) {
      const auto& cols = sets[k];
      if (cols.empty()) throw ConfigError("strategy selected no features");
      auto arch = config.candidate_arch;
      arch.input_dim = cols.size();
      const auto student = fit(arch, mixed_dataset(data, cols), config.student_train, seed, "student");
      const auto imp = impression_dataset(data.impression_holdout, cols);
      const auto cons = consideration_dataset(data.consideration_holdout, cols);
      scores[k] = {metrics::normalized_entropy(imp.targets, student.predict_batch(imp.features)),
                   metrics::normalized_entropy(cons.targets, student.predict_batch(cons.features),
                                               metrics::TargetKind::teacher_prediction)};
    });
    return 0;
  });

  const auto& base = scores[distinct.at(selections.front())];
  for (std::size_t i = 0; i < strategies.size(); ++i) {
    const auto& [imp_ne, cons_ne] = scores[distinct.at(selections[i])];
    StrategyOutcome o;
    o.strategy = strategies[i];
    o.selected = selections[i];
    o.impression_ne = metrics::compared_to(imp_ne, base.first, "imp_only");
    o.consideration_ne = metrics::compared_to(cons_ne, base.second, "imp_only");
    o.impression_ne_change = o.impression_ne.ne_relative_change;
    o.consideration_ne_change = o.consideration_ne.ne_relative_change;
    result.outcomes.push_back(std::move(o));
  }
  return result;
}

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

std::string render_table(const PipelineResult& result) {
  std::ostringstream out;
  char line[512];
  std::snprintf(line, sizeof line, "%-30s | %-16s | %-16s | %s\n", "Method", "Impression NE", "Consideration NE",
                "Selected features");
  out << line << std::string(90, '-') << '\n';
  for (const auto& o : result.outcomes) {
    std::snprintf(line, sizeof line, "%-30s | %-16s | %-16s | %s\n", display_name(o.strategy).c_str(),
                  metrics::format_pct(o.impression_ne_change).c_str(),
                  metrics::format_pct(o.consideration_ne_change).c_str(), join(o.selected).c_str());
    out << line;
  }
  return out.str();
}

nlohmann::json to_json(const FeatureImportanceReport& report) {
  auto features = nlohmann::json::array();
  for (const auto& f : report.features) {
    features.push_back({{"feature_index", f.feature},
                        {"mean_importance", f.mean},
                        {"std_importance", f.stddev},
                        {"batches", f.batches}});
  }
  return {{"regime", to_string(report.regime)}, {"features", features}};
}

nlohmann::json to_json(const PipelineResult& result) {
  auto rows = nlohmann::json::array();
  for (const auto& o : result.outcomes) {
    rows.push_back({{"strategy", to_string(o.strategy)},
                    {"method", display_name(o.strategy)},
                    {"selected_features", o.selected},
                    {"impression_ne", metrics::to_json(o.impression_ne)},
                    {"consideration_ne", metrics::to_json(o.consideration_ne)},
                    {"impression_ne_change_pct", o.impression_ne_change},
                    {"consideration_ne_change_pct", o.consideration_ne_change}});
  }
  return {{"top_n", result.top_n},
          {"teacher_holdout_ne", result.teacher_holdout_ne},
          {"importance", {to_json(result.impression_report), to_json(result.consideration_report)}},
          {"strategies", rows}};
}

}  // namespace cascadelab::ssfs

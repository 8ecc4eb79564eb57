#include <set>
#include <string>
#include <type_traits>

#include "cascadelab/cli.hpp"
#include "cascadelab/error.hpp"

namespace cascadelab::cli {

namespace {

using nlohmann::json;

// Reads the keys of one JSON object into existing values, remembering which
// keys were consumed so leftovers can be reported.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: '" + display() + "' must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  void read(const std::string& key, T& value) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    value = convert<T>(j_.at(key), key_path(key));
  }

  template <typename Fn>
  void read_with(const std::string& key, Fn&& fn) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    fn(j_.at(key), key_path(key));
  }

  Section child(const std::string& key) {
    used_.insert(key);
    return Section(j_.at(key), key_path(key));
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!used_.count(key)) throw ConfigError("config: unknown key '" + key_path(key) + "'");
    }
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }

  template <typename T>
  static T convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("config: '" + path + "' must be a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError("config: '" + path + "' must be a non-negative integer");
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("config: '" + path + "' must be a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("config: '" + path + "' must be a string");
      return v.get<std::string>();
    } else {
      if (!v.is_array()) throw ConfigError("config: '" + path + "' must be an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<typename T::value_type>(v[i], path + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <typename T, typename Parse>
void read_enum(Section& s, const std::string& key, T& value, Parse parse) {
  std::string text;
  s.read(key, text);
  if (!text.empty()) value = parse(text);
  else if (s.has(key)) throw ConfigError("config: '" + s.key_path(key) + "' must not be empty");
}

void read_pool(Section s, data::PoolConfig& pool) {
  s.read("num_candidates", pool.num_candidates);
  s.read("num_features", pool.num_features);
  s.read("informative_weights", pool.informative_weights);
  s.read("bias", pool.bias);
  s.read("feature_correlation", pool.feature_correlation);
  s.read("nonlinearity", pool.nonlinearity);
  s.read("interaction_weight", pool.interaction_weight);
  s.finish();
}

void read_train(Section s, model::TrainConfig& tc) {
  s.read("learning_rate", tc.learning_rate);
  s.read("epochs", tc.epochs);
  s.read("batch_size", tc.batch_size);
  read_enum(s, "optimizer", tc.optimizer, model::optimizer_from_string);
  s.read("l2", tc.l2);
  s.read("lr_decay", tc.lr_decay);
  s.finish();
}

void read_arch(Section s, model::PredictorArch& arch) {
  read_enum(s, "kind", arch.kind, model::kind_from_string);
  s.read("input_dim", arch.input_dim);
  s.read("hidden_sizes", arch.hidden_sizes);
  read_enum(s, "activation", arch.activation, model::activation_from_string);
  s.finish();
  if (arch.kind == model::Kind::linear) arch = model::PredictorArch::linear(arch.input_dim);
}

void read_simulate(Section s, SimulateConfig& c) {
  s.read("n", c.base.n);
  s.read("k2", c.base.k2);
  s.read("mu", c.base.mu);
  s.read("sigma", c.base.sigma);
  s.read("trials", c.base.trials);
  s.read("k1_values", c.k1_values);
  s.read_with("variants", [&](const json& v, const std::string& path) {
    if (!v.is_array()) throw ConfigError("config: '" + path + "' must be an array");
    c.variants.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      Section item(v[i], path + "[" + std::to_string(i) + "]");
      NoiseVariant nv;
      item.read("sigma1", nv.sigma1);
      item.read("sigma2", nv.sigma2);
      item.finish();
      c.variants.push_back(nv);
    }
  });
  s.finish();
}

void read_gen_data(Section s, GenDataConfig& c) {
  if (s.has("pool")) read_pool(s.child("pool"), c.pool);
  s.read("requests", c.requests);
  s.read("stage_sizes", c.stage_sizes);
  s.read("stage_noise", c.stage_noise);
  s.finish();
}

void read_train_command(Section s, TrainCommandConfig& c) {
  s.read("impressions", c.impressions);
  if (s.has("data")) read_gen_data(s.child("data"), c.data);
  s.read("features", c.features);
  if (s.has("arch")) read_arch(s.child("arch"), c.arch);
  if (s.has("train")) read_train(s.child("train"), c.train);
  s.read("train_fraction", c.train_fraction);
  s.finish();
}

void read_distill(Section s, distill::ExperimentConfig& c) {
  if (s.has("pool")) read_pool(s.child("pool"), c.pool);
  s.read("requests", c.requests);
  s.read("stage_sizes", c.stage_sizes);
  s.read("day0_stage1_noise", c.day0_stage1_noise);
  s.read("day0_stage2_noise", c.day0_stage2_noise);
  s.read("student_hidden_features", c.student_hidden_features);
  if (s.has("teacher_arch")) read_arch(s.child("teacher_arch"), c.teacher_arch);
  if (s.has("teacher_train")) read_train(s.child("teacher_train"), c.teacher_train);
  if (s.has("student_train")) read_train(s.child("student_train"), c.student_train);
  if (s.has("distill")) {
    Section d = s.child("distill");
    d.read("distill_weight", c.distill.distill_weight);
    d.read("unlabeled_batch_mix", c.distill.unlabeled_batch_mix);
    d.finish();
  }
  s.read("train_fraction", c.train_fraction);
  s.finish();
}

void read_ssfs(Section s, SsfsCommandConfig& c) {
  auto& p = c.pipeline;
  if (s.has("pool")) read_pool(s.child("pool"), p.pool);
  s.read("requests", p.requests);
  s.read("stage_sizes", p.stage_sizes);
  s.read("stage1_noise", p.stage1_noise);
  s.read("stage2_noise", p.stage2_noise);
  s.read("boosted_feature", p.boosted_feature);
  s.read("stage2_boost", p.stage2_boost);
  if (s.has("teacher_arch")) read_arch(s.child("teacher_arch"), p.teacher_arch);
  if (s.has("candidate_arch")) read_arch(s.child("candidate_arch"), p.candidate_arch);
  if (s.has("teacher_train")) read_train(s.child("teacher_train"), p.teacher_train);
  if (s.has("student_train")) read_train(s.child("student_train"), p.student_train);
  s.read("top_n", p.top_n);
  s.read("importance_batches", p.importance_batches);
  s.read("importance_batch_size", p.importance_batch_size);
  s.read("train_fraction", p.train_fraction);
  s.read_with("strategies", [&](const json& v, const std::string& path) {
    if (!v.is_array()) throw ConfigError("config: '" + path + "' must be an array");
    p.strategies.clear();
    for (const auto& item : v) {
      if (!item.is_string()) throw ConfigError("config: '" + path + "' must hold strategy names");
      p.strategies.push_back(ssfs::strategy_from_string(item.get<std::string>()));
    }
  });
  s.read("verify_planted", c.verify_planted);
  s.read("planted_permutations", c.planted_permutations);
  s.finish();
}

void read_sslfm(Section s, sslfm::ExperimentConfig& c) {
  if (s.has("pool")) read_pool(s.child("pool"), c.pool);
  s.read("requests", c.requests);
  s.read("teacher_requests", c.teacher_requests);
  s.read("stage_sizes", c.stage_sizes);
  s.read("stage1_noise", c.stage1_noise);
  s.read("stage2_noise", c.stage2_noise);
  s.read("student_features", c.student_features);
  if (s.has("student_arch")) read_arch(s.child("student_arch"), c.student_arch);
  if (s.has("teacher_arch")) read_arch(s.child("teacher_arch"), c.teacher_arch);
  if (s.has("teacher_train")) read_train(s.child("teacher_train"), c.teacher_train);
  if (s.has("heads")) {
    Section h = s.child("heads");
    h.read("dependent_weight", c.sslfm.dependent_weight);
    h.read("auxiliary_weight", c.sslfm.auxiliary_weight);
    h.read("unlabeled_only", c.sslfm.unlabeled_only);
    h.read("stop_gradient_dependent", c.sslfm.stop_gradient_dependent);
    h.read("unlabeled_batch_size", c.sslfm.unlabeled_batch_size);
    h.finish();
  }
  if (s.has("student_train")) read_train(s.child("student_train"), c.sslfm.train);
  s.read("dependent_hidden", c.dependent_hidden);
  s.read_with("variants", [&](const json& v, const std::string& path) {
    if (!v.is_array()) throw ConfigError("config: '" + path + "' must be an array");
    c.variants.clear();
    for (const auto& item : v) {
      if (!item.is_string()) throw ConfigError("config: '" + path + "' must hold variant names");
      c.variants.push_back(sslfm::variant_from_string(item.get<std::string>()));
    }
  });
  s.read("train_fraction", c.train_fraction);
  s.finish();
}

template <typename T, typename Fn>
void read_section(Section& root, const std::string& key, std::optional<T>& slot, Fn fn) {
  if (!root.has(key)) return;
  slot.emplace();
  fn(root.child(key), *slot);
}

}  // namespace

void SimulateConfig::validate() const {
  if (k1_values.empty()) throw ConfigError("simulate: k1_values must not be empty");
  if (variants.empty()) throw ConfigError("simulate: variants must not be empty");
  for (double k : k1_values) {
    if (!(k >= 1.0) || k != static_cast<double>(static_cast<std::size_t>(k))) {
      throw ConfigError("simulate: k1_values must be positive integers");
    }
  }
  for (std::size_t i = 1; i < k1_values.size(); ++i) {
    if (!(k1_values[i] > k1_values[i - 1])) throw ConfigError("simulate: k1_values must be strictly increasing");
  }
}

void GenDataConfig::validate() const {
  pool.validate();
  if (requests < 1) throw ConfigError("gen_data: requests must be >= 1");
  if (stage_sizes.empty()) throw ConfigError("gen_data: stage_sizes must not be empty");
  if (stage_noise.size() != stage_sizes.size()) {
    throw ConfigError("gen_data: stage_noise needs one entry per stage");
  }
  for (double s : stage_noise) {
    if (!(s >= 0.0)) throw ConfigError("gen_data: stage_noise entries must be >= 0");
  }
}

RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig config;
  config.base_dir = base_dir;
  Section root(j, "");
  root.read("seed", config.seed);
  std::string value;
  if (root.has("out")) {
    root.read("out", value);
    config.out = value;
  }
  if (root.has("format")) {
    root.read("format", value);
    config.format = value;
  }
  read_section(root, "simulate", config.simulate, read_simulate);
  read_section(root, "gen_data", config.gen_data, read_gen_data);
  read_section(root, "train", config.train, read_train_command);
  read_section(root, "distill", config.distill, read_distill);
  read_section(root, "ssfs", config.ssfs, read_ssfs);
  read_section(root, "sslfm", config.sslfm, read_sslfm);
  root.finish();
  return config;
}

nlohmann::json pool_to_json(const data::PoolConfig& pool) {
  return {{"num_candidates", pool.num_candidates},
          {"num_features", pool.num_features},
          {"informative_weights", pool.informative_weights},
          {"bias", pool.bias},
          {"feature_correlation", pool.feature_correlation},
          {"nonlinearity", pool.nonlinearity},
          {"interaction_weight", pool.interaction_weight}};
}

nlohmann::json train_config_to_json(const model::TrainConfig& config) {
  return {{"learning_rate", config.learning_rate}, {"epochs", config.epochs},
          {"batch_size", config.batch_size},       {"optimizer", model::to_string(config.optimizer)},
          {"l2", config.l2},                       {"lr_decay", config.lr_decay}};
}

}  // namespace cascadelab::cli

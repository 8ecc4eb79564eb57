#include "cascadelab/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <utility>

#include "cascadelab/error.hpp"
#include "cascadelab/parallel.hpp"
#include "cascadelab/random.hpp"

namespace cascadelab::model {

PredictorArch PredictorArch::linear(std::size_t input_dim) {
  PredictorArch arch;
  arch.kind = Kind::linear;
  arch.input_dim = input_dim;
  return arch;
}

PredictorArch PredictorArch::feedforward(std::size_t input_dim, std::vector<std::size_t> hidden,
                                         Activation activation) {
  PredictorArch arch;
  arch.kind = Kind::feedforward;
  arch.input_dim = input_dim;
  arch.hidden_sizes = std::move(hidden);
  arch.activation = activation;
  return arch;
}

void PredictorArch::validate() const {
  if (input_dim < 1) throw ConfigError("PredictorArch: input_dim must be >= 1");
  if (kind == Kind::linear && !hidden_sizes.empty()) {
    throw ConfigError("PredictorArch: a linear model has no hidden layers");
  }
  if (kind == Kind::feedforward && hidden_sizes.empty()) {
    throw ConfigError("PredictorArch: a feedforward model needs at least one hidden layer");
  }
  for (std::size_t h : hidden_sizes) {
    if (h < 1) throw ConfigError("PredictorArch: hidden sizes must be >= 1");
  }
}

std::size_t PredictorArch::parameter_count() const {
  std::size_t count = 0;
  std::size_t in = input_dim;
  for (std::size_t h : hidden_sizes) {
    count += (in + 1) * h;
    in = h;
  }
  return count + in + 1;
}

std::size_t PredictorArch::representation_dim() const {
  return hidden_sizes.empty() ? input_dim : hidden_sizes.back();
}

std::string to_string(Kind kind) { return kind == Kind::linear ? "linear" : "feedforward"; }
std::string to_string(Activation activation) { return activation == Activation::relu ? "relu" : "tanh"; }
std::string to_string(Optimizer optimizer) { return optimizer == Optimizer::sgd ? "sgd" : "adam"; }

Kind kind_from_string(const std::string& text) {
  if (text == "linear") return Kind::linear;
  if (text == "feedforward") return Kind::feedforward;
  throw ConfigError("unknown model kind '" + text + "' (expected linear or feedforward)");
}

Activation activation_from_string(const std::string& text) {
  if (text == "relu") return Activation::relu;
  if (text == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + text + "' (expected relu or tanh)");
}

Optimizer optimizer_from_string(const std::string& text) {
  if (text == "sgd") return Optimizer::sgd;
  if (text == "adam") return Optimizer::adam;
  throw ConfigError("unknown optimizer '" + text + "' (expected sgd or adam)");
}

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double clip_probability(double p) { return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon); }

double bce_loss(double target, double prediction) {
  const double z = clip_probability(prediction);
  double loss = 0.0;
  if (target > 0.0) loss -= target * std::log(z);
  if (target < 1.0) loss -= (1.0 - target) * std::log1p(-z);
  return loss;
}

double bce_from_logit(double target, double logit) {
  const double softplus = std::max(logit, 0.0) + std::log1p(std::exp(-std::fabs(logit)));
  return softplus - target * logit;
}

Predictor::Predictor(PredictorArch arch) : arch_(std::move(arch)) {
  arch_.validate();
  std::size_t offset = 0;
  std::size_t in = arch_.input_dim;
  auto add_layer = [&](std::size_t out) {
    layers_.push_back({in, out, offset});
    weight_mask_.insert(weight_mask_.end(), in * out, true);
    weight_mask_.insert(weight_mask_.end(), out, false);
    offset += (in + 1) * out;
    in = out;
  };
  for (std::size_t h : arch_.hidden_sizes) add_layer(h);
  add_layer(1);
  params_.assign(offset, 0.0);
}

Predictor::Predictor(PredictorArch arch, std::vector<double> params, std::uint64_t init_seed)
    : Predictor(std::move(arch)) {
  if (params.size() != params_.size()) {
    throw DimensionError("Predictor: expected " + std::to_string(params_.size()) + " parameters, got " +
                         std::to_string(params.size()));
  }
  params_ = std::move(params);
  init_seed_ = init_seed;
}

Predictor Predictor::initialized(PredictorArch arch, std::uint64_t seed) {
  Predictor model(std::move(arch));
  model.init_seed_ = seed;
  SplitMix64 rng(derive_seed(seed, "init"));
  for (const Layer& layer : model.layers_) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
    for (std::size_t k = 0; k < layer.in * layer.out; ++k) {
      model.params_[layer.offset + k] = (2.0 * rng.uniform() - 1.0) * limit;
    }
  }
  return model;
}

double Predictor::activate(double v) const {
  return arch_.activation == Activation::relu ? std::max(v, 0.0) : std::tanh(v);
}

double Predictor::activate_grad(double pre, double post) const {
  if (arch_.activation == Activation::relu) return pre > 0.0 ? 1.0 : 0.0;
  return 1.0 - post * post;
}

double Predictor::forward(std::span<const double> x, Workspace& ws) const {
  const std::size_t hidden = layers_.size() - 1;
  ws.pre.resize(hidden);
  ws.post.resize(hidden);
  std::span<const double> in = x;
  for (std::size_t h = 0; h < hidden; ++h) {
    const Layer& layer = layers_[h];
    const double* w = params_.data() + layer.offset;
    const double* b = w + layer.in * layer.out;
    auto& pre = ws.pre[h];
    auto& post = ws.post[h];
    pre.resize(layer.out);
    post.resize(layer.out);
    for (std::size_t o = 0; o < layer.out; ++o) {
      double acc = b[o];
      const double* row = w + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) acc += row[i] * in[i];
      pre[o] = acc;
      post[o] = activate(acc);
    }
    in = post;
  }
  const Layer& last = layers_.back();
  const double* w = params_.data() + last.offset;
  double acc = w[last.in];
  for (std::size_t i = 0; i < last.in; ++i) acc += w[i] * in[i];
  return acc;
}

std::span<const double> Predictor::representation(std::span<const double> x, const Workspace& ws) const {
  if (layers_.size() == 1) return x;
  return ws.post.back();
}

void Predictor::backward(std::span<const double> x, Workspace& ws, double dlogit, std::span<double> grad,
                         std::span<const double> drepresentation) const {
  const Layer& last = layers_.back();
  const std::span<const double> rep = representation(x, ws);
  const double* w_out = params_.data() + last.offset;
  double* g_out = grad.data() + last.offset;
  for (std::size_t i = 0; i < last.in; ++i) g_out[i] += dlogit * rep[i];
  g_out[last.in] += dlogit;
  if (layers_.size() == 1) return;

  auto& delta = ws.delta;
  auto& below = ws.delta_below;
  delta.assign(last.in, 0.0);
  for (std::size_t i = 0; i < last.in; ++i) {
    delta[i] = dlogit * w_out[i] + (drepresentation.empty() ? 0.0 : drepresentation[i]);
  }
  for (std::size_t h = layers_.size() - 1; h-- > 0;) {
    const Layer& layer = layers_[h];
    const double* w = params_.data() + layer.offset;
    double* gw = grad.data() + layer.offset;
    double* gb = gw + layer.in * layer.out;
    const std::span<const double> in = h == 0 ? x : std::span<const double>(ws.post[h - 1]);
    for (std::size_t o = 0; o < layer.out; ++o) delta[o] *= activate_grad(ws.pre[h][o], ws.post[h][o]);
    if (h > 0) below.assign(layer.in, 0.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      double* grow = gw + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) grow[i] += d * in[i];
      gb[o] += d;
      if (h > 0) {
        const double* row = w + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i) below[i] += d * row[i];
      }
    }
    if (h > 0) std::swap(delta, below);
  }
}

double Predictor::logit(std::span<const double> x) const {
  if (x.size() != arch_.input_dim) {
    throw DimensionError("predict: expected " + std::to_string(arch_.input_dim) + " features, got " +
                         std::to_string(x.size()));
  }
  Workspace ws;
  return forward(x, ws);
}

double Predictor::predict(std::span<const double> x) const { return clip_probability(logistic(logit(x))); }

std::vector<double> Predictor::predict_batch(const Matrix& features, std::size_t threads) const {
  if (features.cols != arch_.input_dim) {
    throw DimensionError("predict_batch: expected " + std::to_string(arch_.input_dim) + " features, got " +
                         std::to_string(features.cols));
  }
  std::vector<double> out(features.rows);
  constexpr std::size_t kBlock = 2048;
  parallel_for((features.rows + kBlock - 1) / kBlock, threads, [&](std::size_t block) {
    Workspace ws;
    const std::size_t end = std::min(features.rows, (block + 1) * kBlock);
    for (std::size_t r = block * kBlock; r < end; ++r) {
      out[r] = clip_probability(logistic(forward(features.row(r), ws)));
    }
  });
  return out;
}

std::size_t Predictor::output_weight_offset() const { return layers_.back().offset; }

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("TrainConfig: learning_rate must be > 0");
  }
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
  if (!(l2 >= 0.0) || !std::isfinite(l2)) throw ConfigError("TrainConfig: l2 must be >= 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("TrainConfig: lr_decay must lie in (0, 1]");
}

double TrainConfig::learning_rate_at(std::size_t epoch) const {
  return lr_decay == 1.0 ? learning_rate : learning_rate * std::pow(lr_decay, static_cast<double>(epoch));
}

void Dataset::validate() const {
  if (targets.empty()) throw ConfigError("Dataset: no examples");
  if (features.rows != targets.size()) throw DimensionError("Dataset: feature rows and targets differ in count");
  if (!weights.empty() && weights.size() != targets.size()) {
    throw DimensionError("Dataset: weights and targets differ in count");
  }
  for (double t : targets) {
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("Dataset: targets must lie in [0, 1]");
  }
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("Dataset: weights must be finite and >= 0");
  }
}

Dataset Dataset::from_impressions(const data::ImpressionSet& set) {
  Dataset d;
  d.features = set.features;
  d.targets.assign(set.labels.begin(), set.labels.end());
  return d;
}

Dataset Dataset::from_consideration(const data::ConsiderationSet& set) {
  if (set.teacher_pred.size() != set.size()) {
    throw DimensionError("Dataset::from_consideration: missing teacher predictions");
  }
  Dataset d;
  d.features = set.features;
  d.targets = set.teacher_pred;
  return d;
}

OptimizerState::OptimizerState(const TrainConfig& config, std::size_t parameter_count)
    : config_(config), lr_(config.learning_rate) {
  if (config_.optimizer == Optimizer::adam) {
    m_.assign(parameter_count, 0.0);
    v_.assign(parameter_count, 0.0);
  }
}

void OptimizerState::set_epoch(std::size_t epoch) { lr_ = config_.learning_rate_at(epoch); }

void OptimizerState::step(std::span<double> params, std::span<const double> grad) {
  const double lr = lr_;
  if (config_.optimizer == Optimizer::sgd) {
    for (std::size_t j = 0; j < params.size(); ++j) params[j] -= lr * grad[j];
    return;
  }
  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double eps = 1e-8;
  ++t_;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (std::size_t j = 0; j < params.size(); ++j) {
    m_[j] = beta1 * m_[j] + (1.0 - beta1) * grad[j];
    v_[j] = beta2 * v_[j] + (1.0 - beta2) * grad[j] * grad[j];
    params[j] -= lr * (m_[j] / c1) / (std::sqrt(v_[j] / c2) + eps);
  }
}

double accumulate_batch(const Predictor& model, const Dataset& data, std::span<const std::size_t> rows,
                        double scale, std::span<double> grad, Workspace& ws) {
  double loss = 0.0;
  for (std::size_t r : rows) {
    const auto x = data.features.row(r);
    const double l = model.forward(x, ws);
    const double w = data.weight(r);
    const double t = data.targets[r];
    loss += w * bce_from_logit(t, l);
    const double dlogit = scale * w * (logistic(l) - t);
    if (dlogit != 0.0) model.backward(x, ws, dlogit, grad);
  }
  return loss;
}

double dataset_loss(const Predictor& model, const Dataset& data, double l2) {
  Workspace ws;
  double total = 0.0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    total += data.weight(r) * bce_from_logit(data.targets[r], model.forward(data.features.row(r), ws));
  }
  double loss = total / static_cast<double>(data.size());
  if (l2 > 0.0) {
    const auto params = model.parameters();
    const auto& mask = model.weight_mask();
    double sq = 0.0;
    for (std::size_t j = 0; j < params.size(); ++j) {
      if (mask[j]) sq += params[j] * params[j];
    }
    loss += 0.5 * l2 * sq;
  }
  return loss;
}

void add_l2_gradient(const Predictor& model, double l2, std::span<double> grad) {
  if (l2 == 0.0) return;
  const auto params = model.parameters();
  const auto& mask = model.weight_mask();
  for (std::size_t j = 0; j < params.size(); ++j) {
    if (mask[j]) grad[j] += l2 * params[j];
  }
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch,
                                     const std::string& stream) {
  return random_permutation(count, derive_seed(seed, stream + ":epoch:" + std::to_string(epoch)));
}

TrainResult train(Predictor& model, const Dataset& data, const TrainConfig& config) {
  config.validate();
  data.validate();
  if (data.features.cols != model.input_dim()) {
    throw DimensionError("train: dataset has " + std::to_string(data.features.cols) + " features, model expects " +
                         std::to_string(model.input_dim()));
  }
  TrainResult result;
  OptimizerState optimizer(config, model.parameters().size());
  std::vector<double> grad(model.parameters().size());
  Workspace ws;
  auto record = [&](std::size_t epoch) {
    const double loss = dataset_loss(model, data, config.l2);
    if (!std::isfinite(loss)) {
      throw DivergenceError("train: loss became non-finite after epoch " + std::to_string(epoch) +
                            "; lower the learning rate");
    }
    result.loss_history.push_back(loss);
  };
  record(0);
  const std::size_t n = data.size();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = epoch_order(n, config.seed, epoch);
    optimizer.set_epoch(epoch);
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, n - start);
      const std::span<const std::size_t> rows(order.data() + start, len);
      std::fill(grad.begin(), grad.end(), 0.0);
      accumulate_batch(model, data, rows, 1.0 / static_cast<double>(len), grad, ws);
      add_l2_gradient(model, config.l2, grad);
      optimizer.step(model.mutable_parameters(), grad);
      ++result.steps;
    }
    record(epoch + 1);
  }
  return result;
}

std::vector<double> dataset_gradient(const Predictor& model, const Dataset& data) {
  data.validate();
  std::vector<double> grad(model.parameters().size(), 0.0);
  std::vector<std::size_t> rows(data.size());
  for (std::size_t r = 0; r < rows.size(); ++r) rows[r] = r;
  Workspace ws;
  accumulate_batch(model, data, rows, 1.0 / static_cast<double>(data.size()), grad, ws);
  return grad;
}

double grad_check(std::span<const double> params, const std::function<double(std::span<const double>)>& loss,
                  const std::function<void(std::span<const double>, std::span<double>)>& gradient,
                  double epsilon) {
  if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) throw ConfigError("grad_check: epsilon must lie in [1e-6, 1e-3]");
  std::vector<double> analytic(params.size(), 0.0);
  gradient(params, analytic);
  std::vector<double> probe(params.begin(), params.end());
  double worst = 0.0;
  for (std::size_t j = 0; j < probe.size(); ++j) {
    const double saved = probe[j];
    probe[j] = saved + epsilon;
    const double up = loss(probe);
    probe[j] = saved - epsilon;
    const double down = loss(probe);
    probe[j] = saved;
    const double fd = (up - down) / (2.0 * epsilon);
    const double rel = std::fabs(analytic[j] - fd) / std::max(1e-8, std::fabs(analytic[j]) + std::fabs(fd));
    worst = std::max(worst, rel);
  }
  return worst;
}

double grad_check(const Predictor& model, const Dataset& batch, double epsilon) {
  batch.validate();
  if (batch.features.cols != model.input_dim()) throw DimensionError("grad_check: feature count mismatch");
  Predictor probe = model;
  auto set = [&](std::span<const double> p) { std::copy(p.begin(), p.end(), probe.mutable_parameters().begin()); };
  return grad_check(
      model.parameters(),
      [&](std::span<const double> p) {
        set(p);
        return dataset_loss(probe, batch);
      },
      [&](std::span<const double> p, std::span<double> out) {
        set(p);
        const auto g = dataset_gradient(probe, batch);
        std::copy(g.begin(), g.end(), out.begin());
      },
      epsilon);
}

nlohmann::json arch_to_json(const PredictorArch& arch) {
  return {{"kind", to_string(arch.kind)},
          {"input_dim", arch.input_dim},
          {"hidden_sizes", arch.hidden_sizes},
          {"activation", to_string(arch.activation)}};
}

PredictorArch arch_from_json(const nlohmann::json& j) {
  try {
    PredictorArch arch;
    arch.kind = kind_from_string(j.at("kind").get<std::string>());
    arch.input_dim = j.at("input_dim").get<std::size_t>();
    arch.hidden_sizes = j.value("hidden_sizes", std::vector<std::size_t>{});
    arch.activation = activation_from_string(j.value("activation", std::string("relu")));
    arch.validate();
    return arch;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model arch: ") + e.what());
  }
}

void save_checkpoint(std::ostream& out, const Predictor& model) {
  nlohmann::json j;
  j["format"] = "cascadelab-predictor";
  j["format_version"] = 1;
  j["arch"] = arch_to_json(model.arch());
  j["init_seed"] = model.init_seed();
  j["parameters"] = std::vector<double>(model.parameters().begin(), model.parameters().end());
  out << j.dump(1) << '\n';
}

Predictor load_checkpoint(std::istream& in) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
  if (j.value("format", std::string()) != "cascadelab-predictor") throw ConfigError("checkpoint: unknown format");
  try {
    return Predictor(arch_from_json(j.at("arch")), j.at("parameters").get<std::vector<double>>(),
                     j.at("init_seed").get<std::uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
}

data::StageModel predictor_stage(std::shared_ptr<const Predictor> model, std::vector<std::size_t> columns) {
  if (!model) throw ConfigError("predictor_stage: null model");
  const std::size_t expected = columns.empty() ? 0 : columns.size();
  if (expected != 0 && expected != model->input_dim()) {
    throw DimensionError("predictor_stage: column subset does not match the model's input_dim");
  }
  return [model, columns](const data::CandidatePool& pool, std::span<const std::size_t> rows, std::span<double> out) {
    if (columns.empty() && pool.features.cols != model->input_dim()) {
      throw DimensionError("predictor_stage: pool feature count does not match the model");
    }
    Workspace ws;
    std::vector<double> x(model->input_dim());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto full = pool.features.row(rows[r]);
      std::span<const double> input = full;
      if (!columns.empty()) {
        for (std::size_t c = 0; c < columns.size(); ++c) x[c] = full[columns[c]];
        input = x;
      }
      out[r] = clip_probability(logistic(model->forward(input, ws)));
    }
  };
}

}  // namespace cascadelab::model

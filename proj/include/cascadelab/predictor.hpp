#pragma once

// Small differentiable click-probability models trained with binary
// cross-entropy.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cascadelab/matrix.hpp"
#include "cascadelab/synthgen.hpp"
#include "json.hpp"

namespace cascadelab::model {

inline constexpr double kProbEpsilon = 1e-7;

enum class Kind { linear, feedforward };
enum class Activation { relu, tanh };

struct PredictorArch {
  Kind kind = Kind::linear;
  std::vector<std::size_t> hidden_sizes;
  std::size_t input_dim = 1;
  Activation activation = Activation::relu;

  static PredictorArch linear(std::size_t input_dim);
  static PredictorArch feedforward(std::size_t input_dim, std::vector<std::size_t> hidden,
                                   Activation activation = Activation::relu);

  void validate() const;
  std::size_t parameter_count() const;
  /// Width of the last hidden layer, or input_dim for a linear model.
  std::size_t representation_dim() const;
  bool operator==(const PredictorArch&) const = default;
};

std::string to_string(Kind kind);
std::string to_string(Activation activation);
Kind kind_from_string(const std::string& text);
Activation activation_from_string(const std::string& text);

double logistic(double x);
double clip_probability(double p);

/// -[y log z + (1 - y) log(1 - z)] with z clipped to [eps, 1 - eps].
double bce_loss(double target, double prediction);

/// Same loss written in terms of the logit l = logit(z), without clipping:
/// softplus(l) - y l. Its derivative in l is logistic(l) - y.
double bce_from_logit(double target, double logit);

/// Activations of one forward pass, reused across examples.
struct Workspace {
  std::vector<std::vector<double>> pre;   // per hidden layer, before activation
  std::vector<std::vector<double>> post;  // per hidden layer, after activation
  std::vector<double> delta;
  std::vector<double> delta_below;
};

/// Parameters are laid out layer by layer, each as a row-major [out x in]
/// weight block followed by the out biases. The last layer has one output.
class Predictor {
 public:
  /// All parameters zero.
  explicit Predictor(PredictorArch arch);
  /// Glorot-uniform weights from the substream (seed, "init"); zero biases.
  static Predictor initialized(PredictorArch arch, std::uint64_t seed);
  /// Restores a model from a parameter vector of the arch's layout.
  Predictor(PredictorArch arch, std::vector<double> params, std::uint64_t init_seed);

  const PredictorArch& arch() const { return arch_; }
  std::size_t input_dim() const { return arch_.input_dim; }
  std::span<const double> parameters() const { return params_; }
  std::span<double> mutable_parameters() { return params_; }
  std::uint64_t init_seed() const { return init_seed_; }

  /// Logit for one example; leaves the hidden activations in `ws`.
  double forward(std::span<const double> x, Workspace& ws) const;
  /// The representation fed to the output layer after the last forward():
  /// the last hidden layer, or x itself for a linear model.
  std::span<const double> representation(std::span<const double> x, const Workspace& ws) const;

  /// Adds d(loss)/d(params) to `grad`, given d(loss)/d(logit) and optionally an
  /// extra gradient on the representation (used by attached heads).
  void backward(std::span<const double> x, Workspace& ws, double dlogit, std::span<double> grad,
                std::span<const double> drepresentation = {}) const;

  double logit(std::span<const double> x) const;
  /// Probability clipped to [1e-7, 1 - 1e-7]. Throws DimensionError on a
  /// length mismatch.
  double predict(std::span<const double> x) const;
  std::vector<double> predict_batch(const Matrix& features, std::size_t threads = 1) const;

  /// Marks weights (true) versus biases (false); L2 applies to weights only.
  const std::vector<bool>& weight_mask() const { return weight_mask_; }

  /// Offset of the output layer's weights and its bias in the parameter vector.
  std::size_t output_weight_offset() const;
  std::size_t output_bias_offset() const { return params_.size() - 1; }

 private:
  struct Layer {
    std::size_t in;
    std::size_t out;
    std::size_t offset;
  };

  PredictorArch arch_;
  std::vector<Layer> layers_;
  std::vector<double> params_;
  std::vector<bool> weight_mask_;
  std::uint64_t init_seed_ = 0;

  double activate(double v) const;
  double activate_grad(double pre, double post) const;
};

enum class Optimizer { sgd, adam };
std::string to_string(Optimizer optimizer);
Optimizer optimizer_from_string(const std::string& text);

struct TrainConfig {
  double learning_rate = 1e-2;
  std::size_t epochs = 10;
  std::size_t batch_size = 256;
  Optimizer optimizer = Optimizer::adam;
  double l2 = 0.0;
  std::uint64_t seed = 0;
  // Learning rate of epoch e is learning_rate * lr_decay^e.
  double lr_decay = 1.0;

  void validate() const;
  double learning_rate_at(std::size_t epoch) const;
};

/// Features with soft or hard targets in [0, 1] and optional per-example
/// weights (empty means all ones).
struct Dataset {
  Matrix features;
  std::vector<double> targets;
  std::vector<double> weights;

  std::size_t size() const { return targets.size(); }
  double weight(std::size_t i) const { return weights.empty() ? 1.0 : weights[i]; }
  void validate() const;

  static Dataset from_impressions(const data::ImpressionSet& set);
  /// Targets are the logged teacher predictions.
  static Dataset from_consideration(const data::ConsiderationSet& set);
};

/// Per-step parameter update; one instance per training run.
class OptimizerState {
 public:
  OptimizerState(const TrainConfig& config, std::size_t parameter_count);
  void step(std::span<double> params, std::span<const double> grad);
  void set_epoch(std::size_t epoch);

 private:
  TrainConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
  double lr_;
};

/// Adds the weighted BCE of `rows` (scaled by `scale`) to `loss` and its
/// gradient to `grad`. Returns the unscaled weighted loss sum.
double accumulate_batch(const Predictor& model, const Dataset& data, std::span<const std::size_t> rows,
                        double scale, std::span<double> grad, Workspace& ws);

/// (1/N) sum_i w_i BCE_i + (l2/2) |weights|^2 over the whole dataset.
double dataset_loss(const Predictor& model, const Dataset& data, double l2 = 0.0);

/// Adds l2 * w to the gradient of every weight (not bias).
void add_l2_gradient(const Predictor& model, double l2, std::span<double> grad);

/// Epoch permutation for the stream (seed, "shuffle:epoch:<epoch>"), optionally
/// with a suffix to separate independent streams of one run.
std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch,
                                     const std::string& stream = "shuffle");

struct TrainResult {
  // Full-dataset objective before training and after every epoch.
  std::vector<double> loss_history;
  std::size_t steps = 0;
};

/// Mini-batch training; each batch minimizes (1/B) sum w_i BCE_i plus L2.
/// Throws DivergenceError when the loss becomes non-finite.
TrainResult train(Predictor& model, const Dataset& data, const TrainConfig& config);

/// Gradient of (1/N) sum w_i BCE_i (no L2) over the whole dataset.
std::vector<double> dataset_gradient(const Predictor& model, const Dataset& data);

/// Max over parameters of |g - g_fd| / max(1e-8, |g| + |g_fd|) with central
/// differences. epsilon must lie in [1e-6, 1e-3].
double grad_check(const Predictor& model, const Dataset& batch, double epsilon = 1e-6);

/// Same check for any objective: loss(params) and grad(params, out).
double grad_check(std::span<const double> params, const std::function<double(std::span<const double>)>& loss,
                  const std::function<void(std::span<const double>, std::span<double>)>& gradient,
                  double epsilon);

nlohmann::json arch_to_json(const PredictorArch& arch);
PredictorArch arch_from_json(const nlohmann::json& j);

/// Self-describing JSON checkpoint. Doubles round-trip exactly.
void save_checkpoint(std::ostream& out, const Predictor& model);
Predictor load_checkpoint(std::istream& in);

/// Stage model scoring with `model` on the given feature columns (all when empty).
data::StageModel predictor_stage(std::shared_ptr<const Predictor> model, std::vector<std::size_t> columns = {});

}  // namespace cascadelab::model

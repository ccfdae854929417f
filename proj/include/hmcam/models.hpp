#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hmcam/autograd.hpp"
#include "hmcam/data.hpp"
#include "hmcam/tensor.hpp"
#include "json.hpp"

namespace hmcam {

/// A differentiable classifier mapping inputs in [0,1]^d to C logits.
///
/// Inputs may be a single example [d] (logits [C]) or a batch [m x d]
/// (logits [m x C]); rows never interact, so a row's result does not depend
/// on which batch it travels in.
class Model {
 public:
  virtual ~Model() = default;

  virtual std::size_t input_dim() const = 0;
  virtual std::size_t num_classes() const = 0;
  virtual const std::string& name() const = 0;

  virtual Tensor logits(const Tensor& x) const = 0;
  /// Records the forward pass on `graph`; parameters enter as constants.
  virtual ag::Var build_logits(ag::Graph& graph, const ag::Var& x) const = 0;
};

using ModelPtr = std::shared_ptr<const Model>;

struct MlpSpec {
  /// Input dim, hidden widths..., number of classes.
  std::vector<std::size_t> layer_widths;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t input_dim() const { return layer_widths.front(); }
  std::size_t num_classes() const { return layer_widths.back(); }
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Fully connected ReLU network. Parameters are w0,b0,w1,b1,... with
/// w_i of shape [in x out] so that a layer computes h * w_i + b_i.
class Mlp : public Model {
 public:
  /// Fan-in scaled uniform initialisation U(-1/sqrt(in), 1/sqrt(in)) from spec.seed.
  explicit Mlp(MlpSpec spec, std::string name = "mlp");
  Mlp(MlpSpec spec, std::vector<NamedTensor> params, std::string name);

  static Mlp zeros(MlpSpec spec, std::string name = "mlp");

  std::size_t input_dim() const override { return spec_.input_dim(); }
  std::size_t num_classes() const override { return spec_.num_classes(); }
  const std::string& name() const override { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }

  Tensor logits(const Tensor& x) const override;
  ag::Var build_logits(ag::Graph& graph, const ag::Var& x) const override;

  /// Forward pass with every parameter recorded as a gradient-requiring leaf.
  struct Trainable {
    ag::Var logits;
    std::vector<ag::Var> params;
  };
  Trainable build_trainable(ag::Graph& graph, const ag::Var& x) const;

  const MlpSpec& spec() const { return spec_; }
  const std::vector<NamedTensor>& params() const { return params_; }
  /// Replace parameter values; shapes must be unchanged.
  void set_params(std::vector<Tensor> values);
  std::size_t parameter_count() const;
  /// SHA-1 over all parameter values in order.
  std::string checksum() const;

 private:
  ag::Var forward(const ag::Var& x, const std::vector<ag::Var>& params) const;

  MlpSpec spec_;
  std::vector<NamedTensor> params_;
  std::string name_;
};

/// Equal-weight ensemble fusing member logits by their arithmetic mean.
class Ensemble : public Model {
 public:
  explicit Ensemble(std::vector<ModelPtr> members, std::string name = "ensemble");

  std::size_t input_dim() const override { return members_.front()->input_dim(); }
  std::size_t num_classes() const override { return members_.front()->num_classes(); }
  const std::string& name() const override { return name_; }

  Tensor logits(const Tensor& x) const override;
  ag::Var build_logits(ag::Graph& graph, const ag::Var& x) const override;

  const std::vector<ModelPtr>& members() const { return members_; }
  const std::vector<double>& weights() const { return weights_; }

 private:
  std::vector<ModelPtr> members_;
  std::vector<double> weights_;
  std::string name_;
};

/// Cross-entropy of each row and its gradient with respect to the input.
struct InputGradient {
  std::vector<double> losses;
  Tensor grad;  // same shape as the input
};

/// Per-row CE losses and d(sum of losses)/dx. Row i of the gradient is the
/// gradient of row i's own loss. Model parameters are not touched.
InputGradient loss_and_input_grad(const Model& model, const Tensor& x, std::span<const std::size_t> labels);

/// Single example with a one-hot target: (loss, dloss/dx).
std::pair<double, Tensor> loss_and_input_grad(const Model& model, const Tensor& x, const Tensor& onehot);

/// d<signal, logits(x)>/dx, i.e. the logits' vector-Jacobian product pulled back to the input.
Tensor logit_input_vjp(const Model& model, const Tensor& x, const Tensor& signal);

std::vector<std::size_t> predict(const Model& model, const Tensor& x);
double accuracy(const Model& model, const Dataset& data);

struct TrainConfig {
  std::size_t epochs = 10;
  double lr = 0.05;
  std::size_t batch_size = 64;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  /// Epochs (1-based) after which the learning rate is multiplied by lr_decay_factor.
  std::vector<std::size_t> lr_decay_epochs;
  double lr_decay_factor = 0.1;

  void validate() const;
  double lr_at(std::size_t epoch) const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  /// Accuracy on the examples the model was trained on during the epoch.
  double accuracy = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
};

/// SGD with heavy-ball momentum and L2 weight decay added to the gradient.
class SgdOptimizer {
 public:
  SgdOptimizer(const Mlp& model, double momentum, double weight_decay);
  void step(Mlp& model, const std::vector<Tensor>& grads, double lr);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

/// Gradients of the mean CE over a batch with respect to every parameter.
struct BatchGradient {
  double mean_loss = 0.0;
  std::size_t correct = 0;
  std::vector<Tensor> grads;
};
BatchGradient parameter_gradients(const Mlp& model, const Tensor& x, std::span<const std::size_t> labels);

/// Replaces a minibatch before the parameter update (identity for natural training).
using BatchTransform = std::function<Tensor(const Mlp& model, const Tensor& batch, std::span<const std::size_t> labels,
                                            std::span<const std::size_t> indices, std::size_t epoch)>;
/// Called after every epoch with the model and the epoch's statistics.
using EpochHook = std::function<void(const Mlp& model, const EpochStats& stats)>;

/// Shuffled minibatch SGD; `transform` and `on_epoch` may be empty.
TrainReport run_training(Mlp& model, const Dataset& data, const TrainConfig& cfg, const BatchTransform& transform,
                         const EpochHook& on_epoch = {});

/// Natural cross-entropy training.
TrainReport sgd_train(Mlp& model, const Dataset& data, const TrainConfig& cfg);

// Checkpoint file: "ADVC", u32 format version, u64 manifest length, JSON
// manifest, then each parameter as raw little-endian f64 in manifest order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Mlp& model, const std::filesystem::path& path, const nlohmann::json& extra = {});

struct Checkpoint {
  Mlp model;
  nlohmann::json manifest;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hmcam

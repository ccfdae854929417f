#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hmcam/attacks.hpp"
#include "hmcam/data.hpp"
#include "hmcam/models.hpp"
#include "json.hpp"

namespace hmcam {

/// Held-out evaluation run after an epoch, outside the timed region.
struct EvalOptions {
  /// No evaluation when null.
  const Dataset* data = nullptr;
  /// Use at most this many examples (0 = all).
  std::size_t max_examples = 0;
  /// Evaluate after the last epoch only.
  bool final_only = false;
  /// Radius of the PGD evaluation attack; defaults to the training radius.
  std::optional<double> epsilon;
  std::size_t pgd_iterations = 20;
  std::uint64_t seed = 0;
};

/// Fraction of examples still classified correctly after PGD with step eps/4
/// and one random start. Chunks of 500 rows are seeded from (seed, first row).
double robust_accuracy(const Model& model, const Dataset& data, double epsilon, std::size_t iterations,
                       std::uint64_t seed, std::size_t max_examples = 0);

struct AdvEpochStats {
  std::size_t epoch = 0;
  /// Mean CE of the examples the parameters were updated on.
  double loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> nat_acc;
  std::optional<double> rob_acc;
  double seconds = 0.0;
  /// Input-gradient evaluations spent generating training examples.
  std::size_t input_gradients = 0;
};

struct AdvTrainReport {
  std::string method;
  /// e.g. "pgd-20 eps=0.1 step=0.025".
  std::string eval_attack;
  nlohmann::json config;
  std::vector<AdvEpochStats> epochs;
  std::string final_checksum;

  double mean_epoch_seconds() const;
  /// epoch,nat_acc,rob_acc; epochs without evaluation leave the accuracies empty.
  /// Seconds are in the JSON summary only.
  void write_csv(std::ostream& out) const;
  nlohmann::json to_json() const;
  /// Writes report.csv and report.json.
  void save(const std::filesystem::path& dir) const;
};

/// Natural SGD training with the same reporting as the adversarial trainers.
AdvTrainReport natural_training(Mlp& model, const Dataset& data, const TrainConfig& train_cfg,
                                const EvalOptions& eval = {});

/// Each minibatch is replaced by PGD examples crafted against the current
/// parameters before the SGD step. PGD for a batch is seeded from
/// (attack_cfg.seed, epoch, first index of the batch).
AdvTrainReport pgd_adversarial_training(Mlp& model, const Dataset& data, const AttackConfig& attack_cfg,
                                        const TrainConfig& train_cfg, const EvalOptions& eval = {});

/// Input gradient of <signal, logits(theta_prev_step)> under `current` where
/// signal = lambda * softmax(current(theta_prev_step)) - rho * stale_probs - (lambda - rho) * onehot(labels).
/// With stale_probs equal to current's own probabilities this is the CE input gradient.
Tensor jcd_input_grad(const Model& current, const Tensor& theta_prev_step, const Tensor& stale_probs,
                      std::span<const std::size_t> labels, double lambda = 2.0, double rho = 1.0);

/// As above with stale_probs = softmax(stale(theta_prev_chain_end)).
Tensor jcd_input_grad(const Model& current, const Model& stale, const Tensor& theta_prev_step,
                      const Tensor& theta_prev_chain_end, std::span<const std::size_t> labels, double lambda = 2.0,
                      double rho = 1.0);

enum class CatGradient { Jcd, CrossEntropy };

struct CatConfig {
  /// Total budget N; the outer loop runs N / (T * K) times.
  std::size_t epochs = 40;
  /// Inner chain steps per repeat.
  std::size_t k = 2;
  /// Repeats per outer epoch; each repeat is one pass over the data.
  std::size_t t = 2;
  double epsilon = 0.1;
  double alpha = 0.025;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 64;
  double rho = 1.0;
  double lambda = 2.0;
  CatGradient gradient = CatGradient::Jcd;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t outer_epochs() const { return epochs / (t * k); }
  nlohmann::json to_json() const;
  static CatConfig from_json(const nlohmann::json& j);
};

/// The Uniform(-eps, eps) draw that seeds example `index`'s chain and momentum in `epoch`.
Tensor cat_start_noise(std::uint64_t seed, std::size_t epoch, std::size_t index, std::size_t dim, double epsilon);

/// One inner chain step on one minibatch.
struct CatStep {
  std::size_t epoch = 0;
  std::size_t repeat = 0;
  std::size_t k = 0;
  std::span<const std::size_t> indices;
  const Tensor& origin;
  const Tensor& theta;
  const Tensor& momentum;
};

struct CatObserver {
  std::function<void(const CatStep&)> on_step;
  /// Called after every parameter update with the snapshot and the new parameters.
  std::function<void(const Mlp& stale, const Mlp& updated)> on_update;
};

AdvTrainReport cat_train(Mlp& model, const Dataset& data, const CatConfig& cfg, const EvalOptions& eval = {},
                         const CatObserver& observer = {});

}  // namespace hmcam

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "hmcam/attacks.hpp"
#include "hmcam/data.hpp"
#include "hmcam/models.hpp"
#include "json.hpp"

namespace hmcam {

/// Blob classification task plus a zoo of MLPs of different depth and width.
struct BlobBenchmarkSpec {
  std::size_t classes = 4;
  std::size_t dim = 16;
  std::size_t train_per_class = 300;
  std::size_t eval_per_class = 150;
  /// Gaussian modes per class, so class regions are not convex.
  std::size_t modes_per_class = 2;
  double sigma = 0.1;
  std::uint64_t seed = 2019;
  /// Hidden widths of each member; input and output widths are added.
  std::vector<std::vector<std::size_t>> hidden = {{32}, {64, 32}, {24, 24, 24}};
  TrainConfig train = [] {
    TrainConfig t;
    t.epochs = 30;
    t.batch_size = 32;
    t.seed = 1;
    return t;
  }();

  nlohmann::json to_json() const;
  static BlobBenchmarkSpec from_json(const nlohmann::json& j);
};

struct Benchmark {
  Dataset train;
  Dataset eval;
  std::vector<std::shared_ptr<Mlp>> models;

  std::vector<ModelPtr> model_ptrs() const { return {models.begin(), models.end()}; }
};

/// Pinned default: 4 classes in 16 dims, members "mlp-a", "mlp-b", "mlp-c".
Benchmark make_blob_benchmark(const BlobBenchmarkSpec& spec = {});

/// Attack settings used with the pinned benchmark: eps 0.05, 100 iterations,
/// step eps/10 for the sign methods and 0.02 for the accumulated-momentum ones,
/// hmcam with S=2, T=50.
AttackConfig benchmark_attack_config(AttackMethod method);

/// One (source, target, example) outcome.
struct ExampleOutcome {
  std::size_t source = 0;
  std::size_t target = 0;
  std::size_t example = 0;
  std::size_t label = 0;
  std::size_t clean_pred = 0;
  std::size_t adv_pred = 0;
  /// The target classifies the clean example correctly; only these enter the rate.
  bool counted = false;
  bool success = false;
};

/// Success rate of adversarial examples crafted on each source against each
/// target, over the examples the target classifies correctly.
struct TransferMatrix {
  std::vector<std::string> sources;
  std::vector<std::string> targets;
  /// rates[s][t]
  std::vector<std::vector<double>> rates;
  /// Number of counted examples per cell.
  std::vector<std::vector<std::size_t>> counted;
  std::string method;
  AttackConfig config;
  std::vector<ExampleOutcome> outcomes;

  double white_box_mean() const;
  /// Mean over cells with source != target.
  double black_box_mean() const;
  /// source,<target names...>
  void write_csv(std::ostream& out) const;
  void write_per_example_csv(std::ostream& out) const;
};

/// Adversarial inputs crafted by `method` on `model`; hmcam returns its last sample.
/// cfg.seed is used as is.
Tensor craft(AttackMethod method, const Model& model, const Dataset& data, const AttackConfig& cfg);

/// Source s attacks with seed derive_seed(cfg.seed, s). Sources run on up to `jobs` threads;
/// the result does not depend on `jobs`.
TransferMatrix transfer_matrix(const std::vector<ModelPtr>& models, AttackMethod method, const AttackConfig& cfg,
                               const Dataset& data, std::size_t jobs = 1);

struct HoldoutResult {
  std::string holdout;
  double ensemble_rate = 0.0;
  double holdout_rate = 0.0;
};

/// Crafts on the equal-weight ensemble of every model but models[holdout_index].
HoldoutResult ensemble_holdout(const std::vector<ModelPtr>& models, std::size_t holdout_index, AttackMethod method,
                               const AttackConfig& cfg, const Dataset& data);

enum class SweepParameter { Iterations, StepSize, Samples };
/// "iterations", "step_size" or "samples"; ConfigError otherwise.
SweepParameter parse_sweep_parameter(std::string_view name);
std::string_view sweep_parameter_name(SweepParameter p);

/// cfg with the swept parameter set to `value`. For hmcam the iteration budget
/// is kept equal to samples * inner_steps: sweeping iterations changes
/// inner_steps, sweeping samples changes iterations.
AttackConfig apply_sweep_value(AttackConfig cfg, AttackMethod method, SweepParameter p, double value);

struct SweepResult {
  SweepParameter parameter = SweepParameter::Iterations;
  std::vector<double> values;
  std::vector<TransferMatrix> matrices;

  /// parameter,value,source,target,rate
  void write_csv(std::ostream& out) const;
};

/// One transfer matrix per value; values must be strictly increasing.
SweepResult sweep(SweepParameter parameter, const std::vector<double>& values, AttackMethod method,
                  const AttackConfig& fixed, const std::vector<ModelPtr>& models, const Dataset& data,
                  std::size_t jobs = 1);

/// Number of rows no two of which lie within L-infinity 1e-6 of each other,
/// counted greedily in order.
std::size_t distinct_count(const std::vector<Tensor>& samples, double threshold = 1e-6);

struct RowDiversity {
  std::size_t distinct = 0;
  /// Distinct samples among those accepted and misclassified.
  std::size_t distinct_successful = 0;
  std::vector<std::size_t> class_histogram;
  double mean_pairwise_l2 = 0.0;
};

struct DiversityReport {
  std::vector<RowDiversity> rows;

  double mean_distinct() const;
  /// Fraction of rows with at least `k` distinct successful samples.
  double fraction_with_successful(std::size_t k) const;
};

/// Requires S >= 2. `labels` decides which samples count as successful.
DiversityReport diversity_report(const AdvChain& chain, const Model& model, std::span<const std::size_t> labels);

struct FewerSamplesRow {
  std::string arm;
  std::size_t s = 0;
  std::size_t natural_examples = 0;
  std::size_t training_examples = 0;
  double robust_accuracy = 0.0;
};

struct FewerSamplesConfig {
  /// Crafting attack; hmcam uses samples = S.
  AttackConfig attack;
  TrainConfig train;
  std::size_t eval_iterations = 20;
  std::uint64_t seed = 0;
};

/// For each S: the hmcam arm augments d natural examples with S chain samples
/// each, the baseline arm takes d*S natural examples with one PGD example
/// each. Sources are naturally trained on the arm's natural examples; a fresh
/// model with the same architecture is then trained on natural plus
/// adversarial data and scored by PGD robust accuracy on `eval`.
std::vector<FewerSamplesRow> fewer_samples_study(const Dataset& base, const Dataset& eval, std::size_t d_natural,
                                                 const std::vector<std::size_t>& s_values,
                                                 const MlpSpec& architecture, const FewerSamplesConfig& cfg);

void write_fewer_samples_csv(const std::vector<FewerSamplesRow>& rows, std::ostream& out);

}  // namespace hmcam

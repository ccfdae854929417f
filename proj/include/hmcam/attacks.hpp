#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hmcam/models.hpp"
#include "hmcam/tensor.hpp"
#include "json.hpp"

namespace hmcam {

enum class AttackMethod { Fgsm, IFgsm, Pgd, MiFgsm, MPgd, AiFgsm, Hmcam };

/// Canonical CLI names: fgsm, i-fgsm, pgd, mi-fgsm, m-pgd, ai-fgsm, hmcam.
std::string_view method_name(AttackMethod m);
/// Throws ConfigError listing the valid names.
AttackMethod parse_method(std::string_view name);
std::vector<std::string> method_names();

/// Parses "0.0078", "2/255" or "8e-3"; fractions are divided once in double.
double parse_real_or_fraction(std::string_view text);

struct AttackConfig {
  /// L-infinity radius in input units.
  double epsilon = 2.0 / 255.0;
  double alpha = 2.0 / 255.0 / 10.0;
  /// Total gradient iterations N.
  std::size_t iterations = 100;
  /// Outer transitions S (hmcam only).
  std::size_t samples = 2;
  /// Inner steps per transition T (hmcam only).
  std::size_t inner_steps = 50;
  double beta1 = 0.95;
  double beta2 = 0.999;
  double delta = 1e-8;
  double mu = 1.0;
  std::size_t restarts = 1;
  /// Start from a uniform point in the ball (pgd, m-pgd).
  bool random_start = true;
  std::uint64_t seed = 0;

  /// Checks ranges and, for hmcam, iterations == samples * inner_steps.
  void validate(AttackMethod method) const;
  nlohmann::json to_json() const;
  static AttackConfig from_json(const nlohmann::json& j);
};

/// Elementwise clamp of candidate into [origin - eps, origin + eps] and then into [0,1].
Tensor project_eps_ball(const Tensor& candidate, const Tensor& origin, double epsilon);

// Every attack accepts a single example [d] with one label or a batch
// [m x d] with m labels. Rows are attacked independently; any randomness for
// row r comes from streams derived from (cfg.seed, r), so a row's result does
// not depend on the other rows in the batch.

Tensor fgsm(const Model& model, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg);
Tensor i_fgsm(const Model& model, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg);

struct PgdResult {
  Tensor best;
  /// restart_losses[k][r]: final loss of restart k on row r.
  std::vector<std::vector<double>> restart_losses;
  /// Index of the restart kept for each row.
  std::vector<std::size_t> chosen;
};
/// i_fgsm from `restarts` starts, keeping the max-loss restart per row
/// (earliest on ties). Without random_start the starts are x itself.
PgdResult pgd_detailed(const Model& model, const Tensor& x, std::span<const std::size_t> labels,
                       const AttackConfig& cfg);
Tensor pgd(const Model& model, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg);

/// Momentum over L1-normalised gradients; rows with norm below 1e-12 add nothing.
Tensor mi_fgsm(const Model& model, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg);
/// mi_fgsm started from the same uniform draw pgd's first restart uses.
Tensor m_pgd(const Model& model, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg);

/// First moment v, second moment e and its running maximum e_hat for one
/// transition, flattened over all coordinates.
///
/// The undamped sums u_t = beta1 u_{t-1} + g_t (and likewise for g*g) are
/// stored, with v_t = (1 - beta1) u_t, so that bias correction at t = 1
/// returns g_1 bit for bit.
class AccumulatedMomentum {
 public:
  AccumulatedMomentum(std::size_t size, double beta1, double beta2, double delta);

  /// Absorbs gradient g_t and returns the per-coordinate signed step
  /// min(eps, alpha / (b1 (sqrt(e_hat / b2) + delta))) * sign(v_t).
  std::vector<double> step(std::span<const double> grad, double alpha, double epsilon);

  std::size_t t() const { return t_; }
  std::vector<double> v() const { return scaled(u_, 1.0 - beta1_); }
  std::vector<double> e() const { return scaled(w_, 1.0 - beta2_); }
  std::vector<double> e_hat() const { return scaled(w_hat_, 1.0 - beta2_); }
  /// v_t / (1 - beta1^t).
  std::vector<double> v_corrected() const;
  /// L1 norm of v over coordinates [begin, begin + count).
  double v_l1(std::size_t begin, std::size_t count) const;

 private:
  static std::vector<double> scaled(const std::vector<double>& sums, double factor);

  double beta1_;
  double beta2_;
  double delta_;
  std::size_t t_ = 0;
  double beta1_pow_ = 1.0;
  double beta2_pow_ = 1.0;
  std::vector<double> u_;
  std::vector<double> w_;
  std::vector<double> w_hat_;
};

/// One accumulated-momentum transition of cfg.iterations steps from x.
Tensor ai_fgsm(const Model& model, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg);

/// Result of an hmcam run over a batch.
struct AdvChain {
  Tensor origin;
  /// samples[s] has the shape of the input: state after transition s.
  std::vector<Tensor> samples;
  /// accept_flags[s][r], losses[s][r], predicted[s][r] for row r.
  std::vector<std::vector<bool>> accept_flags;
  std::vector<std::vector<double>> losses;
  std::vector<std::vector<std::size_t>> predicted;
  std::string source_model_id;
  AttackConfig config;

  std::size_t rows() const { return origin.rows(); }
  /// Row r of sample s as a rank-1 tensor.
  Tensor sample_row(std::size_t s, std::size_t r) const { return samples[s].row(r); }
  const Tensor& last() const { return samples.back(); }
};

/// S transitions of cfg.inner_steps accumulated-momentum steps each, with
/// v, e, e_hat reset per transition and a Metropolis-Hastings test favouring
/// higher H = J + |v|_1 between transitions. Rejected proposals repeat the
/// current state. The stored momentum of x is zero.
AdvChain hmcam_attack(const Model& model, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg);

/// Runs `method` and returns a single adversarial tensor (the last chain sample for hmcam).
Tensor run_attack(AttackMethod method, const Model& model, const Tensor& x, std::span<const std::size_t> labels,
                  const AttackConfig& cfg);

/// Fraction of rows of `adversarial` that `model` misclassifies.
double attack_success_rate(const Model& model, const Tensor& adversarial, std::span<const std::size_t> labels);

struct ChainSuccess {
  /// Misclassified fraction over all samples of all rows.
  double overall = 0.0;
  /// Misclassified fraction per sample index.
  std::vector<double> per_sample;
};
ChainSuccess attack_success_rate(const Model& model, const AdvChain& chain, std::span<const std::size_t> labels);

/// Writes config.json, sample_<s>.bin (tensor files) and chain.csv with
/// columns example_index, sample_index, accepted, loss, linf_distance, predicted_class.
void export_chain(const AdvChain& chain, const std::filesystem::path& dir);

}  // namespace hmcam

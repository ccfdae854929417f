#include "hmcam/attacks.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <cstdio>

#include "hmcam/errors.hpp"
#include "hmcam/hmc.hpp"
#include "hmcam/rng.hpp"
#include "hmcam/tensor_io.hpp"

namespace hmcam {

namespace {

constexpr std::uint64_t kStartStream = 0x5354415254ULL;  // "START"
constexpr std::uint64_t kAcceptStream = 0x4d48ULL;       // "MH"
constexpr double kMinGradNorm = 1e-12;

struct MethodEntry {
  AttackMethod method;
  std::string_view name;
};
constexpr MethodEntry kMethods[] = {
    {AttackMethod::Fgsm, "fgsm"},      {AttackMethod::IFgsm, "i-fgsm"},   {AttackMethod::Pgd, "pgd"},
    {AttackMethod::MiFgsm, "mi-fgsm"}, {AttackMethod::MPgd, "m-pgd"},     {AttackMethod::AiFgsm, "ai-fgsm"},
    {AttackMethod::Hmcam, "hmcam"},
};

void check_batch(const Model& model, const Tensor& x, std::span<const std::size_t> labels) {
  if (x.rank() != 1 && x.rank() != 2) throw DimensionError("attack: input must be [d] or [m x d]");
  if (x.cols() != model.input_dim()) throw DimensionError("attack: input dim does not match the model");
  if (labels.size() != x.rows()) throw DimensionError("attack: need one label per row");
  for (std::size_t y : labels) {
    if (y >= model.num_classes()) throw DimensionError("attack: label out of range");
  }
}

Tensor like_input(const Tensor& m, const Tensor& x) { return x.rank() == 1 ? m.reshaped(x.shape()) : m; }

std::vector<double> row_l1(std::span<const double> flat, std::size_t rows, std::size_t cols) {
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) out[r] += std::abs(flat[r * cols + j]);
  }
  return out;
}

/// x + U(-eps, eps) projected, with row r drawn from stream (seed, restart, r).
Tensor uniform_start(const Tensor& x, double epsilon, std::uint64_t seed, std::size_t restart) {
  const std::size_t m = x.rows(), d = x.cols();
  std::vector<double> c(x.size());
  for (std::size_t r = 0; r < m; ++r) {
    SeededRng rng(derive_seed(derive_seed(derive_seed(seed, kStartStream), restart), r));
    for (std::size_t j = 0; j < d; ++j) c[r * d + j] = x[r * d + j] + rng.uniform(-epsilon, epsilon);
  }
  return project_eps_ball(Tensor(x.shape(), std::move(c)), x, epsilon);
}

/// Signed-gradient iterations from `start`. With `mu` set, the sign is taken
/// of the momentum over L1-normalised gradients instead of the raw gradient.
Tensor sign_iterations(const Model& model, const Tensor& origin, Tensor theta, std::span<const std::size_t> labels,
                       std::size_t steps, double alpha, double epsilon, const double* mu) {
  const std::size_t m = origin.rows(), d = origin.cols();
  std::vector<double> accumulated(mu ? origin.size() : 0, 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor g = loss_and_input_grad(model, theta, labels).grad;
    if (mu) {
      const auto norms = row_l1(g.data(), m, d);
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
          const std::size_t i = r * d + j;
          const double normalised = norms[r] < kMinGradNorm ? 0.0 : g[i] / norms[r];
          accumulated[i] = *mu * accumulated[i] + normalised;
        }
      }
      g = Tensor(g.shape(), accumulated);
    }
    theta = project_eps_ball(add(theta, scale(sign(g), alpha)), origin, epsilon);
  }
  return theta;
}

/// One accumulated-momentum transition from `start`; `am` holds the final moments.
Tensor momentum_transition(const Model& model, const Tensor& origin, Tensor theta, std::span<const std::size_t> labels,
                           const AttackConfig& cfg, std::size_t steps, AccumulatedMomentum& am) {
  for (std::size_t t = 0; t < steps; ++t) {
    const Tensor g = loss_and_input_grad(model, theta, labels).grad;
    Tensor step(theta.shape(), am.step(g.data(), cfg.alpha, cfg.epsilon));
    theta = project_eps_ball(add(theta, step), origin, cfg.epsilon);
  }
  return theta;
}

}  // namespace

std::string_view method_name(AttackMethod m) {
  for (const auto& e : kMethods) {
    if (e.method == m) return e.name;
  }
  throw ContractError("method_name: unknown method");
}

std::vector<std::string> method_names() {
  std::vector<std::string> out;
  for (const auto& e : kMethods) out.emplace_back(e.name);
  return out;
}

AttackMethod parse_method(std::string_view name) {
  for (const auto& e : kMethods) {
    if (e.name == name) return e.method;
  }
  std::string valid;
  for (const auto& e : kMethods) valid += (valid.empty() ? "" : ", ") + std::string(e.name);
  throw ConfigError("unknown attack method '" + std::string(name) + "'; valid methods: " + valid);
}

double parse_real_or_fraction(std::string_view text) {
  auto parse = [&](std::string_view part) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (part.empty() || ec != std::errc() || ptr != part.data() + part.size() || !std::isfinite(v)) {
      throw ConfigError("not a number: '" + std::string(text) + "'");
    }
    return v;
  };
  const auto slash = text.find('/');
  if (slash == std::string_view::npos) return parse(text);
  const double den = parse(text.substr(slash + 1));
  if (den == 0.0) throw ConfigError("zero denominator in '" + std::string(text) + "'");
  return parse(text.substr(0, slash)) / den;
}

void AttackConfig::validate(AttackMethod method) const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon must lie in [0,1]");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be a non-negative number");
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (restarts < 1) throw ConfigError("restarts must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0,1)");
  if (!(delta > 0.0)) throw ConfigError("delta must be positive");
  if (!(mu >= 0.0) || !std::isfinite(mu)) throw ConfigError("mu must be a non-negative number");
  if (method == AttackMethod::Hmcam) {
    if (samples < 1 || inner_steps < 1) throw ConfigError("hmcam needs samples >= 1 and inner steps >= 1");
    if (iterations != samples * inner_steps) {
      throw ConfigError("hmcam needs iterations == samples * inner steps (" + std::to_string(iterations) +
                        " != " + std::to_string(samples) + " * " + std::to_string(inner_steps) + ")");
    }
  }
}

nlohmann::json AttackConfig::to_json() const {
  return {{"epsilon", epsilon}, {"alpha", alpha},   {"iterations", iterations}, {"samples", samples},
          {"inner_steps", inner_steps}, {"beta1", beta1}, {"beta2", beta2}, {"delta", delta},
          {"mu", mu},           {"restarts", restarts}, {"random_start", random_start}, {"seed", seed}};
}

AttackConfig AttackConfig::from_json(const nlohmann::json& j) {
  AttackConfig c;
  try {
    c.epsilon = j.value("epsilon", c.epsilon);
    c.alpha = j.value("alpha", c.alpha);
    c.iterations = j.value("iterations", c.iterations);
    c.samples = j.value("samples", c.samples);
    c.inner_steps = j.value("inner_steps", c.inner_steps);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.delta = j.value("delta", c.delta);
    c.mu = j.value("mu", c.mu);
    c.restarts = j.value("restarts", c.restarts);
    c.random_start = j.value("random_start", c.random_start);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("attack config: ") + e.what());
  }
  return c;
}

Tensor project_eps_ball(const Tensor& candidate, const Tensor& origin, double epsilon) {
  if (!candidate.same_shape(origin)) throw DimensionError("project_eps_ball: shape mismatch");
  std::vector<double> out(candidate.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double o = origin[i];
    double lo = std::max(o - epsilon, 0.0);
    double hi = std::min(o + epsilon, 1.0);
    // o - eps can round outward; pull the bounds in until the distance test holds as computed.
    while (o - lo > epsilon) lo = std::nextafter(lo, o);
    while (hi - o > epsilon) hi = std::nextafter(hi, o);
    out[i] = std::clamp(candidate[i], lo, hi);
  }
  return Tensor(candidate.shape(), std::move(out));
}

Tensor fgsm(const Model& model, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg) {
  AttackConfig one = cfg;
  one.iterations = 1;
  one.alpha = cfg.epsilon;
  return i_fgsm(model, x, labels, one);
}

Tensor i_fgsm(const Model& model, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg) {
  check_batch(model, x, labels);
  const Tensor origin = x.as_matrix();
  return like_input(sign_iterations(model, origin, origin, labels, cfg.iterations, cfg.alpha, cfg.epsilon, nullptr), x);
}

PgdResult pgd_detailed(const Model& model, const Tensor& x, std::span<const std::size_t> labels,
                       const AttackConfig& cfg) {
  check_batch(model, x, labels);
  if (cfg.restarts < 1) throw ConfigError("pgd: restarts must be >= 1");
  const Tensor origin = x.as_matrix();
  const std::size_t m = origin.rows(), d = origin.cols();
  PgdResult result;
  std::vector<double> best(origin.size());
  std::vector<double> best_loss(m);
  result.chosen.assign(m, 0);
  for (std::size_t k = 0; k < cfg.restarts; ++k) {
    const Tensor start = cfg.random_start ? uniform_start(origin, cfg.epsilon, cfg.seed, k) : origin;
    const Tensor adv =
        sign_iterations(model, origin, start, labels, cfg.iterations, cfg.alpha, cfg.epsilon, nullptr);
    auto losses = cross_entropy_rows(model.logits(adv), labels);
    for (std::size_t r = 0; r < m; ++r) {
      if (k == 0 || losses[r] > best_loss[r]) {
        best_loss[r] = losses[r];
        result.chosen[r] = k;
        std::copy_n(adv.data().begin() + static_cast<std::ptrdiff_t>(r * d), d,
                    best.begin() + static_cast<std::ptrdiff_t>(r * d));
      }
    }
    result.restart_losses.push_back(std::move(losses));
  }
  result.best = like_input(Tensor(origin.shape(), std::move(best)), x);
  return result;
}

Tensor pgd(const Model& model, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg) {
  return pgd_detailed(model, x, labels, cfg).best;
}

Tensor mi_fgsm(const Model& model, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg) {
  check_batch(model, x, labels);
  const Tensor origin = x.as_matrix();
  return like_input(sign_iterations(model, origin, origin, labels, cfg.iterations, cfg.alpha, cfg.epsilon, &cfg.mu),
                    x);
}

Tensor m_pgd(const Model& model, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg) {
  check_batch(model, x, labels);
  const Tensor origin = x.as_matrix();
  const Tensor start = uniform_start(origin, cfg.epsilon, cfg.seed, 0);
  return like_input(sign_iterations(model, origin, start, labels, cfg.iterations, cfg.alpha, cfg.epsilon, &cfg.mu), x);
}

AccumulatedMomentum::AccumulatedMomentum(std::size_t size, double beta1, double beta2, double delta)
    : beta1_(beta1), beta2_(beta2), delta_(delta), u_(size, 0.0), w_(size, 0.0), w_hat_(size, 0.0) {}

std::vector<double> AccumulatedMomentum::step(std::span<const double> grad, double alpha, double epsilon) {
  if (grad.size() != u_.size()) throw DimensionError("AccumulatedMomentum: gradient size mismatch");
  ++t_;
  beta1_pow_ *= beta1_;
  beta2_pow_ *= beta2_;
  const double b1 = 1.0 - beta1_pow_;
  const double b2 = 1.0 - beta2_pow_;
  std::vector<double> out(u_.size());
  for (std::size_t i = 0; i < u_.size(); ++i) {
    const double g = grad[i];
    u_[i] = beta1_ * u_[i] + g;
    w_[i] = beta2_ * w_[i] + g * g;
    w_hat_[i] = std::max(w_[i], w_hat_[i]);
    const double e_hat = (1.0 - beta2_) * w_hat_[i];
    const double rate = std::min(epsilon, alpha / (b1 * (std::sqrt(e_hat / b2) + delta_)));
    out[i] = u_[i] > 0.0 ? rate : (u_[i] < 0.0 ? -rate : 0.0);
  }
  return out;
}

std::vector<double> AccumulatedMomentum::scaled(const std::vector<double>& sums, double factor) {
  std::vector<double> out(sums.size());
  for (std::size_t i = 0; i < sums.size(); ++i) out[i] = factor * sums[i];
  return out;
}

std::vector<double> AccumulatedMomentum::v_corrected() const {
  return scaled(u_, (1.0 - beta1_) / (1.0 - beta1_pow_));
}

double AccumulatedMomentum::v_l1(std::size_t begin, std::size_t count) const {
  double total = 0.0;
  for (std::size_t i = begin; i < begin + count; ++i) total += std::abs((1.0 - beta1_) * u_[i]);
  return total;
}

Tensor ai_fgsm(const Model& model, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg) {
  check_batch(model, x, labels);
  const Tensor origin = x.as_matrix();
  AccumulatedMomentum am(origin.size(), cfg.beta1, cfg.beta2, cfg.delta);
  return like_input(momentum_transition(model, origin, origin, labels, cfg, cfg.iterations, am), x);
}

AdvChain hmcam_attack(const Model& model, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg) {
  check_batch(model, x, labels);
  cfg.validate(AttackMethod::Hmcam);
  const Tensor origin = x.as_matrix();
  const std::size_t m = origin.rows(), d = origin.cols();

  std::vector<SeededRng> accept_rngs;
  accept_rngs.reserve(m);
  for (std::size_t r = 0; r < m; ++r) accept_rngs.emplace_back(derive_seed(derive_seed(cfg.seed, kAcceptStream), r));

  AdvChain chain{x, {}, {}, {}, {}, model.name(), cfg};
  std::vector<double> current(origin.values());
  std::vector<double> current_loss = cross_entropy_rows(model.logits(origin), labels);
  std::vector<double> current_kinetic(m, 0.0);
  std::vector<std::size_t> current_pred = argmax_rows(model.logits(origin));

  for (std::size_t s = 0; s < cfg.samples; ++s) {
    AccumulatedMomentum am(origin.size(), cfg.beta1, cfg.beta2, cfg.delta);
    const Tensor proposal =
        momentum_transition(model, origin, Tensor(origin.shape(), current), labels, cfg, cfg.inner_steps, am);
    const Tensor z = model.logits(proposal);
    const auto loss = cross_entropy_rows(z, labels);
    const auto pred = argmax_rows(z);
    std::vector<double> kinetic(m);
    for (std::size_t r = 0; r < m; ++r) kinetic[r] = am.v_l1(r * d, d);

    std::vector<bool> flags(m);
    for (std::size_t r = 0; r < m; ++r) {
      flags[r] = hmc::mh_accept(accept_rngs[r], current_loss[r] + current_kinetic[r], loss[r] + kinetic[r],
                                hmc::AcceptConvention::PaperAttack);
      if (!flags[r]) continue;
      std::copy_n(proposal.data().begin() + static_cast<std::ptrdiff_t>(r * d), d,
                  current.begin() + static_cast<std::ptrdiff_t>(r * d));
      current_loss[r] = loss[r];
      current_kinetic[r] = kinetic[r];
      current_pred[r] = pred[r];
    }
    chain.samples.push_back(like_input(Tensor(origin.shape(), current), x));
    chain.accept_flags.push_back(std::move(flags));
    chain.losses.push_back(current_loss);
    chain.predicted.push_back(current_pred);
  }
  return chain;
}

Tensor run_attack(AttackMethod method, const Model& model, const Tensor& x, std::span<const std::size_t> labels,
                  const AttackConfig& cfg) {
  cfg.validate(method);
  switch (method) {
    case AttackMethod::Fgsm: return fgsm(model, x, labels, cfg);
    case AttackMethod::IFgsm: return i_fgsm(model, x, labels, cfg);
    case AttackMethod::Pgd: return pgd(model, x, labels, cfg);
    case AttackMethod::MiFgsm: return mi_fgsm(model, x, labels, cfg);
    case AttackMethod::MPgd: return m_pgd(model, x, labels, cfg);
    case AttackMethod::AiFgsm: return ai_fgsm(model, x, labels, cfg);
    case AttackMethod::Hmcam: return hmcam_attack(model, x, labels, cfg).last();
  }
  throw ContractError("run_attack: unknown method");
}

double attack_success_rate(const Model& model, const Tensor& adversarial, std::span<const std::size_t> labels) {
  if (labels.empty()) throw ContractError("attack_success_rate: empty evaluation set");
  if (labels.size() != adversarial.rows()) throw DimensionError("attack_success_rate: need one label per row");
  const auto pred = predict(model, adversarial);
  std::size_t wrong = 0;
  for (std::size_t r = 0; r < pred.size(); ++r) wrong += pred[r] != labels[r];
  return static_cast<double>(wrong) / static_cast<double>(pred.size());
}

ChainSuccess attack_success_rate(const Model& model, const AdvChain& chain, std::span<const std::size_t> labels) {
  ChainSuccess out;
  double total = 0.0;
  for (const Tensor& s : chain.samples) {
    out.per_sample.push_back(attack_success_rate(model, s, labels));
    total += out.per_sample.back();
  }
  out.overall = total / static_cast<double>(chain.samples.size());
  return out;
}

void export_chain(const AdvChain& chain, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    nlohmann::json j = {{"source_model_id", chain.source_model_id},
                        {"rows", chain.rows()},
                        {"samples", chain.samples.size()},
                        {"config", chain.config.to_json()}};
    std::ofstream out(dir / "config.json");
    out << j.dump(2) << '\n';
  }
  save_tensor(chain.origin, dir / "origin.bin");
  const Tensor origin = chain.origin.as_matrix();
  std::ofstream csv(dir / "chain.csv");
  if (!csv) throw DataError("cannot write " + (dir / "chain.csv").string());
  csv << "example_index,sample_index,accepted,loss,linf_distance,predicted_class\n";
  csv.precision(17);
  for (std::size_t s = 0; s < chain.samples.size(); ++s) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%03zu.bin", s);
    save_tensor(chain.samples[s], dir / name);
  }
  for (std::size_t r = 0; r < chain.rows(); ++r) {
    for (std::size_t s = 0; s < chain.samples.size(); ++s) {
      const double dist = linf_distance(chain.samples[s].as_matrix().row(r), origin.row(r));
      csv << r << ',' << s << ',' << (chain.accept_flags[s][r] ? 1 : 0) << ',' << chain.losses[s][r] << ',' << dist
          << ',' << chain.predicted[s][r] << '\n';
    }
  }
}

}  // namespace hmcam

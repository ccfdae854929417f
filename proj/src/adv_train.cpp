#include "hmcam/adv_train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hmcam/errors.hpp"
#include "hmcam/rng.hpp"

namespace hmcam {

namespace {

constexpr std::uint64_t kCatNoiseStream = 0x434154ULL;  // "CAT"
constexpr std::uint64_t kCatOrderStream = 0x4f52ULL;    // "OR"
constexpr std::size_t kEvalChunk = 500;

std::string eval_attack_name(double epsilon, std::size_t iterations) {
  std::ostringstream s;
  s << "pgd-" << iterations << " eps=" << epsilon << " step=" << epsilon / 4.0;
  return s.str();
}

void evaluate(AdvEpochStats& stats, const Mlp& model, const EvalOptions& eval, double epsilon, bool last) {
  if (!eval.data || (eval.final_only && !last)) return;
  Dataset subset = *eval.data;
  if (eval.max_examples > 0 && eval.max_examples < subset.size()) {
    std::vector<std::size_t> idx(eval.max_examples);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    subset = subset.subset(idx);
  }
  stats.nat_acc = accuracy(model, subset);
  stats.rob_acc = robust_accuracy(model, subset, epsilon, eval.pgd_iterations, eval.seed);
}

AdvEpochStats from_epoch(const EpochStats& e) {
  AdvEpochStats s;
  s.epoch = e.epoch;
  s.loss = e.loss;
  s.train_accuracy = e.accuracy;
  s.seconds = e.seconds;
  return s;
}

/// Shared driver for natural and PGD training on top of run_training.
AdvTrainReport run_reported(Mlp& model, const Dataset& data, const TrainConfig& train_cfg, const EvalOptions& eval,
                            double eval_epsilon, const BatchTransform& transform, std::size_t grads_per_example) {
  AdvTrainReport report;
  report.eval_attack = eval_attack_name(eval_epsilon, eval.pgd_iterations);
  run_training(model, data, train_cfg, transform, [&](const Mlp& m, const EpochStats& e) {
    AdvEpochStats stats = from_epoch(e);
    stats.input_gradients = grads_per_example * data.size();
    evaluate(stats, m, eval, eval_epsilon, e.epoch == train_cfg.epochs);
    report.epochs.push_back(stats);
  });
  report.final_checksum = model.checksum();
  return report;
}

std::string fmt_optional(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream s;
  s.precision(17);
  s << *v;
  return s.str();
}

}  // namespace

double robust_accuracy(const Model& model, const Dataset& data, double epsilon, std::size_t iterations,
                       std::uint64_t seed, std::size_t max_examples) {
  if (data.empty()) throw DataError("robust_accuracy: empty dataset");
  const std::size_t n = max_examples > 0 ? std::min(max_examples, data.size()) : data.size();
  AttackConfig cfg;
  cfg.epsilon = epsilon;
  cfg.alpha = epsilon / 4.0;
  cfg.iterations = iterations;
  cfg.restarts = 1;
  cfg.random_start = true;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(n, start + kEvalChunk); ++i) idx.push_back(i);
    const auto labels = data.batch_labels(idx);
    cfg.seed = derive_seed(seed, start);
    const auto pred = predict(model, pgd(model, data.batch(idx), labels, cfg));
    for (std::size_t k = 0; k < idx.size(); ++k) correct += pred[k] == labels[k];
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

double AdvTrainReport::mean_epoch_seconds() const {
  if (epochs.empty()) return 0.0;
  double total = 0.0;
  for (const auto& e : epochs) total += e.seconds;
  return total / static_cast<double>(epochs.size());
}

void AdvTrainReport::write_csv(std::ostream& out) const {
  out << "epoch,nat_acc,rob_acc\n";
  for (const auto& e : epochs) out << e.epoch << ',' << fmt_optional(e.nat_acc) << ',' << fmt_optional(e.rob_acc) << '\n';
}

nlohmann::json AdvTrainReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : epochs) {
    nlohmann::json r = {{"epoch", e.epoch},
                        {"loss", e.loss},
                        {"train_accuracy", e.train_accuracy},
                        {"seconds", e.seconds},
                        {"input_gradients", e.input_gradients}};
    r["nat_acc"] = e.nat_acc ? nlohmann::json(*e.nat_acc) : nlohmann::json();
    r["rob_acc"] = e.rob_acc ? nlohmann::json(*e.rob_acc) : nlohmann::json();
    rows.push_back(std::move(r));
  }
  return {{"method", method},
          {"eval_attack", eval_attack},
          {"config", config},
          {"epochs", rows},
          {"mean_epoch_seconds", mean_epoch_seconds()},
          {"final_checksum", final_checksum}};
}

void AdvTrainReport::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "report.csv");
  if (!csv) throw DataError("cannot write " + (dir / "report.csv").string());
  write_csv(csv);
  std::ofstream js(dir / "report.json");
  js << to_json().dump(2) << '\n';
}

AdvTrainReport natural_training(Mlp& model, const Dataset& data, const TrainConfig& train_cfg,
                                const EvalOptions& eval) {
  auto report = run_reported(model, data, train_cfg, eval, eval.epsilon.value_or(0.0), {}, 0);
  report.method = "natural";
  report.config = {{"train", train_cfg.to_json()}};
  return report;
}

AdvTrainReport pgd_adversarial_training(Mlp& model, const Dataset& data, const AttackConfig& attack_cfg,
                                        const TrainConfig& train_cfg, const EvalOptions& eval) {
  attack_cfg.validate(AttackMethod::Pgd);
  const BatchTransform transform = [&](const Mlp& m, const Tensor& batch, std::span<const std::size_t> labels,
                                       std::span<const std::size_t> indices, std::size_t epoch) {
    AttackConfig cfg = attack_cfg;
    cfg.seed = derive_seed(derive_seed(attack_cfg.seed, epoch), indices.front());
    return pgd(m, batch, labels, cfg);
  };
  auto report = run_reported(model, data, train_cfg, eval, eval.epsilon.value_or(attack_cfg.epsilon), transform,
                             attack_cfg.iterations * attack_cfg.restarts);
  report.method = "pgd-at";
  report.config = {{"train", train_cfg.to_json()}, {"attack", attack_cfg.to_json()}};
  return report;
}

Tensor jcd_input_grad(const Model& current, const Tensor& theta_prev_step, const Tensor& stale_probs,
                      std::span<const std::size_t> labels, double lambda, double rho) {
  const Tensor x = theta_prev_step.as_matrix();
  const Tensor stale = stale_probs.as_matrix();
  const std::size_t m = x.rows(), c = current.num_classes();
  if (x.cols() != current.input_dim()) throw DimensionError("jcd_input_grad: input dim mismatch");
  if (stale.rows() != m || stale.cols() != c) {
    throw DimensionError("jcd_input_grad: stale probabilities " + shape_to_string(stale_probs.shape()) +
                         " do not match the current model's output");
  }
  if (labels.size() != m) throw DimensionError("jcd_input_grad: label count mismatch");

  ag::Graph graph;
  ag::Var input = graph.leaf(x, true);
  ag::Var z = current.build_logits(graph, input);
  const Tensor f = softmax(z.value());
  std::vector<double> signal(m * c);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t i = r * c + j;
      signal[i] = lambda * f[i] - rho * stale[i] - (labels[r] == j ? lambda - rho : 0.0);
    }
  }
  ag::Var surrogate = ag::sum(ag::mul(z, graph.constant(Tensor({m, c}, std::move(signal)))));
  const ag::Gradients grads = graph.backward(surrogate);
  const Tensor& g = grads.of(input);
  return theta_prev_step.rank() == 1 ? g.reshaped(theta_prev_step.shape()) : g;
}

Tensor jcd_input_grad(const Model& current, const Model& stale, const Tensor& theta_prev_step,
                      const Tensor& theta_prev_chain_end, std::span<const std::size_t> labels, double lambda,
                      double rho) {
  if (!theta_prev_step.same_shape(theta_prev_chain_end)) {
    throw DimensionError("jcd_input_grad: chain positions differ in shape");
  }
  if (stale.num_classes() != current.num_classes()) throw DimensionError("jcd_input_grad: class count mismatch");
  return jcd_input_grad(current, theta_prev_step, softmax(stale.logits(theta_prev_chain_end)), labels, lambda, rho);
}

void CatConfig::validate() const {
  if (k < 1 || t < 1) throw ConfigError("cat: k and t must be >= 1");
  if (epochs < 1 || epochs % (t * k) != 0) {
    throw ConfigError("cat: epochs (" + std::to_string(epochs) + ") must be a positive multiple of t*k (" +
                      std::to_string(t * k) + ")");
  }
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("cat: epsilon must be in [0,1]");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("cat: alpha must be >= 0");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("cat: lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("cat: momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("cat: weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("cat: batch_size must be >= 1");
  if (!std::isfinite(rho) || !std::isfinite(lambda)) throw ConfigError("cat: rho and lambda must be finite");
}

nlohmann::json CatConfig::to_json() const {
  return {{"epochs", epochs},
          {"k", k},
          {"t", t},
          {"epsilon", epsilon},
          {"alpha", alpha},
          {"lr", lr},
          {"momentum", momentum},
          {"weight_decay", weight_decay},
          {"batch_size", batch_size},
          {"rho", rho},
          {"lambda", lambda},
          {"gradient", gradient == CatGradient::Jcd ? "jcd" : "cross-entropy"},
          {"seed", seed}};
}

CatConfig CatConfig::from_json(const nlohmann::json& j) {
  CatConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.k = j.value("k", c.k);
    c.t = j.value("t", c.t);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.alpha = j.value("alpha", c.alpha);
    c.lr = j.value("lr", c.lr);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.rho = j.value("rho", c.rho);
    c.lambda = j.value("lambda", c.lambda);
    const std::string g = j.value("gradient", std::string("jcd"));
    if (g == "jcd") {
      c.gradient = CatGradient::Jcd;
    } else if (g == "cross-entropy") {
      c.gradient = CatGradient::CrossEntropy;
    } else {
      throw ConfigError("cat: unknown gradient '" + g + "'");
    }
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("cat config: ") + e.what());
  }
  return c;
}

Tensor cat_start_noise(std::uint64_t seed, std::size_t epoch, std::size_t index, std::size_t dim, double epsilon) {
  SeededRng rng(derive_seed(derive_seed(derive_seed(seed, kCatNoiseStream), epoch), index));
  std::vector<double> v(dim);
  for (double& e : v) e = rng.uniform(-epsilon, epsilon);
  return Tensor::vector(std::move(v));
}

AdvTrainReport cat_train(Mlp& model, const Dataset& data, const CatConfig& cfg, const EvalOptions& eval,
                         const CatObserver& observer) {
  cfg.validate();
  if (data.empty()) throw DataError("cat: empty dataset");
  if (data.dim() != model.input_dim() || data.classes() != model.num_classes()) {
    throw DimensionError("cat: dataset does not match the model");
  }
  const std::size_t n = data.size(), d = data.dim();
  const double eps = cfg.epsilon;
  const double eval_eps = eval.epsilon.value_or(eps);
  SgdOptimizer opt(model, cfg.momentum, cfg.weight_decay);
  Mlp stale = model;

  AdvTrainReport report;
  report.method = "cat";
  report.config = {{"cat", cfg.to_json()}};
  report.eval_attack = eval_attack_name(eval_eps, eval.pgd_iterations);

  std::vector<double> theta(n * d), momentum(n * d);
  std::vector<std::size_t> idx;
  const std::size_t outer = cfg.outer_epochs();
  for (std::size_t epoch = 1; epoch <= outer; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < n; ++i) {
      const Tensor noise = cat_start_noise(cfg.seed, epoch, i, d, eps);
      const Tensor x = data.input(i);
      const Tensor t0 = project_eps_ball(add(x, noise), x, eps);
      std::copy(t0.data().begin(), t0.data().end(), theta.begin() + static_cast<std::ptrdiff_t>(i * d));
      std::copy(noise.data().begin(), noise.data().end(), momentum.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    double loss_sum = 0.0;
    std::size_t correct = 0, updates = 0, grads = 0;
    for (std::size_t rep = 1; rep <= cfg.t; ++rep) {
      const auto order = seeded_permutation(n, derive_seed(derive_seed(derive_seed(cfg.seed, kCatOrderStream), epoch), rep));
      for (std::size_t b = 0; b < n; b += cfg.batch_size) {
        idx.assign(order.begin() + static_cast<std::ptrdiff_t>(b),
                   order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + cfg.batch_size)));
        const std::size_t m = idx.size();
        const auto labels = data.batch_labels(idx);
        const Tensor origin = data.batch(idx);
        std::vector<double> th(m * d), v(m * d);
        for (std::size_t r = 0; r < m; ++r) {
          std::copy_n(theta.begin() + static_cast<std::ptrdiff_t>(idx[r] * d), d,
                      th.begin() + static_cast<std::ptrdiff_t>(r * d));
          std::copy_n(momentum.begin() + static_cast<std::ptrdiff_t>(idx[r] * d), d,
                      v.begin() + static_cast<std::ptrdiff_t>(r * d));
        }
        Tensor pos({m, d}, std::move(th));
        Tensor vel({m, d}, std::move(v));
        // The stale model sees the chain where the previous repeat left it.
        const Tensor stale_probs = cfg.gradient == CatGradient::Jcd ? softmax(stale.logits(pos)) : Tensor();
        for (std::size_t k = 1; k <= cfg.k; ++k) {
          const Tensor prev = pos;
          pos = project_eps_ball(add(pos, scale(sign(vel), eps)), origin, eps);
          const Tensor g = cfg.gradient == CatGradient::Jcd
                               ? jcd_input_grad(model, prev, stale_probs, labels, cfg.lambda, cfg.rho)
                               : loss_and_input_grad(model, prev, labels).grad;
          vel = clamp(add(vel, scale(g, cfg.alpha)), -eps, eps);
          grads += m;
          if (observer.on_step) observer.on_step(CatStep{epoch, rep, k, idx, origin, pos, vel});
        }
        for (std::size_t r = 0; r < m; ++r) {
          std::copy_n(pos.data().begin() + static_cast<std::ptrdiff_t>(r * d), d,
                      theta.begin() + static_cast<std::ptrdiff_t>(idx[r] * d));
          std::copy_n(vel.data().begin() + static_cast<std::ptrdiff_t>(r * d), d,
                      momentum.begin() + static_cast<std::ptrdiff_t>(idx[r] * d));
        }
        BatchGradient bg = parameter_gradients(model, pos, labels);
        loss_sum += bg.mean_loss * static_cast<double>(m);
        correct += bg.correct;
        updates += m;
        stale = model;
        opt.step(model, bg.grads, cfg.lr);
        if (observer.on_update) observer.on_update(stale, model);
      }
    }
    AdvEpochStats stats;
    stats.epoch = epoch;
    stats.loss = loss_sum / static_cast<double>(updates);
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(updates);
    stats.input_gradients = grads;
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    evaluate(stats, model, eval, eval_eps, epoch == outer);
    report.epochs.push_back(stats);
  }
  report.final_checksum = model.checksum();
  return report;
}

}  // namespace hmcam

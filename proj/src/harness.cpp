#include "hmcam/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <thread>

#include "hmcam/adv_train.hpp"
#include "hmcam/errors.hpp"
#include "hmcam/rng.hpp"

namespace hmcam {

namespace {

constexpr std::uint64_t kCenterStream = 1;
constexpr std::uint64_t kTrainStream = 2;
constexpr std::uint64_t kEvalStream = 3;
constexpr std::uint64_t kModelStream = 4;

void check_models(const std::vector<ModelPtr>& models, const Dataset& data, std::size_t minimum) {
  if (models.size() < minimum) throw ContractError("harness: need at least " + std::to_string(minimum) + " models");
  for (const auto& m : models) {
    if (!m) throw ContractError("harness: null model");
    if (m->input_dim() != data.dim() || m->num_classes() != data.classes()) {
      throw DimensionError("harness: model '" + m->name() + "' does not match dataset '" + data.name() + "'");
    }
  }
}

struct Cell {
  double rate = 0.0;
  std::size_t counted = 0;
};

/// Rate over the examples `target` gets right on clean input; appends outcomes when asked.
Cell filtered_rate(const Model& target, const Tensor& clean, const Tensor& adv, std::span<const std::size_t> labels,
                   std::vector<ExampleOutcome>* outcomes = nullptr, std::size_t source = 0, std::size_t target_id = 0) {
  const auto clean_pred = predict(target, clean);
  const auto adv_pred = predict(target, adv);
  Cell c;
  std::size_t success = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool counted = clean_pred[i] == labels[i];
    const bool won = counted && adv_pred[i] != labels[i];
    c.counted += counted;
    success += won;
    if (outcomes) outcomes->push_back({source, target_id, i, labels[i], clean_pred[i], adv_pred[i], counted, won});
  }
  c.rate = c.counted ? static_cast<double>(success) / static_cast<double>(c.counted) : 0.0;
  return c;
}

template <typename F>
void run_parallel(std::size_t count, std::size_t jobs, F&& body) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < jobs; ++j) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

double l2_distance(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

Dataset append_rows(const Dataset& base, const Tensor& rows, std::span<const std::size_t> labels) {
  std::vector<double> inputs(base.flat_inputs().begin(), base.flat_inputs().end());
  inputs.insert(inputs.end(), rows.data().begin(), rows.data().end());
  std::vector<std::size_t> all = base.labels();
  all.insert(all.end(), labels.begin(), labels.end());
  return Dataset(base.name() + "+adv", base.dim(), base.classes(), std::move(inputs), std::move(all));
}

}  // namespace

nlohmann::json BlobBenchmarkSpec::to_json() const {
  return {{"classes", classes},        {"dim", dim},   {"train_per_class", train_per_class},
          {"eval_per_class", eval_per_class}, {"modes_per_class", modes_per_class}, {"sigma", sigma}, {"seed", seed},
          {"hidden", hidden},          {"train", train.to_json()}};
}

BlobBenchmarkSpec BlobBenchmarkSpec::from_json(const nlohmann::json& j) {
  BlobBenchmarkSpec s;
  try {
    s.classes = j.value("classes", s.classes);
    s.dim = j.value("dim", s.dim);
    s.train_per_class = j.value("train_per_class", s.train_per_class);
    s.eval_per_class = j.value("eval_per_class", s.eval_per_class);
    s.modes_per_class = j.value("modes_per_class", s.modes_per_class);
    s.sigma = j.value("sigma", s.sigma);
    s.seed = j.value("seed", s.seed);
    s.hidden = j.value("hidden", s.hidden);
    if (j.contains("train")) s.train = TrainConfig::from_json(j.at("train"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("benchmark spec: ") + e.what());
  }
  return s;
}

namespace {

/// Blobs around classes * modes centers; center i belongs to class i % classes.
Dataset multimodal_blobs(const BlobBenchmarkSpec& spec, std::span<const Tensor> centers, std::size_t per_class,
                         std::uint64_t seed, std::string name) {
  const Dataset raw = make_blobs(per_class / spec.modes_per_class, centers, spec.sigma, seed);
  std::vector<std::size_t> labels = raw.labels();
  for (auto& l : labels) l %= spec.classes;
  return Dataset(std::move(name), raw.dim(), spec.classes,
                 std::vector<double>(raw.flat_inputs().begin(), raw.flat_inputs().end()), std::move(labels));
}

}  // namespace

Benchmark make_blob_benchmark(const BlobBenchmarkSpec& spec) {
  if (spec.hidden.empty()) throw ConfigError("benchmark: no models");
  if (spec.modes_per_class < 1) throw ConfigError("benchmark: modes_per_class must be >= 1");
  const auto centers = random_centers(spec.classes * spec.modes_per_class, spec.dim, 0.3, 0.7,
                                      derive_seed(spec.seed, kCenterStream));
  Benchmark b{multimodal_blobs(spec, centers, spec.train_per_class, derive_seed(spec.seed, kTrainStream), "blobs-train"),
              multimodal_blobs(spec, centers, spec.eval_per_class, derive_seed(spec.seed, kEvalStream), "blobs-eval"),
              {}};
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    std::vector<std::size_t> widths{spec.dim};
    widths.insert(widths.end(), spec.hidden[i].begin(), spec.hidden[i].end());
    widths.push_back(spec.classes);
    const std::string name = std::string("mlp-") + static_cast<char>('a' + i);
    auto m = std::make_shared<Mlp>(MlpSpec{widths, derive_seed(derive_seed(spec.seed, kModelStream), i)}, name);
    TrainConfig tc = spec.train;
    tc.seed = derive_seed(spec.train.seed, i);
    sgd_train(*m, b.train, tc);
    b.models.push_back(std::move(m));
  }
  return b;
}

AttackConfig benchmark_attack_config(AttackMethod method) {
  AttackConfig c;
  c.epsilon = 0.05;
  c.iterations = 100;
  c.samples = 2;
  c.inner_steps = 50;
  c.alpha = method == AttackMethod::Hmcam || method == AttackMethod::AiFgsm ? 0.02 : c.epsilon / 10.0;
  c.seed = 7;
  return c;
}

double TransferMatrix::white_box_mean() const {
  double s = 0.0;
  const std::size_t n = std::min(sources.size(), targets.size());
  for (std::size_t i = 0; i < n; ++i) s += rates[i][i];
  return n ? s / static_cast<double>(n) : 0.0;
}

double TransferMatrix::black_box_mean() const {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    for (std::size_t j = 0; j < targets.size(); ++j) {
      if (i == j) continue;
      s += rates[i][j];
      ++n;
    }
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

void TransferMatrix::write_csv(std::ostream& out) const {
  out << "source";
  for (const auto& t : targets) out << ',' << t;
  out << '\n';
  out.precision(17);
  for (std::size_t i = 0; i < sources.size(); ++i) {
    out << sources[i];
    for (double r : rates[i]) out << ',' << r;
    out << '\n';
  }
}

void TransferMatrix::write_per_example_csv(std::ostream& out) const {
  out << "source,target,example_index,label,clean_pred,adv_pred,counted,success\n";
  for (const auto& o : outcomes) {
    out << sources[o.source] << ',' << targets[o.target] << ',' << o.example << ',' << o.label << ',' << o.clean_pred
        << ',' << o.adv_pred << ',' << (o.counted ? 1 : 0) << ',' << (o.success ? 1 : 0) << '\n';
  }
}

Tensor craft(AttackMethod method, const Model& model, const Dataset& data, const AttackConfig& cfg) {
  return run_attack(method, model, data.inputs(), data.labels(), cfg);
}

TransferMatrix transfer_matrix(const std::vector<ModelPtr>& models, AttackMethod method, const AttackConfig& cfg,
                               const Dataset& data, std::size_t jobs) {
  check_models(models, data, 1);
  cfg.validate(method);
  const std::size_t n = models.size();
  const Tensor clean = data.inputs();
  std::vector<Tensor> adv(n);
  run_parallel(n, jobs, [&](std::size_t s) {
    AttackConfig c = cfg;
    c.seed = derive_seed(cfg.seed, s);
    adv[s] = craft(method, *models[s], data, c);
  });

  TransferMatrix tm;
  tm.method = std::string(method_name(method));
  tm.config = cfg;
  tm.rates.assign(n, std::vector<double>(n));
  tm.counted.assign(n, std::vector<std::size_t>(n));
  for (const auto& m : models) {
    tm.sources.push_back(m->name());
    tm.targets.push_back(m->name());
  }
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t t = 0; t < n; ++t) {
      const Cell c = filtered_rate(*models[t], clean, adv[s], data.labels(), &tm.outcomes, s, t);
      tm.rates[s][t] = c.rate;
      tm.counted[s][t] = c.counted;
    }
  }
  return tm;
}

HoldoutResult ensemble_holdout(const std::vector<ModelPtr>& models, std::size_t holdout_index, AttackMethod method,
                               const AttackConfig& cfg, const Dataset& data) {
  check_models(models, data, 2);
  if (holdout_index >= models.size()) throw ContractError("ensemble_holdout: holdout index out of range");
  cfg.validate(method);
  std::vector<ModelPtr> members;
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (i != holdout_index) members.push_back(models[i]);
  }
  const Ensemble ensemble(members, "ensemble-without-" + models[holdout_index]->name());
  const Tensor clean = data.inputs();
  const Tensor adv = craft(method, ensemble, data, cfg);
  return {models[holdout_index]->name(), filtered_rate(ensemble, clean, adv, data.labels()).rate,
          filtered_rate(*models[holdout_index], clean, adv, data.labels()).rate};
}

SweepParameter parse_sweep_parameter(std::string_view name) {
  if (name == "iterations") return SweepParameter::Iterations;
  if (name == "step_size") return SweepParameter::StepSize;
  if (name == "samples") return SweepParameter::Samples;
  throw ConfigError("unknown sweep parameter '" + std::string(name) + "' (valid: iterations, step_size, samples)");
}

std::string_view sweep_parameter_name(SweepParameter p) {
  switch (p) {
    case SweepParameter::Iterations:
      return "iterations";
    case SweepParameter::StepSize:
      return "step_size";
    case SweepParameter::Samples:
      return "samples";
  }
  return "?";
}

AttackConfig apply_sweep_value(AttackConfig cfg, AttackMethod method, SweepParameter p, double value) {
  const auto whole = [&] {
    if (!(value >= 1.0) || value != std::floor(value)) {
      throw ConfigError(std::string(sweep_parameter_name(p)) + " values must be positive integers");
    }
    return static_cast<std::size_t>(value);
  };
  switch (p) {
    case SweepParameter::Iterations:
      cfg.iterations = whole();
      if (method == AttackMethod::Hmcam) {
        if (cfg.iterations % cfg.samples != 0) {
          throw ConfigError("hmcam: iterations " + std::to_string(cfg.iterations) + " not divisible by samples " +
                            std::to_string(cfg.samples));
        }
        cfg.inner_steps = cfg.iterations / cfg.samples;
      }
      break;
    case SweepParameter::StepSize:
      cfg.alpha = value;
      break;
    case SweepParameter::Samples:
      if (method != AttackMethod::Hmcam) throw ConfigError("the samples sweep applies to hmcam only");
      cfg.samples = whole();
      cfg.iterations = cfg.samples * cfg.inner_steps;
      break;
  }
  cfg.validate(method);
  return cfg;
}

void SweepResult::write_csv(std::ostream& out) const {
  out << "parameter,value,source,target,rate\n";
  out.precision(17);
  for (std::size_t v = 0; v < values.size(); ++v) {
    const auto& m = matrices[v];
    for (std::size_t s = 0; s < m.sources.size(); ++s) {
      for (std::size_t t = 0; t < m.targets.size(); ++t) {
        out << sweep_parameter_name(parameter) << ',' << values[v] << ',' << m.sources[s] << ',' << m.targets[t]
            << ',' << m.rates[s][t] << '\n';
      }
    }
  }
}

SweepResult sweep(SweepParameter parameter, const std::vector<double>& values, AttackMethod method,
                  const AttackConfig& fixed, const std::vector<ModelPtr>& models, const Dataset& data,
                  std::size_t jobs) {
  if (values.empty()) throw ConfigError("sweep: no values");
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (!(values[i] > values[i - 1])) throw ConfigError("sweep: values must be strictly increasing");
  }
  SweepResult r;
  r.parameter = parameter;
  r.values = values;
  for (double v : values) {
    r.matrices.push_back(transfer_matrix(models, method, apply_sweep_value(fixed, method, parameter, v), data, jobs));
  }
  return r;
}

std::size_t distinct_count(const std::vector<Tensor>& samples, double threshold) {
  std::vector<const Tensor*> kept;
  for (const auto& s : samples) {
    const bool seen = std::any_of(kept.begin(), kept.end(),
                                  [&](const Tensor* k) { return linf_distance(*k, s) <= threshold; });
    if (!seen) kept.push_back(&s);
  }
  return kept.size();
}

double DiversityReport::mean_distinct() const {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += static_cast<double>(r.distinct);
  return s / static_cast<double>(rows.size());
}

double DiversityReport::fraction_with_successful(std::size_t k) const {
  if (rows.empty()) return 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) n += r.distinct_successful >= k;
  return static_cast<double>(n) / static_cast<double>(rows.size());
}

DiversityReport diversity_report(const AdvChain& chain, const Model& model, std::span<const std::size_t> labels) {
  const std::size_t S = chain.samples.size();
  if (S < 2) throw ContractError("diversity_report: need at least 2 samples");
  if (labels.size() != chain.rows()) throw DimensionError("diversity_report: label count mismatch");
  std::vector<std::vector<std::size_t>> pred;
  for (const auto& s : chain.samples) pred.push_back(predict(model, s));
  DiversityReport report;
  for (std::size_t r = 0; r < chain.rows(); ++r) {
    RowDiversity row;
    row.class_histogram.assign(model.num_classes(), 0);
    std::vector<Tensor> all, successful;
    for (std::size_t s = 0; s < S; ++s) {
      all.push_back(chain.sample_row(s, r));
      ++row.class_histogram[pred[s][r]];
      if (chain.accept_flags[s][r] && pred[s][r] != labels[r]) successful.push_back(all.back());
    }
    row.distinct = distinct_count(all);
    row.distinct_successful = distinct_count(successful);
    double total = 0.0;
    for (std::size_t a = 0; a < S; ++a) {
      for (std::size_t b = a + 1; b < S; ++b) total += l2_distance(all[a], all[b]);
    }
    row.mean_pairwise_l2 = total / static_cast<double>(S * (S - 1) / 2);
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::vector<FewerSamplesRow> fewer_samples_study(const Dataset& base, const Dataset& eval, std::size_t d_natural,
                                                 const std::vector<std::size_t>& s_values,
                                                 const MlpSpec& architecture, const FewerSamplesConfig& cfg) {
  if (d_natural < 1 || d_natural > base.size()) throw ContractError("fewer_samples_study: bad natural count");
  architecture.validate();
  const auto order = seeded_permutation(base.size(), cfg.seed);
  std::vector<FewerSamplesRow> rows;

  const auto train_and_score = [&](const Dataset& augmented, std::size_t s_index, std::size_t arm_id) {
    Mlp fresh(architecture);
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(derive_seed(cfg.train.seed, s_index), arm_id);
    sgd_train(fresh, augmented, tc);
    return robust_accuracy(fresh, eval, cfg.attack.epsilon, cfg.eval_iterations,
                           derive_seed(derive_seed(cfg.seed, s_index), arm_id));
  };
  const auto natural_subset = [&](std::size_t count) {
    if (count > base.size()) throw ContractError("fewer_samples_study: d*S exceeds the dataset");
    return base.subset(std::span(order).first(count), base.name() + "-subset");
  };
  const auto source_model = [&](const Dataset& d) {
    Mlp m(architecture, "source");
    sgd_train(m, d, cfg.train);
    return m;
  };

  for (std::size_t i = 0; i < s_values.size(); ++i) {
    const std::size_t S = s_values[i];
    if (S < 1) throw ConfigError("fewer_samples_study: S must be >= 1");
    {
      const Dataset nat = natural_subset(d_natural);
      const Mlp src = source_model(nat);
      AttackConfig ac = cfg.attack;
      ac.samples = S;
      ac.iterations = S * ac.inner_steps;
      ac.seed = derive_seed(cfg.seed, 2 * i);
      const AdvChain chain = hmcam_attack(src, nat.inputs(), nat.labels(), ac);
      Dataset augmented = nat;
      for (const auto& sample : chain.samples) augmented = append_rows(augmented, sample, nat.labels());
      rows.push_back({"hmcam", S, d_natural, augmented.size(), train_and_score(augmented, i, 0)});
    }
    {
      const Dataset nat = natural_subset(d_natural * S);
      const Mlp src = source_model(nat);
      AttackConfig ac = cfg.attack;
      ac.seed = derive_seed(cfg.seed, 2 * i + 1);
      const Dataset augmented = append_rows(nat, pgd(src, nat.inputs(), nat.labels(), ac), nat.labels());
      rows.push_back({"pgd", S, d_natural * S, augmented.size(), train_and_score(augmented, i, 1)});
    }
  }
  return rows;
}

void write_fewer_samples_csv(const std::vector<FewerSamplesRow>& rows, std::ostream& out) {
  out << "arm,s,natural_examples,training_examples,robust_accuracy\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.arm << ',' << r.s << ',' << r.natural_examples << ',' << r.training_examples << ','
        << r.robust_accuracy << '\n';
  }
}

}  // namespace hmcam

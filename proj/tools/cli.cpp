#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string_view>
#include <vector>

#include "CLI11.hpp"
#include "hmcam/adv_train.hpp"
#include "hmcam/attacks.hpp"
#include "hmcam/data.hpp"
#include "hmcam/errors.hpp"
#include "hmcam/harness.hpp"
#include "hmcam/hashing.hpp"
#include "hmcam/hmc.hpp"
#include "hmcam/models.hpp"
#include "hmcam/rng.hpp"

#ifndef HMCAM_VERSION
#define HMCAM_VERSION "0.0.0"
#endif

namespace hmcam::cli {
namespace fs = std::filesystem;
using nlohmann::json;

std::string tool_version() { return HMCAM_VERSION; }

json RunManifest::to_json() const {
  return {{"subcommand", subcommand}, {"config", config},  {"seed", seed},
          {"inputs", inputs},         {"output", output}, {"tool_version", tool_version}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  try {
    m.subcommand = j.at("subcommand").get<std::string>();
    m.config = j.at("config");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.inputs = j.value("inputs", json::object());
    m.output = j.value("output", std::string());
    m.tool_version = j.value("tool_version", std::string());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run manifest: ") + e.what());
  }
  return m;
}

RunManifest RunManifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw DataError("malformed manifest " + path.string() + ": " + e.what());
  }
}

namespace {

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

std::string full(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

std::vector<std::string> split_commas(std::string_view text) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto end = comma == std::string_view::npos ? text.size() : comma;
    parts.emplace_back(text.substr(start, end - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return parts;
}

std::size_t parse_count(std::string_view text, std::string_view what) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(std::string(what) + ": not a count: '" + std::string(text) + "'");
  }
  return v;
}

std::vector<std::size_t> parse_widths(std::string_view text) {
  std::vector<std::size_t> widths;
  if (text.empty()) return widths;
  for (const auto& p : split_commas(text)) {
    const auto w = parse_count(p, "--hidden");
    if (w == 0) throw ConfigError("--hidden: widths must be positive");
    widths.push_back(w);
  }
  return widths;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

// ---- data ---------------------------------------------------------------

struct DataSplit {
  Dataset train;
  Dataset eval;
};

DataSplit load_data(const json& spec) {
  const auto kind = spec.at("kind").get<std::string>();
  const auto seed = spec.at("seed").get<std::uint64_t>();
  const double fraction = spec.at("train_fraction").get<double>();
  Dataset all = [&] {
    if (kind == "blobs") {
      const auto classes = spec.at("classes").get<std::size_t>();
      const auto dim = spec.at("dim").get<std::size_t>();
      const auto centers = random_centers(classes, dim, 0.2, 0.8, derive_seed(seed, 1));
      return make_blobs(spec.at("per_class").get<std::size_t>(), centers, spec.at("sigma").get<double>(),
                        derive_seed(seed, 2));
    }
    if (kind == "mnist") {
      Dataset d = load_mnist_idx(spec.at("images").get<std::string>(), spec.at("labels").get<std::string>());
      const auto limit = spec.at("limit").get<std::size_t>();
      if (limit > 0 && limit < d.size()) {
        std::vector<std::size_t> idx(limit);
        std::iota(idx.begin(), idx.end(), 0);
        d = d.subset(idx, d.name());
      }
      return d;
    }
    throw ConfigError("unknown data kind '" + kind + "'");
  }();
  auto [train, eval] = split(all, fraction, derive_seed(seed, 3));
  return {std::move(train), std::move(eval)};
}

Dataset first_rows(const Dataset& data, std::size_t count) {
  if (count == 0 || count >= data.size()) return data;
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  return data.subset(idx, data.name());
}

struct DataFlags {
  std::string blobs;
  std::size_t dim = 2;
  double sigma = 0.1;
  std::string images;
  std::string labels;
  std::size_t limit = 0;
  double train_fraction = 0.8;

  void add_to(CLI::App& app) {
    app.add_option("--blobs", blobs, "Synthetic blobs as CLASSESxPER_CLASS, e.g. 2x500");
    app.add_option("--dim", dim, "Blob input dimension")->capture_default_str();
    app.add_option("--sigma", sigma, "Blob standard deviation")->capture_default_str();
    app.add_option("--images", images, "IDX image file");
    app.add_option("--labels", labels, "IDX label file");
    app.add_option("--limit", limit, "Use only the first N examples of the IDX files (0 = all)")
        ->capture_default_str();
    app.add_option("--train-fraction", train_fraction, "Share of the data used for training; the rest is evaluation")
        ->capture_default_str();
  }

  bool given() const { return !blobs.empty() || !images.empty() || !labels.empty(); }

  /// Resolved data spec, or nullopt when no data flag was given.
  std::optional<json> resolve(std::uint64_t seed) const {
    if (!given()) return std::nullopt;
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("--train-fraction must lie in (0,1)");
    if (!blobs.empty()) {
      if (!images.empty() || !labels.empty()) throw ConfigError("give either --blobs or --images/--labels");
      const auto x = blobs.find('x');
      if (x == std::string::npos) throw ConfigError("--blobs expects CLASSESxPER_CLASS, got '" + blobs + "'");
      const auto classes = parse_count(std::string_view(blobs).substr(0, x), "--blobs");
      const auto per_class = parse_count(std::string_view(blobs).substr(x + 1), "--blobs");
      if (classes < 2 || per_class < 1) throw ConfigError("--blobs needs at least 2 classes and 1 example each");
      if (dim < 1) throw ConfigError("--dim must be positive");
      if (!(sigma > 0.0)) throw ConfigError("--sigma must be positive");
      return json{{"kind", "blobs"}, {"classes", classes},          {"per_class", per_class}, {"dim", dim},
                  {"sigma", sigma},  {"train_fraction", train_fraction}, {"seed", seed}};
    }
    if (images.empty() || labels.empty()) throw ConfigError("--images and --labels go together");
    return json{{"kind", "mnist"},
                {"images", fs::absolute(images).lexically_normal().string()},
                {"labels", fs::absolute(labels).lexically_normal().string()},
                {"limit", limit},
                {"train_fraction", train_fraction},
                {"seed", seed}};
  }
};

void add_data_inputs(const json& spec, json& inputs) {
  if (spec.at("kind") != "mnist") return;
  for (const char* key : {"images", "labels"}) {
    const auto path = spec.at(key).get<std::string>();
    inputs[path] = git_blob_hash_file(path);
  }
}

// ---- attack flags -------------------------------------------------------

struct AttackFlags {
  std::string method = "hmcam";
  std::string eps = "2/255";
  std::string alpha;
  std::size_t iterations = 0;
  std::size_t samples = 2;
  std::size_t inner_steps = 50;
  double beta1 = 0.95;
  double beta2 = 0.999;
  double mu = 1.0;
  std::size_t restarts = 1;
  bool no_random_start = false;

  void add_to(CLI::App& app) {
    app.add_option("--method", method, "Attack: " + join_methods())->capture_default_str();
    app.add_option("--eps", eps, "L-infinity budget; decimals or fractions such as 2/255")->capture_default_str();
    app.add_option("--alpha", alpha, "Step size (default eps/10)");
    app.add_option("--iterations,-n", iterations, "Gradient iterations N (default S*T for hmcam, else 100)");
    app.add_option("--s", samples, "hmcam samples S")->capture_default_str();
    app.add_option("--t", inner_steps, "hmcam inner steps T")->capture_default_str();
    app.add_option("--beta1", beta1, "First-moment decay")->capture_default_str();
    app.add_option("--beta2", beta2, "Second-moment decay")->capture_default_str();
    app.add_option("--mu", mu, "Momentum decay of mi-fgsm and m-pgd")->capture_default_str();
    app.add_option("--restarts", restarts, "pgd restarts")->capture_default_str();
    app.add_flag("--no-random-start", no_random_start, "Start pgd and m-pgd at the clean input");
  }

  static std::string join_methods() {
    std::string s;
    for (const auto& m : method_names()) s += (s.empty() ? "" : "|") + m;
    return s;
  }

  AttackConfig resolve(AttackMethod m, std::uint64_t seed) const {
    AttackConfig c;
    c.epsilon = parse_real_or_fraction(eps);
    c.alpha = alpha.empty() ? c.epsilon / 10.0 : parse_real_or_fraction(alpha);
    c.samples = samples;
    c.inner_steps = inner_steps;
    c.iterations = iterations != 0 ? iterations : (m == AttackMethod::Hmcam ? samples * inner_steps : 100);
    c.beta1 = beta1;
    c.beta2 = beta2;
    c.mu = mu;
    c.restarts = restarts;
    c.random_start = !no_random_start;
    c.seed = seed;
    c.validate(m);
    return c;
  }
};

// ---- models -------------------------------------------------------------

std::vector<std::shared_ptr<Mlp>> load_models(const json& paths) {
  std::vector<std::shared_ptr<Mlp>> models;
  std::vector<std::string> names;
  for (const auto& p : paths) {
    const fs::path path = p.get<std::string>();
    auto ck = load_checkpoint(path);
    std::string name = path.stem().string();
    if (std::find(names.begin(), names.end(), name) != names.end()) name += "-" + std::to_string(names.size());
    names.push_back(name);
    ck.model.set_name(name);
    models.push_back(std::make_shared<Mlp>(std::move(ck.model)));
  }
  return models;
}

json checkpoint_data_spec(const std::string& path) {
  const auto ck = load_checkpoint(path);
  const auto& extra = ck.manifest.value("extra", json::object());
  if (!extra.contains("data")) throw ConfigError("no data flags given and " + path + " records no training data");
  return extra.at("data");
}

void check_compatible(const Model& m, const Dataset& d) {
  if (m.input_dim() != d.dim() || m.num_classes() != d.classes()) {
    throw ConfigError("model " + m.name() + " expects " + std::to_string(m.input_dim()) + " inputs and " +
                      std::to_string(m.num_classes()) + " classes; data has " + std::to_string(d.dim()) + " and " +
                      std::to_string(d.classes()));
  }
}

// ---- execution ----------------------------------------------------------

void exec_train(const json& c, const fs::path& out, std::ostream& log) {
  const auto data = load_data(c.at("data"));
  std::vector<std::size_t> widths{data.train.dim()};
  for (auto w : c.at("hidden").get<std::vector<std::size_t>>()) widths.push_back(w);
  widths.push_back(data.train.classes());
  Mlp model(MlpSpec{widths, c.at("model_seed").get<std::uint64_t>()}, "model");

  const auto& e = c.at("eval");
  EvalOptions eval;
  eval.data = &data.eval;
  eval.max_examples = e.at("max_examples").get<std::size_t>();
  eval.final_only = e.at("final_only").get<bool>();
  eval.epsilon = e.at("epsilon").get<double>();
  eval.pgd_iterations = e.at("iterations").get<std::size_t>();
  eval.seed = e.at("seed").get<std::uint64_t>();

  const auto mode = c.at("mode").get<std::string>();
  AdvTrainReport report;
  if (mode == "natural") {
    report = natural_training(model, data.train, TrainConfig::from_json(c.at("train")), eval);
  } else if (mode == "pgd-at") {
    report = pgd_adversarial_training(model, data.train, AttackConfig::from_json(c.at("attack")),
                                      TrainConfig::from_json(c.at("train")), eval);
  } else if (mode == "cat") {
    report = cat_train(model, data.train, CatConfig::from_json(c.at("cat")), eval);
  } else {
    throw ConfigError("unknown --mode '" + mode + "'; valid: natural, pgd-at, cat");
  }
  report.save(out);
  save_checkpoint(model, out / "model.ckpt", {{"data", c.at("data")}});

  for (const auto& ep : report.epochs) {
    log << "epoch " << ep.epoch << " loss " << fmt(ep.loss) << " train_acc " << fmt(ep.train_accuracy);
    if (ep.nat_acc) log << " nat_acc " << fmt(*ep.nat_acc);
    if (ep.rob_acc) log << " rob_acc " << fmt(*ep.rob_acc);
    log << " seconds " << fmt(ep.seconds) << '\n';
  }
  log << "checkpoint " << (out / "model.ckpt").string() << " checksum " << report.final_checksum << '\n';
}

AdvChain single_sample_chain(const Model& model, const Tensor& x, std::span<const std::size_t> labels,
                             const Tensor& adv, const AttackConfig& cfg) {
  AdvChain chain;
  chain.origin = x;
  chain.samples = {adv};
  chain.accept_flags = {std::vector<bool>(labels.size(), true)};
  chain.losses = {loss_and_input_grad(model, adv, labels).losses};
  chain.predicted = {predict(model, adv)};
  chain.config = cfg;
  return chain;
}

void exec_attack(const json& c, const fs::path& out, std::ostream& log) {
  const auto method = parse_method(c.at("method").get<std::string>());
  const auto cfg = AttackConfig::from_json(c.at("attack"));
  cfg.validate(method);
  const auto ck = load_checkpoint(c.at("model").get<std::string>());
  const Dataset data = first_rows(load_data(c.at("data")).eval, c.at("count").get<std::size_t>());
  check_compatible(ck.model, data);
  const Tensor x = data.inputs();
  const auto& labels = data.labels();

  AdvChain chain;
  if (method == AttackMethod::Hmcam) {
    chain = hmcam_attack(ck.model, x, labels, cfg);
  } else {
    chain = single_sample_chain(ck.model, x, labels, run_attack(method, ck.model, x, labels, cfg), cfg);
  }
  chain.source_model_id = ck.model.checksum();
  export_chain(chain, out);

  const auto success = attack_success_rate(ck.model, chain, labels);
  std::ostringstream csv;
  csv.precision(17);
  csv << "sample_index,success_rate\n";
  for (std::size_t s = 0; s < success.per_sample.size(); ++s) csv << s << ',' << success.per_sample[s] << '\n';
  write_text(out / "summary.csv", csv.str());
  log << method_name(method) << " on " << data.size() << " examples: " << chain.samples.size()
      << " samples, success rate " << fmt(success.overall) << '\n';
}

void exec_eval(const json& c, const fs::path& out, std::size_t jobs, std::ostream& log) {
  const auto method = parse_method(c.at("method").get<std::string>());
  const auto cfg = AttackConfig::from_json(c.at("attack"));
  cfg.validate(method);
  const auto models = load_models(c.at("models"));
  const Dataset data = first_rows(load_data(c.at("data")).eval, c.at("count").get<std::size_t>());
  for (const auto& m : models) check_compatible(*m, data);
  const std::vector<ModelPtr> ptrs(models.begin(), models.end());

  if (c.at("matrix").get<bool>()) {
    const auto tm = transfer_matrix(ptrs, method, cfg, data, jobs);
    std::ostringstream m, p;
    tm.write_csv(m);
    tm.write_per_example_csv(p);
    write_text(out / "matrix.csv", m.str());
    write_text(out / "per_example.csv", p.str());
    log << "white-box mean " << fmt(tm.white_box_mean());
    if (ptrs.size() > 1) log << ", black-box mean " << fmt(tm.black_box_mean());
    log << '\n';
  }
  if (c.at("holdout").get<bool>()) {
    if (ptrs.size() < 2) throw ConfigError("--holdout needs at least two models");
    std::ostringstream h;
    h.precision(17);
    h << "holdout,ensemble_rate,holdout_rate\n";
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
      const auto r = ensemble_holdout(ptrs, i, method, cfg, data);
      h << r.holdout << ',' << r.ensemble_rate << ',' << r.holdout_rate << '\n';
      log << "holdout " << r.holdout << ": ensemble " << fmt(r.ensemble_rate) << ", held out "
          << fmt(r.holdout_rate) << '\n';
    }
    write_text(out / "holdout.csv", h.str());
  }
}

void exec_sweep(const json& c, const fs::path& out, std::size_t jobs, std::ostream& log) {
  const auto method = parse_method(c.at("method").get<std::string>());
  const auto param = parse_sweep_parameter(c.at("parameter").get<std::string>());
  const auto values = c.at("values").get<std::vector<double>>();
  const auto cfg = AttackConfig::from_json(c.at("attack"));
  const auto models = load_models(c.at("models"));
  const Dataset data = first_rows(load_data(c.at("data")).eval, c.at("count").get<std::size_t>());
  for (const auto& m : models) check_compatible(*m, data);
  const std::vector<ModelPtr> ptrs(models.begin(), models.end());

  const auto result = sweep(param, values, method, cfg, ptrs, data, jobs);
  std::ostringstream s;
  result.write_csv(s);
  write_text(out / "sweep.csv", s.str());
  for (std::size_t v = 0; v < values.size(); ++v) {
    log << sweep_parameter_name(param) << '=' << full(values[v]) << " white-box "
        << fmt(result.matrices[v].white_box_mean());
    if (ptrs.size() > 1) log << " black-box " << fmt(result.matrices[v].black_box_mean());
    log << '\n';
  }
}

struct TargetInfo {
  hmc::HamiltonianSystem system;
  std::vector<double> init;
  std::vector<double> mean;
  std::vector<double> variance;
  bool gaussian = false;
  double step = 0.1;
  std::size_t leapfrog = 19;
};

TargetInfo make_target(const std::string& name) {
  if (name == "gaussian1d" || name == "gaussian2d") {
    const std::size_t d = name == "gaussian1d" ? 1 : 2;
    return {hmc::with_gaussian_kinetic([](const Tensor& q) { return 0.5 * dot(q, q); },
                                       [](const Tensor& q) { return q; }),
            std::vector<double>(d, 0.0), std::vector<double>(d, 0.0), std::vector<double>(d, 1.0), true, 0.1, 19};
  }
  if (name == "banana") {
    // U = ((1 - a)^2 + 100 (b - a^2)^2) / 10, so a ~ N(1, 5) and b | a ~ N(a^2, 1/20).
    auto u = [](const Tensor& q) {
      const double a = q[0], b = q[1];
      return ((1 - a) * (1 - a) + 100 * (b - a * a) * (b - a * a)) / 10.0;
    };
    auto grad = [](const Tensor& q) {
      const double a = q[0], b = q[1];
      return Tensor::vector({(-2 * (1 - a) - 400 * a * (b - a * a)) / 10.0, 200 * (b - a * a) / 10.0});
    };
    return {hmc::with_gaussian_kinetic(u, grad), {1.0, 1.0}, {1.0, 6.0}, {5.0, 70.05}, false, 0.05, 20};
  }
  throw ConfigError("unknown --target '" + name + "'; valid: gaussian1d, gaussian2d, banana");
}

double normal_ks(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = 0.5 * std::erfc(-xs[i] / std::sqrt(2.0));
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

void exec_sample_hmc(const json& c, const fs::path& out, std::ostream& log) {
  const auto target = make_target(c.at("target").get<std::string>());
  hmc::ChainConfig cfg;
  cfg.step = c.at("step").get<double>();
  cfg.leapfrog_steps = c.at("leapfrog_steps").get<std::size_t>();
  cfg.samples = c.at("samples").get<std::size_t>();
  cfg.burn_in = c.at("burn_in").get<std::size_t>();
  cfg.seed = c.at("seed").get<std::uint64_t>();
  if (cfg.samples < 2) throw ConfigError("--samples must be at least 2");
  if (!(cfg.step > 0.0)) throw ConfigError("--step must be positive");
  const auto trace = hmc::run_chain(target.system, Tensor::vector(target.init), cfg);

  std::ostringstream samples;
  trace.write_csv(samples);
  write_text(out / "samples.csv", samples.str());

  std::ostringstream moments;
  moments.precision(17);
  moments << "coordinate,mean,variance,mean_error,variance_error,ks\n";
  const double n = static_cast<double>(trace.positions.size());
  log << c.at("target").get<std::string>() << ": " << trace.positions.size() << " samples, acceptance rate "
      << fmt(trace.acceptance_rate()) << '\n';
  for (std::size_t k = 0; k < target.init.size(); ++k) {
    std::vector<double> xs;
    xs.reserve(trace.positions.size());
    for (const auto& p : trace.positions) xs.push_back(p[k]);
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= n;
    const double mean_err = std::abs(mean - target.mean[k]);
    const double var_err = std::abs(var - target.variance[k]);
    moments << k << ',' << mean << ',' << var << ',' << mean_err << ',' << var_err << ',';
    log << "  x" << k << ": mean " << fmt(mean) << " (error " << fmt(mean_err) << "), variance " << fmt(var)
        << " (error " << fmt(var_err) << ")";
    if (target.gaussian) {
      const double ks = normal_ks(xs);
      moments << ks;
      log << ", KS " << fmt(ks);
    }
    moments << '\n';
    log << '\n';
  }
  write_text(out / "moments.csv", moments.str());
}

// ---- command line -------------------------------------------------------

std::uint64_t master_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  const char* env = std::getenv("ADVCHAIN_SEED");
  if (env == nullptr || *env == '\0') return 0;
  const std::string_view text(env);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("ADVCHAIN_SEED is not an unsigned integer: '" + std::string(text) + "'");
  }
  return v;
}

std::string absolute_path(const std::string& p) { return fs::absolute(p).lexically_normal().string(); }

}  // namespace

void execute(RunManifest manifest, const fs::path& out, std::size_t jobs, std::ostream& log) {
  for (const auto& [path, hash] : manifest.inputs.items()) {
    if (!fs::exists(path)) throw DataError("missing input " + path);
    if (git_blob_hash_file(path) != hash.get<std::string>()) {
      throw DataError("input " + path + " no longer matches the hash recorded in the manifest");
    }
  }
  if (jobs < 1) throw ConfigError("--jobs must be at least 1");
  fs::create_directories(out);
  manifest.output = fs::absolute(out).lexically_normal().string();
  manifest.tool_version = tool_version();
  const auto& c = manifest.config;
  try {
    if (manifest.subcommand == "train") {
      exec_train(c, out, log);
    } else if (manifest.subcommand == "attack") {
      exec_attack(c, out, log);
    } else if (manifest.subcommand == "eval") {
      exec_eval(c, out, jobs, log);
    } else if (manifest.subcommand == "sweep") {
      exec_sweep(c, out, jobs, log);
    } else if (manifest.subcommand == "sample-hmc") {
      exec_sample_hmc(c, out, log);
    } else {
      throw ConfigError("manifest names unknown subcommand '" + manifest.subcommand + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("incomplete configuration: ") + e.what());
  }
  write_text(out / "run_manifest.json", manifest.to_json().dump(2) + "\n");
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarial example sampling and contrastive adversarial training", "hmcam"};
  app.set_version_flag("--version", tool_version());
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  std::string out_dir = "results";
  std::size_t jobs = 1;
  auto common = [&](CLI::App* sub, bool with_seed = true) {
    if (with_seed) sub->add_option("--seed", seed, "Master seed (fallback: ADVCHAIN_SEED, then 0)");
    sub->add_option("--out", out_dir, "Output directory")->capture_default_str();
    sub->add_option("--jobs", jobs, "Worker threads for harness jobs")->capture_default_str();
  };

  // train
  auto* train = app.add_subcommand("train", "Train a classifier naturally, with PGD adversarial training or with CAT");
  DataFlags train_data;
  std::string mode = "natural";
  std::string hidden = "64";
  std::size_t epochs = 10, k = 2, t = 2, batch = 64, pgd_iters = 10, eval_iters = 20, eval_max = 0;
  double lr = 0.05, momentum = 0.9, weight_decay = 5e-4, rho = 1.0, lambda = 2.0;
  std::string train_eps = "0.1", train_alpha, eval_eps, gradient = "jcd";
  bool final_only = false;
  train->add_option("--mode", mode, "natural|pgd-at|cat")->capture_default_str();
  train_data.add_to(*train);
  train->add_option("--hidden", hidden, "Hidden widths, comma separated")->capture_default_str();
  train->add_option("--epochs", epochs, "Epochs; for cat the total N, a multiple of K*T")->capture_default_str();
  train->add_option("--lr", lr, "Learning rate")->capture_default_str();
  train->add_option("--batch", batch, "Minibatch size")->capture_default_str();
  train->add_option("--momentum", momentum, "SGD momentum")->capture_default_str();
  train->add_option("--weight-decay", weight_decay, "L2 weight decay")->capture_default_str();
  train->add_option("--eps", train_eps, "Training budget for pgd-at and cat")->capture_default_str();
  train->add_option("--alpha", train_alpha, "Step size (default eps/4 for pgd-at, 0.025 for cat)");
  train->add_option("--iterations", pgd_iters, "PGD iterations per batch in pgd-at")->capture_default_str();
  train->add_option("--k", k, "CAT inner steps K")->capture_default_str();
  train->add_option("--t", t, "CAT repeats T")->capture_default_str();
  train->add_option("--rho", rho, "CAT weight of the stale model")->capture_default_str();
  train->add_option("--lambda", lambda, "CAT weight of the current model")->capture_default_str();
  train->add_option("--gradient", gradient, "CAT chain signal: jcd|cross-entropy")->capture_default_str();
  train->add_option("--eval-eps", eval_eps, "Robust evaluation budget (default the training eps)");
  train->add_option("--eval-iterations", eval_iters, "PGD iterations of the robust evaluation")->capture_default_str();
  train->add_option("--eval-max", eval_max, "Evaluate on at most N held-out examples (0 = all)")
      ->capture_default_str();
  train->add_flag("--final-only", final_only, "Evaluate after the last epoch only");
  common(train);

  // attack
  auto* attack = app.add_subcommand("attack", "Craft adversarial examples against a checkpoint");
  DataFlags attack_data;
  AttackFlags attack_flags;
  std::string model_path;
  std::size_t count = 100;
  attack->add_option("--model", model_path, "Checkpoint to attack")->required();
  attack_flags.add_to(*attack);
  attack_data.add_to(*attack);
  attack->add_option("--count", count, "Attack the first N held-out examples (0 = all)")->capture_default_str();
  common(attack);

  // eval
  auto* eval = app.add_subcommand("eval", "Transfer matrix and ensemble hold-out evaluation");
  DataFlags eval_data;
  AttackFlags eval_flags;
  eval_flags.method = "pgd";
  std::vector<std::string> model_paths;
  bool matrix = false, holdout = false;
  std::size_t eval_count = 200;
  eval->add_option("--models", model_paths, "Checkpoints; each is a source and a target")->required();
  eval->add_flag("--matrix", matrix, "Write matrix.csv and per_example.csv (default when --holdout is absent)");
  eval->add_flag("--holdout", holdout, "Attack the ensemble of all but one model and write holdout.csv");
  eval_flags.add_to(*eval);
  eval_data.add_to(*eval);
  eval->add_option("--count", eval_count, "Use the first N held-out examples (0 = all)")->capture_default_str();
  common(eval);

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Transfer matrices over one attack parameter");
  DataFlags sweep_data;
  AttackFlags sweep_flags;
  sweep_flags.method = "pgd";
  std::vector<std::string> sweep_models;
  std::string param, values_text;
  std::size_t sweep_count = 200;
  sweep_cmd->add_option("--param", param, "iterations|step_size|samples")->required();
  sweep_cmd->add_option("--values", values_text, "Comma separated increasing values")->required();
  sweep_cmd->add_option("--models", sweep_models, "Checkpoints")->required();
  sweep_flags.add_to(*sweep_cmd);
  sweep_data.add_to(*sweep_cmd);
  sweep_cmd->add_option("--count", sweep_count, "Use the first N held-out examples (0 = all)")
      ->capture_default_str();
  common(sweep_cmd);

  // sample-hmc
  auto* sample = app.add_subcommand("sample-hmc", "Run the HMC sampler on an analytic target and report moments");
  std::string target = "gaussian2d";
  std::size_t n_samples = 20000, burn_in = 1000;
  std::optional<double> step;
  std::optional<std::size_t> leapfrog;
  sample->add_option("--target", target, "gaussian1d|gaussian2d|banana")->capture_default_str();
  sample->add_option("--samples", n_samples, "Recorded proposals")->capture_default_str();
  sample->add_option("--burn-in", burn_in, "Discarded proposals")->capture_default_str();
  sample->add_option("--step", step, "Leapfrog step (default 0.1, banana 0.05)");
  sample->add_option("--leapfrog", leapfrog, "Leapfrog steps per proposal (default 19, banana 20)");
  common(sample);

  // replay
  auto* replay = app.add_subcommand("replay", "Re-run a recorded run_manifest.json");
  std::string manifest_path;
  replay->add_option("manifest", manifest_path, "run_manifest.json of an earlier run")->required();
  common(replay, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    RunManifest m;
    std::vector<std::string> checkpoints;
    fs::path target_dir = out_dir;
    if (replay->parsed()) {
      m = RunManifest::load(manifest_path);
      if (replay->count("--out") == 0 && !m.output.empty()) target_dir = m.output;
    } else if (train->parsed()) {
      m.subcommand = "train";
      m.seed = master_seed(seed);
      auto data = train_data.resolve(derive_seed(m.seed, 5));
      if (!data) throw ConfigError("train needs --blobs or --images/--labels");
      add_data_inputs(*data, m.inputs);
      const double eps = parse_real_or_fraction(train_eps);
      json c = {{"mode", mode},
                {"data", *data},
                {"hidden", parse_widths(hidden)},
                {"model_seed", derive_seed(m.seed, 1)}};
      if (mode == "natural" || mode == "pgd-at") {
        TrainConfig tc;
        tc.epochs = epochs;
        tc.lr = lr;
        tc.batch_size = batch;
        tc.momentum = momentum;
        tc.weight_decay = weight_decay;
        tc.seed = derive_seed(m.seed, 2);
        tc.validate();
        c["train"] = tc.to_json();
        if (mode == "pgd-at") {
          AttackConfig ac;
          ac.epsilon = eps;
          ac.alpha = train_alpha.empty() ? eps / 4.0 : parse_real_or_fraction(train_alpha);
          ac.iterations = pgd_iters;
          ac.seed = derive_seed(m.seed, 3);
          ac.validate(AttackMethod::Pgd);
          c["attack"] = ac.to_json();
        }
      } else if (mode == "cat") {
        CatConfig cc;
        cc.epochs = epochs;
        cc.k = k;
        cc.t = t;
        cc.epsilon = eps;
        if (!train_alpha.empty()) cc.alpha = parse_real_or_fraction(train_alpha);
        cc.lr = lr;
        cc.momentum = momentum;
        cc.weight_decay = weight_decay;
        cc.batch_size = batch;
        cc.rho = rho;
        cc.lambda = lambda;
        if (gradient == "jcd") {
          cc.gradient = CatGradient::Jcd;
        } else if (gradient == "cross-entropy") {
          cc.gradient = CatGradient::CrossEntropy;
        } else {
          throw ConfigError("unknown --gradient '" + gradient + "'; valid: jcd, cross-entropy");
        }
        cc.seed = derive_seed(m.seed, 2);
        cc.validate();
        c["cat"] = cc.to_json();
      } else {
        throw ConfigError("unknown --mode '" + mode + "'; valid: natural, pgd-at, cat");
      }
      c["eval"] = {{"epsilon", eval_eps.empty() ? (mode == "natural" ? 0.1 : eps) : parse_real_or_fraction(eval_eps)},
                   {"iterations", eval_iters},
                   {"max_examples", eval_max},
                   {"final_only", final_only},
                   {"seed", derive_seed(m.seed, 4)}};
      m.config = std::move(c);
    } else if (attack->parsed()) {
      m.subcommand = "attack";
      m.seed = master_seed(seed);
      const auto method = parse_method(attack_flags.method);
      const auto cfg = attack_flags.resolve(method, m.seed);
      if (cfg.epsilon == 0.0) err << "warning: --eps 0 leaves every input unchanged\n";
      const auto path = absolute_path(model_path);
      checkpoints.push_back(path);
      auto data = attack_data.resolve(derive_seed(m.seed, 5));
      if (!data) data = checkpoint_data_spec(path);
      add_data_inputs(*data, m.inputs);
      m.config = {{"method", std::string(method_name(method))},
                  {"model", path},
                  {"data", *data},
                  {"count", count},
                  {"attack", cfg.to_json()}};
    } else if (eval->parsed() || sweep_cmd->parsed()) {
      const bool is_eval = eval->parsed();
      m.subcommand = is_eval ? "eval" : "sweep";
      m.seed = master_seed(seed);
      auto& flags = is_eval ? eval_flags : sweep_flags;
      const auto method = parse_method(flags.method);
      const auto cfg = flags.resolve(method, m.seed);
      if (cfg.epsilon == 0.0) err << "warning: --eps 0 leaves every input unchanged\n";
      json paths = json::array();
      for (const auto& p : is_eval ? model_paths : sweep_models) {
        checkpoints.push_back(absolute_path(p));
        paths.push_back(checkpoints.back());
      }
      auto data = (is_eval ? eval_data : sweep_data).resolve(derive_seed(m.seed, 5));
      if (!data) data = checkpoint_data_spec(checkpoints.front());
      add_data_inputs(*data, m.inputs);
      m.config = {{"method", std::string(method_name(method))},
                  {"models", paths},
                  {"data", *data},
                  {"count", is_eval ? eval_count : sweep_count},
                  {"attack", cfg.to_json()}};
      if (is_eval) {
        m.config["matrix"] = matrix || !holdout;
        m.config["holdout"] = holdout;
      } else {
        const auto p = parse_sweep_parameter(param);
        std::vector<double> values;
        for (const auto& v : split_commas(values_text)) values.push_back(parse_real_or_fraction(v));
        if (values.empty()) throw ConfigError("--values is empty");
        for (double v : values) apply_sweep_value(cfg, method, p, v).validate(method);
        m.config["parameter"] = std::string(sweep_parameter_name(p));
        m.config["values"] = values;
      }
    } else if (sample->parsed()) {
      m.subcommand = "sample-hmc";
      m.seed = master_seed(seed);
      const auto info = make_target(target);
      m.config = {{"target", target},
                  {"samples", n_samples},
                  {"burn_in", burn_in},
                  {"step", step.value_or(info.step)},
                  {"leapfrog_steps", leapfrog.value_or(info.leapfrog)},
                  {"seed", m.seed}};
    }
    for (const auto& p : checkpoints) m.inputs[p] = git_blob_hash_file(p);
    execute(std::move(m), target_dir, jobs, out);
    out << "wrote " << fs::absolute(target_dir).lexically_normal().string() << '\n';
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ContractError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DimensionError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace hmcam::cli

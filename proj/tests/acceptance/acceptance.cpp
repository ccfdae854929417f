// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance --cli <path to hmcam> --source <repository root> [--only N]...

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hmcam/adv_train.hpp"
#include "hmcam/attacks.hpp"
#include "hmcam/data.hpp"
#include "hmcam/harness.hpp"
#include "hmcam/hmc.hpp"
#include "hmcam/models.hpp"
#include "hmcam/rng.hpp"

using namespace hmcam;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Options {
  fs::path cli;
  fs::path source = ".";
  std::set<int> only;
};

std::string num(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Cross-entropy of one example straight from the logits, without the autograd graph.
double ce_from_logits(const Model& m, const Tensor& x, std::size_t label) {
  const Tensor z = m.logits(x);
  double mx = z[0];
  for (std::size_t k = 1; k < z.size(); ++k) mx = std::max(mx, z[k]);
  double s = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) s += std::exp(z[k] - mx);
  return mx + std::log(s) - z[label];
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-5}); }

// ---- 1 ------------------------------------------------------------------

Verdict gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  const double h = 1e-5;
  double worst_input = 0.0, worst_param = 0.0;
  for (std::size_t pair = 0; pair < 100; ++pair) {
    SeededRng rng(derive_seed(101, pair));
    std::vector<std::size_t> widths{2 + rng.below(7)};
    const std::size_t depth = 1 + rng.below(3);
    for (std::size_t l = 0; l < depth; ++l) widths.push_back(2 + rng.below(9));
    widths.push_back(2 + rng.below(4));
    Mlp model(MlpSpec{widths, derive_seed(202, pair)});
    std::vector<double> xv(widths.front());
    for (double& v : xv) v = rng.uniform(0.05, 0.95);
    const std::size_t label = rng.below(widths.back());
    const Tensor x = Tensor::vector(xv);

    const auto analytic = loss_and_input_grad(model, x, std::span(&label, 1));
    for (std::size_t i = 0; i < xv.size(); ++i) {
      auto up = xv, down = xv;
      up[i] += h;
      down[i] -= h;
      const double fd =
          (ce_from_logits(model, Tensor::vector(up), label) - ce_from_logits(model, Tensor::vector(down), label)) /
          (2 * h);
      worst_input = std::max(worst_input, rel_err(analytic.grad[i], fd));
    }

    const Tensor xm = Tensor::matrix(1, xv.size(), xv);
    const auto grads = parameter_gradients(model, xm, std::span(&label, 1)).grads;
    std::vector<Tensor> base;
    for (const auto& p : model.params()) base.push_back(p.value);
    for (std::size_t p = 0; p < base.size(); ++p) {
      for (std::size_t i = 0; i < base[p].size(); ++i) {
        auto shifted = [&](double delta) {
          auto vals = base;
          std::vector<double> d(vals[p].values());
          d[i] += delta;
          vals[p] = Tensor(vals[p].shape(), d);
          Mlp probe = model;
          probe.set_params(vals);
          return ce_from_logits(probe, x, label);
        };
        const double fd = (shifted(h) - shifted(-h)) / (2 * h);
        worst_param = std::max(worst_param, rel_err(grads[p][i], fd));
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst_input < 1e-4 && worst_param < 1e-4 && secs < 60.0,
          "100 pairs, max relative error input " + num(worst_input, 3) + ", parameters " + num(worst_param, 3) +
              ", " + num(secs, 3) + " s"};
}

// ---- 2 ------------------------------------------------------------------

double ks_normal(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = 0.5 * std::erfc(-xs[i] / std::sqrt(2.0));
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

Verdict hmc_validity() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto sys = hmc::with_gaussian_kinetic([](const Tensor& q) { return 0.5 * dot(q, q); },
                                              [](const Tensor& q) { return q; });
  hmc::ChainConfig cfg;
  cfg.step = 0.1;
  cfg.leapfrog_steps = 19;
  cfg.samples = 20000;
  cfg.burn_in = 1000;
  cfg.convention = hmc::AcceptConvention::Standard;
  cfg.seed = 1;
  const auto trace = hmc::run_chain(sys, Tensor::vector({0.0, 0.0}), cfg);
  bool ok = trace.positions.size() == 20000;
  std::string detail;
  for (std::size_t k = 0; k < 2; ++k) {
    std::vector<double> xs;
    for (const auto& p : trace.positions) xs.push_back(p[k]);
    const double n = static_cast<double>(xs.size());
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    double var = 0.0;
    for (double v : xs) var += (v - mean) * (v - mean);
    var /= n;
    const double ks = ks_normal(xs);
    ok = ok && std::abs(mean) <= 0.05 && std::abs(var - 1.0) <= 0.1 && ks < 0.01;
    detail += "x" + std::to_string(k) + " mean " + num(mean, 3) + " var " + num(var, 4) + " KS " + num(ks, 3) + "; ";
  }
  const double secs = seconds_since(t0);
  return {ok && secs < 60.0, detail + num(secs, 3) + " s"};
}

// ---- 3 ------------------------------------------------------------------

Verdict leapfrog_physics() {
  const auto sys = hmc::with_gaussian_kinetic([](const Tensor& q) { return 0.5 * dot(q, q); },
                                              [](const Tensor& q) { return q; });
  double worst_drift = 0.0, worst_return = 0.0;
  for (std::size_t trial = 0; trial < 20; ++trial) {
    SeededRng rng(derive_seed(303, trial));
    std::vector<double> q(3), p(3);
    for (auto& v : q) v = rng.uniform(-2, 2);
    for (auto& v : p) v = rng.uniform(-2, 2);
    hmc::ChainState start{Tensor::vector(q), Tensor::vector(p), 0.0, 0};
    start.energy = sys.energy(start.position, start.momentum);
    const auto end = hmc::leapfrog(sys, start, 0.1, 100);
    worst_drift = std::max(worst_drift, std::abs(end.energy - start.energy));
    hmc::ChainState back = end;
    back.momentum = scale(end.momentum, -1.0);
    const auto home = hmc::leapfrog(sys, back, 0.1, 100);
    worst_return = std::max({worst_return, linf_distance(home.position, start.position),
                             linf_distance(scale(home.momentum, -1.0), start.momentum)});
  }
  return {worst_drift < 1e-2 && worst_return <= 1e-8,
          "20 oscillators, max |dH| " + num(worst_drift, 3) + ", max reversal error " + num(worst_return, 3)};
}

// ---- 4 ------------------------------------------------------------------

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

Verdict degeneration_lattice() {
  std::size_t cases = 0, mismatches = 0, accepted_rows = 0;
  for (std::size_t trial = 0; trial < 12; ++trial) {
    SeededRng rng(derive_seed(404, trial));
    const std::size_t d = 3 + rng.below(6), c = 2 + rng.below(3);
    Mlp model(MlpSpec{{d, 4 + rng.below(8), c}, derive_seed(405, trial)});
    const std::size_t rows = 16;
    std::vector<double> xv(rows * d);
    for (double& v : xv) v = rng.uniform(0, 1);
    std::vector<std::size_t> y(rows);
    for (auto& l : y) l = rng.below(c);
    const Tensor x = Tensor::matrix(rows, d, xv);

    AttackConfig cfg;
    cfg.epsilon = rng.uniform(0.01, 0.3);
    cfg.alpha = cfg.epsilon * rng.uniform(0.05, 0.5);
    cfg.iterations = 1 + rng.below(12);
    cfg.seed = rng.next_u64();

    AttackConfig mu0 = cfg;
    mu0.mu = 0.0;
    mismatches += !bit_equal(mi_fgsm(model, x, y, mu0), i_fgsm(model, x, y, cfg));

    AttackConfig single = cfg;
    single.iterations = 1;
    single.alpha = cfg.epsilon;
    mismatches += !bit_equal(i_fgsm(model, x, y, single), fgsm(model, x, y, cfg));

    AttackConfig plain = cfg;
    plain.restarts = 1;
    plain.random_start = false;
    mismatches += !bit_equal(pgd(model, x, y, plain), i_fgsm(model, x, y, cfg));

    AttackConfig one = cfg;
    one.samples = 1;
    one.inner_steps = cfg.iterations;
    const AdvChain chain = hmcam_attack(model, x, y, one);
    const Tensor ai = ai_fgsm(model, x, y, cfg);
    for (std::size_t r = 0; r < rows; ++r) {
      if (!chain.accept_flags[0][r]) continue;
      ++accepted_rows;
      mismatches += !bit_equal(chain.sample_row(0, r), ai.row(r));
    }
    cases += 4;
  }
  return {mismatches == 0 && accepted_rows > 0,
          std::to_string(cases) + " configurations, " + std::to_string(accepted_rows) +
              " accepted hmcam rows, mismatches " + std::to_string(mismatches)};
}

// ---- 5 ------------------------------------------------------------------

Verdict ema_oracle() {
  double worst_v = 0.0, worst_e = 0.0;
  std::size_t bias_mismatch = 0, decreases = 0;
  for (std::size_t trial = 0; trial < 50; ++trial) {
    SeededRng rng(derive_seed(505, trial));
    const std::size_t n = 1 + rng.below(8);
    const double b1 = rng.uniform(0.5, 0.99), b2 = rng.uniform(0.9, 0.9999);
    AccumulatedMomentum acc(n, b1, b2, 1e-8);
    std::vector<std::vector<double>> history;
    std::vector<double> prev_hat(n, 0.0);
    for (std::size_t t = 1; t <= 20; ++t) {
      std::vector<double> g(n);
      for (double& v : g) v = rng.uniform(-3, 3);
      history.push_back(g);
      acc.step(g, 0.01, 0.1);
      const auto v = acc.v(), e = acc.e(), e_hat = acc.e_hat();
      for (std::size_t k = 0; k < n; ++k) {
        double vs = 0.0, es = 0.0;
        for (std::size_t i = 1; i <= t; ++i) {
          const double gi = history[i - 1][k];
          vs += (1 - b1) * std::pow(b1, static_cast<double>(t - i)) * gi;
          es += (1 - b2) * std::pow(b2, static_cast<double>(t - i)) * gi * gi;
        }
        worst_v = std::max(worst_v, std::abs(v[k] - vs));
        worst_e = std::max(worst_e, std::abs(e[k] - es));
        decreases += e_hat[k] < prev_hat[k];
        prev_hat[k] = e_hat[k];
      }
      if (t == 1) {
        const auto vc = acc.v_corrected();
        for (std::size_t k = 0; k < n; ++k) bias_mismatch += vc[k] != g[k];
      }
    }
  }
  return {worst_v <= 1e-12 && worst_e <= 1e-12 && bias_mismatch == 0 && decreases == 0,
          "50 runs of 20 steps, max |v - sum| " + num(worst_v, 3) + ", max |e - sum| " + num(worst_e, 3) +
              ", t=1 bias-correction mismatches " + std::to_string(bias_mismatch) + ", e_hat decreases " +
              std::to_string(decreases)};
}

// ---- 6 ------------------------------------------------------------------

Verdict constraint_safety() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<AttackMethod> methods{AttackMethod::Fgsm,   AttackMethod::IFgsm, AttackMethod::Pgd,
                                          AttackMethod::MiFgsm, AttackMethod::MPgd,  AttackMethod::AiFgsm,
                                          AttackMethod::Hmcam};
  std::vector<Mlp> zoo;
  for (std::size_t m = 0; m < 8; ++m) zoo.emplace_back(MlpSpec{{5, 6 + m, 3}, derive_seed(606, m)});
  std::size_t invocations = 0, outputs = 0, violations = 0;
  SeededRng rng(607);
  auto check = [&](const Tensor& adv, const Tensor& x, double eps) {
    ++outputs;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!(std::abs(adv[i] - x[i]) <= eps) || !(adv[i] >= 0.0 && adv[i] <= 1.0)) {
        ++violations;
        return;
      }
    }
  };
  while (invocations < 100000) {
    const auto method = methods[invocations % methods.size()];
    const Mlp& model = zoo[rng.below(zoo.size())];
    std::vector<double> xv(5);
    for (double& v : xv) {
      const double u = rng.uniform();
      v = u < 0.15 ? 0.0 : u > 0.85 ? 1.0 : rng.uniform();
    }
    const Tensor x = Tensor::vector(xv);
    const std::size_t label = rng.below(3);
    AttackConfig cfg;
    cfg.epsilon = rng.uniform() < 0.05 ? 0.0 : rng.uniform(0.0, 0.6);
    cfg.alpha = rng.uniform(0.0, 0.5);
    cfg.iterations = 1 + rng.below(4);
    cfg.mu = rng.uniform(0.0, 1.5);
    cfg.restarts = 1 + rng.below(2);
    cfg.random_start = rng.uniform() < 0.7;
    cfg.seed = rng.next_u64();
    if (method == AttackMethod::Hmcam) {
      cfg.samples = 1 + rng.below(3);
      cfg.inner_steps = 1 + rng.below(3);
      cfg.iterations = cfg.samples * cfg.inner_steps;
      const auto chain = hmcam_attack(model, x, std::span(&label, 1), cfg);
      for (const auto& s : chain.samples) check(s, x, cfg.epsilon);
    } else {
      check(run_attack(method, model, x, std::span(&label, 1), cfg), x, cfg.epsilon);
    }
    ++invocations;
  }
  return {violations == 0, std::to_string(invocations) + " invocations, " + std::to_string(outputs) +
                               " outputs checked, violations " + std::to_string(violations) + ", " +
                               num(seconds_since(t0), 3) + " s"};
}

// ---- 7 ------------------------------------------------------------------

Verdict attack_efficacy() {
  const auto t0 = std::chrono::steady_clock::now();
  const Benchmark bench = make_blob_benchmark();
  const auto models = bench.model_ptrs();

  const auto hm = transfer_matrix(models, AttackMethod::Hmcam, benchmark_attack_config(AttackMethod::Hmcam), bench.eval);
  const auto ai =
      transfer_matrix(models, AttackMethod::AiFgsm, benchmark_attack_config(AttackMethod::AiFgsm), bench.eval);
  const auto pg = transfer_matrix(models, AttackMethod::Pgd, benchmark_attack_config(AttackMethod::Pgd), bench.eval);

  const auto hm_sweep = sweep(SweepParameter::Iterations, {10, 100}, AttackMethod::Hmcam,
                              benchmark_attack_config(AttackMethod::Hmcam), models, bench.eval);
  const auto pg_sweep = sweep(SweepParameter::Iterations, {10, 100}, AttackMethod::Pgd,
                              benchmark_attack_config(AttackMethod::Pgd), models, bench.eval);
  const double hm10 = hm_sweep.matrices.front().black_box_mean();
  const double pg100 = pg_sweep.matrices.back().black_box_mean();

  const bool a = std::abs(hm.white_box_mean() - ai.white_box_mean()) <= 0.03;
  const bool b = hm.black_box_mean() >= pg.black_box_mean();
  const bool c = hm10 >= pg100;
  const double secs = seconds_since(t0);
  // Pinned at commit time: (a) 0.4800 vs 0.4806, (b) 0.4250 vs 0.4191, (c) 0.4250 vs 0.4191.
  return {a && b && c && secs < 600.0,
          std::string("(a) ") + (a ? "ok" : "no") + " white-box hmcam " + num(hm.white_box_mean()) + " ai-fgsm " +
              num(ai.white_box_mean()) + "; (b) " + (b ? "ok" : "no") + " black-box hmcam " +
              num(hm.black_box_mean()) + " pgd " + num(pg.black_box_mean()) + "; (c) " + (c ? "ok" : "no") +
              " black-box hmcam N=10 " + num(hm10) + " pgd N=100 " + num(pg100) + "; " + num(secs, 3) + " s"};
}

// ---- 8 ------------------------------------------------------------------

Verdict cat_efficacy(const Options& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto dir = opt.source / "data" / "mnist";
  const Dataset all = load_mnist_idx(dir / "mnist-10k-images-idx3-ubyte", dir / "mnist-10k-labels-idx1-ubyte");
  std::vector<std::size_t> tr(8000), te(2000);
  std::iota(tr.begin(), tr.end(), 0);
  std::iota(te.begin(), te.end(), 8000);
  const Dataset train = all.subset(tr, "mnist-train"), test = all.subset(te, "mnist-test");

  EvalOptions eval;
  eval.data = &test;
  eval.epsilon = 0.1;
  eval.pgd_iterations = 20;
  eval.max_examples = 1000;
  eval.final_only = true;
  eval.seed = 3;
  const MlpSpec arch{{784, 256, 10}, 1};

  TrainConfig tc;
  tc.epochs = 10;
  tc.lr = 0.05;
  tc.batch_size = 64;
  tc.seed = 2;
  Mlp natural(arch);
  const auto nat = natural_training(natural, train, tc, eval);

  CatConfig cc;
  cc.epochs = 40;
  cc.k = 2;
  cc.t = 2;
  cc.epsilon = 0.1;
  cc.alpha = 1.0;
  cc.lr = 0.05;
  cc.batch_size = 64;
  cc.seed = 2;
  Mlp cat_model(arch);
  const auto cat = cat_train(cat_model, train, cc, eval);

  TrainConfig pc = tc;
  pc.epochs = 2;
  AttackConfig ac;
  ac.epsilon = 0.1;
  ac.alpha = 0.025;
  ac.iterations = 10;
  ac.seed = 4;
  EvalOptions skip = eval;
  skip.data = nullptr;
  Mlp pgd_model(arch);
  const auto pgd10 = pgd_adversarial_training(pgd_model, train, ac, pc, skip);

  const double nat_nat = *nat.epochs.back().nat_acc, nat_rob = *nat.epochs.back().rob_acc;
  const double cat_nat = *cat.epochs.back().nat_acc, cat_rob = *cat.epochs.back().rob_acc;
  const double cat_sec = cat.mean_epoch_seconds(), pgd_sec = pgd10.mean_epoch_seconds();
  const bool rob = cat_rob >= nat_rob + 0.20;
  const bool acc = std::abs(cat_nat - nat_nat) <= 0.05;
  const bool fast = cat_sec < pgd_sec;
  const double secs = seconds_since(t0);
  return {rob && acc && fast && secs < 1800.0,
          "PGD-20 robust CAT " + num(cat_rob) + " vs natural " + num(nat_rob) + (rob ? " ok" : " no") +
              "; natural CAT " + num(cat_nat) + " vs natural " + num(nat_nat) + (acc ? " ok" : " no") +
              "; s/epoch CAT(K*T=4) " + num(cat_sec, 3) + " vs PGD-10 AT " + num(pgd_sec, 3) +
              (fast ? " ok" : " no") + "; " + num(secs, 3) + " s"};
}

// ---- 9 ------------------------------------------------------------------

Verdict diversity() {
  const Benchmark bench = make_blob_benchmark();
  AttackConfig cfg = benchmark_attack_config(AttackMethod::Hmcam);
  cfg.epsilon = 0.1;
  cfg.alpha = 0.001;
  cfg.samples = 20;
  cfg.inner_steps = 50;
  cfg.iterations = cfg.samples * cfg.inner_steps;
  bool ok = true;
  std::string detail = "S=20 on " + std::to_string(bench.eval.size()) + " inputs, share with >= 2 distinct successful:";
  for (std::size_t m = 0; m < bench.models.size(); ++m) {
    const auto chain = hmcam_attack(*bench.models[m], bench.eval.inputs(), bench.eval.labels(), cfg);
    const auto rep = diversity_report(chain, *bench.models[m], bench.eval.labels());
    const double frac = rep.fraction_with_successful(2);
    ok = ok && frac >= 0.5;
    detail += " " + bench.models[m]->name() + " " + num(frac) + " (mean distinct " + num(rep.mean_distinct(), 3) + ")";
  }
  return {ok, detail};
}

// ---- 10 -----------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict reproducibility(const Options& opt) {
  if (opt.cli.empty() || !fs::exists(opt.cli)) return {false, "CLI binary not given or missing"};
  const fs::path root = fs::temp_directory_path() / "hmcam_acceptance_replay";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string log = " >>" + (root / "cli.log").string() + " 2>&1";
  const std::string cli = "\"" + opt.cli.string() + "\" ";
  auto out = [&](const std::string& name) { return " --out " + (root / "runs" / name).string(); };
  auto ck = [&](const std::string& name) { return (root / "runs" / name / "model.ckpt").string() + " "; };

  const std::vector<std::pair<std::string, std::string>> runs = {
      {"a", "train --mode natural --blobs 3x80 --dim 4 --epochs 5 --seed 11"},
      {"b", "train --mode pgd-at --blobs 3x80 --dim 4 --epochs 3 --hidden 16,16 --eps 0.05 --seed 11"},
      {"c", "train --mode cat --blobs 3x80 --dim 4 --epochs 4 --k 2 --t 2 --eps 0.05 --seed 11"},
      {"eval", "eval --matrix --holdout --method hmcam --eps 0.05 --s 2 --t 5 --count 40 --jobs 2 --seed 5 --models " +
                   ck("a") + ck("b") + ck("c")},
      {"sweep", "sweep --param iterations --values 2,4,8 --method pgd --eps 0.05 --count 40 --seed 6 --models " +
                    ck("a") + ck("b")},
      {"attack", "attack --method mi-fgsm --eps 2/255 --count 30 --model " + ck("c")},
      {"hmc", "sample-hmc --target banana --samples 400"},
  };
  for (const auto& [name, args] : runs) {
    const std::string env = name == "attack" ? "ADVCHAIN_SEED=77 " : "";
    if (std::system((env + cli + args + out(name) + log).c_str()) != 0) return {false, "run '" + name + "' failed"};
  }
  std::size_t compared = 0;
  std::vector<std::string> differing;
  for (const auto& [name, args] : runs) {
    const auto first = root / "runs" / name, again = root / "replays" / name;
    const std::string cmd = cli + "replay " + (first / "run_manifest.json").string() + " --out " + again.string() + log;
    if (std::system(cmd.c_str()) != 0) return {false, "replay of '" + name + "' failed"};
    for (const auto& entry : fs::directory_iterator(first)) {
      if (entry.path().extension() != ".csv") continue;
      ++compared;
      const auto twin = again / entry.path().filename();
      if (!fs::exists(twin) || slurp(entry.path()) != slurp(twin)) differing.push_back(name + "/" + entry.path().filename().string());
    }
  }
  std::string detail = std::to_string(runs.size()) + " runs replayed from run_manifest.json, " +
                       std::to_string(compared) + " CSV files compared, differing " + std::to_string(differing.size());
  for (const auto& d : differing) detail += " " + d;
  return {differing.empty() && compared >= runs.size(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--cli" && i + 1 < argc) {
      opt.cli = argv[++i];
    } else if (a == "--source" && i + 1 < argc) {
      opt.source = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      opt.only.insert(std::stoi(argv[++i]));
    } else {
      std::cerr << "usage: acceptance --cli PATH --source DIR [--only N]...\n";
      return 2;
    }
  }

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"HMC validity", hmc_validity},
      {"leapfrog physics", leapfrog_physics},
      {"degeneration lattice", degeneration_lattice},
      {"EMA oracle", ema_oracle},
      {"constraint safety", constraint_safety},
      {"desk-scale attack efficacy", attack_efficacy},
      {"CAT efficacy and cost", [&] { return cat_efficacy(opt); }},
      {"diversity", diversity},
      {"reproducibility", [&] { return reproducibility(opt); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!opt.only.empty() && !opt.only.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << "): " << v.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}

#include <algorithm>
#include <sstream>

#include "doctest.h"
#include "hmcam/errors.hpp"
#include "hmcam/harness.hpp"
#include "test_support.hpp"

using namespace hmcam;

namespace {

const Benchmark& bench() {
  static const Benchmark b = make_blob_benchmark();
  return b;
}

/// A quick 3-class problem for structural checks.
struct Small {
  Dataset data;
  std::vector<ModelPtr> models;
};

const Small& small() {
  static const Small s = [] {
    const auto centers = random_centers(3, 6, 0.3, 0.7, 1);
    Dataset d = make_blobs(20, centers, 0.08, 2);
    std::vector<ModelPtr> models;
    for (std::uint64_t i = 0; i < 3; ++i) {
      auto m = std::make_shared<Mlp>(MlpSpec{{6, 8 + 4 * i, 3}, 10 + i}, "m" + std::to_string(i));
      TrainConfig tc;
      tc.epochs = 15;
      tc.lr = 0.1;
      tc.batch_size = 16;
      tc.seed = i;
      sgd_train(*m, d, tc);
      models.push_back(m);
    }
    return Small{std::move(d), std::move(models)};
  }();
  return s;
}

AttackConfig quick(AttackMethod method) {
  AttackConfig c;
  c.epsilon = 0.08;
  c.alpha = 0.01;
  c.iterations = 10;
  c.samples = 2;
  c.inner_steps = 5;
  c.seed = 3;
  (void)method;
  return c;
}

double spread(const SweepResult& r) {
  std::vector<double> wb;
  for (const auto& m : r.matrices) wb.push_back(m.white_box_mean());
  return *std::max_element(wb.begin(), wb.end()) - *std::min_element(wb.begin(), wb.end());
}

}  // namespace

TEST_CASE("single model matrix is the white-box rate") {
  const auto& s = small();
  const auto cfg = quick(AttackMethod::Pgd);
  const auto tm = transfer_matrix({s.models[0]}, AttackMethod::Pgd, cfg, s.data);
  REQUIRE(tm.rates.size() == 1);
  AttackConfig c = cfg;
  c.seed = derive_seed(cfg.seed, 0);
  const Tensor adv = craft(AttackMethod::Pgd, *s.models[0], s.data, c);
  const auto clean = predict(*s.models[0], s.data.inputs());
  const auto after = predict(*s.models[0], adv);
  std::size_t counted = 0, won = 0;
  for (std::size_t i = 0; i < s.data.size(); ++i) {
    if (clean[i] != s.data.label(i)) continue;
    ++counted;
    won += after[i] != s.data.label(i);
  }
  CHECK(tm.counted[0][0] == counted);
  CHECK(tm.rates[0][0] == static_cast<double>(won) / static_cast<double>(counted));
}

TEST_CASE("duplicated models give equal rows") {
  const auto& s = small();
  const auto tm = transfer_matrix({s.models[1], s.models[1]}, AttackMethod::IFgsm, quick(AttackMethod::IFgsm), s.data);
  CHECK(tm.rates[0] == tm.rates[1]);
  CHECK(tm.rates[0][0] == tm.rates[0][1]);
}

TEST_CASE("matrix rates are recomputable from per-example rows") {
  const auto& s = small();
  for (auto method : {AttackMethod::Pgd, AttackMethod::Hmcam}) {
    const auto tm = transfer_matrix(s.models, method, quick(method), s.data);
    CHECK(tm.outcomes.size() == 9 * s.data.size());
    for (std::size_t a = 0; a < 3; ++a) {
      for (std::size_t b = 0; b < 3; ++b) {
        std::size_t counted = 0, won = 0;
        for (const auto& o : tm.outcomes) {
          if (o.source != a || o.target != b || !o.counted) continue;
          ++counted;
          won += o.success;
        }
        CHECK(counted == tm.counted[a][b]);
        CHECK(tm.rates[a][b] == static_cast<double>(won) / static_cast<double>(counted));
        CHECK(tm.rates[a][b] >= 0.0);
        CHECK(tm.rates[a][b] <= 1.0);
      }
    }
    std::ostringstream matrix, rows;
    tm.write_csv(matrix);
    tm.write_per_example_csv(rows);
    CHECK(matrix.str().rfind("source,m0,m1,m2\n", 0) == 0);
    const std::string text = rows.str();
    CHECK(std::count(text.begin(), text.end(), '\n') == static_cast<long>(tm.outcomes.size() + 1));
  }
}

TEST_CASE("parallel sources give the same matrix") {
  const auto& s = small();
  const auto a = transfer_matrix(s.models, AttackMethod::MiFgsm, quick(AttackMethod::MiFgsm), s.data, 1);
  const auto b = transfer_matrix(s.models, AttackMethod::MiFgsm, quick(AttackMethod::MiFgsm), s.data, 3);
  CHECK(a.rates == b.rates);
}

TEST_CASE("matrix errors") {
  const auto& s = small();
  auto wrong = std::make_shared<Mlp>(MlpSpec{{5, 3}, 1});
  CHECK_THROWS_AS(transfer_matrix({s.models[0], wrong}, AttackMethod::Pgd, quick(AttackMethod::Pgd), s.data),
                  DimensionError);
  CHECK_THROWS_AS(transfer_matrix({}, AttackMethod::Pgd, quick(AttackMethod::Pgd), s.data), ContractError);
}

TEST_CASE("ensemble hold-out") {
  const auto& s = small();
  const auto dup = ensemble_holdout({s.models[0], s.models[0]}, 1, AttackMethod::Pgd, quick(AttackMethod::Pgd), s.data);
  CHECK(dup.holdout_rate == dup.ensemble_rate);
  for (std::size_t h = 0; h < 3; ++h) {
    const auto r = ensemble_holdout(s.models, h, AttackMethod::Hmcam, quick(AttackMethod::Hmcam), s.data);
    CHECK(r.holdout == s.models[h]->name());
    CHECK(r.ensemble_rate >= 0.0);
    CHECK(r.ensemble_rate <= 1.0);
    CHECK(r.holdout_rate >= 0.0);
    CHECK(r.holdout_rate <= 1.0);
  }
  CHECK_THROWS_AS(ensemble_holdout({s.models[0]}, 0, AttackMethod::Pgd, quick(AttackMethod::Pgd), s.data),
                  ContractError);
  CHECK_THROWS_AS(ensemble_holdout(s.models, 3, AttackMethod::Pgd, quick(AttackMethod::Pgd), s.data), ContractError);
}

TEST_CASE("sweep mechanics") {
  const auto& s = small();
  const auto cfg = quick(AttackMethod::IFgsm);
  const auto one = sweep(SweepParameter::StepSize, {0.02}, AttackMethod::IFgsm, cfg, s.models, s.data);
  AttackConfig direct = cfg;
  direct.alpha = 0.02;
  CHECK(one.matrices.at(0).rates == transfer_matrix(s.models, AttackMethod::IFgsm, direct, s.data).rates);

  CHECK_THROWS_AS(sweep(SweepParameter::StepSize, {0.02, 0.01}, AttackMethod::IFgsm, cfg, s.models, s.data),
                  ConfigError);
  CHECK_THROWS_AS(sweep(SweepParameter::StepSize, {}, AttackMethod::IFgsm, cfg, s.models, s.data), ConfigError);
  CHECK_THROWS_AS(parse_sweep_parameter("momentum"), ConfigError);
  CHECK(parse_sweep_parameter("samples") == SweepParameter::Samples);

  const AttackConfig h = apply_sweep_value(quick(AttackMethod::Hmcam), AttackMethod::Hmcam, SweepParameter::Iterations, 6);
  CHECK(h.inner_steps == 3);
  CHECK_THROWS_AS(apply_sweep_value(quick(AttackMethod::Hmcam), AttackMethod::Hmcam, SweepParameter::Iterations, 7),
                  ConfigError);
  const AttackConfig hs = apply_sweep_value(quick(AttackMethod::Hmcam), AttackMethod::Hmcam, SweepParameter::Samples, 4);
  CHECK(hs.iterations == 20);
  CHECK_THROWS_AS(apply_sweep_value(cfg, AttackMethod::Pgd, SweepParameter::Samples, 4), ConfigError);

  std::ostringstream out;
  const auto two = sweep(SweepParameter::Iterations, {1, 2}, AttackMethod::Fgsm, cfg, s.models, s.data);
  two.write_csv(out);
  const std::string text = out.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 2 * 9);
}

TEST_CASE("pinned benchmark") {
  const auto& b = bench();
  REQUIRE(b.models.size() == 3);
  CHECK(b.eval.size() == 600);
  for (const auto& m : b.models) CHECK(accuracy(*m, b.eval) > 0.85);
  const auto again = make_blob_benchmark();
  for (std::size_t i = 0; i < 3; ++i) CHECK(again.models[i]->checksum() == b.models[i]->checksum());
}

TEST_CASE("i-fgsm white-box rate grows with the iteration count") {
  const auto& b = bench();
  std::vector<double> values;
  for (int n = 1; n <= 10; ++n) values.push_back(n);
  const auto r = sweep(SweepParameter::Iterations, values, AttackMethod::IFgsm,
                       benchmark_attack_config(AttackMethod::IFgsm), b.model_ptrs(), b.eval);
  for (std::size_t i = 1; i < r.matrices.size(); ++i) {
    CHECK(r.matrices[i].white_box_mean() >= r.matrices[i - 1].white_box_mean());
  }
}

TEST_CASE("hmcam is less sensitive to the step size than m-pgd") {
  const auto& b = bench();
  const std::vector<double> grid{1e-4, 1e-3, 1e-2, 1e-1};
  const auto h = sweep(SweepParameter::StepSize, grid, AttackMethod::Hmcam, benchmark_attack_config(AttackMethod::Hmcam),
                       b.model_ptrs(), b.eval);
  const auto m = sweep(SweepParameter::StepSize, grid, AttackMethod::MPgd, benchmark_attack_config(AttackMethod::MPgd),
                       b.model_ptrs(), b.eval);
  MESSAGE("white-box spread hmcam " << spread(h) << " m-pgd " << spread(m));
  CHECK(spread(h) <= spread(m));
}

TEST_CASE("ensemble crafting transfers at least as well as the best single source") {
  const auto& b = bench();
  const auto models = b.model_ptrs();
  const auto cfg = benchmark_attack_config(AttackMethod::Pgd);
  const auto tm = transfer_matrix(models, AttackMethod::Pgd, cfg, b.eval);
  for (std::size_t h = 0; h < 3; ++h) {
    const auto r = ensemble_holdout(models, h, AttackMethod::Pgd, cfg, b.eval);
    double best = 0.0;
    for (std::size_t s = 0; s < 3; ++s) {
      if (s != h) best = std::max(best, tm.rates[s][h]);
    }
    MESSAGE("holdout " << r.holdout << " ensemble " << r.holdout_rate << " best single " << best);
    CHECK(r.holdout_rate >= best);
  }
}

TEST_CASE("distinct counting") {
  const Tensor a = Tensor::vector({0.1, 0.2, 0.3});
  CHECK(distinct_count({a, a, a}) == 1);
  const Tensor b = Tensor::vector({0.1, 0.2 + 2e-6, 0.3});
  CHECK(distinct_count({a, b}) == 2);
  const Tensor c = Tensor::vector({0.1, 0.2 + 5e-7, 0.3});
  CHECK(distinct_count({a, c}) == 1);

  AdvChain chain;
  chain.origin = Tensor::matrix(1, 3, {0.1, 0.2, 0.3});
  chain.samples = {chain.origin, chain.origin, chain.origin};
  chain.accept_flags = {{true}, {true}, {true}};
  const Mlp m({{3, 2}, 1});
  const std::size_t label = 0;
  const auto rep = diversity_report(chain, m, std::span(&label, 1));
  CHECK(rep.rows[0].distinct == 1);
  CHECK(rep.rows[0].mean_pairwise_l2 == 0.0);
  CHECK(rep.rows[0].class_histogram[0] + rep.rows[0].class_histogram[1] == 3);
  chain.samples.resize(1);
  CHECK_THROWS_AS(diversity_report(chain, m, std::span(&label, 1)), ContractError);
}

TEST_CASE("hmcam chains hold more distinct successful examples than pgd returns") {
  const auto& b = bench();
  const auto& model = *b.models[0];
  AttackConfig h = benchmark_attack_config(AttackMethod::Hmcam);
  h.epsilon = 0.1;
  h.alpha = 0.001;
  h.samples = 20;
  h.iterations = 20 * h.inner_steps;
  const auto chain = hmcam_attack(model, b.eval.inputs(), b.eval.labels(), h);
  const auto rep = diversity_report(chain, model, b.eval.labels());

  AttackConfig p = benchmark_attack_config(AttackMethod::Pgd);
  p.epsilon = 0.1;
  p.alpha = 0.01;
  p.iterations = 20;
  p.restarts = 20;
  // pgd returns one example per input: its max-loss restart.
  const Tensor adv = pgd(model, b.eval.inputs(), b.eval.labels(), p);
  const auto pred = predict(model, adv);
  std::size_t hm = 0, pg = 0;
  for (std::size_t r = 0; r < b.eval.size(); ++r) {
    hm += rep.rows[r].distinct_successful;
    pg += pred[r] != b.eval.label(r);
  }
  MESSAGE("distinct successful: hmcam " << hm << " pgd returned " << pg);
  CHECK(hm > pg);

  // Every restart kept as a candidate instead: reported, not asserted.
  AttackConfig single = p;
  single.restarts = 1;
  std::vector<std::vector<Tensor>> candidates(b.eval.size());
  for (std::size_t k = 0; k < p.restarts; ++k) {
    single.seed = derive_seed(p.seed, k);
    const Tensor a = pgd(model, b.eval.inputs(), b.eval.labels(), single);
    const auto pk = predict(model, a);
    for (std::size_t r = 0; r < b.eval.size(); ++r) {
      if (pk[r] != b.eval.label(r)) candidates[r].push_back(a.row(r));
    }
  }
  std::size_t all = 0;
  for (const auto& c : candidates) all += distinct_count(c);
  MESSAGE("distinct successful pgd restart candidates " << all);
}

TEST_CASE("fewer-samples study") {
  const auto centers = random_centers(3, 6, 0.3, 0.7, 1);
  const Dataset base = make_blobs(100, centers, 0.08, 5);
  const Dataset eval = make_blobs(30, centers, 0.08, 6);
  FewerSamplesConfig cfg;
  cfg.attack.epsilon = 0.08;
  cfg.attack.alpha = 0.01;
  cfg.attack.inner_steps = 5;
  cfg.attack.iterations = 10;
  cfg.train.epochs = 10;
  cfg.train.lr = 0.1;
  cfg.train.batch_size = 16;
  cfg.seed = 4;
  const auto rows = fewer_samples_study(base, eval, 20, {1, 2, 5}, MlpSpec{{6, 12, 3}, 3}, cfg);
  REQUIRE(rows.size() == 6);
  CHECK(rows[0].arm == "hmcam");
  CHECK(rows[1].arm == "pgd");
  CHECK(rows[0].training_examples == rows[1].training_examples);
  CHECK(rows[4].training_examples == 20 + 5 * 20);
  CHECK(rows[5].natural_examples == 100);
  for (const auto& r : rows) {
    CHECK(r.robust_accuracy >= 0.0);
    CHECK(r.robust_accuracy <= 1.0);
  }
  CHECK_THROWS_AS(fewer_samples_study(base, eval, 20, {20}, MlpSpec{{6, 12, 3}, 3}, cfg), ContractError);
  std::ostringstream out;
  write_fewer_samples_csv(rows, out);
  const std::string text = out.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 7);
}

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "sparsesieve/data.hpp"
#include "sparsesieve/dense_attack.hpp"

using namespace sparsesieve;

namespace {

struct Fixture {
  Dataset train_set = synthetic_blobs(4, 40, 8, 8, 21, 210);
  Dataset test_set = synthetic_blobs(4, 10, 8, 8, 21, 211);
  Model model;

  Fixture() {
    ModelSpec spec;
    spec.arch = Arch::Mlp;
    spec.height = 8;
    spec.width = 8;
    spec.hidden = 24;
    spec.classes = 4;
    model = build_model(spec, 31);
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 32;
    cfg.learning_rate = 0.05;
    cfg.seed = 31;
    train(model, train_set, &test_set, cfg);
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("attack config validation", "[dense]") {
  DenseAttackConfig cfg;
  cfg.epsilon = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.step = cfg.epsilon * 2;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.iterations = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.restarts = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK_NOTHROW(DenseAttackConfig{}.validate());
}

TEST_CASE("fgsm nonzero components have magnitude epsilon before clipping", "[dense]") {
  const auto& f = fixture();
  const double eps = 0.1;
  for (std::size_t i = 0; i < 10; ++i) {
    DensePerturbation p = fgsm(f.model, f.test_set.images[i], f.test_set.labels[i], eps,
                               /*clip_to_valid=*/false);
    CHECK(p.linf <= eps + 1e-12);
    for (double v : p.delta.data)
      CHECK((v == 0.0 || std::abs(std::abs(v) - eps) < 1e-12));
  }
}

TEST_CASE("fgsm leaves zero-gradient pixels untouched", "[dense]") {
  // dead input: weights into one pixel zeroed -> sign(0) = 0 -> delta 0
  Fixture f;  // mutable copy of the trained fixture
  Tensor& w1 = f.model.param("fc1.w");
  const std::size_t dead = 5;
  for (std::size_t r = 0; r < w1.shape[0]; ++r) w1.data[r * w1.shape[1] + dead] = 0.0;
  DensePerturbation p =
      fgsm(f.model, f.test_set.images[0], f.test_set.labels[0], 0.1, /*clip_to_valid=*/false);
  CHECK(p.delta.data[dead] == 0.0);
}

TEST_CASE("ifgsm with T=1 and step epsilon equals fgsm bit for bit", "[dense]") {
  const auto& f = fixture();
  DenseAttackConfig cfg;
  cfg.epsilon = 0.12;
  cfg.step = 0.12;
  cfg.iterations = 1;
  for (std::size_t i = 0; i < 10; ++i) {
    DensePerturbation a = fgsm(f.model, f.test_set.images[i], f.test_set.labels[i], cfg.epsilon);
    DensePerturbation b = ifgsm_nontargeted(f.model, f.test_set.images[i], f.test_set.labels[i], cfg);
    CHECK(a.delta.data == b.delta.data);
  }
}

TEST_CASE("ifgsm respects the l-inf budget and records per-iteration losses", "[dense]") {
  const auto& f = fixture();
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    DenseAttackConfig cfg;
    cfg.epsilon = 0.05 + 0.3 * (trial / 20.0);
    cfg.step = cfg.epsilon / (1 + trial % 5);
    cfg.iterations = 1 + trial % 7;
    const std::size_t i = trial % f.test_set.size();
    DensePerturbation p = ifgsm_nontargeted(f.model, f.test_set.images[i], f.test_set.labels[i], cfg);
    CHECK(p.linf <= cfg.epsilon + 1e-12);
    REQUIRE(p.loss_history.size() == cfg.iterations);
    for (double l : p.loss_history) CHECK(std::isfinite(l));
  }
}

TEST_CASE("loss history ascends under the non-targeted iteration", "[dense]") {
  const auto& f = fixture();
  DenseAttackConfig cfg;
  cfg.epsilon = 0.3;
  cfg.step = 0.03;
  cfg.iterations = 10;
  DensePerturbation p = ifgsm_nontargeted(f.model, f.test_set.images[1], f.test_set.labels[1], cfg);
  CHECK(p.loss_history.back() > p.loss_history.front());
}

TEST_CASE("targeted ifgsm reaches the target on most test points", "[dense]") {
  const auto& f = fixture();
  DenseAttackConfig cfg;
  cfg.epsilon = 0.3;
  cfg.step = 0.03;
  cfg.iterations = 40;
  cfg.mode = AttackMode::Targeted;
  std::size_t attempts = 0, hits = 0;
  for (std::size_t i = 0; i < f.test_set.size(); ++i) {
    const Tensor& x = f.test_set.images[i];
    if (predict(f.model, x) != f.test_set.labels[i]) continue;
    const std::size_t target = least_likely_class(f.model, x);
    DensePerturbation p = ifgsm_targeted(f.model, x, target, cfg);
    ++attempts;
    if (predict(f.model, clamp(x + p.delta, 0.0, 1.0)) == target) ++hits;
  }
  REQUIRE(attempts >= 10);
  CHECK(double(hits) / double(attempts) >= 0.8);
}

TEST_CASE("targeted ifgsm rejects a target equal to the current prediction", "[dense]") {
  const auto& f = fixture();
  const Tensor& x = f.test_set.images[0];
  DenseAttackConfig cfg;
  cfg.mode = AttackMode::Targeted;
  CHECK_THROWS_AS(ifgsm_targeted(f.model, x, predict(f.model, x), cfg), std::invalid_argument);
}

TEST_CASE("pgd with one restart and no random init equals ifgsm", "[dense]") {
  const auto& f = fixture();
  DenseAttackConfig cfg;
  cfg.epsilon = 0.2;
  cfg.step = 0.04;
  cfg.iterations = 8;
  cfg.restarts = 1;
  cfg.random_init = false;
  for (std::size_t i = 0; i < 5; ++i) {
    DensePerturbation a = ifgsm_nontargeted(f.model, f.test_set.images[i], f.test_set.labels[i], cfg);
    DensePerturbation b = pgd(f.model, f.test_set.images[i], f.test_set.labels[i], cfg);
    CHECK(a.delta.data == b.delta.data);
  }
}

TEST_CASE("pgd respects the budget with random init and restarts", "[dense]") {
  const auto& f = fixture();
  DenseAttackConfig cfg;
  cfg.epsilon = 0.15;
  cfg.step = 0.03;
  cfg.iterations = 6;
  cfg.restarts = 3;
  cfg.random_init = true;
  cfg.seed = 99;
  for (std::size_t i = 0; i < 8; ++i) {
    DensePerturbation p = pgd(f.model, f.test_set.images[i], f.test_set.labels[i], cfg);
    CHECK(p.linf <= cfg.epsilon + 1e-12);
  }
}

TEST_CASE("pgd fools at least as often as plain ifgsm on the same budget", "[dense]") {
  const auto& f = fixture();
  DenseAttackConfig base;
  base.epsilon = 0.2;
  base.step = 0.04;
  base.iterations = 8;
  DenseAttackConfig multi = base;
  multi.restarts = 4;
  multi.random_init = true;
  multi.seed = 7;
  std::size_t plain = 0, best_of = 0;
  for (std::size_t i = 0; i < f.test_set.size(); ++i) {
    const Tensor& x = f.test_set.images[i];
    const std::size_t y = f.test_set.labels[i];
    if (predict(f.model, x) != y) continue;
    auto a = ifgsm_nontargeted(f.model, x, y, base);
    auto b = pgd(f.model, x, y, multi);
    if (predict(f.model, clamp(x + a.delta, 0.0, 1.0)) != y) ++plain;
    if (predict(f.model, clamp(x + b.delta, 0.0, 1.0)) != y) ++best_of;
  }
  CHECK(best_of >= plain);
}

TEST_CASE("adversarial training with zero budget equals standard training", "[dense]") {
  ModelSpec spec;
  spec.arch = Arch::Mlp;
  spec.height = 8;
  spec.width = 8;
  spec.hidden = 16;
  spec.classes = 3;
  Dataset data = synthetic_blobs(3, 10, 8, 8, 41, 410);

  AdversarialTrainConfig acfg;
  acfg.attack.epsilon = 0.0;  // disables the attack
  acfg.train.epochs = 2;
  acfg.train.batch_size = 8;
  acfg.train.learning_rate = 0.05;
  acfg.train.seed = 3;
  Model adv = adversarial_train(spec, data, nullptr, acfg);

  Model plain = build_model(spec, 3);
  train(plain, data, nullptr, acfg.train);

  for (std::size_t p = 0; p < adv.params.size(); ++p)
    CHECK(adv.params[p].second.data == plain.params[p].second.data);
}

TEST_CASE("fast-at variant runs and stays deterministic", "[dense]") {
  ModelSpec spec;
  spec.arch = Arch::Mlp;
  spec.height = 8;
  spec.width = 8;
  spec.hidden = 12;
  spec.classes = 3;
  Dataset data = synthetic_blobs(3, 6, 8, 8, 51, 510);
  AdversarialTrainConfig cfg;
  cfg.attack.epsilon = 0.1;
  cfg.attack.step = 0.1;
  cfg.fast_at = true;
  cfg.train.epochs = 1;
  cfg.train.batch_size = 6;
  cfg.train.learning_rate = 0.05;
  cfg.train.seed = 4;
  Model a = adversarial_train(spec, data, nullptr, cfg);
  Model b = adversarial_train(spec, data, nullptr, cfg);
  for (std::size_t p = 0; p < a.params.size(); ++p)
    CHECK(a.params[p].second.data == b.params[p].second.data);
}

TEST_CASE("trained mlp is fooled by fgsm at a moderate budget", "[dense]") {
  const auto& f = fixture();
  std::size_t attempts = 0, fooled = 0;
  for (std::size_t i = 0; i < f.test_set.size(); ++i) {
    const Tensor& x = f.test_set.images[i];
    const std::size_t y = f.test_set.labels[i];
    if (predict(f.model, x) != y) continue;
    ++attempts;
    DensePerturbation p = fgsm(f.model, x, y, 0.2);
    if (predict(f.model, clamp(x + p.delta, 0.0, 1.0)) != y) ++fooled;
  }
  REQUIRE(attempts >= 10);
  CHECK(double(fooled) / double(attempts) > 0.5);
}

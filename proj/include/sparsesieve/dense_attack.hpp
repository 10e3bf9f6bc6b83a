#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "sparsesieve/model.hpp"
#include "sparsesieve/tape.hpp"
#include "sparsesieve/tensor.hpp"

namespace sparsesieve {

enum class AttackMode { NonTargeted, Targeted };

struct DenseAttackConfig {
  double epsilon = 0.3;        // l-inf budget, pixel units
  double step = 0.03;          // alpha
  std::size_t iterations = 10; // T
  AttackMode mode = AttackMode::NonTargeted;
  bool random_init = false;    // PGD
  bool clip_to_valid = true;
  std::size_t restarts = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (epsilon <= 0.0) throw std::invalid_argument("dense attack: epsilon must be > 0");
    if (step <= 0.0 || step > epsilon)
      throw std::invalid_argument("dense attack: require 0 < step <= epsilon");
    if (iterations < 1) throw std::invalid_argument("dense attack: iterations must be >= 1");
    if (restarts < 1) throw std::invalid_argument("dense attack: restarts must be >= 1");
  }
};

struct DensePerturbation {
  Tensor delta;
  double linf = 0.0;
  std::vector<double> loss_history;  // J(f(x_t), label) per iteration
};

/// Gradient of the cross-entropy loss wrt the input pixels.
inline Tensor input_gradient(const Model& m, const Tensor& image, std::size_t label,
                             double* loss_out = nullptr) {
  Tape tape;
  auto in = tape.leaf(image);
  auto g = forward_logits(m, tape, in);
  auto loss = tape.softmax_cross_entropy(g.logits, label);
  if (loss_out) *loss_out = tape.value(loss).data[0];
  tape.backward(loss);
  return tape.grad(in);
}

namespace detail {

/// Shared I-FGSM loop. start_delta is the (already budget-feasible) initial
/// offset; direction +1 ascends the loss (non-targeted), -1 descends
/// (targeted). Per-step l-inf projection, optional validity clip.
inline DensePerturbation ifgsm_loop(const Model& m, const Tensor& image, std::size_t label,
                                    const DenseAttackConfig& cfg, const Tensor& start_delta,
                                    double direction) {
  Tensor x_adv = image + start_delta;
  if (cfg.clip_to_valid) x_adv = clamp(x_adv, 0.0, 1.0);
  DensePerturbation out;
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    double loss = 0.0;
    const Tensor g = input_gradient(m, x_adv, label, &loss);
    out.loss_history.push_back(loss);
    x_adv = x_adv + (direction * cfg.step) * sign(g);
    Tensor delta = clamp(x_adv - image, -cfg.epsilon, cfg.epsilon);
    x_adv = image + delta;
    if (cfg.clip_to_valid) x_adv = clamp(x_adv, 0.0, 1.0);
  }
  out.delta = x_adv - image;
  out.linf = max_abs(out.delta);
  require_finite(out.delta, "dense attack");
  return out;
}

}  // namespace detail

/// One ascent step of size epsilon: delta = eps * sign(grad J(x, y_true)).
inline DensePerturbation fgsm(const Model& m, const Tensor& image, std::size_t true_label,
                              double epsilon, bool clip_to_valid = true) {
  DenseAttackConfig cfg;
  cfg.epsilon = epsilon;
  cfg.step = epsilon;
  cfg.iterations = 1;
  cfg.clip_to_valid = clip_to_valid;
  cfg.validate();
  return detail::ifgsm_loop(m, image, true_label, cfg, Tensor::zeros(image.shape), +1.0);
}

inline DensePerturbation ifgsm_nontargeted(const Model& m, const Tensor& image,
                                           std::size_t true_label,
                                           const DenseAttackConfig& cfg) {
  cfg.validate();
  return detail::ifgsm_loop(m, image, true_label, cfg, Tensor::zeros(image.shape), +1.0);
}

/// Descends the loss toward the target class. The target must differ from
/// the model's current prediction.
inline DensePerturbation ifgsm_targeted(const Model& m, const Tensor& image,
                                        std::size_t target_label, const DenseAttackConfig& cfg) {
  cfg.validate();
  if (predict(m, image) == target_label)
    throw std::invalid_argument("ifgsm_targeted: target equals current prediction");
  return detail::ifgsm_loop(m, image, target_label, cfg, Tensor::zeros(image.shape), -1.0);
}

/// I-FGSM with uniform random initialization in [-eps, eps] and restarts;
/// the successful restart with the largest recorded loss is kept. With
/// restarts=1 and random_init off this reduces to plain I-FGSM.
inline DensePerturbation pgd(const Model& m, const Tensor& image, std::size_t label,
                             const DenseAttackConfig& cfg) {
  cfg.validate();
  const double direction = cfg.mode == AttackMode::Targeted ? -1.0 : +1.0;
  std::mt19937_64 rng(cfg.seed);
  DensePerturbation best;
  bool have_best = false, best_success = false;
  double best_score = 0.0;
  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    Tensor init = Tensor::zeros(image.shape);
    if (cfg.random_init) fill_uniform(init, rng, -cfg.epsilon, cfg.epsilon);
    DensePerturbation cand = detail::ifgsm_loop(m, image, label, cfg, init, direction);
    const std::size_t pred = predict(m, clamp(image + cand.delta, 0.0, 1.0));
    const bool success =
        cfg.mode == AttackMode::Targeted ? pred == label : pred != label;
    const double score = direction * cand.loss_history.back();
    if (!have_best || (success && !best_success) ||
        (success == best_success && score > best_score)) {
      best = std::move(cand);
      best_success = success;
      best_score = score;
      have_best = true;
    }
  }
  return best;
}

struct AdversarialTrainConfig {
  DenseAttackConfig attack;  // epsilon == 0 disables the attack (plain training)
  TrainConfig train;
  bool fast_at = false;          // single-step random-init variant
  std::size_t warm_epochs = 0;   // clean epochs before the adversarial phase
  double warm_learning_rate = 0.0;  // warm-phase lr override (0 = train.learning_rate)
  double clean_fraction = 0.0;   // leading share of each batch left unattacked
};

/// PGD adversarial training: each minibatch is replaced by adversarial
/// examples generated against the current parameters before the gradient
/// step. fast_at switches to the single-step random-init variant.
/// clean_fraction > 0 mixes the clean and adversarial objectives by leaving
/// that share of every batch unattacked, which anchors clean accuracy when
/// the attacked examples are near-unlearnable.
inline Model adversarial_train(const ModelSpec& spec, const Dataset& data, const Dataset* test,
                               const AdversarialTrainConfig& cfg) {
  if (data.size() == 0) throw std::invalid_argument("adversarial_train: empty dataset");
  if (cfg.attack.epsilon > 0.0) cfg.attack.validate();
  if (cfg.clean_fraction < 0.0 || cfg.clean_fraction > 1.0)
    throw std::invalid_argument("adversarial_train: clean fraction must be in [0,1]");
  Model m = build_model(spec, cfg.train.seed);

  const double warm_lr =
      cfg.warm_learning_rate > 0.0 ? cfg.warm_learning_rate : cfg.train.learning_rate;
  std::vector<MomentumState> states;
  for (auto& [name, t] : m.params)
    states.emplace_back(t.shape, cfg.train.momentum,
                        cfg.warm_epochs > 0 ? warm_lr : cfg.train.learning_rate);

  DenseAttackConfig atk = cfg.attack;
  if (cfg.fast_at) {
    atk.iterations = 1;
    atk.step = atk.epsilon;
    atk.random_init = true;
  }

  for (std::size_t e = 0; e < cfg.warm_epochs + cfg.train.epochs; ++e) {
    const bool adversarial_phase = e >= cfg.warm_epochs;
    if (e == cfg.warm_epochs && cfg.warm_epochs > 0) {
      // fresh optimizer for the adversarial phase; the warm momentum is stale
      states.clear();
      for (auto& [name, t] : m.params)
        states.emplace_back(t.shape, cfg.train.momentum, cfg.train.learning_rate);
    }
    const auto batches = batch_iter(data, cfg.train.batch_size, cfg.train.seed + e + 1);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<Tensor> gsum;
      for (auto& [name, t] : m.params) gsum.push_back(Tensor::zeros(t.shape));
      const std::size_t clean_count = static_cast<std::size_t>(
          std::llround(cfg.clean_fraction * static_cast<double>(batches[b].size())));
      for (std::size_t k = 0; k < batches[b].size(); ++k) {
        const std::size_t idx = batches[b][k];
        Tensor xin = data.images[idx];
        if (adversarial_phase && k >= clean_count && cfg.attack.epsilon > 0.0) {
          DenseAttackConfig per = atk;
          per.seed = cfg.train.seed ^ (e * 0x9e3779b97f4a7c15ULL + b * 1000003ULL + k);
          const DensePerturbation p = pgd(m, xin, data.labels[idx], per);
          xin = clamp(xin + p.delta, 0.0, 1.0);
        }
        Tape tape;
        auto g = forward_logits(m, tape, tape.leaf(xin));
        auto loss = tape.softmax_cross_entropy_smoothed(g.logits, data.labels[idx],
                                                        cfg.train.label_smoothing);
        tape.backward(loss);
        for (std::size_t p = 0; p < gsum.size(); ++p) {
          const Tensor gp = tape.grad(g.params[p]);
          for (std::size_t i = 0; i < gsum[p].size(); ++i) gsum[p].data[i] += gp.data[i];
        }
      }
      const double inv = 1.0 / static_cast<double>(batches[b].size());
      for (auto& g : gsum)
        for (auto& v : g.data) v *= inv;
      clip_gradients(gsum, cfg.train.clip_norm);
      for (std::size_t p = 0; p < gsum.size(); ++p)
        sgd_momentum_step(m.params[p].second, gsum[p], states[p]);
    }
  }
  m.epochs_trained = cfg.warm_epochs + cfg.train.epochs;
  m.test_accuracy = test ? accuracy(m, *test) : 0.0;
  return m;
}

}  // namespace sparsesieve

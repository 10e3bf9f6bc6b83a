#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "sparsesieve/dense_attack.hpp"
#include "sparsesieve/model.hpp"
#include "sparsesieve/numeric.hpp"
#include "sparsesieve/optimizer.hpp"
#include "sparsesieve/tensor.hpp"

namespace sparsesieve {

struct SparseAttackConfig {
  double epsilon = 0.3;       // seed l-inf budget
  double tau = 0.30;          // gate threshold, pixel units
  double a = 0.1;             // surrogate width
  double lambda = 1e-2;       // l0 penalty weight
  std::size_t iterations = 100;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  AttackMode mode = AttackMode::NonTargeted;
  std::size_t check_every = 1;  // candidate-evaluation cadence
  double init_gate = 0.05;      // initial gate height: w starts at tau/eps + init_gate
  bool destructive_projection = false;  // ablation: in-loop w <- relu(w - tau/eps)

  void validate() const {
    if (epsilon <= 0.0) throw std::invalid_argument("sparse attack: epsilon must be > 0");
    if (tau < 0.0) throw std::invalid_argument("sparse attack: tau must be >= 0");
    if (a == 0.0) throw std::invalid_argument("sparse attack: a must be nonzero");
    if (lambda < 0.0) throw std::invalid_argument("sparse attack: lambda must be >= 0");
    if (iterations < 1) throw std::invalid_argument("sparse attack: iterations must be >= 1");
    if (learning_rate <= 0.0) throw std::invalid_argument("sparse attack: learning rate must be > 0");
    if (momentum < 0.0 || momentum >= 1.0)
      throw std::invalid_argument("sparse attack: momentum must be in [0,1)");
    if (check_every < 1) throw std::invalid_argument("sparse attack: check cadence must be >= 1");
    if (init_gate <= 0.0) throw std::invalid_argument("sparse attack: init gate must be > 0");
  }

  double shift() const { return tau / epsilon; }
};

struct SparseResult {
  Tensor delta_star;
  Tensor mask;                 // binary, same shape
  std::size_t l0_elements = 0;
  std::size_t l0_pixels = 0;   // spatial positions with any perturbed channel
  bool success = false;
  std::size_t achieved_label = 0;
  std::size_t iterations_used = 0;
  double wall_time_ms = 0.0;
};

/// Shifted gate pi(w - tau/eps); elements at or below the threshold drop out.
inline Tensor shifted_relu(const Tensor& w, double tau, double epsilon) {
  if (epsilon == 0.0) throw std::invalid_argument("shifted_relu: epsilon must be nonzero");
  const double s = tau / epsilon;
  return map(w, [s](double v) { return v - s > 0.0 ? v - s : 0.0; });
}

/// H(x) = 1 for x > 0, else 0.
inline Tensor heaviside(const Tensor& t) {
  return map(t, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

/// Gaussian surrogate for the Dirac delta: q_a(x) = exp(-(x/a)^2) / (|a| sqrt(pi)).
inline double surrogate_density(double x, double a) {
  if (a == 0.0) throw std::invalid_argument("surrogate_density: a must be nonzero");
  const double z = x / a;
  return std::exp(-z * z) / (std::abs(a) * std::sqrt(M_PI));
}

inline Tensor surrogate_density(const Tensor& t, double a) {
  if (a == 0.0) throw std::invalid_argument("surrogate_density: a must be nonzero");
  return map(t, [a](double v) { return surrogate_density(v, a); });
}

/// |integral q_a(x) phi(x) dx - phi(0)| for each a; the property-suite probe
/// of the surrogate converging to the Dirac delta. Not on the attack path.
inline std::vector<double> dirac_convergence_probe(const std::vector<double>& a_sequence,
                                                   const std::function<double(double)>& phi) {
  std::vector<double> errors;
  for (double a : a_sequence) {
    if (a <= 0.0) throw std::invalid_argument("dirac_convergence_probe: a must be positive");
    const double half = 14.0 * a;  // the Gaussian mass outside is below 1e-80
    const double integral =
        integrate([a, &phi](double x) { return surrogate_density(x, a) * phi(x); }, -half, half,
                  1e-12);
    errors.push_back(std::abs(integral - phi(0.0)));
  }
  return errors;
}

/// Closed-form box-constraint weight: Omega = min(x/eps, (1-x)/eps).
/// Guarantees x + Omega (.) H(pi(w - tau/eps)) (.) delta stays in [0,1]
/// for any |delta| <= eps without clipping.
inline Tensor omega_bound(const Tensor& image, double epsilon) {
  if (epsilon == 0.0) throw std::invalid_argument("omega_bound: epsilon must be nonzero");
  return map(image, [epsilon](double x) {
    return std::min(x / epsilon, (1.0 - x) / epsilon);
  });
}

struct SparseLoss {
  double value = 0.0;       // J_adv
  double data_term = 0.0;   // classification part
  double penalty = 0.0;     // lambda * l0 of the gate
  Tensor grad_w;            // descent direction source
};

/// Evaluates J_adv = J(f(x + pi(w - tau/eps) (.) delta), y) + lambda * sum H(pi(w - tau/eps))
/// and its gradient wrt w. The data term backpropagates through the exact
/// ReLU subgradient; the penalty term substitutes q_a for dH/dx, chained
/// through the same subgradient. apply_shift=false evaluates at w directly
/// (used after the destructive in-loop projection, where the shift has
/// already been absorbed into w).
inline SparseLoss sparse_loss(const Model& m, const Tensor& image, const Tensor& delta,
                              const Tensor& w, std::size_t label, const SparseAttackConfig& cfg,
                              bool apply_shift = true) {
  cfg.validate();
  require_same_shape(image, delta, "sparse_loss");
  require_same_shape(image, w, "sparse_loss");

  const double sgn = cfg.mode == AttackMode::Targeted ? +1.0 : -1.0;

  Tape tape;
  auto wh = tape.leaf(w);
  auto gate = apply_shift ? tape.relu(tape.sub_scalar(wh, cfg.shift())) : tape.relu(wh);
  auto perturbed = tape.add(tape.leaf(image), tape.mul(gate, tape.leaf(delta)));
  auto g = forward_logits(m, tape, perturbed);
  auto ce = tape.softmax_cross_entropy(g.logits, label);

  SparseLoss out;
  out.data_term = sgn * tape.value(ce).data[0];
  tape.backward(ce, sgn);
  out.grad_w = tape.grad(wh);

  // Penalty: lambda * sum_j H(gate_j), surrogate gradient per element.
  const Tensor& gate_v = tape.value(gate);
  std::size_t active = 0;
  for (std::size_t j = 0; j < gate_v.size(); ++j) {
    if (gate_v.data[j] > 0.0) {
      ++active;
      out.grad_w.data[j] += cfg.lambda * surrogate_density(gate_v.data[j], cfg.a);
    }
  }
  out.penalty = cfg.lambda * static_cast<double>(active);
  out.value = out.data_term + out.penalty;
  if (!std::isfinite(out.value)) throw std::runtime_error("sparse_loss: non-finite loss");
  return out;
}

/// Final composition: mask = H(pi(w - tau/eps)), delta* = Omega (.) mask (.) delta.
inline SparseResult extract_final(const Tensor& image, const Tensor& delta, const Tensor& w,
                                  const SparseAttackConfig& cfg) {
  require_same_shape(image, delta, "extract_final");
  require_same_shape(image, w, "extract_final");
  SparseResult r;
  r.mask = heaviside(shifted_relu(w, cfg.tau, cfg.epsilon));
  r.delta_star = omega_bound(image, cfg.epsilon) * r.mask * delta;
  r.l0_elements = count_nonzero(r.delta_star);
  if (image.shape.size() == 3) {
    const std::size_t C = image.shape[0], plane = image.shape[1] * image.shape[2];
    for (std::size_t i = 0; i < plane; ++i) {
      bool any = false;
      for (std::size_t c = 0; c < C; ++c) any = any || r.delta_star.data[c * plane + i] != 0.0;
      if (any) ++r.l0_pixels;
    }
  } else {
    r.l0_pixels = r.l0_elements;
  }
  return r;
}

/// The core loop: gates the dense seed delta with a trainable weight field,
/// descending J_adv by momentum SGD, and keeps the sparsest candidate that
/// still fools the model. label is the true label (non-targeted) or the
/// target label (targeted).
inline SparseResult run_sparse_attack(const Model& m, const Tensor& image, const Tensor& seed_delta,
                                      std::size_t label, const SparseAttackConfig& cfg) {
  cfg.validate();
  require_same_shape(image, seed_delta, "run_sparse_attack");
  if (max_abs(seed_delta) > cfg.epsilon + 1e-12)
    throw std::invalid_argument("run_sparse_attack: seed exceeds the l-inf budget");
  const auto t0 = std::chrono::steady_clock::now();

  const double shift = cfg.shift();
  // Gates start init_gate above the threshold, so every seed element is in
  // the initial extraction mask. Keeping init_gate within the surrogate
  // width leaves the l0 penalty operative from the first iteration.
  Tensor w = Tensor::full(image.shape, shift + cfg.init_gate);
  MomentumState vel(image.shape, cfg.momentum, cfg.learning_rate);

  auto is_success = [&](std::size_t pred) {
    return cfg.mode == AttackMode::Targeted ? pred == label : pred != label;
  };

  SparseResult best;
  bool have_best = false;
  std::size_t iters_at_best = 0;

  auto consider = [&](std::size_t iter) {
    SparseResult cand = extract_final(image, seed_delta, w, cfg);
    cand.achieved_label = predict(m, image + cand.delta_star);
    cand.success = is_success(cand.achieved_label);
    if (cand.success && (!have_best || cand.l0_elements < best.l0_elements)) {
      best = std::move(cand);
      have_best = true;
      iters_at_best = iter;
    }
  };

  for (std::size_t t = 1; t <= cfg.iterations; ++t) {
    SparseLoss loss;
    if (cfg.destructive_projection) {
      w = shifted_relu(w, cfg.tau, cfg.epsilon);  // in-loop reassignment
      loss = sparse_loss(m, image, seed_delta, w, label, cfg, /*apply_shift=*/false);
    } else {
      loss = sparse_loss(m, image, seed_delta, w, label, cfg, /*apply_shift=*/true);
    }
    sgd_momentum_step(w, loss.grad_w, vel);
    if (t % cfg.check_every == 0) consider(t);
  }
  if (cfg.iterations % cfg.check_every != 0) consider(cfg.iterations);

  SparseResult out;
  if (have_best) {
    out = std::move(best);
    out.iterations_used = iters_at_best;
  } else {
    out = extract_final(image, seed_delta, w, cfg);
    out.achieved_label = predict(m, image + out.delta_star);
    out.success = is_success(out.achieved_label);
    out.iterations_used = cfg.iterations;
  }
  out.wall_time_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
  return out;
}

}  // namespace sparsesieve

// Command-line driver: trains classifiers, runs dense and sparse attacks,
// evaluates transferability, sweeps hyperparameters, and runs the
// property-based self test.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <thread>

#include "sparsesieve/data.hpp"
#include "sparsesieve/dense_attack.hpp"
#include "sparsesieve/model.hpp"
#include "sparsesieve/report.hpp"
#include "sparsesieve/sparse_attack.hpp"

namespace fs = std::filesystem;
using namespace sparsesieve;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

// ---------------------------------------------------------------------------
// Dataset resolution: --data directory with MNIST IDX files, or a synthetic
// dataset. SPARSE_SIEVE_DATA provides the default data root.

struct DataOptions {
  std::string data_dir;
  bool synthetic = false;
  std::size_t classes = 10;
  std::size_t per_class = 400;
  std::size_t height = 28, width = 28;
  std::uint64_t data_seed = 11;
};

void add_data_options(CLI::App* cmd, DataOptions& d) {
  cmd->add_option("--data", d.data_dir,
                  "Directory with MNIST IDX files (defaults to $SPARSE_SIEVE_DATA)");
  cmd->add_flag("--synthetic", d.synthetic, "Use the deterministic synthetic dataset");
  cmd->add_option("--classes", d.classes, "Synthetic: class count")->check(CLI::Range(2, 1000));
  cmd->add_option("--per-class", d.per_class, "Synthetic: images per class per split");
  cmd->add_option("--height", d.height, "Synthetic: image height");
  cmd->add_option("--width", d.width, "Synthetic: image width");
  cmd->add_option("--data-seed", d.data_seed, "Synthetic: dataset seed");
}

std::string find_idx(const fs::path& dir, const std::string& stem) {
  for (const char* suffix : {"", ".gz"}) {
    const fs::path p = dir / (stem + suffix);
    if (fs::exists(p)) return p.string();
  }
  throw std::runtime_error("missing dataset file " + (dir / stem).string() +
                           "[.gz]\nFetch the four MNIST IDX files (train-images-idx3-ubyte, "
                           "train-labels-idx1-ubyte, t10k-images-idx3-ubyte, "
                           "t10k-labels-idx1-ubyte) into that directory, or pass --synthetic.");
}

/// Returns {train, test}.
std::pair<Dataset, Dataset> resolve_data(const DataOptions& d) {
  if (d.synthetic) {
    Dataset train =
        synthetic_blobs(d.classes, d.per_class, d.height, d.width, d.data_seed, d.data_seed + 1);
    Dataset test =
        synthetic_blobs(d.classes, std::max<std::size_t>(1, d.per_class / 4), d.height, d.width,
                        d.data_seed, d.data_seed + 7919);
    return {std::move(train), std::move(test)};
  }
  std::string dir = d.data_dir;
  if (dir.empty())
    if (const char* env = std::getenv("SPARSE_SIEVE_DATA")) dir = env;
  if (dir.empty())
    throw std::runtime_error(
        "no dataset: pass --data DIR, set SPARSE_SIEVE_DATA, or use --synthetic");
  if (!fs::is_directory(dir)) throw std::runtime_error("data directory not found: " + dir);
  Dataset train = load_idx(find_idx(dir, "train-images-idx3-ubyte"),
                           find_idx(dir, "train-labels-idx1-ubyte"));
  Dataset test =
      load_idx(find_idx(dir, "t10k-images-idx3-ubyte"), find_idx(dir, "t10k-labels-idx1-ubyte"));
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// JSON config file: flat object of long-option values; command-line flags
// take precedence, built-in defaults lose to both.

void apply_config_file(CLI::App& app, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw CLI::ValidationError("--config", "cannot open config file " + path);
  nlohmann::json cfg;
  try {
    f >> cfg;
  } catch (const std::exception& e) {
    throw CLI::ValidationError("--config", std::string("invalid JSON: ") + e.what());
  }
  std::function<void(CLI::App*)> apply = [&](CLI::App* a) {
    for (CLI::Option* opt : a->get_options()) {
      if (opt->count() > 0) continue;  // explicit flag wins
      const auto& lnames = opt->get_lnames();
      if (lnames.empty()) continue;
      const std::string& name = lnames.front();
      if (!cfg.contains(name)) continue;
      const auto& v = cfg.at(name);
      std::vector<std::string> vals;
      if (v.is_array())
        for (const auto& e : v) vals.push_back(e.is_string() ? e.get<std::string>() : e.dump());
      else
        vals.push_back(v.is_string() ? v.get<std::string>() : v.dump());
      opt->add_result(vals.front());
      for (std::size_t i = 1; i < vals.size(); ++i) opt->add_result(vals[i]);
      opt->run_callback();
    }
    for (CLI::App* sub : a->get_subcommands()) apply(sub);
  };
  apply(&app);
}

// ---------------------------------------------------------------------------
// Shared attack harness.

struct AttackJob {
  std::string attack = "sparse";  // fgsm | ifgsm | pgd | sparse
  AttackMode mode = AttackMode::NonTargeted;
  std::size_t count = 64;
  std::size_t offset = 0;
  std::size_t jobs = 1;
  DenseAttackConfig dense;
  SparseAttackConfig sparse;
};

struct AttackResultSet {
  AttackReport report;
  std::vector<Tensor> clean, adversarial;
  std::vector<std::size_t> true_labels;
};

AttackResultSet run_attack_batch(const Model& m, const Dataset& ds, const AttackJob& job) {
  const std::size_t n = std::min(job.count, ds.size() - std::min(job.offset, ds.size()));
  if (n == 0) throw std::runtime_error("attack: no images selected");
  AttackResultSet out;
  out.report.rows.resize(n);
  out.clean.resize(n);
  out.adversarial.resize(n);
  out.true_labels.resize(n);

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      const std::size_t idx = job.offset + i;
      const Tensor& x = ds.images[idx];
      const std::size_t y_true = ds.labels[idx];
      ReportRow row;
      row.image_id = idx;
      row.attack = job.attack;
      row.mode = job.mode == AttackMode::Targeted ? "targeted" : "non-targeted";
      row.true_label = y_true;
      row.clean_correct = predict(m, x) == y_true;
      Tensor adv = x;
      if (row.clean_correct) {
        std::size_t label = y_true;
        if (job.mode == AttackMode::Targeted) {
          label = least_likely_class(m, x);
          row.target_label = static_cast<long>(label);
        }
        const auto t0 = std::chrono::steady_clock::now();
        if (job.attack == "sparse") {
          SparseAttackConfig scfg = job.sparse;
          scfg.mode = job.mode;
          DenseAttackConfig seed_cfg = job.dense;
          seed_cfg.epsilon = scfg.epsilon;
          seed_cfg.step = std::min(seed_cfg.step, seed_cfg.epsilon);
          DensePerturbation seed =
              job.mode == AttackMode::Targeted
                  ? ifgsm_targeted(m, x, label, seed_cfg)
                  : ifgsm_nontargeted(m, x, y_true, seed_cfg);
          SparseResult r = run_sparse_attack(m, x, seed.delta, label, scfg);
          adv = x + r.delta_star;
          row.success = r.success;
          row.achieved_label = r.achieved_label;
          row.l0_elements = r.l0_elements;
          row.l0_pixels = r.l0_pixels;
          row.iterations = r.iterations_used;
        } else {
          DenseAttackConfig dcfg = job.dense;
          dcfg.mode = job.mode;
          dcfg.seed = job.dense.seed + idx;
          DensePerturbation p;
          if (job.attack == "fgsm")
            p = fgsm(m, x, y_true, dcfg.epsilon, dcfg.clip_to_valid);
          else if (job.attack == "ifgsm")
            p = job.mode == AttackMode::Targeted ? ifgsm_targeted(m, x, label, dcfg)
                                                 : ifgsm_nontargeted(m, x, y_true, dcfg);
          else if (job.attack == "pgd") {
            dcfg.random_init = true;
            p = pgd(m, x, label, dcfg);
          } else
            throw std::runtime_error("unknown attack: " + job.attack);
          adv = clamp(x + p.delta, 0.0, 1.0);
          const std::size_t pred = predict(m, adv);
          row.achieved_label = pred;
          row.success = job.mode == AttackMode::Targeted ? pred == label : pred != y_true;
          Tensor d = adv - x;
          row.l0_elements = count_nonzero(d);
          row.l0_pixels = row.l0_elements;
          row.iterations = dcfg.iterations;
        }
        row.wall_time_ms = std::chrono::duration<double, std::milli>(
                               std::chrono::steady_clock::now() - t0)
                               .count();
        row.confidence = class_confidence(m, adv, row.achieved_label);
      }
      out.report.rows[i] = std::move(row);
      out.clean[i] = x;
      out.adversarial[i] = std::move(adv);
      out.true_labels[i] = y_true;
    }
  };
  if (job.jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < job.jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  out.report.aggregates = aggregate_rows(out.report.rows);
  return out;
}

void write_report_file(const AttackReport& rep, const std::string& path,
                       const std::string& format) {
  if (format == "csv")
    write_report_csv(rep, path);
  else if (format == "json")
    write_report_json(rep, path);
  else
    throw std::runtime_error("unknown report format: " + format);
}

void write_curve_csv(const std::vector<EpochStats>& curve, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << "epoch,train_accuracy,test_accuracy\r\n";
  for (const auto& e : curve)
    f << e.epoch << ',' << e.train_accuracy << ',' << e.test_accuracy << "\r\n";
}

// ---------------------------------------------------------------------------
// Self-test suites (Theorem 1 probe, Proposition 1/2 fuzz, gradient check).

struct SuiteResult {
  std::string name;
  std::size_t cases = 0, failures = 0;
  std::string note;
};

SuiteResult suite_box_constraint(std::size_t tuples, bool inject_eps_zero) {
  SuiteResult s{"box-constraint (validity fuzz)"};
  std::mt19937_64 rng(20240701);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> ueps(1e-3, 1.0);
  std::uniform_real_distribution<double> uw(-3.0, 3.0);
  const std::size_t d = 32;
  for (std::size_t t = 0; t < tuples; ++t) {
    const double eps = inject_eps_zero ? 0.0 : ueps(rng);
    const double tau = u01(rng) * 0.5;
    Tensor x = Tensor::zeros({d});
    Tensor delta = Tensor::zeros({d});
    Tensor w = Tensor::zeros({d});
    for (std::size_t j = 0; j < d; ++j) {
      x.data[j] = u01(rng);
      delta.data[j] = (2.0 * u01(rng) - 1.0) * eps;
      w.data[j] = uw(rng);
    }
    ++s.cases;
    try {
      const Tensor mask = heaviside(shifted_relu(w, tau, eps));
      const Tensor adv = x + omega_bound(x, eps) * mask * delta;
      for (double v : adv.data)
        if (v < -1e-12 || v > 1.0 + 1e-12) {
          ++s.failures;
          break;
        }
    } catch (const std::exception&) {
      ++s.failures;
    }
  }
  return s;
}

SuiteResult suite_sparsity_chain(std::size_t tuples) {
  SuiteResult s{"sparsity chain (l0 inequality fuzz)"};
  std::mt19937_64 rng(20240702);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> uw(-3.0, 3.0);
  const std::size_t d = 32;
  for (std::size_t t = 0; t < tuples; ++t) {
    const double eps = 1e-3 + u01(rng);
    const double tau = u01(rng) * 0.5;
    Tensor w = Tensor::zeros({d}), delta = Tensor::zeros({d});
    for (std::size_t j = 0; j < d; ++j) {
      w.data[j] = uw(rng);
      delta.data[j] = (u01(rng) < 0.2) ? 0.0 : (2.0 * u01(rng) - 1.0) * eps;
    }
    ++s.cases;
    const Tensor relu_w = map(w, [](double v) { return v > 0.0 ? v : 0.0; });
    const std::size_t a = count_nonzero(shifted_relu(w, tau, eps) * delta);
    const std::size_t b = count_nonzero(relu_w * delta);
    const std::size_t c = count_nonzero(w * delta);
    if (!(a <= b && b <= c)) ++s.failures;
  }
  return s;
}

SuiteResult suite_dirac_probe(std::ostream& os) {
  SuiteResult s{"dirac surrogate probe"};
  const std::vector<double> as = {1.0, 0.5, 0.1, 0.05};
  for (double a : as) {
    ++s.cases;
    const double mass =
        integrate([a](double x) { return surrogate_density(x, a); }, -14.0 * a, 14.0 * a, 1e-12);
    if (std::abs(mass - 1.0) > 1e-6) ++s.failures;
  }
  const auto errs =
      dirac_convergence_probe(as, [](double x) { return std::exp(-x * x); });
  os << "  quadrature errors |integral q_a phi - phi(0)| for phi=exp(-x^2):\n";
  for (std::size_t i = 0; i < as.size(); ++i)
    os << "    a=" << as[i] << " -> " << errs[i] << "\n";
  ++s.cases;
  for (std::size_t i = 1; i < errs.size(); ++i)
    if (!(errs[i] < errs[i - 1])) ++s.failures;
  return s;
}

SuiteResult suite_gradcheck() {
  SuiteResult s{"gradient check (finite differences)"};
  ModelSpec spec;
  spec.arch = Arch::Mlp;
  spec.height = 4;
  spec.width = 4;
  spec.hidden = 8;
  spec.classes = 3;
  Model m = build_model(spec, 99);
  std::mt19937_64 rng(5);
  Tensor x = Tensor::zeros({1, 4, 4});
  fill_uniform(x, rng, 0.05, 0.95);
  const std::size_t label = 1;
  double base;
  Tensor g = input_gradient(m, x, label, &base);
  const double h = 1e-5;
  for (std::size_t j = 0; j < x.size(); ++j) {
    ++s.cases;
    Tensor xp = x, xm = x;
    xp.data[j] += h;
    xm.data[j] -= h;
    Tape tp, tm;
    auto gp = forward_logits(m, tp, tp.leaf(xp));
    auto gm = forward_logits(m, tm, tm.leaf(xm));
    const double fd = (tp.value(tp.softmax_cross_entropy(gp.logits, label)).data[0] -
                       tm.value(tm.softmax_cross_entropy(gm.logits, label)).data[0]) /
                      (2 * h);
    const double denom = std::max(1e-8, std::max(std::abs(fd), std::abs(g.data[j])));
    if (std::abs(fd - g.data[j]) / denom > 1e-4) ++s.failures;
  }
  return s;
}

int cmd_selftest(std::size_t tuples, bool inject_eps_zero) {
  std::vector<SuiteResult> suites;
  suites.push_back(suite_box_constraint(tuples, inject_eps_zero));
  suites.push_back(suite_sparsity_chain(tuples));
  suites.push_back(suite_dirac_probe(std::cout));
  suites.push_back(suite_gradcheck());
  bool ok = true;
  for (const auto& s : suites) {
    const bool pass = s.failures == 0;
    ok = ok && pass;
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << s.name << ": " << s.cases - s.failures << "/"
              << s.cases << " cases\n";
  }
  return ok ? kExitOk : kExitRuntime;
}

std::vector<double> parse_grid(const std::string& spec) {
  std::vector<double> grid;
  if (spec.find(':') != std::string::npos) {
    double lo, hi, step;
    char c1, c2;
    std::istringstream is(spec);
    if (!(is >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':' || step <= 0)
      throw std::runtime_error("bad grid spec (want lo:hi:step): " + spec);
    for (double v = lo; v <= hi + 1e-12; v += step) grid.push_back(v);
  } else {
    std::istringstream is(spec);
    std::string tok;
    while (std::getline(is, tok, ',')) grid.push_back(std::stod(tok));
  }
  if (grid.empty()) throw std::runtime_error("empty hyperparameter grid");
  return grid;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse-sieve: sparse adversarial attack toolkit"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (flags take precedence)");

  // ---- train / robust-train -------------------------------------------
  DataOptions train_data, robust_data;
  std::string arch = "tiny-cnn", out_ckpt = "model.ckpt", curve_path;
  TrainConfig tc;
  auto* cmd_train = app.add_subcommand("train", "Train a classifier and write a checkpoint");
  add_data_options(cmd_train, train_data);
  cmd_train->add_option("--arch", arch, "mlp | tiny-cnn");
  cmd_train->add_option("--epochs", tc.epochs);
  cmd_train->add_option("--batch", tc.batch_size)->check(CLI::PositiveNumber);
  cmd_train->add_option("--lr", tc.learning_rate)->check(CLI::PositiveNumber);
  cmd_train->add_option("--momentum", tc.momentum)->check(CLI::Range(0.0, 0.999));
  cmd_train->add_option("--label-smoothing", tc.label_smoothing)->check(CLI::Range(0.0, 0.99));
  cmd_train->add_option("--clip-norm", tc.clip_norm, "Gradient clip (0 = off)");
  cmd_train->add_option("--seed", tc.seed);
  cmd_train->add_option("--out", out_ckpt, "Checkpoint path");
  cmd_train->add_option("--curve", curve_path, "Accuracy-curve CSV path");

  AdversarialTrainConfig rtc;
  std::string robust_out = "robust.ckpt";
  auto* cmd_robust =
      app.add_subcommand("robust-train", "Adversarial training (PGD-AT, or Fast-AT)");
  add_data_options(cmd_robust, robust_data);
  cmd_robust->add_option("--epochs", rtc.train.epochs);
  cmd_robust->add_option("--batch", rtc.train.batch_size)->check(CLI::PositiveNumber);
  cmd_robust->add_option("--lr", rtc.train.learning_rate)->check(CLI::PositiveNumber);
  cmd_robust->add_option("--momentum", rtc.train.momentum)->check(CLI::Range(0.0, 0.999));
  cmd_robust->add_option("--seed", rtc.train.seed);
  cmd_robust->add_option("--attack-eps", rtc.attack.epsilon, "PGD budget (0 = plain training)");
  cmd_robust->add_option("--attack-step", rtc.attack.step);
  cmd_robust->add_option("--attack-iters", rtc.attack.iterations);
  cmd_robust->add_option("--label-smoothing", rtc.train.label_smoothing)
      ->check(CLI::Range(0.0, 0.99));
  cmd_robust->add_option("--clip-norm", rtc.train.clip_norm, "Gradient clip (0 = off)");
  cmd_robust->add_option("--warm-epochs", rtc.warm_epochs, "Clean epochs before the PGD phase");
  cmd_robust->add_option("--warm-lr", rtc.warm_learning_rate,
                         "Warm-phase learning rate (0 = --lr)");
  cmd_robust->add_option("--clean-frac", rtc.clean_fraction, "Unattacked share of each batch")
      ->check(CLI::Range(0.0, 1.0));
  cmd_robust->add_flag("--fast-at", rtc.fast_at, "Single-step random-init variant");
  cmd_robust->add_option("--out", robust_out);

  // ---- attack ----------------------------------------------------------
  DataOptions attack_data;
  AttackJob job;
  std::string model_path, mode_str = "non-targeted", target_rule = "least-likely";
  std::string report_path = "report.csv", report_format = "csv", overlay_prefix;
  auto* cmd_attack = app.add_subcommand("attack", "Run an attack over test images");
  cmd_attack->add_option("attack-name", job.attack, "fgsm | ifgsm | pgd | sparse")->required();
  cmd_attack->add_option("--model", model_path, "Checkpoint")->required();
  add_data_options(cmd_attack, attack_data);
  cmd_attack->add_option("--mode", mode_str, "non-targeted | targeted");
  cmd_attack->add_option("--target", target_rule, "Targeted label rule (least-likely)");
  cmd_attack->add_option("-n,--count", job.count, "Number of test images");
  cmd_attack->add_option("--offset", job.offset, "First test-image index");
  cmd_attack->add_option("--jobs", job.jobs, "Parallel per-image workers")
      ->check(CLI::PositiveNumber);
  cmd_attack->add_option("--eps", job.sparse.epsilon, "l-inf budget (dense and sparse seed)");
  cmd_attack->add_option("--alpha", job.dense.step, "Dense step size");
  cmd_attack->add_option("--iterations", job.dense.iterations, "Dense/seed iterations");
  cmd_attack->add_option("--restarts", job.dense.restarts, "PGD restarts");
  cmd_attack->add_option("--tau", job.sparse.tau, "Sparse gate threshold (pixel units)");
  cmd_attack->add_option("--a", job.sparse.a, "Surrogate width");
  cmd_attack->add_option("--lambda", job.sparse.lambda, "l0 penalty weight");
  cmd_attack->add_option("--eta", job.sparse.learning_rate, "Sparse learning rate");
  cmd_attack->add_option("--mu", job.sparse.momentum, "Sparse momentum");
  cmd_attack->add_option("--sparse-iters", job.sparse.iterations, "Sparse iterations T");
  cmd_attack->add_option("--check-every", job.sparse.check_every, "Candidate cadence k");
  cmd_attack->add_option("--init-gate", job.sparse.init_gate, "Initial gate height");
  cmd_attack->add_flag("--destructive", job.sparse.destructive_projection,
                       "In-loop destructive projection (ablation)");
  cmd_attack->add_option("--seed", job.dense.seed, "Attack RNG seed");
  cmd_attack->add_option("--out", report_path, "Report path");
  cmd_attack->add_option("--format", report_format, "csv | json");
  cmd_attack->add_option("--overlay", overlay_prefix, "Write netpbm overlay triples (prefix)");

  // ---- transfer --------------------------------------------------------
  DataOptions transfer_data;
  std::vector<std::string> transfer_models;
  AttackJob tjob;
  std::string transfer_out = "transfer.csv";
  auto* cmd_transfer =
      app.add_subcommand("transfer", "Cross-model fooling-rate matrix for the sparse attack");
  cmd_transfer->add_option("--models", transfer_models, "Two or more checkpoints")->expected(-1);
  add_data_options(cmd_transfer, transfer_data);
  cmd_transfer->add_option("-n,--count", tjob.count);
  cmd_transfer->add_option("--eps", tjob.sparse.epsilon);
  cmd_transfer->add_option("--iterations", tjob.dense.iterations);
  cmd_transfer->add_option("--tau", tjob.sparse.tau);
  cmd_transfer->add_option("--a", tjob.sparse.a);
  cmd_transfer->add_option("--lambda", tjob.sparse.lambda);
  cmd_transfer->add_option("--eta", tjob.sparse.learning_rate);
  cmd_transfer->add_option("--sparse-iters", tjob.sparse.iterations);
  cmd_transfer->add_option("--init-gate", tjob.sparse.init_gate);
  cmd_transfer->add_option("--jobs", tjob.jobs)->check(CLI::PositiveNumber);
  cmd_transfer->add_option("--out", transfer_out);

  // ---- selftest --------------------------------------------------------
  std::size_t selftest_tuples = 100000;
  bool inject_eps_zero = false;
  auto* cmd_self = app.add_subcommand("selftest", "Run the property suites");
  cmd_self->add_option("--tuples", selftest_tuples, "Fuzz tuples per suite");
  cmd_self->add_flag("--inject-epsilon-zero", inject_eps_zero,
                     "Negative control: feed the validity suite an eps=0 fixture");

  // ---- sweep -----------------------------------------------------------
  DataOptions sweep_data;
  AttackJob sjob;
  std::string sweep_model, sweep_param = "tau", sweep_grid_spec, sweep_out = "sweep.csv";
  auto* cmd_sweep = app.add_subcommand("sweep", "Sweep a sparse hyperparameter (a | lambda | tau)");
  cmd_sweep->add_option("--model", sweep_model)->required();
  add_data_options(cmd_sweep, sweep_data);
  cmd_sweep->add_option("--param", sweep_param, "a | lambda | tau");
  cmd_sweep->add_option("--grid", sweep_grid_spec, "lo:hi:step or comma list")->required();
  cmd_sweep->add_option("-n,--count", sjob.count);
  cmd_sweep->add_option("--eps", sjob.sparse.epsilon);
  cmd_sweep->add_option("--iterations", sjob.dense.iterations);
  cmd_sweep->add_option("--sparse-iters", sjob.sparse.iterations);
  cmd_sweep->add_option("--init-gate", sjob.sparse.init_gate);
  cmd_sweep->add_option("--jobs", sjob.jobs)->check(CLI::PositiveNumber);
  cmd_sweep->add_option("--out", sweep_out);

  try {
    app.parse(argc, argv);
    if (!config_path.empty()) apply_config_file(app, config_path);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*cmd_train) {
      auto [train_set, test_set] = resolve_data(train_data);
      ModelSpec spec;
      spec.arch = arch_from_name(arch);
      spec.channels = train_set.channels;
      spec.height = train_set.height;
      spec.width = train_set.width;
      spec.classes = train_set.classes;
      Model m = build_model(spec, tc.seed);
      const auto curve = train(m, train_set, &test_set, tc);
      save_checkpoint(m, out_ckpt);
      if (!curve_path.empty()) write_curve_csv(curve, curve_path);
      std::cout << "trained " << arch << ": test accuracy " << m.test_accuracy << "\n"
                << "checkpoint: " << out_ckpt << "\n";
    } else if (*cmd_robust) {
      auto [train_set, test_set] = resolve_data(robust_data);
      ModelSpec spec;
      spec.arch = Arch::TinyCnn;
      spec.channels = train_set.channels;
      spec.height = train_set.height;
      spec.width = train_set.width;
      spec.classes = train_set.classes;
      rtc.attack.step = std::min(rtc.attack.step, std::max(rtc.attack.epsilon, 1e-9));
      rtc.attack.random_init = true;
      Model m = adversarial_train(spec, train_set, &test_set, rtc);
      save_checkpoint(m, robust_out);
      std::cout << "robust model (" << (rtc.fast_at ? "Fast-AT" : "PGD-AT")
                << "): clean test accuracy " << m.test_accuracy << "\n"
                << "checkpoint: " << robust_out << "\n";
    } else if (*cmd_attack) {
      if (mode_str != "non-targeted" && mode_str != "targeted")
        throw CLI::ValidationError("--mode", "must be non-targeted or targeted");
      if (target_rule != "least-likely")
        throw CLI::ValidationError("--target", "only least-likely is supported");
      job.mode = mode_str == "targeted" ? AttackMode::Targeted : AttackMode::NonTargeted;
      job.dense.epsilon = job.sparse.epsilon;
      job.dense.step = std::min(job.dense.step, job.dense.epsilon);
      job.dense.validate();
      job.sparse.validate();
      auto [train_set, test_set] = resolve_data(attack_data);
      (void)train_set;
      const Model m = load_checkpoint(model_path);
      AttackResultSet rs = run_attack_batch(m, test_set, job);
      write_report_file(rs.report, report_path, report_format);
      if (!overlay_prefix.empty()) {
        for (std::size_t i = 0; i < rs.clean.size(); ++i) {
          if (!rs.report.rows[i].clean_correct) continue;
          export_overlay(rs.clean[i], rs.adversarial[i] - rs.clean[i],
                         overlay_prefix + "_" + std::to_string(rs.report.rows[i].image_id));
        }
      }
      std::cout << "attack " << job.attack << " (" << mode_str << "): fooling rate "
                << rs.report.aggregates.fooling_rate << " over " << rs.report.aggregates.attempts
                << " attempts, median l0 " << rs.report.aggregates.median_l0_elements << "\n"
                << "report: " << report_path << "\n";
    } else if (*cmd_self) {
      return cmd_selftest(selftest_tuples, inject_eps_zero);
    } else if (*cmd_transfer) {
      if (transfer_models.size() < 2)
        throw CLI::ValidationError("--models", "need at least 2 checkpoints");
      auto [train_set, test_set] = resolve_data(transfer_data);
      (void)train_set;
      std::vector<Model> models;
      for (const auto& p : transfer_models) models.push_back(load_checkpoint(p));
      std::vector<const Model*> ptrs;
      std::vector<std::string> names;
      std::vector<std::vector<Tensor>> clean_sets, adv_sets;
      std::vector<std::vector<std::size_t>> label_sets;
      tjob.attack = "sparse";
      tjob.dense.epsilon = tjob.sparse.epsilon;
      tjob.dense.step = std::min(tjob.dense.step, tjob.dense.epsilon);
      tjob.sparse.validate();
      for (std::size_t i = 0; i < models.size(); ++i) {
        ptrs.push_back(&models[i]);
        names.push_back(fs::path(transfer_models[i]).filename().string());
        AttackResultSet rs = run_attack_batch(models[i], test_set, tjob);
        clean_sets.push_back(std::move(rs.clean));
        adv_sets.push_back(std::move(rs.adversarial));
        label_sets.push_back(std::move(rs.true_labels));
      }
      const TransferMatrix tm = transfer_matrix(ptrs, names, clean_sets, adv_sets, label_sets);
      std::ofstream f(transfer_out, std::ios::binary);
      if (!f) throw std::runtime_error("cannot open " + transfer_out);
      f << "source";
      for (const auto& nm : tm.model_names) f << ',' << detail::csv_escape(nm);
      f << "\r\n";
      for (std::size_t i = 0; i < tm.rates.size(); ++i) {
        f << detail::csv_escape(tm.model_names[i]);
        for (std::size_t j = 0; j < tm.rates[i].size(); ++j)
          f << ',' << tm.rates[i][j] << (i == j ? "*" : "");
        f << "\r\n";
      }
      std::cout << "transfer matrix written to " << transfer_out << " (diagonal = white-box)\n";
    } else if (*cmd_sweep) {
      const std::vector<double> grid = parse_grid(sweep_grid_spec);
      auto [train_set, test_set] = resolve_data(sweep_data);
      (void)train_set;
      const Model m = load_checkpoint(sweep_model);
      sjob.attack = "sparse";
      sjob.dense.epsilon = sjob.sparse.epsilon;
      sjob.dense.step = std::min(sjob.dense.step, sjob.dense.epsilon);
      std::ofstream f(sweep_out, std::ios::binary);
      if (!f) throw std::runtime_error("cannot open " + sweep_out);
      f << sweep_param << ",fooling_rate,median_l0_elements,mean_wall_time_ms\r\n";
      std::vector<double> medians, rates;
      for (double v : grid) {
        AttackJob g = sjob;
        if (sweep_param == "a")
          g.sparse.a = v;
        else if (sweep_param == "lambda")
          g.sparse.lambda = v;
        else if (sweep_param == "tau")
          g.sparse.tau = v;
        else
          throw std::runtime_error("sweep parameter must be a, lambda, or tau");
        AttackResultSet rs = run_attack_batch(m, test_set, g);
        const auto& agg = rs.report.aggregates;
        f << v << ',' << agg.fooling_rate << ',' << agg.median_l0_elements << ','
          << agg.mean_wall_time_ms << "\r\n";
        medians.push_back(agg.median_l0_elements);
        rates.push_back(agg.fooling_rate);
      }
      if (grid.size() > 1) {
        const bool med_down =
            std::is_sorted(medians.rbegin(), medians.rend());
        std::cout << "sweep over " << sweep_param << " (" << grid.size() << " points): median l0 "
                  << (med_down ? "non-increasing" : "not monotone") << "\n";
      }
      std::cout << "sweep written to " << sweep_out << "\n";
    }
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

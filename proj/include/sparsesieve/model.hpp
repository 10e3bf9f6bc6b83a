#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sparsesieve/data.hpp"
#include "sparsesieve/optimizer.hpp"
#include "sparsesieve/tape.hpp"
#include "sparsesieve/tensor.hpp"

namespace sparsesieve {

enum class Arch { Mlp, TinyCnn };

inline std::string arch_name(Arch a) { return a == Arch::Mlp ? "mlp" : "tiny-cnn"; }
inline Arch arch_from_name(const std::string& s) {
  if (s == "mlp") return Arch::Mlp;
  if (s == "tiny-cnn") return Arch::TinyCnn;
  throw std::invalid_argument("unknown architecture: " + s);
}

struct ModelSpec {
  Arch arch = Arch::Mlp;
  std::size_t channels = 1, height = 28, width = 28;
  std::size_t classes = 10;
  std::size_t hidden = 128;  // mlp only

  std::size_t input_size() const { return channels * height * width; }

  void validate() const {
    if (channels == 0 || height == 0 || width == 0 || classes < 2)
      throw std::invalid_argument("model spec: invalid extents");
    if (arch == Arch::Mlp && hidden == 0)
      throw std::invalid_argument("model spec: mlp hidden size must be positive");
    if (arch == Arch::TinyCnn && (height % 4 != 0 || width % 4 != 0))
      throw std::invalid_argument("model spec: tiny-cnn needs extents divisible by 4");
  }
};

struct Checkpoint;

/// A classifier with named parameter tensors. Immutable once trained;
/// attacks share a const reference across threads.
struct Model {
  ModelSpec spec;
  std::vector<std::pair<std::string, Tensor>> params;

  // training metadata, carried into checkpoints
  std::uint64_t seed = 0;
  std::size_t epochs_trained = 0;
  double test_accuracy = 0.0;

  Tensor& param(const std::string& name) {
    for (auto& [n, t] : params)
      if (n == name) return t;
    throw std::out_of_range("no parameter named " + name);
  }
  const Tensor& param(const std::string& name) const {
    return const_cast<Model*>(this)->param(name);
  }
};

constexpr std::size_t kConv1Filters = 8;
constexpr std::size_t kConv2Filters = 16;

/// Deterministic uniform fan-in initialization.
inline Model build_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Model m;
  m.spec = spec;
  m.seed = seed;
  std::mt19937_64 rng(seed);
  auto init = [&rng](Shape shape, std::size_t fan_in) {
    Tensor t = Tensor::zeros(std::move(shape));
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    fill_uniform(t, rng, -s, s);
    return t;
  };
  const std::size_t d = spec.input_size();
  if (spec.arch == Arch::Mlp) {
    m.params.emplace_back("fc1.w", init({spec.hidden, d}, d));
    m.params.emplace_back("fc1.b", Tensor::zeros({spec.hidden, 1}));
    m.params.emplace_back("fc2.w", init({spec.classes, spec.hidden}, spec.hidden));
    m.params.emplace_back("fc2.b", Tensor::zeros({spec.classes, 1}));
  } else {
    const std::size_t c = spec.channels;
    m.params.emplace_back("conv1.w", init({kConv1Filters, c, 3, 3}, c * 9));
    m.params.emplace_back("conv1.b", Tensor::zeros({kConv1Filters}));
    m.params.emplace_back("conv2.w", init({kConv2Filters, kConv1Filters, 3, 3}, kConv1Filters * 9));
    m.params.emplace_back("conv2.b", Tensor::zeros({kConv2Filters}));
    const std::size_t flat = kConv2Filters * (spec.height / 4) * (spec.width / 4);
    m.params.emplace_back("fc.w", init({spec.classes, flat}, flat));
    m.params.emplace_back("fc.b", Tensor::zeros({spec.classes, 1}));
  }
  return m;
}

/// Handles of one recorded forward pass; params line up with model.params.
struct ForwardGraph {
  Tape::Handle input = -1;
  std::vector<Tape::Handle> params;
  Tape::Handle logits = -1;  // 1-D [classes]
};

/// Records the classifier forward pass on the tape starting from an
/// already-recorded input handle shaped [C,H,W].
inline ForwardGraph forward_logits(const Model& m, Tape& tape, Tape::Handle input) {
  const ModelSpec& s = m.spec;
  if (tape.value(input).shape != Shape{s.channels, s.height, s.width})
    throw std::invalid_argument("forward_logits: input shape mismatch");
  ForwardGraph g;
  g.input = input;
  for (const auto& [name, t] : m.params) g.params.push_back(tape.leaf(t));
  if (s.arch == Arch::Mlp) {
    auto x = tape.reshape(input, {s.input_size(), 1});
    auto h = tape.relu(tape.add(tape.matmul(g.params[0], x), g.params[1]));
    auto z = tape.add(tape.matmul(g.params[2], h), g.params[3]);
    g.logits = tape.reshape(z, {s.classes});
  } else {
    auto h1 = tape.maxpool2(tape.relu(tape.channel_bias(
        tape.conv2d(input, g.params[0], 1, 1), g.params[1])));
    auto h2 = tape.maxpool2(tape.relu(tape.channel_bias(
        tape.conv2d(h1, g.params[2], 1, 1), g.params[3])));
    const std::size_t flat = kConv2Filters * (s.height / 4) * (s.width / 4);
    auto z = tape.add(tape.matmul(g.params[4], tape.reshape(h2, {flat, 1})), g.params[5]);
    g.logits = tape.reshape(z, {s.classes});
  }
  return g;
}

inline Tensor logits_of(const Model& m, const Tensor& image) {
  Tape tape;
  auto g = forward_logits(m, tape, tape.leaf(image));
  return tape.value(g.logits);
}

/// Argmax with ties broken toward the lowest class index.
inline std::size_t predict(const Model& m, const Tensor& image) {
  return argmax_lowest(logits_of(m, image));
}

/// Argmin of the logits; the targeted-attack label rule.
inline std::size_t least_likely_class(const Model& m, const Tensor& image) {
  return argmin_lowest(logits_of(m, image));
}

inline double accuracy(const Model& m, const Dataset& ds) {
  if (ds.size() == 0) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (predict(m, ds.images[i]) == ds.labels[i]) ++ok;
  return static_cast<double>(ok) / static_cast<double>(ds.size());
}

struct TrainConfig {
  std::size_t epochs = 5;
  std::size_t batch_size = 256;
  double learning_rate = 0.1;
  double momentum = 0.9;
  double label_smoothing = 0.0;
  double clip_norm = 0.0;  // global-l2 gradient clip per batch; 0 disables
  std::uint64_t seed = 1;
};

/// Scales the batch gradient so its global l2 norm is at most clip_norm.
inline void clip_gradients(std::vector<Tensor>& grads, double clip_norm) {
  if (clip_norm <= 0.0) return;
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g.data) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm <= clip_norm) return;
  const double s = clip_norm / norm;
  for (auto& g : grads)
    for (double& v : g.data) v *= s;
}

struct EpochStats {
  std::size_t epoch = 0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

/// Minibatch SGD with momentum; deterministic given the config seed.
/// test may be null (test accuracy then reported as 0).
inline std::vector<EpochStats> train(Model& m, const Dataset& data, const Dataset* test,
                                     const TrainConfig& cfg) {
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
  data.validate();
  std::vector<MomentumState> states;
  for (auto& [name, t] : m.params) states.emplace_back(t.shape, cfg.momentum, cfg.learning_rate);

  std::vector<EpochStats> curve;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto batches = batch_iter(data, cfg.batch_size, cfg.seed + e + 1);
    for (const auto& batch : batches) {
      std::vector<Tensor> gsum;
      for (auto& [name, t] : m.params) gsum.push_back(Tensor::zeros(t.shape));
      for (std::size_t idx : batch) {
        Tape tape;
        auto g = forward_logits(m, tape, tape.leaf(data.images[idx]));
        auto loss = tape.softmax_cross_entropy_smoothed(g.logits, data.labels[idx],
                                                        cfg.label_smoothing);
        tape.backward(loss);
        for (std::size_t p = 0; p < gsum.size(); ++p) {
          const Tensor gp = tape.grad(g.params[p]);
          for (std::size_t i = 0; i < gsum[p].size(); ++i) gsum[p].data[i] += gp.data[i];
        }
      }
      const double inv = 1.0 / static_cast<double>(batch.size());
      for (auto& g : gsum)
        for (auto& v : g.data) v *= inv;
      clip_gradients(gsum, cfg.clip_norm);
      for (std::size_t p = 0; p < gsum.size(); ++p)
        sgd_momentum_step(m.params[p].second, gsum[p], states[p]);
    }
    EpochStats st;
    st.epoch = e + 1;
    st.train_accuracy = accuracy(m, data);
    st.test_accuracy = test ? accuracy(m, *test) : 0.0;
    curve.push_back(st);
  }
  m.epochs_trained += cfg.epochs;
  if (!curve.empty()) m.test_accuracy = curve.back().test_accuracy;
  return curve;
}

// ---------------------------------------------------------------------------
// Checkpoint container: JSON header (spec + metadata + parameter table)
// followed by raw little-endian float64 blocks, one per parameter.

constexpr char kCheckpointMagic[8] = {'S', 'S', 'V', 'C', 'K', 'P', 'T', '1'};
constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const Model& m, const std::string& path) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["spec"] = {{"arch", arch_name(m.spec.arch)},
                    {"channels", m.spec.channels},
                    {"height", m.spec.height},
                    {"width", m.spec.width},
                    {"classes", m.spec.classes},
                    {"hidden", m.spec.hidden}};
  header["meta"] = {{"seed", m.seed},
                    {"epochs", m.epochs_trained},
                    {"test_accuracy", m.test_accuracy}};
  nlohmann::json ptab = nlohmann::json::array();
  for (const auto& [name, t] : m.params) ptab.push_back({{"name", name}, {"shape", t.shape}});
  header["params"] = ptab;

  const std::string hs = header.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint32_t len = static_cast<std::uint32_t>(hs.size());
  f.write(reinterpret_cast<const char*>(&len), 4);
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, t] : m.params)
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  if (!f.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  std::uint32_t len = 0;
  if (!f.read(reinterpret_cast<char*>(&len), 4))
    throw std::runtime_error("load_checkpoint: truncated header in " + path);
  std::string hs(len, '\0');
  if (!f.read(hs.data(), len)) throw std::runtime_error("load_checkpoint: truncated header");
  nlohmann::json header = nlohmann::json::parse(hs);
  if (header.at("format_version").get<int>() != kCheckpointVersion)
    throw std::runtime_error("load_checkpoint: unsupported format version");

  Model m;
  const auto& js = header.at("spec");
  m.spec.arch = arch_from_name(js.at("arch").get<std::string>());
  m.spec.channels = js.at("channels").get<std::size_t>();
  m.spec.height = js.at("height").get<std::size_t>();
  m.spec.width = js.at("width").get<std::size_t>();
  m.spec.classes = js.at("classes").get<std::size_t>();
  m.spec.hidden = js.at("hidden").get<std::size_t>();
  m.spec.validate();
  m.seed = header.at("meta").at("seed").get<std::uint64_t>();
  m.epochs_trained = header.at("meta").at("epochs").get<std::size_t>();
  m.test_accuracy = header.at("meta").at("test_accuracy").get<double>();

  Model ref = build_model(m.spec, 0);  // shape reference
  const auto& ptab = header.at("params");
  if (ptab.size() != ref.params.size())
    throw std::runtime_error("load_checkpoint: parameter table mismatch");
  for (std::size_t p = 0; p < ptab.size(); ++p) {
    const std::string name = ptab[p].at("name").get<std::string>();
    const Shape shape = ptab[p].at("shape").get<Shape>();
    if (name != ref.params[p].first || shape != ref.params[p].second.shape)
      throw std::runtime_error("load_checkpoint: parameter shape mismatch for " + name);
    Tensor t = Tensor::zeros(shape);
    if (!f.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double))))
      throw std::runtime_error("load_checkpoint: truncated parameter payload");
    m.params.emplace_back(name, std::move(t));
  }
  char extra;
  if (f.read(&extra, 1)) throw std::runtime_error("load_checkpoint: trailing bytes in " + path);
  return m;
}

}  // namespace sparsesieve

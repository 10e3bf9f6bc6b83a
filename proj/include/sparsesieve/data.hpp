#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparsesieve/tensor.hpp"

namespace sparsesieve {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// A classification dataset. Images are flat [C,H,W] tensors with every
/// pixel in [0,1]; labels index into [0, classes).
struct Dataset {
  std::size_t channels = 1, height = 0, width = 0;
  std::size_t classes = 0;
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  std::string provenance;  // "mnist" | "synthetic"

  std::size_t size() const { return images.size(); }
  Shape image_shape() const { return {channels, height, width}; }

  void validate() const {
    if (images.size() != labels.size())
      throw std::runtime_error("dataset: image/label count mismatch");
    for (std::size_t l : labels)
      if (l >= classes) throw std::runtime_error("dataset: label exceeds class count");
  }
};

namespace detail {

inline std::vector<unsigned char> read_file_maybe_gz(const std::string& path) {
  const bool gz = path.size() > 3 && path.substr(path.size() - 3) == ".gz";
  std::vector<unsigned char> bytes;
  if (gz) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("cannot open " + path);
    unsigned char buf[1 << 16];
    int n;
    while ((n = gzread(f, buf, sizeof(buf))) > 0) bytes.insert(bytes.end(), buf, buf + n);
    const bool bad = n < 0;
    gzclose(f);
    if (bad) throw std::runtime_error("gzip read error in " + path);
  } else {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    bytes.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  }
  return bytes;
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off) {
  if (off + 4 > b.size()) throw std::runtime_error("idx: truncated header");
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

inline void write_be32(std::ofstream& f, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

/// Loads an MNIST-format IDX image/label pair. Accepts .gz by suffix.
/// Pixel bytes are scaled by 1/255 into [0,1].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::size_t classes = 10) {
  const auto img = detail::read_file_maybe_gz(images_path);
  const auto lab = detail::read_file_maybe_gz(labels_path);

  if (detail::read_be32(img, 0) != kIdxImagesMagic)
    throw std::runtime_error("idx: bad image magic in " + images_path);
  if (detail::read_be32(lab, 0) != kIdxLabelsMagic)
    throw std::runtime_error("idx: bad label magic in " + labels_path);

  const std::size_t n = detail::read_be32(img, 4);
  const std::size_t rows = detail::read_be32(img, 8);
  const std::size_t cols = detail::read_be32(img, 12);
  const std::size_t nl = detail::read_be32(lab, 4);
  if (n != nl) throw std::runtime_error("idx: image/label count mismatch");
  if (img.size() != 16 + n * rows * cols) throw std::runtime_error("idx: truncated image payload");
  if (lab.size() != 8 + n) throw std::runtime_error("idx: truncated label payload");

  Dataset ds;
  ds.channels = 1;
  ds.height = rows;
  ds.width = cols;
  ds.classes = classes;
  ds.provenance = "mnist";
  ds.images.reserve(n);
  ds.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor t = Tensor::zeros({1, rows, cols});
    const std::size_t base = 16 + i * rows * cols;
    for (std::size_t j = 0; j < rows * cols; ++j) t.data[j] = img[base + j] / 255.0;
    ds.images.push_back(std::move(t));
    ds.labels.push_back(lab[8 + i]);
  }
  ds.validate();
  return ds;
}

/// Writes a dataset as an IDX image/label file pair (single channel only).
/// Pixels are quantized to bytes; the loader inverts exactly for multiples
/// of 1/255.
inline void write_idx(const Dataset& ds, const std::string& images_path,
                      const std::string& labels_path) {
  if (ds.channels != 1) throw std::runtime_error("write_idx: single-channel only");
  std::ofstream fi(images_path, std::ios::binary);
  std::ofstream fl(labels_path, std::ios::binary);
  if (!fi || !fl) throw std::runtime_error("write_idx: cannot open output files");
  detail::write_be32(fi, kIdxImagesMagic);
  detail::write_be32(fi, static_cast<std::uint32_t>(ds.size()));
  detail::write_be32(fi, static_cast<std::uint32_t>(ds.height));
  detail::write_be32(fi, static_cast<std::uint32_t>(ds.width));
  detail::write_be32(fl, kIdxLabelsMagic);
  detail::write_be32(fl, static_cast<std::uint32_t>(ds.size()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.images[i].data) {
      const int b = static_cast<int>(std::lround(v * 255.0));
      fi.put(static_cast<char>(std::min(255, std::max(0, b))));
    }
    fl.put(static_cast<char>(ds.labels[i]));
  }
}

/// Deterministic synthetic dataset: each class is a small set of Gaussian
/// bumps at class-specific positions, with per-image center jitter and
/// clipped pixel noise. Separable enough for quick training runs yet noisy
/// enough that attacks behave like they do on natural data.
/// seed keys the class prototypes; draw_seed keys the per-image jitter and
/// noise. Splits sharing seed but not draw_seed are iid samples of the same
/// class distributions (train/test).
inline Dataset synthetic_blobs(std::size_t classes, std::size_t per_class, std::size_t height,
                               std::size_t width, std::uint64_t seed,
                               std::uint64_t draw_seed = 0) {
  if (draw_seed == 0) draw_seed = seed + 1;
  if (classes < 2) throw std::invalid_argument("synthetic_blobs: need at least 2 classes");
  Dataset ds;
  ds.channels = 1;
  ds.height = height;
  ds.width = width;
  ds.classes = classes;
  ds.provenance = "synthetic";

  // Class prototypes: one compact bump per class, centered on a coarse grid
  // so classes stay separable, with a class-keyed jitter and a smaller
  // satellite bump for texture. Class evidence is spatially concentrated,
  // which is what makes sparse attacks meaningful on this data.
  struct Bump {
    double cy, cx, sigma, amp;
  };
  std::vector<std::vector<Bump>> protos(classes);
  const std::size_t gcols = static_cast<std::size_t>(std::ceil(std::sqrt(double(classes))));
  const std::size_t grows = (classes + gcols - 1) / gcols;
  for (std::size_t c = 0; c < classes; ++c) {
    std::mt19937_64 crng(seed * 1000003ULL + c);
    std::uniform_real_distribution<double> off(-0.04, 0.04);
    // Amplitudes keep every bump pixel inside the mid-intensity band, where
    // a budget-eps perturbation can both erase real evidence down to the
    // background and forge equal-strength evidence elsewhere.
    std::uniform_real_distribution<double> sig(0.06, 0.08);
    std::uniform_real_distribution<double> amp(0.26, 0.30);
    const double cy = (0.5 + double(c / gcols)) / double(grows) * 0.72 + 0.14;
    const double cx = (0.5 + double(c % gcols)) / double(gcols) * 0.72 + 0.14;
    protos[c].push_back(
        {(cy + off(crng)) * height, (cx + off(crng)) * width, sig(crng) * height, amp(crng)});
    std::mt19937_64 srng(seed ^ 0x5bf03635ULL);  // satellite shared across classes
    std::uniform_real_distribution<double> spos(0.2, 0.8);
    protos[c].push_back(
        {spos(srng) * height, spos(srng) * width, 0.06 * height, 0.20});
  }

  // Saturated 2x2 core sites, four per class, kept >= 4 px apart across all
  // classes. Each site is present in an image only with probability 0.7, so
  // no single site is reliable, but the odds that a class shows none of its
  // four are under 1%. Saturated pixels sit outside the reach of bounded
  // mid-band perturbations, which makes these sites the only robust class
  // evidence in the dataset.
  struct Site {
    double y, x;
  };
  std::vector<std::vector<Site>> core_sites(classes);
  if (height >= 16 && width >= 16) {
    std::mt19937_64 drng(seed ^ 0x9d2c5680ULL);
    std::uniform_real_distribution<double> dy(2.0, double(height) - 4.0);
    std::uniform_real_distribution<double> dx(2.0, double(width) - 4.0);
    std::vector<Site> all;
    for (std::size_t c = 0; c < classes; ++c)
      for (int s = 0; s < 4; ++s) {
        Site cand{};
        for (int tries = 0; tries < 10000; ++tries) {
          cand = {dy(drng), dx(drng)};
          bool clear = true;
          for (const Site& o : all)
            if (std::abs(o.y - cand.y) < 4.0 && std::abs(o.x - cand.x) < 4.0) clear = false;
          if (clear) break;
        }
        all.push_back(cand);
        core_sites[c].push_back(cand);
      }
  }

  std::mt19937_64 rng(draw_seed);
  std::normal_distribution<double> noise(0.0, 0.04);
  std::uniform_real_distribution<double> jitter(-1.5, 1.5);
  std::uniform_real_distribution<double> ampj(0.85, 1.15);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t k = 0; k < per_class; ++k) {
      Tensor t = Tensor::full({1, height, width}, 0.30);
      for (const Bump& b : protos[c]) {
        const double cy = b.cy + jitter(rng), cx = b.cx + jitter(rng);
        const double a = b.amp * ampj(rng);
        for (std::size_t y = 0; y < height; ++y)
          for (std::size_t x = 0; x < width; ++x) {
            const double dy = (y - cy) / b.sigma, dx = (x - cx) / b.sigma;
            t.data[y * width + x] += a * std::exp(-0.5 * (dy * dy + dx * dx));
          }
      }
      for (const Site& s : core_sites[c]) {
        const bool present = u01(rng) < 0.7;
        const long dy0 = std::lround(s.y + jitter(rng));
        const long dx0 = std::lround(s.x + jitter(rng));
        if (!present) continue;
        for (long y = dy0; y < dy0 + 2; ++y)
          for (long x = dx0; x < dx0 + 2; ++x)
            if (y >= 0 && y < long(height) && x >= 0 && x < long(width))
              t.data[std::size_t(y) * width + std::size_t(x)] += 2.0;
      }
      for (auto& v : t.data) v = std::min(1.0, std::max(0.0, v + noise(rng)));
      ds.images.push_back(std::move(t));
      ds.labels.push_back(c);
    }
  ds.validate();
  return ds;
}

/// Deterministic batch index plan. shuffle_seed == 0 keeps original order;
/// the final short batch is included.
inline std::vector<std::vector<std::size_t>> batch_iter(const Dataset& ds, std::size_t batch_size,
                                                        std::uint64_t shuffle_seed = 0) {
  if (batch_size == 0) throw std::invalid_argument("batch_iter: batch size must be >= 1");
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (shuffle_seed != 0) {
    std::mt19937_64 rng(shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t end = std::min(order.size(), i + batch_size);
    batches.emplace_back(order.begin() + i, order.begin() + end);
  }
  return batches;
}

}  // namespace sparsesieve

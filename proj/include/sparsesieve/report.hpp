#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparsesieve/model.hpp"
#include "sparsesieve/tensor.hpp"

namespace sparsesieve {

constexpr int kReportSchemaVersion = 1;

struct ReportRow {
  std::size_t image_id = 0;
  std::string attack;       // fgsm | ifgsm | pgd | sparse
  std::string mode;         // non-targeted | targeted
  bool clean_correct = true;
  bool success = false;
  std::size_t true_label = 0;
  long target_label = -1;   // -1 when non-targeted
  std::size_t achieved_label = 0;
  std::size_t l0_elements = 0;
  std::size_t l0_pixels = 0;
  double confidence = 0.0;  // softmax prob of the achieved label
  std::size_t iterations = 0;
  double wall_time_ms = 0.0;
};

struct ReportAggregates {
  std::size_t attempts = 0;   // clean-correct rows
  std::size_t successes = 0;
  double fooling_rate = 0.0;
  double median_l0_elements = 0.0;
  double mean_l0_elements = 0.0;
  double max_l0_elements = 0.0;
  double median_l0_pixels = 0.0;
  double mean_wall_time_ms = 0.0;
};

struct AttackReport {
  std::vector<ReportRow> rows;
  ReportAggregates aggregates;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Aggregates over rows. Attempts count only clean-correct images; sparsity
/// statistics cover successful attacks only.
inline ReportAggregates aggregate_rows(const std::vector<ReportRow>& rows) {
  ReportAggregates a;
  std::vector<double> l0e, l0p;
  double time_sum = 0.0;
  for (const auto& r : rows) {
    if (!r.clean_correct) continue;
    ++a.attempts;
    time_sum += r.wall_time_ms;
    if (r.success) {
      ++a.successes;
      l0e.push_back(static_cast<double>(r.l0_elements));
      l0p.push_back(static_cast<double>(r.l0_pixels));
    }
  }
  if (a.attempts) {
    a.fooling_rate = static_cast<double>(a.successes) / static_cast<double>(a.attempts);
    a.mean_wall_time_ms = time_sum / static_cast<double>(a.attempts);
  }
  if (!l0e.empty()) {
    a.median_l0_elements = median_of(l0e);
    a.mean_l0_elements =
        std::accumulate(l0e.begin(), l0e.end(), 0.0) / static_cast<double>(l0e.size());
    a.max_l0_elements = *std::max_element(l0e.begin(), l0e.end());
    a.median_l0_pixels = median_of(l0p);
  }
  return a;
}

inline AttackReport make_report(std::vector<ReportRow> rows) {
  AttackReport rep;
  rep.rows = std::move(rows);
  rep.aggregates = aggregate_rows(rep.rows);
  return rep;
}

/// Softmax probability of one class.
inline double class_confidence(const Model& m, const Tensor& image, std::size_t cls) {
  const Tensor logits = logits_of(m, image);
  double mx = logits.data[0];
  for (double v : logits.data) mx = std::max(mx, v);
  double lse = 0.0;
  for (double v : logits.data) lse += std::exp(v - mx);
  return std::exp(logits.data[cls] - mx) / lse;
}

/// Fooling rate of pre-computed adversarial examples against a model.
/// Only images the model classifies correctly when clean count as attempts.
/// target_labels may be empty for non-targeted evaluation.
inline double fooling_rate(const Model& m, const std::vector<Tensor>& clean,
                           const std::vector<Tensor>& adversarial,
                           const std::vector<std::size_t>& true_labels,
                           const std::vector<std::size_t>& target_labels = {}) {
  if (clean.empty() || clean.size() != adversarial.size() || clean.size() != true_labels.size())
    throw std::invalid_argument("fooling_rate: empty or mismatched example set");
  const bool targeted = !target_labels.empty();
  if (targeted && target_labels.size() != clean.size())
    throw std::invalid_argument("fooling_rate: target label count mismatch");
  std::size_t attempts = 0, hits = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    if (predict(m, clean[i]) != true_labels[i]) continue;
    ++attempts;
    const std::size_t pred = predict(m, adversarial[i]);
    if (targeted ? pred == target_labels[i] : pred != true_labels[i]) ++hits;
  }
  if (attempts == 0) return 0.0;
  return static_cast<double>(hits) / static_cast<double>(attempts);
}

struct TransferMatrix {
  std::vector<std::string> model_names;
  std::vector<std::vector<double>> rates;  // [source][target]
};

/// Entry (i,j): fooling rate on model j of the adversarial set generated
/// against model i. The diagonal is the white-box rate.
inline TransferMatrix transfer_matrix(const std::vector<const Model*>& models,
                                      const std::vector<std::string>& names,
                                      const std::vector<std::vector<Tensor>>& clean_sets,
                                      const std::vector<std::vector<Tensor>>& adv_sets,
                                      const std::vector<std::vector<std::size_t>>& labels) {
  if (models.size() < 2) throw std::invalid_argument("transfer_matrix: need at least 2 models");
  for (std::size_t i = 1; i < models.size(); ++i)
    if (models[i]->spec.classes != models[0]->spec.classes)
      throw std::invalid_argument("transfer_matrix: label-space mismatch between models");
  TransferMatrix t;
  t.model_names = names;
  for (std::size_t i = 0; i < models.size(); ++i) {
    std::vector<double> row;
    for (std::size_t j = 0; j < models.size(); ++j)
      row.push_back(fooling_rate(*models[j], clean_sets[i], adv_sets[i], labels[i]));
    t.rates.push_back(std::move(row));
  }
  return t;
}

struct TimingStats {
  double mean_ms = 0.0;
  double median_ms = 0.0;
  std::string machine;
};

/// Monotonic-clock per-image timing with one warm-up pass.
inline TimingStats timing_bench(const std::function<void(const Tensor&)>& attack,
                                const std::vector<Tensor>& images) {
  if (!images.empty()) attack(images.front());  // warm-up
  std::vector<double> times;
  for (const auto& img : images) {
    const auto t0 = std::chrono::steady_clock::now();
    attack(img);
    times.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  TimingStats s;
  if (!times.empty()) {
    s.mean_ms = std::accumulate(times.begin(), times.end(), 0.0) / times.size();
    s.median_ms = median_of(times);
  }
  std::ostringstream mach;
  mach << "cpp-" << sizeof(void*) * 8 << "bit";
#if defined(__linux__)
  mach << "-linux";
#endif
  s.machine = mach.str();
  return s;
}

namespace detail {

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  return out + "\"";
}

}  // namespace detail

inline nlohmann::json report_to_json(const AttackReport& rep) {
  const ReportAggregates check = aggregate_rows(rep.rows);
  if (check.attempts != rep.aggregates.attempts || check.successes != rep.aggregates.successes ||
      check.fooling_rate != rep.aggregates.fooling_rate ||
      check.median_l0_elements != rep.aggregates.median_l0_elements)
    throw std::runtime_error("write_report: aggregates do not match rows");
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rep.rows)
    j["rows"].push_back({{"image_id", r.image_id},
                         {"attack", r.attack},
                         {"mode", r.mode},
                         {"clean_correct", r.clean_correct},
                         {"success", r.success},
                         {"true_label", r.true_label},
                         {"target_label", r.target_label},
                         {"achieved_label", r.achieved_label},
                         {"l0_elements", r.l0_elements},
                         {"l0_pixels", r.l0_pixels},
                         {"confidence", r.confidence},
                         {"iterations", r.iterations},
                         {"wall_time_ms", r.wall_time_ms}});
  j["aggregates"] = {{"attempts", rep.aggregates.attempts},
                     {"successes", rep.aggregates.successes},
                     {"fooling_rate", rep.aggregates.fooling_rate},
                     {"median_l0_elements", rep.aggregates.median_l0_elements},
                     {"mean_l0_elements", rep.aggregates.mean_l0_elements},
                     {"max_l0_elements", rep.aggregates.max_l0_elements},
                     {"median_l0_pixels", rep.aggregates.median_l0_pixels},
                     {"mean_wall_time_ms", rep.aggregates.mean_wall_time_ms}};
  return j;
}

/// RFC 4180 CSV, deterministic column order. Aggregates are re-derived from
/// rows and appended as comment-free summary lines in a second section.
inline void write_report_csv(const AttackReport& rep, const std::string& path,
                             bool include_timing = true) {
  const ReportAggregates check = aggregate_rows(rep.rows);
  if (check.attempts != rep.aggregates.attempts || check.successes != rep.aggregates.successes)
    throw std::runtime_error("write_report: aggregates do not match rows");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_report: cannot open " + path);
  f << "image_id,attack,mode,clean_correct,success,true_label,target_label,achieved_label,"
       "l0_elements,l0_pixels,confidence,iterations";
  if (include_timing) f << ",wall_time_ms";
  f << "\r\n";
  std::ostringstream num;
  num.precision(17);
  for (const auto& r : rep.rows) {
    f << r.image_id << ',' << detail::csv_escape(r.attack) << ',' << detail::csv_escape(r.mode)
      << ',' << (r.clean_correct ? 1 : 0) << ',' << (r.success ? 1 : 0) << ',' << r.true_label
      << ',' << r.target_label << ',' << r.achieved_label << ',' << r.l0_elements << ','
      << r.l0_pixels << ',';
    num.str("");
    num << r.confidence;
    f << num.str() << ',' << r.iterations;
    if (include_timing) {
      num.str("");
      num << r.wall_time_ms;
      f << ',' << num.str();
    }
    f << "\r\n";
  }
  if (!f) throw std::runtime_error("write_report: write failed for " + path);
}

inline void write_report_json(const AttackReport& rep, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_report: cannot open " + path);
  f << report_to_json(rep).dump(2) << "\n";
  if (!f) throw std::runtime_error("write_report: write failed for " + path);
}

// ---------------------------------------------------------------------------
// Netpbm export: clean image, adversarial image, and a perturbation-location
// map (perturbed elements at full intensity on black). P5 for single
// channel, P6 for three channels.

namespace detail {

inline void write_pnm(const Tensor& t, const std::string& path) {
  if (t.shape.size() != 3 || (t.shape[0] != 1 && t.shape[0] != 3))
    throw std::invalid_argument("write_pnm: expected [1|3,H,W] tensor");
  const std::size_t C = t.shape[0], H = t.shape[1], W = t.shape[2];
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_pnm: cannot open " + path);
  f << (C == 1 ? "P5" : "P6") << "\n" << W << " " << H << "\n255\n";
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) {
        const double v = t.data[(c * H + y) * W + x];
        const int b = static_cast<int>(std::lround(std::min(1.0, std::max(0.0, v)) * 255.0));
        f.put(static_cast<char>(b));
      }
  if (!f) throw std::runtime_error("write_pnm: write failed for " + path);
}

}  // namespace detail

/// Writes <prefix>_clean.p?m, <prefix>_adv.p?m, <prefix>_mask.p?m.
inline void export_overlay(const Tensor& image, const Tensor& delta_star,
                           const std::string& prefix) {
  require_same_shape(image, delta_star, "export_overlay");
  const char* ext = image.shape[0] == 1 ? ".pgm" : ".ppm";
  detail::write_pnm(image, prefix + "_clean" + ext);
  detail::write_pnm(clamp(image + delta_star, 0.0, 1.0), prefix + "_adv" + ext);
  Tensor mask = map(delta_star, [](double v) { return v != 0.0 ? 1.0 : 0.0; });
  detail::write_pnm(mask, prefix + "_mask" + ext);
}

}  // namespace sparsesieve

#pragma once

// Thresholding, confusion counting and the metrics reported for segmentation
// (pixel level) and detection (image level). Ratios with a zero denominator
// are reported as 0.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "rmau/core_types.hpp"
#include "rmau/error.hpp"
#include "rmau/nn/tensor.hpp"

namespace rmau {

inline void check_threshold(double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw Error(Errc::BadThreshold, "tau = " + std::to_string(tau) + " outside [0,1]");
}

/// 1 where prob >= tau.
inline MaskImage threshold(const ProbMap& prob, double tau) {
  check_threshold(tau);
  MaskImage out(prob.height, prob.width);
  for (std::size_t k = 0; k < prob.values.size(); ++k) out.values[k] = prob.values[k] >= tau ? 1 : 0;
  return out;
}

inline ConfusionCounts accumulate_confusion(const MaskImage& pred, const MaskImage& gt, ConfusionCounts acc = {}) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw Error(Errc::ShapeMismatch, "prediction is " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                                         ", ground truth is " + std::to_string(gt.height) + "x" +
                                         std::to_string(gt.width));
  for (std::size_t k = 0; k < pred.values.size(); ++k) {
    const bool p = pred.values[k] != 0;
    const bool g = gt.values[k] != 0;
    if (p && g) ++acc.tp;
    else if (p) ++acc.fp;
    else if (g) ++acc.fn;
    else ++acc.tn;
  }
  return acc;
}

struct SegMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double miou = 0.0;
};

struct DetMetrics {
  double f1 = 0.0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  ConfusionCounts counts;
};

inline double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

inline SegMetrics metrics(const ConfusionCounts& c) {
  const auto tp = static_cast<double>(c.tp);
  const auto fp = static_cast<double>(c.fp);
  const auto fn = static_cast<double>(c.fn);
  const auto tn = static_cast<double>(c.tn);
  SegMetrics m;
  m.precision = safe_ratio(tp, tp + fp);
  m.recall = safe_ratio(tp, tp + fn);
  m.f1 = safe_ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
  m.miou = (safe_ratio(tp, tp + fp + fn) + safe_ratio(tn, tn + fp + fn)) / 2.0;
  return m;
}

/// Image-level metrics from detection logits, positive when sigmoid >= tau.
inline DetMetrics detection_metrics(std::span<const double> logits, std::span<const int> labels, double tau = 0.5) {
  if (logits.size() != labels.size())
    throw Error(Errc::LengthMismatch, std::to_string(logits.size()) + " logits vs " + std::to_string(labels.size()) +
                                          " labels");
  check_threshold(tau);
  ConfusionCounts c;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const bool p = nn::sigmoid(logits[i]) >= tau;
    const bool g = labels[i] != 0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  const SegMetrics s = metrics(c);
  DetMetrics d;
  d.f1 = s.f1;
  d.precision = s.precision;
  d.recall = s.recall;
  d.accuracy = safe_ratio(static_cast<double>(c.tp + c.tn), static_cast<double>(c.total()));
  d.counts = c;
  return d;
}

struct SweepRow {
  double tau = 0.0;
  double f1 = 0.0;
  double miou = 0.0;
  std::uint64_t positives = 0;
};

/// Metrics over globally pooled counts for each tau, in the given order.
inline std::vector<SweepRow> threshold_sweep(std::span<const ProbMap> probs, std::span<const MaskImage> gts,
                                             std::span<const double> taus) {
  if (taus.empty()) throw Error(Errc::BadThreshold, "empty tau list");
  if (probs.size() != gts.size())
    throw Error(Errc::LengthMismatch, std::to_string(probs.size()) + " maps vs " + std::to_string(gts.size()) +
                                          " ground truths");
  std::vector<SweepRow> rows;
  for (double tau : taus) {
    ConfusionCounts acc;
    for (std::size_t i = 0; i < probs.size(); ++i) acc = accumulate_confusion(threshold(probs[i], tau), gts[i], acc);
    const SegMetrics m = metrics(acc);
    rows.push_back({tau, m.f1, m.miou, acc.tp + acc.fp});
  }
  return rows;
}

/// The sweep grid used for tuning.
inline std::vector<double> default_sweep_taus() { return {0.4, 0.5, 0.6, 0.75, 0.85, 0.9, 0.95, 0.99}; }

inline void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows) {
  out << "tau,f1,miou,positive_pixels\n";
  for (const auto& r : rows) out << r.tau << ',' << r.f1 * 100.0 << ',' << r.miou * 100.0 << ',' << r.positives << '\n';
}

}  // namespace rmau

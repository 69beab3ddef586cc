#pragma once

#include <span>
#include <string>
#include <vector>

#include "relnn/errors.hpp"

namespace relnn {

// rows = true class, columns = predicted class.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::size_t> counts;  // classes x classes

  std::size_t at(std::size_t truth, std::size_t pred) const { return counts[truth * classes + pred]; }
  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }
};

struct ClassMetrics {
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  std::vector<std::size_t> support;
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  double weighted_f1 = 0.0;
  // Classes whose precision (no predictions) or recall (no true instances)
  // had a zero denominator and were set to 0.
  std::size_t zero_division_precision = 0;
  std::size_t zero_division_recall = 0;
};

// Support-weighted mean; 0 when there is no support at all.
inline double support_weighted_mean(std::span<const double> values, std::span<const std::size_t> support) {
  double num = 0.0;
  std::size_t den = 0;
  for (std::size_t c = 0; c < values.size(); ++c) {
    num += static_cast<double>(support[c]) * values[c];
    den += support[c];
  }
  return den == 0 ? 0.0 : num / static_cast<double>(den);
}

struct MetricsResult {
  ConfusionMatrix confusion;
  ClassMetrics metrics;
};

inline MetricsResult compute_metrics(std::span<const std::size_t> truths, std::span<const std::size_t> preds,
                                     std::size_t classes) {
  if (truths.size() != preds.size()) {
    throw ContractError("metrics: " + std::to_string(truths.size()) + " truths but " + std::to_string(preds.size()) +
                        " predictions");
  }
  MetricsResult r;
  r.confusion.classes = classes;
  r.confusion.counts.assign(classes * classes, 0);
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (truths[i] >= classes || preds[i] >= classes) {
      throw ContractError("metrics: label out of range at position " + std::to_string(i));
    }
    ++r.confusion.counts[truths[i] * classes + preds[i]];
  }
  ClassMetrics& m = r.metrics;
  m.precision.assign(classes, 0.0);
  m.recall.assign(classes, 0.0);
  m.f1.assign(classes, 0.0);
  m.support.assign(classes, 0);
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t predicted = 0;
    for (std::size_t t = 0; t < classes; ++t) {
      m.support[c] += r.confusion.at(c, t);
      predicted += r.confusion.at(t, c);
    }
    const auto tp = static_cast<double>(r.confusion.at(c, c));
    if (predicted > 0) m.precision[c] = tp / static_cast<double>(predicted);
    else ++m.zero_division_precision;
    if (m.support[c] > 0) m.recall[c] = tp / static_cast<double>(m.support[c]);
    else ++m.zero_division_recall;
    const double pr = m.precision[c] + m.recall[c];
    m.f1[c] = pr > 0.0 ? 2.0 * m.precision[c] * m.recall[c] / pr : 0.0;
  }
  m.weighted_precision = support_weighted_mean(m.precision, m.support);
  m.weighted_recall = support_weighted_mean(m.recall, m.support);
  m.weighted_f1 = support_weighted_mean(m.f1, m.support);
  return r;
}

}  // namespace relnn

#include <gtest/gtest.h>

#include <map>
#include <random>

#include "relnn/metrics.hpp"
#include "relnn/pipeline.hpp"

using namespace relnn;

namespace {

// Straight from the definitions, in long double, via per-class TP/FP/FN tallies.
struct Oracle {
  std::vector<long double> p, r, f1;
  long double wp = 0, wr = 0, wf1 = 0;
};

Oracle oracle(const std::vector<std::size_t>& t, const std::vector<std::size_t>& y, std::size_t classes) {
  std::map<std::size_t, long double> tp, fp, fn;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] == y[i]) {
      tp[t[i]] += 1;
    } else {
      fp[y[i]] += 1;
      fn[t[i]] += 1;
    }
  }
  Oracle o;
  long double n = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const long double support = tp[c] + fn[c];
    const long double p = tp[c] + fp[c] > 0 ? tp[c] / (tp[c] + fp[c]) : 0;
    const long double r = support > 0 ? tp[c] / support : 0;
    const long double f = 2 * tp[c] + fp[c] + fn[c] > 0 ? 2 * tp[c] / (2 * tp[c] + fp[c] + fn[c]) : 0;
    o.p.push_back(p);
    o.r.push_back(r);
    o.f1.push_back(f);
    o.wp += support * p;
    o.wr += support * r;
    o.wf1 += support * f;
    n += support;
  }
  if (n > 0) {
    o.wp /= n;
    o.wr /= n;
    o.wf1 /= n;
  }
  return o;
}

}  // namespace

TEST(ComputeMetrics, HandExample) {
  const std::vector<std::size_t> t = {0, 0, 1}, y = {0, 1, 1};
  const auto m = compute_metrics(t, y, 2).metrics;
  EXPECT_EQ(m.precision, (std::vector<double>{1.0, 0.5}));
  EXPECT_EQ(m.recall, (std::vector<double>{0.5, 1.0}));
  EXPECT_EQ(m.f1[0], 2.0 / 3.0);
  EXPECT_EQ(m.f1[1], 2.0 / 3.0);
  EXPECT_EQ(m.weighted_f1, 2.0 / 3.0);
  EXPECT_EQ(m.support, (std::vector<std::size_t>{2, 1}));
}

TEST(ComputeMetrics, PerfectPredictions) {
  const std::vector<std::size_t> t = {0, 1, 2, 2, 1};
  const auto m = compute_metrics(t, t, 3).metrics;
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(m.precision[c], 1.0);
    EXPECT_EQ(m.recall[c], 1.0);
    EXPECT_EQ(m.f1[c], 1.0);
  }
  EXPECT_EQ(m.weighted_f1, 1.0);
  EXPECT_EQ(m.weighted_precision, 1.0);
}

TEST(ComputeMetrics, AbsentClassIsZeroAndCounted) {
  const std::vector<std::size_t> t = {0, 0, 1}, y = {0, 1, 1};
  const auto with = compute_metrics(t, y, 3).metrics;
  const auto without = compute_metrics(t, y, 2).metrics;
  EXPECT_EQ(with.precision[2], 0.0);
  EXPECT_EQ(with.recall[2], 0.0);
  EXPECT_EQ(with.f1[2], 0.0);
  EXPECT_EQ(with.support[2], 0u);
  EXPECT_EQ(with.zero_division_precision, 1u);
  EXPECT_EQ(with.zero_division_recall, 1u);
  EXPECT_EQ(with.weighted_f1, without.weighted_f1);
}

TEST(ComputeMetrics, Errors) {
  EXPECT_THROW(compute_metrics(std::vector<std::size_t>{0, 1}, std::vector<std::size_t>{0}, 2), ContractError);
  EXPECT_THROW(compute_metrics(std::vector<std::size_t>{0, 2}, std::vector<std::size_t>{0, 1}, 2), ContractError);
  const auto empty = compute_metrics(std::vector<std::size_t>{}, std::vector<std::size_t>{}, 2).metrics;
  EXPECT_EQ(empty.weighted_f1, 0.0);
}

TEST(ComputeMetrics, MatchesIndependentOracle) {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t classes = 2 + gen() % 14, n = 1 + gen() % 300;
    std::vector<std::size_t> t(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = gen() % classes;
      y[i] = gen() % 3 == 0 ? t[i] : gen() % classes;
    }
    const auto m = compute_metrics(t, y, classes).metrics;
    const Oracle o = oracle(t, y, classes);
    for (std::size_t c = 0; c < classes; ++c) {
      EXPECT_NEAR(m.precision[c], static_cast<double>(o.p[c]), 1e-12);
      EXPECT_NEAR(m.recall[c], static_cast<double>(o.r[c]), 1e-12);
      EXPECT_NEAR(m.f1[c], static_cast<double>(o.f1[c]), 1e-12);
    }
    EXPECT_NEAR(m.weighted_precision, static_cast<double>(o.wp), 1e-12);
    EXPECT_NEAR(m.weighted_recall, static_cast<double>(o.wr), 1e-12);
    EXPECT_NEAR(m.weighted_f1, static_cast<double>(o.wf1), 1e-12);
  }
}

TEST(ComputeMetrics, ConfusionConservation) {
  std::mt19937_64 gen(4);
  std::vector<std::size_t> t(500), y(500);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = gen() % 6;
    y[i] = gen() % 6;
  }
  const auto r = compute_metrics(t, y, 6);
  EXPECT_EQ(r.confusion.total(), t.size());
  for (std::size_t c = 0; c < 6; ++c) {
    std::size_t row = 0;
    for (std::size_t p = 0; p < 6; ++p) row += r.confusion.at(c, p);
    EXPECT_EQ(row, r.metrics.support[c]);
    EXPECT_GE(r.metrics.f1[c], 0.0);
    EXPECT_LE(r.metrics.f1[c], 1.0);
  }
}

TEST(ComputeMetrics, EqualSupportsGiveMacroMean) {
  // Each class appears exactly 4 times, so weights cancel.
  std::vector<std::size_t> t, y;
  std::mt19937_64 gen(5);
  for (std::size_t c = 0; c < 4; ++c) {
    for (int i = 0; i < 4; ++i) {
      t.push_back(c);
      y.push_back(gen() % 4);
    }
  }
  const auto m = compute_metrics(t, y, 4).metrics;
  double macro = 0.0;
  for (double f : m.f1) macro += f;
  EXPECT_DOUBLE_EQ(m.weighted_f1, macro / 4.0);
}

TEST(MinorityMinF1, OnlyRareNonEmptyClasses) {
  ClassMetrics m;
  m.support = {97, 1, 2, 0};
  m.f1 = {0.1, 0.7, 0.4, 0.0};
  EXPECT_EQ(minority_min_f1(m, 0.02), 0.7);
  EXPECT_EQ(minority_min_f1(m, 0.03), 0.4);
  EXPECT_EQ(minority_min_f1(m, 0.001), 0.0);
}

TEST(ReportJson, ThreeSystemsTableShape) {
  Report r;
  r.config_hash = "0123456789abcdef";
  r.class_names = {"a", "b", "c"};
  r.display_min_support = 2;
  for (const char* name : {"BaseNet", "BaseNet+RN", "BaseNet+RN+NN"}) {
    SystemEval s;
    s.name = name;
    s.truths = {0, 0, 1, 2, 2};
    s.preds = {0, 1, 1, 2, 0};
    s.result = compute_metrics(s.truths, s.preds, 3);
    r.systems.push_back(s);
  }
  const json j = report_to_json(r);
  EXPECT_EQ(j["schema_version"], 1);
  EXPECT_EQ(j["config_hash"], "0123456789abcdef");
  ASSERT_EQ(j["systems"].size(), 3u);
  for (const auto& s : j["systems"]) {
    for (const char* metric : {"precision", "recall", "f1"}) {
      EXPECT_EQ(s[metric]["per_class"].size(), 3u);
      EXPECT_TRUE(s[metric]["weighted"].is_number());
    }
    EXPECT_EQ(s["displayed_classes"], (json{0, 2}));
    EXPECT_EQ(s["confusion"][0], (json{1, 1, 0}));
  }
  EXPECT_EQ(report_to_json(r).dump(), j.dump());
}

#pragma once

// End-to-end stages: BaseNet training, embedding, relation training,
// evaluation of the three systems, reports and strategy sweeps.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "relnn/basenet.hpp"
#include "relnn/config.hpp"
#include "relnn/dataio.hpp"
#include "relnn/knn.hpp"
#include "relnn/metrics.hpp"
#include "relnn/relnet.hpp"

namespace relnn {

struct BaseStage {
  BaseNetHead head;
  std::vector<double> loss_trace;
};

inline BaseStage run_train_base(const Dataset& train, const RunConfig& cfg) {
  Rng init(cfg.base_init_seed());
  BaseNetHead head = BaseNetHead::create(train.d_local + train.d_global, cfg.base.hidden, cfg.base.embedding_dim,
                                         train.num_classes(), cfg.base.dropout, init);
  BaseTrainConfig tc;
  tc.epochs = cfg.base.epochs;
  tc.batch_size = cfg.base.batch_size;
  tc.sgd = cfg.base.sgd;
  tc.sampler = {cfg.base.target_per_class != 0 ? cfg.base.target_per_class : median_class_count(train),
                cfg.base.jitter_sigma, cfg.sampler_seed()};
  tc.seed = cfg.base_train_seed();
  auto r = train_basenet(train, std::move(head), tc);
  return {std::move(r.head), std::move(r.loss_trace)};
}

struct RnStage {
  RelationModel model;
  std::vector<double> loss_trace;
  std::size_t pair_count = 0;
  std::size_t skipped_positives = 0;
};

inline PairSet make_pairs(const EmbeddingSet& train_emb, const ReferenceStrategy& strategy, const RunConfig& cfg) {
  const std::size_t classes = train_emb.class_names.size();
  const KnnIndex index = build_index(train_emb.rows, classes);
  return build_training_pairs(train_emb, index, strategy, cfg.negatives_for(classes), cfg.pair_seed());
}

inline RnStage run_train_rn(const EmbeddingSet& train_emb, const ReferenceStrategy& strategy, const RunConfig& cfg) {
  const PairSet pairs = make_pairs(train_emb, strategy, cfg);
  RelationShape shape = cfg.relation_shape();
  shape.embedding_dim = train_emb.dim;
  Rng init(cfg.rn_init_seed());
  RelationModel model = RelationModel::create(shape, init);
  RnTrainConfig tc{cfg.rn.epochs, cfg.rn.batch_size, cfg.rn.sgd, cfg.rn.pos_weight, cfg.rn_train_seed(),
                   cfg.rn.loss_reduction == "sum"};
  auto r = train_rn(pairs, train_emb, std::move(model), tc);
  return {std::move(r.model), std::move(r.loss_trace), pairs.pairs.size(), pairs.skipped_positives};
}

struct SystemEval {
  std::string name;
  std::vector<std::size_t> truths;
  std::vector<std::size_t> preds;
  std::vector<std::vector<double>> scores;  // relation systems only
  MetricsResult result;
  std::size_t empty_class_warnings = 0;
};

inline SystemEval evaluate_basenet(const BaseNetHead& head, const Dataset& test) {
  SystemEval s;
  s.name = "BaseNet";
  for (const auto& r : test.records) {
    s.truths.push_back(r.class_label);
    s.preds.push_back(classify_basenet(head, r));
  }
  s.result = compute_metrics(s.truths, s.preds, test.num_classes());
  return s;
}

inline SystemEval evaluate_relnet(std::string name, const RelationModel& model, const EmbeddingSet& train_emb,
                                  const EmbeddingSet& test_emb, const ReferenceStrategy& strategy,
                                  std::uint64_t seed) {
  const std::size_t classes = train_emb.class_names.size();
  const KnnIndex index = build_index(train_emb.rows, classes);
  const RelationPredictor predictor(model, train_emb, index);
  Rng rng(seed);
  SystemEval s;
  s.name = std::move(name);
  for (const auto& row : test_emb.rows) {
    Prediction p = predictor.predict(row.vec, strategy, &rng);
    s.truths.push_back(row.label);
    s.preds.push_back(p.label);
    s.scores.push_back(std::move(p.scores));
    s.empty_class_warnings += p.empty_classes;
  }
  s.result = compute_metrics(s.truths, s.preds, classes);
  return s;
}

struct Report {
  std::string config_hash;
  std::vector<std::string> class_names;
  std::size_t display_min_support = 0;
  std::vector<SystemEval> systems;
};

inline constexpr int kReportSchemaVersion = 1;

inline json report_to_json(const Report& r) {
  json systems = json::array();
  for (const auto& s : r.systems) {
    const ClassMetrics& m = s.result.metrics;
    json confusion = json::array();
    for (std::size_t t = 0; t < s.result.confusion.classes; ++t) {
      json row = json::array();
      for (std::size_t p = 0; p < s.result.confusion.classes; ++p) row.push_back(s.result.confusion.at(t, p));
      confusion.push_back(row);
    }
    std::vector<std::size_t> displayed;
    for (std::size_t c = 0; c < m.support.size(); ++c) {
      if (m.support[c] >= r.display_min_support) displayed.push_back(c);
    }
    systems.push_back({{"name", s.name},
                       {"precision", {{"per_class", m.precision}, {"weighted", m.weighted_precision}}},
                       {"recall", {{"per_class", m.recall}, {"weighted", m.weighted_recall}}},
                       {"f1", {{"per_class", m.f1}, {"weighted", m.weighted_f1}}},
                       {"support", m.support},
                       {"displayed_classes", displayed},
                       {"zero_division", {{"precision", m.zero_division_precision}, {"recall", m.zero_division_recall}}},
                       {"empty_class_warnings", s.empty_class_warnings},
                       {"confusion", confusion}});
  }
  return {{"schema_version", kReportSchemaVersion},
          {"config_hash", r.config_hash},
          {"classes", r.class_names},
          {"display_min_support", r.display_min_support},
          {"systems", systems}};
}

// Report layout: BaseNet alone, RN trained all-to-all, RN trained with
// nearest-neighbour references. Both RNs are scored with cfg's test strategy.
inline Report evaluate_run(const Dataset& test, const BaseNetHead& head, const RelationModel& rn_all,
                           const RelationModel& rn_nn, const EmbeddingSet& train_emb, const EmbeddingSet& test_emb,
                           const RunConfig& cfg) {
  Report r;
  r.config_hash = cfg.hash();
  r.class_names = test.class_names;
  r.display_min_support = cfg.eval.display_min_support;
  const auto strategy = cfg.eval_strategy();
  r.systems.push_back(evaluate_basenet(head, test));
  r.systems.push_back(evaluate_relnet("BaseNet+RN", rn_all, train_emb, test_emb, strategy, cfg.predict_seed()));
  r.systems.push_back(evaluate_relnet("BaseNet+RN+NN", rn_nn, train_emb, test_emb, strategy, cfg.predict_seed()));
  return r;
}

inline void write_predictions_csv(const SystemEval& s, const EmbeddingSet& test_emb, const std::string& config_hash,
                                  std::ostream& out) {
  out << csv::hash_comment(config_hash);
  out << "id,true_label,pred_label";
  const std::size_t classes = test_emb.class_names.size();
  for (std::size_t c = 0; c < classes; ++c) out << ",score_" << c;
  out << '\n';
  for (std::size_t i = 0; i < test_emb.rows.size(); ++i) {
    out << test_emb.rows[i].id << ',' << test_emb.class_names[s.truths[i]] << ',' << test_emb.class_names[s.preds[i]];
    for (double v : s.scores[i]) out << ',' << csv::format_double(v);
    out << '\n';
  }
}

// Lowest F1 among classes whose test support fraction lies in (0, fraction).
inline double minority_min_f1(const ClassMetrics& m, double fraction) {
  std::size_t total = 0;
  for (auto s : m.support) total += s;
  double lowest = 1.0;
  bool any = false;
  for (std::size_t c = 0; c < m.support.size(); ++c) {
    if (m.support[c] == 0 || static_cast<double>(m.support[c]) >= fraction * static_cast<double>(total)) continue;
    lowest = std::min(lowest, m.f1[c]);
    any = true;
  }
  return any ? lowest : 0.0;
}

// ---------------------------------------------------------------- sweeps

struct SweepRow {
  std::uint64_t seed = 0;
  std::string strategy;
  std::size_t k = 0;
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  double weighted_f1 = 0.0;
  double minority_min_f1 = 0.0;
  double basenet_weighted_f1 = 0.0;
  std::vector<double> loss_trace;
  double wall_seconds = 0.0;
};

inline std::size_t thread_budget() {
  if (const char* env = std::getenv("RELNN_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Rows for one seed: its own synthetic dataset, split and BaseNet, then one
// relation model per (strategy, k).
inline std::vector<SweepRow> sweep_seed(const RunConfig& base_cfg, std::uint64_t seed,
                                        const std::vector<std::string>& strategies,
                                        const std::vector<std::size_t>& ks) {
  const RunConfig cfg = with_override(base_cfg, "seed", seed);
  const Dataset ds = synth_generate(cfg.profile(), cfg.synth_params());
  const TrainTest tt = group_split(ds, cfg.data.train_fraction, cfg.split_seed());
  const BaseStage base = run_train_base(tt.train, cfg);
  const EmbeddingSet train_emb = embed_dataset(base.head, tt.train);
  const EmbeddingSet test_emb = embed_dataset(base.head, tt.test);
  const double base_f1 = evaluate_basenet(base.head, tt.test).result.metrics.weighted_f1;
  std::vector<SweepRow> rows;
  for (const auto& name : strategies) {
    for (std::size_t k : ks) {
      const auto t0 = std::chrono::steady_clock::now();
      const RunConfig rc = with_override(with_override(cfg, "relnet.k", k), "relnet.strategy", name);
      const RnStage rn = run_train_rn(train_emb, rc.train_strategy(), rc);
      const SystemEval ev =
          evaluate_relnet(name, rn.model, train_emb, test_emb, rc.eval_strategy(), rc.predict_seed());
      SweepRow row;
      row.seed = seed;
      row.strategy = name;
      row.k = k;
      row.weighted_precision = ev.result.metrics.weighted_precision;
      row.weighted_recall = ev.result.metrics.weighted_recall;
      row.weighted_f1 = ev.result.metrics.weighted_f1;
      row.minority_min_f1 = minority_min_f1(ev.result.metrics, cfg.eval.minority_fraction);
      row.basenet_weighted_f1 = base_f1;
      row.loss_trace = rn.loss_trace;
      row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

// Seeds run in parallel (up to `threads`); rows come back seed-major in input order.
inline std::vector<SweepRow> sweep(const RunConfig& cfg, const std::vector<std::string>& strategies,
                                   const std::vector<std::size_t>& ks, const std::vector<std::uint64_t>& seeds,
                                   std::size_t threads = thread_budget()) {
  for (const auto& s : strategies) ReferenceStrategy::parse(s, 1);
  std::vector<std::vector<SweepRow>> per_seed(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      try {
        per_seed[i] = sweep_seed(cfg, seeds[i], strategies, ks);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(1, seeds.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<SweepRow> rows;
  for (auto& v : per_seed) rows.insert(rows.end(), v.begin(), v.end());
  return rows;
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& config_hash, std::ostream& out) {
  out << csv::hash_comment(config_hash);
  out << "seed,strategy,k,weighted_precision,weighted_recall,weighted_f1,minority_min_f1,basenet_weighted_f1,"
         "final_loss,wall_seconds\n";
  for (const auto& r : rows) {
    out << r.seed << ',' << r.strategy << ',' << r.k << ',' << csv::format_double(r.weighted_precision) << ','
        << csv::format_double(r.weighted_recall) << ',' << csv::format_double(r.weighted_f1) << ','
        << csv::format_double(r.minority_min_f1) << ',' << csv::format_double(r.basenet_weighted_f1) << ','
        << csv::format_double(r.loss_trace.empty() ? 0.0 : r.loss_trace.back()) << ',' << r.wall_seconds << '\n';
  }
}

}  // namespace relnn

#pragma once

// Relation network over embeddings.
//
//   g : reference member embedding -> member code      (3 fc layers)
//   reference embedding = mean of g over the reference set
//   f : concat(target, reference embedding) -> score   (2 fc layers, sigmoid)
//
// Reference sets are chosen per (target, class) by a ReferenceStrategy; the
// nearest-neighbour strategy makes positives "easy" same-class neighbours and
// negatives the target's closest wrong-class members.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "relnn/basenet.hpp"
#include "relnn/dataio.hpp"
#include "relnn/knn.hpp"
#include "relnn/neuralcore.hpp"

namespace relnn {

struct RelationShape {
  std::size_t embedding_dim = 64;
  std::size_t g_hidden = 128;
  std::size_t ref_dim = 64;
  std::size_t f_hidden = 64;
  double dropout = 0.5;
  // Feed concat(member, target) to g instead of the member alone. Experimental.
  bool g_concat_target = false;
};

struct RelationModel {
  MlpModel g;
  MlpModel f;
  bool g_concat_target = false;

  static RelationModel create(const RelationShape& s, Rng& rng) {
    const std::size_t g_in = s.g_concat_target ? 2 * s.embedding_dim : s.embedding_dim;
    RelationModel m;
    m.g = MlpModel::create({g_in, s.g_hidden, s.g_hidden, s.ref_dim}, Activation::ReLU, s.dropout, rng);
    m.f = MlpModel::create({s.embedding_dim + s.ref_dim, s.f_hidden, 1}, Activation::Sigmoid, s.dropout, rng);
    m.g_concat_target = s.g_concat_target;
    m.validate();
    return m;
  }

  std::size_t embedding_dim() const { return f.in_dim() - ref_dim(); }
  std::size_t ref_dim() const { return g.out_dim(); }

  void validate() const {
    g.validate();
    f.validate();
    if (g.layers.size() != 3) throw ShapeError("g needs exactly 3 fc layers");
    if (f.layers.size() != 2) throw ShapeError("f needs exactly 2 fc layers");
    if (f.out_dim() != 1 || f.layers.back().activation != Activation::Sigmoid) {
      throw ShapeError("f must end in a single sigmoid unit");
    }
    if (f.in_dim() <= g.out_dim()) throw ShapeError("f input must hold target and reference embeddings");
    const std::size_t expect_g_in = g_concat_target ? 2 * embedding_dim() : embedding_dim();
    if (g.in_dim() != expect_g_in) {
      throw ShapeError("g input width " + std::to_string(g.in_dim()) + " does not match embedding width " +
                       std::to_string(embedding_dim()));
    }
  }

  friend bool operator==(const RelationModel&, const RelationModel&) = default;
};

// ---------------------------------------------------------------- strategies

struct ReferenceStrategy {
  enum class Kind { AllToAll, NearestK, RandomK, FarthestK };
  Kind kind = Kind::NearestK;
  std::size_t k = 5;

  static ReferenceStrategy all() { return {Kind::AllToAll, 0}; }
  static ReferenceStrategy nearest(std::size_t k) { return {Kind::NearestK, k}; }
  static ReferenceStrategy random(std::size_t k) { return {Kind::RandomK, k}; }
  static ReferenceStrategy farthest(std::size_t k) { return {Kind::FarthestK, k}; }

  // CLI spelling: all | nn | random | far.
  static ReferenceStrategy parse(std::string_view name, std::size_t k) {
    ReferenceStrategy s{Kind::NearestK, k};
    if (name == "all") s = all();
    else if (name == "nn") s.kind = Kind::NearestK;
    else if (name == "random") s.kind = Kind::RandomK;
    else if (name == "far") s.kind = Kind::FarthestK;
    else throw ConfigError("unknown strategy '" + std::string(name) + "' (expected all, nn, random or far)");
    s.validate();
    return s;
  }

  std::string name() const {
    switch (kind) {
      case Kind::AllToAll: return "all";
      case Kind::NearestK: return "nn";
      case Kind::RandomK: return "random";
      case Kind::FarthestK: return "far";
    }
    return "?";
  }

  void validate() const {
    if (kind != Kind::AllToAll && k < 1) throw ConfigError("strategy " + name() + " needs k >= 1");
  }

  friend bool operator==(const ReferenceStrategy&, const ReferenceStrategy&) = default;
};

// Positions (rows of the indexed set) of the reference members, in selection order.
inline std::vector<std::size_t> select_reference_set(const ReferenceStrategy& strategy, const KnnIndex& index,
                                                     std::span<const double> target, std::size_t c,
                                                     std::optional<std::string_view> target_id, Rng* rng = nullptr) {
  strategy.validate();
  std::vector<std::size_t> out;
  switch (strategy.kind) {
    case ReferenceStrategy::Kind::NearestK:
      for (const auto& n : query_class_knn(index, target, c, strategy.k, target_id)) out.push_back(n.position);
      break;
    case ReferenceStrategy::Kind::FarthestK:
      for (const auto& n : query_class_farthest(index, target, c, strategy.k, target_id)) out.push_back(n.position);
      break;
    case ReferenceStrategy::Kind::AllToAll:
    case ReferenceStrategy::Kind::RandomK: {
      if (c >= index.num_classes()) throw QueryError("unknown class " + std::to_string(c));
      const auto& part = index.partition(c);
      for (std::size_t s = 0; s < part.ids.size(); ++s) {
        if (!(target_id && part.ids[s] == *target_id)) out.push_back(part.positions[s]);
      }
      if (strategy.kind == ReferenceStrategy::Kind::RandomK && out.size() > strategy.k) {
        if (rng == nullptr) throw ContractError("random reference selection needs an rng");
        // Partial Fisher-Yates: the first k slots are a uniform sample without replacement.
        for (std::size_t i = 0; i < strategy.k; ++i) {
          std::swap(out[i], out[i + uniform_index(*rng, out.size() - i)]);
        }
        out.resize(strategy.k);
      }
      break;
    }
  }
  if (out.empty()) throw QueryError("class " + std::to_string(c) + " has no eligible reference members");
  return out;
}

// ---------------------------------------------------------------- scoring

struct ReferenceMember {
  std::string id;
  std::vector<double> vec;
};

namespace detail {

inline std::vector<double> g_input(const RelationModel& m, std::span<const double> member,
                                   std::span<const double> target) {
  if (!m.g_concat_target) return {member.begin(), member.end()};
  return concat(member, target);
}

// Members sorted by id so the mean's summation order is fixed.
inline std::vector<const ReferenceMember*> id_sorted(std::span<const ReferenceMember> members) {
  std::vector<const ReferenceMember*> ptrs;
  for (const auto& m : members) ptrs.push_back(&m);
  std::sort(ptrs.begin(), ptrs.end(), [](auto* a, auto* b) { return a->id < b->id; });
  return ptrs;
}

}  // namespace detail

// Element-wise mean of g over the members (Eval-mode g). target is only read
// when g consumes concat(member, target).
inline std::vector<double> aggregate_reference(const RelationModel& model, std::span<const ReferenceMember> members,
                                               std::span<const double> target = {}) {
  if (members.empty()) throw ContractError("reference set is empty");
  std::vector<double> sum(model.ref_dim(), 0.0);
  for (const ReferenceMember* m : detail::id_sorted(members)) {
    const auto code = mlp_eval(model.g, detail::g_input(model, m->vec, target));
    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += code[j];
  }
  for (double& v : sum) v /= static_cast<double>(members.size());
  return sum;
}

inline double score_from_reference(const RelationModel& model, std::span<const double> target,
                                   std::span<const double> reference) {
  if (target.size() != model.embedding_dim()) {
    throw ShapeError("target embedding has length " + std::to_string(target.size()) + ", model expects " +
                     std::to_string(model.embedding_dim()));
  }
  return mlp_eval(model.f, concat(target, reference))[0];
}

inline double relation_score(const RelationModel& model, std::span<const double> target,
                             std::span<const ReferenceMember> members) {
  return score_from_reference(model, target, aggregate_reference(model, members, target));
}

// ---------------------------------------------------------------- pairs

struct RelationPair {
  std::size_t target;      // row in the training embedding set
  std::size_t ref_class;
  std::vector<std::size_t> members;  // rows, ascending id order
  int label;               // 1 iff target's class == ref_class
};

struct PairSet {
  std::vector<RelationPair> pairs;
  std::size_t skipped_positives = 0;  // targets alone in their class
};

// Rank of each row's id in lexicographic order over the whole set.
inline std::vector<std::size_t> id_ranks(const EmbeddingSet& es) {
  std::vector<std::size_t> order(es.rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return es.rows[a].id < es.rows[b].id; });
  std::vector<std::size_t> rank(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
  return rank;
}

// negatives_per_target >= C-1 pairs each target with every other class.
inline PairSet build_training_pairs(const EmbeddingSet& train, const KnnIndex& index, const ReferenceStrategy& strategy,
                                    std::size_t negatives_per_target, std::uint64_t seed) {
  const std::size_t classes = index.num_classes();
  std::size_t populated = 0;
  for (std::size_t c = 0; c < classes; ++c) populated += index.class_size(c) > 0 ? 1 : 0;
  if (populated < 2) throw ContractError("relation pairs need at least 2 populated classes");
  Rng rng(seed);
  const auto rank = id_ranks(train);
  const auto by_rank = [&](std::size_t a, std::size_t b) { return rank[a] < rank[b]; };
  PairSet ps;
  for (std::size_t t = 0; t < train.rows.size(); ++t) {
    const auto& row = train.rows[t];
    auto add = [&](std::size_t c, int label) {
      auto members = select_reference_set(strategy, index, row.vec, c, row.id, &rng);
      std::sort(members.begin(), members.end(), by_rank);
      ps.pairs.push_back({t, c, std::move(members), label});
    };
    if (index.class_size(row.label) > 1) add(row.label, 1);
    else ++ps.skipped_positives;

    std::vector<std::size_t> others;
    for (std::size_t c = 0; c < classes; ++c) {
      if (c != row.label && index.class_size(c) > 0) others.push_back(c);
    }
    if (negatives_per_target < others.size()) {
      for (std::size_t i = 0; i < negatives_per_target; ++i) {
        std::swap(others[i], others[i + uniform_index(rng, others.size() - i)]);
      }
      others.resize(negatives_per_target);
      std::sort(others.begin(), others.end());
    }
    for (std::size_t c : others) add(c, 0);
  }
  return ps;
}

// ---------------------------------------------------------------- batched gradients

namespace detail {

// A batch of pairs whose g evaluations ("units") are shared: each distinct g
// input is run once and its gradient accumulated across every pair using it.
struct RelationBatch {
  struct Pair {
    std::span<const double> target;
    std::vector<std::size_t> slots;  // unit indices, summation order
    int label;
  };
  std::vector<std::vector<double>> unit_inputs;
  std::vector<Pair> pairs;
};

struct RelationGrads {
  double loss_sum = 0.0;
  ParamGrads g;
  ParamGrads f;
};

// Summed (not averaged) loss and parameter gradients over the batch. Masks
// are requested layer by layer, g before f.
inline RelationGrads relation_batch_gradient(const RelationModel& model, const RelationBatch& batch,
                                             const BatchMaskFn& g_masks, const BatchMaskFn& f_masks,
                                             double pos_weight) {
  const auto ref_dim = static_cast<Eigen::Index>(model.ref_dim());
  const auto units = static_cast<Eigen::Index>(batch.unit_inputs.size());
  const auto pairs = static_cast<Eigen::Index>(batch.pairs.size());
  RelationGrads out{0.0, ParamGrads::zeros_like(model.g), ParamGrads::zeros_like(model.f)};
  if (pairs == 0) return out;

  RowMatrix x(units, static_cast<Eigen::Index>(model.g.in_dim()));
  for (Eigen::Index u = 0; u < units; ++u) {
    const auto& in = batch.unit_inputs[static_cast<std::size_t>(u)];
    if (static_cast<Eigen::Index>(in.size()) != x.cols()) throw ShapeError("g input width mismatch");
    x.row(u) = Eigen::Map<const Eigen::RowVectorXd>(in.data(), x.cols());
  }
  BatchCache g_cache;
  const RowMatrix codes = mlp_forward_batch(model.g, std::move(x), g_masks, g_cache);

  const Eigen::Index emb = static_cast<Eigen::Index>(model.f.in_dim()) - ref_dim;
  RowMatrix fin(pairs, emb + ref_dim);
  for (Eigen::Index p = 0; p < pairs; ++p) {
    const auto& pair = batch.pairs[static_cast<std::size_t>(p)];
    if (static_cast<Eigen::Index>(pair.target.size()) != emb) throw ShapeError("target width mismatch");
    fin.row(p).head(emb) = Eigen::Map<const Eigen::RowVectorXd>(pair.target.data(), emb);
    Eigen::RowVectorXd ref = Eigen::RowVectorXd::Zero(ref_dim);
    for (std::size_t s : pair.slots) ref += codes.row(static_cast<Eigen::Index>(s));
    fin.row(p).tail(ref_dim) = ref / static_cast<double>(pair.slots.size());
  }
  BatchCache f_cache;
  mlp_forward_batch(model.f, std::move(fin), f_masks, f_cache);

  RowMatrix dz(pairs, 1);
  for (Eigen::Index p = 0; p < pairs; ++p) {
    const ScalarLoss l = bce_with_logit(f_cache.pre.back()(p, 0), batch.pairs[static_cast<std::size_t>(p)].label,
                                        pos_weight);
    out.loss_sum += l.loss;
    dz(p, 0) = l.grad;
  }
  const RowMatrix dfin = mlp_backward_batch(model.f, f_cache, std::move(dz), out.f, GradAt::PreActivation);

  RowMatrix dcodes = RowMatrix::Zero(units, ref_dim);
  for (Eigen::Index p = 0; p < pairs; ++p) {
    const auto& pair = batch.pairs[static_cast<std::size_t>(p)];
    const Eigen::RowVectorXd share = dfin.row(p).tail(ref_dim) / static_cast<double>(pair.slots.size());
    for (std::size_t s : pair.slots) dcodes.row(static_cast<Eigen::Index>(s)) += share;
  }
  mlp_backward_batch(model.g, g_cache, std::move(dcodes), out.g);
  return out;
}

// Gathers the pairs order[...] into a batch with shared units, ordered by
// (member id rank, target id rank).
inline RelationBatch assemble_batch(const RelationModel& model, const EmbeddingSet& train, const PairSet& ps,
                                    std::span<const std::size_t> order, const std::vector<std::size_t>& rank) {
  RelationBatch b;
  b.pairs.resize(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const RelationPair& rp = ps.pairs[order[i]];
    b.pairs[i].target = train.rows[rp.target].vec;
    b.pairs[i].label = rp.label;
    b.pairs[i].slots.resize(rp.members.size());
  }
  if (!model.g_concat_target) {
    // One unit per distinct member.
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto& m = ps.pairs[order[i]].members;
      members.insert(members.end(), m.begin(), m.end());
    }
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t c) { return rank[a] < rank[c]; });
    members.erase(std::unique(members.begin(), members.end()), members.end());
    std::vector<std::size_t> slot_of(train.rows.size());
    for (std::size_t u = 0; u < members.size(); ++u) {
      slot_of[members[u]] = u;
      b.unit_inputs.push_back(train.rows[members[u]].vec);
    }
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto& m = ps.pairs[order[i]].members;
      for (std::size_t j = 0; j < m.size(); ++j) b.pairs[i].slots[j] = slot_of[m[j]];
    }
    return b;
  }
  struct Use {
    std::size_t member_rank, target_rank, pair, member_slot, member;
  };
  std::vector<Use> uses;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const RelationPair& rp = ps.pairs[order[i]];
    for (std::size_t m = 0; m < rp.members.size(); ++m) {
      uses.push_back({rank[rp.members[m]], rank[rp.target], i, m, rp.members[m]});
    }
  }
  std::sort(uses.begin(), uses.end(), [](const Use& a, const Use& c) {
    return a.member_rank != c.member_rank ? a.member_rank < c.member_rank : a.target_rank < c.target_rank;
  });
  for (std::size_t i = 0; i < uses.size(); ++i) {
    const Use& u = uses[i];
    if (i == 0 || u.member_rank != uses[i - 1].member_rank || u.target_rank != uses[i - 1].target_rank) {
      b.unit_inputs.push_back(g_input(model, train.rows[u.member].vec, b.pairs[u.pair].target));
    }
    b.pairs[u.pair].slots[u.member_slot] = b.unit_inputs.size() - 1;
  }
  return b;
}

}  // namespace detail

struct RnTrainConfig {
  std::size_t epochs = 15;
  std::size_t batch_size = 16;
  SgdHyper sgd;
  double pos_weight = 1.0;
  std::uint64_t seed = 0;
  // Sum (rather than average) pair gradients within a batch, so one step
  // approximates batch_size consecutive per-pair SGD steps.
  bool sum_over_batch = false;
};

struct RnTrainResult {
  RelationModel model;
  std::vector<double> loss_trace;  // mean BCE per epoch
};

// Mini-batch SGD on BCE of the relation score; gradients flow through f, the
// mean aggregation and g.
inline RnTrainResult train_rn(const PairSet& ps, const EmbeddingSet& train, RelationModel model,
                              const RnTrainConfig& cfg) {
  if (ps.pairs.empty()) throw ContractError("no relation pairs to train on");
  if (cfg.batch_size == 0) throw ConfigError("batch size must be at least 1");
  model.validate();
  if (train.dim != model.embedding_dim()) throw ShapeError("embedding width does not match relation model");
  Rng rng(cfg.seed);
  const auto rank = id_ranks(train);
  SgdState g_state = SgdState::for_model(model.g, cfg.sgd);
  SgdState f_state = SgdState::for_model(model.f, cfg.sgd);
  std::vector<std::size_t> order(ps.pairs.size());
  std::iota(order.begin(), order.end(), 0);
  RnTrainResult result{std::move(model), {}};
  RelationModel& m = result.model;
  const BatchMaskFn mask_g = [&](std::size_t, std::size_t rows, std::size_t cols) {
    return sample_mask_matrix(rows, cols, m.g.dropout_rate, rng);
  };
  const BatchMaskFn mask_f = [&](std::size_t, std::size_t rows, std::size_t cols) {
    return sample_mask_matrix(rows, cols, m.f.dropout_rate, rng);
  };
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      const auto batch = detail::assemble_batch(m, train, ps, std::span(order).subspan(start, n), rank);
      auto grads = detail::relation_batch_gradient(m, batch, mask_g, mask_f, cfg.pos_weight);
      loss_sum += grads.loss_sum;
      if (!cfg.sum_over_batch) {
        grads.g.scale(1.0 / static_cast<double>(n));
        grads.f.scale(1.0 / static_cast<double>(n));
      }
      sgd_step(m.g, grads.g, g_state);
      sgd_step(m.f, grads.f, f_state);
    }
    result.loss_trace.push_back(loss_sum / static_cast<double>(order.size()));
  }
  return result;
}

// Finite-difference check of BCE(relation score) over every parameter of g and
// f, for one target against one or more reference sets. Dropout masks are
// sampled once from seed and replayed.
inline double relation_gradcheck(RelationModel model, std::span<const double> target,
                                 const std::vector<std::vector<std::vector<double>>>& reference_sets,
                                 const std::vector<int>& labels, std::uint64_t seed,
                                 const GradcheckOptions& opt = {}) {
  detail::RelationBatch batch;
  for (std::size_t p = 0; p < reference_sets.size(); ++p) {
    detail::RelationBatch::Pair pair{target, {}, labels.at(p)};
    for (const auto& member : reference_sets[p]) {
      pair.slots.push_back(batch.unit_inputs.size());
      batch.unit_inputs.push_back(detail::g_input(model, member, target));
    }
    batch.pairs.push_back(std::move(pair));
  }
  Rng rng(seed);
  std::vector<RowMatrix> g_masks, f_masks;
  for (std::size_t i = 0; i + 1 < model.g.layers.size(); ++i) {
    g_masks.push_back(sample_mask_matrix(batch.unit_inputs.size(), model.g.layers[i].out_dim(), model.g.dropout_rate, rng));
  }
  for (std::size_t i = 0; i + 1 < model.f.layers.size(); ++i) {
    f_masks.push_back(sample_mask_matrix(batch.pairs.size(), model.f.layers[i].out_dim(), model.f.dropout_rate, rng));
  }
  const BatchMaskFn replay_g = [&](std::size_t layer, std::size_t, std::size_t) { return g_masks.at(layer); };
  const BatchMaskFn replay_f = [&](std::size_t layer, std::size_t, std::size_t) { return f_masks.at(layer); };
  const auto grads = detail::relation_batch_gradient(model, batch, replay_g, replay_f, 1.0);
  std::vector<double> analytic = flatten(grads.g);
  const auto fa = flatten(grads.f);
  analytic.insert(analytic.end(), fa.begin(), fa.end());
  std::vector<double*> params = parameter_pointers(model.g);
  const auto fp = parameter_pointers(model.f);
  params.insert(params.end(), fp.begin(), fp.end());
  return finite_difference_error(params, analytic, [&] {
    return detail::relation_batch_gradient(model, batch, replay_g, replay_f, 1.0).loss_sum;
  }, opt);
}

// ---------------------------------------------------------------- prediction

struct Prediction {
  std::size_t label = 0;
  std::vector<double> scores;  // one per class; 0 for classes without references
  std::size_t empty_classes = 0;
};

// Eval-mode scorer bound to a training set; caches g over training rows when
// g does not depend on the target.
class RelationPredictor {
 public:
  RelationPredictor(const RelationModel& model, const EmbeddingSet& train, const KnnIndex& index)
      : model_(&model), train_(&train), index_(&index), rank_(id_ranks(train)) {
    if (!model.g_concat_target) {
      codes_.reserve(train.rows.size());
      for (const auto& r : train.rows) codes_.push_back(mlp_eval(model.g, r.vec));
    }
  }

  double score(std::span<const double> target, std::vector<std::size_t> members) const {
    if (members.empty()) throw ContractError("reference set is empty");
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) { return rank_[a] < rank_[b]; });
    std::vector<double> ref(model_->ref_dim(), 0.0);
    for (std::size_t m : members) {
      const auto code = model_->g_concat_target ? mlp_eval(model_->g, concat(train_->rows[m].vec, target))
                                                : codes_[m];
      for (std::size_t j = 0; j < ref.size(); ++j) ref[j] += code[j];
    }
    for (double& v : ref) v /= static_cast<double>(members.size());
    return score_from_reference(*model_, target, ref);
  }

  // rng is only consulted by RandomK.
  Prediction predict(std::span<const double> target, const ReferenceStrategy& strategy, Rng* rng = nullptr) const {
    Prediction p;
    p.scores.assign(index_->num_classes(), 0.0);
    for (std::size_t c = 0; c < index_->num_classes(); ++c) {
      if (index_->class_size(c) == 0) {
        ++p.empty_classes;
        continue;
      }
      p.scores[c] = score(target, select_reference_set(strategy, *index_, target, c, std::nullopt, rng));
    }
    p.label = argmax_lowest(p.scores);
    return p;
  }

 private:
  const RelationModel* model_;
  const EmbeddingSet* train_;
  const KnnIndex* index_;
  std::vector<std::size_t> rank_;
  std::vector<std::vector<double>> codes_;
};

inline Prediction predict_class(const RelationModel& model, const EmbeddingSet& train, const KnnIndex& index,
                                std::span<const double> target, const ReferenceStrategy& strategy,
                                Rng* rng = nullptr) {
  return RelationPredictor(model, train, index).predict(target, strategy, rng);
}

}  // namespace relnn

#pragma once

// BaseNet fc head: local+global context concat -> 3 fc layers -> C logits.
// The second hidden layer's post-activation output is the embedding handed to
// the relation stage.

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "relnn/dataio.hpp"
#include "relnn/neuralcore.hpp"

namespace relnn {

struct BaseNetHead {
  MlpModel mlp;

  static BaseNetHead create(std::size_t input_dim, std::size_t hidden, std::size_t embedding_dim,
                            std::size_t classes, double dropout, Rng& rng) {
    BaseNetHead h{MlpModel::create({input_dim, hidden, embedding_dim, classes}, Activation::Identity, dropout, rng)};
    h.validate();
    return h;
  }

  void validate() const {
    mlp.validate();
    if (mlp.layers.size() != 3) throw ShapeError("BaseNet head needs exactly 3 fc layers");
  }

  std::size_t input_dim() const { return mlp.in_dim(); }
  std::size_t embedding_dim() const { return mlp.layers[1].out_dim(); }
  std::size_t num_classes() const { return mlp.out_dim(); }
};

inline std::vector<double> concat_contexts(const EmbeddingRecord& rec, std::size_t d_local, std::size_t d_global) {
  if (rec.local_vec.size() != d_local || rec.global_vec.size() != d_global) {
    throw ContractError("record " + rec.id + " has context widths " + std::to_string(rec.local_vec.size()) + "/" +
                        std::to_string(rec.global_vec.size()) + ", expected " + std::to_string(d_local) + "/" +
                        std::to_string(d_global));
  }
  return concat(rec.local_vec, rec.global_vec);
}

inline std::vector<double> concat_contexts(const EmbeddingRecord& rec) {
  return concat_contexts(rec, rec.local_vec.size(), rec.global_vec.size());
}

struct SamplerConfig {
  std::size_t target_per_class = 1;
  double jitter_sigma = 0.0;
  std::uint64_t seed = 0;
};

struct TrainItem {
  std::vector<double> input;
  std::size_t label;
};

inline std::vector<std::vector<std::size_t>> members_by_class(const Dataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes());
  for (std::size_t i = 0; i < ds.records.size(); ++i) by_class.at(ds.records[i].class_label).push_back(i);
  return by_class;
}

// Median of the per-class counts (lower median for an even class count).
inline std::size_t median_class_count(const Dataset& ds) {
  std::vector<std::size_t> counts = class_histogram(ds).counts;
  if (counts.empty()) return 1;
  std::sort(counts.begin(), counts.end());
  return std::max<std::size_t>(1, counts[(counts.size() - 1) / 2]);
}

// Brings every class to target_per_class items: larger classes are sampled
// without replacement, smaller ones keep all members plus jittered copies.
inline std::vector<TrainItem> balanced_epoch(const Dataset& ds, const SamplerConfig& cfg) {
  if (cfg.target_per_class < 1) throw ConfigError("target_per_class must be at least 1");
  if (!(cfg.jitter_sigma >= 0.0)) throw ConfigError("jitter_sigma must be non-negative");
  Rng rng(cfg.seed);
  const auto by_class = members_by_class(ds);
  std::vector<TrainItem> items;
  items.reserve(cfg.target_per_class * by_class.size());
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    std::vector<std::size_t> members = by_class[c];
    if (members.empty()) throw ContractError("class '" + ds.class_names[c] + "' has no records to sample");
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t direct = std::min(members.size(), cfg.target_per_class);
    for (std::size_t i = 0; i < direct; ++i) {
      items.push_back({concat_contexts(ds.records[members[i]], ds.d_local, ds.d_global), c});
    }
    for (std::size_t i = direct; i < cfg.target_per_class; ++i) {
      TrainItem item{concat_contexts(ds.records[members[i % members.size()]], ds.d_local, ds.d_global), c};
      if (cfg.jitter_sigma > 0.0) {
        for (double& v : item.input) v += cfg.jitter_sigma * standard_normal(rng);
      }
      items.push_back(std::move(item));
    }
  }
  std::shuffle(items.begin(), items.end(), rng);
  return items;
}

struct BaseTrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 1;
  SgdHyper sgd;
  SamplerConfig sampler;  // sampler.seed is re-mixed per epoch
  std::uint64_t seed = 0;
};

struct BaseTrainResult {
  BaseNetHead head;
  std::vector<double> loss_trace;  // mean softmax cross-entropy per epoch
};

inline BaseTrainResult train_basenet(const Dataset& ds, BaseNetHead head, const BaseTrainConfig& cfg) {
  if (ds.records.empty()) throw ContractError("cannot train BaseNet on an empty dataset");
  head.validate();
  if (head.input_dim() != ds.d_local + ds.d_global) {
    throw ShapeError("BaseNet input width " + std::to_string(head.input_dim()) + " does not match dataset width " +
                     std::to_string(ds.d_local + ds.d_global));
  }
  if (head.num_classes() != ds.num_classes()) throw ShapeError("BaseNet output width does not match class count");
  if (cfg.batch_size == 0) throw ConfigError("batch size must be at least 1");
  Rng rng(cfg.seed);
  SgdState state = SgdState::for_model(head.mlp, cfg.sgd);
  BaseTrainResult result{std::move(head), {}};
  MlpModel& model = result.head.mlp;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    SamplerConfig sc = cfg.sampler;
    sc.seed = mix_seed(cfg.sampler.seed, epoch);
    const auto items = balanced_epoch(ds, sc);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < items.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(items.size(), start + cfg.batch_size);
      ParamGrads grads = ParamGrads::zeros_like(model);
      for (std::size_t i = start; i < end; ++i) {
        const ForwardResult fr = mlp_forward(model, items[i].input, Mode::Train, rng);
        const LossGrad lg = softmax_cross_entropy(fr.output, items[i].label);
        loss_sum += lg.loss;
        mlp_backward_accumulate(model, fr.cache, lg.grad, grads);
      }
      grads.scale(1.0 / static_cast<double>(end - start));
      sgd_step(model, grads, state);
    }
    result.loss_trace.push_back(loss_sum / static_cast<double>(items.size()));
  }
  return result;
}

inline std::size_t argmax_lowest(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

inline std::vector<double> basenet_logits(const BaseNetHead& head, const EmbeddingRecord& rec) {
  return mlp_eval(head.mlp, concat_contexts(rec));
}

inline std::size_t classify_basenet(const BaseNetHead& head, const EmbeddingRecord& rec) {
  return argmax_lowest(basenet_logits(head, rec));
}

inline std::vector<double> extract_embedding(const BaseNetHead& head, const EmbeddingRecord& rec) {
  const auto input = concat_contexts(rec);
  if (input.size() != head.input_dim()) {
    throw ShapeError("record " + rec.id + " has width " + std::to_string(input.size()) + ", BaseNet expects " +
                     std::to_string(head.input_dim()));
  }
  return dense_forward(head.mlp.layers[1], dense_forward(head.mlp.layers[0], input));
}

inline EmbeddingSet embed_dataset(const BaseNetHead& head, const Dataset& ds) {
  EmbeddingSet es;
  es.class_names = ds.class_names;
  es.dim = head.embedding_dim();
  es.rows.reserve(ds.records.size());
  for (const auto& r : ds.records) es.rows.push_back({r.id, r.group_id, r.class_label, extract_embedding(head, r)});
  return es;
}

}  // namespace relnn

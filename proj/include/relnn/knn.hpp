#pragma once

// Exact per-class nearest-neighbour search over training embeddings.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "relnn/dataio.hpp"
#include "relnn/errors.hpp"

namespace relnn {

struct Neighbor {
  std::string id;
  std::size_t position;  // row in the sequence the index was built from
  double distance;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

class KnnIndex {
 public:
  struct Partition {
    std::vector<std::string> ids;  // ascending
    std::vector<std::size_t> positions;
    std::vector<double> values;  // ids.size() x dim, row-major
  };

  KnnIndex() = default;

  // num_classes = 0 sizes the partition table from the largest label seen.
  static KnnIndex build(std::span<const LabeledEmbedding> rows, std::size_t num_classes = 0) {
    if (rows.empty()) throw QueryError("cannot build a k-NN index from no embeddings");
    KnnIndex idx;
    idx.dim_ = rows.front().vec.size();
    std::size_t classes = num_classes;
    std::unordered_set<std::string_view> seen;
    for (const auto& r : rows) {
      if (r.vec.size() != idx.dim_) {
        throw ShapeError("embedding " + r.id + " has length " + std::to_string(r.vec.size()) + ", index uses " +
                         std::to_string(idx.dim_));
      }
      if (!seen.insert(r.id).second) throw QueryError("duplicate embedding id " + r.id);
      classes = std::max(classes, r.label + 1);
    }
    std::vector<std::vector<std::size_t>> members(classes);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (num_classes != 0 && rows[i].label >= num_classes) throw QueryError("embedding " + rows[i].id + " has out-of-range class");
      members[rows[i].label].push_back(i);
    }
    idx.parts_.resize(classes);
    for (std::size_t c = 0; c < classes; ++c) {
      auto& m = members[c];
      std::sort(m.begin(), m.end(), [&](std::size_t a, std::size_t b) { return rows[a].id < rows[b].id; });
      Partition& p = idx.parts_[c];
      for (std::size_t i : m) {
        p.ids.push_back(rows[i].id);
        p.positions.push_back(i);
        p.values.insert(p.values.end(), rows[i].vec.begin(), rows[i].vec.end());
      }
    }
    return idx;
  }

  std::size_t dim() const { return dim_; }
  std::size_t num_classes() const { return parts_.size(); }
  const Partition& partition(std::size_t c) const { return parts_.at(c); }
  std::size_t class_size(std::size_t c) const { return parts_.at(c).ids.size(); }

  std::span<const double> embedding(std::size_t c, std::size_t slot) const {
    return std::span<const double>(parts_[c].values).subspan(slot * dim_, dim_);
  }

 private:
  std::size_t dim_ = 0;
  std::vector<Partition> parts_;
};

inline KnnIndex build_index(std::span<const LabeledEmbedding> rows, std::size_t num_classes = 0) {
  return KnnIndex::build(rows, num_classes);
}

namespace detail {

inline double euclidean(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

struct Scored {
  double distance;
  std::size_t slot;  // slot order == id order within a partition
};

// Distances of every eligible member of class c, in slot order.
inline std::vector<Scored> class_distances(const KnnIndex& index, std::span<const double> target, std::size_t c,
                                           std::optional<std::string_view> exclude_id) {
  if (target.size() != index.dim()) {
    throw ShapeError("query has length " + std::to_string(target.size()) + ", index uses " +
                     std::to_string(index.dim()));
  }
  if (c >= index.num_classes()) throw QueryError("unknown class " + std::to_string(c));
  const auto& part = index.partition(c);
  std::vector<Scored> out;
  out.reserve(part.ids.size());
  for (std::size_t s = 0; s < part.ids.size(); ++s) {
    if (exclude_id && part.ids[s] == *exclude_id) continue;
    out.push_back({euclidean(target, index.embedding(c, s)), s});
  }
  if (out.empty()) throw QueryError("class " + std::to_string(c) + " has no eligible members");
  return out;
}

inline std::vector<Neighbor> to_neighbors(const KnnIndex& index, std::size_t c, std::span<const Scored> s) {
  const auto& part = index.partition(c);
  std::vector<Neighbor> out;
  out.reserve(s.size());
  for (const auto& x : s) out.push_back({part.ids[x.slot], part.positions[x.slot], x.distance});
  return out;
}

}  // namespace detail

// k closest members of class c, ascending distance, ties by id.
inline std::vector<Neighbor> query_class_knn(const KnnIndex& index, std::span<const double> target, std::size_t c,
                                             std::size_t k, std::optional<std::string_view> exclude_id = std::nullopt) {
  if (k < 1) throw QueryError("k must be at least 1");
  auto d = detail::class_distances(index, target, c, exclude_id);
  const auto closer = [](const detail::Scored& a, const detail::Scored& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.slot < b.slot);
  };
  const std::size_t n = std::min(k, d.size());
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(n), d.end(), closer);
  return detail::to_neighbors(index, c, std::span(d).first(n));
}

// k farthest members of class c, descending distance, ties by id.
inline std::vector<Neighbor> query_class_farthest(const KnnIndex& index, std::span<const double> target,
                                                  std::size_t c, std::size_t k,
                                                  std::optional<std::string_view> exclude_id = std::nullopt) {
  if (k < 1) throw QueryError("k must be at least 1");
  auto d = detail::class_distances(index, target, c, exclude_id);
  const auto farther = [](const detail::Scored& a, const detail::Scored& b) {
    return a.distance > b.distance || (a.distance == b.distance && a.slot < b.slot);
  };
  const std::size_t n = std::min(k, d.size());
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(n), d.end(), farther);
  return detail::to_neighbors(index, c, std::span(d).first(n));
}

// Reference implementation: every distance, full sort. No index involved.
inline std::vector<Neighbor> brute_force_oracle(std::span<const LabeledEmbedding> rows, std::span<const double> target,
                                                std::size_t c, std::size_t k,
                                                std::optional<std::string_view> exclude_id = std::nullopt) {
  if (k < 1) throw QueryError("k must be at least 1");
  std::size_t max_label = 0;
  for (const auto& r : rows) max_label = std::max(max_label, r.label);
  if (rows.empty() || c > max_label) throw QueryError("unknown class " + std::to_string(c));
  std::vector<Neighbor> all;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.label != c || (exclude_id && r.id == *exclude_id)) continue;
    if (r.vec.size() != target.size()) throw ShapeError("query length does not match embedding " + r.id);
    double s = 0.0;
    for (std::size_t j = 0; j < target.size(); ++j) {
      const double d = target[j] - r.vec[j];
      s += d * d;
    }
    all.push_back({r.id, i, std::sqrt(s)});
  }
  if (all.empty()) throw QueryError("class " + std::to_string(c) + " has no eligible members");
  std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
  });
  if (all.size() > k) all.resize(k);
  return all;
}

}  // namespace relnn

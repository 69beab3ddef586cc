#pragma once

// Embedding records, CSV interchange, the synthetic skewed generator and
// group-level train/test splitting.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "relnn/errors.hpp"
#include "relnn/tensor.hpp"

namespace relnn {

struct EmbeddingRecord {
  std::string id;
  std::string group_id;  // scan identity; splits never separate a group
  std::size_t class_label = 0;
  std::vector<double> local_vec;
  std::vector<double> global_vec;

  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

struct Dataset {
  std::vector<EmbeddingRecord> records;
  std::vector<std::string> class_names;
  std::size_t d_local = 0;
  std::size_t d_global = 0;

  std::size_t num_classes() const { return class_names.size(); }

  void validate() const {
    std::unordered_set<std::string> seen;
    for (const auto& r : records) {
      if (r.local_vec.size() != d_local || r.global_vec.size() != d_global) {
        throw ShapeError("record " + r.id + " has context widths " + std::to_string(r.local_vec.size()) + "/" +
                         std::to_string(r.global_vec.size()) + ", dataset declares " + std::to_string(d_local) +
                         "/" + std::to_string(d_global));
      }
      if (r.class_label >= class_names.size()) throw ContractError("record " + r.id + " has out-of-range label");
      if (!seen.insert(r.id).second) throw ContractError("duplicate record id " + r.id);
    }
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// One row of the embeddings CSV handed from the BaseNet head to the RN stage.
struct LabeledEmbedding {
  std::string id;
  std::string group_id;
  std::size_t label = 0;
  std::vector<double> vec;

  friend bool operator==(const LabeledEmbedding&, const LabeledEmbedding&) = default;
};

struct EmbeddingSet {
  std::vector<LabeledEmbedding> rows;
  std::vector<std::string> class_names;
  std::size_t dim = 0;

  friend bool operator==(const EmbeddingSet&, const EmbeddingSet&) = default;
};

// ---------------------------------------------------------------- CSV

namespace csv {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string{} : f.substr(b, e - b + 1);
  }
  return out;
}

inline double parse_double(const std::string& s, std::size_t line) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (s.empty() || ec != std::errc() || ptr != last) throw ParseError("non-numeric feature '" + s + "'", line);
  if (!std::isfinite(v)) throw ParseError("non-finite feature '" + s + "'", line);
  return v;
}

struct Table {
  std::vector<std::string> header;
  std::size_t header_line = 0;
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;  // (line number, fields)
  std::vector<std::string> comments;
};

// Lines starting with '#' are comments (used for provenance such as config hashes).
inline Table read_table(std::istream& in) {
  Table t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      t.comments.push_back(line);
      continue;
    }
    auto fields = split_line(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      t.header_line = lineno;
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw ParseError("expected " + std::to_string(t.header.size()) + " columns, found " +
                           std::to_string(fields.size()),
                       lineno);
    }
    t.rows.emplace_back(lineno, std::move(fields));
  }
  if (t.header.empty()) throw ParseError("missing header row", lineno);
  return t;
}

// Counts consecutive columns prefix0, prefix1, ... starting at `from`.
inline std::size_t count_indexed_columns(const std::vector<std::string>& header, std::size_t from,
                                         const std::string& prefix) {
  std::size_t n = 0;
  while (from + n < header.size() && header[from + n] == prefix + std::to_string(n)) ++n;
  return n;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return in;
}

inline void expect_leading_columns(const Table& t) {
  if (t.header.size() < 3 || t.header[0] != "id" || t.header[1] != "group_id" || t.header[2] != "label") {
    throw ParseError("header must start with id,group_id,label", t.header_line);
  }
}

// Labels get indices in first-appearance order unless a manifest fixes them.
class LabelMap {
 public:
  explicit LabelMap(const std::optional<std::vector<std::string>>& manifest) {
    if (manifest) {
      fixed_ = true;
      for (const auto& n : *manifest) add(n);
    }
  }
  std::size_t index_of(const std::string& name, std::size_t line) {
    if (auto it = index_.find(name); it != index_.end()) return it->second;
    if (fixed_) throw ParseError("label '" + name + "' is not in the class manifest", line);
    return add(name);
  }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::size_t add(const std::string& n) {
    index_.emplace(n, names_.size());
    names_.push_back(n);
    return names_.size() - 1;
  }
  bool fixed_ = false;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> names_;
};

inline std::string hash_comment(const std::string& config_hash) { return "# config_hash=" + config_hash + "\n"; }

}  // namespace csv

inline Dataset parse_embedding_csv(std::istream& in,
                                   const std::optional<std::vector<std::string>>& manifest = std::nullopt) {
  const csv::Table t = csv::read_table(in);
  csv::expect_leading_columns(t);
  Dataset ds;
  ds.d_local = csv::count_indexed_columns(t.header, 3, "l");
  ds.d_global = csv::count_indexed_columns(t.header, 3 + ds.d_local, "g");
  if (3 + ds.d_local + ds.d_global != t.header.size()) {
    throw ParseError("header must be id,group_id,label,l0..l{n-1},g0..g{m-1}", t.header_line);
  }
  csv::LabelMap labels(manifest);
  std::unordered_set<std::string> ids;
  for (const auto& [line, f] : t.rows) {
    EmbeddingRecord r;
    r.id = f[0];
    r.group_id = f[1];
    if (!ids.insert(r.id).second) throw ParseError("duplicate id '" + r.id + "'", line);
    r.class_label = labels.index_of(f[2], line);
    for (std::size_t j = 0; j < ds.d_local; ++j) r.local_vec.push_back(csv::parse_double(f[3 + j], line));
    for (std::size_t j = 0; j < ds.d_global; ++j) {
      r.global_vec.push_back(csv::parse_double(f[3 + ds.d_local + j], line));
    }
    ds.records.push_back(std::move(r));
  }
  ds.class_names = labels.names();
  return ds;
}

inline Dataset parse_embedding_csv(const std::string& path,
                                   const std::optional<std::vector<std::string>>& manifest = std::nullopt) {
  auto in = csv::open_input(path);
  return parse_embedding_csv(in, manifest);
}

inline void write_embedding_csv(const Dataset& ds, std::ostream& out, const std::string& config_hash = {}) {
  if (!config_hash.empty()) out << csv::hash_comment(config_hash);
  out << "id,group_id,label";
  for (std::size_t j = 0; j < ds.d_local; ++j) out << ",l" << j;
  for (std::size_t j = 0; j < ds.d_global; ++j) out << ",g" << j;
  out << '\n';
  for (const auto& r : ds.records) {
    out << r.id << ',' << r.group_id << ',' << ds.class_names.at(r.class_label);
    for (double v : r.local_vec) out << ',' << csv::format_double(v);
    for (double v : r.global_vec) out << ',' << csv::format_double(v);
    out << '\n';
  }
}

inline void write_embedding_csv(const Dataset& ds, const std::string& path, const std::string& config_hash = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_embedding_csv(ds, out, config_hash);
}

inline EmbeddingSet parse_embeddings_csv(std::istream& in,
                                         const std::optional<std::vector<std::string>>& manifest = std::nullopt) {
  const csv::Table t = csv::read_table(in);
  csv::expect_leading_columns(t);
  EmbeddingSet es;
  es.dim = csv::count_indexed_columns(t.header, 3, "e");
  if (es.dim == 0 || 3 + es.dim != t.header.size()) {
    throw ParseError("header must be id,group_id,label,e0..e{n-1}", t.header_line);
  }
  csv::LabelMap labels(manifest);
  std::unordered_set<std::string> ids;
  for (const auto& [line, f] : t.rows) {
    LabeledEmbedding e;
    e.id = f[0];
    e.group_id = f[1];
    if (!ids.insert(e.id).second) throw ParseError("duplicate id '" + e.id + "'", line);
    e.label = labels.index_of(f[2], line);
    for (std::size_t j = 0; j < es.dim; ++j) e.vec.push_back(csv::parse_double(f[3 + j], line));
    es.rows.push_back(std::move(e));
  }
  es.class_names = labels.names();
  return es;
}

inline EmbeddingSet parse_embeddings_csv(const std::string& path,
                                         const std::optional<std::vector<std::string>>& manifest = std::nullopt) {
  auto in = csv::open_input(path);
  return parse_embeddings_csv(in, manifest);
}

inline void write_embeddings_csv(const EmbeddingSet& es, std::ostream& out, const std::string& config_hash = {}) {
  if (!config_hash.empty()) out << csv::hash_comment(config_hash);
  out << "id,group_id,label";
  for (std::size_t j = 0; j < es.dim; ++j) out << ",e" << j;
  out << '\n';
  for (const auto& e : es.rows) {
    out << e.id << ',' << e.group_id << ',' << es.class_names.at(e.label);
    for (double v : e.vec) out << ',' << csv::format_double(v);
    out << '\n';
  }
}

inline void write_embeddings_csv(const EmbeddingSet& es, const std::string& path,
                                 const std::string& config_hash = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_embeddings_csv(es, out, config_hash);
}

// ---------------------------------------------------------------- synthetic data

struct SkewProfile {
  std::vector<std::string> class_names;
  std::vector<double> fractions;
  std::size_t total_count = 0;
  // Number of synthetic scans; 0 picks total/55 (the mean of the 10..100 range).
  std::size_t num_groups = 0;

  void validate() const {
    if (fractions.empty() || fractions.size() != class_names.size()) {
      throw ConfigError("skew profile needs one fraction per class name");
    }
    double sum = 0.0;
    for (double f : fractions) {
      if (!(f >= 0.0)) throw ConfigError("skew profile fractions must be non-negative");
      sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("skew profile fractions must sum to 1");
    if (total_count < fractions.size()) {
      throw ConfigError("total count " + std::to_string(total_count) + " is smaller than the class count " +
                        std::to_string(fractions.size()));
    }
  }
};

inline const std::vector<std::pair<std::string, std::size_t>>& table1_counts() {
  static const std::vector<std::pair<std::string, std::size_t>> counts = {
      {"along falx/tentorium", 1025}, {"basal cisterns", 504},       {"brainstem", 95},
      {"cerebellum", 236},            {"ethmoidal", 113},            {"frontal region", 4263},
      {"gangliocapsular region", 146}, {"maxillary", 622},           {"occipital region", 760},
      {"parietal region", 2341},      {"sphenoid", 254},             {"sulcal spaces", 1026},
      {"temporal region", 2520},      {"thalamus", 51},              {"ventricular system", 1469},
  };
  return counts;
}

inline constexpr std::size_t kTable1Total = 15425;
inline constexpr std::size_t kTable1Scans = 216;

// Skew of the reference CT dataset; fractions are the slice counts over 15425 so that
// apportionment at 15425 reproduces the table exactly.
inline SkewProfile table1_profile(std::size_t total = kTable1Total) {
  SkewProfile p;
  for (const auto& [name, count] : table1_counts()) {
    p.class_names.push_back(name);
    p.fractions.push_back(static_cast<double>(count) / static_cast<double>(kTable1Total));
  }
  // Renormalize in double so the sum check holds to rounding.
  const double s = std::accumulate(p.fractions.begin(), p.fractions.end(), 0.0);
  for (double& f : p.fractions) f /= s;
  p.total_count = total;
  p.num_groups = std::max<std::size_t>(
      2, static_cast<std::size_t>(std::llround(static_cast<double>(kTable1Scans) * static_cast<double>(total) /
                                               static_cast<double>(kTable1Total))));
  return p;
}

inline SkewProfile uniform_profile(std::size_t classes, std::size_t total) {
  SkewProfile p;
  for (std::size_t c = 0; c < classes; ++c) {
    p.class_names.push_back("class" + std::to_string(c));
    p.fractions.push_back(1.0 / static_cast<double>(classes));
  }
  p.total_count = total;
  return p;
}

// Largest-remainder (Hamilton) apportionment; remainder ties go to the lower index.
inline std::vector<std::size_t> largest_remainder(const std::vector<double>& weights, std::size_t total) {
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> counts(weights.size());
  std::vector<double> rem(weights.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double quota = weights[i] / wsum * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(quota));
    rem[i] = quota - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[order[i % order.size()]];
  return counts;
}

struct SynthParams {
  std::size_t d_local = 16;
  std::size_t d_global = 16;
  double cluster_spread = 1.0;
  // Scales the class-center spread relative to cluster_spread: centers are
  // drawn with per-axis scale cluster_spread / overlap.
  double overlap = 0.5;
  std::uint64_t seed = 0;
};

inline constexpr std::size_t kMinScan = 10;
inline constexpr std::size_t kMaxScan = 100;

inline std::vector<std::size_t> scan_sizes(std::size_t total, std::size_t groups, Rng& rng) {
  std::vector<double> w(groups);
  for (double& v : w) v = static_cast<double>(kMinScan) + uniform01(rng) * static_cast<double>(kMaxScan - kMinScan);
  auto sizes = largest_remainder(w, total);
  const bool feasible = groups * kMinScan <= total && total <= groups * kMaxScan;
  const bool in_range = std::all_of(sizes.begin(), sizes.end(), [](std::size_t s) { return s >= kMinScan && s <= kMaxScan; });
  if (feasible && !in_range) sizes = largest_remainder(std::vector<double>(groups, 1.0), total);
  return sizes;
}

inline Dataset synth_generate(const SkewProfile& profile, const SynthParams& params) {
  profile.validate();
  if (!(params.cluster_spread > 0.0)) throw ConfigError("cluster spread must be positive");
  if (!(params.overlap > 0.0)) throw ConfigError("overlap must be positive");
  Rng rng(params.seed);
  const std::size_t classes = profile.fractions.size();
  const auto counts = largest_remainder(profile.fractions, profile.total_count);
  const double center_scale = params.cluster_spread / params.overlap;

  std::vector<std::vector<double>> local_centers(classes), global_centers(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t j = 0; j < params.d_local; ++j) local_centers[c].push_back(center_scale * standard_normal(rng));
    for (std::size_t j = 0; j < params.d_global; ++j) global_centers[c].push_back(center_scale * standard_normal(rng));
  }

  Dataset ds;
  ds.class_names = profile.class_names;
  ds.d_local = params.d_local;
  ds.d_global = params.d_global;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < counts[c]; ++i) {
      EmbeddingRecord r;
      r.class_label = c;
      for (double m : local_centers[c]) r.local_vec.push_back(m + params.cluster_spread * standard_normal(rng));
      for (double m : global_centers[c]) r.global_vec.push_back(m + params.cluster_spread * standard_normal(rng));
      ds.records.push_back(std::move(r));
    }
  }
  std::shuffle(ds.records.begin(), ds.records.end(), rng);

  std::size_t groups = profile.num_groups;
  if (groups == 0) groups = std::max<std::size_t>(1, (profile.total_count + 27) / 55);
  groups = std::min(groups, profile.total_count);
  const auto sizes = scan_sizes(profile.total_count, groups, rng);
  std::size_t next = 0;
  const int width = static_cast<int>(std::to_string(profile.total_count).size());
  char buf[64];
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    std::snprintf(buf, sizeof buf, "scan%04zu", g);
    for (std::size_t i = 0; i < sizes[g]; ++i, ++next) ds.records[next].group_id = buf;
  }
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    std::snprintf(buf, sizeof buf, "r%0*zu", width, i);
    ds.records[i].id = buf;
  }
  return ds;
}

// ---------------------------------------------------------------- split / histogram

struct TrainTest {
  Dataset train;
  Dataset test;
};

inline std::vector<std::string> distinct_groups(const Dataset& ds) {
  std::set<std::string> s;
  for (const auto& r : ds.records) s.insert(r.group_id);
  return {s.begin(), s.end()};
}

// Whole groups go to one side; round(train_fraction * groups) groups train.
inline TrainTest group_split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train fraction must lie in (0, 1)");
  auto groups = distinct_groups(ds);
  if (groups.size() < 2) throw ContractError("group split needs at least 2 distinct group ids");
  Rng rng(seed);
  std::shuffle(groups.begin(), groups.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(groups.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, groups.size() - 1);
  const std::unordered_set<std::string> train_groups(groups.begin(), groups.begin() + static_cast<std::ptrdiff_t>(n_train));
  TrainTest tt;
  for (Dataset* side : {&tt.train, &tt.test}) {
    side->class_names = ds.class_names;
    side->d_local = ds.d_local;
    side->d_global = ds.d_global;
  }
  for (const auto& r : ds.records) (train_groups.contains(r.group_id) ? tt.train : tt.test).records.push_back(r);
  return tt;
}

struct ClassHistogram {
  std::vector<std::size_t> counts;
  std::vector<double> fractions;
};

inline ClassHistogram class_histogram(const Dataset& ds) {
  ClassHistogram h{std::vector<std::size_t>(ds.num_classes(), 0), std::vector<double>(ds.num_classes(), 0.0)};
  for (const auto& r : ds.records) ++h.counts.at(r.class_label);
  if (!ds.records.empty()) {
    for (std::size_t c = 0; c < h.counts.size(); ++c) {
      h.fractions[c] = static_cast<double>(h.counts[c]) / static_cast<double>(ds.records.size());
    }
  }
  return h;
}

}  // namespace relnn

#pragma once

// Run configuration: one JSON document, every key defaulted. A user file may
// override any subset of keys; unknown keys are rejected.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "relnn/basenet.hpp"
#include "relnn/dataio.hpp"
#include "relnn/relnet.hpp"

namespace relnn {

using json = nlohmann::json;

inline json default_config_json() {
  const json sgd = {{"learning_rate", 1e-3}, {"momentum", 0.9}, {"weight_decay", 5e-4}};
  return {
      {"seed", 1},
      {"data",
       {{"profile", "table1"},
        {"classes", 15},
        {"total", 5000},
        {"num_groups", 0},
        {"d_local", 16},
        {"d_global", 16},
        {"cluster_spread", 1.0},
        {"overlap", 0.5},
        {"train_fraction", 0.8}}},
      {"basenet",
       {{"hidden", 256},
        {"embedding_dim", 64},
        {"dropout", 0.5},
        {"epochs", 30},
        {"batch_size", 1},
        {"target_per_class", 0},
        {"jitter_sigma", 0.1},
        {"sgd", sgd}}},
      {"relnet",
       {{"g_hidden", 128},
        {"ref_dim", 64},
        {"f_hidden", 64},
        {"dropout", 0.5},
        {"epochs", 15},
        {"batch_size", 16},
        {"k", 5},
        {"strategy", "nn"},
        {"test_strategy", "nn"},
        {"negatives_per_target", -1},
        {"pos_weight", 1.0},
        {"loss_reduction", "mean"},
        {"g_concat_target", false},
        {"sgd", sgd}}},
      {"eval", {{"display_min_support", 0}, {"minority_fraction", 0.02}}},
      {"sweep", {{"strategies", {"all", "nn"}}, {"k", {5}}, {"seeds", {1, 2, 3}}}},
  };
}

struct DataConfig {
  std::string profile;
  std::size_t classes, total, num_groups, d_local, d_global;
  double cluster_spread, overlap, train_fraction;
};

struct BaseConfig {
  std::size_t hidden, embedding_dim, epochs, batch_size, target_per_class;
  double dropout, jitter_sigma;
  SgdHyper sgd;
};

struct RnConfig {
  std::size_t g_hidden, ref_dim, f_hidden, epochs, batch_size, k;
  std::string strategy, test_strategy, loss_reduction;
  long long negatives_per_target;  // < 0 means every other class
  double dropout, pos_weight;
  bool g_concat_target;
  SgdHyper sgd;
};

struct EvalConfig {
  std::size_t display_min_support;
  double minority_fraction;
};

struct SweepConfig {
  std::vector<std::string> strategies;
  std::vector<std::size_t> k;
  std::vector<std::uint64_t> seeds;
};

struct RunConfig {
  json doc;
  std::uint64_t seed = 1;
  DataConfig data;
  BaseConfig base;
  RnConfig rn;
  EvalConfig eval;
  SweepConfig sweep;

  // FNV-1a 64 over the canonical (key-sorted) dump of the resolved document.
  std::string hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : doc.dump()) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  ReferenceStrategy train_strategy() const { return ReferenceStrategy::parse(rn.strategy, rn.k); }
  ReferenceStrategy eval_strategy() const { return ReferenceStrategy::parse(rn.test_strategy, rn.k); }

  SkewProfile profile() const {
    SkewProfile p;
    if (data.profile == "table1") p = table1_profile(data.total);
    else if (data.profile == "uniform") p = uniform_profile(data.classes, data.total);
    else throw ConfigError("unknown data profile '" + data.profile + "' (expected table1 or uniform)");
    if (data.num_groups != 0) p.num_groups = data.num_groups;
    return p;
  }

  SynthParams synth_params() const {
    return {data.d_local, data.d_global, data.cluster_spread, data.overlap, mix_seed(seed, 1)};
  }

  RelationShape relation_shape() const {
    return {base.embedding_dim, rn.g_hidden, rn.ref_dim, rn.f_hidden, rn.dropout, rn.g_concat_target};
  }

  std::size_t negatives_for(std::size_t classes) const {
    return rn.negatives_per_target < 0 ? classes - 1 : static_cast<std::size_t>(rn.negatives_per_target);
  }

  // Seed streams, one per stochastic stage.
  std::uint64_t split_seed() const { return mix_seed(seed, 2); }
  std::uint64_t base_init_seed() const { return mix_seed(seed, 3); }
  std::uint64_t base_train_seed() const { return mix_seed(seed, 4); }
  std::uint64_t sampler_seed() const { return mix_seed(seed, 5); }
  std::uint64_t rn_init_seed() const { return mix_seed(seed, 6); }
  std::uint64_t pair_seed() const { return mix_seed(seed, 7); }
  std::uint64_t rn_train_seed() const { return mix_seed(seed, 8); }
  std::uint64_t predict_seed() const { return mix_seed(seed, 9); }
};

namespace detail {

inline void check_known_keys(const json& patch, const json& defaults, const std::string& where) {
  if (!patch.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (!defaults.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
    if (defaults[it.key()].is_object()) check_known_keys(it.value(), defaults[it.key()], path);
  }
}

inline SgdHyper read_sgd(const json& j) {
  return {j.at("learning_rate").get<double>(), j.at("momentum").get<double>(), j.at("weight_decay").get<double>()};
}

}  // namespace detail

inline RunConfig config_from_json(const json& patch) {
  json doc = default_config_json();
  detail::check_known_keys(patch, doc, "");
  doc.merge_patch(patch);
  RunConfig c;
  c.doc = doc;
  try {
    c.seed = doc.at("seed").get<std::uint64_t>();
    const json& d = doc.at("data");
    c.data = {d.at("profile").get<std::string>(), d.at("classes").get<std::size_t>(), d.at("total").get<std::size_t>(),
              d.at("num_groups").get<std::size_t>(), d.at("d_local").get<std::size_t>(),
              d.at("d_global").get<std::size_t>(), d.at("cluster_spread").get<double>(),
              d.at("overlap").get<double>(), d.at("train_fraction").get<double>()};
    const json& b = doc.at("basenet");
    c.base = {b.at("hidden").get<std::size_t>(), b.at("embedding_dim").get<std::size_t>(),
              b.at("epochs").get<std::size_t>(), b.at("batch_size").get<std::size_t>(),
              b.at("target_per_class").get<std::size_t>(), b.at("dropout").get<double>(),
              b.at("jitter_sigma").get<double>(), detail::read_sgd(b.at("sgd"))};
    const json& r = doc.at("relnet");
    c.rn = {r.at("g_hidden").get<std::size_t>(), r.at("ref_dim").get<std::size_t>(), r.at("f_hidden").get<std::size_t>(),
            r.at("epochs").get<std::size_t>(), r.at("batch_size").get<std::size_t>(), r.at("k").get<std::size_t>(),
            r.at("strategy").get<std::string>(), r.at("test_strategy").get<std::string>(),
            r.at("loss_reduction").get<std::string>(),
            r.at("negatives_per_target").get<long long>(), r.at("dropout").get<double>(),
            r.at("pos_weight").get<double>(), r.at("g_concat_target").get<bool>(), detail::read_sgd(r.at("sgd"))};
    const json& e = doc.at("eval");
    c.eval = {e.at("display_min_support").get<std::size_t>(), e.at("minority_fraction").get<double>()};
    const json& s = doc.at("sweep");
    c.sweep = {s.at("strategies").get<std::vector<std::string>>(), s.at("k").get<std::vector<std::size_t>>(),
               s.at("seeds").get<std::vector<std::uint64_t>>()};
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("invalid config value: ") + ex.what());
  }
  if (c.rn.loss_reduction != "mean" && c.rn.loss_reduction != "sum") {
    throw ConfigError("relnet.loss_reduction must be mean or sum");
  }
  c.train_strategy();
  c.eval_strategy();
  for (const auto& s : c.sweep.strategies) ReferenceStrategy::parse(s, 1);
  return c;
}

inline RunConfig default_config() { return config_from_json(json::object()); }

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json patch;
  try {
    patch = json::parse(in);
  } catch (const json::parse_error& ex) {
    throw ConfigError("config " + path + " is not valid JSON: " + ex.what());
  }
  return config_from_json(patch);
}

// Applies a dotted-path override, e.g. set_value(cfg, "relnet.k", 3).
inline RunConfig with_override(const RunConfig& cfg, const std::string& dotted, const json& value) {
  json patch = json::object();
  json* node = &patch;
  std::stringstream ss(dotted);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
  (*node)[parts.back()] = value;
  json doc = cfg.doc;
  detail::check_known_keys(patch, doc, "");
  doc.merge_patch(patch);
  return config_from_json(doc);
}

}  // namespace relnn

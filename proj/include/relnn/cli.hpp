#pragma once

// Command-line front end. Every subcommand reads an optional RunConfig file,
// applies flag overrides on top, and reads/writes artifacts under --out.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "relnn/checkpoint.hpp"
#include "relnn/pipeline.hpp"

namespace relnn {

namespace fs = std::filesystem;

struct CliOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k;
  std::optional<std::string> strategy;
  std::optional<std::size_t> epochs;
  std::string out = ".";
  std::optional<std::string> profile;
  std::optional<std::size_t> total;
  std::string input;
};

namespace cli {

inline std::string artifact(const CliOptions& o, const std::string& name) { return (fs::path(o.out) / name).string(); }

inline void require(const std::string& path, const std::string& produced_by) {
  if (!fs::exists(path)) throw LoadError("missing " + path + " (run `" + produced_by + "` first)");
}

inline std::vector<std::string> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("missing class manifest " + path);
  std::vector<std::string> names;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) names.push_back(line);
  }
  return names;
}

inline void write_manifest(const std::vector<std::string>& names, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& n : names) out << n << '\n';
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

// `epochs_key` names the config entry --epochs maps to for this subcommand.
inline RunConfig resolve_config(const CliOptions& o, const std::string& epochs_key) {
  RunConfig cfg = o.config_path.empty() ? default_config() : load_config(o.config_path);
  if (o.seed) cfg = with_override(cfg, "seed", *o.seed);
  if (o.k) cfg = with_override(cfg, "relnet.k", *o.k);
  if (o.strategy) cfg = with_override(cfg, "relnet.strategy", *o.strategy);
  if (o.epochs && !epochs_key.empty()) cfg = with_override(cfg, epochs_key, *o.epochs);
  if (o.profile) cfg = with_override(cfg, "data.profile", *o.profile);
  if (o.total) cfg = with_override(cfg, "data.total", *o.total);
  return cfg;
}

inline Dataset load_split(const CliOptions& o, const std::string& name) {
  const std::string path = artifact(o, name);
  require(path, "split");
  return parse_embedding_csv(path, read_manifest(artifact(o, "classes.txt")));
}

inline EmbeddingSet load_embeddings(const CliOptions& o, const std::string& name) {
  const std::string path = artifact(o, name);
  require(path, "embed");
  return parse_embeddings_csv(path, read_manifest(artifact(o, "classes.txt")));
}

inline BaseNetHead load_base(const CliOptions& o) {
  const std::string path = artifact(o, "base.ckpt");
  require(path, "train-base");
  BaseNetHead head{read_checkpoint(path, ModelKind::Base).model};
  head.validate();
  return head;
}

inline std::string rn_prefix(const std::string& strategy) { return "rn_" + strategy; }

inline RelationModel load_rn(const CliOptions& o, const std::string& strategy) {
  const std::string g_path = artifact(o, rn_prefix(strategy) + ".g.ckpt");
  const std::string f_path = artifact(o, rn_prefix(strategy) + ".f.ckpt");
  require(g_path, "train-rn --strategy " + strategy);
  require(f_path, "train-rn --strategy " + strategy);
  RelationModel m;
  m.g = read_checkpoint(g_path, ModelKind::GNet).model;
  m.f = read_checkpoint(f_path, ModelKind::FNet).model;
  const std::size_t emb = m.f.in_dim() - m.g.out_dim();
  m.g_concat_target = m.g.in_dim() == 2 * emb;
  m.validate();
  return m;
}

inline CheckpointMeta meta_for(const RunConfig& cfg, std::size_t epochs) {
  return {static_cast<std::uint32_t>(epochs), cfg.seed, cfg.hash()};
}

// ---------------------------------------------------------------- commands

inline void cmd_synth(const CliOptions& o, std::ostream& log) {
  const RunConfig cfg = resolve_config(o, "");
  const Dataset ds = synth_generate(cfg.profile(), cfg.synth_params());
  fs::create_directories(o.out);
  write_embedding_csv(ds, artifact(o, "dataset.csv"), cfg.hash());
  write_manifest(ds.class_names, artifact(o, "classes.txt"));
  const ClassHistogram h = class_histogram(ds);
  log << "synth: " << ds.records.size() << " records, " << distinct_groups(ds).size() << " groups, "
      << ds.class_names.size() << " classes\n";
  for (std::size_t c = 0; c < h.counts.size(); ++c) log << "  " << ds.class_names[c] << ' ' << h.counts[c] << '\n';
}

inline void cmd_split(const CliOptions& o, std::ostream& log) {
  const RunConfig cfg = resolve_config(o, "");
  const std::string input = o.input.empty() ? artifact(o, "dataset.csv") : o.input;
  require(input, "synth");
  const std::string manifest = artifact(o, "classes.txt");
  const Dataset ds = fs::exists(manifest) ? parse_embedding_csv(input, read_manifest(manifest))
                                          : parse_embedding_csv(input);
  const TrainTest tt = group_split(ds, cfg.data.train_fraction, cfg.split_seed());
  fs::create_directories(o.out);
  write_embedding_csv(tt.train, artifact(o, "train.csv"), cfg.hash());
  write_embedding_csv(tt.test, artifact(o, "test.csv"), cfg.hash());
  write_manifest(ds.class_names, manifest);
  log << "split: " << distinct_groups(tt.train).size() << " train groups (" << tt.train.records.size()
      << " records), " << distinct_groups(tt.test).size() << " test groups (" << tt.test.records.size()
      << " records)\n";
}

inline void cmd_train_base(const CliOptions& o, std::ostream& log) {
  const RunConfig cfg = resolve_config(o, "basenet.epochs");
  const Dataset train = load_split(o, "train.csv");
  const BaseStage st = run_train_base(train, cfg);
  write_checkpoint(artifact(o, "base.ckpt"), ModelKind::Base, st.head.mlp, meta_for(cfg, cfg.base.epochs));
  log << "train-base: " << cfg.base.epochs << " epochs, final loss "
      << (st.loss_trace.empty() ? 0.0 : st.loss_trace.back()) << '\n';
}

inline void cmd_embed(const CliOptions& o, std::ostream& log) {
  const RunConfig cfg = resolve_config(o, "");
  const BaseNetHead head = load_base(o);
  for (const char* side : {"train", "test"}) {
    const Dataset ds = load_split(o, std::string(side) + ".csv");
    write_embeddings_csv(embed_dataset(head, ds), artifact(o, std::string(side) + "_emb.csv"), cfg.hash());
  }
  log << "embed: wrote " << head.embedding_dim() << "-dim embeddings\n";
}

inline void cmd_train_rn(const CliOptions& o, std::ostream& log) {
  const RunConfig cfg = resolve_config(o, "relnet.epochs");
  const EmbeddingSet train = load_embeddings(o, "train_emb.csv");
  const RnStage st = run_train_rn(train, cfg.train_strategy(), cfg);
  const auto meta = meta_for(cfg, cfg.rn.epochs);
  write_checkpoint(artifact(o, rn_prefix(cfg.rn.strategy) + ".g.ckpt"), ModelKind::GNet, st.model.g, meta);
  write_checkpoint(artifact(o, rn_prefix(cfg.rn.strategy) + ".f.ckpt"), ModelKind::FNet, st.model.f, meta);
  log << "train-rn: strategy " << cfg.train_strategy().name() << ", " << st.pair_count << " pairs";
  if (st.skipped_positives > 0) log << " (" << st.skipped_positives << " singleton targets without a positive)";
  log << ", final loss " << (st.loss_trace.empty() ? 0.0 : st.loss_trace.back()) << '\n';
}

inline void cmd_predict(const CliOptions& o, std::ostream& log) {
  const RunConfig cfg = resolve_config(o, "");
  const RelationModel model = load_rn(o, cfg.rn.strategy);
  const EmbeddingSet train = load_embeddings(o, "train_emb.csv");
  const EmbeddingSet test = load_embeddings(o, "test_emb.csv");
  const SystemEval s = evaluate_relnet(cfg.rn.strategy, model, train, test, cfg.eval_strategy(), cfg.predict_seed());
  auto out = open_output(artifact(o, "predictions_" + cfg.rn.strategy + ".csv"));
  write_predictions_csv(s, test, cfg.hash(), out);
  log << "predict: " << s.preds.size() << " records, weighted F1 " << s.result.metrics.weighted_f1 << '\n';
}

inline void cmd_eval(const CliOptions& o, std::ostream& log) {
  const RunConfig cfg = resolve_config(o, "");
  const BaseNetHead head = load_base(o);
  const RelationModel rn_all = load_rn(o, "all");
  const RelationModel rn_nn = load_rn(o, "nn");
  const Dataset test = load_split(o, "test.csv");
  const EmbeddingSet train_emb = load_embeddings(o, "train_emb.csv");
  const EmbeddingSet test_emb = load_embeddings(o, "test_emb.csv");
  const Report r = evaluate_run(test, head, rn_all, rn_nn, train_emb, test_emb, cfg);
  auto out = open_output(artifact(o, "report.json"));
  out << report_to_json(r).dump(2) << '\n';
  for (const auto& s : r.systems) {
    const ClassMetrics& m = s.result.metrics;
    log << s.name << ": precision " << m.weighted_precision << " recall " << m.weighted_recall << " f1 "
        << m.weighted_f1 << '\n';
  }
}

inline void cmd_sweep(const CliOptions& o, std::ostream& log) {
  const RunConfig cfg = resolve_config(o, "relnet.epochs");
  const std::vector<std::string> strategies = o.strategy ? std::vector{*o.strategy} : cfg.sweep.strategies;
  const std::vector<std::size_t> ks = o.k ? std::vector{*o.k} : cfg.sweep.k;
  const std::vector<std::uint64_t> seeds = o.seed ? std::vector{*o.seed} : cfg.sweep.seeds;
  const auto rows = sweep(cfg, strategies, ks, seeds);
  fs::create_directories(o.out);
  auto out = open_output(artifact(o, "sweep.csv"));
  write_sweep_csv(rows, cfg.hash(), out);
  for (const auto& r : rows) {
    log << "seed " << r.seed << ' ' << r.strategy << " k=" << r.k << " weighted F1 " << r.weighted_f1 << '\n';
  }
}

inline void cmd_gradcheck(const CliOptions& o, std::ostream& log) {
  const RunConfig cfg = resolve_config(o, "");
  Rng rng(cfg.seed);
  const auto random_vec = [&](std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = standard_normal(rng);
    return v;
  };
  const std::size_t in = cfg.data.d_local + cfg.data.d_global;
  const std::size_t classes = cfg.profile().class_names.size();
  BaseNetHead head = BaseNetHead::create(in, cfg.base.hidden, cfg.base.embedding_dim, classes, cfg.base.dropout, rng);
  jitter_biases(head.mlp, rng);
  const std::vector<double> x = random_vec(in);
  const std::size_t cls = uniform_index(rng, classes);
  const double base_err = gradcheck(head.mlp, [cls](std::span<const double> logits) {
    return softmax_cross_entropy(logits, cls);
  }, x, mix_seed(cfg.seed, 1));

  RelationModel rn = RelationModel::create(cfg.relation_shape(), rng);
  jitter_biases(rn.g, rng);
  jitter_biases(rn.f, rng);
  const std::vector<double> target = random_vec(cfg.base.embedding_dim);
  std::vector<std::vector<std::vector<double>>> sets(2);
  for (auto& s : sets) {
    for (int m = 0; m < 3; ++m) s.push_back(random_vec(cfg.base.embedding_dim));
  }
  const double rn_err = relation_gradcheck(rn, target, sets, {1, 0}, mix_seed(cfg.seed, 2));
  log << "gradcheck: basenet max rel err " << base_err << ", relation max rel err " << rn_err << '\n';
  constexpr double kTolerance = 1e-4;
  if (!(base_err < kTolerance) || !(rn_err < kTolerance)) {
    throw ContractError("gradient check failed: max relative error above 1e-4");
  }
}

}  // namespace cli

// Returns the process exit code. Diagnostics go to err as one line.
inline int cli_main(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Relation-network classification over embeddings"};
  app.require_subcommand(1);
  CliOptions o;
  const auto common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "RunConfig JSON file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Master seed");
    sub->add_option("--k", o.k, "Reference-set size for nn/random/far");
    sub->add_option("--strategy", o.strategy, "Reference strategy")
        ->check(CLI::IsMember({"all", "nn", "random", "far"}));
    sub->add_option("--epochs", o.epochs, "Epoch budget for this stage");
    sub->add_option("--out", o.out, "Artifact directory");
  };
  struct Entry {
    const char* name;
    const char* help;
    void (*run)(const CliOptions&, std::ostream&);
  };
  const Entry entries[] = {
      {"synth", "Generate a synthetic dataset", cli::cmd_synth},
      {"split", "Group-level train/test split", cli::cmd_split},
      {"train-base", "Train the BaseNet head", cli::cmd_train_base},
      {"embed", "Extract penultimate-layer embeddings", cli::cmd_embed},
      {"train-rn", "Train a relation network", cli::cmd_train_rn},
      {"predict", "Classify test embeddings", cli::cmd_predict},
      {"eval", "Three-system report", cli::cmd_eval},
      {"sweep", "Strategy / k / seed comparison", cli::cmd_sweep},
      {"gradcheck", "Finite-difference gradient check", cli::cmd_gradcheck},
  };
  std::vector<std::pair<CLI::App*, const Entry*>> subs;
  for (const Entry& e : entries) {
    CLI::App* sub = app.add_subcommand(e.name, e.help);
    common(sub);
    if (std::string(e.name) == "synth") {
      sub->add_option("--profile", o.profile, "Class-frequency profile")->check(CLI::IsMember({"table1", "uniform"}));
      sub->add_option("--total", o.total, "Record count");
    }
    if (std::string(e.name) == "split") sub->add_option("--input", o.input, "Dataset CSV (default <out>/dataset.csv)");
    subs.emplace_back(sub, &e);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, log, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return e.get_exit_code() != 0 ? e.get_exit_code() : 2;
  }
  for (const auto& [sub, e] : subs) {
    if (!sub->parsed()) continue;
    try {
      e->run(o, log);
      return 0;
    } catch (const std::exception& ex) {
      std::string msg = ex.what();
      for (char& ch : msg) {
        if (ch == '\n') ch = ' ';
      }
      err << "error: " << e->name << ": " << msg << '\n';
      return 1;
    }
  }
  return 2;
}

}  // namespace relnn

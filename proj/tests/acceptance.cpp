// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "relnn/cli.hpp"
#include "relnn/pipeline.hpp"

using namespace relnn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<double> normal_vec(std::mt19937_64& gen, std::size_t n, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  std::vector<double> v(n);
  for (double& x : v) x = d(gen);
  return v;
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "relnn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) std::fprintf(stderr, "  cli %s failed: %s", args[1].c_str(), err.str().c_str());
  return code;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("relnn_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---------------------------------------------------------------- 1

Outcome gradient_correctness() {
  constexpr double kTol = 1e-4, kBudget = 60.0;
  const auto t0 = Clock::now();
  double base_worst = 0.0, rn_worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 gen(seed);
    Rng rng(seed);
    BaseNetHead head = BaseNetHead::create(32, 64, 32, 15, 0.5, rng);
    jitter_biases(head.mlp, rng);
    const std::size_t cls = gen() % 15;
    base_worst = std::max(base_worst, gradcheck(head.mlp, [cls](std::span<const double> z) {
      return softmax_cross_entropy(z, cls);
    }, normal_vec(gen, 32), mix_seed(seed, 1)));

    RelationModel rn = RelationModel::create({32, 64, 32, 32, 0.5, false}, rng);
    jitter_biases(rn.g, rng);
    jitter_biases(rn.f, rng);
    std::vector<std::vector<std::vector<double>>> sets(3);
    for (std::size_t s = 0; s < sets.size(); ++s) {
      for (std::size_t m = 0; m <= s + 1; ++m) sets[s].push_back(normal_vec(gen, 32));
    }
    rn_worst = std::max(rn_worst, relation_gradcheck(rn, normal_vec(gen, 32), sets, {1, 0, 0}, mix_seed(seed, 2)));
  }
  const double t = seconds_since(t0);
  return {base_worst < kTol && rn_worst < kTol && t < kBudget,
          fmt("basenet max rel err %.3g, relation max rel err %.3g (tol 1e-4), %.1f s (budget 60 s)", base_worst,
              rn_worst, t)};
}

// ---------------------------------------------------------------- 2

// Written independently of the library: full sort on (distance, id).
std::vector<std::pair<double, std::string>> naive_knn(const std::vector<LabeledEmbedding>& rows,
                                                      const std::vector<double>& q, std::size_t c, std::size_t k) {
  std::vector<std::pair<double, std::string>> all;
  for (const auto& r : rows) {
    if (r.label != c) continue;
    double s = 0.0;
    for (std::size_t j = 0; j < q.size(); ++j) s += (q[j] - r.vec[j]) * (q[j] - r.vec[j]);
    all.emplace_back(std::sqrt(s), r.id);
  }
  std::sort(all.begin(), all.end());
  all.resize(std::min(all.size(), k));
  return all;
}

Outcome knn_exactness() {
  constexpr double kBudget = 120.0;
  const auto t0 = Clock::now();
  std::mt19937_64 gen(2024);
  std::size_t queries = 0, mismatches = 0;
  for (int d = 0; d < 200; ++d) {
    const std::size_t n = d == 0 ? 10000 : 1 + gen() % 10000;
    const std::size_t dim = d == 0 ? 64 : 1 + gen() % 64;
    const std::size_t classes = d == 0 ? 15 : 1 + gen() % 15;
    // Every fourth dataset lives on a small integer grid so distances tie.
    const bool grid = d % 4 == 1;
    std::uniform_int_distribution<int> cell(-1, 1);
    std::vector<LabeledEmbedding> rows(n);
    for (std::size_t i = 0; i < n; ++i) {
      rows[i].id = fmt("d%d_%06zu", d, static_cast<std::size_t>(gen() % 1000000)) + "_" + std::to_string(i);
      rows[i].label = gen() % classes;
      if (grid) {
        for (std::size_t j = 0; j < dim; ++j) rows[i].vec.push_back(cell(gen));
      } else {
        rows[i].vec = normal_vec(gen, dim);
      }
    }
    const KnnIndex idx = build_index(rows, classes);
    for (int q = 0; q < 10; ++q) {
      std::vector<double> target = q % 2 ? rows[gen() % n].vec : normal_vec(gen, dim);
      if (grid) {
        for (double& x : target) x = std::round(x);
      }
      const std::size_t c = gen() % classes, k = 1 + gen() % 64;
      if (idx.class_size(c) == 0) continue;
      ++queries;
      const auto got = query_class_knn(idx, target, c, k);
      const auto lib = brute_force_oracle(rows, target, c, k);
      const auto own = naive_knn(rows, target, c, k);
      bool same = got == lib && got.size() == own.size();
      for (std::size_t i = 0; same && i < got.size(); ++i) {
        same = got[i].id == own[i].second && got[i].distance == own[i].first;
      }
      mismatches += !same;
    }
  }
  const double t = seconds_since(t0);
  return {mismatches == 0 && queries > 0 && t < kBudget,
          fmt("%zu queries over 200 datasets, %zu mismatches against both oracles, %.1f s (budget 120 s)", queries,
              mismatches, t)};
}

// ---------------------------------------------------------------- 3

Outcome permutation_invariance() {
  constexpr double kBudget = 30.0;
  const auto t0 = Clock::now();
  std::mt19937_64 gen(77);
  std::size_t broken = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t emb = 2 + gen() % 15;
    Rng rng(gen());
    RelationModel m = RelationModel::create({emb, 4 + gen() % 29, 2 + gen() % 15, 2 + gen() % 15, 0.5, false}, rng);
    jitter_biases(m.g, rng, 0.5);
    const std::vector<double> target = normal_vec(gen, emb, 3.0);
    std::vector<ReferenceMember> members(1 + gen() % 30);
    for (std::size_t i = 0; i < members.size(); ++i) {
      members[i] = {fmt("m%04zu", static_cast<std::size_t>(gen() % 10000)) + std::to_string(i), normal_vec(gen, emb, 3.0)};
    }
    const double base = relation_score(m, target, members);
    for (int p = 0; p < 3; ++p) {
      std::shuffle(members.begin(), members.end(), gen);
      broken += relation_score(m, target, members) != base;
    }
  }
  const double t = seconds_since(t0);
  return {broken == 0 && t < kBudget,
          fmt("1000 triples x 3 permutations, %zu scores changed (bit-exact), %.2f s (budget 30 s)", broken, t)};
}

// ---------------------------------------------------------------- 4

Outcome metric_oracle() {
  const std::vector<std::size_t> t = {0, 0, 1}, y = {0, 1, 1};
  const auto ex = compute_metrics(t, y, 2).metrics;
  const bool example = ex.weighted_f1 == 2.0 / 3.0 && ex.precision[0] == 1.0 && ex.recall[0] == 0.5 &&
                       ex.f1[0] == 2.0 / 3.0 && ex.precision[1] == 0.5 && ex.recall[1] == 1.0 &&
                       ex.f1[1] == 2.0 / 3.0;
  std::mt19937_64 gen(4);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t classes = 1 + gen() % 15, n = 1 + gen() % 500;
    std::vector<std::size_t> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = gen() % classes;
      pred[i] = gen() % 2 ? truth[i] : gen() % classes;
    }
    const auto m = compute_metrics(truth, pred, classes).metrics;
    // Independent: per-class counts, F1 as 2TP / (2TP + FP + FN), long double.
    std::vector<long double> tp(classes), fp(classes), fn(classes);
    for (std::size_t i = 0; i < n; ++i) {
      if (truth[i] == pred[i]) {
        tp[truth[i]] += 1;
      } else {
        fp[pred[i]] += 1;
        fn[truth[i]] += 1;
      }
    }
    long double wp = 0, wr = 0, wf = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      const long double sup = tp[c] + fn[c];
      const long double p = tp[c] + fp[c] > 0 ? tp[c] / (tp[c] + fp[c]) : 0;
      const long double r = sup > 0 ? tp[c] / sup : 0;
      const long double f = tp[c] > 0 ? 2 * tp[c] / (2 * tp[c] + fp[c] + fn[c]) : 0;
      worst = std::max({worst, std::fabs(m.precision[c] - static_cast<double>(p)),
                        std::fabs(m.recall[c] - static_cast<double>(r)), std::fabs(m.f1[c] - static_cast<double>(f))});
      wp += sup * p;
      wr += sup * r;
      wf += sup * f;
    }
    const long double N = static_cast<long double>(n);
    worst = std::max({worst, std::fabs(m.weighted_precision - static_cast<double>(wp / N)),
                      std::fabs(m.weighted_recall - static_cast<double>(wr / N)),
                      std::fabs(m.weighted_f1 - static_cast<double>(wf / N))});
  }
  return {example && worst <= 1e-12,
          fmt("hand example %s, max |diff| vs independent oracle on 100 vectors %.3g (tol 1e-12)",
              example ? "exact" : "WRONG", worst)};
}

// ---------------------------------------------------------------- 5

Outcome table1_fidelity() {
  // Slice counts and class order as printed in the dataset table.
  const std::vector<std::pair<std::string, std::size_t>> table = {
      {"along falx/tentorium", 1025}, {"basal cisterns", 504},  {"brainstem", 95},        {"cerebellum", 236},
      {"ethmoidal", 113},             {"frontal region", 4263}, {"gangliocapsular region", 146},
      {"maxillary", 622},             {"occipital region", 760}, {"parietal region", 2341}, {"sphenoid", 254},
      {"sulcal spaces", 1026},        {"temporal region", 2520}, {"thalamus", 51},          {"ventricular system", 1469}};
  const fs::path dir = scratch("table1");
  if (cli({"synth", "--profile", "table1", "--total", "15425", "--out", dir.string()}) != 0 ||
      cli({"split", "--out", dir.string()}) != 0) {
    return {false, "cli synth/split failed"};
  }
  const auto manifest = cli::read_manifest((dir / "classes.txt").string());
  const Dataset ds = parse_embedding_csv((dir / "dataset.csv").string(), manifest);
  const Dataset train = parse_embedding_csv((dir / "train.csv").string(), manifest);
  const Dataset test = parse_embedding_csv((dir / "test.csv").string(), manifest);
  const ClassHistogram h = class_histogram(ds);
  std::size_t wrong = 0;
  for (std::size_t c = 0; c < table.size(); ++c) {
    wrong += c >= ds.class_names.size() || ds.class_names[c] != table[c].first || h.counts[c] != table[c].second;
  }
  wrong += ds.class_names.size() != table.size();
  const std::size_t g_all = distinct_groups(ds).size(), g_train = distinct_groups(train).size(),
                    g_test = distinct_groups(test).size();
  fs::remove_all(dir);
  return {wrong == 0 && ds.records.size() == 15425 && g_all == 216 && g_train == 173 && g_test == 43,
          fmt("%zu records, %zu class counts off, groups %zu -> %zu/%zu (want 15425, 0, 216 -> 173/43)",
              ds.records.size(), wrong, g_all, g_train, g_test)};
}

// ---------------------------------------------------------------- 6

Outcome sampler_uniformity() {
  const Dataset ds = synth_generate(table1_profile(), SynthParams{16, 16, 1.0, 0.5, 6});
  const std::size_t median = median_class_count(ds);
  std::size_t bad = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const std::size_t target = seed % 2 ? median : 37 * seed;
    const auto items = balanced_epoch(ds, {target, 0.1, seed});
    std::vector<std::size_t> per(ds.num_classes(), 0);
    for (const auto& it : items) ++per[it.label];
    bad += items.size() != target * ds.num_classes() ||
           std::any_of(per.begin(), per.end(), [&](std::size_t n) { return n != target; });
  }
  return {bad == 0, fmt("20 seeds (targets: median %zu and 37*seed), %zu non-uniform epochs", median, bad)};
}

// ---------------------------------------------------------------- 7

Outcome strategy_degeneracy() {
  const RunConfig cfg = config_from_json(json::parse(R"({
    "seed": 7,
    "data": {"total": 1200, "overlap": 1.5},
    "basenet": {"hidden": 32, "embedding_dim": 16, "epochs": 3},
    "relnet": {"g_hidden": 16, "ref_dim": 16, "f_hidden": 16, "epochs": 2, "negatives_per_target": 3}
  })"));
  const Dataset ds = synth_generate(cfg.profile(), cfg.synth_params());
  const TrainTest tt = group_split(ds, cfg.data.train_fraction, cfg.split_seed());
  const BaseStage base = run_train_base(tt.train, cfg);
  const EmbeddingSet train_emb = embed_dataset(base.head, tt.train), test_emb = embed_dataset(base.head, tt.test);
  std::size_t kmax = 0;
  for (std::size_t n : class_histogram(tt.train).counts) kmax = std::max(kmax, n);
  const auto all = ReferenceStrategy::all(), nn = ReferenceStrategy::nearest(kmax);
  const PairSet pa = make_pairs(train_emb, all, cfg), pn = make_pairs(train_emb, nn, cfg);
  bool pairs_same = pa.pairs.size() == pn.pairs.size() && pa.skipped_positives == pn.skipped_positives;
  for (std::size_t i = 0; pairs_same && i < pa.pairs.size(); ++i) {
    const auto &a = pa.pairs[i], &b = pn.pairs[i];
    pairs_same = a.target == b.target && a.ref_class == b.ref_class && a.label == b.label && a.members == b.members;
  }
  const RnStage ra = run_train_rn(train_emb, all, cfg), rn = run_train_rn(train_emb, nn, cfg);
  const bool trace_same = ra.loss_trace == rn.loss_trace;
  const auto f1 = [&](const RelationModel& m, const ReferenceStrategy& s) {
    return evaluate_relnet("x", m, train_emb, test_emb, s, cfg.predict_seed()).result.metrics.weighted_f1;
  };
  const double fa = f1(ra.model, cfg.eval_strategy()), fn = f1(rn.model, cfg.eval_strategy());
  const double fa_own = f1(ra.model, all), fn_own = f1(rn.model, nn);
  return {pairs_same && trace_same && fa == fn && fa_own == fn_own,
          fmt("k=%zu: %zu pairs %s, loss traces %s, weighted F1 %.6f vs %.6f (own-strategy %.6f vs %.6f)", kmax,
              pa.pairs.size(), pairs_same ? "identical" : "DIFFER", trace_same ? "identical" : "DIFFER", fa, fn,
              fa_own, fn_own)};
}

// ---------------------------------------------------------------- 8

Outcome qualitative_reproduction() {
  constexpr double kBudget = 600.0;
  const auto t0 = Clock::now();
  const RunConfig cfg = config_from_json(json::parse(R"({
    "data": {"total": 5000, "overlap": 2.5},
    "basenet": {"hidden": 64, "embedding_dim": 32, "epochs": 30},
    "relnet": {"g_hidden": 32, "ref_dim": 32, "f_hidden": 32, "epochs": 5, "negatives_per_target": 4,
               "batch_size": 128, "loss_reduction": "sum"}
  })"));
  std::vector<std::uint64_t> seeds(10);
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = i + 1;
  const auto rows = sweep(cfg, {"all", "nn"}, {cfg.rn.k}, seeds);
  int f1_wins = 0, minority_wins = 0, base_in_window = 0;
  std::string per_seed;
  for (std::size_t i = 0; i + 1 < rows.size(); i += 2) {
    const SweepRow &a = rows[i], &n = rows[i + 1];
    f1_wins += n.weighted_f1 >= a.weighted_f1;
    minority_wins += n.minority_min_f1 >= a.minority_min_f1;
    base_in_window += a.basenet_weighted_f1 >= 0.5 && a.basenet_weighted_f1 <= 0.8;
    std::printf("    seed %2llu: basenet %.3f  all %.3f  nn %.3f  minority-min all %.3f nn %.3f\n",
                static_cast<unsigned long long>(a.seed), a.basenet_weighted_f1, a.weighted_f1, n.weighted_f1,
                a.minority_min_f1, n.minority_min_f1);
  }
  const double t = seconds_since(t0);
  return {f1_wins >= 7 && minority_wins >= 6 && base_in_window == 10 && t < kBudget,
          fmt("nn F1 >= all in %d/10 (need 7), minority min F1 >= in %d/10 (need 6), basenet F1 in [0.5,0.8] "
              "in %d/10 (need 10), %.0f s (budget 600 s)",
              f1_wins, minority_wins, base_in_window, t)};
}

// ---------------------------------------------------------------- 9

Outcome determinism() {
  const char* config = R"({
    "seed": 11,
    "data": {"total": 1500, "overlap": 1.5},
    "basenet": {"hidden": 32, "embedding_dim": 16, "epochs": 3},
    "relnet": {"g_hidden": 16, "ref_dim": 16, "f_hidden": 16, "epochs": 2, "negatives_per_target": 4}
  })";
  std::vector<fs::path> dirs = {scratch("det_a"), scratch("det_b")};
  for (const auto& d : dirs) {
    std::ofstream(d / "run.json") << config;
    const std::string cfg = (d / "run.json").string();
    for (std::vector<std::string> step : std::vector<std::vector<std::string>>{
             {"synth"}, {"split"}, {"train-base"}, {"embed"}, {"train-rn", "--strategy", "all"},
             {"train-rn", "--strategy", "nn"}, {"predict", "--strategy", "all"}, {"predict", "--strategy", "nn"},
             {"eval"}}) {
      step.insert(step.end(), {"--config", cfg, "--out", d.string()});
      if (cli(step) != 0) return {false, "pipeline step " + step[0] + " failed"};
    }
  }
  std::size_t compared = 0, differing = 0;
  for (const auto& e : fs::directory_iterator(dirs[0])) {
    const std::string name = e.path().filename().string();
    ++compared;
    differing += !fs::exists(dirs[1] / name) || slurp(e.path()) != slurp(dirs[1] / name);
  }
  const bool has_all = fs::exists(dirs[0] / "base.ckpt") && fs::exists(dirs[0] / "rn_nn.g.ckpt") &&
                       fs::exists(dirs[0] / "predictions_nn.csv") && fs::exists(dirs[0] / "report.json");
  for (const auto& d : dirs) fs::remove_all(d);
  return {has_all && differing == 0 && compared > 0,
          fmt("%zu artifacts compared across two runs, %zu differ", compared, differing)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"k-NN exactness", knn_exactness},
      {"permutation invariance", permutation_invariance},
      {"metric oracle", metric_oracle},
      {"table1 generator fidelity", table1_fidelity},
      {"sampler uniformity", sampler_uniformity},
      {"strategy degeneracy", strategy_degeneracy},
      {"qualitative reproduction", qualitative_reproduction},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %zu %s: %s (%s)\n", i + 1, criteria[i].first, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}

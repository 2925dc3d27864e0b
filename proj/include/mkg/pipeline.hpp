#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mkg/ensemble.hpp"
#include "mkg/error.hpp"
#include "mkg/eval.hpp"
#include "mkg/features.hpp"
#include "mkg/graph.hpp"
#include "mkg/io.hpp"
#include "mkg/kge.hpp"
#include "mkg/log.hpp"
#include "mkg/stats.hpp"
#include "mkg/synth.hpp"

namespace mkg {

// ---------------------------------------------------------------------------
// Configuration

struct InputPaths {
  io::fs::path nodes;  // empty = corpus/ under the work dir
  io::fs::path edges;  // one BOM CSV or a directory of them
  io::fs::path pairs;
};

struct GraphOptions {
  bool symmetrize = false;  // add reversed training similarTo triples
  std::array<double, 3> split{0.70, 0.15, 0.15};
};

struct FeatureOptions {
  std::size_t min_freq = 2;
  std::size_t pca_dim = 100;
};

struct EvalOptions {
  std::size_t seeds = 1;
  bool filtered = true;
  bool same_type = false;
  std::vector<std::size_t> k_values{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::size_t neighbors_k = 3;
  std::vector<ModelKind> models{ModelKind::TransE, ModelKind::DistMult, ModelKind::ComplEx};
  std::vector<NegativeStrategy::Kind> strategies{NegativeStrategy::Kind::Random, NegativeStrategy::Kind::Biased};

  RankOptions rank_options() const { return {filtered, same_type}; }
};

struct PipelineConfig {
  std::uint64_t seed = 7;
  io::fs::path work_dir = "work";
  InputPaths paths;
  synth::SynthConfig synth = synth::SynthConfig::desk();
  GraphOptions graph;
  FeatureOptions features;
  TrainConfig train;
  FinetuneConfig finetune;
  EvalOptions eval;

  void validate() const {
    synth.validate();
    train.validate();
    finetune.validate();
    if (features.min_freq == 0) throw ConfigError("features.min_freq must be positive");
    if (features.pca_dim == 0) throw ConfigError("features.pca_dim must be positive");
    if (eval.seeds == 0) throw ConfigError("eval.seeds must be positive");
    if (eval.neighbors_k == 0) throw ConfigError("eval.neighbors_k must be positive");
    for (std::size_t k : eval.k_values) {
      if (k == 0) throw ConfigError("eval.k_values entries must be positive");
    }
    if (eval.models.empty()) throw ConfigError("eval.models is empty");
    if (eval.strategies.empty()) throw ConfigError("eval.strategies is empty");
  }
};

namespace detail {

// Reads one JSON object section, remembering which keys were consumed so that
// leftovers can be reported with their full path.
class Section {
 public:
  Section(const io::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const io::json::exception&) {
      throw ConfigError(field(key) + " has the wrong type");
    }
  }

  void mark(const char* key) { seen_.insert(key); }

  const io::json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  Section child(const char* key) {
    seen_.insert(key);
    return Section(j_.at(key), field(key));
  }

  std::string field(const char* key) const { return path_.empty() ? std::string(key) : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.contains(k)) throw ConfigError("unknown config key '" + field(k.c_str()) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const io::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class Fn>
auto with_path(const std::string& path, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace detail

inline NegativeStrategy::Kind parse_strategy_kind(std::string_view s) { return parse_strategy(s); }

inline PipelineConfig config_from_json(const io::json& j, PipelineConfig c = {}) {
  detail::Section root(j, "");
  root.get("seed", c.seed);
  if (root.has("work_dir")) {
    std::string w;
    root.get("work_dir", w);
    c.work_dir = w;
  }

  if (root.has("paths")) {
    auto s = root.child("paths");
    std::string nodes = c.paths.nodes.string(), edges = c.paths.edges.string(), pairs = c.paths.pairs.string();
    s.get("nodes", nodes);
    s.get("edges", edges);
    s.get("pairs", pairs);
    s.finish();
    c.paths = {nodes, edges, pairs};
  }

  bool synth_seed = false;
  if (root.has("synth")) {
    const io::json& sj = root.raw("synth");
    detail::Section s(sj, "synth");
    for (const char* k : {"preset", "seed", "machines", "target_entities", "target_pairs", "type_count", "max_depth",
                          "sharing_rate", "unit_variant_rate", "family_min", "family_max"}) {
      s.mark(k);
    }
    s.finish();
    synth_seed = sj.contains("seed");
    c.synth = synth::config_from_json(sj, c.synth);
  }
  if (!synth_seed) c.synth.seed = c.seed;

  if (root.has("graph")) {
    auto s = root.child("graph");
    s.get("symmetrize", c.graph.symmetrize);
    s.get("split", c.graph.split);
    s.finish();
  }
  if (root.has("features")) {
    auto s = root.child("features");
    s.get("min_freq", c.features.min_freq);
    s.get("pca_dim", c.features.pca_dim);
    s.finish();
  }
  if (root.has("train")) {
    auto s = root.child("train");
    if (s.has("model")) {
      std::string m;
      s.get("model", m);
      c.train.model = detail::with_path("train.model", [&] { return parse_model_kind(m); });
    }
    s.get("dim", c.train.dim);
    s.get("learning_rate", c.train.learning_rate);
    s.get("batch_size", c.train.batch_size);
    s.get("max_epochs", c.train.max_epochs);
    s.get("dropout", c.train.dropout);
    s.get("negatives", c.train.negatives);
    s.get("retry_cap", c.train.retry_cap);
    s.finish();
  }
  if (root.has("finetune")) {
    auto s = root.child("finetune");
    auto& f = c.finetune;
    s.get("learning_rate", f.learning_rate);
    s.get("batch_size", f.batch_size);
    s.get("dropout", f.dropout);
    s.get("negatives", f.negatives);
    s.get("hidden", f.hidden);
    s.get("max_epochs", f.max_epochs);
    s.get("patience", f.patience);
    s.get("eval_every", f.eval_every);
    s.get("retry_cap", f.retry_cap);
    s.get("freeze_topology", f.freeze_topology);
    s.get("paper_exact", f.paper_exact);
    if (s.has("strategy")) {
      auto st = s.child("strategy");
      if (st.has("kind")) {
        std::string k;
        st.get("kind", k);
        f.strategy.kind = detail::with_path("finetune.strategy.kind", [&] { return parse_strategy_kind(k); });
      }
      st.get("tau", f.strategy.tau);
      st.get("same_type", f.strategy.same_type);
      st.get("same_machine", f.strategy.same_machine);
      st.finish();
    }
    s.finish();
  }
  if (root.has("eval")) {
    auto s = root.child("eval");
    s.get("seeds", c.eval.seeds);
    s.get("filtered", c.eval.filtered);
    s.get("same_type", c.eval.same_type);
    s.get("k_values", c.eval.k_values);
    s.get("neighbors_k", c.eval.neighbors_k);
    if (s.has("models")) {
      std::vector<std::string> names;
      s.get("models", names);
      c.eval.models.clear();
      for (const auto& n : names) c.eval.models.push_back(detail::with_path("eval.models", [&] { return parse_model_kind(n); }));
    }
    if (s.has("strategies")) {
      std::vector<std::string> names;
      s.get("strategies", names);
      c.eval.strategies.clear();
      for (const auto& n : names) {
        c.eval.strategies.push_back(detail::with_path("eval.strategies", [&] { return parse_strategy_kind(n); }));
      }
    }
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

inline PipelineConfig load_config(const io::fs::path& path, PipelineConfig base = {}) {
  if (!io::fs::exists(path)) throw MissingArtifact("config file " + path.string() + " does not exist");
  io::json j;
  try {
    j = io::json::parse(io::read_text(path));
  } catch (const io::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j, std::move(base));
}

inline io::json config_to_json(const PipelineConfig& c) {
  io::json models = io::json::array();
  for (auto m : c.eval.models) models.push_back(std::string(to_string(m)));
  io::json strategies = io::json::array();
  for (auto s : c.eval.strategies) strategies.push_back(std::string(to_string(s)));
  const auto& f = c.finetune;
  return {
      {"seed", c.seed},
      {"work_dir", c.work_dir.string()},
      {"paths", {{"nodes", c.paths.nodes.string()}, {"edges", c.paths.edges.string()}, {"pairs", c.paths.pairs.string()}}},
      {"synth", synth::config_to_json(c.synth)},
      {"graph", {{"symmetrize", c.graph.symmetrize}, {"split", c.graph.split}}},
      {"features", {{"min_freq", c.features.min_freq}, {"pca_dim", c.features.pca_dim}}},
      {"train",
       {{"model", std::string(to_string(c.train.model))},
        {"dim", c.train.dim},
        {"learning_rate", c.train.learning_rate},
        {"batch_size", c.train.batch_size},
        {"max_epochs", c.train.max_epochs},
        {"dropout", c.train.dropout},
        {"negatives", c.train.negatives},
        {"retry_cap", c.train.retry_cap}}},
      {"finetune",
       {{"learning_rate", f.learning_rate},
        {"batch_size", f.batch_size},
        {"dropout", f.dropout},
        {"negatives", f.negatives},
        {"hidden", f.hidden},
        {"max_epochs", f.max_epochs},
        {"patience", f.patience},
        {"eval_every", f.eval_every},
        {"retry_cap", f.retry_cap},
        {"freeze_topology", f.freeze_topology},
        {"paper_exact", f.paper_exact},
        {"strategy",
         {{"kind", std::string(to_string(f.strategy.kind))},
          {"tau", f.strategy.tau},
          {"same_type", f.strategy.same_type},
          {"same_machine", f.strategy.same_machine}}}}},
      {"eval",
       {{"seeds", c.eval.seeds},
        {"filtered", c.eval.filtered},
        {"same_type", c.eval.same_type},
        {"k_values", c.eval.k_values},
        {"neighbors_k", c.eval.neighbors_k},
        {"models", models},
        {"strategies", strategies}}}};
}

// ---------------------------------------------------------------------------
// Work directory layout

class WorkDir {
 public:
  explicit WorkDir(io::fs::path root) : root_(std::move(root)) {}

  const io::fs::path& root() const { return root_; }
  io::fs::path corpus() const { return root_ / "corpus"; }
  io::fs::path graph() const { return root_ / "graph.json"; }
  io::fs::path split() const { return root_ / "split.json"; }
  io::fs::path stats() const { return root_ / "stats.json"; }
  io::fs::path vocabulary() const { return root_ / "vocabulary.json"; }
  io::fs::path projection() const { return root_ / "projection.blob"; }
  io::fs::path features() const { return root_ / "features.blob"; }
  io::fs::path features_csv() const { return root_ / "features.csv"; }
  io::fs::path metrics() const { return root_ / "metrics"; }
  io::fs::path runs() const { return root_ / "runs"; }

  io::fs::path topology(ModelKind m, std::uint64_t seed) const {
    return root_ / ("topology_" + std::string(to_string(m)) + "_s" + std::to_string(seed) + ".blob");
  }
  io::fs::path topology_csv(ModelKind m, std::uint64_t seed) const {
    return io::fs::path(topology(m, seed)).replace_extension(".csv");
  }
  io::fs::path train_log(ModelKind m, std::uint64_t seed) const {
    return root_ / ("train_" + std::string(to_string(m)) + "_s" + std::to_string(seed) + ".json");
  }
  io::fs::path finetune(const std::string& tag) const { return root_ / ("finetune_" + tag + ".blob"); }
  io::fs::path finetune_log(const std::string& tag) const { return root_ / ("finetune_" + tag + ".json"); }

 private:
  io::fs::path root_;
};

// model_strategy[_frozen][_exact]_s<seed>
inline std::string run_tag(ModelKind m, const FinetuneConfig& f, std::uint64_t seed) {
  std::string tag = std::string(to_string(m)) + "_" + std::string(to_string(f.strategy.kind));
  if (f.freeze_topology) tag += "_frozen";
  if (f.paper_exact) tag += "_exact";
  return tag + "_s" + std::to_string(seed);
}

inline std::string run_tag(const PipelineConfig& c) { return run_tag(c.train.model, c.finetune, c.seed); }

inline void require(const io::fs::path& p, std::string_view producer) {
  if (!io::fs::exists(p)) {
    throw MissingArtifact(p.string() + " not found; run `mkg " + std::string(producer) + "` first");
  }
}

inline std::vector<std::string> node_ids(const MachineKnowledgeGraph& g) {
  std::vector<std::string> ids;
  ids.reserve(g.node_count());
  for (const auto& n : g.nodes()) ids.push_back(n.id.str());
  return ids;
}

inline void write_matrix_csv(const io::fs::path& p, const MachineKnowledgeGraph& g, const Matrix& m,
                             std::string_view prefix) {
  std::ostringstream out;
  io::write_rows_csv(out, node_ids(g), m, prefix);
  io::write_text(p, out.str());
}

inline void write_json(const io::fs::path& p, const io::json& j) {
  if (p.has_parent_path()) io::fs::create_directories(p.parent_path());
  io::write_text(p, j.dump(2) + "\n");
}

inline io::json read_json(const io::fs::path& p, std::string_view producer) {
  require(p, producer);
  try {
    return io::json::parse(io::read_text(p));
  } catch (const io::json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

// Records what a command read, what it wrote and how long it took. Wall time
// lives only here, never in metric files.
class RunManifest {
 public:
  RunManifest(std::string command, const PipelineConfig& config)
      : command_(std::move(command)), config_(config_to_json(config)), start_(std::chrono::steady_clock::now()) {}

  void input(const io::fs::path& p) { inputs_[p.string()] = fingerprint(p); }
  void output(const io::fs::path& p) { outputs_[p.string()] = fingerprint(p); }
  void note(const std::string& key, io::json value) { extra_[key] = std::move(value); }

  void write(const WorkDir& wd, const std::string& name) const {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    io::json j{{"command", command_}, {"config", config_}, {"inputs", inputs_}, {"outputs", outputs_},
               {"wall_time_s", wall}};
    if (!extra_.empty()) j["details"] = extra_;
    write_json(wd.runs() / (name + ".json"), j);
  }

 private:
  static std::string fingerprint(const io::fs::path& p) {
    if (io::fs::is_directory(p)) {
      std::vector<io::fs::path> files;
      for (const auto& e : io::fs::directory_iterator(p)) {
        if (e.is_regular_file()) files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      std::uint64_t h = io::fnv1a("dir");
      for (const auto& f : files) {
        h = io::fnv1a(f.filename().string(), h);
        h = io::fnv1a(io::read_text(f), h);
      }
      return io::hex64(h);
    }
    return io::file_fingerprint(p);
  }

  std::string command_;
  io::json config_;
  io::json inputs_ = io::json::object();
  io::json outputs_ = io::json::object();
  io::json extra_ = io::json::object();
  std::chrono::steady_clock::time_point start_;
};

// ---------------------------------------------------------------------------
// Experiment core, shared by the commands and the acceptance harness

struct ExperimentData {
  MachineKnowledgeGraph graph;
  TripleSplit split;
  Matrix features;  // one projected row per node

  std::vector<Triple> test() const { return similar_triples(graph, split.test); }
};

// Every connectedTo and training similarTo triple, reversed, joins the
// training split. Valid and test pairs stay one-directional so nothing leaks.
inline void symmetrize_training(MachineKnowledgeGraph& graph, TripleSplit& split) {
  std::vector<Triple> reversed;
  for (std::size_t i : split.train) {
    const Triple& t = graph.triples()[i];
    if (t.relation == RelationKind::SimilarTo) reversed.push_back({t.tail, t.relation, t.head});
  }
  for (const Triple& t : reversed) {
    if (graph.add_triple(t)) split.train.push_back(graph.triples().size() - 1);
  }
}

inline Matrix encode_features(const MachineKnowledgeGraph& graph, const FeatureOptions& opt,
                              AttributeVocabulary* vocab_out = nullptr, ProjectionModel* model_out = nullptr) {
  AttributeVocabulary vocab = build_vocabulary(graph.nodes(), opt.min_freq);
  const Matrix L = encode(graph.nodes(), vocab);
  ProjectionModel model = fit_pca(L, opt.pca_dim);
  Matrix F = project(L, model);
  if (vocab_out != nullptr) *vocab_out = std::move(vocab);
  if (model_out != nullptr) *model_out = std::move(model);
  return F;
}

inline ExperimentData prepare_experiment(MachineKnowledgeGraph graph, const PipelineConfig& c) {
  ExperimentData d;
  d.split = split_similar_edges(graph, c.graph.split, c.seed);
  if (c.graph.symmetrize) symmetrize_training(graph, d.split);
  d.graph = std::move(graph);
  d.features = encode_features(d.graph, c.features);
  return d;
}

inline MachineKnowledgeGraph graph_from_corpus(const synth::Corpus& corpus) {
  // same BOM order as `build`, which reads <root>.csv files sorted by name
  std::vector<const BomTree*> order;
  for (const auto& b : corpus.boms) order.push_back(&b);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->root.str() < b->root.str(); });
  MachineKnowledgeGraph g;
  for (const auto* b : order) g.ingest_bom(*b);
  const std::vector<io::PartPair> pairs(corpus.pairs.begin(), corpus.pairs.end());
  g.ingest_substitutes(pairs, false);
  return g;
}

inline Stage1Result train_topology(const ExperimentData& d, TrainConfig tc, std::uint64_t seed) {
  tc.seed = seed;
  return train_stage1(d.graph, d.split, tc);
}

inline FinetuneResult train_ensemble(const ExperimentData& d, const EmbeddingTable& topology, FinetuneConfig fc,
                                     std::uint64_t seed) {
  fc.seed = seed;
  FusedEmbeddingTable fused = fuse_embeddings(topology, d.features);
  ScorerParams scorer = init_scorer(fused.scorer_input_width(), fc.hidden, !fc.paper_exact, seed);
  return finetune(d.graph, d.split, std::move(fused), std::move(scorer), fc);
}

inline RankingReport test_topology(const ExperimentData& d, const EmbeddingTable& t, const RankOptions& opt) {
  const TypeLabels labels = type_labels(d.graph);
  const std::vector<Triple> test = d.test();
  return evaluate_ranking(KgeScorer(t), test, d.graph.triple_set(), opt, opt.same_type ? &labels.label : nullptr);
}

inline RankingReport test_ensemble(const ExperimentData& d, const FusedEmbeddingTable& f, const ScorerParams& p,
                                   const RankOptions& opt) {
  const TypeLabels labels = type_labels(d.graph);
  const std::vector<Triple> test = d.test();
  return evaluate_ranking(EnsembleScorer(f, p), test, d.graph.triple_set(), opt,
                          opt.same_type ? &labels.label : nullptr);
}

struct StrategyRun {
  NegativeStrategy::Kind strategy = NegativeStrategy::Kind::Random;
  std::size_t negatives = 0;
  RankingMetrics test;
  std::vector<double> valid_curve;
  std::vector<double> loss_curve;
  std::size_t best_epoch = 0;
  double best_valid_mrr = 0.0;
  std::size_t epochs_run = 0;
};

struct Replica {
  ModelKind model = ModelKind::DistMult;
  std::uint64_t seed = 0;
  RankingMetrics topology;  // stage-1 embeddings alone
  std::vector<StrategyRun> runs;
};

inline StrategyRun to_strategy_run(const ExperimentData& d, const FinetuneResult& r, NegativeStrategy::Kind kind,
                                   std::size_t k, const RankOptions& opt) {
  StrategyRun s;
  s.strategy = kind;
  s.negatives = k;
  s.test = test_ensemble(d, r.fused, r.scorer, opt).overall;
  s.valid_curve = r.valid_mrr_curve;
  s.loss_curve = r.loss_curve;
  s.best_epoch = r.best_epoch;
  s.best_valid_mrr = r.best_valid_mrr;
  s.epochs_run = r.epochs_run;
  return s;
}

// One stage-1 model per seed, then one fine-tune per (strategy, K).
inline Replica run_replica(const ExperimentData& d, const PipelineConfig& c, ModelKind model, std::uint64_t seed,
                           std::span<const NegativeStrategy::Kind> strategies, std::span<const std::size_t> ks) {
  Replica rep;
  rep.model = model;
  rep.seed = seed;
  TrainConfig tc = c.train;
  tc.model = model;
  const RankOptions opt = c.eval.rank_options();
  const Stage1Result s1 = train_topology(d, tc, seed);
  rep.topology = test_topology(d, s1.table, opt).overall;
  for (auto kind : strategies) {
    for (std::size_t k : ks) {
      FinetuneConfig fc = c.finetune;
      fc.strategy.kind = kind;
      fc.negatives = k;
      fc.ranking = opt;
      const FinetuneResult r = train_ensemble(d, s1.table, fc, seed);
      rep.runs.push_back(to_strategy_run(d, r, kind, k, opt));
      log_info(std::string(to_string(model)) + " " + std::string(to_string(kind)) + " K=" + std::to_string(k) +
               " seed " + std::to_string(seed) + " test MRR " + io::format_double(rep.runs.back().test.mrr));
    }
  }
  return rep;
}

inline io::json strategy_run_to_json(const StrategyRun& s) {
  return {{"strategy", std::string(to_string(s.strategy))},
          {"negatives", s.negatives},
          {"test", metrics_to_json(s.test)},
          {"best_epoch", s.best_epoch},
          {"best_valid_mrr", s.best_valid_mrr},
          {"epochs_run", s.epochs_run},
          {"valid_mrr_curve", s.valid_curve},
          {"loss_curve", s.loss_curve}};
}

inline io::json replica_to_json(const Replica& r) {
  io::json runs = io::json::array();
  for (const auto& s : r.runs) runs.push_back(strategy_run_to_json(s));
  return {{"model", std::string(to_string(r.model))},
          {"seed", r.seed},
          {"topology_test", metrics_to_json(r.topology)},
          {"ensemble", runs}};
}

// Row names in result tables: "DistMult", "DistMult-Ensemble", "DistMult-Ensemble (Biased)".
inline std::string display_name(ModelKind m) {
  switch (m) {
    case ModelKind::TransE: return "TransE";
    case ModelKind::DistMult: return "DistMult";
    case ModelKind::ComplEx: return "ComplEx";
  }
  return "?";
}

inline std::string display_name(ModelKind m, NegativeStrategy::Kind s) {
  return display_name(m) + "-Ensemble" + (s == NegativeStrategy::Kind::Biased ? " (Biased)" : "");
}

// ---------------------------------------------------------------------------
// Loading artifacts

inline MachineKnowledgeGraph load_graph(const WorkDir& wd) {
  return io::graph_from_json(read_json(wd.graph(), "build"));
}

inline ExperimentData load_experiment(const WorkDir& wd, bool need_features = true) {
  ExperimentData d;
  d.graph = load_graph(wd);
  d.split = io::split_from_json(read_json(wd.split(), "build"));
  if (need_features) {
    require(wd.features(), "encode");
    const io::Blob blob = io::read_blob(wd.features());
    if (blob.header.value("graph_fingerprint", "") != io::graph_fingerprint(d.graph)) {
      throw ConsistencyError(wd.features().string() + " was encoded from a different graph; rerun `mkg encode`");
    }
    d.features = io::matrix_from_blob(blob.array("features"));
  }
  return d;
}

inline EmbeddingTable load_topology(const WorkDir& wd, const PipelineConfig& c, const MachineKnowledgeGraph& g) {
  const auto p = wd.topology(c.train.model, c.seed);
  require(p, "train --model " + std::string(to_string(c.train.model)) + " --seed " + std::to_string(c.seed));
  CheckpointInfo info;
  EmbeddingTable t = load_embeddings(p, &info);
  if (info.graph_fingerprint != io::graph_fingerprint(g)) {
    throw ConsistencyError(p.string() + " was trained on a different graph; rerun `mkg train`");
  }
  return t;
}

struct FinetuneArtifact {
  FusedEmbeddingTable fused;
  ScorerParams scorer;
  FinetuneCheckpointInfo info;
};

inline FinetuneArtifact load_finetune_artifact(const WorkDir& wd, const PipelineConfig& c,
                                               const MachineKnowledgeGraph& g) {
  const auto p = wd.finetune(run_tag(c));
  require(p, "finetune --model " + std::string(to_string(c.train.model)) + " --strategy " +
                 std::string(to_string(c.finetune.strategy.kind)) + " --seed " + std::to_string(c.seed));
  FinetuneArtifact a;
  load_finetune(p, a.fused, a.scorer, &a.info);
  if (a.info.graph_fingerprint != io::graph_fingerprint(g)) {
    throw ConsistencyError(p.string() + " was fine-tuned on a different graph; rerun `mkg finetune`");
  }
  return a;
}

// ---------------------------------------------------------------------------
// Commands. Each returns a short JSON summary for the terminal.

inline io::json cmd_synth(const PipelineConfig& c) {
  const WorkDir wd(c.work_dir);
  RunManifest m("synth", c);
  const synth::Corpus corpus = synth::generate(c.synth);
  synth::write_corpus(wd.corpus(), corpus, c.synth);
  for (const char* f : {"nodes.jsonl", "pairs.csv", "provenance.json"}) m.output(wd.corpus() / f);
  m.output(wd.corpus() / "boms");
  m.write(wd, "synth");
  return {{"nodes", corpus.nodes.size()},
          {"boms", corpus.boms.size()},
          {"families", corpus.families.size()},
          {"pairs", corpus.pairs.size()},
          {"dir", wd.corpus().string()}};
}

inline std::vector<io::fs::path> bom_files(const io::fs::path& edges) {
  std::vector<io::fs::path> files;
  if (io::fs::is_directory(edges)) {
    for (const auto& e : io::fs::directory_iterator(edges)) {
      if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw MissingArtifact("no BOM CSV files in " + edges.string());
  } else {
    files.push_back(edges);
  }
  return files;
}

inline io::json cmd_build(const PipelineConfig& c) {
  const WorkDir wd(c.work_dir);
  RunManifest m("build", c);
  const io::fs::path nodes = c.paths.nodes.empty() ? wd.corpus() / "nodes.jsonl" : c.paths.nodes;
  const io::fs::path edges = c.paths.edges.empty() ? wd.corpus() / "boms" : c.paths.edges;
  const io::fs::path pairs = c.paths.pairs.empty() ? wd.corpus() / "pairs.csv" : c.paths.pairs;
  const char* producer = "synth (or set paths.nodes/edges/pairs)";
  require(nodes, producer);
  require(edges, producer);
  require(pairs, producer);

  std::ifstream nin(nodes, std::ios::binary);
  const io::Catalog catalog = io::make_catalog(io::read_nodes_jsonl(nin));
  MachineKnowledgeGraph graph;
  for (const auto& f : bom_files(edges)) {
    std::ifstream in(f, std::ios::binary);
    try {
      graph.ingest_bom(io::read_bom_csv(in, catalog));
    } catch (const Error& e) {
      throw InvalidBom(f.string() + ": " + e.what());
    }
  }
  std::ifstream pin(pairs, std::ios::binary);
  const auto substitutes = io::read_pairs_csv(pin);
  graph.ingest_substitutes(substitutes, false);

  TripleSplit split = split_similar_edges(graph, c.graph.split, c.seed);
  if (c.graph.symmetrize) symmetrize_training(graph, split);

  write_json(wd.graph(), io::graph_to_json(graph));
  write_json(wd.split(), io::split_to_json(split));
  const io::json stats = stats_to_json(graph_stats(graph, c.features.min_freq));
  write_json(wd.stats(), stats);
  m.input(nodes);
  m.input(edges);
  m.input(pairs);
  for (const auto& p : {wd.graph(), wd.split(), wd.stats()}) m.output(p);
  m.note("merge_conflicts", graph.merge_conflicts());
  m.write(wd, "build");
  io::json out = stats;
  out["split"] = {split.train.size(), split.valid.size(), split.test.size()};
  return out;
}

inline io::json cmd_encode(const PipelineConfig& c) {
  const WorkDir wd(c.work_dir);
  RunManifest m("encode", c);
  const MachineKnowledgeGraph graph = load_graph(wd);
  AttributeVocabulary vocab;
  ProjectionModel model;
  const Matrix F = encode_features(graph, c.features, &vocab, &model);
  model.seed = c.seed;
  save_projection(wd.projection(), model);

  io::Blob blob;
  blob.header = {{"kind", "features"},
                 {"columns", vocab.columns},
                 {"pca_dim", c.features.pca_dim},
                 {"min_freq", c.features.min_freq},
                 {"graph_fingerprint", io::graph_fingerprint(graph)}};
  blob.arrays.push_back(io::to_blob("features", F));
  io::write_blob(wd.features(), blob);
  write_matrix_csv(wd.features_csv(), graph, F, "f");

  io::json numeric = io::json::object();
  for (const auto& [k, col] : vocab.numeric) numeric[k] = {{"column", col.column}, {"mean", col.mean}, {"std", col.stddev}};
  io::json categorical = io::json::array();
  for (const auto& [kv, col] : vocab.categorical) categorical.push_back({{"key", kv.first}, {"value", kv.second}, {"column", col}});
  write_json(wd.vocabulary(), {{"columns", vocab.columns}, {"min_freq", vocab.min_freq}, {"numeric", numeric},
                               {"categorical", categorical}});

  m.input(wd.graph());
  for (const auto& p : {wd.projection(), wd.features(), wd.features_csv(), wd.vocabulary()}) m.output(p);
  m.write(wd, "encode");
  return {{"columns", vocab.columns},
          {"pca_dim", c.features.pca_dim},
          {"explained_variance", model.explained_variance_ratio.sum()}};
}

inline io::json cmd_train(const PipelineConfig& c) {
  const WorkDir wd(c.work_dir);
  RunManifest m("train", c);
  const ExperimentData d = load_experiment(wd, false);
  const Stage1Result r = train_topology(d, c.train, c.seed);
  const auto ckpt = wd.topology(c.train.model, c.seed);
  save_embeddings(ckpt, r.table, {c.train.max_epochs, c.seed, io::graph_fingerprint(d.graph)});
  write_matrix_csv(wd.topology_csv(c.train.model, c.seed), d.graph, r.table.entity, "e");
  write_json(wd.train_log(c.train.model, c.seed),
             {{"model", std::string(to_string(c.train.model))},
              {"seed", c.seed},
              {"epochs", c.train.max_epochs},
              {"loss_curve", r.loss_curve},
              {"exhausted_corruptions", r.exhausted_corruptions}});
  m.input(wd.graph());
  m.input(wd.split());
  m.output(ckpt);
  m.output(wd.topology_csv(c.train.model, c.seed));
  m.output(wd.train_log(c.train.model, c.seed));
  m.write(wd, "train_" + std::string(to_string(c.train.model)) + "_s" + std::to_string(c.seed));
  return {{"checkpoint", ckpt.string()},
          {"final_loss", r.loss_curve.empty() ? 0.0 : r.loss_curve.back()}};
}

inline io::json cmd_finetune(const PipelineConfig& c) {
  const WorkDir wd(c.work_dir);
  RunManifest m("finetune", c);
  const ExperimentData d = load_experiment(wd);
  const EmbeddingTable topo = load_topology(wd, c, d.graph);
  FinetuneConfig fc = c.finetune;
  fc.ranking = c.eval.rank_options();
  const FinetuneResult r = train_ensemble(d, topo, fc, c.seed);
  const std::string tag = run_tag(c);
  FinetuneCheckpointInfo info;
  info.model = std::string(to_string(c.train.model));
  info.strategy = std::string(to_string(fc.strategy.kind));
  info.seed = c.seed;
  info.epoch = r.best_epoch;
  info.best_valid_mrr = r.best_valid_mrr;
  info.config = config_to_json(c).at("finetune");
  info.graph_fingerprint = io::graph_fingerprint(d.graph);
  save_finetune(wd.finetune(tag), r.fused, r.scorer, info);
  write_json(wd.finetune_log(tag), {{"tag", tag},
                                    {"best_epoch", r.best_epoch},
                                    {"best_valid_mrr", r.best_valid_mrr},
                                    {"epochs_run", r.epochs_run},
                                    {"fallback_anchors", r.fallback_anchors},
                                    {"valid_mrr_curve", r.valid_mrr_curve},
                                    {"loss_curve", r.loss_curve}});
  for (const auto& p : {wd.graph(), wd.split(), wd.features(), wd.topology(c.train.model, c.seed)}) m.input(p);
  m.output(wd.finetune(tag));
  m.output(wd.finetune_log(tag));
  m.write(wd, "finetune_" + tag);
  return {{"checkpoint", wd.finetune(tag).string()},
          {"best_epoch", r.best_epoch},
          {"best_valid_mrr", r.best_valid_mrr},
          {"epochs_run", r.epochs_run}};
}

enum class EvalMode { Checkpoint, Replicas, Matrix, KSweep };

struct EvalRequest {
  EvalMode mode = EvalMode::Checkpoint;
  std::size_t seeds = 1;
};

struct EvalOutput {
  io::json metrics;   // written to the metrics file
  std::string table;  // aligned text for the terminal
  io::fs::path path;
};

inline std::vector<std::uint64_t> replica_seeds(std::uint64_t base, std::size_t n) {
  std::vector<std::uint64_t> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = base + i;
  return s;
}

// Evaluates saved checkpoints for the configured model, strategy and seed.
inline EvalOutput eval_checkpoint(const PipelineConfig& c, RunManifest& m) {
  const WorkDir wd(c.work_dir);
  const ExperimentData d = load_experiment(wd, false);
  const EmbeddingTable topo = load_topology(wd, c, d.graph);
  const FinetuneArtifact ft = load_finetune_artifact(wd, c, d.graph);
  const RankOptions opt = c.eval.rank_options();
  RankingReport tr = test_topology(d, topo, opt);
  RankingReport er = test_ensemble(d, ft.fused, ft.scorer, opt);
  tr.model = std::string(to_string(c.train.model));
  tr.strategy = "topology";
  tr.seed = c.seed;
  er.model = tr.model;
  er.strategy = std::string(to_string(c.finetune.strategy.kind));
  er.seed = c.seed;
  const std::string tag = run_tag(c);
  for (const auto& p : {wd.graph(), wd.split(), wd.topology(c.train.model, c.seed), wd.finetune(tag)}) m.input(p);

  EvalOutput out;
  out.path = wd.metrics() / ("eval_" + tag + ".json");
  out.metrics = {{"topology", report_to_json(tr, &d.graph)}, {"ensemble", report_to_json(er, &d.graph)}};
  const RankingMetrics a[1] = {tr.overall}, b[1] = {er.overall};
  const std::vector<std::pair<std::string, MetricSummary>> rows{
      {display_name(c.train.model), summarize(a)}, {display_name(c.train.model, c.finetune.strategy.kind), summarize(b)}};
  out.table = format_summary_table(rows);
  return out;
}

inline EvalOutput eval_replicas(const PipelineConfig& c, const EvalRequest& req, RunManifest& m) {
  const WorkDir wd(c.work_dir);
  const ExperimentData d = load_experiment(wd);
  for (const auto& p : {wd.graph(), wd.split(), wd.features()}) m.input(p);
  const std::size_t n = req.seeds;
  const auto seeds = replica_seeds(c.seed, n);
  const std::string stem = "_n" + std::to_string(n) + "_s" + std::to_string(c.seed);

  EvalOutput out;
  std::vector<std::pair<std::string, MetricSummary>> rows;
  io::json replicas = io::json::array();
  io::json summary = io::json::object();

  if (req.mode == EvalMode::KSweep) {
    const auto kind = c.finetune.strategy.kind;
    const std::array<NegativeStrategy::Kind, 1> strat{kind};
    std::map<std::size_t, std::vector<RankingMetrics>> by_k;
    for (auto s : seeds) {
      const Replica rep = run_replica(d, c, c.train.model, s, strat, c.eval.k_values);
      for (const auto& r : rep.runs) by_k[r.negatives].push_back(r.test);
      replicas.push_back(replica_to_json(rep));
    }
    io::json table = io::json::array();
    for (const auto& [k, runs] : by_k) {
      const MetricSummary sm = summarize(runs);
      table.push_back({{"k", k}, {"summary", summary_to_json(sm)}});
      rows.emplace_back("K=" + std::to_string(k), sm);
    }
    out.path = wd.metrics() /
               ("ksweep_" + std::string(to_string(c.train.model)) + "_" + std::string(to_string(kind)) + stem + ".json");
    out.metrics = {{"model", std::string(to_string(c.train.model))},
                   {"strategy", std::string(to_string(kind))},
                   {"seeds", seeds},
                   {"mrr_vs_k", table},
                   {"replicas", replicas}};
    out.table = format_summary_table(rows);
    return out;
  }

  std::vector<ModelKind> models{c.train.model};
  std::vector<NegativeStrategy::Kind> strategies{c.finetune.strategy.kind};
  if (req.mode == EvalMode::Matrix) {
    models = c.eval.models;
    strategies = c.eval.strategies;
  }
  const std::array<std::size_t, 1> ks{c.finetune.negatives};
  for (ModelKind model : models) {
    std::vector<RankingMetrics> topo;
    std::map<NegativeStrategy::Kind, std::vector<RankingMetrics>> ens;
    for (auto s : seeds) {
      const Replica rep = run_replica(d, c, model, s, strategies, ks);
      topo.push_back(rep.topology);
      for (const auto& r : rep.runs) ens[r.strategy].push_back(r.test);
      replicas.push_back(replica_to_json(rep));
    }
    rows.emplace_back(display_name(model), summarize(topo));
    summary[display_name(model)] = summary_to_json(rows.back().second);
    for (auto kind : strategies) {
      rows.emplace_back(display_name(model, kind), summarize(ens[kind]));
      summary[display_name(model, kind)] = summary_to_json(rows.back().second);
    }
  }
  out.path = req.mode == EvalMode::Matrix ? wd.metrics() / ("matrix" + stem + ".json")
                                          : wd.metrics() / ("eval_" + run_tag(c.train.model, c.finetune, c.seed) +
                                                            "_n" + std::to_string(n) + ".json");
  out.metrics = {{"seeds", seeds}, {"summary", summary}, {"replicas", replicas}};
  out.table = format_summary_table(rows);
  return out;
}

inline EvalOutput cmd_eval(const PipelineConfig& c, const EvalRequest& req) {
  const WorkDir wd(c.work_dir);
  RunManifest m("eval", c);
  EvalOutput out = req.mode == EvalMode::Checkpoint ? eval_checkpoint(c, m) : eval_replicas(c, req, m);
  out.metrics["ranking"] = {{"filtered", c.eval.filtered}, {"same_type", c.eval.same_type}};
  write_json(out.path, out.metrics);
  io::write_text(io::fs::path(out.path).replace_extension(".txt"), out.table);
  m.output(out.path);
  m.write(wd, out.path.stem().string());
  return out;
}

// Entity rows of one embedding source.
inline Matrix embeddings_for(const WorkDir& wd, const PipelineConfig& c, const ExperimentData& d,
                             std::string_view source) {
  if (source == "features") return d.features;
  if (source == "topology") return load_topology(wd, c, d.graph).entity;
  if (source == "fused") return fuse_embeddings(load_topology(wd, c, d.graph), d.features).entity;
  if (source == "finetune") return load_finetune_artifact(wd, c, d.graph).fused.entity;
  throw ConfigError("embedding source must be features, topology, fused or finetune");
}

// Family ids from the connected components of all similarTo triples.
inline std::vector<std::int64_t> similar_components(const MachineKnowledgeGraph& g) {
  std::vector<std::int64_t> comp(g.node_count(), -1);
  std::int64_t next = 0;
  for (NodeIndex s = 0; s < g.node_count(); ++s) {
    if (comp[s] >= 0) continue;
    if (g.out(RelationKind::SimilarTo, s).empty() && g.in(RelationKind::SimilarTo, s).empty()) continue;
    std::vector<NodeIndex> stack{s};
    comp[s] = next;
    while (!stack.empty()) {
      const NodeIndex v = stack.back();
      stack.pop_back();
      for (auto adj : {g.out(RelationKind::SimilarTo, v), g.in(RelationKind::SimilarTo, v)}) {
        for (NodeIndex w : adj) {
          if (comp[w] < 0) {
            comp[w] = next;
            stack.push_back(w);
          }
        }
      }
    }
    ++next;
  }
  return comp;
}

struct FamilyRecall {
  std::size_t members = 0;
  std::size_t hits = 0;  // members with a same-family node among the top k
  double rate() const { return members == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(members); }
};

inline FamilyRecall family_recall(const MachineKnowledgeGraph& g, const Matrix& embeddings, std::size_t k) {
  const auto comp = similar_components(g);
  FamilyRecall r;
  for (NodeIndex v = 0; v < g.node_count(); ++v) {
    if (comp[v] < 0) continue;
    ++r.members;
    for (const Neighbor& n : nearest_neighbors(embeddings, v, k)) {
      if (comp[n.node] == comp[v]) {
        ++r.hits;
        break;
      }
    }
  }
  return r;
}

inline io::json cmd_neighbors(const PipelineConfig& c, const std::vector<std::string>& queries, std::string_view source,
                              bool families) {
  const WorkDir wd(c.work_dir);
  RunManifest m("neighbors", c);
  const ExperimentData d = load_experiment(wd, source != "topology");
  const Matrix E = embeddings_for(wd, c, d, source);
  const std::size_t k = c.eval.neighbors_k;
  io::json out{{"source", std::string(source)}, {"k", k}};
  io::json results = io::json::array();
  for (const auto& q : queries) {
    const NodeIndex v = d.graph.index_of(PartIdentifier::normalize(q));
    io::json list = io::json::array();
    for (const Neighbor& n : nearest_neighbors(E, v, k)) {
      list.push_back({{"id", d.graph.node(n.node).id.str()},
                      {"type", d.graph.node(n.node).component_type},
                      {"cosine", n.similarity}});
    }
    results.push_back({{"query", d.graph.node(v).id.str()}, {"type", d.graph.node(v).component_type}, {"neighbors", list}});
  }
  out["queries"] = results;
  if (families) {
    const FamilyRecall fr = family_recall(d.graph, E, k);
    out["family_recall"] = {{"members", fr.members}, {"hits", fr.hits}, {"rate", fr.rate()}};
  }
  const std::string name = "neighbors_" + std::string(source) + (source == "finetune" ? "_" + run_tag(c) : "");
  write_json(wd.metrics() / (name + ".json"), out);
  m.input(wd.graph());
  m.output(wd.metrics() / (name + ".json"));
  m.write(wd, name);
  return out;
}

inline void write_compatibility_csv(const io::fs::path& p, const CompatibilityMatrix& cm) {
  std::ostringstream out;
  out << "from";
  for (const auto& c : cm.classes) out << ',' << io::csv_field(c);
  out << '\n';
  for (std::size_t k = 0; k < cm.classes.size(); ++k) {
    out << io::csv_field(cm.classes[k]);
    for (std::size_t l = 0; l < cm.classes.size(); ++l) {
      out << ',' << io::format_double(cm.h(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)));
    }
    out << '\n';
  }
  io::write_text(p, out.str());
}

struct HomophilyReport {
  double edge_connected = 0.0;
  double edge_all = 0.0;
  double class_insensitive_connected = 0.0;
  double class_insensitive_all = 0.0;
  CompatibilityMatrix compat_connected;
  CompatibilityMatrix compat_all;
};

inline HomophilyReport homophily_report(const MachineKnowledgeGraph& g) {
  const TypeLabels labels = type_labels(g);
  HomophilyReport r;
  r.edge_connected = edge_homophily(g, labels.label, kConnectedOnly);
  r.edge_all = edge_homophily(g, labels.label, kAllRelations);
  r.class_insensitive_connected = class_insensitive_homophily(g, labels.label, kConnectedOnly);
  r.class_insensitive_all = class_insensitive_homophily(g, labels.label, kAllRelations);
  r.compat_connected = compatibility_matrix(g, labels, kConnectedOnly);
  r.compat_all = compatibility_matrix(g, labels, kAllRelations);
  return r;
}

inline io::json cmd_homophily(const PipelineConfig& c) {
  const WorkDir wd(c.work_dir);
  RunManifest m("homophily", c);
  const MachineKnowledgeGraph g = load_graph(wd);
  const HomophilyReport r = homophily_report(g);
  io::json out{{"connectedTo", {{"edge_homophily", r.edge_connected}, {"class_insensitive", r.class_insensitive_connected}}},
               {"all", {{"edge_homophily", r.edge_all}, {"class_insensitive", r.class_insensitive_all}}},
               {"classes", r.compat_all.classes.size()}};
  io::fs::create_directories(wd.metrics());
  write_json(wd.metrics() / "homophily.json", out);
  write_compatibility_csv(wd.metrics() / "compatibility_connected.csv", r.compat_connected);
  write_compatibility_csv(wd.metrics() / "compatibility_all.csv", r.compat_all);
  m.input(wd.graph());
  for (const char* f : {"homophily.json", "compatibility_connected.csv", "compatibility_all.csv"}) m.output(wd.metrics() / f);
  m.write(wd, "homophily");
  return out;
}

inline io::json cmd_project(const PipelineConfig& c, std::string_view source) {
  const WorkDir wd(c.work_dir);
  RunManifest m("project", c);
  const ExperimentData d = load_experiment(wd, source != "topology");
  const Matrix E = embeddings_for(wd, c, d, source);
  const Matrix xy = project_2d(E);
  const TypeLabels labels = type_labels(d.graph);
  const std::string name = "projection_" + std::string(source) + (source == "finetune" ? "_" + run_tag(c) : "");
  const io::fs::path p = wd.root() / (name + ".csv");
  std::ostringstream csv;
  write_projection_csv(csv, d.graph, xy);
  io::write_text(p, csv.str());
  io::json out{{"csv", p.string()}, {"separation", cluster_separation(E, labels.label)}};
  if (source == "finetune") {
    out["separation_before"] = cluster_separation(embeddings_for(wd, c, d, "fused"), labels.label);
  }
  m.input(wd.graph());
  m.output(p);
  m.write(wd, name);
  return out;
}

}  // namespace mkg

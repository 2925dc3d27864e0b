// mkg: command-line front end for the substitute-part pipeline.
//
//   mkg synth | build | encode | train | finetune | eval | neighbors | homophily | project
//
// Settings come from defaults, then --config, then MKG_WORK_DIR, then flags.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mkg/pipeline.hpp"

namespace {

struct Flags {
  std::string config;
  std::string work_dir;
  std::optional<std::uint64_t> seed;
  std::string model;
  std::string strategy;
  bool freeze_topology = false;
  bool paper_exact = false;
  bool verbose = false;
  bool quiet = false;

  // subcommand options
  std::string preset;
  std::size_t seeds = 0;
  bool matrix = false;
  bool k_sweep = false;
  bool same_type = false;
  bool raw = false;
  std::vector<std::string> nodes;
  std::size_t k = 0;
  std::string source = "finetune";
  bool families = false;
};

mkg::PipelineConfig resolve(const Flags& f) {
  mkg::PipelineConfig c;
  if (!f.config.empty()) c = mkg::load_config(f.config);
  if (const char* env = std::getenv("MKG_WORK_DIR"); env != nullptr && *env != '\0') c.work_dir = env;
  if (!f.work_dir.empty()) c.work_dir = f.work_dir;
  if (f.seed) {
    // an explicit seed drives the generator too unless the config pinned it
    const bool pinned = c.synth.seed != c.seed;
    c.seed = *f.seed;
    if (!pinned) c.synth.seed = c.seed;
  }
  if (!f.model.empty()) c.train.model = mkg::parse_model_kind(f.model);
  if (!f.strategy.empty()) c.finetune.strategy.kind = mkg::parse_strategy(f.strategy);
  if (f.freeze_topology) c.finetune.freeze_topology = true;
  if (f.paper_exact) c.finetune.paper_exact = true;
  if (f.preset == "desk") {
    const auto seed = c.synth.seed;
    c.synth = mkg::synth::SynthConfig::desk();
    c.synth.seed = seed;
  } else if (f.preset == "full") {
    const auto seed = c.synth.seed;
    c.synth = mkg::synth::SynthConfig::full();
    c.synth.seed = seed;
  }
  if (f.seeds > 0) c.eval.seeds = f.seeds;
  if (f.same_type) c.eval.same_type = true;
  if (f.raw) c.eval.filtered = false;
  if (f.k > 0) c.eval.neighbors_k = f.k;
  c.validate();
  return c;
}

void print(const mkg::io::json& j) { std::cout << j.dump(2) << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Machine knowledge graph embeddings for substitute-part search"};
  app.require_subcommand(1);
  app.fallthrough();

  Flags f;
  app.add_option("--config", f.config, "JSON config file");
  app.add_option("--work-dir", f.work_dir, "artifact directory (overrides MKG_WORK_DIR)");
  app.add_option("--seed", f.seed, "global seed");
  app.add_option("--model", f.model, "topology model")->check(CLI::IsMember({"transe", "distmult", "complex"}));
  app.add_option("--strategy", f.strategy, "negative sampling")->check(CLI::IsMember({"random", "biased"}));
  app.add_flag("--freeze-topology", f.freeze_topology, "keep stage-1 embeddings fixed while fine-tuning");
  app.add_flag("--paper-exact", f.paper_exact, "scorer without bias terms");
  app.add_flag("-v,--verbose", f.verbose, "progress on stderr");
  app.add_flag("-q,--quiet", f.quiet, "suppress warnings");

  auto* synth = app.add_subcommand("synth", "generate a synthetic BOM corpus");
  synth->add_option("--preset", f.preset, "corpus size")->check(CLI::IsMember({"desk", "full"}));
  auto* build = app.add_subcommand("build", "merge BOMs into the graph and split similarTo pairs");
  auto* encode = app.add_subcommand("encode", "metadata features and PCA projection");
  auto* train = app.add_subcommand("train", "stage-1 topology embeddings");
  auto* fine = app.add_subcommand("finetune", "fuse embeddings and fine-tune the scorer");
  auto* eval = app.add_subcommand("eval", "filtered ranking on the test pairs");
  eval->add_option("--seeds", f.seeds, "retrain and evaluate this many replicas");
  eval->add_flag("--matrix", f.matrix, "every model x strategy, plus topology-only rows");
  eval->add_flag("--k-sweep", f.k_sweep, "MRR against the number of negatives");
  eval->add_flag("--same-type", f.same_type, "rank only against the target's type");
  eval->add_flag("--raw", f.raw, "unfiltered ranking");
  auto* nb = app.add_subcommand("neighbors", "cosine nearest neighbours");
  nb->add_option("--node", f.nodes, "query part id (repeatable)");
  nb->add_option("--k", f.k, "neighbours per query");
  nb->add_option("--source", f.source, "embedding source")
      ->check(CLI::IsMember({"features", "topology", "fused", "finetune"}));
  nb->add_flag("--families", f.families, "share of substitute-family members with a family neighbour in the top k");
  auto* homo = app.add_subcommand("homophily", "edge homophily, class-insensitive homophily, compatibility");
  auto* proj = app.add_subcommand("project", "2-D projection CSV");
  proj->add_option("--source", f.source, "embedding source")
      ->check(CLI::IsMember({"features", "topology", "fused", "finetune"}));

  CLI11_PARSE(app, argc, argv);

  if (f.verbose) mkg::set_log_level(mkg::LogLevel::Info);
  if (f.quiet) mkg::set_log_level(mkg::LogLevel::Quiet);

  try {
    const mkg::PipelineConfig c = resolve(f);
    if (synth->parsed()) {
      print(mkg::cmd_synth(c));
    } else if (build->parsed()) {
      print(mkg::cmd_build(c));
    } else if (encode->parsed()) {
      print(mkg::cmd_encode(c));
    } else if (train->parsed()) {
      print(mkg::cmd_train(c));
    } else if (fine->parsed()) {
      print(mkg::cmd_finetune(c));
    } else if (eval->parsed()) {
      if (f.matrix && f.k_sweep) throw mkg::ConfigError("--matrix and --k-sweep are exclusive");
      mkg::EvalRequest req;
      req.seeds = c.eval.seeds;
      if (f.matrix) {
        req.mode = mkg::EvalMode::Matrix;
      } else if (f.k_sweep) {
        req.mode = mkg::EvalMode::KSweep;
      } else if (c.eval.seeds > 1) {
        req.mode = mkg::EvalMode::Replicas;
      }
      const auto out = mkg::cmd_eval(c, req);
      std::cout << out.table << "metrics: " << out.path.string() << '\n';
    } else if (nb->parsed()) {
      if (f.nodes.empty() && !f.families) throw mkg::ConfigError("neighbors needs --node or --families");
      print(mkg::cmd_neighbors(c, f.nodes, f.source, f.families));
    } else if (homo->parsed()) {
      print(mkg::cmd_homophily(c));
    } else if (proj->parsed()) {
      print(mkg::cmd_project(c, f.source));
    }
  } catch (const mkg::Error& e) {
    std::cerr << "mkg: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "mkg: unexpected failure: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

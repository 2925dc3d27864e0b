#include <gtest/gtest.h>

#include <fstream>

#include "support.hpp"

using namespace mkg;
using testing_support::TempDir;
using testing_support::tiny_config;

namespace {

std::string config_error(const char* text) {
  try {
    config_from_json(io::json::parse(text));
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

void run_all(const PipelineConfig& c) {
  cmd_synth(c);
  cmd_build(c);
  cmd_encode(c);
  cmd_train(c);
  cmd_finetune(c);
  cmd_eval(c, {});
}

}  // namespace

TEST(Config, UnknownKeysNameTheirPath) {
  EXPECT_NE(config_error(R"({"sed": 1})").find("'sed'"), std::string::npos);
  EXPECT_NE(config_error(R"({"train": {"dimm": 3}})").find("'train.dimm'"), std::string::npos);
  EXPECT_NE(config_error(R"({"finetune": {"strategy": {"tauu": 0.2}}})").find("'finetune.strategy.tauu'"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"synth": {"machine": 3}})").find("'synth.machine'"), std::string::npos);
}

TEST(Config, WrongTypesAndValues) {
  EXPECT_NE(config_error(R"({"train": {"dim": "big"}})").find("train.dim has the wrong type"), std::string::npos);
  EXPECT_NE(config_error(R"({"train": {"model": "rotate"}})").find("train.model"), std::string::npos);
  EXPECT_NE(config_error(R"({"finetune": {"strategy": {"kind": "hard"}}})").find("finetune.strategy.kind"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"finetune": {"dropout": 1.5}})").find("finetune.dropout"), std::string::npos);
  EXPECT_NE(config_error(R"({"graph": []})").find("graph must be an object"), std::string::npos);
  EXPECT_NE(config_error(R"({"eval": {"k_values": [0]}})").find("k_values"), std::string::npos);
}

TEST(Config, RoundTripAndSeedPropagation) {
  const auto c = config_from_json(io::json::parse(R"({"seed": 11, "train": {"model": "complex", "dim": 20},
      "finetune": {"strategy": {"kind": "biased", "tau": 0.4}}, "eval": {"models": ["transe"]}})"));
  EXPECT_EQ(c.synth.seed, 11u);
  const auto back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_EQ(back.train.model, ModelKind::ComplEx);
  EXPECT_EQ(back.finetune.strategy.kind, NegativeStrategy::Kind::Biased);
  const auto pinned = config_from_json(io::json::parse(R"({"seed": 11, "synth": {"seed": 2}})"));
  EXPECT_EQ(pinned.synth.seed, 2u);
}

TEST(Config, LoadFromFile) {
  TempDir tmp("cfg");
  EXPECT_THROW(load_config(tmp.path() / "none.json"), MissingArtifact);
  io::write_text(tmp.path() / "bad.json", "{ not json");
  EXPECT_THROW(load_config(tmp.path() / "bad.json"), ConfigError);
  io::write_text(tmp.path() / "ok.json", R"({"work_dir": "elsewhere", "features": {"pca_dim": 12}})");
  const auto c = load_config(tmp.path() / "ok.json");
  EXPECT_EQ(c.work_dir, "elsewhere");
  EXPECT_EQ(c.features.pca_dim, 12u);
}

TEST(Commands, MissingArtifactNamesPrerequisite) {
  TempDir tmp("missing");
  const auto c = tiny_config(tmp.path());
  auto message = [&](auto&& fn) -> std::string {
    try {
      fn();
    } catch (const MissingArtifact& e) {
      return e.what();
    }
    return "";
  };
  EXPECT_NE(message([&] { cmd_build(c); }).find("mkg synth"), std::string::npos);
  EXPECT_NE(message([&] { cmd_encode(c); }).find("mkg build"), std::string::npos);
  EXPECT_NE(message([&] { cmd_train(c); }).find("mkg build"), std::string::npos);
  cmd_synth(c);
  cmd_build(c);
  EXPECT_NE(message([&] { cmd_finetune(c); }).find("mkg encode"), std::string::npos);
  cmd_encode(c);
  EXPECT_NE(message([&] { cmd_finetune(c); }).find("mkg train"), std::string::npos);
  cmd_train(c);
  EXPECT_NE(message([&] { cmd_eval(c, {}); }).find("mkg finetune"), std::string::npos);
}

TEST(Commands, TinyRunIsReproducible) {
  TempDir a("run_a"), b("run_b");
  const auto ca = tiny_config(a.path());
  const auto cb = tiny_config(b.path());
  run_all(ca);
  run_all(cb);
  const WorkDir wa(a.path()), wb(b.path());
  const std::string tag = run_tag(ca);
  EXPECT_EQ(io::read_text(wa.topology(ca.train.model, ca.seed)), io::read_text(wb.topology(cb.train.model, cb.seed)));
  EXPECT_EQ(io::read_text(wa.finetune(tag)), io::read_text(wb.finetune(tag)));
  EXPECT_EQ(io::read_text(wa.features()), io::read_text(wb.features()));
  const auto metrics = "eval_" + tag + ".json";
  EXPECT_EQ(io::read_text(wa.metrics() / metrics), io::read_text(wb.metrics() / metrics));
  EXPECT_TRUE(io::fs::exists(wa.runs() / ("eval_" + tag + ".json")));
}

TEST(Commands, FingerprintGuardsStaleArtifacts) {
  TempDir tmp("stale");
  auto c = tiny_config(tmp.path());
  cmd_synth(c);
  cmd_build(c);
  cmd_encode(c);
  c.synth.seed = 99;
  cmd_synth(c);
  cmd_build(c);
  // features were encoded from the previous graph
  EXPECT_THROW(cmd_finetune(c), ConsistencyError);
}

// experiments built in memory must index nodes exactly like `build` does
TEST(Commands, InMemoryGraphMatchesBuild) {
  TempDir tmp("inmem");
  const auto c = tiny_config(tmp.path());
  cmd_synth(c);
  cmd_build(c);
  const ExperimentData disk = load_experiment(WorkDir(c.work_dir), false);
  const ExperimentData mem = prepare_experiment(graph_from_corpus(synth::generate(c.synth)), c);
  EXPECT_EQ(io::graph_fingerprint(mem.graph), io::graph_fingerprint(disk.graph));
  EXPECT_EQ(mem.split.train, disk.split.train);
  EXPECT_EQ(mem.split.test, disk.split.test);
}

TEST(Commands, BuildFromExplicitPaths) {
  TempDir tmp("paths");
  io::write_text(tmp.path() / "nodes.jsonl",
                 R"({"id": "srv-1", "type": "server", "meta": {}}
{"id": "psu-1", "type": "psu", "meta": {"watts": 500}}
{"id": "psu-2", "type": "psu", "meta": {"watts": 550}}
{"id": "fan-1", "type": "fan", "meta": {}}
)");
  io::write_text(tmp.path() / "bom.csv", "parent_id,child_id,quantity\nsrv-1,psu-1,2\nsrv-1,psu-2,1\nsrv-1,fan-1,4\n");
  io::write_text(tmp.path() / "pairs.csv", "part_a,part_b\npsu-1,psu-2\n");
  auto c = tiny_config(tmp.path() / "work");
  c.paths = {tmp.path() / "nodes.jsonl", tmp.path() / "bom.csv", tmp.path() / "pairs.csv"};
  c.graph.split = {1.0, 0.0, 0.0};
  const auto out = cmd_build(c);
  EXPECT_EQ(out.at("entities"), 4);
  EXPECT_EQ(out.at("connected_to"), 3);
  EXPECT_EQ(out.at("similar_to"), 1);
}

TEST(Commands, UnknownSubstitutePartFails) {
  TempDir tmp("unknown");
  io::write_text(tmp.path() / "nodes.jsonl", "{\"id\": \"a\", \"type\": \"x\"}\n{\"id\": \"b\", \"type\": \"y\"}\n");
  io::write_text(tmp.path() / "bom.csv", "parent_id,child_id,quantity\na,b,1\n");
  io::write_text(tmp.path() / "pairs.csv", "part_a,part_b\nb,zz\n");
  auto c = tiny_config(tmp.path() / "work");
  c.paths = {tmp.path() / "nodes.jsonl", tmp.path() / "bom.csv", tmp.path() / "pairs.csv"};
  EXPECT_THROW(cmd_build(c), UnknownPart);
}

TEST(Experiment, SymmetrizeOnlyTouchesTrainingSimilarTo) {
  TempDir tmp("sym");
  auto c = tiny_config(tmp.path());
  const auto g = graph_from_corpus(synth::generate(c.synth));
  const auto plain = split_similar_edges(g, c.graph.split, c.seed);
  auto g2 = g;
  auto s2 = plain;
  symmetrize_training(g2, s2);
  std::size_t train_similar = 0;
  for (auto i : plain.train) train_similar += g.triples()[i].relation == RelationKind::SimilarTo;
  EXPECT_EQ(g2.triples().size(), g.triples().size() + train_similar);
  EXPECT_EQ(s2.valid, plain.valid);
  EXPECT_EQ(s2.test, plain.test);
  for (auto i : plain.test) {
    const Triple t = g.triples()[i];
    EXPECT_FALSE(g2.contains({t.tail, t.relation, t.head}));
  }
}

TEST(Experiment, FamilyRecallOracle) {
  MachineKnowledgeGraph g;
  g.ingest_bom(testing_support::bom("r-0", {{"r-0", "a-1"}, {"r-0", "a-2"}, {"r-0", "a-3"}, {"r-0", "b-1"}}));
  const std::vector<io::PartPair> sim{{testing_support::pid("a-1"), testing_support::pid("a-2")},
                                      {testing_support::pid("a-2"), testing_support::pid("a-3")}};
  g.ingest_substitutes(sim);
  // rows in node order: A-1, A-2, A-3, B-1, R-0 (identifier order)
  Matrix E(5, 2);
  E << 1, 0,   //
      0.9, 0.1,  //
      -1, 0,   //
      0, -1,   //
      0, 1;
  ASSERT_EQ(g.node(0).id.str(), "A-1");
  const auto r = family_recall(g, E, 1);
  EXPECT_EQ(r.members, 3u);
  // A-1 and A-2 find each other; A-3 ties B-1 and R-0 at cosine 0 and B-1 wins on index
  EXPECT_EQ(r.hits, 2u);
  const auto comp = similar_components(g);
  EXPECT_EQ(comp[0], comp[2]);
  EXPECT_EQ(comp[3], -1);
}

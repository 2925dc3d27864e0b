#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "support.hpp"

using namespace mkg;
using testing_support::bom;
using testing_support::part;
using testing_support::pid;

TEST(PartIdentifier, TrimsAndUppercases) {
  EXPECT_EQ(pid(" abC-1 ").str(), "ABC-1");
  EXPECT_EQ(pid("\tx9\n"), pid("X9"));
}

TEST(PartIdentifier, EmptyAfterTrimIsRejected) {
  EXPECT_THROW(pid(""), InvalidIdentifier);
  EXPECT_THROW(pid("   "), InvalidIdentifier);
}

TEST(Graph, SingleBomGivesNodesAndConnectedTo) {
  MachineKnowledgeGraph g;
  g.ingest_bom(bom("srv-1", {{"srv-1", "psu-1"}, {"srv-1", "fan-1"}}));
  EXPECT_EQ(g.node_count(), 3u);
  EXPECT_EQ(g.triple_count(RelationKind::ConnectedTo), 2u);
  EXPECT_EQ(g.triple_count(RelationKind::SimilarTo), 0u);
  EXPECT_TRUE(g.is_acyclic());
  const auto root = g.index_of(pid("srv-1"));
  EXPECT_EQ(g.out(RelationKind::ConnectedTo, root).size(), 2u);
}

TEST(Graph, SameBomTwiceIsIdempotent) {
  MachineKnowledgeGraph g;
  const auto b = bom("srv-1", {{"srv-1", "psu-1"}, {"srv-1", "asm-1"}, {"asm-1", "fan-1"}});
  g.ingest_bom(b);
  const auto nodes = g.node_count();
  const auto triples = g.triples();
  g.ingest_bom(b);
  EXPECT_EQ(g.node_count(), nodes);
  EXPECT_EQ(g.triples(), triples);
  EXPECT_EQ(g.merge_conflicts(), 0u);
}

TEST(Graph, SharedPartsMergeFirstWins) {
  MachineKnowledgeGraph g;
  g.ingest_bom(bom("srv-1", {{"srv-1", "psu-1"}}, {part("psu-1", "psu", {{"watts", 500.0}})}));
  g.ingest_bom(bom("srv-2", {{"srv-2", "psu-1"}}, {part("psu-1", "psu", {{"watts", 750.0}, {"brand", "x"}})}));
  EXPECT_EQ(g.node_count(), 3u);
  EXPECT_EQ(g.configurations().size(), 2u);
  const auto& psu = g.node(g.index_of(pid("PSU-1")));
  EXPECT_DOUBLE_EQ(psu.metadata.at("watts").number(), 500.0);
  EXPECT_EQ(psu.metadata.at("brand").text(), "x");  // new keys still merge in
  EXPECT_EQ(g.merge_conflicts(), 1u);
}

TEST(Graph, CycleAcrossBomsIsRejectedAtomically) {
  MachineKnowledgeGraph g;
  g.ingest_bom(bom("a-1", {{"a-1", "b-1"}}));
  const auto before = g.triples();
  EXPECT_THROW(g.ingest_bom(bom("b-1", {{"b-1", "c-1"}, {"c-1", "a-1"}})), CycleError);
  EXPECT_EQ(g.triples(), before);
  EXPECT_EQ(g.node_count(), 2u);
  EXPECT_TRUE(g.is_acyclic());
}

TEST(Graph, SelfLoopsRejected) {
  MachineKnowledgeGraph g;
  EXPECT_THROW(g.ingest_bom(bom("a-1", {{"a-1", "a-1"}})), SelfLoopError);
  g.ingest_bom(bom("a-1", {{"a-1", "b-1"}}));
  const std::vector<io::PartPair> pairs{{pid("a-1"), pid("a-1")}};
  EXPECT_THROW(g.ingest_substitutes(pairs), SelfLoopError);
}

TEST(Graph, MalformedBoms) {
  auto two_parents = bom("r-1", {{"r-1", "a-1"}, {"r-1", "b-1"}, {"a-1", "c-1"}, {"b-1", "c-1"}});
  EXPECT_THROW(validate_bom(two_parents), InvalidBom);
  auto detached = bom("r-1", {{"r-1", "a-1"}, {"x-1", "y-1"}});
  EXPECT_THROW(validate_bom(detached), InvalidBom);
  auto missing = bom("r-1", {{"r-1", "a-1"}});
  missing.payloads.erase(pid("a-1"));
  EXPECT_THROW(validate_bom(missing), InvalidBom);
}

TEST(Graph, SubstitutesNeedKnownParts) {
  MachineKnowledgeGraph g;
  g.ingest_bom(bom("r-1", {{"r-1", "a-1"}, {"r-1", "a-2"}}));
  const std::vector<io::PartPair> bad{{pid("a-1"), pid("zz-9")}};
  EXPECT_THROW(g.ingest_substitutes(bad), UnknownPart);
  EXPECT_EQ(g.triple_count(RelationKind::SimilarTo), 0u);

  const std::vector<io::PartPair> ok{{pid("a-1"), pid("a-2")}};
  g.ingest_substitutes(ok, true);
  EXPECT_EQ(g.triple_count(RelationKind::SimilarTo), 2u);
  g.ingest_substitutes(ok, true);
  EXPECT_EQ(g.triple_count(RelationKind::SimilarTo), 2u);
}

TEST(Split, LargestRemainderCounts) {
  EXPECT_EQ(largest_remainder(1613, {0.70, 0.15, 0.15}), (std::array<std::size_t, 3>{1129, 242, 242}));
  EXPECT_EQ(largest_remainder(10, {1.0, 0.0, 0.0}), (std::array<std::size_t, 3>{10, 0, 0}));
  EXPECT_EQ(largest_remainder(1, {0.5, 0.25, 0.25}), (std::array<std::size_t, 3>{1, 0, 0}));
  for (std::size_t n : {0u, 1u, 7u, 99u, 1000u}) {
    const auto c = largest_remainder(n, {0.7, 0.15, 0.15});
    EXPECT_EQ(c[0] + c[1] + c[2], n);
  }
}

namespace {

MachineKnowledgeGraph pair_graph(std::size_t pairs) {
  MachineKnowledgeGraph g;
  std::vector<std::pair<std::string, std::string>> edges;
  for (std::size_t i = 0; i < 2 * pairs; ++i) edges.emplace_back("r-1", "p-" + std::to_string(i));
  g.ingest_bom(bom("r-1", edges));
  std::vector<io::PartPair> sim;
  for (std::size_t i = 0; i < pairs; ++i) {
    sim.emplace_back(pid("p-" + std::to_string(2 * i)), pid("p-" + std::to_string(2 * i + 1)));
  }
  g.ingest_substitutes(sim);
  return g;
}

}  // namespace

TEST(Split, PartitionsSimilarAndKeepsConnectedInTrain) {
  const auto g = pair_graph(40);
  const auto s = split_similar_edges(g, {0.70, 0.15, 0.15}, 3);
  EXPECT_EQ(s.valid.size(), 6u);
  EXPECT_EQ(s.test.size(), 6u);
  EXPECT_EQ(s.train.size(), 80u + 28u);
  std::set<std::size_t> all;
  for (const auto* part : {&s.train, &s.valid, &s.test}) all.insert(part->begin(), part->end());
  EXPECT_EQ(all.size(), g.triples().size());
  for (auto i : s.valid) EXPECT_EQ(g.triples()[i].relation, RelationKind::SimilarTo);
  for (auto i : s.test) EXPECT_EQ(g.triples()[i].relation, RelationKind::SimilarTo);
}

TEST(Split, DeterministicPerSeed) {
  const auto g = pair_graph(40);
  const auto a = split_similar_edges(g, {0.70, 0.15, 0.15}, 11);
  const auto b = split_similar_edges(g, {0.70, 0.15, 0.15}, 11);
  const auto c = split_similar_edges(g, {0.70, 0.15, 0.15}, 12);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.valid, b.valid);
  EXPECT_NE(a.test, c.test);
}

TEST(Split, DegenerateRatios) {
  const auto g = pair_graph(5);
  const auto s = split_similar_edges(g, {1.0, 0.0, 0.0}, 0);
  EXPECT_TRUE(s.valid.empty());
  EXPECT_TRUE(s.test.empty());
  EXPECT_THROW(split_similar_edges(g, {0.5, 0.5, 0.5}, 0), ConfigError);
  MachineKnowledgeGraph empty;
  EXPECT_THROW(split_similar_edges(empty), ConfigError);
}

TEST(Stats, EmptyGraphIsAllZero) {
  MachineKnowledgeGraph g;
  const auto s = graph_stats(g);
  EXPECT_EQ(s.configurations, 0u);
  EXPECT_EQ(s.entities, 0u);
  EXPECT_EQ(s.entity_types, 0u);
  EXPECT_EQ(s.relation_types, 0u);
  EXPECT_EQ(s.feature_columns, 0u);
}

TEST(Stats, CountsMatchGraph) {
  const auto g = pair_graph(3);
  const auto s = graph_stats(g);
  EXPECT_EQ(s.configurations, 1u);
  EXPECT_EQ(s.entities, 7u);
  EXPECT_EQ(s.entity_types, 2u);
  EXPECT_EQ(s.relation_types, 2u);
  EXPECT_EQ(s.connected_to, 6u);
  EXPECT_EQ(s.similar_to, 3u);
}

TEST(Io, GraphJsonRoundTrip) {
  MachineKnowledgeGraph g;
  g.ingest_bom(bom("srv-1", {{"srv-1", "psu-1"}, {"srv-1", "psu-2"}},
                   {part("psu-1", "psu", {{"watts", 500.0}, {"brand", "Delta"}})}));
  const std::vector<io::PartPair> sim{{pid("psu-1"), pid("psu-2")}};
  g.ingest_substitutes(sim);
  const auto back = io::graph_from_json(io::graph_to_json(g));
  EXPECT_EQ(io::graph_fingerprint(back), io::graph_fingerprint(g));
  EXPECT_EQ(back.triples(), g.triples());
  EXPECT_EQ(back.configurations(), g.configurations());
  EXPECT_DOUBLE_EQ(back.node(back.index_of(pid("psu-1"))).metadata.at("watts").number(), 500.0);
}

TEST(Io, BomCsvRoundTrip) {
  const auto b = bom("srv-1", {{"srv-1", "asm-1"}, {"asm-1", "fan-1"}});
  std::vector<ComponentNode> nodes;
  for (const auto& [id, n] : b.payloads) nodes.push_back(n);
  std::stringstream ss;
  io::write_bom_csv(ss, b);
  const auto back = io::read_bom_csv(ss, io::make_catalog(nodes));
  EXPECT_EQ(back.root, b.root);
  EXPECT_EQ(back.edges.size(), 2u);
  EXPECT_EQ(back.payloads.size(), 3u);
}

TEST(Io, BomCsvRejectsTwoRoots) {
  std::stringstream ss("parent_id,child_id,quantity\nA,B,1\nC,D,1\n");
  const auto cat = io::make_catalog({part("A", "a"), part("B", "b"), part("C", "c"), part("D", "d")});
  EXPECT_THROW(io::read_bom_csv(ss, cat), InvalidBom);
}

TEST(Io, NodesJsonlRoundTrip) {
  const std::vector<ComponentNode> nodes{part("a-1", "a", {{"v", 1.5}, {"t", "x"}}), part("b-1", "b")};
  std::stringstream ss;
  io::write_nodes_jsonl(ss, nodes);
  const auto back = io::read_nodes_jsonl(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].metadata, nodes[0].metadata);
  EXPECT_EQ(back[1].component_type, "b");
}

TEST(Io, SplitJsonRoundTrip) {
  TripleSplit s{{0, 1, 4}, {2}, {3}, 9};
  const auto back = io::split_from_json(io::split_to_json(s));
  EXPECT_EQ(back.train, s.train);
  EXPECT_EQ(back.valid, s.valid);
  EXPECT_EQ(back.test, s.test);
  EXPECT_EQ(back.seed, 9u);
}

TEST(Io, TypeLabelsSortedByName) {
  MachineKnowledgeGraph g;
  g.ingest_bom(bom("srv-1", {{"srv-1", "fan-1"}, {"srv-1", "asm-1"}}));
  const auto t = type_labels(g);
  EXPECT_EQ(t.classes, (std::vector<std::string>{"asm", "fan", "srv"}));
  for (NodeIndex i = 0; i < g.node_count(); ++i) EXPECT_EQ(t.classes[t.label[i]], g.node(i).component_type);
}

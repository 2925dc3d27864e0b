#pragma once

#include <cstddef>
#include <set>
#include <string>

#include "mkg/features.hpp"
#include "mkg/graph.hpp"
#include "mkg/io.hpp"

namespace mkg {

struct GraphStats {
  std::size_t configurations = 0;
  std::size_t entities = 0;
  std::size_t entity_types = 0;
  std::size_t relation_types = 0;  // relation kinds with at least one triple
  std::size_t connected_to = 0;
  std::size_t similar_to = 0;
  std::size_t feature_columns = 0;
};

inline GraphStats graph_stats(const MachineKnowledgeGraph& graph, std::size_t min_freq = 2) {
  GraphStats s;
  s.configurations = graph.configurations().size();
  s.entities = graph.node_count();
  std::set<std::string> types;
  for (const auto& n : graph.nodes()) types.insert(n.component_type);
  s.entity_types = types.size();
  s.connected_to = graph.triple_count(RelationKind::ConnectedTo);
  s.similar_to = graph.triple_count(RelationKind::SimilarTo);
  s.relation_types = (s.connected_to > 0) + (s.similar_to > 0);
  if (graph.node_count() > 0) s.feature_columns = build_vocabulary(graph.nodes(), min_freq).columns;
  return s;
}

inline io::json stats_to_json(const GraphStats& s) {
  return {{"configurations", s.configurations}, {"entities", s.entities},
          {"entity_types", s.entity_types},     {"relation_types", s.relation_types},
          {"connected_to", s.connected_to},     {"similar_to", s.similar_to},
          {"feature_columns", s.feature_columns}};
}

}  // namespace mkg

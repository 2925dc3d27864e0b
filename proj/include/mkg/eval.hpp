#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mkg/error.hpp"
#include "mkg/features.hpp"
#include "mkg/graph.hpp"
#include "mkg/io.hpp"
#include "mkg/linalg.hpp"

namespace mkg {

// ---------------------------------------------------------------------------
// Ranking metrics

struct RankingMetrics {
  double mr = 0.0;
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;
  std::size_t count = 0;
};

inline RankingMetrics compute_metrics(std::span<const double> ranks) {
  if (ranks.empty()) throw ConfigError("cannot aggregate an empty rank list");
  RankingMetrics m;
  m.count = ranks.size();
  std::size_t h1 = 0, h3 = 0, h10 = 0;
  for (double r : ranks) {
    if (!(r >= 1.0)) throw ConsistencyError("rank below 1");
    m.mr += r;
    m.mrr += 1.0 / r;
    h1 += r <= 1.0;
    h3 += r <= 3.0;
    h10 += r <= 10.0;
  }
  const auto n = static_cast<double>(ranks.size());
  m.mr /= n;
  m.mrr /= n;
  m.hits1 = static_cast<double>(h1) / n;
  m.hits3 = static_cast<double>(h3) / n;
  m.hits10 = static_cast<double>(h10) / n;
  return m;
}

// Rank of `target` among the non-excluded candidates, higher score first.
// Ties count half: the result is the mean of the optimistic and pessimistic
// positions.
template <class Excluded>
double filtered_rank(std::span<const double> scores, NodeIndex target, Excluded&& excluded) {
  if (target >= scores.size()) throw ConsistencyError("target outside candidate universe");
  if (excluded(target)) throw ConsistencyError("target was filtered out of its own ranking");
  const double st = scores[target];
  if (std::isnan(st)) throw ConsistencyError("target score is NaN");
  std::size_t greater = 0;
  std::size_t equal = 0;
  for (NodeIndex c = 0; c < scores.size(); ++c) {
    if (c == target || excluded(c)) continue;
    const double s = scores[c];
    if (s > st) {
      ++greater;
    } else if (s == st) {
      ++equal;
    }
  }
  return 1.0 + static_cast<double>(greater) + 0.5 * static_cast<double>(equal);
}

struct RankOptions {
  bool filtered = true;   // drop other known-true triples from the candidates
  bool same_type = false; // only rank against entities of the target's type
};

struct TripleRanks {
  double tail = 0.0;
  double head = 0.0;
};

// Ranks a triple in both directions. `Scorer` provides
//   tail_scores(head, relation, out) and head_scores(relation, tail, out),
// each filling one score per entity. The anchor entity itself is never a
// candidate (self-loops are not valid triples).
template <class Scorer>
TripleRanks rank_triple(const Scorer& scorer, const Triple& t, const TripleSet& known, const RankOptions& options = {},
                        const std::vector<std::uint32_t>* labels = nullptr) {
  std::vector<double> scores;
  TripleRanks out;
  if (options.same_type && labels == nullptr) throw ConfigError("same-type ranking needs node labels");

  scorer.tail_scores(t.head, t.relation, scores);
  out.tail = filtered_rank(scores, t.tail, [&](NodeIndex c) {
    if (c == t.head) return true;
    if (options.same_type && (*labels)[c] != (*labels)[t.tail]) return true;
    return options.filtered && c != t.tail && known.contains(t.head, t.relation, c);
  });

  scorer.head_scores(t.relation, t.tail, scores);
  out.head = filtered_rank(scores, t.head, [&](NodeIndex c) {
    if (c == t.tail) return true;
    if (options.same_type && (*labels)[c] != (*labels)[t.head]) return true;
    return options.filtered && c != t.head && known.contains(c, t.relation, t.tail);
  });
  return out;
}

struct RankingReport {
  std::string model;
  std::string strategy;
  std::uint64_t seed = 0;
  std::vector<Triple> triples;
  std::vector<double> tail_ranks;
  std::vector<double> head_ranks;
  RankingMetrics overall;  // both directions pooled
  RankingMetrics tail;
  RankingMetrics head;
};

template <class Scorer>
RankingReport evaluate_ranking(const Scorer& scorer, std::span<const Triple> triples, const TripleSet& known,
                               const RankOptions& options = {}, const std::vector<std::uint32_t>* labels = nullptr) {
  RankingReport report;
  report.triples.assign(triples.begin(), triples.end());
  for (const Triple& t : triples) {
    const TripleRanks r = rank_triple(scorer, t, known, options, labels);
    report.tail_ranks.push_back(r.tail);
    report.head_ranks.push_back(r.head);
  }
  std::vector<double> all = report.tail_ranks;
  all.insert(all.end(), report.head_ranks.begin(), report.head_ranks.end());
  report.overall = compute_metrics(all);
  report.tail = compute_metrics(report.tail_ranks);
  report.head = compute_metrics(report.head_ranks);
  return report;
}

inline io::json metrics_to_json(const RankingMetrics& m) {
  return io::json{{"count", m.count}, {"mr", m.mr},       {"mrr", m.mrr},
                  {"hits@1", m.hits1}, {"hits@3", m.hits3}, {"hits@10", m.hits10}};
}

inline io::json report_to_json(const RankingReport& r, const MachineKnowledgeGraph* graph = nullptr) {
  io::json rows = io::json::array();
  for (std::size_t i = 0; i < r.triples.size(); ++i) {
    const Triple& t = r.triples[i];
    io::json row{{"relation", std::string(to_string(t.relation))}, {"tail_rank", r.tail_ranks[i]},
                 {"head_rank", r.head_ranks[i]}};
    if (graph != nullptr) {
      row["head"] = graph->node(t.head).id.str();
      row["tail"] = graph->node(t.tail).id.str();
    } else {
      row["head"] = t.head;
      row["tail"] = t.tail;
    }
    rows.push_back(row);
  }
  return io::json{{"model", r.model},
                  {"strategy", r.strategy},
                  {"seed", r.seed},
                  {"metrics", metrics_to_json(r.overall)},
                  {"tail_metrics", metrics_to_json(r.tail)},
                  {"head_metrics", metrics_to_json(r.head)},
                  {"ranks", rows}};
}

// Mean and sample standard deviation of each metric over replicas.
struct MetricSummary {
  RankingMetrics mean;
  RankingMetrics stddev;
  std::size_t replicas = 0;
};

inline MetricSummary summarize(std::span<const RankingMetrics> runs) {
  MetricSummary s;
  s.replicas = runs.size();
  if (runs.empty()) return s;
  auto field = [&](double RankingMetrics::*f, double RankingMetrics::*out_mean) {
    double mean = 0.0;
    for (const auto& r : runs) mean += r.*f;
    mean /= static_cast<double>(runs.size());
    double var = 0.0;
    for (const auto& r : runs) var += (r.*f - mean) * (r.*f - mean);
    s.mean.*out_mean = mean;
    s.stddev.*out_mean = runs.size() > 1 ? std::sqrt(var / static_cast<double>(runs.size() - 1)) : 0.0;
  };
  for (auto f : {&RankingMetrics::mr, &RankingMetrics::mrr, &RankingMetrics::hits1, &RankingMetrics::hits3,
                 &RankingMetrics::hits10}) {
    field(f, f);
  }
  s.mean.count = runs.front().count;
  return s;
}

inline io::json summary_to_json(const MetricSummary& s) {
  return io::json{{"replicas", s.replicas}, {"mean", metrics_to_json(s.mean)}, {"std", metrics_to_json(s.stddev)}};
}

// Aligned text table: Model | MR | MRR | Hits@1 | Hits@3 | Hits@10, mean ± std.
inline std::string format_summary_table(std::span<const std::pair<std::string, MetricSummary>> rows) {
  std::size_t name_w = 6;
  for (const auto& [name, s] : rows) name_w = std::max(name_w, name.size());
  auto cell = [](double m, double sd, int prec) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f ± %.*f", prec, m, prec, sd);
    return std::string(buf);
  };
  auto pad = [](std::string s, std::size_t w) {
    // "±" is two bytes but one column wide.
    std::size_t visible = 0;
    for (unsigned char c : s) visible += (c & 0xC0) != 0x80;
    if (visible < w) s.append(w - visible, ' ');
    return s;
  };
  std::string out = pad("Model", name_w) + "  " + pad("MR", 18) + "  " + pad("MRR", 15) + "  " + pad("Hits@1", 15) +
                    "  " + pad("Hits@3", 15) + "  " + "Hits@10\n";
  for (const auto& [name, s] : rows) {
    out += pad(name, name_w) + "  " + pad(cell(s.mean.mr, s.stddev.mr, 1), 18) + "  " +
           pad(cell(s.mean.mrr, s.stddev.mrr, 3), 15) + "  " + pad(cell(s.mean.hits1, s.stddev.hits1, 3), 15) + "  " +
           pad(cell(s.mean.hits3, s.stddev.hits3, 3), 15) + "  " + cell(s.mean.hits10, s.stddev.hits10, 3) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cosine nearest neighbours

struct Neighbor {
  NodeIndex node = 0;
  double similarity = 0.0;
};

// Top-k rows by cosine similarity to the query row, query excluded, ties
// broken by lower index. Zero rows have similarity 0.
inline std::vector<Neighbor> nearest_neighbors(const Matrix& embeddings, NodeIndex query, std::size_t k) {
  if (query >= embeddings.rows()) throw IndexError("query node out of range");
  const double qn = embeddings.row(query).norm();
  if (qn == 0.0) throw UndefinedDirection("query embedding is the zero vector");
  const Eigen::VectorXd dots = embeddings * embeddings.row(query).transpose();
  std::vector<Neighbor> all;
  all.reserve(static_cast<std::size_t>(embeddings.rows()));
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
    if (i == query) continue;
    const double n = embeddings.row(i).norm();
    all.push_back({static_cast<NodeIndex>(i), n == 0.0 ? 0.0 : dots(i) / (n * qn)});
  }
  const std::size_t take = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(),
                    [](const Neighbor& a, const Neighbor& b) {
                      if (a.similarity != b.similarity) return a.similarity > b.similarity;
                      return a.node < b.node;
                    });
  all.resize(take);
  return all;
}

// ---------------------------------------------------------------------------
// Homophily diagnostics

using RelationFilter = std::array<bool, kRelationCount>;
inline constexpr RelationFilter kConnectedOnly{true, false};
inline constexpr RelationFilter kAllRelations{true, true};

template <class Fn>
void for_each_edge(const MachineKnowledgeGraph& graph, const RelationFilter& filter, Fn&& fn) {
  for (const Triple& t : graph.triples()) {
    if (filter[relation_index(t.relation)]) fn(t);
  }
}

// Fraction of edges whose endpoints share a label; 0 for an edgeless graph.
inline double edge_homophily(const MachineKnowledgeGraph& graph, const std::vector<std::uint32_t>& labels,
                             const RelationFilter& filter) {
  if (labels.size() != graph.node_count()) throw ShapeError("one label per node required");
  std::size_t total = 0, same = 0;
  for_each_edge(graph, filter, [&](const Triple& t) {
    ++total;
    same += labels[t.head] == labels[t.tail];
  });
  return total == 0 ? 0.0 : static_cast<double>(same) / static_cast<double>(total);
}

// Class-insensitive homophily
//   h_hat = 1/(C-1) sum_k max(0, h_k - |C_k|/N),
//   h_k   = (same-class neighbour count over class-k nodes) / (degree sum of class-k nodes).
// Edges are read as undirected neighbour relations.
inline double class_insensitive_homophily(const MachineKnowledgeGraph& graph, const std::vector<std::uint32_t>& labels,
                                          const RelationFilter& filter) {
  if (labels.size() != graph.node_count()) throw ShapeError("one label per node required");
  std::uint32_t classes = 0;
  for (auto l : labels) classes = std::max(classes, l + 1);
  std::vector<std::size_t> class_size(classes, 0);
  for (auto l : labels) ++class_size[l];
  std::size_t present = 0;
  for (auto s : class_size) present += s > 0;
  if (present < 2) throw ConfigError("class-insensitive homophily needs at least two classes");

  std::vector<double> degree(classes, 0.0), same(classes, 0.0);
  for_each_edge(graph, filter, [&](const Triple& t) {
    const auto a = labels[t.head], b = labels[t.tail];
    degree[a] += 1.0;
    degree[b] += 1.0;
    if (a == b) same[a] += 2.0;
  });
  const auto n = static_cast<double>(labels.size());
  double sum = 0.0;
  for (std::uint32_t k = 0; k < classes; ++k) {
    if (class_size[k] == 0) continue;
    const double hk = degree[k] > 0.0 ? same[k] / degree[k] : 0.0;
    sum += std::max(0.0, hk - static_cast<double>(class_size[k]) / n);
  }
  return sum / static_cast<double>(present - 1);
}

struct CompatibilityMatrix {
  std::vector<std::string> classes;
  Matrix h;                       // h(k, l) = share of class-k out-edges that land in class l
  std::vector<char> empty_rows;   // 1 where class k has no outgoing edges
};

inline CompatibilityMatrix compatibility_matrix(const MachineKnowledgeGraph& graph, const TypeLabels& labels,
                                                const RelationFilter& filter) {
  if (labels.label.size() != graph.node_count()) throw ShapeError("one label per node required");
  const auto c = static_cast<Eigen::Index>(labels.classes.size());
  CompatibilityMatrix out;
  out.classes = labels.classes;
  out.h = Matrix::Zero(c, c);
  for_each_edge(graph, filter,
                [&](const Triple& t) { out.h(labels.label[t.head], labels.label[t.tail]) += 1.0; });
  out.empty_rows.assign(static_cast<std::size_t>(c), 0);
  for (Eigen::Index k = 0; k < c; ++k) {
    const double row = out.h.row(k).sum();
    if (row > 0.0) {
      out.h.row(k) /= row;
    } else {
      out.empty_rows[static_cast<std::size_t>(k)] = 1;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// 2-D projection

inline Matrix project_2d(const Matrix& embeddings) {
  if (embeddings.rows() < 2) throw ConfigError("projection needs at least two rows");
  if (embeddings.cols() < 2) throw ConfigError("projection needs at least two columns");
  return project(embeddings, fit_pca(embeddings, 2));
}

inline void write_projection_csv(std::ostream& out, const MachineKnowledgeGraph& graph, const Matrix& coords) {
  if (static_cast<std::size_t>(coords.rows()) != graph.node_count() || coords.cols() != 2) {
    throw ShapeError("projection must be one 2-D point per node");
  }
  out << "id,type,x,y\n";
  for (NodeIndex i = 0; i < graph.node_count(); ++i) {
    out << io::csv_field(graph.node(i).id.str()) << ',' << io::csv_field(graph.node(i).component_type) << ','
        << io::format_double(coords(i, 0)) << ',' << io::format_double(coords(i, 1)) << '\n';
  }
}

// Mean distance between type centroids divided by the mean distance of
// points to their own type centroid. Larger means better separated types.
inline double cluster_separation(const Matrix& points, const std::vector<std::uint32_t>& labels) {
  if (labels.size() != static_cast<std::size_t>(points.rows())) throw ShapeError("one label per point required");
  std::uint32_t classes = 0;
  for (auto l : labels) classes = std::max(classes, l + 1);
  Matrix centroid = Matrix::Zero(classes, points.cols());
  std::vector<double> count(classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    centroid.row(labels[i]) += points.row(static_cast<Eigen::Index>(i));
    count[labels[i]] += 1.0;
  }
  std::vector<std::uint32_t> present;
  for (std::uint32_t k = 0; k < classes; ++k) {
    if (count[k] > 0.0) {
      centroid.row(k) /= count[k];
      present.push_back(k);
    }
  }
  if (present.size() < 2) throw ConfigError("separation needs at least two classes");
  std::vector<double> spread(classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    spread[labels[i]] += (points.row(static_cast<Eigen::Index>(i)) - centroid.row(labels[i])).norm();
  }
  double intra = 0.0;
  for (auto k : present) intra += spread[k] / count[k];
  intra /= static_cast<double>(present.size());
  double inter = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < present.size(); ++a) {
    for (std::size_t b = a + 1; b < present.size(); ++b) {
      inter += (centroid.row(present[a]) - centroid.row(present[b])).norm();
      ++pairs;
    }
  }
  inter /= static_cast<double>(pairs);
  return intra > 0.0 ? inter / intra : std::numeric_limits<double>::infinity();
}

}  // namespace mkg

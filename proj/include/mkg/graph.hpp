#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <variant>
#include <vector>

#include "mkg/error.hpp"
#include "mkg/log.hpp"
#include "mkg/random.hpp"

namespace mkg {

using NodeIndex = std::uint32_t;

// Canonical part key: surrounding whitespace trimmed, ASCII letters upper-cased.
class PartIdentifier {
 public:
  static PartIdentifier normalize(std::string_view raw) {
    std::size_t b = 0;
    std::size_t e = raw.size();
    while (b < e && std::isspace(static_cast<unsigned char>(raw[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(raw[e - 1]))) --e;
    if (b == e) throw InvalidIdentifier("part identifier is empty after trimming");
    std::string value(raw.substr(b, e - b));
    for (char& c : value) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return PartIdentifier(std::move(value));
  }

  const std::string& str() const { return value_; }

  friend bool operator==(const PartIdentifier&, const PartIdentifier&) = default;
  friend auto operator<=>(const PartIdentifier&, const PartIdentifier&) = default;

 private:
  explicit PartIdentifier(std::string value) : value_(std::move(value)) {}
  std::string value_;
};

inline PartIdentifier normalize_part_id(std::string_view raw) {
  return PartIdentifier::normalize(raw);
}

// Metadata attribute value: free text or a number. Units live under their own keys.
class MetaValue {
 public:
  MetaValue() = default;
  MetaValue(std::string text) : value_(std::move(text)) {}  // NOLINT(implicit)
  MetaValue(const char* text) : value_(std::string(text)) {}  // NOLINT(implicit)
  MetaValue(double number) : value_(number) {}  // NOLINT(implicit)

  bool is_number() const { return std::holds_alternative<double>(value_); }
  double number() const { return std::get<double>(value_); }
  const std::string& text() const { return std::get<std::string>(value_); }

  // Shortest round-trip text form; used for set semantics (Jaccard) and
  // categorical columns.
  std::string canonical() const {
    if (!is_number()) return text();
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), number());
    return std::string(buf, res.ptr);
  }

  friend bool operator==(const MetaValue& a, const MetaValue& b) { return a.value_ == b.value_; }

 private:
  std::variant<std::string, double> value_;
};

using Metadata = std::map<std::string, MetaValue>;

struct ComponentNode {
  PartIdentifier id;
  std::string component_type;
  Metadata metadata;
};

enum class RelationKind : std::uint8_t { ConnectedTo = 0, SimilarTo = 1 };
inline constexpr std::size_t kRelationCount = 2;

inline std::string_view to_string(RelationKind r) {
  return r == RelationKind::ConnectedTo ? "connectedTo" : "similarTo";
}

inline RelationKind parse_relation(std::string_view s) {
  if (s == "connectedTo") return RelationKind::ConnectedTo;
  if (s == "similarTo") return RelationKind::SimilarTo;
  throw FormatError("unknown relation '" + std::string(s) + "'");
}

inline std::size_t relation_index(RelationKind r) { return static_cast<std::size_t>(r); }

struct Triple {
  NodeIndex head = 0;
  RelationKind relation = RelationKind::ConnectedTo;
  NodeIndex tail = 0;

  friend bool operator==(const Triple&, const Triple&) = default;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

// Per-relation set of (head, tail) pairs. Used for duplicate suppression and
// for the "known true" filters of negative sampling and ranking.
class TripleSet {
 public:
  TripleSet() = default;
  explicit TripleSet(std::span<const Triple> triples) {
    for (const Triple& t : triples) insert(t);
  }

  bool insert(const Triple& t) { return sets_[relation_index(t.relation)].insert(key(t)).second; }
  bool contains(const Triple& t) const {
    return sets_[relation_index(t.relation)].contains(key(t));
  }
  bool contains(NodeIndex h, RelationKind r, NodeIndex t) const { return contains(Triple{h, r, t}); }
  std::size_t size() const { return sets_[0].size() + sets_[1].size(); }

 private:
  static std::uint64_t key(const Triple& t) {
    return (static_cast<std::uint64_t>(t.head) << 32) | t.tail;
  }
  std::array<std::unordered_set<std::uint64_t>, kRelationCount> sets_;
};

struct BomEdge {
  PartIdentifier parent;
  PartIdentifier child;
  std::uint32_t quantity = 1;
};

// One product structure. Edges carry quantities, which ingestion discards.
struct BomTree {
  PartIdentifier root;
  std::vector<BomEdge> edges;
  std::map<PartIdentifier, ComponentNode> payloads;
};

// Throws InvalidBom unless the BOM is a rooted tree over identifiers with a
// payload for every part.
inline void validate_bom(const BomTree& bom) {
  std::map<PartIdentifier, const PartIdentifier*> parent_of;
  for (const BomEdge& e : bom.edges) {
    if (e.quantity == 0) {
      throw InvalidBom("edge " + e.parent.str() + " -> " + e.child.str() + " has zero quantity");
    }
    if (e.parent == e.child) throw SelfLoopError("BOM edge on " + e.parent.str());
    if (e.child == bom.root) throw InvalidBom("root " + bom.root.str() + " appears as a child");
    if (!parent_of.emplace(e.child, &e.parent).second) {
      throw InvalidBom("part " + e.child.str() + " has more than one parent in BOM " + bom.root.str());
    }
  }
  std::map<PartIdentifier, std::vector<const PartIdentifier*>> children;
  for (const BomEdge& e : bom.edges) children[e.parent].push_back(&e.child);
  std::set<PartIdentifier> seen{bom.root};
  std::vector<const PartIdentifier*> stack{&bom.root};
  while (!stack.empty()) {
    const PartIdentifier* p = stack.back();
    stack.pop_back();
    auto it = children.find(*p);
    if (it == children.end()) continue;
    for (const PartIdentifier* c : it->second) {
      if (seen.insert(*c).second) stack.push_back(c);
    }
  }
  if (seen.size() != parent_of.size() + 1) {
    throw InvalidBom("BOM " + bom.root.str() + " is not connected to its root");
  }
  for (const PartIdentifier& id : seen) {
    auto it = bom.payloads.find(id);
    if (it == bom.payloads.end()) throw InvalidBom("no node payload for part " + id.str());
    if (!(it->second.id == id)) throw InvalidBom("payload key mismatch for part " + id.str());
    if (it->second.component_type.empty()) {
      throw InvalidBom("part " + id.str() + " has an empty component type");
    }
  }
}

// Parts merged on identifier plus directed connectedTo / similarTo triples.
// Construction is single-writer; afterwards the graph is read-only.
class MachineKnowledgeGraph {
 public:
  std::size_t node_count() const { return nodes_.size(); }
  const std::vector<ComponentNode>& nodes() const { return nodes_; }
  const ComponentNode& node(NodeIndex i) const { return nodes_.at(i); }
  const std::vector<Triple>& triples() const { return triples_; }
  const TripleSet& triple_set() const { return known_; }
  bool contains(const Triple& t) const { return known_.contains(t); }

  std::optional<NodeIndex> find(const PartIdentifier& id) const {
    auto it = index_.find(id.str());
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  NodeIndex index_of(const PartIdentifier& id) const {
    if (auto i = find(id)) return *i;
    throw UnknownPart(id.str());
  }

  std::span<const NodeIndex> out(RelationKind r, NodeIndex v) const { return out_[relation_index(r)][v]; }
  std::span<const NodeIndex> in(RelationKind r, NodeIndex v) const { return in_[relation_index(r)][v]; }

  std::size_t triple_count(RelationKind r) const { return counts_[relation_index(r)]; }

  // Distinct BOM roots ingested so far.
  const std::set<PartIdentifier>& configurations() const { return configurations_; }
  std::size_t merge_conflicts() const { return merge_conflicts_; }

  // Adds a node, or merges metadata onto the existing node with the same
  // identifier. Existing values win on conflict.
  NodeIndex add_node(const ComponentNode& n) {
    if (n.component_type.empty()) throw InvalidBom("part " + n.id.str() + " has an empty component type");
    if (auto existing = find(n.id)) {
      merge_into(*existing, n);
      return *existing;
    }
    const auto idx = static_cast<NodeIndex>(nodes_.size());
    nodes_.push_back(n);
    index_.emplace(n.id.str(), idx);
    for (std::size_t r = 0; r < kRelationCount; ++r) {
      out_[r].emplace_back();
      in_[r].emplace_back();
    }
    return idx;
  }

  // Appends a triple. Returns false for an exact duplicate. ConnectedTo
  // triples that would close a cycle are rejected.
  bool add_triple(const Triple& t) {
    if (t.head >= nodes_.size() || t.tail >= nodes_.size()) {
      throw IndexError("triple endpoint out of range");
    }
    if (t.head == t.tail) throw SelfLoopError("on part " + nodes_[t.head].id.str());
    if (known_.contains(t)) return false;
    if (t.relation == RelationKind::ConnectedTo && reaches(t.tail, t.head, {})) {
      throw CycleError("edge " + nodes_[t.head].id.str() + " -> " + nodes_[t.tail].id.str() +
                       " closes a connectedTo cycle");
    }
    commit_triple(t);
    return true;
  }

  void add_configuration(const PartIdentifier& root) { configurations_.insert(root); }

  // Merges one BOM. Validation and the cycle check run before anything is
  // modified, so a failed ingestion leaves the graph untouched.
  void ingest_bom(const BomTree& bom) {
    validate_bom(bom);

    // Provisional indices for parts not yet in the graph.
    std::set<PartIdentifier> members{bom.root};
    for (const BomEdge& e : bom.edges) members.insert(e.child);
    std::map<PartIdentifier, NodeIndex> resolved;
    auto next = static_cast<NodeIndex>(nodes_.size());
    for (const auto& [id, payload] : bom.payloads) {
      if (!members.contains(id)) continue;
      if (auto i = find(id)) {
        resolved.emplace(id, *i);
      } else {
        resolved.emplace(id, next++);
      }
    }

    std::unordered_map<NodeIndex, std::vector<NodeIndex>> overlay;
    std::vector<Triple> fresh;
    for (const BomEdge& e : bom.edges) {
      const Triple t{resolved.at(e.parent), RelationKind::ConnectedTo, resolved.at(e.child)};
      const bool existing_endpoints = t.head < nodes_.size() && t.tail < nodes_.size();
      if (existing_endpoints && known_.contains(t)) continue;
      if (reaches(t.tail, t.head, overlay)) {
        throw CycleError("edge " + e.parent.str() + " -> " + e.child.str() +
                         " closes a connectedTo cycle");
      }
      overlay[t.head].push_back(t.tail);
      fresh.push_back(t);
    }

    // Nodes are added in identifier order, matching the provisional indices.
    for (const auto& [id, payload] : bom.payloads) {
      if (resolved.contains(id)) add_node(payload);
    }
    for (const Triple& t : fresh) commit_triple(t);
    configurations_.insert(bom.root);
  }

  // One similarTo triple per pair as given; `symmetrize` also stores the
  // reverse direction. Unknown parts fail before anything is added.
  void ingest_substitutes(std::span<const std::pair<PartIdentifier, PartIdentifier>> pairs,
                          bool symmetrize = false) {
    std::vector<Triple> pending;
    pending.reserve(pairs.size() * (symmetrize ? 2 : 1));
    for (const auto& [a, b] : pairs) {
      const NodeIndex ia = index_of(a);
      const NodeIndex ib = index_of(b);
      if (ia == ib) throw SelfLoopError("substitute pair on part " + a.str());
      pending.push_back({ia, RelationKind::SimilarTo, ib});
      if (symmetrize) pending.push_back({ib, RelationKind::SimilarTo, ia});
    }
    for (const Triple& t : pending) {
      if (!known_.contains(t)) commit_triple(t);
    }
  }

  // Kahn's algorithm over connectedTo.
  bool is_acyclic() const {
    const auto& out = out_[relation_index(RelationKind::ConnectedTo)];
    std::vector<std::size_t> indeg(nodes_.size(), 0);
    for (const auto& adj : out) {
      for (NodeIndex c : adj) ++indeg[c];
    }
    std::vector<NodeIndex> queue;
    for (NodeIndex v = 0; v < nodes_.size(); ++v) {
      if (indeg[v] == 0) queue.push_back(v);
    }
    std::size_t visited = 0;
    while (!queue.empty()) {
      const NodeIndex v = queue.back();
      queue.pop_back();
      ++visited;
      for (NodeIndex c : out[v]) {
        if (--indeg[c] == 0) queue.push_back(c);
      }
    }
    return visited == nodes_.size();
  }

 private:
  void merge_into(NodeIndex idx, const ComponentNode& incoming) {
    ComponentNode& existing = nodes_[idx];
    if (existing.component_type != incoming.component_type) {
      ++merge_conflicts_;
      log_warn("type conflict on " + existing.id.str() + ": keeping '" + existing.component_type +
               "', ignoring '" + incoming.component_type + "'");
    }
    for (const auto& [key, value] : incoming.metadata) {
      auto [it, inserted] = existing.metadata.emplace(key, value);
      if (!inserted && !(it->second == value)) {
        ++merge_conflicts_;
        log_warn("metadata conflict on " + existing.id.str() + "." + key + ": keeping '" +
                 it->second.canonical() + "', ignoring '" + value.canonical() + "'");
      }
    }
  }

  void commit_triple(const Triple& t) {
    const std::size_t r = relation_index(t.relation);
    known_.insert(t);
    triples_.push_back(t);
    out_[r][t.head].push_back(t.tail);
    in_[r][t.tail].push_back(t.head);
    ++counts_[r];
  }

  // Depth-first search over connectedTo edges plus not-yet-committed overlay edges.
  bool reaches(NodeIndex from, NodeIndex to,
               const std::unordered_map<NodeIndex, std::vector<NodeIndex>>& overlay) const {
    if (from == to) return true;
    const auto& out = out_[relation_index(RelationKind::ConnectedTo)];
    std::unordered_set<NodeIndex> seen{from};
    std::vector<NodeIndex> stack{from};
    auto visit = [&](NodeIndex c) {
      if (c == to) return true;
      if (seen.insert(c).second) stack.push_back(c);
      return false;
    };
    while (!stack.empty()) {
      const NodeIndex v = stack.back();
      stack.pop_back();
      if (v < out.size()) {
        for (NodeIndex c : out[v]) {
          if (visit(c)) return true;
        }
      }
      if (auto it = overlay.find(v); it != overlay.end()) {
        for (NodeIndex c : it->second) {
          if (visit(c)) return true;
        }
      }
    }
    return false;
  }

  std::vector<ComponentNode> nodes_;
  std::vector<Triple> triples_;
  std::unordered_map<std::string, NodeIndex> index_;
  std::array<std::vector<std::vector<NodeIndex>>, kRelationCount> out_;
  std::array<std::vector<std::vector<NodeIndex>>, kRelationCount> in_;
  std::array<std::size_t, kRelationCount> counts_{};
  TripleSet known_;
  std::set<PartIdentifier> configurations_;
  std::size_t merge_conflicts_ = 0;
};

struct TripleSplit {
  std::vector<std::size_t> train;  // indices into graph.triples()
  std::vector<std::size_t> valid;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
};

// Largest-remainder apportionment of n items over the given ratios. Ties in the
// fractional part go to the earlier bucket.
inline std::array<std::size_t, 3> largest_remainder(std::size_t n, const std::array<double, 3>& ratios) {
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(n) * ratios[i];
    // Guard against 1129.0000000001-style representation noise.
    const double fl = std::floor(exact + 1e-9);
    counts[i] = static_cast<std::size_t>(fl);
    frac[i] = std::max(0.0, exact - fl);
    assigned += counts[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t k = 0; assigned < n; k = (k + 1) % 3, ++assigned) ++counts[order[k]];
  return counts;
}

// Every connectedTo triple goes to train; similarTo triples are shuffled with
// `seed` and cut at the ratio boundaries.
inline TripleSplit split_similar_edges(const MachineKnowledgeGraph& graph,
                                       const std::array<double, 3>& ratios = {0.70, 0.15, 0.15},
                                       std::uint64_t seed = 0) {
  double sum = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("split ratios must lie in [0, 1]");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");

  TripleSplit split;
  split.seed = seed;
  std::vector<std::size_t> similar;
  const auto& triples = graph.triples();
  for (std::size_t i = 0; i < triples.size(); ++i) {
    if (triples[i].relation == RelationKind::ConnectedTo) {
      split.train.push_back(i);
    } else {
      similar.push_back(i);
    }
  }
  if (similar.empty()) throw ConfigError("graph has no similarTo triples to split");

  Rng rng(derive_seed(seed, 0x53504C4954ull));
  rng.shuffle(similar.begin(), similar.end());
  const auto counts = largest_remainder(similar.size(), ratios);
  auto first = similar.begin();
  split.train.insert(split.train.end(), first, first + static_cast<std::ptrdiff_t>(counts[0]));
  first += static_cast<std::ptrdiff_t>(counts[0]);
  split.valid.assign(first, first + static_cast<std::ptrdiff_t>(counts[1]));
  first += static_cast<std::ptrdiff_t>(counts[1]);
  split.test.assign(first, similar.end());
  for (auto* part : {&split.train, &split.valid, &split.test}) std::sort(part->begin(), part->end());
  return split;
}

inline std::vector<Triple> gather(const MachineKnowledgeGraph& graph, std::span<const std::size_t> indices) {
  std::vector<Triple> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(graph.triples().at(i));
  return out;
}

// Component types as dense class labels, classes sorted by name.
struct TypeLabels {
  std::vector<std::string> classes;
  std::vector<std::uint32_t> label;  // per node
};

inline TypeLabels type_labels(const MachineKnowledgeGraph& graph) {
  TypeLabels out;
  std::set<std::string> names;
  for (const auto& n : graph.nodes()) names.insert(n.component_type);
  out.classes.assign(names.begin(), names.end());
  std::unordered_map<std::string, std::uint32_t> pos;
  for (std::uint32_t i = 0; i < out.classes.size(); ++i) pos.emplace(out.classes[i], i);
  out.label.reserve(graph.node_count());
  for (const auto& n : graph.nodes()) out.label.push_back(pos.at(n.component_type));
  return out;
}

}  // namespace mkg

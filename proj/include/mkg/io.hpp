#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <span>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mkg/error.hpp"
#include "mkg/graph.hpp"

namespace mkg::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Small text helpers

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xCBF29CE484222325ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

inline std::string file_fingerprint(const fs::path& path) { return hex64(fnv1a(read_text(path))); }

// ---------------------------------------------------------------------------
// CSV (RFC 4180 quoting, no embedded newlines)

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) throw FormatError("unterminated quote in CSV line");
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

// Reads rows after checking the header matches `expected` exactly.
inline std::vector<std::vector<std::string>> read_csv(std::istream& in,
                                                      const std::vector<std::string>& expected) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty CSV, expected header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (split_csv_line(line) != expected) {
    std::string want;
    for (const auto& h : expected) want += (want.empty() ? "" : ",") + h;
    throw FormatError("CSV header '" + line + "' does not match '" + want + "'");
  }
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != expected.size()) {
      throw FormatError("CSV line " + std::to_string(lineno) + " has " + std::to_string(fields.size()) +
                        " fields, expected " + std::to_string(expected.size()));
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Nodes file: JSON Lines, {"id": ..., "type": ..., "meta": {...}}

inline json node_to_json(const ComponentNode& n) {
  json meta = json::object();
  for (const auto& [k, v] : n.metadata) {
    if (v.is_number()) {
      meta[k] = v.number();
    } else {
      meta[k] = v.text();
    }
  }
  return json{{"id", n.id.str()}, {"type", n.component_type}, {"meta", meta}};
}

inline ComponentNode node_from_json(const json& j) {
  if (!j.is_object() || !j.contains("id") || !j.contains("type")) {
    throw FormatError("node record needs 'id' and 'type'");
  }
  ComponentNode n{PartIdentifier::normalize(j.at("id").get<std::string>()), j.at("type").get<std::string>(), {}};
  if (n.component_type.empty()) throw FormatError("node " + n.id.str() + " has an empty type");
  if (j.contains("meta")) {
    for (const auto& [k, v] : j.at("meta").items()) {
      if (v.is_number()) {
        n.metadata.emplace(k, MetaValue(v.get<double>()));
      } else if (v.is_string()) {
        n.metadata.emplace(k, MetaValue(v.get<std::string>()));
      } else if (!v.is_null()) {
        throw FormatError("node " + n.id.str() + " attribute '" + k + "' is neither text nor number");
      }
    }
  }
  return n;
}

inline std::vector<ComponentNode> read_nodes_jsonl(std::istream& in) {
  std::vector<ComponentNode> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(node_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError("nodes line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline void write_nodes_jsonl(std::ostream& out, std::span<const ComponentNode> nodes) {
  for (const auto& n : nodes) out << node_to_json(n).dump() << '\n';
}

using Catalog = std::map<PartIdentifier, ComponentNode>;

inline Catalog make_catalog(std::vector<ComponentNode> nodes) {
  Catalog c;
  for (auto& n : nodes) {
    PartIdentifier id = n.id;
    c.insert_or_assign(std::move(id), std::move(n));
  }
  return c;
}

// ---------------------------------------------------------------------------
// BOM edges file: parent_id,child_id,quantity. The root is the one parent that
// never appears as a child.

inline BomTree read_bom_csv(std::istream& in, const Catalog& catalog) {
  const auto rows = read_csv(in, {"parent_id", "child_id", "quantity"});
  if (rows.empty()) throw InvalidBom("BOM file has no edges");
  BomTree bom{PartIdentifier::normalize(rows.front()[0]), {}, {}};
  std::set<PartIdentifier> parents;
  std::set<PartIdentifier> children;
  for (const auto& r : rows) {
    long long q = 0;
    const auto& qs = r[2];
    auto [p, ec] = std::from_chars(qs.data(), qs.data() + qs.size(), q);
    if (ec != std::errc() || p != qs.data() + qs.size() || q <= 0) {
      throw InvalidBom("quantity '" + qs + "' is not a positive integer");
    }
    BomEdge e{PartIdentifier::normalize(r[0]), PartIdentifier::normalize(r[1]), static_cast<std::uint32_t>(q)};
    parents.insert(e.parent);
    children.insert(e.child);
    bom.edges.push_back(std::move(e));
  }
  std::vector<PartIdentifier> roots;
  for (const auto& p : parents) {
    if (!children.contains(p)) roots.push_back(p);
  }
  if (roots.size() != 1) {
    throw InvalidBom("BOM must have exactly one root, found " + std::to_string(roots.size()));
  }
  bom.root = roots.front();
  auto attach = [&](const PartIdentifier& id) {
    auto it = catalog.find(id);
    if (it == catalog.end()) throw InvalidBom("no node payload for part " + id.str());
    bom.payloads.emplace(id, it->second);
  };
  attach(bom.root);
  for (const auto& c : children) attach(c);
  return bom;
}

inline void write_bom_csv(std::ostream& out, const BomTree& bom) {
  out << "parent_id,child_id,quantity\n";
  for (const auto& e : bom.edges) {
    out << csv_field(e.parent.str()) << ',' << csv_field(e.child.str()) << ',' << e.quantity << '\n';
  }
}

// ---------------------------------------------------------------------------
// Substitute pairs: part_a,part_b

using PartPair = std::pair<PartIdentifier, PartIdentifier>;

inline std::vector<PartPair> read_pairs_csv(std::istream& in) {
  std::vector<PartPair> out;
  for (const auto& r : read_csv(in, {"part_a", "part_b"})) {
    out.emplace_back(PartIdentifier::normalize(r[0]), PartIdentifier::normalize(r[1]));
  }
  return out;
}

inline void write_pairs_csv(std::ostream& out, std::span<const PartPair> pairs) {
  out << "part_a,part_b\n";
  for (const auto& [a, b] : pairs) out << csv_field(a.str()) << ',' << csv_field(b.str()) << '\n';
}

// ---------------------------------------------------------------------------
// Split manifest

inline json split_to_json(const TripleSplit& s) {
  return json{{"seed", s.seed}, {"train", s.train}, {"valid", s.valid}, {"test", s.test}};
}

inline TripleSplit split_from_json(const json& j) {
  TripleSplit s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.train = j.at("train").get<std::vector<std::size_t>>();
  s.valid = j.at("valid").get<std::vector<std::size_t>>();
  s.test = j.at("test").get<std::vector<std::size_t>>();
  return s;
}

// ---------------------------------------------------------------------------
// Persisted graph: nodes, triples in insertion order, configuration roots.

inline json graph_to_json(const MachineKnowledgeGraph& g) {
  json nodes = json::array();
  for (const auto& n : g.nodes()) nodes.push_back(node_to_json(n));
  json triples = json::array();
  for (const auto& t : g.triples()) {
    triples.push_back(json::array({t.head, std::string(to_string(t.relation)), t.tail}));
  }
  json roots = json::array();
  for (const auto& r : g.configurations()) roots.push_back(r.str());
  return json{{"configurations", roots}, {"nodes", nodes}, {"triples", triples}};
}

inline MachineKnowledgeGraph graph_from_json(const json& j) {
  MachineKnowledgeGraph g;
  for (const auto& n : j.at("nodes")) g.add_node(node_from_json(n));
  for (const auto& t : j.at("triples")) {
    g.add_triple({t.at(0).get<NodeIndex>(), parse_relation(t.at(1).get<std::string>()), t.at(2).get<NodeIndex>()});
  }
  for (const auto& r : j.at("configurations")) g.add_configuration(PartIdentifier::normalize(r.get<std::string>()));
  return g;
}

// Stable content hash of nodes and triples.
inline std::string graph_fingerprint(const MachineKnowledgeGraph& g) {
  std::uint64_t h = fnv1a("mkg");
  for (const auto& n : g.nodes()) {
    h = fnv1a(n.id.str(), h);
    h = fnv1a(n.component_type, h);
  }
  for (const auto& t : g.triples()) {
    const std::string s = std::to_string(t.head) + ':' + std::to_string(static_cast<int>(t.relation)) + ':' +
                          std::to_string(t.tail) + ';';
    h = fnv1a(s, h);
  }
  return hex64(h);
}

// ---------------------------------------------------------------------------
// Binary blob: "MKGBLOB1", u64 header length, JSON header, then the arrays as
// little-endian float64 in header order. The header lists each array's name
// and shape.

struct BlobArray {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major
};

struct Blob {
  json header = json::object();
  std::vector<BlobArray> arrays;

  const BlobArray& array(std::string_view name) const {
    for (const auto& a : arrays) {
      if (a.name == name) return a;
    }
    throw FormatError("blob has no array '" + std::string(name) + "'");
  }
};

inline constexpr char kBlobMagic[8] = {'M', 'K', 'G', 'B', 'L', 'O', 'B', '1'};

inline void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw FormatError("truncated blob");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline void write_blob(const fs::path& path, const Blob& blob) {
  json header = blob.header;
  json shapes = json::array();
  for (const auto& a : blob.arrays) {
    if (a.data.size() != a.rows * a.cols) throw ShapeError("blob array '" + a.name + "' has inconsistent shape");
    shapes.push_back(json{{"name", a.name}, {"rows", a.rows}, {"cols", a.cols}});
  }
  header["arrays"] = shapes;
  const std::string text = header.dump();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(kBlobMagic, sizeof(kBlobMagic));
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : blob.arrays) {
    for (double d : a.data) {
      std::uint64_t bits;
      std::memcpy(&bits, &d, sizeof(bits));
      write_u64(out, bits);
    }
  }
}

inline Blob read_blob(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kBlobMagic, 8) != 0) {
    throw FormatError(path.string() + " is not an mkg blob");
  }
  const std::uint64_t len = read_u64(in);
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("truncated blob header");
  Blob blob;
  blob.header = json::parse(text);
  for (const auto& s : blob.header.at("arrays")) {
    BlobArray a{s.at("name").get<std::string>(), s.at("rows").get<std::size_t>(), s.at("cols").get<std::size_t>(), {}};
    a.data.resize(a.rows * a.cols);
    for (double& d : a.data) {
      const std::uint64_t bits = read_u64(in);
      std::memcpy(&d, &bits, sizeof(d));
    }
    blob.arrays.push_back(std::move(a));
  }
  blob.header.erase("arrays");
  return blob;
}

}  // namespace mkg::io

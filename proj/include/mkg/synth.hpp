#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "mkg/error.hpp"
#include "mkg/graph.hpp"
#include "mkg/io.hpp"
#include "mkg/random.hpp"

// Synthetic server BOM corpora with known substitute families.
namespace mkg::synth {

struct UnitSpec {
  std::string name;
  double factor = 1.0;  // a level printed in this unit is level / factor
};

struct AttributeSpec {
  enum class Kind { Categorical, Numeric };
  std::string key;
  Kind kind = Kind::Categorical;
  std::vector<std::string> values;  // categorical vocabulary
  std::vector<double> levels;       // numeric ladder, in units[0]
  std::string unit_key;             // numeric only; empty when unitless
  std::vector<UnitSpec> units;
};

enum class TypeRole { Server, Assembly, Leaf };

struct TypeSpec {
  std::string name;
  std::string code;  // identifier prefix
  TypeRole role = TypeRole::Leaf;
  int tier = 0;      // children always sit on a strictly higher tier; leaves are last
  std::vector<AttributeSpec> attributes;
  std::vector<std::size_t> slots;  // child types, servers and assemblies only
  std::size_t parts = 0;           // leaf catalog size
  std::vector<std::size_t> families;  // family sizes, leaf types only
};

struct Vendor {
  std::string name;
  std::string code;
};

struct CatalogSpec {
  std::vector<TypeSpec> types;
  std::vector<Vendor> vendors;
  double unit_variant_rate = 0.1;  // chance a family member is written in another unit
  double jitter_rate = 0.3;        // chance a family member's value moves inside the band
  double jitter = 0.01;            // relative tolerance band

  void validate() const {
    if (types.size() < 2) throw ConfigError("catalog spec needs at least two component types");
    if (!(unit_variant_rate >= 0.0 && unit_variant_rate <= 1.0)) throw ConfigError("unit_variant_rate must lie in [0, 1]");
    if (!(jitter_rate >= 0.0 && jitter_rate <= 1.0)) throw ConfigError("jitter_rate must lie in [0, 1]");
    if (!(jitter >= 0.0 && jitter < 0.5)) throw ConfigError("jitter must lie in [0, 0.5)");
    bool server = false;
    for (std::size_t t = 0; t < types.size(); ++t) {
      const TypeSpec& ts = types[t];
      const std::string where = "types[" + std::to_string(t) + "] (" + ts.name + ")";
      if (ts.name.empty() || ts.code.empty()) throw ConfigError(where + " needs a name and a code");
      server = server || ts.role == TypeRole::Server;
      for (const auto& a : ts.attributes) {
        if (a.kind == AttributeSpec::Kind::Categorical && a.values.empty()) {
          throw ConfigError(where + " attribute '" + a.key + "' has no values");
        }
        if (a.kind == AttributeSpec::Kind::Numeric) {
          const auto [lo, hi] = std::minmax_element(a.levels.begin(), a.levels.end());
          if (a.levels.size() < 2 || !(*hi > *lo) || !(*lo > 0.0)) {
            throw ConfigError(where + " attribute '" + a.key + "' needs a non-degenerate positive range");
          }
          if (!a.unit_key.empty() && a.units.empty()) throw ConfigError(where + " attribute '" + a.key + "' has no units");
        }
      }
      for (std::size_t c : ts.slots) {
        if (c >= types.size()) throw ConfigError(where + " slot refers to unknown type " + std::to_string(c));
        if (ts.role == TypeRole::Leaf) throw ConfigError(where + " is a leaf type with slots");
        if (types[c].role == TypeRole::Server || types[c].tier <= ts.tier) {
          throw ConfigError(where + " slot " + types[c].name + " does not sit on a deeper tier");
        }
      }
      std::size_t members = 0;
      for (std::size_t f : ts.families) {
        if (f == 0) throw ConfigError(where + " has an empty family");
        if (f > vendors.size()) throw ConfigError(where + " family larger than the vendor list");
        members += f;
      }
      if (members > ts.parts) throw ConfigError(where + " families need more parts than the type has");
    }
    if (!server) throw ConfigError("catalog spec needs a server type");
  }
};

struct SynthConfig {
  std::uint64_t seed = 7;
  std::size_t machines = 1721;
  std::size_t target_entities = 11270;
  std::size_t target_pairs = 1613;
  std::size_t type_count = 254;
  std::size_t max_depth = 8;
  double sharing_rate = 0.8;      // chance an assembly slot reuses an existing subassembly
  double unit_variant_rate = 0.1;
  std::size_t family_min = 2;
  std::size_t family_max = 4;

  static SynthConfig full() { return {}; }

  static SynthConfig desk() {
    SynthConfig c;
    c.machines = 150;
    c.sharing_rate = 0.5;
    c.target_entities = 2000;
    c.target_pairs = 400;
    c.type_count = 60;
    return c;
  }

  void validate() const {
    if (machines == 0) throw ConfigError("synth.machines must be positive");
    if (type_count < 8) throw ConfigError("synth.type_count must be at least 8");
    if (max_depth < 2 || max_depth > 10) throw ConfigError("synth.max_depth must lie in [2, 10]");
    if (!(sharing_rate >= 0.0 && sharing_rate <= 1.0)) throw ConfigError("synth.sharing_rate must lie in [0, 1]");
    if (!(unit_variant_rate >= 0.0 && unit_variant_rate <= 1.0)) {
      throw ConfigError("synth.unit_variant_rate must lie in [0, 1]");
    }
    if (family_min == 0 || family_max < family_min) throw ConfigError("synth.family_min/family_max out of order");
    if (target_entities <= machines) throw ConfigError("synth.target_entities must exceed synth.machines");
  }
};

inline io::json config_to_json(const SynthConfig& c) {
  return {{"seed", c.seed},
          {"machines", c.machines},
          {"target_entities", c.target_entities},
          {"target_pairs", c.target_pairs},
          {"type_count", c.type_count},
          {"max_depth", c.max_depth},
          {"sharing_rate", c.sharing_rate},
          {"unit_variant_rate", c.unit_variant_rate},
          {"family_min", c.family_min},
          {"family_max", c.family_max}};
}

// Overlays the keys present in `j` onto `base`.
inline SynthConfig config_from_json(const io::json& j, SynthConfig base = {}) {
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) {
      try {
        field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
      } catch (const io::json::exception&) {
        throw ConfigError(std::string("synth.") + key + " has the wrong type");
      }
    }
  };
  if (j.contains("preset")) {
    const auto p = j.at("preset").get<std::string>();
    if (p == "desk") {
      base = SynthConfig::desk();
    } else if (p == "full") {
      base = SynthConfig::full();
    } else {
      throw ConfigError("synth.preset must be desk or full");
    }
  }
  take("seed", base.seed);
  take("machines", base.machines);
  take("target_entities", base.target_entities);
  take("target_pairs", base.target_pairs);
  take("type_count", base.type_count);
  take("max_depth", base.max_depth);
  take("sharing_rate", base.sharing_rate);
  take("unit_variant_rate", base.unit_variant_rate);
  take("family_min", base.family_min);
  take("family_max", base.family_max);
  base.validate();
  return base;
}

// ---------------------------------------------------------------------------
// Default catalog spec

namespace detail {

inline const std::vector<Vendor>& vendor_list() {
  static const std::vector<Vendor> v = {
      {"ARVELLO", "ARV"},  {"BRISKEN", "BRK"}, {"CORVANE", "CRV"}, {"DELTRIX", "DLT"}, {"EMBERLY", "EMB"},
      {"FONTAIN", "FNT"},  {"GALLIOS", "GLS"}, {"HEXWARD", "HXW"}, {"IRONATE", "IRN"}, {"JUNIPRA", "JNP"},
      {"KESTRAL", "KST"},  {"LUMETRA", "LMT"}, {"MORAVEC", "MRV"}, {"NORTHAX", "NTX"}, {"OSTARA", "OST"},
      {"PELLION", "PLN"},  {"QUORVA", "QRV"},  {"RIVETON", "RVT"}, {"SOLANNE", "SLN"}, {"TARVOS", "TRV"},
      {"ULTRION", "ULT"},  {"VANTREX", "VNX"}, {"WESTRAN", "WST"}, {"ZEPHANT", "ZPH"}};
  return v;
}

inline std::vector<double> ladder(std::initializer_list<double> l) { return l; }

inline AttributeSpec categorical(std::string key, std::vector<std::string> values) {
  AttributeSpec a;
  a.key = std::move(key);
  a.values = std::move(values);
  return a;
}

inline AttributeSpec numeric(std::string key, std::vector<double> levels, std::string unit_key = {},
                             std::vector<UnitSpec> units = {}) {
  AttributeSpec a;
  a.key = std::move(key);
  a.kind = AttributeSpec::Kind::Numeric;
  a.levels = std::move(levels);
  a.unit_key = std::move(unit_key);
  a.units = std::move(units);
  return a;
}

inline std::vector<TypeSpec> leaf_archetypes() {
  auto leaf = [](std::string name, std::string code, std::vector<AttributeSpec> attrs) {
    TypeSpec t;
    t.name = std::move(name);
    t.code = std::move(code);
    t.attributes = std::move(attrs);
    return t;
  };
  return {
      leaf("SOLID STATE DRIVE", "SSD",
           {numeric("capacity", ladder({240, 480, 960, 1920, 3840, 7680}), "capacity_unit", {{"GB", 1}, {"TB", 1000}}),
            categorical("form_factor", {"2.5 IN", "M.2 2280", "U.2", "E1.S"}),
            categorical("interface", {"SATA 6G", "SAS 12G", "NVME PCIE4"}),
            numeric("endurance_dwpd", ladder({0.3, 1, 3, 10}))}),
      leaf("HARD DISK DRIVE", "HDD",
           {numeric("capacity", ladder({1000, 2000, 4000, 8000, 12000, 16000}), "capacity_unit", {{"GB", 1}, {"TB", 1000}}),
            categorical("form_factor", {"2.5 IN", "3.5 IN"}), categorical("interface", {"SATA 6G", "SAS 12G"}),
            numeric("spindle_rpm", ladder({5400, 7200, 10000, 15000}))}),
      leaf("PROCESSOR", "CPU",
           {numeric("core_count", ladder({8, 12, 16, 24, 32, 48, 64})),
            numeric("base_clock", ladder({2000, 2200, 2400, 2800, 3100}), "base_clock_unit", {{"MHZ", 1}, {"GHZ", 1000}}),
            numeric("tdp_w", ladder({105, 150, 185, 205, 250, 280})),
            categorical("socket", {"LGA4189", "LGA4677", "SP3", "SP5"})}),
      leaf("MEMORY MODULE", "DIM",
           {numeric("module_size", ladder({8, 16, 32, 64, 128}), "module_size_unit", {{"GB", 1}}),
            numeric("speed_mts", ladder({2666, 2933, 3200, 4800})), categorical("ecc", {"ECC", "NON-ECC"}),
            categorical("rank", {"1RX8", "2RX8", "2RX4", "4RX4"})}),
      leaf("POWER SUPPLY", "PSU",
           {numeric("output_power", ladder({500, 800, 1100, 1600, 2400}), "output_power_unit", {{"W", 1}, {"KW", 1000}}),
            categorical("efficiency", {"80+ PLATINUM", "80+ TITANIUM", "80+ GOLD"}),
            categorical("input", {"AC 100-240V", "DC -48V", "HVDC 240V"})}),
      leaf("FAN", "FAN",
           {numeric("diameter_mm", ladder({40, 60, 80, 92, 120})), numeric("airflow_cfm", ladder({15, 28, 45, 70, 110})),
            categorical("bearing", {"BALL", "SLEEVE", "FLUID"})}),
      leaf("NETWORK ADAPTER", "NIC",
           {numeric("port_speed", ladder({1, 10, 25, 100}), "port_speed_unit", {{"GBE", 1}}),
            numeric("port_count", ladder({1, 2, 4})), categorical("connector", {"RJ45", "SFP28", "QSFP28", "SFP+"})}),
      leaf("RESISTOR", "RES",
           {numeric("resistance", ladder({10, 100, 1000, 4700, 10000, 100000}), "resistance_unit",
                    {{"OHM", 1}, {"KOHM", 1000}}),
            categorical("package", {"0402", "0603", "0805", "1206"}), categorical("tolerance", {"1%", "5%"})}),
      leaf("CAPACITOR", "CAP",
           {numeric("capacitance", ladder({0.1, 1, 10, 22, 100, 470}), "capacitance_unit", {{"UF", 1}, {"NF", 0.001}}),
            categorical("package", {"0402", "0603", "0805", "1206"}), categorical("dielectric", {"X7R", "X5R", "C0G"}),
            numeric("rated_voltage", ladder({6.3, 10, 16, 25, 50}))}),
  };
}

inline const std::vector<std::string>& leaf_stems() {
  static const std::vector<std::string> s = {
      "CONNECTOR", "CABLE",     "SCREW",      "STANDOFF",  "LABEL",     "GASKET",   "BRACKET",  "HEATSINK",
      "FUSE",      "SWITCH",    "LED",        "CRYSTAL",   "OSCILLATOR", "FERRITE", "REGULATOR", "SENSOR",
      "BATTERY",   "RELAY",     "SHIELD",     "CLIP",      "SPRING",    "LATCH",    "FILTER",   "TRANSFORMER",
      "MOSFET",    "EEPROM",    "FLASH",      "CONTROLLER", "TRANSCEIVER", "RETIMER", "BUFFER", "INDUCTOR",
      "DIODE",     "THERMISTOR", "VARISTOR",  "HOLDER",    "INSULATOR", "GROMMET",  "NUT",      "WASHER"};
  return s;
}

inline const std::vector<std::string>& qualifiers() {
  static const std::vector<std::string> q = {"SMD",    "THT",       "HIGH TEMP", "LOW PROFILE", "POWER",
                                             "SIGNAL", "PRECISION", "RUGGED",    "MINIATURE",   "SHIELDED"};
  return q;
}

inline const std::vector<std::string>& assembly_stems() {
  static const std::vector<std::string> s = {
      "SYSTEM BOARD ASSY", "RISER CARD ASSY", "DRIVE CAGE ASSY", "FAN MODULE",      "POWER DISTRIBUTION BOARD",
      "BACKPLANE ASSY",    "BEZEL ASSY",      "CPU TRAY ASSY",   "MEMORY RISER",    "IO MODULE",
      "CHASSIS ASSY",      "CABLE KIT",       "RAIL KIT",        "HEATSINK ASSY",   "STORAGE CONTROLLER ASSY",
      "MANAGEMENT MODULE", "PSU CAGE ASSY",   "FRONT PANEL ASSY", "AIR DUCT ASSY",  "MEZZANINE CARD ASSY"};
  return s;
}

inline const std::vector<std::string>& server_names() {
  static const std::vector<std::string> s = {"RACK SERVER 1U", "RACK SERVER 2U", "RACK SERVER 4U", "BLADE SERVER",
                                             "STORAGE SERVER", "GPU SERVER",     "EDGE SERVER",    "HPC NODE"};
  return s;
}

inline std::string code_for(std::string_view name, std::size_t index) {
  std::string c;
  for (char ch : name) {
    if (std::isalpha(static_cast<unsigned char>(ch)) && c.size() < 3) c.push_back(ch);
  }
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%02zu", index % 100);
  return c + buf;
}

// Generic leaf schema: one measured quantity with its unit, a type-specific
// style, and a package drawn from a vocabulary shared across types.
inline std::vector<AttributeSpec> generic_leaf_attributes(const std::string& stem, Rng& rng) {
  std::string key = stem;
  std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  const double base = std::pow(10.0, static_cast<double>(rng.between(0, 3)));
  std::vector<double> levels;
  const std::size_t n = rng.between(4, 7);
  static const double steps[] = {1, 1.5, 2.2, 3.3, 4.7, 6.8, 10, 15, 22};
  const std::size_t off = rng.index(3);
  for (std::size_t i = 0; i < n; ++i) levels.push_back(base * steps[off + i]);
  static const std::vector<std::vector<UnitSpec>> unit_sets = {
      {{"MM", 1}, {"CM", 10}}, {{"MA", 1}, {"A", 1000}}, {{"MW", 1}, {"W", 1000}}, {{"V", 1}}, {{"G", 1}}, {{"MHZ", 1}}};
  const auto& units = unit_sets[rng.index(unit_sets.size())];
  std::vector<std::string> styles;
  const std::size_t ns = rng.between(2, 4);
  for (std::size_t i = 0; i < ns; ++i) styles.push_back("STYLE " + std::string(1, static_cast<char>('A' + i)));
  static const std::vector<std::string> packages = {"REEL", "TRAY", "BULK", "TUBE", "BAG"};
  std::vector<std::string> pk(packages.begin(), packages.begin() + static_cast<std::ptrdiff_t>(rng.between(2, 5)));
  return {numeric(key + "_rating", levels, key + "_unit", units), categorical(key + "_style", styles),
          categorical("packaging", pk)};
}

}  // namespace detail

// Types, attribute schemas, slot structure and family sizes for a config.
// `leaf_parts` is the catalog size spread over the leaf types, in proportion
// to `demand` (per type, e.g. slot fills of an earlier pass) when given and to
// random weights otherwise. Families are added until they hold `pair_goal`
// pairs (0 means the config's target).
inline CatalogSpec default_catalog_spec(const SynthConfig& config, std::size_t leaf_parts, std::size_t pair_goal = 0,
                                        std::span<const double> demand = {}) {
  if (pair_goal == 0) pair_goal = config.target_pairs;
  config.validate();
  Rng rng(derive_seed(config.seed, 0x53504543ull));
  CatalogSpec spec;
  spec.vendors = detail::vendor_list();
  spec.unit_variant_rate = config.unit_variant_rate;

  const std::size_t servers = std::clamp<std::size_t>(config.type_count / 30, 2, detail::server_names().size());
  const std::size_t assemblies = std::max<std::size_t>(3, config.type_count / 5);
  const std::size_t leaves = config.type_count - servers - assemblies;
  const int deepest = static_cast<int>(std::min<std::size_t>(config.max_depth - 1, 5));

  for (std::size_t i = 0; i < servers; ++i) {
    TypeSpec t;
    t.name = detail::server_names()[i];
    t.code = "SRV" + std::to_string(i);
    t.role = TypeRole::Server;
    t.tier = 0;
    t.attributes = {detail::numeric("rack_units", detail::ladder({1, 2, 4})),
                    detail::categorical("generation", {"G1", "G2", "G3", "G4", "G5"}),
                    detail::categorical("chassis_finish", {"BLACK", "SILVER", "GREY"})};
    spec.types.push_back(std::move(t));
  }
  const std::size_t first_assembly = spec.types.size();
  for (std::size_t i = 0; i < assemblies; ++i) {
    const auto& stems = detail::assembly_stems();
    TypeSpec t;
    t.name = stems[i % stems.size()];
    if (i >= stems.size()) t.name += " " + detail::qualifiers()[(i / stems.size() - 1) % detail::qualifiers().size()];
    if (i >= stems.size() * (1 + detail::qualifiers().size())) t.name += " " + std::to_string(i);
    t.code = detail::code_for(t.name, i);
    t.role = TypeRole::Assembly;
    t.tier = 1 + static_cast<int>(i % static_cast<std::size_t>(deepest));
    t.attributes = {detail::categorical("revision", {"A", "B", "C", "D"}),
                    detail::categorical("assembly_class", {"FRU", "CRU", "FACTORY"})};
    spec.types.push_back(std::move(t));
  }
  const std::size_t first_leaf = spec.types.size();
  const auto archetypes = detail::leaf_archetypes();
  for (std::size_t i = 0; i < leaves; ++i) {
    TypeSpec t;
    if (i < archetypes.size()) {
      t = archetypes[i];
    } else {
      const std::size_t g = i - archetypes.size();
      const auto& stems = detail::leaf_stems();
      const std::string& stem = stems[g % stems.size()];
      t.name = stem;
      if (g >= stems.size()) t.name += ", " + detail::qualifiers()[(g / stems.size() - 1) % detail::qualifiers().size()];
      if (g >= stems.size() * (1 + detail::qualifiers().size())) t.name += " " + std::to_string(g);
      t.code = detail::code_for(stem, g);
      t.attributes = detail::generic_leaf_attributes(stem, rng);
    }
    t.role = TypeRole::Leaf;
    t.tier = deepest + 1;
    t.attributes.push_back(detail::categorical("rohs", {"YES", "YES", "YES", "NO"}));
    std::vector<std::string> series;
    for (std::int64_t k = 0, n = rng.between(2, 5); k < n; ++k) series.push_back(t.code + "-S" + std::to_string(k + 1));
    t.attributes.push_back(detail::categorical("series", std::move(series)));
    spec.types.push_back(std::move(t));
  }

  // Catalog sizes, at least one part per leaf type.
  std::vector<double> weight(leaves);
  for (double& w : weight) w = rng.uniform(0.3, 1.7);
  if (demand.size() == spec.types.size()) {
    for (std::size_t i = 0; i < leaves; ++i) weight[i] = demand[first_leaf + i];
  }
  const double wsum = std::accumulate(weight.begin(), weight.end(), 0.0);
  for (std::size_t i = 0; i < leaves; ++i) {
    spec.types[first_leaf + i].parts =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(weight[i] / wsum * static_cast<double>(leaf_parts))));
  }

  // Families until the pair target is met. Resistors and capacitors never get
  // qualified substitutes, nor do about a quarter of the generic types.
  std::vector<std::size_t> substitutable;
  for (std::size_t i = 0; i < leaves; ++i) {
    const std::string& name = spec.types[first_leaf + i].name;
    if (name == "RESISTOR" || name == "CAPACITOR") continue;
    if (i >= archetypes.size() && rng.bernoulli(0.25)) continue;
    if (weight[i] > 0.0) substitutable.push_back(first_leaf + i);
  }
  Rng family_rng(derive_seed(config.seed, 0x46414D494C59ull));
  std::size_t pairs = 0;
  std::vector<std::size_t> members(spec.types.size(), 0);
  for (std::size_t guard = 0; pairs < pair_goal && !substitutable.empty() && guard < 1000000; ++guard) {
    // Type drawn in proportion to its catalog size.
    std::size_t total = 0;
    for (std::size_t c : substitutable) total += spec.types[c].parts;
    std::size_t r = family_rng.index(total);
    std::size_t t = substitutable.front();
    for (std::size_t c : substitutable) {
      if (r < spec.types[c].parts) {
        t = c;
        break;
      }
      r -= spec.types[c].parts;
    }
    const std::size_t size = family_rng.between(config.family_min, config.family_max);
    TypeSpec& ts = spec.types[t];
    if (members[t] + size > ts.parts) ts.parts = members[t] + size;
    ts.families.push_back(size);
    members[t] += size;
    pairs += size * (size - 1) / 2;
  }

  // Slots. Servers hold a handful of top-tier assemblies and a few leaves;
  // assemblies hold deeper assemblies and leaves.
  Rng slot_rng(derive_seed(config.seed, 0x534C4F54ull));
  auto pick_distinct = [&](std::vector<std::size_t> pool, std::size_t k) {
    slot_rng.shuffle(pool.begin(), pool.end());
    pool.resize(std::min(k, pool.size()));
    std::sort(pool.begin(), pool.end());
    return pool;
  };
  std::vector<std::size_t> leaf_types(leaves);
  std::iota(leaf_types.begin(), leaf_types.end(), first_leaf);
  auto assemblies_deeper_than = [&](int tier, int max_tier) {
    std::vector<std::size_t> out;
    for (std::size_t a = first_assembly; a < first_leaf; ++a) {
      if (spec.types[a].tier > tier && spec.types[a].tier <= max_tier) out.push_back(a);
    }
    return out;
  };
  for (std::size_t t = 0; t < first_leaf; ++t) {
    TypeSpec& ts = spec.types[t];
    std::vector<std::size_t> slots;
    if (ts.role == TypeRole::Server) {
      slots = pick_distinct(assemblies_deeper_than(0, 2), slot_rng.between(3, 5));
      const auto l = pick_distinct(leaf_types, slot_rng.between(2, 4));
      slots.insert(slots.end(), l.begin(), l.end());
    } else {
      if (ts.tier < deepest) {
        slots = pick_distinct(assemblies_deeper_than(ts.tier, ts.tier + 2), slot_rng.between(0, 1));
      }
      const auto l = pick_distinct(leaf_types, slot_rng.between(8, 30));
      slots.insert(slots.end(), l.begin(), l.end());
    }
    ts.slots = std::move(slots);
  }
  // Every assembly and leaf type must be reachable from some parent type.
  std::vector<char> covered(spec.types.size(), 0);
  for (const auto& ts : spec.types) {
    for (std::size_t c : ts.slots) covered[c] = 1;
  }
  for (std::size_t c = first_assembly; c < spec.types.size(); ++c) {
    if (covered[c]) continue;
    std::vector<std::size_t> parents;
    for (std::size_t p = 0; p < first_leaf; ++p) {
      const bool reachable = spec.types[p].role == TypeRole::Server || covered[p];
      if (reachable && spec.types[p].tier < spec.types[c].tier &&
          (spec.types[c].role == TypeRole::Leaf || spec.types[p].tier + 2 >= spec.types[c].tier)) {
        parents.push_back(p);
      }
    }
    if (parents.empty()) {
      for (std::size_t p = 0; p < servers; ++p) parents.push_back(p);
    }
    auto& slots = spec.types[parents[slot_rng.index(parents.size())]].slots;
    slots.insert(std::upper_bound(slots.begin(), slots.end(), c), c);
    covered[c] = 1;
  }
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Catalog

struct Family {
  std::size_t type = 0;
  std::vector<PartIdentifier> members;
};

struct Catalog {
  std::vector<ComponentNode> parts;             // leaf parts
  std::vector<std::size_t> part_type;
  std::vector<std::vector<std::vector<std::size_t>>> units;  // per type: families and singletons as part lists
  std::vector<Family> families;
};

namespace detail {

// Three significant digits.
inline double round_sig(double x) {
  if (x == 0.0) return 0.0;
  const double mag = std::pow(10.0, std::floor(std::log10(std::abs(x))) - 2.0);
  return std::round(x / mag) * mag;
}

inline Metadata draw_attributes(const TypeSpec& ts, Rng& rng) {
  Metadata m;
  for (const auto& a : ts.attributes) {
    if (a.kind == AttributeSpec::Kind::Categorical) {
      m.emplace(a.key, MetaValue(a.values[rng.index(a.values.size())]));
    } else {
      m.emplace(a.key, MetaValue(a.levels[rng.index(a.levels.size())]));
      if (!a.unit_key.empty()) m.emplace(a.unit_key, MetaValue(a.units.front().name));
    }
  }
  return m;
}

inline std::string part_id(const TypeSpec& ts, std::size_t serial, const Vendor& v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05zu", serial);
  return ts.code + "-" + buf + "-" + v.code;
}

}  // namespace detail

// Leaf parts per type. Members of a family share every attribute except the
// vendor; numeric values may move inside the jitter band and may be written
// in another unit.
inline Catalog generate_catalog(const CatalogSpec& spec, std::uint64_t seed) {
  spec.validate();
  Catalog cat;
  cat.units.resize(spec.types.size());
  for (std::size_t t = 0; t < spec.types.size(); ++t) {
    const TypeSpec& ts = spec.types[t];
    if (ts.role != TypeRole::Leaf) continue;
    Rng rng(derive_seed(seed, 0x434154000000ull + t));
    std::size_t serial = 0;
    auto add = [&](Metadata meta, const Vendor& v, std::size_t s) {
      meta.insert_or_assign("vendor", MetaValue(v.name));
      cat.parts.push_back({PartIdentifier::normalize(detail::part_id(ts, s, v)), ts.name, std::move(meta)});
      cat.part_type.push_back(t);
      return cat.parts.size() - 1;
    };
    std::vector<std::size_t> vendor_order(spec.vendors.size());
    std::iota(vendor_order.begin(), vendor_order.end(), std::size_t{0});
    std::size_t used = 0;
    for (std::size_t size : ts.families) {
      const Metadata base = detail::draw_attributes(ts, rng);
      rng.shuffle(vendor_order.begin(), vendor_order.end());
      const std::size_t s = serial++;
      Family fam{t, {}};
      std::vector<std::size_t> unit;
      for (std::size_t k = 0; k < size; ++k) {
        Metadata meta = base;
        for (const auto& a : ts.attributes) {
          if (a.kind != AttributeSpec::Kind::Numeric) continue;
          double value = meta.at(a.key).number();
          if (k > 0 && rng.bernoulli(spec.jitter_rate)) {
            value = detail::round_sig(value * (1.0 + rng.uniform(-spec.jitter, spec.jitter)));
          }
          if (!a.unit_key.empty() && a.units.size() > 1 && rng.bernoulli(spec.unit_variant_rate)) {
            const UnitSpec& u = a.units[1 + rng.index(a.units.size() - 1)];
            value = value / u.factor;
            meta.insert_or_assign(a.unit_key, MetaValue(u.name));
          }
          meta.insert_or_assign(a.key, MetaValue(value));
        }
        const std::size_t p = add(std::move(meta), spec.vendors[vendor_order[k]], s);
        fam.members.push_back(cat.parts[p].id);
        unit.push_back(p);
      }
      used += size;
      cat.units[t].push_back(std::move(unit));
      cat.families.push_back(std::move(fam));
    }
    for (; used < ts.parts; ++used) {
      const std::size_t s = serial++;
      const std::size_t p = add(detail::draw_attributes(ts, rng), spec.vendors[rng.index(spec.vendors.size())], s);
      cat.units[t].push_back({p});
    }
  }
  return cat;
}

// All within-family unordered pairs, smaller identifier first, sorted.
inline std::vector<io::PartPair> emit_ground_truth(std::span<const Family> families) {
  std::vector<io::PartPair> out;
  for (const Family& f : families) {
    for (std::size_t i = 0; i < f.members.size(); ++i) {
      for (std::size_t j = i + 1; j < f.members.size(); ++j) {
        const auto& a = f.members[i];
        const auto& b = f.members[j];
        out.emplace_back(std::min(a, b), std::max(a, b));
      }
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// BOMs

struct Corpus {
  std::vector<ComponentNode> nodes;  // every part used by some BOM, by identifier
  std::vector<BomTree> boms;         // one per machine
  std::vector<Family> families;      // restricted to used parts
  std::vector<io::PartPair> pairs;
};

namespace detail {

class BomBuilder {
 public:
  // `fresh_rate` is the chance a leaf slot draws a part no BOM has used yet.
  BomBuilder(const CatalogSpec& spec, const Catalog& cat, const SynthConfig& config, double fresh_rate)
      : spec_(spec), cat_(cat), config_(config), fresh_rate_(fresh_rate), rng_(derive_seed(config.seed, 0x424F4Dull)) {
    part_used_.assign(cat.parts.size(), 0);
    family_of_.assign(cat.parts.size(), nullptr);
    for (const auto& per_type : cat.units) {
      for (const auto& unit : per_type) {
        if (unit.size() < 2) continue;
        for (std::size_t p : unit) family_of_[p] = &unit;
      }
    }
    for (std::size_t p = 0; p < cat.parts.size(); ++p) leaf_by_id_.emplace(cat.parts[p].id.str(), p);
    instances_.resize(spec.types.size());
    demand_.assign(spec.types.size(), 0.0);
    queue_.resize(spec.types.size());
    next_unit_.assign(spec.types.size(), 0);
    for (std::size_t t = 0; t < spec.types.size(); ++t) {
      queue_[t].resize(cat.units[t].size());
      std::iota(queue_[t].begin(), queue_[t].end(), std::size_t{0});
      rng_.shuffle(queue_[t].begin(), queue_[t].end());
    }
    history_.resize(spec.types.size());
    pending_.resize(spec.types.size());
    for (std::size_t t = 0; t < spec.types.size(); ++t) {
      history_[t].resize(spec.types[t].slots.size());
      pending_[t].resize(spec.types[t].slots.size());
    }
  }

  BomTree build_machine(std::size_t machine) {
    std::vector<std::size_t> servers;
    for (std::size_t t = 0; t < spec_.types.size(); ++t) {
      if (spec_.types[t].role == TypeRole::Server) servers.push_back(t);
    }
    const std::size_t type = servers[rng_.index(servers.size())];
    const TypeSpec& ts = spec_.types[type];
    char buf[24];
    std::snprintf(buf, sizeof(buf), "-%05zu", machine);
    ComponentNode root{PartIdentifier::normalize(ts.code + buf), ts.name, draw_attributes(ts, rng_)};
    BomTree bom{root.id, {}, {}};
    bom.payloads.emplace(root.id, root);
    used_.clear();
    fill_children(type, root.id, bom, nullptr);
    return bom;
  }

  const std::vector<char>& part_used() const { return part_used_; }
  const std::vector<double>& demand() const { return demand_; }

  std::vector<ComponentNode> assemblies() const {
    std::vector<ComponentNode> out;
    for (const auto& per_type : instances_) {
      for (const auto& inst : per_type) out.push_back(inst.node);
    }
    return out;
  }

 private:
  struct Child {
    std::size_t slot = 0;
    bool leaf = true;
    std::size_t index = 0;  // leaf part, or instance of the slot's assembly type
  };

  struct Instance {
    ComponentNode node;
    std::vector<Child> children;
    std::vector<BomEdge> subtree;      // every edge below this assembly
    std::set<std::size_t> leaves;      // leaf parts below it
    std::set<std::string> assemblies;  // assembly ids below it, itself included
  };

  struct Used {
    std::set<std::size_t> leaves;
    std::set<std::string> assemblies;
    void clear() {
      leaves.clear();
      assemblies.clear();
    }
  };

  void place_leaf(std::size_t p, const PartIdentifier& parent, BomTree& bom) {
    part_used_[p] = 1;
    used_.leaves.insert(p);
    bom.payloads.emplace(cat_.parts[p].id, cat_.parts[p]);
    bom.edges.push_back({parent, cat_.parts[p].id, static_cast<std::uint32_t>(rng_.between(1, 4))});
  }

  // A slot's part. Family members a slot has opened but not placed come first;
  // otherwise a fresh catalog unit with probability fresh_rate, or a part this
  // slot already used in some BOM.
  std::optional<std::size_t> pick_leaf(std::size_t type, std::size_t slot) {
    const std::size_t leaf_type = spec_.types[type].slots[slot];
    demand_[leaf_type] += 1.0;
    auto& pending = pending_[type][slot];
    for (std::size_t i = 0; i < pending.size(); ++i) {
      if (!used_.leaves.contains(pending[i]) && !part_used_[pending[i]]) {
        const std::size_t p = pending[i];
        pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(i));
        return p;
      }
    }
    auto& history = history_[type][slot];
    std::vector<std::size_t> open;
    for (std::size_t p : history) {
      if (!used_.leaves.contains(p)) open.push_back(p);
    }
    const bool has_fresh = next_unit_[leaf_type] < queue_[leaf_type].size();
    if (has_fresh && (open.empty() || rng_.bernoulli(fresh_rate_))) {
      const auto& unit = cat_.units[leaf_type][queue_[leaf_type][next_unit_[leaf_type]++]];
      history.insert(history.end(), unit.begin(), unit.end());
      pending.insert(pending.end(), unit.begin() + 1, unit.end());
      return unit.front();
    }
    if (open.empty()) return std::nullopt;
    return open[rng_.index(open.size())];
  }

  // Variant of a template leaf: a family alternative half the time, the same
  // part otherwise, and a fresh pick when neither is free in this BOM.
  std::optional<std::size_t> variant_leaf(std::size_t type, std::size_t slot, std::size_t p) {
    if (family_of_[p] != nullptr && rng_.bernoulli(0.5)) {
      std::vector<std::size_t> alt;
      for (std::size_t q : *family_of_[p]) {
        if (q != p && !used_.leaves.contains(q)) alt.push_back(q);
      }
      if (!alt.empty()) return alt[rng_.index(alt.size())];
    }
    if (!used_.leaves.contains(p)) return p;
    return pick_leaf(type, slot);
  }

  std::vector<Child> fill_children(std::size_t type, const PartIdentifier& parent, BomTree& bom,
                                   const std::vector<Child>* tmpl) {
    const TypeSpec& ts = spec_.types[type];
    std::vector<Child> out;
    auto from_template = [&](std::size_t s) -> const Child* {
      if (tmpl == nullptr) return nullptr;
      for (const Child& c : *tmpl) {
        if (c.slot == s) return &c;
      }
      return nullptr;
    };
    for (std::size_t s = 0; s < ts.slots.size(); ++s) {
      const std::size_t c = ts.slots[s];
      const Child* t = from_template(s);
      if (spec_.types[c].role == TypeRole::Leaf) {
        const auto p = t != nullptr ? variant_leaf(type, s, t->index) : pick_leaf(type, s);
        if (!p) continue;
        place_leaf(*p, parent, bom);
        out.push_back({s, true, *p});
      } else {
        std::size_t inst = 0;
        // variants inherit their template's subassemblies unless sharing is off
        if (t != nullptr && config_.sharing_rate > 0.0 && disjoint(instances_[c][t->index])) {
          inst = t->index;
          attach(c, inst, bom);
        } else {
          inst = assembly(c, bom);
        }
        bom.edges.push_back({parent, instances_[c][inst].node.id, 1});
        out.push_back({s, false, inst});
      }
    }
    return out;
  }

  bool disjoint(const Instance& inst) const {
    for (std::size_t p : inst.leaves) {
      if (used_.leaves.contains(p)) return false;
    }
    for (const auto& a : inst.assemblies) {
      if (used_.assemblies.contains(a)) return false;
    }
    return true;
  }

  void attach(std::size_t type, std::size_t index, BomTree& bom) {
    const Instance& inst = instances_[type][index];
    used_.leaves.insert(inst.leaves.begin(), inst.leaves.end());
    used_.assemblies.insert(inst.assemblies.begin(), inst.assemblies.end());
    bom.payloads.emplace(inst.node.id, inst.node);
    for (const BomEdge& e : inst.subtree) {
      bom.edges.push_back(e);
      bom.payloads.emplace(e.child, payload(e.child));
    }
  }

  // Reuses an existing subassembly with probability sharing_rate when one fits
  // in this BOM; otherwise builds a new one, often as a variant of an existing
  // instance of the same type.
  std::size_t assembly(std::size_t type, BomTree& bom) {
    auto& pool = instances_[type];
    if (!pool.empty() && rng_.bernoulli(config_.sharing_rate)) {
      for (int attempt = 0; attempt < 4; ++attempt) {
        const std::size_t i = rng_.index(pool.size());
        if (disjoint(pool[i])) {
          attach(type, i, bom);
          return i;
        }
      }
    }
    std::vector<Child> tmpl;
    const bool variant = !pool.empty() && rng_.bernoulli(kVariantRate);
    if (variant) tmpl = pool[rng_.index(pool.size())].children;

    const TypeSpec& ts = spec_.types[type];
    char buf[24];
    std::snprintf(buf, sizeof(buf), "-%05zu", pool.size());
    Instance inst{{PartIdentifier::normalize(ts.code + buf), ts.name, draw_attributes(ts, rng_)}, {}, {}, {}, {}};
    used_.assemblies.insert(inst.node.id.str());
    bom.payloads.emplace(inst.node.id, inst.node);
    const std::size_t first_edge = bom.edges.size();
    const std::set<std::size_t> leaves_before = used_.leaves;
    const std::set<std::string> asm_before = used_.assemblies;
    inst.children = fill_children(type, inst.node.id, bom, variant ? &tmpl : nullptr);
    inst.subtree.assign(bom.edges.begin() + static_cast<std::ptrdiff_t>(first_edge), bom.edges.end());
    std::set_difference(used_.leaves.begin(), used_.leaves.end(), leaves_before.begin(), leaves_before.end(),
                        std::inserter(inst.leaves, inst.leaves.end()));
    std::set_difference(used_.assemblies.begin(), used_.assemblies.end(), asm_before.begin(), asm_before.end(),
                        std::inserter(inst.assemblies, inst.assemblies.end()));
    inst.assemblies.insert(inst.node.id.str());
    by_id_.emplace(inst.node.id.str(), std::make_pair(type, pool.size()));
    // `pool` may be a reference into instances_, which nested calls never resize.
    pool.push_back(std::move(inst));
    return pool.size() - 1;
  }

  const ComponentNode& payload(const PartIdentifier& id) const {
    if (auto it = by_id_.find(id.str()); it != by_id_.end()) return instances_[it->second.first][it->second.second].node;
    return cat_.parts.at(leaf_by_id_.at(id.str()));
  }

  static constexpr double kVariantRate = 0.5;

  const CatalogSpec& spec_;
  const Catalog& cat_;
  const SynthConfig& config_;
  double fresh_rate_;
  Rng rng_;
  std::vector<double> demand_;                                   // leaf slot fills per leaf type
  std::vector<std::vector<std::size_t>> queue_;                  // per type: unit order
  std::vector<std::size_t> next_unit_;
  std::vector<std::vector<std::vector<std::size_t>>> history_;  // [type][slot] -> parts placed there
  std::vector<std::vector<std::vector<std::size_t>>> pending_;  // [type][slot] -> family members still to place
  std::vector<char> part_used_;
  std::vector<const std::vector<std::size_t>*> family_of_;
  std::vector<std::vector<Instance>> instances_;
  std::map<std::string, std::pair<std::size_t, std::size_t>> by_id_;
  std::map<std::string, std::size_t> leaf_by_id_;
  Used used_;
};

}  // namespace detail

// One BOM per machine plus the node list of everything the BOMs use. Catalog
// parts no BOM picked are dropped, and families shrink accordingly.
// `demand_out` receives the leaf slot fills per type.
inline Corpus generate_boms(const CatalogSpec& spec, const Catalog& cat, const SynthConfig& config,
                            double fresh_rate = 0.5, std::vector<double>* demand_out = nullptr) {
  config.validate();
  if (cat.parts.empty()) throw ConfigError("catalog has no parts");
  detail::BomBuilder builder(spec, cat, config, fresh_rate);
  Corpus corpus;
  for (std::size_t m = 0; m < config.machines; ++m) corpus.boms.push_back(builder.build_machine(m));

  const std::vector<char>& used = builder.part_used();
  std::set<PartIdentifier> used_ids;
  for (std::size_t p = 0; p < cat.parts.size(); ++p) {
    if (used[p]) {
      corpus.nodes.push_back(cat.parts[p]);
      used_ids.insert(cat.parts[p].id);
    }
  }
  for (auto& n : builder.assemblies()) corpus.nodes.push_back(std::move(n));
  for (const auto& b : corpus.boms) corpus.nodes.push_back(b.payloads.at(b.root));
  std::sort(corpus.nodes.begin(), corpus.nodes.end(),
            [](const ComponentNode& a, const ComponentNode& b) { return a.id < b.id; });

  for (const Family& f : cat.families) {
    Family kept{f.type, {}};
    for (const auto& id : f.members) {
      if (used_ids.contains(id)) kept.members.push_back(id);
    }
    if (!kept.members.empty()) corpus.families.push_back(std::move(kept));
  }
  corpus.pairs = emit_ground_truth(corpus.families);
  if (demand_out != nullptr) *demand_out = builder.demand();
  return corpus;
}

// Full generation. A first pass measures how many leaf slots the BOM
// structure fills per type; later passes size the catalog to that demand so
// the used-entity and pair counts land near their targets.
inline Corpus generate(const SynthConfig& config, CatalogSpec* spec_out = nullptr) {
  config.validate();
  const auto target = static_cast<double>(config.target_entities);
  const auto machines = static_cast<double>(config.machines);
  double leaf_parts = 0.75 * (target - machines);
  double pair_goal = static_cast<double>(config.target_pairs);
  double fresh_rate = 0.5;
  std::vector<double> demand;
  Corpus corpus;
  CatalogSpec spec;
  for (int pass = 0; pass < 4; ++pass) {
    spec = default_catalog_spec(config, static_cast<std::size_t>(std::max(1.0, leaf_parts)),
                                static_cast<std::size_t>(std::max(1.0, pair_goal)), demand);
    const Catalog cat = generate_catalog(spec, config.seed);
    std::vector<double> fills;
    corpus = generate_boms(spec, cat, config, fresh_rate, &fills);
    const double got = static_cast<double>(corpus.nodes.size());
    const double pairs = static_cast<double>(corpus.pairs.size());
    const double goal = static_cast<double>(config.target_pairs);
    if (pass > 0 && std::abs(got - target) <= 0.02 * target && std::abs(pairs - goal) <= 0.02 * goal) break;
    if (pass == 0) {
      std::size_t used_leaves = 0;
      for (const auto& n : corpus.nodes) used_leaves += n.metadata.contains("vendor");
      leaf_parts = target - (got - static_cast<double>(used_leaves));
      demand = fills;
    } else {
      leaf_parts += target - got;
      if (pairs > 0.0) pair_goal *= goal / pairs;
    }
    const double slots = std::accumulate(demand.begin(), demand.end(), 0.0);
    fresh_rate = slots > 0.0 ? std::min(1.0, 1.25 * leaf_parts / slots) : 1.0;
  }
  if (spec_out != nullptr) *spec_out = std::move(spec);
  return corpus;
}

// nodes.jsonl, boms/<root>.csv, pairs.csv and provenance.json under `dir`.
inline void write_corpus(const io::fs::path& dir, const Corpus& corpus, const SynthConfig& config) {
  io::fs::create_directories(dir / "boms");
  for (const auto& entry : io::fs::directory_iterator(dir / "boms")) {
    if (entry.path().extension() == ".csv") io::fs::remove(entry.path());
  }
  {
    std::ofstream out(dir / "nodes.jsonl", std::ios::binary);
    io::write_nodes_jsonl(out, corpus.nodes);
  }
  for (const auto& b : corpus.boms) {
    std::ofstream out(dir / "boms" / (b.root.str() + ".csv"), std::ios::binary);
    io::write_bom_csv(out, b);
  }
  {
    std::ofstream out(dir / "pairs.csv", std::ios::binary);
    io::write_pairs_csv(out, corpus.pairs);
  }
  std::size_t edges = 0;
  for (const auto& b : corpus.boms) edges += b.edges.size();
  io::json prov = {{"generator", "mkg-synth"},
                   {"config", config_to_json(config)},
                   {"seed", config.seed},
                   {"nodes", corpus.nodes.size()},
                   {"boms", corpus.boms.size()},
                   {"bom_edges", edges},
                   {"families", corpus.families.size()},
                   {"pairs", corpus.pairs.size()}};
  io::write_text(dir / "provenance.json", prov.dump(2) + "\n");
}

}  // namespace mkg::synth

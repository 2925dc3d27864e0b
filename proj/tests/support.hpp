#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "mkg/mkg.hpp"
#include "mkg/pipeline.hpp"

namespace testing_support {

namespace fs = std::filesystem;

inline mkg::PartIdentifier pid(const std::string& s) { return mkg::PartIdentifier::normalize(s); }

inline mkg::ComponentNode part(const std::string& id, const std::string& type,
                               std::initializer_list<std::pair<const std::string, mkg::MetaValue>> meta = {}) {
  return mkg::ComponentNode{pid(id), type, mkg::Metadata(meta)};
}

// BOM from (parent, child) edges; payload types default to the id prefix before '-'.
inline mkg::BomTree bom(const std::string& root, const std::vector<std::pair<std::string, std::string>>& edges,
                        const std::vector<mkg::ComponentNode>& extra = {}) {
  mkg::BomTree b{pid(root), {}, {}};
  auto add = [&](const std::string& id) {
    const auto p = pid(id);
    if (b.payloads.contains(p)) return;
    b.payloads.emplace(p, part(id, id.substr(0, id.find('-'))));
  };
  add(root);
  for (const auto& [a, c] : edges) {
    add(a);
    add(c);
    b.edges.push_back({pid(a), pid(c), 1});
  }
  for (const auto& n : extra) b.payloads.insert_or_assign(n.id, n);
  return b;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / ("mkg_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

// Small corpus and short schedules: the whole pipeline runs in about a second.
inline mkg::PipelineConfig tiny_config(const fs::path& work_dir, std::uint64_t seed = 5) {
  mkg::PipelineConfig c;
  c.seed = seed;
  c.work_dir = work_dir;
  c.synth.seed = seed;
  c.synth.machines = 30;
  c.synth.target_entities = 400;
  c.synth.target_pairs = 80;
  c.synth.type_count = 16;
  c.features.pca_dim = 8;
  c.train.dim = 8;
  c.train.max_epochs = 3;
  c.finetune.hidden = 16;
  c.finetune.max_epochs = 3;
  c.validate();
  return c;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

}  // namespace testing_support

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mkg/error.hpp"
#include "mkg/graph.hpp"
#include "mkg/io.hpp"
#include "mkg/linalg.hpp"

namespace mkg {

// Decimal-number grammar: [+-]? (d+ (. d*)? | . d+) ([eE] [+-]? d+)?
inline std::optional<double> parse_decimal(std::string_view s) {
  std::size_t i = 0;
  const std::size_t n = s.size();
  if (i < n && (s[i] == '+' || s[i] == '-')) ++i;
  std::size_t int_digits = 0;
  while (i < n && std::isdigit(static_cast<unsigned char>(s[i]))) ++i, ++int_digits;
  std::size_t frac_digits = 0;
  if (i < n && s[i] == '.') {
    ++i;
    while (i < n && std::isdigit(static_cast<unsigned char>(s[i]))) ++i, ++frac_digits;
  }
  if (int_digits == 0 && frac_digits == 0) return std::nullopt;
  if (i < n && (s[i] == 'e' || s[i] == 'E')) {
    ++i;
    if (i < n && (s[i] == '+' || s[i] == '-')) ++i;
    std::size_t exp_digits = 0;
    while (i < n && std::isdigit(static_cast<unsigned char>(s[i]))) ++i, ++exp_digits;
    if (exp_digits == 0) return std::nullopt;
  }
  if (i != n) return std::nullopt;
  const std::size_t skip = (s[0] == '+') ? 1 : 0;
  double v = 0.0;
  auto res = std::from_chars(s.data() + skip, s.data() + n, v);
  if (res.ec != std::errc()) return std::nullopt;
  return v;
}

inline std::optional<double> numeric_value(const MetaValue& v) {
  if (v.is_number()) return v.number();
  return parse_decimal(v.text());
}

// Value text with numeric-looking strings normalized, so "960", "960.0" and
// the number 960 compare equal.
inline std::string canonical_value(const MetaValue& v) {
  if (v.is_number()) return v.canonical();
  if (auto x = parse_decimal(v.text())) return MetaValue(*x).canonical();
  return v.text();
}

struct NumericColumn {
  std::size_t column = 0;
  double mean = 0.0;
  double stddev = 1.0;
};

// Column layout of the metadata matrix. Keys whose values all parse as numbers
// (and vary) get one z-scored column; every other (key, value) pair seen at
// least `min_freq` times gets a one-hot column.
struct AttributeVocabulary {
  std::map<std::pair<std::string, std::string>, std::size_t> categorical;
  std::map<std::string, NumericColumn> numeric;
  std::size_t min_freq = 2;
  std::size_t columns = 0;
};

inline AttributeVocabulary build_vocabulary(std::span<const ComponentNode> nodes, std::size_t min_freq = 2) {
  if (nodes.empty()) throw ConfigError("build_vocabulary needs at least one node");
  if (min_freq == 0) throw ConfigError("min_freq must be positive");

  struct KeyStats {
    bool all_numeric = true;
    std::vector<double> numbers;
    std::map<std::string, std::size_t> value_counts;
  };
  std::map<std::string, KeyStats> keys;
  for (const auto& n : nodes) {
    for (const auto& [k, v] : n.metadata) {
      KeyStats& ks = keys[k];
      if (auto x = numeric_value(v)) {
        ks.numbers.push_back(*x);
      } else {
        ks.all_numeric = false;
      }
      ++ks.value_counts[canonical_value(v)];
    }
  }

  AttributeVocabulary vocab;
  vocab.min_freq = min_freq;
  for (const auto& [k, ks] : keys) {
    if (ks.all_numeric && ks.numbers.size() >= min_freq) {
      double mean = 0.0;
      for (double x : ks.numbers) mean += x;
      mean /= static_cast<double>(ks.numbers.size());
      double var = 0.0;
      for (double x : ks.numbers) var += (x - mean) * (x - mean);
      const double sd = std::sqrt(var / static_cast<double>(ks.numbers.size()));
      if (sd > 0.0) {
        vocab.numeric.emplace(k, NumericColumn{vocab.columns++, mean, sd});
        continue;
      }
      // Constant numeric key: presence is all it carries, so it stays categorical.
    }
    for (const auto& [value, count] : ks.value_counts) {
      if (count >= min_freq) vocab.categorical.emplace(std::make_pair(k, value), vocab.columns++);
    }
  }
  return vocab;
}

// Rows follow `nodes`; absent or unknown attributes leave zeros.
inline Matrix encode(std::span<const ComponentNode> nodes, const AttributeVocabulary& vocab) {
  Matrix L = Matrix::Zero(static_cast<Eigen::Index>(nodes.size()), static_cast<Eigen::Index>(vocab.columns));
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    for (const auto& [k, v] : nodes[i].metadata) {
      if (auto num = vocab.numeric.find(k); num != vocab.numeric.end()) {
        if (auto x = numeric_value(v)) {
          L(row, static_cast<Eigen::Index>(num->second.column)) = (*x - num->second.mean) / num->second.stddev;
        }
        continue;
      }
      if (auto cat = vocab.categorical.find({k, canonical_value(v)}); cat != vocab.categorical.end()) {
        L(row, static_cast<Eigen::Index>(cat->second)) = 1.0;
      }
    }
  }
  return L;
}

struct ProjectionModel {
  Vector means;                      // length D
  Matrix components;                 // D x d, orthonormal columns
  Vector explained_variance_ratio;   // length d, non-increasing
  std::uint64_t seed = 0;
  int sign_convention_version = 1;   // largest-magnitude coordinate positive

  std::size_t input_dim() const { return static_cast<std::size_t>(components.rows()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(components.cols()); }
};

// Top-d eigenvectors of the column covariance of L.
inline ProjectionModel fit_pca(const Matrix& L, std::size_t d) {
  const auto n = static_cast<std::size_t>(L.rows());
  const auto D = static_cast<std::size_t>(L.cols());
  if (n < 2) throw ConfigError("PCA needs at least two rows");
  if (d == 0 || d > std::min(n, D)) {
    throw ConfigError("PCA dimension " + std::to_string(d) + " outside [1, " + std::to_string(std::min(n, D)) + "]");
  }
  ProjectionModel model;
  model.means = L.colwise().mean().transpose();
  const Matrix centered = L.rowwise() - model.means.transpose();
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(D));
  cov.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
  cov = cov.selfadjointView<Eigen::Lower>();
  cov /= static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw ConsistencyError("covariance eigendecomposition failed");
  const Eigen::VectorXd& values = solver.eigenvalues();  // ascending
  const Eigen::MatrixXd& vectors = solver.eigenvectors();
  double total = 0.0;
  for (Eigen::Index i = 0; i < values.size(); ++i) total += std::max(0.0, values(i));

  model.components.resize(static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(d));
  model.explained_variance_ratio.resize(static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < d; ++j) {
    const Eigen::Index src = static_cast<Eigen::Index>(D - 1 - j);
    Eigen::VectorXd v = vectors.col(src);
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i) {
      if (std::abs(v(i)) > std::abs(v(arg))) arg = i;
    }
    if (v(arg) < 0.0) v = -v;
    model.components.col(static_cast<Eigen::Index>(j)) = v;
    const double lambda = std::max(0.0, values(src));
    model.explained_variance_ratio(static_cast<Eigen::Index>(j)) = total > 0.0 ? lambda / total : 0.0;
  }
  return model;
}

inline Matrix project(const Matrix& L, const ProjectionModel& model) {
  if (static_cast<std::size_t>(L.cols()) != model.input_dim()) {
    throw ShapeError("matrix has " + std::to_string(L.cols()) + " columns, projection expects " +
                     std::to_string(model.input_dim()));
  }
  return (L.rowwise() - model.means.transpose()) * model.components;
}

inline void save_projection(const io::fs::path& path, const ProjectionModel& m) {
  io::Blob blob;
  blob.header = {{"kind", "projection"},
                 {"input_dim", m.input_dim()},
                 {"output_dim", m.output_dim()},
                 {"seed", m.seed},
                 {"sign_convention_version", m.sign_convention_version}};
  blob.arrays.push_back(io::to_blob("means", m.means));
  blob.arrays.push_back(io::to_blob("components", m.components));
  blob.arrays.push_back(io::to_blob("explained_variance_ratio", m.explained_variance_ratio));
  io::write_blob(path, blob);
}

inline ProjectionModel load_projection(const io::fs::path& path) {
  const io::Blob blob = io::read_blob(path);
  if (blob.header.value("kind", "") != "projection") throw FormatError(path.string() + " is not a projection model");
  ProjectionModel m;
  m.means = io::vector_from_blob(blob.array("means"));
  m.components = io::matrix_from_blob(blob.array("components"));
  m.explained_variance_ratio = io::vector_from_blob(blob.array("explained_variance_ratio"));
  m.seed = blob.header.at("seed").get<std::uint64_t>();
  m.sign_convention_version = blob.header.at("sign_convention_version").get<int>();
  return m;
}

// Sorted (key, value) tokens of a node's metadata.
using AttributeSet = std::vector<std::string>;

inline AttributeSet attribute_set(const ComponentNode& n) {
  AttributeSet s;
  s.reserve(n.metadata.size());
  for (const auto& [k, v] : n.metadata) s.push_back(k + '\x1f' + canonical_value(v));
  std::sort(s.begin(), s.end());
  return s;
}

inline double jaccard(const AttributeSet& a, const AttributeSet& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t common = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++common, ++ia, ++ib;
    }
  }
  return static_cast<double>(common) / static_cast<double>(a.size() + b.size() - common);
}

inline double jaccard(const ComponentNode& a, const ComponentNode& b) {
  return jaccard(attribute_set(a), attribute_set(b));
}

}  // namespace mkg

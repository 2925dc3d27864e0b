#pragma once

#include <ostream>
#include <span>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "mkg/error.hpp"
#include "mkg/io.hpp"

namespace mkg {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline std::span<const double> row_span(const Matrix& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

inline std::span<double> row_span(Matrix& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

namespace io {

inline BlobArray to_blob(std::string name, const Matrix& m) {
  BlobArray a{std::move(name), static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()), {}};
  a.data.assign(m.data(), m.data() + m.size());
  return a;
}

inline BlobArray to_blob(std::string name, const Vector& v) {
  BlobArray a{std::move(name), static_cast<std::size_t>(v.size()), 1, {}};
  a.data.assign(v.data(), v.data() + v.size());
  return a;
}

inline Matrix matrix_from_blob(const BlobArray& a) {
  Matrix m(static_cast<Eigen::Index>(a.rows), static_cast<Eigen::Index>(a.cols));
  std::copy(a.data.begin(), a.data.end(), m.data());
  return m;
}

inline Vector vector_from_blob(const BlobArray& a) {
  Vector v(static_cast<Eigen::Index>(a.data.size()));
  std::copy(a.data.begin(), a.data.end(), v.data());
  return v;
}

// `id,<prefix>1..<prefix>k` with one row per entity.
inline void write_rows_csv(std::ostream& out, std::span<const std::string> ids, const Matrix& m,
                           std::string_view prefix) {
  if (static_cast<Eigen::Index>(ids.size()) != m.rows()) throw ShapeError("id count does not match matrix rows");
  out << "id";
  for (Eigen::Index c = 0; c < m.cols(); ++c) out << ',' << prefix << (c + 1);
  out << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out << csv_field(ids[static_cast<std::size_t>(r)]);
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << ',' << format_double(m(r, c));
    out << '\n';
  }
}

}  // namespace io
}  // namespace mkg

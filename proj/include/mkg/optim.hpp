#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "mkg/linalg.hpp"

namespace mkg {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First and second moment estimates for one parameter matrix.
struct AdamMoments {
  Matrix first;
  Matrix second;

  AdamMoments() = default;
  AdamMoments(Eigen::Index rows, Eigen::Index cols)
      : first(Matrix::Zero(rows, cols)), second(Matrix::Zero(rows, cols)) {}
};

// Adam with a shared step counter. Embedding tables use row-wise updates:
// only rows that received a gradient in the current batch are touched
// (the "lazy" variant used for sparse embedding lookups).
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  const AdamOptions& options() const { return options_; }
  std::size_t steps() const { return step_; }

  void begin_step() {
    ++step_;
    correction1_ = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
    correction2_ = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
  }

  void update(double* param, const double* grad, double* m, double* v, std::size_t n) const {
    const double b1 = options_.beta1;
    const double b2 = options_.beta2;
    const double lr = options_.learning_rate;
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
      v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
      const double mhat = m[i] / correction1_;
      const double vhat = v[i] / correction2_;
      param[i] -= lr * mhat / (std::sqrt(vhat) + options_.epsilon);
    }
  }

  void update_row(Matrix& param, const Matrix& grad, AdamMoments& state, Eigen::Index row) const {
    const auto cols = static_cast<std::size_t>(param.cols());
    const Eigen::Index off = row * param.cols();
    update(param.data() + off, grad.data() + off, state.first.data() + off, state.second.data() + off, cols);
  }

  template <class Param, class Grad>
  void update_dense(Param& param, const Grad& grad, AdamMoments& state) const {
    update(param.data(), grad.data(), state.first.data(), state.second.data(), static_cast<std::size_t>(param.size()));
  }

 private:
  AdamOptions options_;
  std::size_t step_ = 0;
  double correction1_ = 1.0;
  double correction2_ = 1.0;
};

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ln(1 + e^x) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace mkg

#pragma once

#include <string>
#include <vector>

#include "synsel/numkit/matrix.hpp"
#include "synsel/numkit/rng.hpp"

namespace synsel::numkit {

// A learnable tensor with its accumulated gradient.
struct ParamTensor {
  std::string name;
  Matrix value;
  Matrix grad;

  ParamTensor() = default;
  ParamTensor(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  static ParamTensor uniform(std::string name, std::size_t rows, std::size_t cols, double bound,
                             RngStream& rng) {
    Matrix m(rows, cols);
    for (double& v : m.values()) v = rng.uniform(-bound, bound);
    return ParamTensor(std::move(name), std::move(m));
  }
  static ParamTensor constant(std::string name, std::size_t rows, std::size_t cols, double v) {
    return ParamTensor(std::move(name), Matrix(rows, cols, v));
  }

  bool defined() const noexcept { return !value.empty(); }
  void zero_grad() { grad = Matrix(value.rows(), value.cols()); }
};

using ParamList = std::vector<ParamTensor*>;

inline void zero_grads(const ParamList& params) {
  for (auto* p : params) p->zero_grad();
}

inline double grad_norm(const ParamList& params) {
  double s = 0.0;
  for (auto* p : params)
    for (double g : p->grad.values()) s += g * g;
  return std::sqrt(s);
}

}  // namespace synsel::numkit

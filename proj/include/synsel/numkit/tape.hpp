#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "synsel/numkit/matrix.hpp"
#include "synsel/numkit/param.hpp"

namespace synsel::numkit {

class Tape;

// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
};

// Minimal reverse-mode recorder. Every op appends a node holding its value
// and a closure that pushes the node's gradient into its inputs. Parameter
// leaves accumulate into ParamTensor::grad when backward() runs.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) { return push(std::move(value), false, nullptr, {}); }
  Var param(ParamTensor& p) { return push(p.value, true, &p, {}); }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradient buffer of a node; allocated zeroed on first touch.
  Matrix& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    return n.grad;
  }

  Var push(Matrix value, bool requires_grad, ParamTensor* param, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix{}, requires_grad, param, std::move(backward)});
    return Var{this, nodes_.size() - 1};
  }

  // Reverse sweep from a 1x1 output. Parameter leaves add into their grads.
  void backward(Var out, double seed = 1.0) {
    if (value(out).size() != 1) {
      throw DimensionError("backward requires a scalar output, got " + value(out).shape());
    }
    grad(out.id)[0] += seed;
    for (std::size_t i = out.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param != nullptr) n.param->grad += n.grad;
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad;
    ParamTensor* param;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

namespace ops {

namespace detail {
inline bool any_grad(Tape& t, std::initializer_list<Var> vs) {
  for (Var v : vs)
    if (t.requires_grad(v.id)) return true;
  return false;
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  Matrix out = numkit::matmul(t.value(a), t.value(b));
  return t.push(std::move(out), detail::any_grad(t, {a, b}), nullptr,
                [a = a.id, b = b.id](Tape& t, std::size_t self) {
                  const Matrix& g = t.grad(self);
                  if (t.requires_grad(a)) t.grad(a) += numkit::matmul_nt(g, t.value(b));
                  if (t.requires_grad(b)) t.grad(b) += numkit::matmul_tn(t.value(a), g);
                });
}

// a * b^T
inline Var matmul_nt(Var a, Var b) {
  Tape& t = *a.tape;
  Matrix out = numkit::matmul_nt(t.value(a), t.value(b));
  return t.push(std::move(out), detail::any_grad(t, {a, b}), nullptr,
                [a = a.id, b = b.id](Tape& t, std::size_t self) {
                  const Matrix& g = t.grad(self);
                  if (t.requires_grad(a)) t.grad(a) += numkit::matmul(g, t.value(b));
                  if (t.requires_grad(b)) t.grad(b) += numkit::matmul_tn(g, t.value(a));
                });
}

inline Var transpose(Var a) {
  Tape& t = *a.tape;
  return t.push(numkit::transpose(t.value(a)), t.requires_grad(a.id), nullptr,
                [a = a.id](Tape& t, std::size_t self) {
                  t.grad(a) += numkit::transpose(t.grad(self));
                });
}

inline Var add(Var a, Var b) {
  Tape& t = *a.tape;
  Matrix out = t.value(a) + t.value(b);
  return t.push(std::move(out), detail::any_grad(t, {a, b}), nullptr,
                [a = a.id, b = b.id](Tape& t, std::size_t self) {
                  if (t.requires_grad(a)) t.grad(a) += t.grad(self);
                  if (t.requires_grad(b)) t.grad(b) += t.grad(self);
                });
}

inline Var sub(Var a, Var b) {
  Tape& t = *a.tape;
  Matrix out = t.value(a) - t.value(b);
  return t.push(std::move(out), detail::any_grad(t, {a, b}), nullptr,
                [a = a.id, b = b.id](Tape& t, std::size_t self) {
                  if (t.requires_grad(a)) t.grad(a) += t.grad(self);
                  if (t.requires_grad(b)) t.grad(b) -= t.grad(self);
                });
}

// x (n x c) + row (1 x c) broadcast over rows.
inline Var add_row(Var x, Var row) {
  Tape& t = *x.tape;
  const Matrix& xv = t.value(x);
  const Matrix& rv = t.value(row);
  if (rv.rows() != 1 || rv.cols() != xv.cols()) {
    throw DimensionError("add_row: " + xv.shape() + " + " + rv.shape());
  }
  Matrix out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += rv[j];
  }
  return t.push(std::move(out), detail::any_grad(t, {x, row}), nullptr,
                [x = x.id, row = row.id](Tape& t, std::size_t self) {
                  const Matrix& g = t.grad(self);
                  if (t.requires_grad(x)) t.grad(x) += g;
                  if (t.requires_grad(row)) {
                    Matrix& gr = t.grad(row);
                    for (std::size_t i = 0; i < g.rows(); ++i)
                      for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(i, j);
                  }
                });
}

inline Var scale(Var a, double s) {
  Tape& t = *a.tape;
  return t.push(t.value(a) * s, t.requires_grad(a.id), nullptr,
                [a = a.id, s](Tape& t, std::size_t self) { t.grad(a) += t.grad(self) * s; });
}

inline Var hadamard(Var a, Var b) {
  Tape& t = *a.tape;
  Matrix out = numkit::hadamard(t.value(a), t.value(b));
  return t.push(std::move(out), detail::any_grad(t, {a, b}), nullptr,
                [a = a.id, b = b.id](Tape& t, std::size_t self) {
                  const Matrix& g = t.grad(self);
                  if (t.requires_grad(a)) t.grad(a) += numkit::hadamard(g, t.value(b));
                  if (t.requires_grad(b)) t.grad(b) += numkit::hadamard(g, t.value(a));
                });
}

// 1 - a
inline Var one_minus(Var a) {
  Tape& t = *a.tape;
  Matrix out = t.value(a);
  for (double& v : out.values()) v = 1.0 - v;
  return t.push(std::move(out), t.requires_grad(a.id), nullptr,
                [a = a.id](Tape& t, std::size_t self) { t.grad(a) -= t.grad(self); });
}

inline Var relu(Var a) {
  Tape& t = *a.tape;
  return t.push(numkit::relu(t.value(a)), t.requires_grad(a.id), nullptr,
                [a = a.id](Tape& t, std::size_t self) {
                  const Matrix& x = t.value(a);
                  const Matrix& g = t.grad(self);
                  Matrix& ga = t.grad(a);
                  for (std::size_t i = 0; i < x.size(); ++i)
                    if (x[i] > 0.0) ga[i] += g[i];
                });
}

inline Var sigmoid(Var a) {
  Tape& t = *a.tape;
  Matrix out = t.value(a);
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  return t.push(std::move(out), t.requires_grad(a.id), nullptr,
                [a = a.id](Tape& t, std::size_t self) {
                  const Matrix& y = t.value(self);
                  const Matrix& g = t.grad(self);
                  Matrix& ga = t.grad(a);
                  for (std::size_t i = 0; i < y.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
                });
}

inline Var tanh(Var a) {
  Tape& t = *a.tape;
  Matrix out = t.value(a);
  for (double& v : out.values()) v = std::tanh(v);
  return t.push(std::move(out), t.requires_grad(a.id), nullptr,
                [a = a.id](Tape& t, std::size_t self) {
                  const Matrix& y = t.value(self);
                  const Matrix& g = t.grad(self);
                  Matrix& ga = t.grad(a);
                  for (std::size_t i = 0; i < y.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
                });
}

inline Var exp(Var a) {
  Tape& t = *a.tape;
  Matrix out = t.value(a);
  for (double& v : out.values()) v = std::exp(v);
  return t.push(std::move(out), t.requires_grad(a.id), nullptr,
                [a = a.id](Tape& t, std::size_t self) {
                  t.grad(a) += numkit::hadamard(t.grad(self), t.value(self));
                });
}

inline Var square(Var a) {
  Tape& t = *a.tape;
  Matrix out = numkit::hadamard(t.value(a), t.value(a));
  return t.push(std::move(out), t.requires_grad(a.id), nullptr,
                [a = a.id](Tape& t, std::size_t self) {
                  t.grad(a) += numkit::hadamard(t.grad(self), t.value(a)) * 2.0;
                });
}

inline Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  return t.push(numkit::softmax_rows(t.value(a)), t.requires_grad(a.id), nullptr,
                [a = a.id](Tape& t, std::size_t self) {
                  const Matrix& y = t.value(self);
                  const Matrix& g = t.grad(self);
                  Matrix& ga = t.grad(a);
                  for (std::size_t r = 0; r < y.rows(); ++r) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
                    for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += y(r, c) * (g(r, c) - dot);
                  }
                });
}

inline Var log_softmax_rows(Var a) {
  Tape& t = *a.tape;
  return t.push(numkit::log_softmax_rows(t.value(a)), t.requires_grad(a.id), nullptr,
                [a = a.id](Tape& t, std::size_t self) {
                  const Matrix& y = t.value(self);
                  const Matrix& g = t.grad(self);
                  Matrix& ga = t.grad(a);
                  for (std::size_t r = 0; r < y.rows(); ++r) {
                    double gsum = 0.0;
                    for (std::size_t c = 0; c < y.cols(); ++c) gsum += g(r, c);
                    for (std::size_t c = 0; c < y.cols(); ++c)
                      ga(r, c) += g(r, c) - std::exp(y(r, c)) * gsum;
                  }
                });
}

// Columns [c0, c1).
inline Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
  Tape& t = *a.tape;
  const Matrix& x = t.value(a);
  if (c0 > c1 || c1 > x.cols()) throw DimensionError("slice_cols out of range on " + x.shape());
  Matrix out(x.rows(), c1 - c0);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = c0; c < c1; ++c) out(r, c - c0) = x(r, c);
  return t.push(std::move(out), t.requires_grad(a.id), nullptr,
                [a = a.id, c0](Tape& t, std::size_t self) {
                  const Matrix& g = t.grad(self);
                  Matrix& ga = t.grad(a);
                  for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c + c0) += g(r, c);
                });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  Tape& t = *parts.front().tape;
  const std::size_t rows = t.value(parts.front()).rows();
  std::size_t cols = 0;
  bool rg = false;
  for (Var p : parts) {
    if (t.value(p).rows() != rows) throw DimensionError("concat_cols row mismatch");
    cols += t.value(p).cols();
    rg = rg || t.requires_grad(p.id);
  }
  Matrix out(rows, cols);
  std::size_t off = 0;
  std::vector<std::size_t> ids;
  for (Var p : parts) {
    const Matrix& x = t.value(p);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) out(r, off + c) = x(r, c);
    off += x.cols();
    ids.push_back(p.id);
  }
  return t.push(std::move(out), rg, nullptr, [ids](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const std::size_t w = t.value(id).cols();
      if (t.requires_grad(id)) {
        Matrix& gi = t.grad(id);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < w; ++c) gi(r, c) += g(r, off + c);
      }
      off += w;
    }
  });
}

// Row i as a 1 x c matrix.
inline Var row(Var a, std::size_t i) {
  Tape& t = *a.tape;
  const Matrix& x = t.value(a);
  if (i >= x.rows()) throw DimensionError("row index out of range on " + x.shape());
  Matrix out = Matrix::row_vector(x.row(i));
  return t.push(std::move(out), t.requires_grad(a.id), nullptr,
                [a = a.id, i](Tape& t, std::size_t self) {
                  const Matrix& g = t.grad(self);
                  auto dst = t.grad(a).row(i);
                  for (std::size_t c = 0; c < g.cols(); ++c) dst[c] += g[c];
                });
}

inline Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw DimensionError("stack_rows of nothing");
  Tape& t = *rows.front().tape;
  const std::size_t cols = t.value(rows.front()).cols();
  Matrix out(rows.size(), cols);
  bool rg = false;
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Matrix& r = t.value(rows[i]);
    if (r.rows() != 1 || r.cols() != cols) throw DimensionError("stack_rows expects 1 x c rows");
    std::copy(r.values().begin(), r.values().end(), out.row(i).begin());
    rg = rg || t.requires_grad(rows[i].id);
    ids.push_back(rows[i].id);
  }
  return t.push(std::move(out), rg, nullptr, [ids](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.requires_grad(ids[i])) continue;
      Matrix& gi = t.grad(ids[i]);
      auto src = g.row(i);
      for (std::size_t c = 0; c < src.size(); ++c) gi[c] += src[c];
    }
  });
}

// Mean over rows: (n x c) -> (1 x c).
inline Var mean_rows(Var a) {
  Tape& t = *a.tape;
  const Matrix& x = t.value(a);
  Matrix out(1, x.cols());
  const double inv = 1.0 / static_cast<double>(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out[c] += x(r, c);
  out *= inv;
  return t.push(std::move(out), t.requires_grad(a.id), nullptr,
                [a = a.id, inv](Tape& t, std::size_t self) {
                  const Matrix& g = t.grad(self);
                  Matrix& ga = t.grad(a);
                  for (std::size_t r = 0; r < ga.rows(); ++r)
                    for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g[c] * inv;
                });
}

inline Var sum(Var a) {
  Tape& t = *a.tape;
  double s = 0.0;
  for (double v : t.value(a).values()) s += v;
  return t.push(Matrix(1, 1, s), t.requires_grad(a.id), nullptr,
                [a = a.id](Tape& t, std::size_t self) {
                  const double g = t.grad(self)[0];
                  for (double& v : t.grad(a).values()) v += g;
                });
}

inline Var mean(Var a) {
  const double n = static_cast<double>(a.tape->value(a).size());
  return scale(sum(a), 1.0 / n);
}

// out[i] = a(i, cols[i]); yields n x 1.
inline Var pick_cols(Var a, std::span<const int> cols) {
  Tape& t = *a.tape;
  const Matrix& x = t.value(a);
  if (cols.size() != x.rows()) throw DimensionError("pick_cols: index count != rows");
  Matrix out(x.rows(), 1);
  std::vector<int> idx(cols.begin(), cols.end());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= x.cols())
      throw DimensionError("pick_cols: column index out of range");
    out[r] = x(r, static_cast<std::size_t>(idx[r]));
  }
  return t.push(std::move(out), t.requires_grad(a.id), nullptr,
                [a = a.id, idx = std::move(idx)](Tape& t, std::size_t self) {
                  const Matrix& g = t.grad(self);
                  Matrix& ga = t.grad(a);
                  for (std::size_t r = 0; r < idx.size(); ++r)
                    ga(r, static_cast<std::size_t>(idx[r])) += g[r];
                });
}

// Per-row layer normalisation with learnable gain and offset (both 1 x c).
inline Var layer_norm_rows(Var x, Var gain, Var offset, double eps = 1e-5) {
  Tape& t = *x.tape;
  const Matrix& xv = t.value(x);
  const Matrix& gv = t.value(gain);
  const Matrix& bv = t.value(offset);
  const std::size_t n = xv.rows(), c = xv.cols();
  if (gv.rows() != 1 || gv.cols() != c || !gv.same_shape(bv)) {
    throw DimensionError("layer_norm: " + xv.shape() + " with gain " + gv.shape());
  }
  Matrix xhat(n, c);
  std::vector<double> inv_std(n);
  Matrix out(n, c);
  for (std::size_t r = 0; r < n; ++r) {
    auto in = xv.row(r);
    double mu = 0.0;
    for (double v : in) mu += v;
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (double v : in) var += (v - mu) * (v - mu);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat(r, j) = (in[j] - mu) * inv_std[r];
      out(r, j) = xhat(r, j) * gv[j] + bv[j];
    }
  }
  return t.push(
      std::move(out), detail::any_grad(t, {x, gain, offset}), nullptr,
      [x = x.id, gain = gain.id, offset = offset.id, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& gv = t.value(gain);
        const std::size_t n = g.rows(), c = g.cols();
        if (t.requires_grad(gain)) {
          Matrix& gg = t.grad(gain);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) gg[j] += g(r, j) * xhat(r, j);
        }
        if (t.requires_grad(offset)) {
          Matrix& gb = t.grad(offset);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) gb[j] += g(r, j);
        }
        if (t.requires_grad(x)) {
          Matrix& gx = t.grad(x);
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t r = 0; r < n; ++r) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double dy = g(r, j) * gv[j];
              sum_dy += dy;
              sum_dy_xhat += dy * xhat(r, j);
            }
            for (std::size_t j = 0; j < c; ++j) {
              const double dy = g(r, j) * gv[j];
              gx(r, j) += inv_std[r] * (dy - inv_c * sum_dy - xhat(r, j) * inv_c * sum_dy_xhat);
            }
          }
        }
      });
}

// Rows of a in the given order (indices may repeat).
inline Var gather_rows(Var a, std::vector<std::size_t> order) {
  Tape& t = *a.tape;
  const Matrix& x = t.value(a);
  Matrix out(order.size(), x.cols());
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (order[r] >= x.rows()) throw DimensionError("gather_rows index out of range on " + x.shape());
    auto src = x.row(order[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return t.push(std::move(out), t.requires_grad(a.id), nullptr,
                [a = a.id, order = std::move(order)](Tape& t, std::size_t self) {
                  const Matrix& g = t.grad(self);
                  Matrix& ga = t.grad(a);
                  for (std::size_t r = 0; r < order.size(); ++r) {
                    auto dst = ga.row(order[r]);
                    auto src = g.row(r);
                    for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
                  }
                });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  Tape& t = *parts.front().tape;
  const std::size_t cols = t.value(parts.front()).cols();
  std::size_t rows = 0;
  bool rg = false;
  std::vector<std::size_t> ids;
  for (Var p : parts) {
    if (t.value(p).cols() != cols) throw DimensionError("concat_rows column mismatch");
    rows += t.value(p).rows();
    rg = rg || t.requires_grad(p.id);
    ids.push_back(p.id);
  }
  Matrix out(rows, cols);
  std::size_t off = 0;
  for (Var p : parts) {
    const Matrix& x = t.value(p);
    std::copy(x.values().begin(), x.values().end(), out.data() + off * cols);
    off += x.rows();
  }
  return t.push(std::move(out), rg, nullptr, [ids](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const std::size_t n = t.value(id).size();
      if (t.requires_grad(id)) {
        Matrix& gi = t.grad(id);
        for (std::size_t i = 0; i < n; ++i) gi[i] += g[off + i];
      }
      off += n;
    }
  });
}

}  // namespace ops
}  // namespace synsel::numkit

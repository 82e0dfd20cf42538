#pragma once

// Dense 64-bit tensor engine with reverse-mode automatic differentiation.
// Tensors are two-dimensional (vectors are 1xN or Nx1, scalars 1x1); every
// operation records its backward rule on an implicit tape realized as the
// parent graph of shared nodes. Values are immutable after construction
// except gradient accumulation and explicit leaf mutation by the optimizer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "mgf/errors.hpp"
#include "mgf/rng.hpp"

namespace mgf {

namespace detail {

struct TensorNode {
  int rows = 0;
  int cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // allocated only when requires_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(const TensorNode&)> backward;
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables tape recording in a scope (inference, oracle evaluation).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = false;
  }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

inline std::string shape_str(int r, int c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor leaf(int rows, int cols, std::vector<double> value,
                     bool requires_grad = false) {
    if (rows < 0 || cols < 0 ||
        value.size() != static_cast<size_t>(rows) * static_cast<size_t>(cols)) {
      throw DimensionError("tensor value length " +
                           std::to_string(value.size()) +
                           " does not match shape " + shape_str(rows, cols));
    }
    for (double v : value) {
      if (!std::isfinite(v)) {
        throw ContractError("non-finite value in tensor of shape " +
                            shape_str(rows, cols));
      }
    }
    auto node = std::make_shared<detail::TensorNode>();
    node->rows = rows;
    node->cols = cols;
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad.assign(node->value.size(), 0.0);
    return Tensor(std::move(node));
  }

  static Tensor zeros(int rows, int cols, bool requires_grad = false) {
    return leaf(rows, cols,
                std::vector<double>(static_cast<size_t>(rows) * cols, 0.0),
                requires_grad);
  }

  static Tensor full(int rows, int cols, double v, bool requires_grad = false) {
    return leaf(rows, cols,
                std::vector<double>(static_cast<size_t>(rows) * cols, v),
                requires_grad);
  }

  static Tensor identity(int n, bool requires_grad = false) {
    std::vector<double> v(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * n + i] = 1.0;
    return leaf(n, n, std::move(v), requires_grad);
  }

  static Tensor scalar(double v) { return leaf(1, 1, {v}); }

  static Tensor row(std::vector<double> v, bool requires_grad = false) {
    const int n = static_cast<int>(v.size());
    return leaf(1, n, std::move(v), requires_grad);
  }

  static Tensor column(std::vector<double> v, bool requires_grad = false) {
    const int n = static_cast<int>(v.size());
    return leaf(n, 1, std::move(v), requires_grad);
  }

  static Tensor randu(int rows, int cols, RandomStream& rng, double lo,
                      double hi, bool requires_grad = false) {
    std::vector<double> v(static_cast<size_t>(rows) * cols);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return leaf(rows, cols, std::move(v), requires_grad);
  }

  static Tensor randn(int rows, int cols, RandomStream& rng, double mean = 0.0,
                      double stddev = 1.0, bool requires_grad = false) {
    std::vector<double> v(static_cast<size_t>(rows) * cols);
    for (auto& x : v) x = rng.normal(mean, stddev);
    return leaf(rows, cols, std::move(v), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  int rows() const { return node_->rows; }
  int cols() const { return node_->cols; }
  size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> values() const { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }

  double at(int r, int c) const {
    return node_->value[static_cast<size_t>(r) * node_->cols + c];
  }

  double item() const {
    if (node_->rows != 1 || node_->cols != 1) {
      throw DimensionError("item() on non-scalar tensor " +
                           shape_str(node_->rows, node_->cols));
    }
    return node_->value[0];
  }

  // Leaf mutation: used by the optimizer and finite differencing only.
  std::span<double> mutable_values() { return node_->value; }
  std::span<double> mutable_grad() { return node_->grad; }

  void zero_grad() {
    if (node_->requires_grad) {
      std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }
  }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node)
      : node_(std::move(node)) {}

  friend Tensor make_op(int rows, int cols, std::vector<double> value,
                        std::vector<Tensor> inputs,
                        std::function<void(const detail::TensorNode&)> backward);

  std::shared_ptr<detail::TensorNode> node_;
};

namespace detail {

inline void check_finite(const TensorNode& n, const char* op) {
#ifndef NDEBUG
  for (double v : n.value) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
#else
  (void)n;
  (void)op;
#endif
}

}  // namespace detail

// Creates an operation result. Records the backward rule only when grad mode
// is on and some input participates in differentiation.
inline Tensor make_op(
    int rows, int cols, std::vector<double> value, std::vector<Tensor> inputs,
    std::function<void(const detail::TensorNode&)> backward) {
  auto node = std::make_shared<detail::TensorNode>();
  node->rows = rows;
  node->cols = cols;
  node->value = std::move(value);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->grad.assign(node->value.size(), 0.0);
    node->parents.reserve(inputs.size());
    for (const auto& t : inputs) node->parents.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

namespace detail {

inline std::vector<double>* grad_of(const std::shared_ptr<TensorNode>& n) {
  return n->requires_grad ? &n->grad : nullptr;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra operations
// ---------------------------------------------------------------------------

inline void check_same_shape(const Tensor& a, const Tensor& b,
                             const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.rows(), a.cols()) + " vs " +
                         shape_str(b.rows(), b.cols()));
  }
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  auto av = a.values(), bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op(a.rows(), a.cols(), std::move(out), {a, b},
                 [](const detail::TensorNode& self) {
                   for (const auto& p : self.parents) {
                     if (auto* g = detail::grad_of(p)) {
                       for (size_t i = 0; i < self.grad.size(); ++i) {
                         (*g)[i] += self.grad[i];
                       }
                     }
                   }
                 });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  auto av = a.values(), bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_op(a.rows(), a.cols(), std::move(out), {a, b},
                 [](const detail::TensorNode& self) {
                   if (auto* g = detail::grad_of(self.parents[0])) {
                     for (size_t i = 0; i < self.grad.size(); ++i) {
                       (*g)[i] += self.grad[i];
                     }
                   }
                   if (auto* g = detail::grad_of(self.parents[1])) {
                     for (size_t i = 0; i < self.grad.size(); ++i) {
                       (*g)[i] -= self.grad[i];
                     }
                   }
                 });
}

// Hadamard product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  auto av = a.values(), bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op(a.rows(), a.cols(), std::move(out), {a, b},
                 [](const detail::TensorNode& self) {
                   const auto& av = self.parents[0]->value;
                   const auto& bv = self.parents[1]->value;
                   if (auto* g = detail::grad_of(self.parents[0])) {
                     for (size_t i = 0; i < self.grad.size(); ++i) {
                       (*g)[i] += self.grad[i] * bv[i];
                     }
                   }
                   if (auto* g = detail::grad_of(self.parents[1])) {
                     for (size_t i = 0; i < self.grad.size(); ++i) {
                       (*g)[i] += self.grad[i] * av[i];
                     }
                   }
                 });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  auto av = a.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  return make_op(a.rows(), a.cols(), std::move(out), {a},
                 [c](const detail::TensorNode& self) {
                   if (auto* g = detail::grad_of(self.parents[0])) {
                     for (size_t i = 0; i < self.grad.size(); ++i) {
                       (*g)[i] += self.grad[i] * c;
                     }
                   }
                 });
}

// Adds a 1xC row vector to every row of an NxC matrix.
inline Tensor add_rowvec(const Tensor& a, const Tensor& b) {
  if (b.rows() != 1 || b.cols() != a.cols()) {
    throw DimensionError("add_rowvec: " + shape_str(a.rows(), a.cols()) +
                         " vs " + shape_str(b.rows(), b.cols()));
  }
  std::vector<double> out(a.size());
  auto av = a.values(), bv = b.values();
  const int c = a.cols();
  for (int r = 0; r < a.rows(); ++r) {
    for (int j = 0; j < c; ++j) {
      out[static_cast<size_t>(r) * c + j] = av[static_cast<size_t>(r) * c + j] + bv[j];
    }
  }
  return make_op(a.rows(), a.cols(), std::move(out), {a, b},
                 [](const detail::TensorNode& self) {
                   const int c = self.cols;
                   if (auto* g = detail::grad_of(self.parents[0])) {
                     for (size_t i = 0; i < self.grad.size(); ++i) {
                       (*g)[i] += self.grad[i];
                     }
                   }
                   if (auto* g = detail::grad_of(self.parents[1])) {
                     for (int r = 0; r < self.rows; ++r) {
                       for (int j = 0; j < c; ++j) {
                         (*g)[j] += self.grad[static_cast<size_t>(r) * c + j];
                       }
                     }
                   }
                 });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree, " +
                         shape_str(a.rows(), a.cols()) + " * " +
                         shape_str(b.rows(), b.cols()));
  }
  const int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  auto av = a.values(), bv = b.values();
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double aip = av[static_cast<size_t>(i) * k + p];
      if (aip == 0.0) continue;
      const size_t brow = static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) {
        out[static_cast<size_t>(i) * n + j] += aip * bv[brow + j];
      }
    }
  }
  return make_op(
      m, n, std::move(out), {a, b}, [m, k, n](const detail::TensorNode& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        // dA = G * B^T
        if (auto* ga = detail::grad_of(self.parents[0])) {
          for (int i = 0; i < m; ++i) {
            for (int p = 0; p < k; ++p) {
              double acc = 0.0;
              for (int j = 0; j < n; ++j) {
                acc += self.grad[static_cast<size_t>(i) * n + j] *
                       bv[static_cast<size_t>(p) * n + j];
              }
              (*ga)[static_cast<size_t>(i) * k + p] += acc;
            }
          }
        }
        // dB = A^T * G
        if (auto* gb = detail::grad_of(self.parents[1])) {
          for (int p = 0; p < k; ++p) {
            for (int j = 0; j < n; ++j) {
              double acc = 0.0;
              for (int i = 0; i < m; ++i) {
                acc += av[static_cast<size_t>(i) * k + p] *
                       self.grad[static_cast<size_t>(i) * n + j];
              }
              (*gb)[static_cast<size_t>(p) * n + j] += acc;
            }
          }
        }
      });
}

inline Tensor transpose(const Tensor& a) {
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  auto av = a.values();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      out[static_cast<size_t>(j) * m + i] = av[static_cast<size_t>(i) * n + j];
    }
  }
  return make_op(n, m, std::move(out), {a},
                 [m, n](const detail::TensorNode& self) {
                   if (auto* g = detail::grad_of(self.parents[0])) {
                     for (int i = 0; i < m; ++i) {
                       for (int j = 0; j < n; ++j) {
                         (*g)[static_cast<size_t>(i) * n + j] +=
                             self.grad[static_cast<size_t>(j) * m + i];
                       }
                     }
                   }
                 });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  auto av = a.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  return make_op(a.rows(), a.cols(), std::move(out), {a},
                 [](const detail::TensorNode& self) {
                   const auto& av = self.parents[0]->value;
                   if (auto* g = detail::grad_of(self.parents[0])) {
                     for (size_t i = 0; i < self.grad.size(); ++i) {
                       if (av[i] > 0.0) (*g)[i] += self.grad[i];
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// Row reductions and reshuffles
// ---------------------------------------------------------------------------

inline Tensor gather_rows(const Tensor& a, std::vector<int> idx) {
  const int n = a.cols();
  for (int i : idx) {
    if (i < 0 || i >= a.rows()) {
      throw IndexError("gather_rows: row " + std::to_string(i) +
                       " out of range [0, " + std::to_string(a.rows()) + ")");
    }
  }
  std::vector<double> out(idx.size() * static_cast<size_t>(n));
  auto av = a.values();
  for (size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(av.begin() + static_cast<size_t>(idx[r]) * n, n,
                out.begin() + r * n);
  }
  const int m = static_cast<int>(idx.size());
  return make_op(m, n, std::move(out), {a},
                 [idx = std::move(idx), n](const detail::TensorNode& self) {
                   if (auto* g = detail::grad_of(self.parents[0])) {
                     for (size_t r = 0; r < idx.size(); ++r) {
                       for (int j = 0; j < n; ++j) {
                         (*g)[static_cast<size_t>(idx[r]) * n + j] +=
                             self.grad[r * n + j];
                       }
                     }
                   }
                 });
}

inline Tensor vconcat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("vconcat: no inputs");
  const int n = parts[0].cols();
  int m = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) {
      throw DimensionError("vconcat: column mismatch " +
                           shape_str(p.rows(), p.cols()));
    }
    m += p.rows();
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(m) * n);
  for (const auto& p : parts) {
    auto v = p.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  std::vector<int> row_counts;
  row_counts.reserve(parts.size());
  for (const auto& p : parts) row_counts.push_back(p.rows());
  return make_op(m, n, std::move(out), parts,
                 [row_counts, n](const detail::TensorNode& self) {
                   size_t offset = 0;
                   for (size_t k = 0; k < self.parents.size(); ++k) {
                     const size_t len =
                         static_cast<size_t>(row_counts[k]) * n;
                     if (auto* g = detail::grad_of(self.parents[k])) {
                       for (size_t i = 0; i < len; ++i) {
                         (*g)[i] += self.grad[offset + i];
                       }
                     }
                     offset += len;
                   }
                 });
}

inline Tensor hconcat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("hconcat: no inputs");
  const int m = parts[0].rows();
  int n = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) {
      throw DimensionError("hconcat: row mismatch " +
                           shape_str(p.rows(), p.cols()));
    }
    n += p.cols();
  }
  std::vector<double> out(static_cast<size_t>(m) * n);
  int col = 0;
  for (const auto& p : parts) {
    auto v = p.values();
    for (int r = 0; r < m; ++r) {
      std::copy_n(v.begin() + static_cast<size_t>(r) * p.cols(), p.cols(),
                  out.begin() + static_cast<size_t>(r) * n + col);
    }
    col += p.cols();
  }
  std::vector<int> col_counts;
  col_counts.reserve(parts.size());
  for (const auto& p : parts) col_counts.push_back(p.cols());
  return make_op(m, n, std::move(out), parts,
                 [col_counts, m, n](const detail::TensorNode& self) {
                   int col = 0;
                   for (size_t k = 0; k < self.parents.size(); ++k) {
                     const int w = col_counts[k];
                     if (auto* g = detail::grad_of(self.parents[k])) {
                       for (int r = 0; r < m; ++r) {
                         for (int j = 0; j < w; ++j) {
                           (*g)[static_cast<size_t>(r) * w + j] +=
                               self.grad[static_cast<size_t>(r) * n + col + j];
                         }
                       }
                     }
                     col += w;
                   }
                 });
}

// Mean over all rows (or a non-empty subset) -> 1xC.
inline Tensor mean_rows(const Tensor& a, const std::vector<int>& subset = {}) {
  std::vector<int> idx = subset;
  if (idx.empty()) {
    if (a.rows() == 0) throw ContractError("mean_rows: empty tensor");
    idx.resize(a.rows());
    for (int i = 0; i < a.rows(); ++i) idx[i] = i;
  }
  const int n = a.cols();
  const double inv = 1.0 / static_cast<double>(idx.size());
  std::vector<double> out(n, 0.0);
  auto av = a.values();
  for (int i : idx) {
    for (int j = 0; j < n; ++j) out[j] += av[static_cast<size_t>(i) * n + j];
  }
  for (auto& x : out) x *= inv;
  return make_op(1, n, std::move(out), {a},
                 [idx = std::move(idx), n, inv](const detail::TensorNode& self) {
                   if (auto* g = detail::grad_of(self.parents[0])) {
                     for (int i : idx) {
                       for (int j = 0; j < n; ++j) {
                         (*g)[static_cast<size_t>(i) * n + j] +=
                             self.grad[j] * inv;
                       }
                     }
                   }
                 });
}

// Column-wise max over all rows (or a subset) -> 1xC; gradient routes to the
// first attaining row.
inline Tensor max_rows(const Tensor& a, const std::vector<int>& subset = {}) {
  std::vector<int> idx = subset;
  if (idx.empty()) {
    if (a.rows() == 0) throw ContractError("max_rows: empty tensor");
    idx.resize(a.rows());
    for (int i = 0; i < a.rows(); ++i) idx[i] = i;
  }
  const int n = a.cols();
  std::vector<double> out(n, -std::numeric_limits<double>::infinity());
  std::vector<int> arg(n, -1);
  auto av = a.values();
  for (int i : idx) {
    for (int j = 0; j < n; ++j) {
      const double v = av[static_cast<size_t>(i) * n + j];
      if (v > out[j]) {
        out[j] = v;
        arg[j] = i;
      }
    }
  }
  return make_op(1, n, std::move(out), {a},
                 [arg = std::move(arg), n](const detail::TensorNode& self) {
                   if (auto* g = detail::grad_of(self.parents[0])) {
                     for (int j = 0; j < n; ++j) {
                       (*g)[static_cast<size_t>(arg[j]) * n + j] +=
                           self.grad[j];
                     }
                   }
                 });
}

// Per-row dot product of two equal-shape matrices -> Nx1.
inline Tensor row_dot(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "row_dot");
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(m, 0.0);
  auto av = a.values(), bv = b.values();
  for (int i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) {
      acc += av[static_cast<size_t>(i) * n + j] *
             bv[static_cast<size_t>(i) * n + j];
    }
    out[i] = acc;
  }
  return make_op(m, 1, std::move(out), {a, b},
                 [m, n](const detail::TensorNode& self) {
                   const auto& av = self.parents[0]->value;
                   const auto& bv = self.parents[1]->value;
                   if (auto* g = detail::grad_of(self.parents[0])) {
                     for (int i = 0; i < m; ++i) {
                       for (int j = 0; j < n; ++j) {
                         (*g)[static_cast<size_t>(i) * n + j] +=
                             self.grad[i] * bv[static_cast<size_t>(i) * n + j];
                       }
                     }
                   }
                   if (auto* g = detail::grad_of(self.parents[1])) {
                     for (int i = 0; i < m; ++i) {
                       for (int j = 0; j < n; ++j) {
                         (*g)[static_cast<size_t>(i) * n + j] +=
                             self.grad[i] * av[static_cast<size_t>(i) * n + j];
                       }
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

// Row-wise softmax over unmasked entries; masked entries are exactly zero.
// Stabilized by subtracting the row maximum over the unmasked support.
inline Tensor masked_softmax(const Tensor& scores,
                             const std::vector<uint8_t>& mask) {
  const int m = scores.rows(), n = scores.cols();
  if (mask.size() != scores.size()) {
    throw DimensionError("masked_softmax: mask length " +
                         std::to_string(mask.size()) + " vs scores " +
                         shape_str(m, n));
  }
  std::vector<double> out(scores.size(), 0.0);
  auto sv = scores.values();
  for (int i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (mask[static_cast<size_t>(i) * n + j]) {
        mx = std::max(mx, sv[static_cast<size_t>(i) * n + j]);
      }
    }
    if (!std::isfinite(mx)) {
      throw ContractError("masked_softmax: fully masked row " +
                          std::to_string(i));
    }
    double denom = 0.0;
    for (int j = 0; j < n; ++j) {
      const size_t p = static_cast<size_t>(i) * n + j;
      if (mask[p]) {
        out[p] = std::exp(sv[p] - mx);
        denom += out[p];
      }
    }
    for (int j = 0; j < n; ++j) {
      const size_t p = static_cast<size_t>(i) * n + j;
      if (mask[p]) out[p] /= denom;
    }
  }
  return make_op(m, n, std::move(out), {scores},
                 [mask, m, n](const detail::TensorNode& self) {
                   if (auto* g = detail::grad_of(self.parents[0])) {
                     for (int i = 0; i < m; ++i) {
                       double dot = 0.0;
                       for (int j = 0; j < n; ++j) {
                         const size_t p = static_cast<size_t>(i) * n + j;
                         if (mask[p]) dot += self.grad[p] * self.value[p];
                       }
                       for (int j = 0; j < n; ++j) {
                         const size_t p = static_cast<size_t>(i) * n + j;
                         if (mask[p]) {
                           (*g)[p] += self.value[p] * (self.grad[p] - dot);
                         }
                       }
                     }
                   }
                 });
}

// Softmax over contiguous segments of an Nx1 score vector. offsets has
// S+1 entries delimiting segments; every segment must be non-empty.
inline Tensor segment_softmax(const Tensor& scores,
                              const std::vector<int>& offsets) {
  if (scores.cols() != 1) {
    throw DimensionError("segment_softmax: expected column vector, got " +
                         shape_str(scores.rows(), scores.cols()));
  }
  const int n = scores.rows();
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != n) {
    throw ContractError("segment_softmax: bad segment offsets");
  }
  std::vector<double> out(scores.size());
  auto sv = scores.values();
  for (size_t s = 0; s + 1 < offsets.size(); ++s) {
    const int lo = offsets[s], hi = offsets[s + 1];
    if (lo >= hi) {
      throw ContractError("segment_softmax: empty segment " +
                          std::to_string(s));
    }
    double mx = sv[lo];
    for (int i = lo + 1; i < hi; ++i) mx = std::max(mx, sv[i]);
    double denom = 0.0;
    for (int i = lo; i < hi; ++i) {
      out[i] = std::exp(sv[i] - mx);
      denom += out[i];
    }
    for (int i = lo; i < hi; ++i) out[i] /= denom;
  }
  return make_op(n, 1, std::move(out), {scores},
                 [offsets](const detail::TensorNode& self) {
                   if (auto* g = detail::grad_of(self.parents[0])) {
                     for (size_t s = 0; s + 1 < offsets.size(); ++s) {
                       const int lo = offsets[s], hi = offsets[s + 1];
                       double dot = 0.0;
                       for (int i = lo; i < hi; ++i) {
                         dot += self.grad[i] * self.value[i];
                       }
                       for (int i = lo; i < hi; ++i) {
                         (*g)[i] += self.value[i] * (self.grad[i] - dot);
                       }
                     }
                   }
                 });
}

// Z[src[p]] += alpha[p] * V[dst[p]]; alpha is Px1, V is NxD, Z is out_rows x D.
inline Tensor segment_weighted_rows(const Tensor& alpha, const Tensor& v,
                                    const std::vector<int>& src,
                                    const std::vector<int>& dst,
                                    int out_rows) {
  if (alpha.cols() != 1 || alpha.rows() != static_cast<int>(src.size()) ||
      src.size() != dst.size()) {
    throw DimensionError("segment_weighted_rows: pair list disagrees with alpha");
  }
  const int d = v.cols();
  std::vector<double> out(static_cast<size_t>(out_rows) * d, 0.0);
  auto av = alpha.values();
  auto vv = v.values();
  for (size_t p = 0; p < src.size(); ++p) {
    const double a = av[p];
    const size_t zo = static_cast<size_t>(src[p]) * d;
    const size_t vo = static_cast<size_t>(dst[p]) * d;
    for (int j = 0; j < d; ++j) out[zo + j] += a * vv[vo + j];
  }
  return make_op(out_rows, d, std::move(out), {alpha, v},
                 [src, dst, d](const detail::TensorNode& self) {
                   const auto& av = self.parents[0]->value;
                   const auto& vv = self.parents[1]->value;
                   auto* ga = detail::grad_of(self.parents[0]);
                   auto* gv = detail::grad_of(self.parents[1]);
                   for (size_t p = 0; p < src.size(); ++p) {
                     const size_t zo = static_cast<size_t>(src[p]) * d;
                     const size_t vo = static_cast<size_t>(dst[p]) * d;
                     if (ga) {
                       double acc = 0.0;
                       for (int j = 0; j < d; ++j) {
                         acc += self.grad[zo + j] * vv[vo + j];
                       }
                       (*ga)[p] += acc;
                     }
                     if (gv) {
                       for (int j = 0; j < d; ++j) {
                         (*gv)[vo + j] += av[p] * self.grad[zo + j];
                       }
                     }
                   }
                 });
}

inline Tensor softmax_rows(const Tensor& a) {
  std::vector<uint8_t> mask(a.size(), 1);
  return masked_softmax(a, mask);
}

// ---------------------------------------------------------------------------
// Normalization and losses
// ---------------------------------------------------------------------------

// Row-wise layer normalization with learnable per-feature gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain,
                         const Tensor& bias, double eps = 1e-5) {
  const int m = x.rows(), n = x.cols();
  if (n < 2) {
    throw DimensionError("layer_norm: needs at least 2 features, got " +
                         shape_str(m, n));
  }
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 ||
      bias.cols() != n) {
    throw DimensionError("layer_norm: gain/bias must be 1x" +
                         std::to_string(n));
  }
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(m);
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  for (int i = 0; i < m; ++i) {
    const size_t o = static_cast<size_t>(i) * n;
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += xv[o + j];
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      const double dlt = xv[o + j] - mean;
      var += dlt * dlt;
    }
    var /= n;
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std[i] = istd;
    for (int j = 0; j < n; ++j) {
      xhat[o + j] = (xv[o + j] - mean) * istd;
      out[o + j] = gv[j] * xhat[o + j] + bv[j];
    }
  }
  return make_op(
      m, n, std::move(out), {x, gain, bias},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), m,
       n](const detail::TensorNode& self) {
        const auto& gv = self.parents[1]->value;
        auto* gx = detail::grad_of(self.parents[0]);
        auto* gg = detail::grad_of(self.parents[1]);
        auto* gb = detail::grad_of(self.parents[2]);
        for (int i = 0; i < m; ++i) {
          const size_t o = static_cast<size_t>(i) * n;
          if (gx) {
            double mean_w = 0.0, mean_wx = 0.0;
            for (int j = 0; j < n; ++j) {
              const double w = self.grad[o + j] * gv[j];
              mean_w += w;
              mean_wx += w * xhat[o + j];
            }
            mean_w /= n;
            mean_wx /= n;
            for (int j = 0; j < n; ++j) {
              const double w = self.grad[o + j] * gv[j];
              (*gx)[o + j] +=
                  inv_std[i] * (w - mean_w - xhat[o + j] * mean_wx);
            }
          }
          if (gg) {
            for (int j = 0; j < n; ++j) {
              (*gg)[j] += self.grad[o + j] * xhat[o + j];
            }
          }
          if (gb) {
            for (int j = 0; j < n; ++j) (*gb)[j] += self.grad[o + j];
          }
        }
      });
}

// Mean negative log-softmax probability of the true class. logits: BxC.
inline Tensor cross_entropy(const Tensor& logits,
                            const std::vector<int>& labels) {
  const int b = logits.rows(), c = logits.cols();
  if (static_cast<int>(labels.size()) != b) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(b) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || y >= c) {
      throw IndexError("cross_entropy: label " + std::to_string(y) +
                       " out of range [0, " + std::to_string(c) + ")");
    }
  }
  auto lv = logits.values();
  std::vector<double> probs(logits.size());
  double loss = 0.0;
  for (int i = 0; i < b; ++i) {
    const size_t o = static_cast<size_t>(i) * c;
    double mx = lv[o];
    for (int j = 1; j < c; ++j) mx = std::max(mx, lv[o + j]);
    double denom = 0.0;
    for (int j = 0; j < c; ++j) {
      probs[o + j] = std::exp(lv[o + j] - mx);
      denom += probs[o + j];
    }
    for (int j = 0; j < c; ++j) probs[o + j] /= denom;
    loss -= std::log(probs[o + labels[i]]);
  }
  loss /= b;
  return make_op(1, 1, {loss}, {logits},
                 [probs = std::move(probs), labels, b,
                  c](const detail::TensorNode& self) {
                   if (auto* g = detail::grad_of(self.parents[0])) {
                     const double s = self.grad[0] / b;
                     for (int i = 0; i < b; ++i) {
                       const size_t o = static_cast<size_t>(i) * c;
                       for (int j = 0; j < c; ++j) {
                         const double onehot = j == labels[i] ? 1.0 : 0.0;
                         (*g)[o + j] += s * (probs[o + j] - onehot);
                       }
                     }
                   }
                 });
}

// Elementwise dropout as multiplication by a constant 0 / 1/(1-rate) mask.
inline Tensor dropout(const Tensor& x, double rate, RandomStream& rng,
                      bool training) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
  std::vector<double> mask(x.size());
  const double keep = 1.0 / (1.0 - rate);
  for (auto& m : mask) m = rng.uniform() < rate ? 0.0 : keep;
  return mul(x, Tensor::leaf(x.rows(), x.cols(), std::move(mask)));
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. The seed scales the whole gradient,
// which lets callers average per-sample gradients without extra nodes.
inline void backward(const Tensor& loss, double seed = 1.0) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw DimensionError("backward: loss must be scalar, got " +
                         shape_str(loss.rows(), loss.cols()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order topological sort over parents.
  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> visited;
  std::vector<std::pair<detail::TensorNode*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::TensorNode* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad[0] += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

inline void zero_grad(std::vector<Tensor>& params) {
  for (auto& p : params) p.zero_grad();
}

// ---------------------------------------------------------------------------
// Adam optimizer
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  long step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// Standard bias-corrected Adam update over a parameter list; gradients are
// read from each tensor's grad buffer.
inline void adam_step(std::vector<Tensor>& params, AdamState& state,
                      const AdamConfig& cfg) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].size(), 0.0);
      state.v[i].assign(params[i].size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw DimensionError("adam_step: state tracks " +
                         std::to_string(state.m.size()) + " tensors, got " +
                         std::to_string(params.size()));
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].size()) {
      throw DimensionError("adam_step: moment buffer shape mismatch at tensor " +
                           std::to_string(i));
    }
    auto vals = params[i].mutable_values();
    auto grads = params[i].grad();
    for (size_t j = 0; j < vals.size(); ++j) {
      const double g = grads[j];
      state.m[i][j] = cfg.beta1 * state.m[i][j] + (1.0 - cfg.beta1) * g;
      state.v[i][j] = cfg.beta2 * state.v[i][j] + (1.0 - cfg.beta2) * g * g;
      const double mhat = state.m[i][j] / bc1;
      const double vhat = state.v[i][j] / bc2;
      vals[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient validation
// ---------------------------------------------------------------------------

// Compares reverse-mode gradients of a scalar-valued function against central
// finite differences. Returns max over coordinates of
// |autodiff - fd| / max(1, |fd|).
inline double grad_check(const std::function<Tensor()>& f,
                         std::vector<Tensor> params, double step = 1e-5) {
  zero_grad(params);
  Tensor loss = f();
  backward(loss);
  std::vector<std::vector<double>> auto_grads;
  auto_grads.reserve(params.size());
  for (const auto& p : params) {
    auto_grads.emplace_back(p.grad().begin(), p.grad().end());
  }
  double worst = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    auto vals = params[i].mutable_values();
    for (size_t j = 0; j < vals.size(); ++j) {
      const double keep = vals[j];
      vals[j] = keep + step;
      const double up = f().item();
      vals[j] = keep - step;
      const double down = f().item();
      vals[j] = keep;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw ContractError("grad_check: non-finite loss at perturbed point");
      }
      const double fd = (up - down) / (2.0 * step);
      const double err =
          std::abs(auto_grads[i][j] - fd) / std::max(1.0, std::abs(fd));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace mgf

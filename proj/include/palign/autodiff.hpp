#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "palign/tensor.hpp"

namespace palign {

// Reverse-mode autodiff over Tensor<R>. Nodes form a DAG held together by
// shared_ptr parents; backward() walks it once in reverse topological order.
// A graph and its intermediate nodes are confined to one thread; leaf
// parameters may be shared read-only across threads when no grads flow.

template <typename R>
class Variable;

template <typename R>
using Var = std::shared_ptr<Variable<R>>;

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// RAII switch: inside the guard, newly built ops carry no backward state,
// so inference does not retain graphs.
struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename R>
class Variable {
 public:
  Tensor<R> value;
  Tensor<R> grad;  // empty until first needed; shape of value afterwards
  bool requires_grad = false;
  bool is_leaf = true;
  std::string name;
  std::vector<Var<R>> parents;
  std::function<void(Variable<R>&)> backprop;

  Tensor<R>& ensure_grad() {
    if (grad.empty() && value.numel() > 0) grad = Tensor<R>(value.shape());
    return grad;
  }
};

template <typename R>
Var<R> constant(Tensor<R> value) {
  auto v = std::make_shared<Variable<R>>();
  v->value = std::move(value);
  return v;
}

template <typename R>
Var<R> param(Tensor<R> value, std::string name = "") {
  auto v = std::make_shared<Variable<R>>();
  v->value = std::move(value);
  v->requires_grad = true;
  v->name = std::move(name);
  return v;
}

template <typename R>
Var<R> make_op(Tensor<R> value, std::vector<Var<R>> parents, std::function<void(Variable<R>&)> backprop) {
  auto v = std::make_shared<Variable<R>>();
  v->value = std::move(value);
  v->is_leaf = false;
  bool rg = grad_enabled();
  if (rg) {
    rg = false;
    for (const auto& p : parents)
      if (p->requires_grad) {
        rg = true;
        break;
      }
  }
  v->requires_grad = rg;
  if (rg) {
    v->parents = std::move(parents);
    v->backprop = std::move(backprop);
  }
  return v;
}

// ---- elementwise ----

template <typename R>
Var<R> add(const Var<R>& a, const Var<R>& b) {
  if (!a->value.shape_equals(b->value))
    throw DimensionError("add: shapes " + Tensor<R>::shape_string(a->value.shape()) + " vs " +
                         Tensor<R>::shape_string(b->value.shape()));
  Tensor<R> out = a->value;
  const R* bd = b->value.data();
  R* od = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) od[i] += bd[i];
  return make_op<R>(std::move(out), {a, b}, [](Variable<R>& self) {
    for (int k = 0; k < 2; ++k) {
      auto& p = *self.parents[k];
      if (!p.requires_grad) continue;
      auto& g = p.ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename R>
Var<R> sub(const Var<R>& a, const Var<R>& b) {
  if (!a->value.shape_equals(b->value))
    throw DimensionError("sub: shapes " + Tensor<R>::shape_string(a->value.shape()) + " vs " +
                         Tensor<R>::shape_string(b->value.shape()));
  Tensor<R> out = a->value;
  const R* bd = b->value.data();
  R* od = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) od[i] -= bd[i];
  return make_op<R>(std::move(out), {a, b}, [](Variable<R>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename R>
Var<R> hadamard(const Var<R>& a, const Var<R>& b) {
  if (!a->value.shape_equals(b->value))
    throw DimensionError("hadamard: shapes " + Tensor<R>::shape_string(a->value.shape()) + " vs " +
                         Tensor<R>::shape_string(b->value.shape()));
  Tensor<R> out = a->value;
  const R* bd = b->value.data();
  R* od = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) od[i] *= bd[i];
  return make_op<R>(std::move(out), {a, b}, [](Variable<R>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename R>
Var<R> scale(const Var<R>& a, R c) {
  Tensor<R> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
  return make_op<R>(std::move(out), {a}, [c](Variable<R>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += c * self.grad[i];
  });
}

template <typename R>
Var<R> relu(const Var<R>& a) {
  Tensor<R> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > R(0) ? out[i] : R(0);
  return make_op<R>(std::move(out), {a}, [](Variable<R>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i)
      if (p.value[i] > R(0)) g[i] += self.grad[i];
  });
}

template <typename R>
Var<R> tanh_op(const Var<R>& a) {
  Tensor<R> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
  return make_op<R>(std::move(out), {a}, [](Variable<R>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) {
      R y = self.value[i];
      g[i] += (R(1) - y * y) * self.grad[i];
    }
  });
}

template <typename R>
Var<R> square(const Var<R>& a) {
  Tensor<R> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= out[i];
  return make_op<R>(std::move(out), {a}, [](Variable<R>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += R(2) * p.value[i] * self.grad[i];
  });
}

template <typename R>
Var<R> abs_op(const Var<R>& a) {
  Tensor<R> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::abs(out[i]);
  return make_op<R>(std::move(out), {a}, [](Variable<R>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) {
      // subgradient 0 at the kink
      R x = p.value[i];
      if (x > R(0))
        g[i] += self.grad[i];
      else if (x < R(0))
        g[i] -= self.grad[i];
    }
  });
}

template <typename R>
Var<R> log_op(const Var<R>& a) {
  Tensor<R> out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) {
    if (out[i] <= R(0)) throw NumericError("log of non-positive value");
    out[i] = std::log(out[i]);
  }
  return make_op<R>(std::move(out), {a}, [](Variable<R>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] / p.value[i];
  });
}

// ---- shape ops ----

template <typename R>
Var<R> reshape(const Var<R>& a, std::vector<int> shape) {
  Tensor<R> out = a->value.reshaped(shape);
  return make_op<R>(std::move(out), {a}, [](Variable<R>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

template <typename R>
Var<R> transpose(const Var<R>& a) {
  return make_op<R>(transpose_val(a->value), {a}, [](Variable<R>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    int rows = self.value.rows(), cols = self.value.cols();
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) g.at(j, i) += self.grad.at(i, j);
  });
}

template <typename R>
Var<R> concat_rows(const std::vector<Var<R>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: empty input");
  int cols = parts[0]->value.cols();
  int rows = 0;
  for (const auto& p : parts) {
    if (p->value.cols() != cols) throw DimensionError("concat_rows: column counts differ");
    rows += p->value.rows();
  }
  Tensor<R> out({rows, cols});
  int r = 0;
  for (const auto& p : parts) {
    std::copy(p->value.data(), p->value.data() + p->value.numel(), out.data() + static_cast<int64_t>(r) * cols);
    r += p->value.rows();
  }
  return make_op<R>(std::move(out), parts, [](Variable<R>& self) {
    int cols = self.value.cols();
    int r = 0;
    for (auto& pp : self.parents) {
      auto& p = *pp;
      int n = p.value.rows();
      if (p.requires_grad) {
        auto& g = p.ensure_grad();
        const R* src = self.grad.data() + static_cast<int64_t>(r) * cols;
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += src[i];
      }
      r += n;
    }
  });
}

template <typename R>
Var<R> slice_rows(const Var<R>& a, int r0, int r1) {
  int rows = a->value.rows(), cols = a->value.cols();
  if (r0 < 0 || r1 > rows || r0 >= r1)
    throw ContractError("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) + ") out of " +
                        std::to_string(rows) + " rows");
  Tensor<R> out({r1 - r0, cols});
  std::copy(a->value.data() + static_cast<int64_t>(r0) * cols, a->value.data() + static_cast<int64_t>(r1) * cols,
            out.data());
  return make_op<R>(std::move(out), {a}, [r0](Variable<R>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    int cols = self.value.cols();
    R* dst = g.data() + static_cast<int64_t>(r0) * cols;
    for (int64_t i = 0; i < self.grad.numel(); ++i) dst[i] += self.grad[i];
  });
}

template <typename R>
Var<R> slice_cols(const Var<R>& a, int c0, int c1) {
  int rows = a->value.rows(), cols = a->value.cols();
  if (c0 < 0 || c1 > cols || c0 >= c1) throw ContractError("slice_cols: bad column range");
  Tensor<R> out({rows, c1 - c0});
  for (int i = 0; i < rows; ++i)
    std::copy(a->value.data() + static_cast<int64_t>(i) * cols + c0, a->value.data() + static_cast<int64_t>(i) * cols + c1,
              out.data() + static_cast<int64_t>(i) * (c1 - c0));
  return make_op<R>(std::move(out), {a}, [c0](Variable<R>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    int rows = self.value.rows(), w = self.value.cols(), cols = p.value.cols();
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < w; ++j) g[static_cast<int64_t>(i) * cols + c0 + j] += self.grad.at(i, j);
  });
}

template <typename R>
Var<R> concat_cols(const std::vector<Var<R>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: empty input");
  int rows = parts[0]->value.rows();
  int cols = 0;
  for (const auto& p : parts) {
    if (p->value.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    cols += p->value.cols();
  }
  Tensor<R> out({rows, cols});
  int c = 0;
  for (const auto& p : parts) {
    int w = p->value.cols();
    for (int i = 0; i < rows; ++i)
      std::copy(p->value.data() + static_cast<int64_t>(i) * w, p->value.data() + static_cast<int64_t>(i) * w + w,
                out.data() + static_cast<int64_t>(i) * cols + c);
    c += w;
  }
  return make_op<R>(std::move(out), parts, [](Variable<R>& self) {
    int rows = self.value.rows(), cols = self.value.cols();
    int c = 0;
    for (auto& pp : self.parents) {
      auto& p = *pp;
      int w = p.value.cols();
      if (p.requires_grad) {
        auto& g = p.ensure_grad();
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < w; ++j) g.at(i, j) += self.grad[static_cast<int64_t>(i) * cols + c + j];
      }
      c += w;
    }
  });
}

// ---- linear algebra ----

template <typename R>
Var<R> matmul(const Var<R>& a, const Var<R>& b) {
  Tensor<R> out = matmul_val(a->value, b->value);
  return make_op<R>(std::move(out), {a, b}, [](Variable<R>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) gemm_acc(pa.ensure_grad(), self.grad, pb.value, false, true);
    if (pb.requires_grad) gemm_acc(pb.ensure_grad(), pa.value, self.grad, true, false);
  });
}

// a: [n,d], b: [d] broadcast over rows.
template <typename R>
Var<R> add_rowvec(const Var<R>& a, const Var<R>& b) {
  if (a->value.ndim() != 2 || b->value.ndim() != 1 || a->value.cols() != b->value.dim(0))
    throw DimensionError("add_rowvec: need [n,d] + [d], got " + Tensor<R>::shape_string(a->value.shape()) + " + " +
                         Tensor<R>::shape_string(b->value.shape()));
  Tensor<R> out = a->value;
  int rows = out.rows(), cols = out.cols();
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out.at(i, j) += b->value[j];
  return make_op<R>(std::move(out), {a, b}, [](Variable<R>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    int rows = self.value.rows(), cols = self.value.cols();
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) g[j] += self.grad.at(i, j);
    }
  });
}

// ---- rowwise nonlinearities ----

namespace detail {
template <typename R>
std::pair<int, int> row_view(const Tensor<R>& t, const char* what) {
  if (t.ndim() == 1) return {1, t.dim(0)};
  if (t.ndim() == 2) return {t.dim(0), t.dim(1)};
  throw DimensionError(std::string(what) + ": rank must be 1 or 2, got " + Tensor<R>::shape_string(t.shape()));
}
}  // namespace detail

// Softmax along `axis` (default last). Rank-1 input: one distribution.
template <typename R>
Var<R> softmax(const Var<R>& a, int axis = -1) {
  if (a->value.ndim() == 2 && (axis == 0)) return transpose(softmax(transpose(a), -1));
  if (axis != -1 && !(a->value.ndim() == 2 && axis == 1) && !(a->value.ndim() == 1 && axis == 0))
    throw ContractError("softmax: unsupported axis " + std::to_string(axis));
  auto [rows, cols] = detail::row_view(a->value, "softmax");
  if (cols == 0) throw ContractError("softmax: empty axis");
  Tensor<R> out = a->value;
  R* od = out.data();
  for (int i = 0; i < rows; ++i) {
    R* row = od + static_cast<int64_t>(i) * cols;
    R mx = row[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    R sum = R(0);
    for (int j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int j = 0; j < cols; ++j) row[j] /= sum;
  }
  return make_op<R>(std::move(out), {a}, [](Variable<R>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto [rows, cols] = detail::row_view(self.value, "softmax");
    auto& g = p.ensure_grad();
    for (int i = 0; i < rows; ++i) {
      const R* y = self.value.data() + static_cast<int64_t>(i) * cols;
      const R* up = self.grad.data() + static_cast<int64_t>(i) * cols;
      R dot = R(0);
      for (int j = 0; j < cols; ++j) dot += up[j] * y[j];
      R* gd = g.data() + static_cast<int64_t>(i) * cols;
      for (int j = 0; j < cols; ++j) gd[j] += y[j] * (up[j] - dot);
    }
  });
}

// Per-row layernorm without affine terms; epsilon per the numeric contract.
template <typename R>
Var<R> layernorm_rows(const Var<R>& a, R eps = R(1e-5)) {
  auto [rows, cols] = detail::row_view(a->value, "layernorm");
  if (cols == 0) throw ContractError("layernorm: empty row");
  Tensor<R> out = a->value;
  Tensor<R> inv_std({rows});
  for (int i = 0; i < rows; ++i) {
    R* row = out.data() + static_cast<int64_t>(i) * cols;
    R mean = R(0);
    for (int j = 0; j < cols; ++j) mean += row[j];
    mean /= static_cast<R>(cols);
    R var = R(0);
    for (int j = 0; j < cols; ++j) {
      R d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<R>(cols);
    R is = R(1) / std::sqrt(var + eps);
    inv_std[i] = is;
    for (int j = 0; j < cols; ++j) row[j] = (row[j] - mean) * is;
  }
  return make_op<R>(std::move(out), {a}, [inv_std = std::move(inv_std)](Variable<R>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto [rows, cols] = detail::row_view(self.value, "layernorm");
    auto& g = p.ensure_grad();
    R n = static_cast<R>(cols);
    for (int i = 0; i < rows; ++i) {
      const R* y = self.value.data() + static_cast<int64_t>(i) * cols;
      const R* up = self.grad.data() + static_cast<int64_t>(i) * cols;
      R gsum = R(0), gysum = R(0);
      for (int j = 0; j < cols; ++j) {
        gsum += up[j];
        gysum += up[j] * y[j];
      }
      R* gd = g.data() + static_cast<int64_t>(i) * cols;
      R is = inv_std[i];
      for (int j = 0; j < cols; ++j) gd[j] += is * (up[j] - gsum / n - y[j] * gysum / n);
    }
  });
}

// Rows scaled to unit L2 norm; zero rows are a numeric error.
template <typename R>
Var<R> normalize_rows(const Var<R>& a) {
  auto [rows, cols] = detail::row_view(a->value, "normalize");
  Tensor<R> out = a->value;
  Tensor<R> inv_norm({rows});
  for (int i = 0; i < rows; ++i) {
    R* row = out.data() + static_cast<int64_t>(i) * cols;
    R sq = R(0);
    for (int j = 0; j < cols; ++j) sq += row[j] * row[j];
    if (sq == R(0)) throw NumericError("normalize: zero-norm row " + std::to_string(i));
    R is = R(1) / std::sqrt(sq);
    inv_norm[i] = is;
    for (int j = 0; j < cols; ++j) row[j] *= is;
  }
  return make_op<R>(std::move(out), {a}, [inv_norm = std::move(inv_norm)](Variable<R>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto [rows, cols] = detail::row_view(self.value, "normalize");
    auto& g = p.ensure_grad();
    for (int i = 0; i < rows; ++i) {
      const R* y = self.value.data() + static_cast<int64_t>(i) * cols;
      const R* up = self.grad.data() + static_cast<int64_t>(i) * cols;
      R dot = R(0);
      for (int j = 0; j < cols; ++j) dot += up[j] * y[j];
      R* gd = g.data() + static_cast<int64_t>(i) * cols;
      for (int j = 0; j < cols; ++j) gd[j] += inv_norm[i] * (up[j] - dot * y[j]);
    }
  });
}

// ---- reductions and scalars ----

template <typename R>
Var<R> sum_all(const Var<R>& a) {
  R s = R(0);
  for (int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
  return make_op<R>(Tensor<R>::scalar(s), {a}, [](Variable<R>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    R up = self.grad[0];
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += up;
  });
}

template <typename R>
Var<R> mean_all(const Var<R>& a) {
  if (a->value.numel() == 0) throw ContractError("mean of empty tensor");
  R s = R(0);
  for (int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
  s /= static_cast<R>(a->value.numel());
  return make_op<R>(Tensor<R>::scalar(s), {a}, [](Variable<R>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    R up = self.grad[0] / static_cast<R>(g.numel());
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += up;
  });
}

template <typename R>
Var<R> mean_axis0(const Var<R>& a) {
  int rows = a->value.rows(), cols = a->value.cols();
  if (rows == 0) throw ContractError("mean over zero rows");
  Tensor<R> out({cols});
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out[j] += a->value.at(i, j);
  for (int j = 0; j < cols; ++j) out[j] /= static_cast<R>(rows);
  return make_op<R>(std::move(out), {a}, [](Variable<R>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    int rows = p.value.rows(), cols = p.value.cols();
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) g.at(i, j) += self.grad[j] / static_cast<R>(rows);
  });
}

template <typename R>
Var<R> pick(const Var<R>& a, int64_t index) {
  if (index < 0 || index >= a->value.numel())
    throw ContractError("pick: index " + std::to_string(index) + " out of " + std::to_string(a->value.numel()));
  return make_op<R>(Tensor<R>::scalar(a->value[index]), {a}, [index](Variable<R>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad()[index] += self.grad[0];
  });
}

template <typename R>
Var<R> stack_scalars(const std::vector<Var<R>>& xs) {
  if (xs.empty()) throw ContractError("stack_scalars: empty input");
  Tensor<R> out({static_cast<int>(xs.size())});
  for (size_t i = 0; i < xs.size(); ++i) {
    if (xs[i]->value.numel() != 1) throw DimensionError("stack_scalars: element " + std::to_string(i) + " not scalar");
    out[static_cast<int64_t>(i)] = xs[i]->value[0];
  }
  return make_op<R>(std::move(out), xs, [](Variable<R>& self) {
    for (size_t i = 0; i < self.parents.size(); ++i) {
      auto& p = *self.parents[i];
      if (p.requires_grad) p.ensure_grad()[0] += self.grad[static_cast<int64_t>(i)];
    }
  });
}

// cos(a,b) for rank-1 vectors; scalar output.
template <typename R>
Var<R> cosine_similarity(const Var<R>& a, const Var<R>& b) {
  if (a->value.ndim() != 1 || b->value.ndim() != 1 || a->value.dim(0) != b->value.dim(0))
    throw DimensionError("cosine_similarity: need equal-length vectors");
  R na = R(0), nb = R(0), dot = R(0);
  for (int64_t i = 0; i < a->value.numel(); ++i) {
    na += a->value[i] * a->value[i];
    nb += b->value[i] * b->value[i];
    dot += a->value[i] * b->value[i];
  }
  if (na == R(0) || nb == R(0)) throw NumericError("cosine_similarity: zero-norm input");
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  R c = dot / (na * nb);
  return make_op<R>(Tensor<R>::scalar(c), {a, b}, [na, nb, c](Variable<R>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    R up = self.grad[0];
    for (int64_t i = 0; i < pa.value.numel(); ++i) {
      R av = pa.value[i], bv = pb.value[i];
      if (pa.requires_grad) pa.ensure_grad()[i] += up * (bv / (na * nb) - c * av / (na * na));
      if (pb.requires_grad) pb.ensure_grad()[i] += up * (av / (na * nb) - c * bv / (nb * nb));
    }
  });
}

// Numerically stable -log softmax(logits)[index]; logits rank-1.
template <typename R>
Var<R> cross_entropy_logits(const Var<R>& logits, int index) {
  if (logits->value.ndim() != 1) throw DimensionError("cross_entropy_logits: logits must be rank-1");
  int n = logits->value.dim(0);
  if (index < 0 || index >= n) throw ContractError("cross_entropy_logits: class index " + std::to_string(index));
  const R* x = logits->value.data();
  R mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  R sum = R(0);
  for (int i = 0; i < n; ++i) sum += std::exp(x[i] - mx);
  R loss = std::log(sum) + mx - x[index];
  return make_op<R>(Tensor<R>::scalar(loss), {logits}, [index, mx, sum](Variable<R>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    R up = self.grad[0];
    int n = p.value.dim(0);
    for (int i = 0; i < n; ++i) {
      R soft = std::exp(p.value[i] - mx) / sum;
      g[i] += up * (soft - (i == index ? R(1) : R(0)));
    }
  });
}

// ---- backward ----

template <typename R>
void backward(const Var<R>& loss) {
  if (loss->value.numel() != 1) throw ContractError("backward: loss must be a scalar, got " +
                                                    Tensor<R>::shape_string(loss->value.shape()));
  if (!loss->requires_grad) return;  // nothing tracked anywhere below

  std::vector<Variable<R>*> topo;
  std::unordered_set<const Variable<R>*> seen;
  std::vector<std::pair<Variable<R>*, size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& frame = stack.back();
    Variable<R>* node = frame.first;
    if (frame.second < node->parents.size()) {
      Variable<R>* p = node->parents[frame.second++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  // Intermediates restart from zero on every call; leaf grads accumulate.
  for (auto* n : topo) {
    if (!n->is_leaf) {
      n->ensure_grad();
      n->grad.fill(R(0));
    }
  }
  if (loss->is_leaf)
    loss->ensure_grad()[0] += R(1);
  else
    loss->grad[0] = R(1);

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Variable<R>* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

template <typename R>
void zero_grad(const Var<R>& v) {
  if (!v->grad.empty()) v->grad.fill(R(0));
}

}  // namespace palign

#pragma once

// Dense tensors with reverse-mode automatic differentiation on a recording
// tape. Tensors are shared handles; a Graph owns the tape for one forward
// pass. Ops append entries in creation order, which is already topological,
// so backward() is a single reverse sweep that touches each node once.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "timesiam/common.hpp"

namespace timesiam {

template <class S>
struct TensorImpl {
  std::vector<int> dims;
  std::vector<S> value;
  std::vector<S> grad;  // allocated lazily, same length as value
  bool requires_grad = false;
  bool on_tape = false;  // produced by a recorded op

  size_t count() const {
    size_t n = 1;
    for (int d : dims) n *= static_cast<size_t>(d);
    return n;
  }
  bool needs_grad() const { return requires_grad || on_tape; }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

template <class S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> dims, bool requires_grad = false) {
    auto impl = std::make_shared<TensorImpl<S>>();
    validate_dims(dims);
    impl->dims = std::move(dims);
    impl->value.assign(impl->count(), S(0));
    impl->requires_grad = requires_grad;
    if (requires_grad) impl->ensure_grad();
    return Tensor(std::move(impl));
  }

  static Tensor from(std::vector<int> dims, std::vector<S> values,
                     bool requires_grad = false) {
    auto impl = std::make_shared<TensorImpl<S>>();
    validate_dims(dims);
    impl->dims = std::move(dims);
    size_t n = 1;
    for (int d : impl->dims) n *= static_cast<size_t>(d);
    if (values.size() != n)
      throw ShapeError("Tensor::from: value count does not match dims");
    impl->value = std::move(values);
    impl->requires_grad = requires_grad;
    if (requires_grad) impl->ensure_grad();
    return Tensor(std::move(impl));
  }

  static Tensor scalar(S v) { return from({1, 1}, {v}); }

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& dims() const { return impl_->dims; }
  size_t size() const { return impl_->count(); }

  int rows() const { return impl_->dims.size() == 2 ? impl_->dims[0] : 0; }
  int cols() const { return impl_->dims.size() == 2 ? impl_->dims[1] : 0; }

  S at(int r, int c) const {
    return impl_->value[static_cast<size_t>(r) * cols() + c];
  }
  S& at(int r, int c) {
    return impl_->value[static_cast<size_t>(r) * cols() + c];
  }

  const std::vector<S>& values() const { return impl_->value; }
  std::vector<S>& values() { return impl_->value; }
  const std::vector<S>& grad() const { return impl_->grad; }
  std::vector<S>& grad() { return impl_->grad; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) {
    impl_->requires_grad = on;
    if (on) impl_->ensure_grad();
  }

  void zero_grad() {
    impl_->ensure_grad();
    std::fill(impl_->grad.begin(), impl_->grad.end(), S(0));
  }

  bool all_finite() const {
    for (S v : impl_->value)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  // Identity of the underlying node; used for parameter bookkeeping.
  const TensorImpl<S>* node() const { return impl_.get(); }
  std::shared_ptr<TensorImpl<S>>& impl() { return impl_; }
  const std::shared_ptr<TensorImpl<S>>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl<S>> impl) : impl_(std::move(impl)) {}

  static void validate_dims(const std::vector<int>& dims) {
    if (dims.empty()) throw ShapeError("Tensor: empty dim list");
    for (int d : dims)
      if (d <= 0) throw ShapeError("Tensor: dims must be positive");
  }

  std::shared_ptr<TensorImpl<S>> impl_;
};

// Recording tape plus per-pass context (train/eval mode, dropout stream).
template <class S>
class Graph {
 public:
  Graph() : rng_(0) {}
  explicit Graph(bool training, Rng rng = Rng(0)) : training_(training), rng_(rng) {}

  bool training() const { return training_; }
  Rng& rng() { return rng_; }

  void record(Tensor<S>& out, std::function<void()> backward_fn) {
    out.impl()->on_tape = true;
    out.impl()->ensure_grad();
    entries_.push_back(Entry{out.impl(), std::move(backward_fn)});
  }

  size_t recorded_ops() const { return entries_.size(); }

  // Seeds d(loss) = 1 and sweeps the tape once in reverse. Gradients
  // accumulate into every tensor that requires them; tensors not reachable
  // from the loss keep their zero-initialized gradients.
  void backward(const Tensor<S>& loss) {
    if (!loss.defined() || loss.size() != 1)
      throw ConfigError("backward: loss must be a scalar");
    if (!loss.impl()->on_tape)
      throw ConfigError("backward: loss was not produced on this tape");
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] += S(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward_fn();
  }

 private:
  struct Entry {
    std::shared_ptr<TensorImpl<S>> out;
    std::function<void()> backward_fn;
  };
  bool training_ = false;
  Rng rng_;
  std::vector<Entry> entries_;
};

namespace detail {

template <class S>
std::string shape_str(const Tensor<S>& t) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < t.dims().size(); ++i)
    os << (i ? "x" : "") << t.dims()[i];
  os << "]";
  return os.str();
}

template <class S>
void require_matrix(const Tensor<S>& t, const char* op) {
  if (!t.defined() || t.dims().size() != 2)
    throw ShapeError(std::string(op) + ": expected a 2-D tensor");
}

template <class S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.dims() != b.dims())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) +
                     " vs " + shape_str(b));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Core ops. Each returns a fresh tensor and, when any input needs gradients,
// records a backward rule on the graph.

template <class S>
Tensor<S> matmul(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const int m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2)
    throw ShapeError("matmul: inner dimensions differ " + detail::shape_str(a) +
                     " vs " + detail::shape_str(b));
  Tensor<S> out = Tensor<S>::zeros({m, n});
  const S* pa = a.values().data();
  const S* pb = b.values().data();
  S* pc = out.values().data();
  for (int i = 0; i < m; ++i) {
    for (int l = 0; l < k; ++l) {
      const S av = pa[i * k + l];
      if (av == S(0)) continue;
      const S* brow = pb + static_cast<size_t>(l) * n;
      S* crow = pc + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  if (a.impl()->needs_grad() || b.impl()->needs_grad()) {
    Tensor<S> ac = a, bc = b, oc = out;
    g.record(out, [ac, bc, oc, m, k, n]() mutable {
      const std::vector<S>& go = oc.grad();
      if (ac.impl()->needs_grad()) {
        ac.impl()->ensure_grad();
        S* ga = ac.grad().data();
        const S* pb2 = bc.values().data();
        // dA = dC * B^T
        for (int i = 0; i < m; ++i)
          for (int l = 0; l < k; ++l) {
            S acc = S(0);
            const S* gorow = go.data() + static_cast<size_t>(i) * n;
            const S* brow = pb2 + static_cast<size_t>(l) * n;
            for (int j = 0; j < n; ++j) acc += gorow[j] * brow[j];
            ga[i * k + l] += acc;
          }
      }
      if (bc.impl()->needs_grad()) {
        bc.impl()->ensure_grad();
        S* gb = bc.grad().data();
        const S* pa2 = ac.values().data();
        // dB = A^T * dC
        for (int l = 0; l < k; ++l)
          for (int i = 0; i < m; ++i) {
            const S av = pa2[i * k + l];
            if (av == S(0)) continue;
            const S* gorow = go.data() + static_cast<size_t>(i) * n;
            S* gbrow = gb + static_cast<size_t>(l) * n;
            for (int j = 0; j < n; ++j) gbrow[j] += av * gorow[j];
          }
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> add(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<S> out = Tensor<S>::from(a.dims(), a.values());
  for (size_t i = 0; i < out.size(); ++i) out.values()[i] += b.values()[i];
  if (a.impl()->needs_grad() || b.impl()->needs_grad()) {
    Tensor<S> ac = a, bc = b, oc = out;
    g.record(out, [ac, bc, oc]() mutable {
      const std::vector<S>& go = oc.grad();
      if (ac.impl()->needs_grad()) {
        ac.impl()->ensure_grad();
        for (size_t i = 0; i < go.size(); ++i) ac.grad()[i] += go[i];
      }
      if (bc.impl()->needs_grad()) {
        bc.impl()->ensure_grad();
        for (size_t i = 0; i < go.size(); ++i) bc.grad()[i] += go[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> sub(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<S> out = Tensor<S>::from(a.dims(), a.values());
  for (size_t i = 0; i < out.size(); ++i) out.values()[i] -= b.values()[i];
  if (a.impl()->needs_grad() || b.impl()->needs_grad()) {
    Tensor<S> ac = a, bc = b, oc = out;
    g.record(out, [ac, bc, oc]() mutable {
      const std::vector<S>& go = oc.grad();
      if (ac.impl()->needs_grad()) {
        ac.impl()->ensure_grad();
        for (size_t i = 0; i < go.size(); ++i) ac.grad()[i] += go[i];
      }
      if (bc.impl()->needs_grad()) {
        bc.impl()->ensure_grad();
        for (size_t i = 0; i < go.size(); ++i) bc.grad()[i] -= go[i];
      }
    });
  }
  return out;
}

// Elementwise (Hadamard) product.
template <class S>
Tensor<S> mul(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<S> out = Tensor<S>::from(a.dims(), a.values());
  for (size_t i = 0; i < out.size(); ++i) out.values()[i] *= b.values()[i];
  if (a.impl()->needs_grad() || b.impl()->needs_grad()) {
    Tensor<S> ac = a, bc = b, oc = out;
    g.record(out, [ac, bc, oc]() mutable {
      const std::vector<S>& go = oc.grad();
      if (ac.impl()->needs_grad()) {
        ac.impl()->ensure_grad();
        for (size_t i = 0; i < go.size(); ++i) ac.grad()[i] += go[i] * bc.values()[i];
      }
      if (bc.impl()->needs_grad()) {
        bc.impl()->ensure_grad();
        for (size_t i = 0; i < go.size(); ++i) bc.grad()[i] += go[i] * ac.values()[i];
      }
    });
  }
  return out;
}

// x[m x n] + row[1 x n], broadcast over rows.
template <class S>
Tensor<S> add_row(Graph<S>& g, const Tensor<S>& x, const Tensor<S>& row) {
  detail::require_matrix(x, "add_row");
  detail::require_matrix(row, "add_row");
  if (row.rows() != 1 || row.cols() != x.cols())
    throw ShapeError("add_row: broadcast row must be 1x" + std::to_string(x.cols()));
  Tensor<S> out = Tensor<S>::from(x.dims(), x.values());
  const int m = x.rows(), n = x.cols();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.values()[static_cast<size_t>(i) * n + j] += row.values()[static_cast<size_t>(j)];
  if (x.impl()->needs_grad() || row.impl()->needs_grad()) {
    Tensor<S> xc = x, rc = row, oc = out;
    g.record(out, [xc, rc, oc, m, n]() mutable {
      const std::vector<S>& go = oc.grad();
      if (xc.impl()->needs_grad()) {
        xc.impl()->ensure_grad();
        for (size_t i = 0; i < go.size(); ++i) xc.grad()[i] += go[i];
      }
      if (rc.impl()->needs_grad()) {
        rc.impl()->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) rc.grad()[static_cast<size_t>(j)] += go[static_cast<size_t>(i) * n + j];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> scale(Graph<S>& g, const Tensor<S>& x, S c) {
  Tensor<S> out = Tensor<S>::from(x.dims(), x.values());
  for (S& v : out.values()) v *= c;
  if (x.impl()->needs_grad()) {
    Tensor<S> xc = x, oc = out;
    g.record(out, [xc, oc, c]() mutable {
      xc.impl()->ensure_grad();
      const std::vector<S>& go = oc.grad();
      for (size_t i = 0; i < go.size(); ++i) xc.grad()[i] += c * go[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> transpose(Graph<S>& g, const Tensor<S>& x) {
  detail::require_matrix(x, "transpose");
  const int m = x.rows(), n = x.cols();
  Tensor<S> out = Tensor<S>::zeros({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = x.at(i, j);
  if (x.impl()->needs_grad()) {
    Tensor<S> xc = x, oc = out;
    g.record(out, [xc, oc, m, n]() mutable {
      xc.impl()->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          xc.grad()[static_cast<size_t>(i) * n + j] += oc.grad()[static_cast<size_t>(j) * m + i];
    });
  }
  return out;
}

template <class S>
Tensor<S> reshape(Graph<S>& g, const Tensor<S>& x, std::vector<int> dims) {
  size_t n = 1;
  for (int d : dims) n *= static_cast<size_t>(d);
  if (n != x.size())
    throw ShapeError("reshape: element count mismatch");
  Tensor<S> out = Tensor<S>::from(std::move(dims), x.values());
  if (x.impl()->needs_grad()) {
    Tensor<S> xc = x, oc = out;
    g.record(out, [xc, oc]() mutable {
      xc.impl()->ensure_grad();
      const std::vector<S>& go = oc.grad();
      for (size_t i = 0; i < go.size(); ++i) xc.grad()[i] += go[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> slice_cols(Graph<S>& g, const Tensor<S>& x, int c0, int c1) {
  detail::require_matrix(x, "slice_cols");
  if (c0 < 0 || c1 > x.cols() || c0 >= c1)
    throw ShapeError("slice_cols: bad column range");
  const int m = x.rows(), n = x.cols(), w = c1 - c0;
  Tensor<S> out = Tensor<S>::zeros({m, w});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < w; ++j) out.at(i, j) = x.at(i, c0 + j);
  if (x.impl()->needs_grad()) {
    Tensor<S> xc = x, oc = out;
    g.record(out, [xc, oc, m, n, w, c0]() mutable {
      xc.impl()->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
          xc.grad()[static_cast<size_t>(i) * n + c0 + j] += oc.grad()[static_cast<size_t>(i) * w + j];
    });
  }
  return out;
}

template <class S>
Tensor<S> slice_rows(Graph<S>& g, const Tensor<S>& x, int r0, int r1) {
  detail::require_matrix(x, "slice_rows");
  if (r0 < 0 || r1 > x.rows() || r0 >= r1)
    throw ShapeError("slice_rows: bad row range");
  const int n = x.cols(), h = r1 - r0;
  Tensor<S> out = Tensor<S>::zeros({h, n});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) = x.at(r0 + i, j);
  if (x.impl()->needs_grad()) {
    Tensor<S> xc = x, oc = out;
    g.record(out, [xc, oc, h, n, r0]() mutable {
      xc.impl()->ensure_grad();
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < n; ++j)
          xc.grad()[static_cast<size_t>(r0 + i) * n + j] += oc.grad()[static_cast<size_t>(i) * n + j];
    });
  }
  return out;
}

template <class S>
Tensor<S> concat_cols(Graph<S>& g, const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const int m = parts[0].rows();
  int total = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.rows() != m) throw ShapeError("concat_cols: row counts differ");
    total += p.cols();
  }
  Tensor<S> out = Tensor<S>::zeros({m, total});
  int off = 0;
  for (const auto& p : parts) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < p.cols(); ++j) out.at(i, off + j) = p.at(i, j);
    off += p.cols();
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.impl()->needs_grad();
  if (any) {
    std::vector<Tensor<S>> pc = parts;
    Tensor<S> oc = out;
    g.record(out, [pc, oc, m, total]() mutable {
      int off2 = 0;
      for (auto& p : pc) {
        if (p.impl()->needs_grad()) {
          p.impl()->ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < p.cols(); ++j)
              p.grad()[static_cast<size_t>(i) * p.cols() + j] +=
                  oc.grad()[static_cast<size_t>(i) * total + off2 + j];
        }
        off2 += p.cols();
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> concat_rows(Graph<S>& g, const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const int n = parts[0].cols();
  int total = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_rows");
    if (p.cols() != n) throw ShapeError("concat_rows: column counts differ");
    total += p.rows();
  }
  Tensor<S> out = Tensor<S>::zeros({total, n});
  int off = 0;
  for (const auto& p : parts) {
    for (int i = 0; i < p.rows(); ++i)
      for (int j = 0; j < n; ++j) out.at(off + i, j) = p.at(i, j);
    off += p.rows();
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.impl()->needs_grad();
  if (any) {
    std::vector<Tensor<S>> pc = parts;
    Tensor<S> oc = out;
    g.record(out, [pc, oc, n]() mutable {
      int off2 = 0;
      for (auto& p : pc) {
        if (p.impl()->needs_grad()) {
          p.impl()->ensure_grad();
          for (int i = 0; i < p.rows(); ++i)
            for (int j = 0; j < n; ++j)
              p.grad()[static_cast<size_t>(i) * n + j] +=
                  oc.grad()[static_cast<size_t>(off2 + i) * n + j];
        }
        off2 += p.rows();
      }
    });
  }
  return out;
}

// Row-wise softmax with max subtraction; rows sum to 1 for any finite input.
template <class S>
Tensor<S> softmax_rows(Graph<S>& g, const Tensor<S>& x) {
  detail::require_matrix(x, "softmax_rows");
  const int m = x.rows(), n = x.cols();
  Tensor<S> out = Tensor<S>::zeros({m, n});
  for (int i = 0; i < m; ++i) {
    S mx = x.at(i, 0);
    for (int j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j));
    S total = S(0);
    for (int j = 0; j < n; ++j) {
      S e = std::exp(x.at(i, j) - mx);
      out.at(i, j) = e;
      total += e;
    }
    for (int j = 0; j < n; ++j) out.at(i, j) /= total;
  }
  if (x.impl()->needs_grad()) {
    Tensor<S> xc = x, oc = out;
    g.record(out, [xc, oc, m, n]() mutable {
      xc.impl()->ensure_grad();
      for (int i = 0; i < m; ++i) {
        S dot = S(0);
        for (int j = 0; j < n; ++j) dot += oc.grad()[static_cast<size_t>(i) * n + j] * oc.at(i, j);
        for (int j = 0; j < n; ++j)
          xc.grad()[static_cast<size_t>(i) * n + j] +=
              oc.at(i, j) * (oc.grad()[static_cast<size_t>(i) * n + j] - dot);
      }
    });
  }
  return out;
}

// Row-wise layer norm with affine parameters gamma, beta (1 x D each).
// Population variance; eps keeps the constant-row case at exactly zero.
template <class S>
Tensor<S> layer_norm(Graph<S>& g, const Tensor<S>& x, const Tensor<S>& gamma,
                     const Tensor<S>& beta, S eps = S(1e-5)) {
  detail::require_matrix(x, "layer_norm");
  const int m = x.rows(), n = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n)
    throw ShapeError("layer_norm: gamma/beta must be 1x" + std::to_string(n));
  Tensor<S> out = Tensor<S>::zeros({m, n});
  std::vector<S> xhat(static_cast<size_t>(m) * n);
  std::vector<S> inv_std(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    S mean = S(0);
    for (int j = 0; j < n; ++j) mean += x.at(i, j);
    mean /= S(n);
    S var = S(0);
    for (int j = 0; j < n; ++j) {
      S d = x.at(i, j) - mean;
      var += d * d;
    }
    var /= S(n);
    S inv = S(1) / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = inv;
    for (int j = 0; j < n; ++j) {
      S h = (x.at(i, j) - mean) * inv;
      xhat[static_cast<size_t>(i) * n + j] = h;
      out.at(i, j) = gamma.values()[static_cast<size_t>(j)] * h + beta.values()[static_cast<size_t>(j)];
    }
  }
  if (x.impl()->needs_grad() || gamma.impl()->needs_grad() || beta.impl()->needs_grad()) {
    Tensor<S> xc = x, gc = gamma, bc = beta, oc = out;
    g.record(out, [xc, gc, bc, oc, m, n, xhat = std::move(xhat),
                   inv_std = std::move(inv_std)]() mutable {
      for (int i = 0; i < m; ++i) {
        const S* go = oc.grad().data() + static_cast<size_t>(i) * n;
        const S* xh = xhat.data() + static_cast<size_t>(i) * n;
        if (gc.impl()->needs_grad()) {
          gc.impl()->ensure_grad();
          for (int j = 0; j < n; ++j) gc.grad()[static_cast<size_t>(j)] += go[j] * xh[j];
        }
        if (bc.impl()->needs_grad()) {
          bc.impl()->ensure_grad();
          for (int j = 0; j < n; ++j) bc.grad()[static_cast<size_t>(j)] += go[j];
        }
        if (xc.impl()->needs_grad()) {
          xc.impl()->ensure_grad();
          S mean_dh = S(0), mean_dh_xh = S(0);
          for (int j = 0; j < n; ++j) {
            S dh = go[j] * gc.values()[static_cast<size_t>(j)];
            mean_dh += dh;
            mean_dh_xh += dh * xh[j];
          }
          mean_dh /= S(n);
          mean_dh_xh /= S(n);
          for (int j = 0; j < n; ++j) {
            S dh = go[j] * gc.values()[static_cast<size_t>(j)];
            xc.grad()[static_cast<size_t>(i) * n + j] +=
                inv_std[static_cast<size_t>(i)] * (dh - mean_dh - xh[j] * mean_dh_xh);
          }
        }
      }
    });
  }
  return out;
}

// Exact (erf-based) GELU.
template <class S>
Tensor<S> gelu(Graph<S>& g, const Tensor<S>& x) {
  Tensor<S> out = Tensor<S>::from(x.dims(), x.values());
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  for (S& v : out.values()) {
    double xv = static_cast<double>(v);
    v = static_cast<S>(0.5 * xv * (1.0 + std::erf(xv * kInvSqrt2)));
  }
  if (x.impl()->needs_grad()) {
    Tensor<S> xc = x, oc = out;
    g.record(out, [xc, oc]() mutable {
      xc.impl()->ensure_grad();
      for (size_t i = 0; i < xc.size(); ++i) {
        double xv = static_cast<double>(xc.values()[i]);
        double cdf = 0.5 * (1.0 + std::erf(xv * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * xv * xv);
        xc.grad()[i] += oc.grad()[i] * static_cast<S>(cdf + xv * pdf);
      }
    });
  }
  return out;
}

// Inverted dropout. Identity in eval mode or when p == 0; mask drawn from the
// graph's RNG stream, so a fixed seed reproduces the exact mask.
template <class S>
Tensor<S> dropout(Graph<S>& g, const Tensor<S>& x, double p) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must be in [0, 1)");
  if (!g.training() || p == 0.0) return x;
  Tensor<S> out = Tensor<S>::from(x.dims(), x.values());
  std::vector<S> mask(x.size());
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  for (size_t i = 0; i < mask.size(); ++i) {
    mask[i] = g.rng().uniform() < p ? S(0) : keep_scale;
    out.values()[i] *= mask[i];
  }
  if (x.impl()->needs_grad()) {
    Tensor<S> xc = x, oc = out;
    g.record(out, [xc, oc, mask = std::move(mask)]() mutable {
      xc.impl()->ensure_grad();
      for (size_t i = 0; i < xc.size(); ++i) xc.grad()[i] += oc.grad()[i] * mask[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> sum_all(Graph<S>& g, const Tensor<S>& x) {
  S total = S(0);
  for (S v : x.values()) total += v;
  Tensor<S> out = Tensor<S>::scalar(total);
  if (x.impl()->needs_grad()) {
    Tensor<S> xc = x, oc = out;
    g.record(out, [xc, oc]() mutable {
      xc.impl()->ensure_grad();
      const S go = oc.grad()[0];
      for (size_t i = 0; i < xc.size(); ++i) xc.grad()[i] += go;
    });
  }
  return out;
}

template <class S>
Tensor<S> mean_all(Graph<S>& g, const Tensor<S>& x) {
  Tensor<S> s = sum_all(g, x);
  return scale(g, s, S(1) / static_cast<S>(x.size()));
}

// Mean over rows: [m x n] -> [1 x n].
template <class S>
Tensor<S> mean_rows(Graph<S>& g, const Tensor<S>& x) {
  detail::require_matrix(x, "mean_rows");
  const int m = x.rows(), n = x.cols();
  Tensor<S> out = Tensor<S>::zeros({1, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.values()[static_cast<size_t>(j)] += x.at(i, j);
  for (S& v : out.values()) v /= S(m);
  if (x.impl()->needs_grad()) {
    Tensor<S> xc = x, oc = out;
    g.record(out, [xc, oc, m, n]() mutable {
      xc.impl()->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          xc.grad()[static_cast<size_t>(i) * n + j] += oc.grad()[static_cast<size_t>(j)] / S(m);
    });
  }
  return out;
}

// Mean squared error over all elements; composite, so backward comes for free.
template <class S>
Tensor<S> mse(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b) {
  Tensor<S> d = sub(g, a, b);
  Tensor<S> sq = mul(g, d, d);
  return mean_all(g, sq);
}

// Cross-entropy of a single logit row against an integer label.
template <class S>
Tensor<S> softmax_cross_entropy(Graph<S>& g, const Tensor<S>& logits, int label) {
  detail::require_matrix(logits, "softmax_cross_entropy");
  if (logits.rows() != 1) throw ShapeError("softmax_cross_entropy: expected 1 x K logits");
  const int k = logits.cols();
  if (label < 0 || label >= k)
    throw ConfigError("softmax_cross_entropy: label out of range");
  S mx = logits.values()[0];
  for (int j = 1; j < k; ++j) mx = std::max(mx, logits.values()[static_cast<size_t>(j)]);
  S lse = S(0);
  for (int j = 0; j < k; ++j) lse += std::exp(logits.values()[static_cast<size_t>(j)] - mx);
  lse = std::log(lse) + mx;
  Tensor<S> out = Tensor<S>::scalar(lse - logits.values()[static_cast<size_t>(label)]);
  if (logits.impl()->needs_grad()) {
    Tensor<S> lc = logits, oc = out;
    g.record(out, [lc, oc, label, k, mx, lse]() mutable {
      lc.impl()->ensure_grad();
      const S go = oc.grad()[0];
      for (int j = 0; j < k; ++j) {
        S p = std::exp(lc.values()[static_cast<size_t>(j)] - lse);
        lc.grad()[static_cast<size_t>(j)] += go * (p - (j == label ? S(1) : S(0)));
      }
    });
  }
  return out;
}

}  // namespace timesiam

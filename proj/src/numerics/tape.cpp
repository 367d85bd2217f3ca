#include "masktab/numerics/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

#include "masktab/errors.hpp"
#include "masktab/numerics/functions.hpp"

namespace masktab::num {

namespace {

// Plain loops with a fixed summation order per output entry, so results do
// not depend on buffer alignment.

constexpr std::size_t kBlockRows = 4;
constexpr std::size_t kBlockCols = 8;

// out (m×n) += a (m×k) · b (k×n). Blocked over a 4×8 tile of accumulators;
// every entry still sums over p in order.
void gemm_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + kBlockRows <= m; i += kBlockRows) {
    std::size_t j = 0;
    for (; j + kBlockCols <= n; j += kBlockCols) {
      double acc[kBlockRows][kBlockCols];
      for (std::size_t r = 0; r < kBlockRows; ++r) {
        for (std::size_t c = 0; c < kBlockCols; ++c) acc[r][c] = out[(i + r) * n + j + c];
      }
      for (std::size_t p = 0; p < k; ++p) {
        const double* row = b + p * n + j;
        for (std::size_t r = 0; r < kBlockRows; ++r) {
          const double arp = a[(i + r) * k + p];
          for (std::size_t c = 0; c < kBlockCols; ++c) acc[r][c] += arp * row[c];
        }
      }
      for (std::size_t r = 0; r < kBlockRows; ++r) {
        for (std::size_t c = 0; c < kBlockCols; ++c) out[(i + r) * n + j + c] = acc[r][c];
      }
    }
    if (j < n) {
      for (std::size_t r = i; r < i + kBlockRows; ++r) {
        for (std::size_t p = 0; p < k; ++p) {
          const double arp = a[r * k + p];
          for (std::size_t jj = j; jj < n; ++jj) out[r * n + jj] += arp * b[p * n + jj];
        }
      }
    }
  }
  for (; i < m; ++i) {
    double* o = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* row = b + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += aip * row[j];
    }
  }
}

// out (m×n) += a (m×k) · bᵀ, b is n×k
void gemm_nt(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  gemm_nn(a, bt.data(), out, m, k, n);
}

// out (k×n) += aᵀ · g, a is m×k, g is m×n. Entries sum over i in order.
void gemm_tn(const double* a, const double* g, double* out, std::size_t m, std::size_t k, std::size_t n) {
  std::size_t p = 0;
  for (; p + kBlockRows <= k; p += kBlockRows) {
    std::size_t j = 0;
    for (; j + kBlockCols <= n; j += kBlockCols) {
      double acc[kBlockRows][kBlockCols];
      for (std::size_t r = 0; r < kBlockRows; ++r) {
        for (std::size_t c = 0; c < kBlockCols; ++c) acc[r][c] = out[(p + r) * n + j + c];
      }
      for (std::size_t i = 0; i < m; ++i) {
        const double* gi = g + i * n + j;
        for (std::size_t r = 0; r < kBlockRows; ++r) {
          const double air = a[i * k + p + r];
          for (std::size_t c = 0; c < kBlockCols; ++c) acc[r][c] += air * gi[c];
        }
      }
      for (std::size_t r = 0; r < kBlockRows; ++r) {
        for (std::size_t c = 0; c < kBlockCols; ++c) out[(p + r) * n + j + c] = acc[r][c];
      }
    }
    if (j < n) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t r = p; r < p + kBlockRows; ++r) {
          const double air = a[i * k + r];
          for (std::size_t jj = j; jj < n; ++jj) out[r * n + jj] += air * g[i * n + jj];
        }
      }
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t r = p; r < k; ++r) {
      const double air = a[i * k + r];
      for (std::size_t j = 0; j < n; ++j) out[r * n + j] += air * g[i * n + j];
    }
  }
}

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

Tape& tape_of(Var v) {
  if (v.tape == nullptr) throw ProtocolError("variable is not bound to a tape");
  return *v.tape;
}

void same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ProtocolError("operands live on different tapes");
}

void require_matrix(const Tensor& t, const char* op) {
  require(t.rank() == 2, std::string(op) + ": expected a 2-D tensor, got " + to_string(t.shape));
}

}  // namespace

const Tensor& Var::value() const { return tape_of(*this).value(*this); }

double Var::item() const {
  const Tensor& t = value();
  if (t.size() != 1) throw DimensionError("item() on tensor of shape " + to_string(t.shape));
  return t.values[0];
}

Var Tape::constant(Tensor value) {
  value.validate();
  value.requires_grad = false;
  value.grad.clear();
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::param(Tensor& p) {
  p.validate();
  if (p.grad.size() != p.values.size()) p.grad.assign(p.values.size(), 0.0);
  Node node;
  node.value.shape = p.shape;
  node.value.values = p.values;
  node.param = &p;
  node.needs_grad = true;
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, std::vector<std::uint32_t> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (const std::uint32_t in : inputs) node.needs_grad = node.needs_grad || nodes_[in].needs_grad;
  node.inputs = std::move(inputs);
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

double* Tape::grad_slot(std::uint32_t id) {
  Node& node = nodes_[id];
  if (!node.needs_grad) return nullptr;
  if (node.grad.size() != node.value.size()) node.grad.assign(node.value.size(), 0.0);
  return node.grad.data();
}

void Tape::backward(Var root) {
  if (root.tape != this) throw ProtocolError("backward root belongs to another tape");
  if (nodes_[root.id].value.size() != 1) throw DimensionError("backward root must be a scalar");
  if (!nodes_[root.id].needs_grad) return;
  for (auto& node : nodes_) node.grad.clear();
  nodes_[root.id].grad.assign(1, 1.0);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.needs_grad || node.grad.empty()) continue;
    if (node.param != nullptr) {
      auto& g = node.param->grad;
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += node.grad[j];
    } else if (node.backward) {
      node.backward(*this, static_cast<std::uint32_t>(i));
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
  same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require(x.shape == y.shape, "add: shape mismatch " + to_string(x.shape) + " vs " + to_string(y.shape));
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return tape_of(a).record(std::move(out), {a.id, b.id}, [](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    for (const std::uint32_t in : t.inputs(self)) {
      if (double* d = t.grad_slot(in)) {
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
    }
  });
}

Var sub(Var a, Var b) {
  same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require(x.shape == y.shape, "sub: shape mismatch " + to_string(x.shape) + " vs " + to_string(y.shape));
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return tape_of(a).record(std::move(out), {a.id, b.id}, [](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& in = t.inputs(self);
    if (double* d = t.grad_slot(in[0])) {
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (double* d = t.grad_slot(in[1])) {
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require(x.shape == y.shape, "mul: shape mismatch " + to_string(x.shape) + " vs " + to_string(y.shape));
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return tape_of(a).record(std::move(out), {a.id, b.id}, [](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& in = t.inputs(self);
    const auto& x = t.value(in[0]).values;
    const auto& y = t.value(in[1]).values;
    if (double* d = t.grad_slot(in[0])) {
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i];
    }
    if (double* d = t.grad_slot(in[1])) {
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * x[i];
    }
  });
}

Var scale(Var a, double c) {
  const Tensor& x = a.value();
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * c;
  return tape_of(a).record(std::move(out), {a.id}, [c](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    if (double* d = t.grad_slot(t.inputs(self)[0])) {
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * c;
    }
  });
}

Var add_scalar(Var a, double c) {
  const Tensor& x = a.value();
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + c;
  return tape_of(a).record(std::move(out), {a.id}, [](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    if (double* d = t.grad_slot(t.inputs(self)[0])) {
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

Var add_row(Var x, Var b) {
  same_tape(x, b);
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  require_matrix(xv, "add_row");
  const std::size_t m = xv.shape[0], n = xv.shape[1];
  require(bv.size() == n, "add_row: bias length " + std::to_string(bv.size()) + " != " + std::to_string(n));
  Tensor out(xv.shape);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
  }
  return tape_of(x).record(std::move(out), {x.id, b.id}, [m, n](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& in = t.inputs(self);
    if (double* d = t.grad_slot(in[0])) {
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (double* d = t.grad_slot(in[1])) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) d[j] += g[i * n + j];
      }
    }
  });
}

Var scale_rows(Var x, Var s) {
  same_tape(x, s);
  const Tensor& xv = x.value();
  const Tensor& sv = s.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  require(sv.size() == m, "scale_rows: " + std::to_string(sv.size()) + " scales for " + std::to_string(m) + " rows");
  Tensor out(xv.shape);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] * sv[i];
  }
  return tape_of(x).record(std::move(out), {x.id, s.id}, [m, n](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& in = t.inputs(self);
    const auto& xv = t.value(in[0]).values;
    const auto& sv = t.value(in[1]).values;
    if (double* d = t.grad_slot(in[0])) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) d[i * n + j] += g[i * n + j] * sv[i];
      }
    }
    if (double* d = t.grad_slot(in[1])) {
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * xv[i * n + j];
        d[i] += acc;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout
// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const std::size_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
  require(bv.shape[0] == k, "matmul: inner dimensions differ " + to_string(av.shape) + " x " + to_string(bv.shape));
  Tensor out({m, n});
  gemm_nn(av.values.data(), bv.values.data(), out.values.data(), m, k, n);
  return tape_of(a).record(std::move(out), {a.id, b.id}, [m, k, n](Tape& t, std::uint32_t self) {
    const auto& in = t.inputs(self);
    const double* g = t.grad(self).data();
    if (double* d = t.grad_slot(in[0])) gemm_nt(g, t.value(in[1]).values.data(), d, m, n, k);
    if (double* d = t.grad_slot(in[1])) gemm_tn(t.value(in[0]).values.data(), g, d, m, k, n);
  });
}

Var matmul_nt(Var a, Var b) {
  same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul_nt");
  require_matrix(bv, "matmul_nt");
  const std::size_t m = av.shape[0], k = av.shape[1], n = bv.shape[0];
  require(bv.shape[1] == k,
          "matmul_nt: inner dimensions differ " + to_string(av.shape) + " x " + to_string(bv.shape) + "^T");
  Tensor out({m, n});
  gemm_nt(av.values.data(), bv.values.data(), out.values.data(), m, k, n);
  return tape_of(a).record(std::move(out), {a.id, b.id}, [m, k, n](Tape& t, std::uint32_t self) {
    const auto& in = t.inputs(self);
    const double* g = t.grad(self).data();
    if (double* d = t.grad_slot(in[0])) gemm_nn(g, t.value(in[1]).values.data(), d, m, n, k);
    if (double* d = t.grad_slot(in[1])) gemm_tn(g, t.value(in[0]).values.data(), d, m, n, k);
  });
}

Var reshape(Var x, Shape shape) {
  const Tensor& xv = x.value();
  require(numel(shape) == xv.size(), "reshape: " + to_string(xv.shape) + " -> " + to_string(shape));
  Tensor out(std::move(shape), xv.values);
  return tape_of(x).record(std::move(out), {x.id}, [](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    if (double* d = t.grad_slot(t.inputs(self)[0])) {
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

Var gather_rows(Var x, std::span<const std::size_t> index) {
  const Tensor& xv = x.value();
  require(xv.rank() >= 1, "gather_rows: scalar input");
  const std::size_t rows = xv.rows(), n = xv.cols();
  Shape shape = xv.shape;
  shape[0] = index.size();
  Tensor out(shape);
  for (std::size_t r = 0; r < index.size(); ++r) {
    require(index[r] < rows, "gather_rows: index " + std::to_string(index[r]) + " out of range " + std::to_string(rows));
    std::copy_n(xv.values.begin() + static_cast<std::ptrdiff_t>(index[r] * n), n,
                out.values.begin() + static_cast<std::ptrdiff_t>(r * n));
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(index.begin(), index.end());
  return tape_of(x).record(std::move(out), {x.id}, [idx, n](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    if (double* d = t.grad_slot(t.inputs(self)[0])) {
      for (std::size_t r = 0; r < idx->size(); ++r) {
        const std::size_t src = (*idx)[r] * n;
        for (std::size_t j = 0; j < n; ++j) d[src + j] += g[r * n + j];
      }
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  Tape& tape = tape_of(parts[0]);
  const Tensor& first = parts[0].value();
  require(first.rank() >= 1, "concat_rows: scalar input");
  Shape tail(first.shape.begin() + 1, first.shape.end());
  std::size_t total_rows = 0;
  std::vector<std::uint32_t> ids;
  for (const Var p : parts) {
    same_tape(parts[0], p);
    const Tensor& v = p.value();
    require(v.rank() == first.rank() && Shape(v.shape.begin() + 1, v.shape.end()) == tail,
            "concat_rows: trailing shapes differ");
    total_rows += v.shape[0];
    ids.push_back(p.id);
  }
  Shape shape = first.shape;
  shape[0] = total_rows;
  Tensor out(shape);
  std::size_t offset = 0;
  for (const Var p : parts) {
    const auto& v = p.value().values;
    std::copy(v.begin(), v.end(), out.values.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += v.size();
  }
  return tape.record(std::move(out), std::move(ids), [](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    std::size_t offset = 0;
    for (const std::uint32_t in : t.inputs(self)) {
      const std::size_t n = t.value(in).size();
      if (double* d = t.grad_slot(in)) {
        for (std::size_t i = 0; i < n; ++i) d[i] += g[offset + i];
      }
      offset += n;
    }
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  require_matrix(xv, "slice_cols");
  const std::size_t m = xv.shape[0], n = xv.shape[1];
  require(begin < end && end <= n, "slice_cols: bad range");
  const std::size_t w = end - begin;
  Tensor out({m, w});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = xv[i * n + begin + j];
  }
  return tape_of(x).record(std::move(out), {x.id}, [m, n, w, begin](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    if (double* d = t.grad_slot(t.inputs(self)[0])) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < w; ++j) d[i * n + begin + j] += g[i * w + j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalisation
// ---------------------------------------------------------------------------

Var gelu(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = num::gelu(xv[i]);
  return tape_of(x).record(std::move(out), {x.id}, [](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const std::uint32_t in = t.inputs(self)[0];
    const auto& xv = t.value(in).values;
    if (double* d = t.grad_slot(in)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = xv[i];
        const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        d[i] += g[i] * (cdf + v * pdf);
      }
    }
  });
}

Var sigmoid(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = num::sigmoid(xv[i]);
  return tape_of(x).record(std::move(out), {x.id}, [](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self).values;
    if (double* d = t.grad_slot(t.inputs(self)[0])) {
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i] * (1.0 - y[i]);
    }
  });
}

Var square(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * xv[i];
  return tape_of(x).record(std::move(out), {x.id}, [](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const std::uint32_t in = t.inputs(self)[0];
    const auto& xv = t.value(in).values;
    if (double* d = t.grad_slot(in)) {
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += 2.0 * g[i] * xv[i];
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta) {
  same_tape(x, gamma);
  same_tape(x, beta);
  const Tensor& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  require(n >= 1 && gamma.value().size() == n && beta.value().size() == n,
          "layer_norm: gamma/beta length must equal the row width " + std::to_string(n));
  const auto& gv = gamma.value().values;
  const auto& bv = beta.value().values;
  Tensor out(xv.shape);
  // Normalised rows and inverse std are kept for the backward pass.
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto rstd = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.values.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    const double r = 1.0 / std::sqrt(var + kLayerNormEps);
    (*rstd)[i] = r;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mu) * r;
      (*xhat)[i * n + j] = h;
      out[i * n + j] = gv[j] * h + bv[j];
    }
  }
  return tape_of(x).record(
      std::move(out), {x.id, gamma.id, beta.id}, [m, n, xhat, rstd](Tape& t, std::uint32_t self) {
        const auto& g = t.grad(self);
        const auto& in = t.inputs(self);
        const auto& gv = t.value(in[1]).values;
        if (double* d = t.grad_slot(in[0])) {
          std::vector<double> dh(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              dh[j] = g[i * n + j] * gv[j];
              mean_dh += dh[j];
              mean_dh_h += dh[j] * (*xhat)[i * n + j];
            }
            mean_dh /= static_cast<double>(n);
            mean_dh_h /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              d[i * n + j] += (*rstd)[i] * (dh[j] - mean_dh - (*xhat)[i * n + j] * mean_dh_h);
            }
          }
        }
        if (double* d = t.grad_slot(in[1])) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) d[j] += g[i * n + j] * (*xhat)[i * n + j];
          }
        }
        if (double* d = t.grad_slot(in[2])) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) d[j] += g[i * n + j];
          }
        }
      });
}

Var softmax_rows(Var x) {
  const Tensor& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  require(n >= 1, "softmax_rows: empty rows");
  Tensor out(xv.shape);
  for (std::size_t i = 0; i < m; ++i) {
    const auto row = softmax(std::span<const double>(xv.values.data() + i * n, n));
    std::copy(row.begin(), row.end(), out.values.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return tape_of(x).record(std::move(out), {x.id}, [m, n](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self).values;
    if (double* d = t.grad_slot(t.inputs(self)[0])) {
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
        for (std::size_t j = 0; j < n; ++j) d[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Var sum(Var x) {
  const Tensor& xv = x.value();
  double acc = 0.0;
  for (const double v : xv.values) acc += v;
  return tape_of(x).record(Tensor({}, {acc}), {x.id}, [](Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0];
    const std::uint32_t in = t.inputs(self)[0];
    if (double* d = t.grad_slot(in)) {
      const std::size_t n = t.value(in).size();
      for (std::size_t i = 0; i < n; ++i) d[i] += g;
    }
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  require(n > 0, "mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var sum_axis(Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  require(axis < xv.rank(), "sum_axis: axis " + std::to_string(axis) + " out of range for " + to_string(xv.shape));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xv.shape[i];
  for (std::size_t i = axis + 1; i < xv.rank(); ++i) inner *= xv.shape[i];
  const std::size_t len = xv.shape[axis];
  Shape shape;
  for (std::size_t i = 0; i < xv.rank(); ++i) {
    if (i != axis) shape.push_back(xv.shape[i]);
  }
  Tensor out(shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t a = 0; a < len; ++a) {
      const double* src = xv.values.data() + (o * len + a) * inner;
      double* dst = out.values.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  return tape_of(x).record(std::move(out), {x.id}, [outer, len, inner](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    if (double* d = t.grad_slot(t.inputs(self)[0])) {
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t a = 0; a < len; ++a) {
          for (std::size_t i = 0; i < inner; ++i) d[(o * len + a) * inner + i] += g[o * inner + i];
        }
      }
    }
  });
}

Var mean_axis(Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  require(axis < xv.rank() && xv.shape[axis] > 0, "mean_axis: empty or invalid axis");
  return scale(sum_axis(x, axis), 1.0 / static_cast<double>(xv.shape[axis]));
}

Var dot_rows(Var a, Var b) {
  same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.shape == bv.shape, "dot_rows: shape mismatch " + to_string(av.shape) + " vs " + to_string(bv.shape));
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += av[i * n + j] * bv[i * n + j];
    out[i] = acc;
  }
  return tape_of(a).record(std::move(out), {a.id, b.id}, [m, n](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& in = t.inputs(self);
    const auto& av = t.value(in[0]).values;
    const auto& bv = t.value(in[1]).values;
    if (double* d = t.grad_slot(in[0])) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) d[i * n + j] += g[i] * bv[i * n + j];
      }
    }
    if (double* d = t.grad_slot(in[1])) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) d[i * n + j] += g[i] * av[i * n + j];
      }
    }
  });
}

Var weighted_sum(Var x, std::span<const double> weights) {
  const Tensor& xv = x.value();
  require(weights.size() == xv.size(), "weighted_sum: weight count mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) acc += weights[i] * xv[i];
  auto w = std::make_shared<std::vector<double>>(weights.begin(), weights.end());
  return tape_of(x).record(Tensor({}, {acc}), {x.id}, [w](Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0];
    if (double* d = t.grad_slot(t.inputs(self)[0])) {
      for (std::size_t i = 0; i < w->size(); ++i) d[i] += g * (*w)[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

Var mse(Var pred, Var target) {
  require(pred.value().shape == target.value().shape, "mse: shape mismatch");
  return mean(square(sub(pred, target)));
}

Var bce_with_logits(Var logits, std::span<const double> targets) {
  const Tensor& xv = logits.value();
  require(targets.size() == xv.size(), "bce_with_logits: target count mismatch");
  Tensor out(xv.shape);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double x = xv[i];
    out[i] = std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  auto y = std::make_shared<std::vector<double>>(targets.begin(), targets.end());
  return tape_of(logits).record(std::move(out), {logits.id}, [y](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const std::uint32_t in = t.inputs(self)[0];
    const auto& xv = t.value(in).values;
    if (double* d = t.grad_slot(in)) {
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (num::sigmoid(xv[i]) - (*y)[i]);
    }
  });
}

namespace {

// Shared kernel for full-row and segmented softmax cross-entropy.
Var segmented_ce(Var logits, std::vector<Segment> segs) {
  const Tensor& xv = logits.value();
  require_matrix(xv, "cross_entropy");
  const std::size_t m = xv.shape[0], n = xv.shape[1];
  require(segs.size() == m, "cross_entropy: one target per row required");
  Tensor out({m});
  auto probs = std::make_shared<std::vector<double>>(xv.size(), 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const Segment& s = segs[i];
    require(s.length >= 1 && s.begin + s.length <= n && s.target < s.length,
            "cross_entropy: segment or target out of range at row " + std::to_string(i));
    const auto p = softmax(std::span<const double>(xv.values.data() + i * n + s.begin, s.length));
    std::copy(p.begin(), p.end(), probs->begin() + static_cast<std::ptrdiff_t>(i * n + s.begin));
    const double* row = xv.values.data() + i * n + s.begin;
    const double top = *std::max_element(row, row + s.length);
    double z = 0.0;
    for (std::size_t j = 0; j < s.length; ++j) z += std::exp(row[j] - top);
    out[i] = top + std::log(z) - row[s.target];
  }
  auto seg_ptr = std::make_shared<std::vector<Segment>>(std::move(segs));
  return tape_of(logits).record(std::move(out), {logits.id}, [m, n, probs, seg_ptr](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    if (double* d = t.grad_slot(t.inputs(self)[0])) {
      for (std::size_t i = 0; i < m; ++i) {
        const Segment& s = (*seg_ptr)[i];
        for (std::size_t j = 0; j < s.length; ++j) {
          const std::size_t c = i * n + s.begin + j;
          d[c] += g[i] * ((*probs)[c] - (j == s.target ? 1.0 : 0.0));
        }
      }
    }
  });
}

}  // namespace

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> targets) {
  const Tensor& xv = logits.value();
  require_matrix(xv, "softmax_cross_entropy");
  std::vector<Segment> segs(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) segs[i] = Segment{0, xv.shape[1], targets[i]};
  return segmented_ce(logits, std::move(segs));
}

Var segment_cross_entropy(Var logits, std::span<const Segment> segments) {
  return segmented_ce(logits, std::vector<Segment>(segments.begin(), segments.end()));
}

Var cosine_similarity(Var a, Var b) {
  same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.shape == bv.shape, "cosine_similarity: shape mismatch " + to_string(av.shape) + " vs " + to_string(bv.shape));
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({m});
  auto norms = std::make_shared<std::vector<double>>(2 * m);
  for (std::size_t i = 0; i < m; ++i) {
    double aa = 0.0, bb = 0.0, ab = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      aa += av[i * n + j] * av[i * n + j];
      bb += bv[i * n + j] * bv[i * n + j];
      ab += av[i * n + j] * bv[i * n + j];
    }
    const double na = std::sqrt(aa), nb = std::sqrt(bb);
    (*norms)[2 * i] = na;
    (*norms)[2 * i + 1] = nb;
    out[i] = (na < 1e-12 || nb < 1e-12) ? 0.0 : ab / (na * nb);
  }
  return tape_of(a).record(std::move(out), {a.id, b.id}, [m, n, norms](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& cos = t.value(self).values;
    const auto& in = t.inputs(self);
    const auto& av = t.value(in[0]).values;
    const auto& bv = t.value(in[1]).values;
    double* da = t.grad_slot(in[0]);
    double* db = t.grad_slot(in[1]);
    for (std::size_t i = 0; i < m; ++i) {
      const double na = (*norms)[2 * i], nb = (*norms)[2 * i + 1];
      if (na < 1e-12 || nb < 1e-12) continue;
      for (std::size_t j = 0; j < n; ++j) {
        const double x = av[i * n + j], y = bv[i * n + j];
        if (da) da[i * n + j] += g[i] * (y / (na * nb) - cos[i] * x / (na * na));
        if (db) db[i * n + j] += g[i] * (x / (na * nb) - cos[i] * y / (nb * nb));
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Attention and expert mixing
// ---------------------------------------------------------------------------

Var attention(Var q, Var k, Var v, std::size_t sequences, std::size_t tokens, std::size_t heads) {
  same_tape(q, k);
  same_tape(q, v);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  require_matrix(qv, "attention");
  require(qv.shape == kv.shape && qv.shape == vv.shape, "attention: q, k, v shapes differ");
  require(qv.shape[0] == sequences * tokens, "attention: row count != sequences * tokens");
  const std::size_t width = qv.shape[1];
  require(heads >= 1 && width % heads == 0, "attention: width not divisible by heads");
  const std::size_t hw = width / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(hw));
  Tensor out(qv.shape);
  // Attention probabilities per (sequence, head), tokens × tokens each.
  auto probs = std::make_shared<std::vector<double>>(sequences * heads * tokens * tokens);
  std::vector<double> scores(tokens);
  for (std::size_t s = 0; s < sequences; ++s) {
    for (std::size_t h = 0; h < heads; ++h) {
      double* p = probs->data() + (s * heads + h) * tokens * tokens;
      for (std::size_t i = 0; i < tokens; ++i) {
        const double* qi = qv.values.data() + (s * tokens + i) * width + h * hw;
        double top = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < tokens; ++j) {
          const double* kj = kv.values.data() + (s * tokens + j) * width + h * hw;
          double acc = 0.0;
          for (std::size_t c = 0; c < hw; ++c) acc += qi[c] * kj[c];
          scores[j] = acc * scale_factor;
          top = std::max(top, scores[j]);
        }
        if (!std::isfinite(top)) throw NumericError("attention: non-finite scores");
        double z = 0.0;
        for (std::size_t j = 0; j < tokens; ++j) {
          scores[j] = std::exp(scores[j] - top);
          z += scores[j];
        }
        double* oi = out.values.data() + (s * tokens + i) * width + h * hw;
        for (std::size_t j = 0; j < tokens; ++j) {
          const double pij = scores[j] / z;
          p[i * tokens + j] = pij;
          const double* vj = vv.values.data() + (s * tokens + j) * width + h * hw;
          for (std::size_t c = 0; c < hw; ++c) oi[c] += pij * vj[c];
        }
      }
    }
  }
  return tape_of(q).record(
      std::move(out), {q.id, k.id, v.id},
      [sequences, tokens, heads, width, hw, scale_factor, probs](Tape& t, std::uint32_t self) {
        const auto& g = t.grad(self);
        const auto& in = t.inputs(self);
        const auto& qv = t.value(in[0]).values;
        const auto& kv = t.value(in[1]).values;
        const auto& vv = t.value(in[2]).values;
        double* dq = t.grad_slot(in[0]);
        double* dk = t.grad_slot(in[1]);
        double* dv = t.grad_slot(in[2]);
        std::vector<double> dp(tokens);
        for (std::size_t s = 0; s < sequences; ++s) {
          for (std::size_t h = 0; h < heads; ++h) {
            const double* p = probs->data() + (s * heads + h) * tokens * tokens;
            for (std::size_t i = 0; i < tokens; ++i) {
              const double* gi = g.data() + (s * tokens + i) * width + h * hw;
              double dot = 0.0;
              for (std::size_t j = 0; j < tokens; ++j) {
                const std::size_t rj = (s * tokens + j) * width + h * hw;
                double acc = 0.0;
                for (std::size_t c = 0; c < hw; ++c) acc += gi[c] * vv[rj + c];
                dp[j] = acc;
                dot += acc * p[i * tokens + j];
                if (dv) {
                  for (std::size_t c = 0; c < hw; ++c) dv[rj + c] += p[i * tokens + j] * gi[c];
                }
              }
              const std::size_t ri = (s * tokens + i) * width + h * hw;
              for (std::size_t j = 0; j < tokens; ++j) {
                const double ds = p[i * tokens + j] * (dp[j] - dot) * scale_factor;
                const std::size_t rj = (s * tokens + j) * width + h * hw;
                if (dq) {
                  for (std::size_t c = 0; c < hw; ++c) dq[ri + c] += ds * kv[rj + c];
                }
                if (dk) {
                  for (std::size_t c = 0; c < hw; ++c) dk[rj + c] += ds * qv[ri + c];
                }
              }
            }
          }
        }
      });
}

Var gated_mixture(Var experts, Var gates, std::size_t n_experts) {
  same_tape(experts, gates);
  const Tensor& ev = experts.value();
  const Tensor& gv = gates.value();
  require_matrix(ev, "gated_mixture");
  require_matrix(gv, "gated_mixture");
  const std::size_t m = ev.shape[0];
  require(n_experts >= 1 && ev.shape[1] % n_experts == 0, "gated_mixture: width not divisible by expert count");
  require(gv.shape[0] == m && gv.shape[1] == n_experts, "gated_mixture: gate shape mismatch");
  const std::size_t w = ev.shape[1] / n_experts;
  Tensor out({m, w});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t e = 0; e < n_experts; ++e) {
      const double ge = gv[i * n_experts + e];
      const double* src = ev.values.data() + i * n_experts * w + e * w;
      for (std::size_t j = 0; j < w; ++j) out[i * w + j] += ge * src[j];
    }
  }
  return tape_of(experts).record(std::move(out), {experts.id, gates.id}, [m, w, n_experts](Tape& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& in = t.inputs(self);
    const auto& ev = t.value(in[0]).values;
    const auto& gv = t.value(in[1]).values;
    double* de = t.grad_slot(in[0]);
    double* dg = t.grad_slot(in[1]);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t e = 0; e < n_experts; ++e) {
        const double ge = gv[i * n_experts + e];
        const std::size_t base = i * n_experts * w + e * w;
        double acc = 0.0;
        for (std::size_t j = 0; j < w; ++j) {
          if (de) de[base + j] += ge * g[i * w + j];
          acc += ev[base + j] * g[i * w + j];
        }
        if (dg) dg[i * n_experts + e] += acc;
      }
    }
  });
}

}  // namespace masktab::num

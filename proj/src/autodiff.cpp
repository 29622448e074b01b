#include "dap/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace dap {

namespace {

using RMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RMat>;
using MMap = Eigen::Map<RMat>;

CMap cmap(const Tensor& t) { return CMap(t.data().data(), t.rows(), t.cols()); }
CMap cmap(std::span<const double> d, std::size_t r, std::size_t c) { return CMap(d.data(), r, c); }
MMap mmap(std::vector<double>& d, std::size_t r, std::size_t c) { return MMap(d.data(), r, c); }

std::string dims(const Tensor& t) { return shape_string(t.shape()); }

void require_rank2(const char* kind, const Tensor& t) {
  if (t.rank() != 2) throw ShapeError(std::string(kind) + ": expected rank-2 operand, got " + dims(t));
}

[[noreturn]] void mismatch(const char* kind, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(kind) + ": incompatible operands " + dims(a) + " and " + dims(b));
}

// Broadcast rule for elementwise binaries: same shape, or b is a single row.
bool row_broadcast(const char* kind, const Tensor& a, const Tensor& b) {
  require_rank2(kind, a);
  require_rank2(kind, b);
  if (a.shape() == b.shape()) return false;
  if (b.rows() == 1 && b.cols() == a.cols()) return true;
  mismatch(kind, a, b);
}

}  // namespace

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const { return tape_->value(index_); }
bool Var::requires_grad() const { return tape_->requires_grad(index_); }
std::span<const double> Var::grad() const { return tape_->grad(index_); }

Var Tape::constant(Tensor value) {
  Node n;
  n.kind = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.kind = "leaf";
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  Node n;
  n.kind = "param";
  n.value = Tensor(p.value.shape(), p.value.storage());
  n.requires_grad = grad_enabled_ && !p.frozen;
  n.param = n.requires_grad ? &p : nullptr;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* kind, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(kind, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Tape::record(const char* kind, Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  Node n;
  n.kind = kind;
  n.value = std::move(value);
  for (const auto& in : inputs) {
    if (in.tape_ != this) throw ContractError(std::string(kind) + ": operand belongs to another tape");
    if (nodes_[in.index_].requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

std::vector<double>& Tape::grad_buffer(std::size_t i) {
  auto& n = nodes_[i];
  if (n.grad.empty()) n.grad.assign(n.value.numel(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (nodes_.empty()) throw ContractError("backward: tape is empty");
  if (loss.tape_ != this) throw ContractError("backward: loss belongs to another tape");
  const auto& lv = nodes_[loss.index_].value;
  if (lv.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got " + shape_string(lv.shape()));
  }
  for (auto& n : nodes_) n.grad.clear();
  if (!nodes_[loss.index_].requires_grad) return;
  grad_buffer(loss.index_)[0] = 1.0;
  for (std::size_t i = loss.index_ + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param != nullptr) n.param->value.accumulate_grad(n.grad);
  }
}

// ---------------------------------------------------------------------------
// Ops

Var matmul(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_rank2("matmul", av);
  require_rank2("matmul", bv);
  if (av.cols() != bv.rows()) mismatch("matmul", av, bv);
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  Tensor out({n, m});
  if (n && m && k) mmap(out.storage(), n, m).noalias() = cmap(av) * cmap(bv);
  const auto ia = a.index(), ib = b.index();
  return a.tape().record("matmul", std::move(out), {a, b}, [=](Tape& t, std::size_t self) {
    auto g = cmap(t.grad(self), n, m);
    if (t.requires_grad(ia) && k) {
      mmap(t.grad_buffer(ia), n, k).noalias() += g * cmap(t.value(ib)).transpose();
    }
    if (t.requires_grad(ib) && k) {
      mmap(t.grad_buffer(ib), k, m).noalias() += cmap(t.value(ia)).transpose() * g;
    }
  });
}

Var matmul_nt(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_rank2("matmul_nt", av);
  require_rank2("matmul_nt", bv);
  if (av.cols() != bv.cols()) mismatch("matmul_nt", av, bv);
  const std::size_t n = av.rows(), k = av.cols(), m = bv.rows();
  Tensor out({n, m});
  if (n && m && k) mmap(out.storage(), n, m).noalias() = cmap(av) * cmap(bv).transpose();
  const auto ia = a.index(), ib = b.index();
  return a.tape().record("matmul_nt", std::move(out), {a, b}, [=](Tape& t, std::size_t self) {
    auto g = cmap(t.grad(self), n, m);
    if (t.requires_grad(ia) && k) mmap(t.grad_buffer(ia), n, k).noalias() += g * cmap(t.value(ib));
    if (t.requires_grad(ib) && k) {
      mmap(t.grad_buffer(ib), m, k).noalias() += g.transpose() * cmap(t.value(ia));
    }
  });
}

Var transpose(Var a) {
  const auto& av = a.value();
  require_rank2("transpose", av);
  const std::size_t n = av.rows(), m = av.cols();
  Tensor out({m, n});
  mmap(out.storage(), m, n) = cmap(av).transpose();
  const auto ia = a.index();
  return a.tape().record("transpose", std::move(out), {a}, [=](Tape& t, std::size_t self) {
    mmap(t.grad_buffer(ia), n, m) += cmap(t.grad(self), m, n).transpose();
  });
}

namespace {

template <typename Combine, typename GradA, typename GradB>
Var elementwise_binary(const char* kind, Var a, Var b, Combine combine, GradA grad_a, GradB grad_b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  const bool bcast = row_broadcast(kind, av, bv);
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      out[i] = combine(av[i], bv[bcast ? c : i]);
    }
  }
  const auto ia = a.index(), ib = b.index();
  return a.tape().record(kind, std::move(out), {a, b}, [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    const auto& x = t.value(ia);
    const auto& y = t.value(ib);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad_buffer(ia);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          ga[i] += grad_a(g[i], x[i], y[bcast ? c : i]);
        }
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          gb[bcast ? c : i] += grad_b(g[i], x[i], y[bcast ? c : i]);
        }
    }
  });
}

template <typename F, typename DF>
Var elementwise_unary(const char* kind, Var a, F f, DF df) {
  const auto& av = a.value();
  require_rank2(kind, av);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = f(av[i]);
  const auto ia = a.index();
  return a.tape().record(kind, std::move(out), {a}, [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    const auto& x = t.value(ia);
    const auto& y = t.value(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  return elementwise_binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Var sub(Var a, Var b) {
  return elementwise_binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Var mul(Var a, Var b) {
  return elementwise_binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; }, [](double g, double x, double) { return g * x; });
}

Var scale(Var a, double s) {
  return elementwise_unary(
      "scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var affine(Var a, double s, double c) {
  return elementwise_unary(
      "affine", a, [s, c](double x) { return s * x + c; }, [s](double, double) { return s; });
}

Var gelu(Var x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return elementwise_unary(
      "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [inv_sqrt_2pi](double v, double) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      });
}

Var tanh(Var x) {
  return elementwise_unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var x) {
  return elementwise_unary(
      "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var layernorm(Var x, Var gain, Var bias, double eps) {
  const auto& xv = x.value();
  require_rank2("layernorm", xv);
  const std::size_t rows = xv.rows(), cols = xv.cols();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  if (gv.rank() != 2 || gv.rows() != 1 || gv.cols() != cols) mismatch("layernorm", xv, gv);
  if (bv.rank() != 2 || bv.rows() != 1 || bv.cols() != cols) mismatch("layernorm", xv, bv);
  if (cols == 0) throw ShapeError("layernorm: zero-width rows " + dims(xv));
  Tensor out(xv.shape());
  std::vector<double> xhat(xv.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data().data() + r * cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += row[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (row[c] - mean) * is;
      xhat[r * cols + c] = h;
      out[r * cols + c] = h * gv[c] + bv[c];
    }
  }
  const auto ix = x.index(), ig = gain.index(), ib = bias.index();
  return x.tape().record(
      "layernorm", std::move(out), {x, gain, bias},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        auto g = t.grad(self);
        const auto& gv2 = t.value(ig);
        if (t.requires_grad(ig)) {
          auto& gg = t.grad_buffer(ig);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gg[c] += g[r * cols + c] * xhat[r * cols + c];
        }
        if (t.requires_grad(ib)) {
          auto& gb = t.grad_buffer(ib);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
        }
        if (t.requires_grad(ix)) {
          auto& gx = t.grad_buffer(ix);
          const double n = static_cast<double>(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_d = 0.0, mean_dh = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
              const double d = g[r * cols + c] * gv2[c];
              mean_d += d;
              mean_dh += d * xhat[r * cols + c];
            }
            mean_d /= n;
            mean_dh /= n;
            for (std::size_t c = 0; c < cols; ++c) {
              const double d = g[r * cols + c] * gv2[c];
              gx[r * cols + c] += inv_std[r] * (d - mean_d - xhat[r * cols + c] * mean_dh);
            }
          }
        }
      });
}

std::vector<double> softmax_values(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

Var softmax(Var x) {
  const auto& xv = x.value();
  require_rank2("softmax", xv);
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    auto p = softmax_values(xv.data().subspan(r * cols, cols));
    std::copy(p.begin(), p.end(), out.storage().begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  const auto ix = x.index();
  return x.tape().record("softmax", std::move(out), {x}, [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    const auto& y = t.value(self);
    auto& gx = t.grad_buffer(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        gx[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
      }
    }
  });
}

Var embedding_lookup(Var table, std::span<const int> ids) {
  const auto& tv = table.value();
  require_rank2("embedding_lookup", tv);
  const std::size_t vocab = tv.rows(), cols = tv.cols();
  Tensor out({ids.size(), cols});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
      throw ShapeError("embedding_lookup: id " + std::to_string(ids[r]) + " outside table " + dims(tv));
    }
    std::copy_n(tv.data().begin() + static_cast<std::ptrdiff_t>(ids[r] * cols), cols,
                out.storage().begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  const auto it = table.index();
  std::vector<int> idv(ids.begin(), ids.end());
  return table.tape().record(
      "embedding_lookup", std::move(out), {table}, [=, idv = std::move(idv)](Tape& t, std::size_t self) {
        auto g = t.grad(self);
        auto& gt = t.grad_buffer(it);
        for (std::size_t r = 0; r < idv.size(); ++r)
          for (std::size_t c = 0; c < cols; ++c) gt[idv[r] * cols + c] += g[r * cols + c];
      });
}

Var concat_seq(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_seq: no operands");
  const auto& first = parts[0].value();
  require_rank2("concat_seq", first);
  const std::size_t cols = first.cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_rank2("concat_seq", p.value());
    if (p.value().cols() != cols) mismatch("concat_seq", first, p.value());
    rows += p.value().rows();
  }
  Tensor out({rows, cols});
  std::vector<std::size_t> offsets, indices;
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(),
              out.storage().begin() + static_cast<std::ptrdiff_t>(off));
    offsets.push_back(off);
    indices.push_back(p.index());
    off += p.value().numel();
  }
  return parts[0].tape().record(
      "concat_seq", std::move(out), parts, [=](Tape& t, std::size_t self) {
        auto g = t.grad(self);
        for (std::size_t k = 0; k < indices.size(); ++k) {
          if (!t.requires_grad(indices[k])) continue;
          auto& gp = t.grad_buffer(indices[k]);
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offsets[k] + i];
        }
      });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const auto& first = parts[0].value();
  require_rank2("concat_cols", first);
  const std::size_t rows = first.rows();
  std::size_t cols = 0;
  std::vector<std::size_t> widths, offsets, indices;
  for (const auto& p : parts) {
    require_rank2("concat_cols", p.value());
    if (p.value().rows() != rows) mismatch("concat_cols", first, p.value());
    offsets.push_back(cols);
    widths.push_back(p.value().cols());
    indices.push_back(p.index());
    cols += p.value().cols();
  }
  Tensor out({rows, cols});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) out[r * cols + offsets[k] + c] = pv[r * widths[k] + c];
  }
  return parts[0].tape().record(
      "concat_cols", std::move(out), parts, [=](Tape& t, std::size_t self) {
        auto g = t.grad(self);
        for (std::size_t k = 0; k < indices.size(); ++k) {
          if (!t.requires_grad(indices[k])) continue;
          auto& gp = t.grad_buffer(indices[k]);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < widths[k]; ++c) gp[r * widths[k] + c] += g[r * cols + offsets[k] + c];
        }
      });
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  const auto& xv = x.value();
  require_rank2("slice_rows", xv);
  if (begin + count > xv.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + dims(xv));
  }
  const std::size_t cols = xv.cols();
  Tensor out({count, cols});
  std::copy_n(xv.data().begin() + static_cast<std::ptrdiff_t>(begin * cols), count * cols,
              out.storage().begin());
  const auto ix = x.index();
  return x.tape().record("slice_rows", std::move(out), {x}, [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < count * cols; ++i) gx[begin * cols + i] += g[i];
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  const auto& xv = x.value();
  require_rank2("slice_cols", xv);
  if (begin + count > xv.cols()) {
    throw ShapeError("slice_cols: cols [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + dims(xv));
  }
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor out({rows, count});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < count; ++c) out[r * count + c] = xv[r * cols + begin + c];
  const auto ix = x.index();
  return x.tape().record("slice_cols", std::move(out), {x}, [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto& gx = t.grad_buffer(ix);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < count; ++c) gx[r * cols + begin + c] += g[r * count + c];
  });
}

Var mean_pool(Var x) {
  const auto& xv = x.value();
  require_rank2("mean_pool", xv);
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (rows == 0) throw ShapeError("mean_pool: no rows in " + dims(xv));
  Tensor out({1, cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += xv[r * cols + c];
  for (std::size_t c = 0; c < cols; ++c) out[c] /= static_cast<double>(rows);
  const auto ix = x.index();
  return x.tape().record("mean_pool", std::move(out), {x}, [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto& gx = t.grad_buffer(ix);
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[c] * inv;
  });
}

Var sum(Var x) {
  const auto& xv = x.value();
  double s = 0.0;
  for (double v : xv.data()) s += v;
  const auto ix = x.index();
  return x.tape().record("sum", Tensor({1, 1}, {s}), {x}, [=](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    auto& gx = t.grad_buffer(ix);
    for (auto& v : gx) v += g;
  });
}

Var l2_normalize(Var x, double eps) {
  const auto& xv = x.value();
  require_rank2("l2_normalize", xv);
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor out(xv.shape());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ss += xv[r * cols + c] * xv[r * cols + c];
    norms[r] = std::max(std::sqrt(ss), eps);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] / norms[r];
  }
  const auto ix = x.index();
  return x.tape().record(
      "l2_normalize", std::move(out), {x}, [=, norms = std::move(norms)](Tape& t, std::size_t self) {
        auto g = t.grad(self);
        const auto& y = t.value(self);
        auto& gx = t.grad_buffer(ix);
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c) {
            gx[r * cols + c] += (g[r * cols + c] - y[r * cols + c] * dot) / norms[r];
          }
        }
      });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  const auto& lv = logits.value();
  require_rank2("cross_entropy", lv);
  const std::size_t rows = lv.rows(), cols = lv.cols();
  if (rows == 0 || targets.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " + dims(lv));
  }
  std::vector<double> probs(lv.numel());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= cols) {
      throw ShapeError("cross_entropy: target " + std::to_string(targets[r]) + " outside " +
                       std::to_string(cols) + " classes");
    }
    auto row = lv.data().subspan(r * cols, cols);
    const double mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double v : row) total += std::exp(v - mx);
    const double lse = mx + std::log(total);
    loss += lse - row[targets[r]];
    for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] = std::exp(row[c] - lse);
  }
  loss /= static_cast<double>(rows);
  const auto il = logits.index();
  std::vector<int> tv(targets.begin(), targets.end());
  return logits.tape().record(
      "cross_entropy", Tensor({1, 1}, {loss}), {logits},
      [=, probs = std::move(probs), tv = std::move(tv)](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0] / static_cast<double>(rows);
        auto& gl = t.grad_buffer(il);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) {
            const double onehot = static_cast<int>(c) == tv[r] ? 1.0 : 0.0;
            gl[r * cols + c] += g * (probs[r * cols + c] - onehot);
          }
      });
}

}  // namespace dap

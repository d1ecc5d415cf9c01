#include "consformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "consformer/errors.hpp"

namespace cf::ops {
namespace {

[[noreturn]] void dim_error(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
}

// C[m×n] += A[m×k]·B[k×n]
void mm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
           std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// C[m×n] += A[m×k]·B[n×k]ᵀ
void mm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
           std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// C[m×n] += A[k×m]ᵀ·B[k×n]
void mm_tn(const double* a, const double* b, double* c, std::size_t k, std::size_t m,
           std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = arow[i];
      if (api == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
}

struct MatDims {
  std::size_t batch, m, k, n;
};

// Resolves (batch, m, k, n) for a·b (transpose_b=false) or a·bᵀ.
MatDims mat_dims(const char* op, const Shape& a, const Shape& b, bool transpose_b) {
  if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 3)) dim_error(op, a, b);
  const std::size_t off = a.rank() == 3 ? 1 : 0;
  if (off && a[0] != b[0]) dim_error(op, a, b);
  const std::size_t batch = off ? a[0] : 1;
  const std::size_t m = a[off];
  const std::size_t k = a[off + 1];
  const std::size_t bk = transpose_b ? b[off + 1] : b[off];
  const std::size_t n = transpose_b ? b[off] : b[off + 1];
  if (k != bk) dim_error(op, a, b);
  return {batch, m, k, n};
}

Shape out_shape(const Shape& a, std::size_t m, std::size_t n) {
  if (a.rank() == 3) return Shape{a[0], m, n};
  return Shape{m, n};
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename Fwd, typename Deriv>
Var unary(Var x, Fwd fwd, Deriv deriv) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return x.graph->record(std::move(out), {x.id}, [xid = x.id, deriv](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    const Tensor& xv = g.value(xid);
    const Tensor& yv = g.value(self);
    Tensor* gx = g.grad_buffer(xid);
    for (std::size_t i = 0; i < gy.size(); ++i) (*gx)[i] += gy[i] * deriv(xv[i], yv[i]);
  });
}

Graph& same_graph(Var a, Var b) {
  if (a.graph != b.graph) throw ContractError("operands recorded on different graphs");
  return *a.graph;
}

}  // namespace

Mask::Mask(std::size_t r, std::size_t c, std::vector<std::uint8_t> k)
    : rows(r), cols(c), keep(std::move(k)) {
  if (keep.size() != rows * cols) {
    throw DimensionError("mask: " + std::to_string(keep.size()) + " entries for " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Mask Mask::keys(std::size_t rows, std::span<const std::uint8_t> key_keep) {
  std::vector<std::uint8_t> keep;
  keep.reserve(rows * key_keep.size());
  for (std::size_t i = 0; i < rows; ++i) keep.insert(keep.end(), key_keep.begin(), key_keep.end());
  return Mask(rows, key_keep.size(), std::move(keep));
}

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const MatDims d = mat_dims("matmul", a.shape(), b.shape(), false);
  Tensor out(out_shape(a.shape(), d.m, d.n));
  for (std::size_t h = 0; h < d.batch; ++h) {
    mm_nn(a.value().data().data() + h * d.m * d.k, b.value().data().data() + h * d.k * d.n,
          out.data().data() + h * d.m * d.n, d.m, d.k, d.n);
  }
  return g.record(std::move(out), {a.id, b.id}, [aid = a.id, bid = b.id, d](Graph& g, std::size_t self) {
    const double* gy = g.grad(self).data().data();
    if (Tensor* ga = g.grad_buffer(aid)) {
      for (std::size_t h = 0; h < d.batch; ++h) {
        mm_nt(gy + h * d.m * d.n, g.value(bid).data().data() + h * d.k * d.n,
              ga->data().data() + h * d.m * d.k, d.m, d.n, d.k);
      }
    }
    if (Tensor* gb = g.grad_buffer(bid)) {
      for (std::size_t h = 0; h < d.batch; ++h) {
        mm_tn(g.value(aid).data().data() + h * d.m * d.k, gy + h * d.m * d.n,
              gb->data().data() + h * d.k * d.n, d.m, d.k, d.n);
      }
    }
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const MatDims d = mat_dims("matmul_nt", a.shape(), b.shape(), true);
  Tensor out(out_shape(a.shape(), d.m, d.n));
  for (std::size_t h = 0; h < d.batch; ++h) {
    mm_nt(a.value().data().data() + h * d.m * d.k, b.value().data().data() + h * d.n * d.k,
          out.data().data() + h * d.m * d.n, d.m, d.k, d.n);
  }
  return g.record(std::move(out), {a.id, b.id}, [aid = a.id, bid = b.id, d](Graph& g, std::size_t self) {
    const double* gy = g.grad(self).data().data();
    if (Tensor* ga = g.grad_buffer(aid)) {
      for (std::size_t h = 0; h < d.batch; ++h) {
        mm_nn(gy + h * d.m * d.n, g.value(bid).data().data() + h * d.n * d.k,
              ga->data().data() + h * d.m * d.k, d.m, d.n, d.k);
      }
    }
    if (Tensor* gb = g.grad_buffer(bid)) {
      for (std::size_t h = 0; h < d.batch; ++h) {
        mm_tn(gy + h * d.m * d.n, g.value(aid).data().data() + h * d.m * d.k,
              gb->data().data() + h * d.n * d.k, d.m, d.n, d.k);
      }
    }
  });
}

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b);
  if (!(a.shape() == b.shape())) dim_error("add", a.shape(), b.shape());
  Tensor out = a.value();
  out.accumulate(b.value());
  return g.record(std::move(out), {a.id, b.id}, [aid = a.id, bid = b.id](Graph& g, std::size_t self) {
    if (Tensor* ga = g.grad_buffer(aid)) ga->accumulate(g.grad(self));
    if (Tensor* gb = g.grad_buffer(bid)) gb->accumulate(g.grad(self));
  });
}

Var sub(Var a, Var b) {
  Graph& g = same_graph(a, b);
  if (!(a.shape() == b.shape())) dim_error("sub", a.shape(), b.shape());
  Tensor out = a.value();
  out.accumulate(b.value(), -1.0);
  return g.record(std::move(out), {a.id, b.id}, [aid = a.id, bid = b.id](Graph& g, std::size_t self) {
    if (Tensor* ga = g.grad_buffer(aid)) ga->accumulate(g.grad(self));
    if (Tensor* gb = g.grad_buffer(bid)) gb->accumulate(g.grad(self), -1.0);
  });
}

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  if (!(a.shape() == b.shape())) dim_error("mul", a.shape(), b.shape());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return g.record(std::move(out), {a.id, b.id}, [aid = a.id, bid = b.id](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    if (Tensor* ga = g.grad_buffer(aid)) {
      const Tensor& bv = g.value(bid);
      for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i] * bv[i];
    }
    if (Tensor* gb = g.grad_buffer(bid)) {
      const Tensor& av = g.value(aid);
      for (std::size_t i = 0; i < gy.size(); ++i) (*gb)[i] += gy[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  return unary(a, [factor](double x) { return x * factor; },
               [factor](double, double) { return factor; });
}

Var add_row_bias(Var x, Var bias) {
  Graph& g = same_graph(x, bias);
  const Shape& xs = x.shape();
  if (xs.rank() != 2 || bias.shape().rank() != 1 || bias.shape()[0] != xs[1]) {
    dim_error("add_row_bias", xs, bias.shape());
  }
  const std::size_t m = xs[0], n = xs[1];
  Tensor out = x.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += bias.value()[j];
  return g.record(std::move(out), {x.id, bias.id}, [xid = x.id, bid = bias.id, m, n](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    if (Tensor* gx = g.grad_buffer(xid)) gx->accumulate(gy);
    if (Tensor* gb = g.grad_buffer(bid)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*gb)[j] += gy.at(i, j);
    }
  });
}

Var exp(Var x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
  for (double v : x.value().data()) {
    if (v <= 0.0) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var sqrt(Var x) {
  for (double v : x.value().data()) {
    if (v <= 0.0) throw DomainError("sqrt: non-positive input " + std::to_string(v));
  }
  return unary(x, [](double v) { return std::sqrt(v); },
               [](double, double y) { return 0.5 / y; });
}

Var clamp(Var x, double lo, double hi) {
  return unary(x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Var gelu(Var x) {
  static constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double kA = 0.044715;
  return unary(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v))); },
      [](double v, double) {
        const double u = kC * (v + kA * v * v * v);
        const double t = std::tanh(u);
        const double du = kC * (1.0 + 3.0 * kA * v * v);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      });
}

Var softmax_rows(Var x, const Mask* mask) {
  const Shape& s = x.shape();
  if (s.rank() != 2 && s.rank() != 3) throw DimensionError("softmax_rows: need rank 2 or 3, got " + s.str());
  const std::size_t cols = s.back();
  const std::size_t rows_per_block = s[s.rank() - 2];
  const std::size_t total_rows = s.numel() / cols;
  if (mask && (mask->rows != rows_per_block || mask->cols != cols)) {
    dim_error("softmax_rows", s, Shape{mask->rows, mask->cols});
  }
  const Tensor& xv = x.value();
  Tensor out(s);
  for (std::size_t r = 0; r < total_rows; ++r) {
    const std::size_t mr = r % rows_per_block;
    const double* in = xv.data().data() + r * cols;
    double* o = out.data().data() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j) {
      if (!mask || mask->allowed(mr, j)) mx = std::max(mx, in[j]);
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw DegenerateRowError("softmax_rows: row " + std::to_string(r) + " is fully masked");
    }
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      if (!mask || mask->allowed(mr, j)) {
        o[j] = std::exp(in[j] - mx);
        z += o[j];
      }
    }
    for (std::size_t j = 0; j < cols; ++j) o[j] /= z;
  }
  return x.graph->record(std::move(out), {x.id}, [xid = x.id, cols, total_rows](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    const Tensor& y = g.value(self);
    Tensor* gx = g.grad_buffer(xid);
    for (std::size_t r = 0; r < total_rows; ++r) {
      const std::size_t base = r * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += gy[base + j] * y[base + j];
      for (std::size_t j = 0; j < cols; ++j) (*gx)[base + j] += y[base + j] * (gy[base + j] - dot);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Graph& g = same_graph(x, gain);
  same_graph(x, bias);
  const Shape& s = x.shape();
  if (s.rank() != 2 || s[1] == 0) throw DimensionError("layer_norm: need [m×d] with d >= 1, got " + s.str());
  const std::size_t m = s[0], d = s[1];
  if (!(gain.shape() == Shape{d})) dim_error("layer_norm gain", s, gain.shape());
  if (!(bias.shape() == Shape{d})) dim_error("layer_norm bias", s, bias.shape());
  if (eps < 0.0) throw DomainError("layer_norm: negative eps");

  Tensor xhat(s);
  std::vector<double> rstd(m);
  Tensor out(s);
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xv.at(i, j);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xv.at(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double denom = var + eps;
    rstd[i] = denom > 0.0 ? 1.0 / std::sqrt(denom) : 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      xhat.at(i, j) = (xv.at(i, j) - mean) * rstd[i];
      out.at(i, j) = gain.value()[j] * xhat.at(i, j) + bias.value()[j];
    }
  }
  const bool corrupt = g.fault() == Fault::kLayerNormGain;
  return g.record(
      std::move(out), {x.id, gain.id, bias.id},
      [xid = x.id, gid = gain.id, bid = bias.id, m, d, xhat = std::move(xhat), rstd = std::move(rstd),
       corrupt](Graph& g, std::size_t self) {
        const Tensor& gy = g.grad(self);
        const Tensor& gv = g.value(gid);
        if (Tensor* gg = g.grad_buffer(gid)) {
          const double f = corrupt ? 1.1 : 1.0;
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) (*gg)[j] += f * gy.at(i, j) * xhat.at(i, j);
        }
        if (Tensor* gb = g.grad_buffer(bid)) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) (*gb)[j] += gy.at(i, j);
        }
        if (Tensor* gx = g.grad_buffer(xid)) {
          for (std::size_t i = 0; i < m; ++i) {
            double mean_g = 0.0, mean_gx = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = gy.at(i, j) * gv[j];
              mean_g += gh;
              mean_gx += gh * xhat.at(i, j);
            }
            mean_g /= static_cast<double>(d);
            mean_gx /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = gy.at(i, j) * gv[j];
              gx->at(i, j) += rstd[i] * (gh - mean_g - xhat.at(i, j) * mean_gx);
            }
          }
        }
      });
}

Stacked concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no parts");
  Graph& g = *parts.front().graph;
  const Shape& first = parts.front().shape();
  if (first.rank() != 2) throw DimensionError("concat_rows: parts must be [rows×d], got " + first.str());
  const std::size_t d = first[1];
  std::vector<RowRange> segments;
  std::vector<std::size_t> ids;
  std::size_t rows = 0;
  for (const Var& p : parts) {
    same_graph(parts.front(), p);
    if (p.shape().rank() != 2 || p.shape()[1] != d) dim_error("concat_rows", first, p.shape());
    segments.push_back({rows, rows + p.shape()[0]});
    rows += p.shape()[0];
    ids.push_back(p.id);
  }
  std::vector<double> data;
  data.reserve(rows * d);
  for (const Var& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  Tensor out(Shape{rows, d}, std::move(data));
  Var v = g.record(std::move(out), ids, [ids, segments, d](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor* gp = g.grad_buffer(ids[k]);
      if (!gp) continue;
      const std::size_t off = segments[k].begin * d;
      for (std::size_t i = 0; i < gp->size(); ++i) (*gp)[i] += gy[off + i];
    }
  });
  return {v, std::move(segments)};
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (s.rank() == 0 || begin > end || end > s[0]) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of bounds for " + s.str());
  }
  const std::size_t stride = s[0] == 0 ? 0 : s.numel() / s[0];
  std::vector<std::size_t> ext{end - begin};
  for (std::size_t a = 1; a < s.rank(); ++a) ext.push_back(s[a]);
  Shape os(ext);
  const auto& xd = x.value().data();
  Tensor out(os, std::vector<double>(xd.begin() + begin * stride, xd.begin() + end * stride));
  return x.graph->record(std::move(out), {x.id}, [xid = x.id, off = begin * stride](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    Tensor* gx = g.grad_buffer(xid);
    for (std::size_t i = 0; i < gy.size(); ++i) (*gx)[off + i] += gy[i];
  });
}

Var split_heads(Var x, std::size_t heads) {
  const Shape& s = x.shape();
  if (s.rank() != 2 || heads == 0 || s[1] % heads != 0) {
    throw DimensionError("split_heads: " + s.str() + " not divisible into " + std::to_string(heads) + " heads");
  }
  const std::size_t n = s[0], d = s[1], dh = d / heads;
  Tensor out(Shape{heads, n, dh});
  const Tensor& xv = x.value();
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dh; ++j) out.at(h, i, j) = xv.at(i, h * dh + j);
  return x.graph->record(std::move(out), {x.id}, [xid = x.id, heads, n, dh](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    Tensor* gx = g.grad_buffer(xid);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dh; ++j) gx->at(i, h * dh + j) += gy.at(h, i, j);
  });
}

Var merge_heads(Var x) {
  const Shape& s = x.shape();
  if (s.rank() != 3) throw DimensionError("merge_heads: need [h×n×dh], got " + s.str());
  const std::size_t heads = s[0], n = s[1], dh = s[2];
  Tensor out(Shape{n, heads * dh});
  const Tensor& xv = x.value();
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dh; ++j) out.at(i, h * dh + j) = xv.at(h, i, j);
  return x.graph->record(std::move(out), {x.id}, [xid = x.id, heads, n, dh](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    Tensor* gx = g.grad_buffer(xid);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dh; ++j) gx->at(h, i, j) += gy.at(i, h * dh + j);
  });
}

Var broadcast_heads(Var x, std::size_t heads) {
  const Shape& s = x.shape();
  if (s.rank() != 2 || heads == 0) throw DimensionError("broadcast_heads: need [n×m], got " + s.str());
  const std::size_t block = s.numel();
  std::vector<double> data;
  data.reserve(heads * block);
  for (std::size_t h = 0; h < heads; ++h) data.insert(data.end(), x.value().data().begin(), x.value().data().end());
  Tensor out(Shape{heads, s[0], s[1]}, std::move(data));
  return x.graph->record(std::move(out), {x.id}, [xid = x.id, heads, block](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    Tensor* gx = g.grad_buffer(xid);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < block; ++i) (*gx)[i] += gy[h * block + i];
  });
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
  const Shape& s = table.shape();
  if (s.rank() != 2) throw DimensionError("gather_rows: table must be [V×d], got " + s.str());
  const std::size_t vocab = s[0], d = s[1];
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  Tensor out(Shape{idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= vocab) {
      throw IndexError("gather_rows: id " + std::to_string(idx[i]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = table.value().at(idx[i], j);
  }
  return table.graph->record(std::move(out), {table.id}, [tid = table.id, idx = std::move(idx), d](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    Tensor* gt = g.grad_buffer(tid);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt->at(idx[i], j) += gy.at(i, j);
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(shape);
  return x.graph->record(std::move(out), {x.id}, [xid = x.id](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    Tensor* gx = g.grad_buffer(xid);
    for (std::size_t i = 0; i < gy.size(); ++i) (*gx)[i] += gy[i];
  });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.graph->record(Tensor::scalar(total), {x.id}, [xid = x.id](Graph& g, std::size_t self) {
    const double gy = g.grad(self)[0];
    Tensor* gx = g.grad_buffer(xid);
    for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += gy;
  });
}

Var mean_rows(Var x) {
  const Shape& s = x.shape();
  if (s.rank() != 2 || s[0] == 0) throw DimensionError("mean_rows: need non-empty [m×d], got " + s.str());
  const std::size_t m = s[0], d = s[1];
  Tensor out(Shape{1, d});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += x.value().at(i, j);
  for (std::size_t j = 0; j < d; ++j) out[j] /= static_cast<double>(m);
  return x.graph->record(std::move(out), {x.id}, [xid = x.id, m, d](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    Tensor* gx = g.grad_buffer(xid);
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < d; ++j) gx->at(i, j) += gy[j] * inv;
  });
}

Var mask_fill(Var x, std::span<const std::uint8_t> keep, double fill) {
  if (keep.size() != x.value().size()) {
    throw DimensionError("mask_fill: " + std::to_string(keep.size()) + " mask entries for " + x.shape().str());
  }
  std::vector<std::uint8_t> k(keep.begin(), keep.end());
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!k[i]) out[i] = fill;
  return x.graph->record(std::move(out), {x.id}, [xid = x.id, k = std::move(k)](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    Tensor* gx = g.grad_buffer(xid);
    for (std::size_t i = 0; i < gy.size(); ++i)
      if (k[i]) (*gx)[i] += gy[i];
  });
}

Var dropout(Var x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw DomainError("dropout: rate must lie in [0,1)");
  if (rate == 0.0) return x;
  std::bernoulli_distribution keep_dist(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  std::vector<double> factor(x.value().size());
  for (double& f : factor) f = keep_dist(rng) ? s : 0.0;
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor[i];
  return x.graph->record(std::move(out), {x.id}, [xid = x.id, factor = std::move(factor)](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    Tensor* gx = g.grad_buffer(xid);
    for (std::size_t i = 0; i < gy.size(); ++i) (*gx)[i] += gy[i] * factor[i];
  });
}

Var cross_entropy(Var logits, std::size_t target) {
  const Tensor& z = logits.value();
  if (target >= z.size()) {
    throw IndexError("cross_entropy: target " + std::to_string(target) + " outside " + z.shape().str());
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : z.data()) mx = std::max(mx, v);
  double total = 0.0;
  for (double v : z.data()) total += std::exp(v - mx);
  const double lse = mx + std::log(total);
  return logits.graph->record(Tensor::scalar(lse - z[target]), {logits.id},
                              [lid = logits.id, target, lse](Graph& g, std::size_t self) {
                                const double gy = g.grad(self)[0];
                                const Tensor& z = g.value(lid);
                                Tensor* gz = g.grad_buffer(lid);
                                for (std::size_t i = 0; i < z.size(); ++i) {
                                  const double p = std::exp(z[i] - lse);
                                  (*gz)[i] += gy * (p - (i == target ? 1.0 : 0.0));
                                }
                              });
}

Var bce_with_logits(Var logits, std::span<const std::uint8_t> targets) {
  const Tensor& z = logits.value();
  if (targets.size() != z.size()) {
    throw DimensionError("bce_with_logits: " + std::to_string(targets.size()) + " targets for logits " +
                         z.shape().str());
  }
  std::vector<std::uint8_t> y(targets.begin(), targets.end());
  const std::size_t m = z.size();
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double zi = z[i];
    total += std::max(zi, 0.0) - zi * (y[i] ? 1.0 : 0.0) + std::log1p(std::exp(-std::abs(zi)));
  }
  const double value = m == 0 ? 0.0 : total / static_cast<double>(m);
  return logits.graph->record(Tensor::scalar(value), {logits.id}, [lid = logits.id, y = std::move(y)](Graph& g, std::size_t self) {
    const std::size_t m = y.size();
    if (m == 0) return;
    const double gy = g.grad(self)[0] / static_cast<double>(m);
    const Tensor& z = g.value(lid);
    Tensor* gz = g.grad_buffer(lid);
    for (std::size_t i = 0; i < m; ++i) (*gz)[i] += gy * (stable_sigmoid(z[i]) - (y[i] ? 1.0 : 0.0));
  });
}

Var bilinear_adjacent(Var f, Var w) {
  Graph& g = same_graph(f, w);
  const Shape& fs = f.shape();
  const Shape& ws = w.shape();
  if (fs.rank() != 2 || ws.rank() != 2 || ws[0] != fs[1] || ws[1] != fs[1]) dim_error("pair_scores", fs, ws);
  const std::size_t n = fs[0], d = fs[1];
  if (n == 0) throw DimensionError("pair_scores: empty sequence");
  // fw = f·W, kept for the backward pass.
  Tensor fw(Shape{n, d});
  mm_nn(f.value().data().data(), w.value().data().data(), fw.data().data(), n, d, d);
  Tensor r(Shape{n - 1});
  for (std::size_t k = 0; k + 1 < n; ++k) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += fw.at(k, j) * f.value().at(k + 1, j);
    r[k] = acc;
  }
  const bool corrupt = g.fault() == Fault::kBilinearWeight;
  return g.record(std::move(r), {f.id, w.id},
                  [fid = f.id, wid = w.id, n, d, fw = std::move(fw), corrupt](Graph& g, std::size_t self) {
                    const Tensor& gr = g.grad(self);
                    const Tensor& fv = g.value(fid);
                    const Tensor& wv = g.value(wid);
                    if (Tensor* gf = g.grad_buffer(fid)) {
                      for (std::size_t k = 0; k + 1 < n; ++k) {
                        // d r_k / d f_k = f_{k+1}·Wᵀ ; d r_k / d f_{k+1} = f_k·W
                        for (std::size_t i = 0; i < d; ++i) {
                          double acc = 0.0;
                          for (std::size_t j = 0; j < d; ++j) acc += wv.at(i, j) * fv.at(k + 1, j);
                          gf->at(k, i) += gr[k] * acc;
                          gf->at(k + 1, i) += gr[k] * fw.at(k, i);
                        }
                      }
                    }
                    if (Tensor* gw = g.grad_buffer(wid)) {
                      const double f_scale = corrupt ? 1.1 : 1.0;
                      for (std::size_t k = 0; k + 1 < n; ++k)
                        for (std::size_t i = 0; i < d; ++i)
                          for (std::size_t j = 0; j < d; ++j)
                            gw->at(i, j) += f_scale * gr[k] * fv.at(k, i) * fv.at(k + 1, j);
                    }
                  });
}

namespace {

Var neighbor_side(Var r, std::size_t n, bool right) {
  const Shape& rs = r.shape();
  if (n == 0) throw DimensionError("neighbor_softmax: empty sequence");
  if (rs.rank() != 1 || rs[0] + 1 != n) {
    throw DimensionError("neighbor_softmax: " + rs.str() + " pair scores for " + std::to_string(n) + " tokens");
  }
  Tensor out(Shape{n});
  const Tensor& rv = r.value();
  if (n == 1) {
    out[0] = 1.0;
  } else {
    out[0] = right ? 1.0 : 0.0;
    out[n - 1] = right ? 0.0 : 1.0;
    for (std::size_t i = 1; i + 1 < n; ++i) {
      // softmax(r[i-1], r[i]); right mass is sigmoid(r[i] - r[i-1])
      const double diff = rv[i] - rv[i - 1];
      out[i] = stable_sigmoid(right ? diff : -diff);
    }
  }
  return r.graph->record(std::move(out), {r.id}, [rid = r.id, n, right](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    const Tensor& y = g.value(self);
    Tensor* gr = g.grad_buffer(rid);
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const double s = y[i] * (1.0 - y[i]) * gy[i];
      // y = sigmoid(±(r[i] - r[i-1]))
      (*gr)[i] += right ? s : -s;
      (*gr)[i - 1] += right ? -s : s;
    }
  });
}

}  // namespace

Var neighbor_left(Var r, std::size_t n) { return neighbor_side(r, n, false); }
Var neighbor_right(Var r, std::size_t n) { return neighbor_side(r, n, true); }

Var span_log_sums(Var log_p) {
  const Shape& s = log_p.shape();
  if (s.rank() != 1) throw DimensionError("span_log_sums: need [n-1], got " + s.str());
  const std::size_t links = s[0];
  const std::size_t n = links + 1;
  std::vector<double> prefix(n, 0.0);
  for (std::size_t k = 0; k < links; ++k) prefix[k + 1] = prefix[k] + log_p.value()[k];
  Tensor out(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out.at(i, j) = i <= j ? prefix[j] - prefix[i] : prefix[i] - prefix[j];
    }
  }
  return log_p.graph->record(std::move(out), {log_p.id}, [lid = log_p.id, n](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    Tensor* gl = g.grad_buffer(lid);
    // Link k lies inside span (i, j), i < j, iff i <= k < j.
    // tail[i] accumulates sum_{j > k} (gy[i][j] + gy[j][i]) while k runs down.
    std::vector<double> tail(n, 0.0);
    std::vector<double> grad(n - 1, 0.0);
    for (std::size_t k = n - 1; k-- > 0;) {
      const std::size_t j = k + 1;
      for (std::size_t i = 0; i < j; ++i) tail[i] += gy.at(i, j) + gy.at(j, i);
      double acc = 0.0;
      for (std::size_t i = 0; i <= k; ++i) acc += tail[i];
      grad[k] = acc;
    }
    for (std::size_t k = 0; k + 1 < n; ++k) (*gl)[k] += grad[k];
  });
}

}  // namespace cf::ops

#include "courier/diffcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "courier/error.hpp"

namespace courier::diff {
namespace {

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw ContractError("operation on an unbound Var");
  return *a.tape();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_matrix(const char* op, const Tensor& a) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
  }
}

void require_finite(const char* op, const Tensor& a) {
  if (!a.all_finite()) throw NumericError(std::string(op) + ": non-finite input");
}

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
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

// c[m x k] += a[m x n] * b[k x n]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <typename F>
Var unary(const Var& a, F&& f, BackwardFn backward) {
  Tensor out = a.value();
  for (double& x : out.storage()) x = f(x);
  return tape_of(a).record(std::move(out), {a}, std::move(backward));
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  const auto& bv = b.value().storage();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return tape_of(a).record(std::move(out), {a, b},
                           [](const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
                             for (Tensor* dst : grads) {
                               if (!dst) continue;
                               for (std::size_t i = 0; i < g.size(); ++i) (*dst)[i] += g[i];
                             }
                           });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  const auto& bv = b.value().storage();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return tape_of(a).record(std::move(out), {a, b},
                           [](const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
                             if (grads[0])
                               for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
                             if (grads[1])
                               for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] -= g[i];
                           });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a.value(), b.value());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return tape_of(a).record(std::move(out), {a, b},
                           [&av, &bv](const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
                             if (grads[0])
                               for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * bv[i];
                             if (grads[1])
                               for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] += g[i] * av[i];
                           });
}

Var scale(const Var& a, double factor) {
  return unary(a, [factor](double x) { return x * factor; },
               [factor](const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
                 for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * factor;
               });
}

Var add_scalar(const Var& a, double shift) {
  return unary(a, [shift](double x) { return x + shift; },
               [](const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
                 for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
               });
}

Var add_row(const Var& a, const Var& bias) {
  const Tensor& av = a.value();
  require_matrix("add_row", av);
  const std::size_t m = av.rows();
  const std::size_t n = av.cols();
  if (bias.value().size() != n) {
    throw DimensionError("add_row: bias " + shape_string(bias.value().shape()) +
                         " does not match columns of " + shape_string(av.shape()));
  }
  Tensor out = av;
  const auto& bv = bias.value().storage();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  return tape_of(a).record(std::move(out), {a, bias},
                           [m, n](const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
                             if (grads[0])
                               for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
                             if (grads[1])
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < n; ++j) (*grads[1])[j] += g[i * n + j];
                           });
}

Var relu(const Var& a) {
  const Tensor& av = a.value();
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [&av](const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
                 for (std::size_t i = 0; i < g.size(); ++i)
                   if (av[i] > 0.0) (*grads[0])[i] += g[i];
               });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](const Tensor& y, const Tensor& g, std::span<Tensor* const> grads) {
                 for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * (1.0 - y[i] * y[i]);
               });
}

Var sigmoid(const Var& a) {
  return unary(a,
               [](double x) {
                 if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
                 const double e = std::exp(x);
                 return e / (1.0 + e);
               },
               [](const Tensor& y, const Tensor& g, std::span<Tensor* const> grads) {
                 for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * y[i] * (1.0 - y[i]);
               });
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix("matmul", av);
  require_matrix("matmul", bv);
  const std::size_t m = av.rows();
  const std::size_t k = av.cols();
  const std::size_t n = bv.cols();
  if (bv.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_string(av.shape()) + " x " +
                         shape_string(bv.shape()));
  }
  Tensor out({m, n});
  gemm_nn(av.storage().data(), bv.storage().data(), out.storage().data(), m, k, n);
  return tape_of(a).record(
      std::move(out), {a, b},
      [&av, &bv, m, k, n](const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        // dA = G B^T, dB = A^T G
        if (grads[0]) gemm_nt(g.storage().data(), bv.storage().data(), grads[0]->storage().data(), m, n, k);
        if (grads[1]) gemm_tn(av.storage().data(), g.storage().data(), grads[1]->storage().data(), m, k, n);
      });
}

Var transpose(const Var& a) {
  const Tensor& av = a.value();
  require_matrix("transpose", av);
  const std::size_t m = av.rows();
  const std::size_t n = av.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return tape_of(a).record(std::move(out), {a},
                           [m, n](const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t j = 0; j < n; ++j) (*grads[0])[i * n + j] += g[j * m + i];
                           });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no operands");
  const Shape& first = parts.front().value().shape();
  Shape out_shape = first;
  const AxisView v0 = axis_view(first, axis);
  const std::size_t ax = static_cast<std::size_t>(axis < 0 ? axis + static_cast<int>(first.size()) : axis);
  std::vector<std::size_t> lengths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Shape& s = p.value().shape();
    if (s.size() != first.size()) throw DimensionError("concat: rank mismatch " + shape_string(s));
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != ax && s[d] != first[d]) {
        throw DimensionError("concat: shape " + shape_string(s) + " incompatible with " +
                             shape_string(first));
      }
    }
    lengths.push_back(s[ax]);
    total += s[ax];
  }
  out_shape[ax] = total;
  Tensor out(out_shape);
  const std::size_t outer = v0.outer;
  const std::size_t inner = v0.inner;
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& src = parts[p].value();
    const std::size_t len = lengths[p];
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.storage().data() + o * len * inner, len * inner,
                  out.storage().data() + (o * total + offset) * inner);
    }
    offset += len;
  }
  return tape_of(parts.front())
      .record(std::move(out), parts,
              [lengths, outer, inner, total](const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
                std::size_t off = 0;
                for (std::size_t p = 0; p < grads.size(); ++p) {
                  const std::size_t len = lengths[p];
                  if (grads[p]) {
                    for (std::size_t o = 0; o < outer; ++o) {
                      const double* src = g.storage().data() + (o * total + off) * inner;
                      double* dst = grads[p]->storage().data() + o * len * inner;
                      for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                    }
                  }
                  off += len;
                }
              });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return tape_of(a).record(std::move(out), {a},
                           [](const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
                             for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
                           });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.value().storage()) s += x;
  return tape_of(a).record(Tensor::scalar(s), {a},
                           [](const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
                             const double gv = g[0];
                             for (double& x : grads[0]->storage()) x += gv;
                           });
}

Var mean(const Var& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DegenerateInputError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_axis(const Var& a, int axis) {
  const Shape& shape = a.value().shape();
  const AxisView v = axis_view(shape, axis);
  Shape out_shape;
  const std::size_t ax = static_cast<std::size_t>(axis < 0 ? axis + static_cast<int>(shape.size()) : axis);
  for (std::size_t d = 0; d < shape.size(); ++d)
    if (d != ax) out_shape.push_back(shape[d]);
  Tensor out(out_shape);
  const auto& src = a.value().storage();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.length; ++i)
      for (std::size_t n = 0; n < v.inner; ++n) out[o * v.inner + n] += src[(o * v.length + i) * v.inner + n];
  return tape_of(a).record(std::move(out), {a},
                           [v](const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
                             auto& dst = grads[0]->storage();
                             for (std::size_t o = 0; o < v.outer; ++o)
                               for (std::size_t i = 0; i < v.length; ++i)
                                 for (std::size_t n = 0; n < v.inner; ++n)
                                   dst[(o * v.length + i) * v.inner + n] += g[o * v.inner + n];
                           });
}

Var mean_axis(const Var& a, int axis) {
  const AxisView v = axis_view(a.value().shape(), axis);
  if (v.length == 0) throw DegenerateInputError("mean over an empty axis");
  return scale(sum_axis(a, axis), 1.0 / static_cast<double>(v.length));
}

Var softmax(const Var& a, int axis) {
  require_finite("softmax", a.value());
  const AxisView v = axis_view(a.value().shape(), axis);
  Tensor out = a.value();
  auto& y = out.storage();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t n = 0; n < v.inner; ++n) {
      const std::size_t base = o * v.length * v.inner + n;
      double mx = -INFINITY;
      for (std::size_t i = 0; i < v.length; ++i) mx = std::max(mx, y[base + i * v.inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < v.length; ++i) {
        double& e = y[base + i * v.inner];
        e = std::exp(e - mx);
        z += e;
      }
      for (std::size_t i = 0; i < v.length; ++i) y[base + i * v.inner] /= z;
    }
  }
  return tape_of(a).record(std::move(out), {a},
                           [v](const Tensor& y, const Tensor& g, std::span<Tensor* const> grads) {
                             auto& dst = grads[0]->storage();
                             for (std::size_t o = 0; o < v.outer; ++o) {
                               for (std::size_t n = 0; n < v.inner; ++n) {
                                 const std::size_t base = o * v.length * v.inner + n;
                                 double dot = 0.0;
                                 for (std::size_t i = 0; i < v.length; ++i) {
                                   const std::size_t at = base + i * v.inner;
                                   dot += g[at] * y[at];
                                 }
                                 for (std::size_t i = 0; i < v.length; ++i) {
                                   const std::size_t at = base + i * v.inner;
                                   dst[at] += y[at] * (g[at] - dot);
                                 }
                               }
                             }
                           });
}

Var log_softmax(const Var& a, int axis) {
  require_finite("log_softmax", a.value());
  const AxisView v = axis_view(a.value().shape(), axis);
  Tensor out = a.value();
  auto& y = out.storage();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t n = 0; n < v.inner; ++n) {
      const std::size_t base = o * v.length * v.inner + n;
      double mx = -INFINITY;
      for (std::size_t i = 0; i < v.length; ++i) mx = std::max(mx, y[base + i * v.inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < v.length; ++i) z += std::exp(y[base + i * v.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t i = 0; i < v.length; ++i) y[base + i * v.inner] -= lse;
    }
  }
  return tape_of(a).record(std::move(out), {a},
                           [v](const Tensor& y, const Tensor& g, std::span<Tensor* const> grads) {
                             auto& dst = grads[0]->storage();
                             for (std::size_t o = 0; o < v.outer; ++o) {
                               for (std::size_t n = 0; n < v.inner; ++n) {
                                 const std::size_t base = o * v.length * v.inner + n;
                                 double gsum = 0.0;
                                 for (std::size_t i = 0; i < v.length; ++i) gsum += g[base + i * v.inner];
                                 for (std::size_t i = 0; i < v.length; ++i) {
                                   const std::size_t at = base + i * v.inner;
                                   dst[at] += g[at] - std::exp(y[at]) * gsum;
                                 }
                               }
                             }
                           });
}

Var l2_normalize(const Var& a, int axis) {
  const AxisView v = axis_view(a.value().shape(), axis);
  const auto& x = a.value().storage();
  Tensor out = a.value();
  auto& y = out.storage();
  auto norms = std::make_shared<std::vector<double>>(v.outer * v.inner);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t n = 0; n < v.inner; ++n) {
      const std::size_t base = o * v.length * v.inner + n;
      double ss = 0.0;
      for (std::size_t i = 0; i < v.length; ++i) ss += x[base + i * v.inner] * x[base + i * v.inner];
      const double norm = std::sqrt(ss);
      if (!(norm > kNormEpsilon)) {
        throw DegenerateInputError("l2_normalize: slice " + std::to_string(o * v.inner + n) +
                                   " has norm " + std::to_string(norm));
      }
      (*norms)[o * v.inner + n] = norm;
      for (std::size_t i = 0; i < v.length; ++i) y[base + i * v.inner] /= norm;
    }
  }
  return tape_of(a).record(std::move(out), {a},
                           [v, norms](const Tensor& y, const Tensor& g, std::span<Tensor* const> grads) {
                             // d(x/|x|) = (g - y (y.g)) / |x|
                             auto& dst = grads[0]->storage();
                             for (std::size_t o = 0; o < v.outer; ++o) {
                               for (std::size_t n = 0; n < v.inner; ++n) {
                                 const std::size_t base = o * v.length * v.inner + n;
                                 double dot = 0.0;
                                 for (std::size_t i = 0; i < v.length; ++i) {
                                   const std::size_t at = base + i * v.inner;
                                   dot += y[at] * g[at];
                                 }
                                 const double inv = 1.0 / (*norms)[o * v.inner + n];
                                 for (std::size_t i = 0; i < v.length; ++i) {
                                   const std::size_t at = base + i * v.inner;
                                   dst[at] += (g[at] - y[at] * dot) * inv;
                                 }
                               }
                             }
                           });
}

Var gather_rows(const Var& table, const std::vector<std::int64_t>& indices) {
  const Tensor& tv = table.value();
  require_matrix("gather_rows", tv);
  const std::size_t n_rows = tv.rows();
  const std::size_t width = tv.cols();
  Tensor out({indices.size(), width});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::int64_t r = indices[i];
    if (r < 0 || static_cast<std::size_t>(r) >= n_rows) {
      throw DimensionError("gather_rows: index " + std::to_string(r) + " outside table of " +
                           std::to_string(n_rows) + " rows");
    }
    std::copy_n(tv.storage().data() + static_cast<std::size_t>(r) * width, width,
                out.storage().data() + i * width);
  }
  return tape_of(table).record(
      std::move(out), {table},
      [indices, width](const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        auto& dst = grads[0]->storage();
        for (std::size_t i = 0; i < indices.size(); ++i) {
          const std::size_t r = static_cast<std::size_t>(indices[i]);
          for (std::size_t j = 0; j < width; ++j) dst[r * width + j] += g[i * width + j];
        }
      });
}

Var segment_mean(const Var& x, const std::vector<std::int64_t>& index, std::size_t width) {
  const Tensor& xv = x.value();
  require_matrix("segment_mean", xv);
  if (width == 0 || index.size() % width != 0) {
    throw DimensionError("segment_mean: index length " + std::to_string(index.size()) +
                         " is not a multiple of width " + std::to_string(width));
  }
  const std::size_t groups = index.size() / width;
  const std::size_t d = xv.cols();
  Tensor out({groups, d});
  std::vector<double> inv_count(groups, 0.0);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    std::size_t count = 0;
    for (std::size_t l = 0; l < width; ++l) {
      const std::int64_t r = index[gi * width + l];
      if (r < 0) continue;
      if (static_cast<std::size_t>(r) >= xv.rows()) throw DimensionError("segment_mean: index out of range");
      ++count;
      for (std::size_t j = 0; j < d; ++j) out[gi * d + j] += xv[static_cast<std::size_t>(r) * d + j];
    }
    if (count) {
      inv_count[gi] = 1.0 / static_cast<double>(count);
      for (std::size_t j = 0; j < d; ++j) out[gi * d + j] *= inv_count[gi];
    }
  }
  return tape_of(x).record(
      std::move(out), {x},
      [index, width, d, inv_count](const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        auto& dst = grads[0]->storage();
        for (std::size_t gi = 0; gi < inv_count.size(); ++gi) {
          for (std::size_t l = 0; l < width; ++l) {
            const std::int64_t r = index[gi * width + l];
            if (r < 0) continue;
            for (std::size_t j = 0; j < d; ++j)
              dst[static_cast<std::size_t>(r) * d + j] += g[gi * d + j] * inv_count[gi];
          }
        }
      });
}

Var bce_with_logits(const Var& logits, const std::vector<double>& targets) {
  const Tensor& z = logits.value();
  if (z.size() != targets.size()) {
    throw DimensionError("bce_with_logits: " + std::to_string(z.size()) + " logits vs " +
                         std::to_string(targets.size()) + " targets");
  }
  if (z.size() == 0) throw DegenerateInputError("bce_with_logits: empty batch");
  require_finite("bce_with_logits", z);
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double x = z[i];
    // softplus(x) = max(x, 0) + log1p(exp(-|x|))
    total += std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))) - targets[i] * x;
  }
  const double n = static_cast<double>(z.size());
  return tape_of(logits).record(
      Tensor::scalar(total / n), {logits},
      [&z, targets, n](const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        auto& dst = grads[0]->storage();
        for (std::size_t i = 0; i < z.size(); ++i) {
          const double x = z[i];
          const double p = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
          dst[i] += g[0] * (p - targets[i]) / n;
        }
      });
}

}  // namespace courier::diff

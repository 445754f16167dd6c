#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "bestow/tensor.hpp"

namespace bestow {

namespace detail {

inline void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a 2-D tensor, got " + shape_str(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x k] += A[m x n] * B[k x n]^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                    std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * n;
    double* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += ai[j] * bp[j];
      ci[p] += s;
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

template <class F, class G>
Tensor unary(const Tensor& x, F f, G df_from_xy) {
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xd[i]);
  return Tensor::make_result(x.shape(), std::move(out), {x}, [df_from_xy](Node& self) {
    if (double* gx = grad_sink(self, 0)) {
      const auto& xv = self.parents[0]->data;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        gx[i] += self.grad[i] * df_from_xy(xv[i], self.data[i]);
      }
    }
  });
}

}  // namespace detail

/// Matrix product of a [m x k] and b [k x n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return Tensor::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    const double* A = self.parents[0]->data.data();
    const double* B = self.parents[1]->data.data();
    if (double* ga = grad_sink(self, 0)) detail::gemm_nt(self.grad.data(), B, ga, m, n, k);
    if (double* gb = grad_sink(self, 1)) detail::gemm_tn(A, self.grad.data(), gb, m, k, n);
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* g = grad_sink(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    if (double* g = grad_sink(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = grad_sink(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

/// Elementwise product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    if (double* g = grad_sink(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (double* g = grad_sink(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

inline Tensor scale(const Tensor& x, double s) {
  return detail::unary(x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

/// x [T x n] plus a row vector broadcast over rows. `row` may be shape
/// [n] or [1 x n].
inline Tensor add_row(const Tensor& x, const Tensor& row) {
  detail::require_rank2(x, "add_row");
  const std::size_t t = x.shape()[0], n = x.shape()[1];
  if (row.numel() != n) {
    throw DimensionError("add_row: row " + shape_str(row.shape()) + " does not match " +
                         shape_str(x.shape()));
  }
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  const auto rd = row.data();
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xd[i * n + j] + rd[j];
  }
  return Tensor::make_result(x.shape(), std::move(out), {x, row}, [t, n](detail::Node& self) {
    if (double* g = grad_sink(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = grad_sink(self, 1)) {
      for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
      }
    }
  });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

/// GELU, tanh approximation.
inline Tensor gelu(const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double a = 0.044715;
  return detail::unary(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v))); },
      [](double v, double) {
        const double u = c * (v + a * v * v * v);
        const double th = std::tanh(u);
        const double du = c * (1.0 + 3.0 * a * v * v);
        return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
      });
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return Tensor::make_result({}, {s}, {x}, [](detail::Node& self) {
    if (double* g = grad_sink(self, 0)) {
      const double go = self.grad[0];
      for (std::size_t i = 0; i < self.parents[0]->data.size(); ++i) g[i] += go;
    }
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

/// Softmax along `axis` (0 or 1 for 2-D, 0 for 1-D), max-subtracted.
inline Tensor softmax(const Tensor& x, std::size_t axis = 1) {
  std::size_t outer = 1, len = x.numel(), stride = 1;
  if (x.rank() == 2) {
    if (axis > 1) throw DimensionError("softmax: axis out of range for " + shape_str(x.shape()));
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    if (axis == 1) {
      outer = r;
      len = c;
      stride = 1;
    } else {
      outer = c;
      len = r;
      stride = c;
    }
  } else if (x.rank() > 2 || axis != 0) {
    throw DimensionError("softmax: unsupported axis for " + shape_str(x.shape()));
  }
  // element (o, i) lives at base(o) + i*stride, base(o) = o*len for rows, o for columns
  const bool by_rows = stride == 1;
  auto at = [=](std::size_t o, std::size_t i) { return by_rows ? o * len + i : o + i * stride; };
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, xd[at(o, i)]);
    double z = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double e = std::exp(xd[at(o, i)] - mx);
      out[at(o, i)] = e;
      z += e;
    }
    for (std::size_t i = 0; i < len; ++i) out[at(o, i)] /= z;
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [=](detail::Node& self) {
    if (double* g = grad_sink(self, 0)) {
      for (std::size_t o = 0; o < outer; ++o) {
        double dot = 0.0;
        for (std::size_t i = 0; i < len; ++i) dot += self.grad[at(o, i)] * self.data[at(o, i)];
        for (std::size_t i = 0; i < len; ++i) {
          g[at(o, i)] += self.data[at(o, i)] * (self.grad[at(o, i)] - dot);
        }
      }
    }
  });
}

/// Row-wise layer normalisation over the last dimension with affine gain/bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  detail::require_rank2(x, "layer_norm");
  const std::size_t t = x.shape()[0], n = x.shape()[1];
  if (gain.numel() != n || bias.numel() != n) {
    throw DimensionError("layer_norm: gain/bias must have " + std::to_string(n) + " elements");
  }
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(t);
  const auto xd = x.data();
  const auto gd = gain.data();
  const auto bd = bias.data();
  for (std::size_t r = 0; r < t; ++r) {
    const double* xr = xd.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xr[j] - mu) * is;
      xhat[r * n + j] = h;
      out[r * n + j] = gd[j] * h + bd[j];
    }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [t, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        const auto& gv = self.parents[1]->data;
        const double* dy = self.grad.data();
        if (double* gx = grad_sink(self, 0)) {
          const double fn = static_cast<double>(n);
          for (std::size_t r = 0; r < t; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double dh = dy[r * n + j] * gv[j];
              m1 += dh;
              m2 += dh * xhat[r * n + j];
            }
            m1 /= fn;
            m2 /= fn;
            for (std::size_t j = 0; j < n; ++j) {
              const double dh = dy[r * n + j] * gv[j];
              gx[r * n + j] += inv_std[r] * (dh - m1 - xhat[r * n + j] * m2);
            }
          }
        }
        if (double* gg = grad_sink(self, 1)) {
          for (std::size_t r = 0; r < t; ++r) {
            for (std::size_t j = 0; j < n; ++j) gg[j] += dy[r * n + j] * xhat[r * n + j];
          }
        }
        if (double* gb = grad_sink(self, 2)) {
          for (std::size_t r = 0; r < t; ++r) {
            for (std::size_t j = 0; j < n; ++j) gb[j] += dy[r * n + j];
          }
        }
      });
}

inline constexpr int kIgnoreIndex = -1;

/// Mean token negative log-likelihood over positions whose target is not
/// `ignore_index`. Returns 0 when every position is ignored.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                            int ignore_index = kIgnoreIndex) {
  detail::require_rank2(logits, "cross_entropy");
  const std::size_t t = logits.shape()[0], v = logits.shape()[1];
  if (targets.size() != t) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         shape_str(logits.shape()) + " logits");
  }
  std::size_t count = 0;
  for (int y : targets) {
    if (y == ignore_index) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= v) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(y) + " outside [0," +
                              std::to_string(v) + ")");
    }
    ++count;
  }
  std::vector<double> probs(t * v, 0.0);
  double loss = 0.0;
  const auto ld = logits.data();
  for (std::size_t r = 0; r < t; ++r) {
    if (targets[r] == ignore_index) continue;
    const double* row = ld.data() + r * v;
    double mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    loss += lse - row[targets[r]];
    for (std::size_t j = 0; j < v; ++j) probs[r * v + j] = std::exp(row[j] - lse);
  }
  const double inv = count ? 1.0 / static_cast<double>(count) : 0.0;
  return Tensor::make_result(
      {}, {loss * inv}, {logits},
      [t, v, inv, targets, ignore_index, probs = std::move(probs)](detail::Node& self) {
        if (double* g = grad_sink(self, 0)) {
          const double go = self.grad[0] * inv;
          for (std::size_t r = 0; r < t; ++r) {
            if (targets[r] == ignore_index) continue;
            for (std::size_t j = 0; j < v; ++j) g[r * v + j] += go * probs[r * v + j];
            g[r * v + static_cast<std::size_t>(targets[r])] -= go;
          }
        }
      });
}

/// Gathers rows of `table` [V x d] for each id.
inline Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  detail::require_rank2(table, "embedding");
  const std::size_t vocab = table.shape()[0], d = table.shape()[1];
  if (ids.empty()) throw DimensionError("embedding: empty id sequence");
  std::vector<double> out(ids.size() * d);
  const auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw std::out_of_range("unknown token id " + std::to_string(ids[i]) + " (vocabulary " +
                              std::to_string(vocab) + ")");
    }
    std::copy_n(td.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  return Tensor::make_result({ids.size(), d}, std::move(out), {table}, [ids, d](detail::Node& self) {
    if (double* g = grad_sink(self, 0)) {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        double* gr = g + static_cast<std::size_t>(ids[i]) * d;
        for (std::size_t j = 0; j < d; ++j) gr[j] += self.grad[i * d + j];
      }
    }
  });
}

/// Rows [begin, end) of a 2-D tensor.
inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  detail::require_rank2(x, "slice_rows");
  const std::size_t n = x.shape()[1];
  if (begin >= end || end > x.shape()[0]) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") outside " + shape_str(x.shape()));
  }
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                          x.data().begin() + static_cast<std::ptrdiff_t>(end * n));
  return Tensor::make_result({end - begin, n}, std::move(out), {x}, [begin, n](detail::Node& self) {
    if (double* g = grad_sink(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
    }
  });
}

/// Vertical concatenation of 2-D tensors with equal column counts.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) throw DimensionError("concat_rows: column mismatch " + shape_str(p.shape()));
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * n);
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return Tensor::make_result({total, n}, std::move(out), parts,
                             [offsets = std::move(offsets)](detail::Node& self) {
                               for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                 if (double* g = grad_sink(self, k)) {
                                   const auto len = self.parents[k]->data.size();
                                   for (std::size_t i = 0; i < len; ++i) {
                                     g[i] += self.grad[offsets[k] + i];
                                   }
                                 }
                               }
                             });
}

}  // namespace bestow

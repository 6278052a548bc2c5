#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "cosmae/tensor.hpp"

namespace cosmae {

namespace detail {
// Instrumentation: number of gradient buffers allocated for frozen leaves.
// Must stay zero for the life of a correctly wired training process; the
// stop-gradient tests assert on it.
inline thread_local std::uint64_t frozen_grad_allocs = 0;
}  // namespace detail

// Reverse-mode autodiff over Tensor values. A Var is a handle to one node of
// a dynamically built graph; backward() walks the graph once and accumulates
// gradients into every reachable node that requires them. Frozen leaves
// (teacher weights, snapshots) never require gradients, so backward never
// touches them and no gradient buffer is allocated on their behalf.
template <typename T>
struct VarNode {
  Tensor<T> value;
  Tensor<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool frozen_param = false;
  std::vector<std::shared_ptr<VarNode>> parents;
  std::function<void(VarNode&)> backprop;  // adds into parents' grads

  bool grad_allocated() const { return !grad.data.empty(); }
};

template <typename T>
struct Var {
  std::shared_ptr<VarNode<T>> node;

  Var() = default;
  explicit Var(std::shared_ptr<VarNode<T>> n) : node(std::move(n)) {}

  const Tensor<T>& value() const { return node->value; }
  const Tensor<T>& grad() const { return node->grad; }
  bool requires_grad() const { return node->requires_grad; }
  bool defined() const { return node != nullptr; }
};

template <typename T>
Var<T> make_leaf(Tensor<T> v, bool requires_grad, bool frozen = false) {
  auto n = std::make_shared<VarNode<T>>();
  n->value = std::move(v);
  n->requires_grad = requires_grad;
  n->frozen_param = frozen;
  return Var<T>(std::move(n));
}

template <typename T>
Var<T> make_constant(Tensor<T> v) {
  return make_leaf(std::move(v), /*requires_grad=*/false);
}

namespace detail {

template <typename T>
void ensure_grad(VarNode<T>& n) {
  if (!n.grad_allocated()) {
    if (n.frozen_param) ++frozen_grad_allocs;
    n.grad = Tensor<T>(n.value.shape);
  }
}

template <typename T>
void accum(const std::shared_ptr<VarNode<T>>& n, const Tensor<T>& g) {
  if (!n->requires_grad) return;
  ensure_grad(*n);
  for (std::size_t i = 0; i < g.data.size(); ++i) n->grad.data[i] += g.data[i];
}

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<std::shared_ptr<VarNode<T>>> parents,
               std::function<void(VarNode<T>&)> backprop) {
  auto n = std::make_shared<VarNode<T>>();
  n->value = std::move(value);
  for (const auto& p : parents) n->requires_grad |= p->requires_grad;
  n->parents = std::move(parents);
  if (n->requires_grad) n->backprop = std::move(backprop);
  return Var<T>(std::move(n));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  auto pa = a.node, pb = b.node;
  return detail::make_op<T>(add(a.value(), b.value()), {pa, pb}, [pa, pb](VarNode<T>& self) {
    detail::accum(pa, self.grad);
    detail::accum(pb, self.grad);
  });
}

// a[m x n] + row[1 x n], broadcast over rows.
template <typename T>
Var<T> add_rowvec(const Var<T>& a, const Var<T>& row) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& rv = row.value();
  if (av.rank() != 2 || rv.rank() != 2 || rv.rows() != 1 || rv.cols() != av.cols()) {
    throw UsageError("add_rowvec: shape mismatch");
  }
  Tensor<T> out = av;
  for (std::int64_t i = 0; i < av.rows(); ++i) {
    for (std::int64_t j = 0; j < av.cols(); ++j) out.at(i, j) += rv.at(0, j);
  }
  auto pa = a.node, pr = row.node;
  return detail::make_op<T>(std::move(out), {pa, pr}, [pa, pr](VarNode<T>& self) {
    detail::accum(pa, self.grad);
    if (pr->requires_grad) {
      Tensor<T> g(pr->value.shape);
      for (std::int64_t i = 0; i < self.grad.rows(); ++i) {
        for (std::int64_t j = 0; j < self.grad.cols(); ++j) g.at(0, j) += self.grad.at(i, j);
      }
      detail::accum(pr, g);
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  auto pa = a.node;
  return detail::make_op<T>(scale(a.value(), s), {pa}, [pa, s](VarNode<T>& self) {
    detail::accum(pa, scale(self.grad, s));
  });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  auto pa = a.node, pb = b.node;
  return detail::make_op<T>(matmul(a.value(), b.value()), {pa, pb}, [pa, pb](VarNode<T>& self) {
    if (pa->requires_grad) detail::accum(pa, matmul(self.grad, transpose(pb->value)));
    if (pb->requires_grad) detail::accum(pb, matmul(transpose(pa->value), self.grad));
  });
}

// a * b^T without materializing the transpose in the graph.
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  auto pa = a.node, pb = b.node;
  return detail::make_op<T>(matmul(a.value(), transpose(b.value())), {pa, pb},
                            [pa, pb](VarNode<T>& self) {
                              if (pa->requires_grad) detail::accum(pa, matmul(self.grad, pb->value));
                              if (pb->requires_grad)
                                detail::accum(pb, matmul(transpose(self.grad), pa->value));
                            });
}

template <typename T>
Var<T> gather_rows(const Var<T>& a, std::vector<std::int64_t> idx) {
  auto pa = a.node;
  Tensor<T> out = gather_rows(a.value(), idx);
  return detail::make_op<T>(std::move(out), {pa}, [pa, idx = std::move(idx)](VarNode<T>& self) {
    if (!pa->requires_grad) return;
    Tensor<T> g(pa->value.shape);
    const std::int64_t c = g.cols();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::int64_t j = 0; j < c; ++j) {
        g.at(idx[i], j) += self.grad.at(static_cast<std::int64_t>(i), j);
      }
    }
    detail::accum(pa, g);
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  std::vector<const Tensor<T>*> vals;
  std::vector<std::shared_ptr<VarNode<T>>> parents;
  vals.reserve(parts.size());
  for (const auto& p : parts) {
    vals.push_back(&p.value());
    parents.push_back(p.node);
  }
  Tensor<T> out = concat_rows(vals);
  return detail::make_op<T>(std::move(out), parents, [parents](VarNode<T>& self) {
    std::int64_t row = 0;
    const std::int64_t c = self.grad.cols();
    for (const auto& p : parents) {
      const std::int64_t r = p->value.rows();
      if (p->requires_grad) {
        Tensor<T> g(p->value.shape);
        for (std::int64_t i = 0; i < r; ++i) {
          for (std::int64_t j = 0; j < c; ++j) g.at(i, j) = self.grad.at(row + i, j);
        }
        detail::accum(p, g);
      }
      row += r;
    }
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw UsageError("concat_cols: empty input");
  const std::int64_t r = parts[0].value().rows();
  std::int64_t c = 0;
  std::vector<std::shared_ptr<VarNode<T>>> parents;
  for (const auto& p : parts) {
    if (p.value().rank() != 2 || p.value().rows() != r) throw UsageError("concat_cols: row mismatch");
    c += p.value().cols();
    parents.push_back(p.node);
  }
  Tensor<T> out(Shape{r, c});
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    for (std::int64_t i = 0; i < r; ++i) {
      for (std::int64_t j = 0; j < v.cols(); ++j) out.at(i, off + j) = v.at(i, j);
    }
    off += v.cols();
  }
  return detail::make_op<T>(std::move(out), parents, [parents](VarNode<T>& self) {
    std::int64_t col = 0;
    for (const auto& p : parents) {
      const std::int64_t pc = p->value.cols();
      if (p->requires_grad) {
        Tensor<T> g(p->value.shape);
        for (std::int64_t i = 0; i < g.rows(); ++i) {
          for (std::int64_t j = 0; j < pc; ++j) g.at(i, j) = self.grad.at(i, col + j);
        }
        detail::accum(p, g);
      }
      col += pc;
    }
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, std::int64_t from, std::int64_t to) {
  auto pa = a.node;
  Tensor<T> out = slice_cols(a.value(), from, to);
  return detail::make_op<T>(std::move(out), {pa}, [pa, from, to](VarNode<T>& self) {
    if (!pa->requires_grad) return;
    Tensor<T> g(pa->value.shape);
    for (std::int64_t i = 0; i < g.rows(); ++i) {
      for (std::int64_t j = from; j < to; ++j) g.at(i, j) = self.grad.at(i, j - from);
    }
    detail::accum(pa, g);
  });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
  auto pa = a.node;
  Tensor<T> y = softmax_rows(a.value());
  Tensor<T> y_copy = y;
  return detail::make_op<T>(std::move(y), {pa}, [pa, y = std::move(y_copy)](VarNode<T>& self) {
    if (!pa->requires_grad) return;
    Tensor<T> g(pa->value.shape);
    for (std::int64_t i = 0; i < y.rows(); ++i) {
      T dot = T(0);
      for (std::int64_t j = 0; j < y.cols(); ++j) dot += self.grad.at(i, j) * y.at(i, j);
      for (std::int64_t j = 0; j < y.cols(); ++j) {
        g.at(i, j) = (self.grad.at(i, j) - dot) * y.at(i, j);
      }
    }
    detail::accum(pa, g);
  });
}

// Per-row layer norm with affine parameters gamma/beta (each [1 x D]).
template <typename T>
Var<T> layer_norm_rows(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 2) throw UsageError("layer_norm_rows: rank-2 only");
  const std::int64_t R = xv.rows(), D = xv.cols();
  if (gamma.value().cols() != D || beta.value().cols() != D) {
    throw UsageError("layer_norm_rows: affine param width mismatch");
  }
  Tensor<T> xhat(xv.shape);
  Tensor<T> inv_std(Shape{R, 1});
  Tensor<T> out(xv.shape);
  for (std::int64_t i = 0; i < R; ++i) {
    T mean = T(0);
    for (std::int64_t j = 0; j < D; ++j) mean += xv.at(i, j);
    mean /= static_cast<T>(D);
    T var = T(0);
    for (std::int64_t j = 0; j < D; ++j) {
      const T d = xv.at(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<T>(D);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std.at(i, 0) = is;
    for (std::int64_t j = 0; j < D; ++j) {
      xhat.at(i, j) = (xv.at(i, j) - mean) * is;
      out.at(i, j) = xhat.at(i, j) * gamma.value().at(0, j) + beta.value().at(0, j);
    }
  }
  auto px = x.node, pg = gamma.node, pb = beta.node;
  return detail::make_op<T>(
      std::move(out), {px, pg, pb},
      [px, pg, pb, xhat = std::move(xhat), inv_std = std::move(inv_std)](VarNode<T>& self) {
        const std::int64_t R = xhat.rows(), D = xhat.cols();
        if (pg->requires_grad) {
          Tensor<T> gg(pg->value.shape);
          for (std::int64_t i = 0; i < R; ++i) {
            for (std::int64_t j = 0; j < D; ++j) gg.at(0, j) += self.grad.at(i, j) * xhat.at(i, j);
          }
          detail::accum(pg, gg);
        }
        if (pb->requires_grad) {
          Tensor<T> gb(pb->value.shape);
          for (std::int64_t i = 0; i < R; ++i) {
            for (std::int64_t j = 0; j < D; ++j) gb.at(0, j) += self.grad.at(i, j);
          }
          detail::accum(pb, gb);
        }
        if (px->requires_grad) {
          Tensor<T> gx(xhat.shape);
          for (std::int64_t i = 0; i < R; ++i) {
            T sum_d = T(0), sum_dx = T(0);
            for (std::int64_t j = 0; j < D; ++j) {
              const T dxh = self.grad.at(i, j) * pg->value.at(0, j);
              sum_d += dxh;
              sum_dx += dxh * xhat.at(i, j);
            }
            const T inv_d = T(1) / static_cast<T>(D);
            for (std::int64_t j = 0; j < D; ++j) {
              const T dxh = self.grad.at(i, j) * pg->value.at(0, j);
              gx.at(i, j) = inv_std.at(i, 0) *
                            (dxh - sum_d * inv_d - xhat.at(i, j) * sum_dx * inv_d);
            }
          }
          detail::accum(px, gx);
        }
      });
}

// Exact GELU, x * Phi(x) with the Gaussian CDF.
template <typename T>
Var<T> gelu(const Var<T>& a) {
  auto pa = a.node;
  const Tensor<T>& xv = a.value();
  Tensor<T> out(xv.shape);
  for (std::size_t i = 0; i < xv.data.size(); ++i) {
    const T x = xv.data[i];
    out.data[i] = T(0.5) * x * (T(1) + std::erf(x * T(M_SQRT1_2)));
  }
  return detail::make_op<T>(std::move(out), {pa}, [pa](VarNode<T>& self) {
    if (!pa->requires_grad) return;
    Tensor<T> g(pa->value.shape);
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      const T x = pa->value.data[i];
      const T cdf = T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2)));
      const T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014327);
      g.data[i] = self.grad.data[i] * (cdf + x * pdf);
    }
    detail::accum(pa, g);
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  auto pa = a.node;
  const Tensor<T>& xv = a.value();
  Tensor<T> out(xv.shape);
  for (std::size_t i = 0; i < xv.data.size(); ++i) out.data[i] = std::max(T(0), xv.data[i]);
  return detail::make_op<T>(std::move(out), {pa}, [pa](VarNode<T>& self) {
    if (!pa->requires_grad) return;
    Tensor<T> g(pa->value.shape);
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      g.data[i] = pa->value.data[i] > T(0) ? self.grad.data[i] : T(0);
    }
    detail::accum(pa, g);
  });
}

// Mean over rows [from_row, rows), producing [1 x D]. Used for token pooling.
template <typename T>
Var<T> mean_rows_from(const Var<T>& a, std::int64_t from_row) {
  const Tensor<T>& xv = a.value();
  if (xv.rank() != 2 || from_row < 0 || from_row >= xv.rows()) {
    throw UsageError("mean_rows_from: bad row range");
  }
  const std::int64_t n = xv.rows() - from_row;
  Tensor<T> out(Shape{1, xv.cols()});
  for (std::int64_t i = from_row; i < xv.rows(); ++i) {
    for (std::int64_t j = 0; j < xv.cols(); ++j) out.at(0, j) += xv.at(i, j);
  }
  for (auto& v : out.data) v /= static_cast<T>(n);
  auto pa = a.node;
  return detail::make_op<T>(std::move(out), {pa}, [pa, from_row, n](VarNode<T>& self) {
    if (!pa->requires_grad) return;
    Tensor<T> g(pa->value.shape);
    const T inv = T(1) / static_cast<T>(n);
    for (std::int64_t i = from_row; i < g.rows(); ++i) {
      for (std::int64_t j = 0; j < g.cols(); ++j) g.at(i, j) = self.grad.at(0, j) * inv;
    }
    detail::accum(pa, g);
  });
}

// (1/|rows|) * sum over the given rows of the squared L2 distance to target.
// This is the masked reconstruction objective; only the listed rows
// contribute, so predictions at other rows carry zero gradient.
template <typename T>
Var<T> masked_sq_err(const Var<T>& pred, const Tensor<T>& target,
                     const std::vector<std::int64_t>& rows) {
  const Tensor<T>& pv = pred.value();
  check_same_shape(pv, target, "masked_sq_err");
  if (rows.empty()) throw UsageError("masked_sq_err: empty masked set");
  T loss = T(0);
  for (auto r : rows) {
    for (std::int64_t j = 0; j < pv.cols(); ++j) {
      const T d = pv.at(r, j) - target.at(r, j);
      loss += d * d;
    }
  }
  loss /= static_cast<T>(rows.size());
  auto pp = pred.node;
  return detail::make_op<T>(Tensor<T>::scalar(loss), {pp},
                            [pp, target, rows](VarNode<T>& self) {
                              if (!pp->requires_grad) return;
                              Tensor<T> g(pp->value.shape);
                              const T c = T(2) / static_cast<T>(rows.size());
                              const T gs = self.grad.item();
                              for (auto r : rows) {
                                for (std::int64_t j = 0; j < g.cols(); ++j) {
                                  g.at(r, j) = gs * c * (pp->value.at(r, j) - target.at(r, j));
                                }
                              }
                              detail::accum(pp, g);
                            });
}

template <typename T>
Var<T> l2_normalize_rows(const Var<T>& a) {
  const Tensor<T>& xv = a.value();
  if (xv.rank() != 2) throw UsageError("l2_normalize_rows: rank-2 only");
  Tensor<T> out(xv.shape);
  Tensor<T> inv_norm(Shape{xv.rows(), 1});
  for (std::int64_t i = 0; i < xv.rows(); ++i) {
    T n2 = T(0);
    for (std::int64_t j = 0; j < xv.cols(); ++j) n2 += xv.at(i, j) * xv.at(i, j);
    if (n2 <= T(0)) throw UsageError("l2_normalize_rows: zero-norm feature vector");
    const T inv = T(1) / std::sqrt(n2);
    inv_norm.at(i, 0) = inv;
    for (std::int64_t j = 0; j < xv.cols(); ++j) out.at(i, j) = xv.at(i, j) * inv;
  }
  Tensor<T> y_copy = out;
  auto pa = a.node;
  return detail::make_op<T>(std::move(out), {pa},
                            [pa, y = std::move(y_copy), inv_norm = std::move(inv_norm)](VarNode<T>& self) {
                              if (!pa->requires_grad) return;
                              Tensor<T> g(pa->value.shape);
                              for (std::int64_t i = 0; i < y.rows(); ++i) {
                                T dot = T(0);
                                for (std::int64_t j = 0; j < y.cols(); ++j) {
                                  dot += self.grad.at(i, j) * y.at(i, j);
                                }
                                for (std::int64_t j = 0; j < y.cols(); ++j) {
                                  g.at(i, j) = (self.grad.at(i, j) - y.at(i, j) * dot) * inv_norm.at(i, 0);
                                }
                              }
                              detail::accum(pa, g);
                            });
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  T s = T(0);
  for (T v : a.value().data) s += v;
  auto pa = a.node;
  return detail::make_op<T>(Tensor<T>::scalar(s), {pa}, [pa](VarNode<T>& self) {
    if (!pa->requires_grad) return;
    Tensor<T> g(pa->value.shape, self.grad.item());
    detail::accum(pa, g);
  });
}

// Symmetric temperature-scaled cross-entropy over a similarity matrix.
// literal_denominator=true excludes q=i from each denominator (the positive
// pair is then absent from the sum); false keeps it, which is the standard
// NT-Xent normalization. Log-sums are max-stabilized.
template <typename T>
Var<T> ntxent_from_sim(const Var<T>& sim, T tau, bool literal_denominator) {
  const Tensor<T>& s = sim.value();
  if (s.rank() != 2 || s.rows() != s.cols()) throw UsageError("ntxent_from_sim: square matrix required");
  const std::int64_t B = s.rows();
  if (B < 2) throw UsageError("ntxent_from_sim: batch size must be >= 2");
  if (tau <= T(0)) throw UsageError("ntxent_from_sim: tau must be positive");

  // w_row[i][q] = exp(s_iq/tau) / R_i over included q; w_col analogous per column.
  Tensor<T> w_row(s.shape), w_col(s.shape);
  T loss = T(0);
  for (std::int64_t i = 0; i < B; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::int64_t q = 0; q < B; ++q) {
      if (literal_denominator && q == i) continue;
      mx = std::max(mx, s.at(i, q) / tau);
    }
    T denom = T(0);
    for (std::int64_t q = 0; q < B; ++q) {
      if (literal_denominator && q == i) continue;
      denom += std::exp(s.at(i, q) / tau - mx);
    }
    for (std::int64_t q = 0; q < B; ++q) {
      if (literal_denominator && q == i) continue;
      w_row.at(i, q) = std::exp(s.at(i, q) / tau - mx) / denom;
    }
    loss += -(s.at(i, i) / tau) + mx + std::log(denom);
  }
  for (std::int64_t i = 0; i < B; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::int64_t q = 0; q < B; ++q) {
      if (literal_denominator && q == i) continue;
      mx = std::max(mx, s.at(q, i) / tau);
    }
    T denom = T(0);
    for (std::int64_t q = 0; q < B; ++q) {
      if (literal_denominator && q == i) continue;
      denom += std::exp(s.at(q, i) / tau - mx);
    }
    for (std::int64_t q = 0; q < B; ++q) {
      if (literal_denominator && q == i) continue;
      w_col.at(q, i) = std::exp(s.at(q, i) / tau - mx) / denom;
    }
    loss += -(s.at(i, i) / tau) + mx + std::log(denom);
  }
  loss /= static_cast<T>(2 * B);

  auto ps = sim.node;
  return detail::make_op<T>(
      Tensor<T>::scalar(loss), {ps},
      [ps, w_row = std::move(w_row), w_col = std::move(w_col), tau](VarNode<T>& self) {
        if (!ps->requires_grad) return;
        const std::int64_t B = w_row.rows();
        const T c = self.grad.item() / (static_cast<T>(2 * B) * tau);
        Tensor<T> g(ps->value.shape);
        for (std::int64_t a = 0; a < B; ++a) {
          for (std::int64_t b = 0; b < B; ++b) {
            T d = w_row.at(a, b) + w_col.at(a, b);
            if (a == b) d -= T(2);
            g.at(a, b) = c * d;
          }
        }
        detail::accum(ps, g);
      });
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

template <typename T>
void backward(const Var<T>& loss) {
  if (loss.value().numel() != 1) throw UsageError("backward: loss must be scalar");
  if (!loss.node->requires_grad) {
    throw UsageError("backward: loss does not depend on any trainable input");
  }
  // Iterative post-order topological sort over grad-requiring nodes.
  std::vector<VarNode<T>*> order;
  std::unordered_set<VarNode<T>*> visited;
  std::vector<std::pair<VarNode<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node.get(), 0);
  visited.insert(loss.node.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    bool descended = false;
    while (i < n->parents.size()) {
      VarNode<T>* p = n->parents[i++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
        descended = true;
        break;
      }
    }
    if (!descended && (stack.back().second >= stack.back().first->parents.size())) {
      order.push_back(stack.back().first);
      stack.pop_back();
    }
  }

  detail::ensure_grad(*loss.node);
  loss.node->grad.data[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    VarNode<T>* n = *it;
    if (n->backprop && n->grad_allocated()) n->backprop(*n);
  }
}

}  // namespace cosmae

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cosmae/autodiff.hpp"
#include "cosmae/tensor.hpp"

namespace cosmae {

// Ordered, named collection of parameter tensors. Iteration order is the
// insertion order and is part of the determinism contract (RNG init draws,
// optimizer moment layout and checkpoint layout all follow it).
template <typename T>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    bool trainable = true;
  };

  void add(std::string name, Tensor<T> value, bool trainable = true) {
    if (index_.count(name)) throw UsageError("ParamSet: duplicate name " + name);
    index_[name] = entries_.size();
    entries_.push_back(Entry{std::move(name), std::move(value), trainable});
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("ParamSet: unknown name " + name);
    return entries_[it->second].value;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("ParamSet: unknown name " + name);
    return entries_[it->second].value;
  }

  bool trainable(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("ParamSet: unknown name " + name);
    return entries_[it->second].trainable;
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  ParamSet subset(const std::string& prefix) const {
    ParamSet out;
    for (const auto& e : entries_) {
      if (e.name.rfind(prefix, 0) == 0) out.add(e.name, e.value, e.trainable);
    }
    return out;
  }

  void set_all_trainable(bool trainable) {
    for (auto& e : entries_) e.trainable = trainable;
  }

  bool shape_compatible(const ParamSet& o) const {
    if (size() != o.size()) return false;
    for (const auto& e : entries_) {
      if (!o.has(e.name) || o.at(e.name).shape != e.value.shape) return false;
    }
    return true;
  }

  std::int64_t total_scalars() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

  bool all_finite() const {
    for (const auto& e : entries_) {
      if (!e.value.all_finite()) return false;
    }
    return true;
  }

  // Replace values from a shape-compatible set (used by checkpoint load).
  void assign_values(const ParamSet& o) {
    if (!shape_compatible(o)) throw UsageError("ParamSet::assign_values: incompatible sets");
    for (auto& e : entries_) e.value = o.at(e.name);
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Leaf Vars for every entry of a ParamSet, keyed by name. Building this once
// per training step gives the graph stable handles whose .grad fields are
// harvested after backward().
template <typename T>
struct VarMap {
  std::unordered_map<std::string, Var<T>> vars;

  const Var<T>& at(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw UsageError("VarMap: missing param " + name);
    return it->second;
  }
};

// with_grad=false marks every leaf frozen: the stop-gradient path used for
// teacher encoders and feature extraction.
template <typename T>
VarMap<T> make_param_vars(const ParamSet<T>& ps, bool with_grad) {
  VarMap<T> out;
  for (const auto& e : ps.entries()) {
    const bool rg = with_grad && e.trainable;
    out.vars.emplace(e.name, make_leaf(e.value, rg, /*frozen=*/!rg));
  }
  return out;
}

// Collect leaf gradients back into a ParamSet shaped like `ps`. Entries whose
// leaves never received a gradient come back as zeros.
template <typename T>
ParamSet<T> collect_grads(const ParamSet<T>& ps, const VarMap<T>& vars) {
  ParamSet<T> grads;
  for (const auto& e : ps.entries()) {
    const auto& v = vars.at(e.name);
    if (v.node->grad_allocated()) {
      grads.add(e.name, v.node->grad, e.trainable);
    } else {
      grads.add(e.name, Tensor<T>(e.value.shape), e.trainable);
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Parameter initialization
// ---------------------------------------------------------------------------

inline constexpr double kInitStd = 0.02;

template <typename T>
void add_linear(ParamSet<T>& ps, Rng& rng, const std::string& prefix, std::int64_t in,
                std::int64_t out) {
  Tensor<T> w(Shape{in, out});
  w.fill_normal(rng, kInitStd);
  ps.add(prefix + ".weight", std::move(w));
  ps.add(prefix + ".bias", Tensor<T>(Shape{1, out}));
}

template <typename T>
void add_layer_norm(ParamSet<T>& ps, const std::string& prefix, std::int64_t dim) {
  ps.add(prefix + ".gamma", Tensor<T>(Shape{1, dim}, T(1)));
  ps.add(prefix + ".beta", Tensor<T>(Shape{1, dim}));
}

// Pre-norm ViT block: LN -> MHA -> residual, LN -> MLP(GELU, 4x) -> residual.
template <typename T>
void add_transformer_block(ParamSet<T>& ps, Rng& rng, const std::string& prefix,
                           std::int64_t dim) {
  add_layer_norm(ps, prefix + ".ln1", dim);
  add_linear(ps, rng, prefix + ".attn.q", dim, dim);
  add_linear(ps, rng, prefix + ".attn.k", dim, dim);
  add_linear(ps, rng, prefix + ".attn.v", dim, dim);
  add_linear(ps, rng, prefix + ".attn.out", dim, dim);
  add_layer_norm(ps, prefix + ".ln2", dim);
  add_linear(ps, rng, prefix + ".mlp.fc1", dim, 4 * dim);
  add_linear(ps, rng, prefix + ".mlp.fc2", 4 * dim, dim);
}

// ---------------------------------------------------------------------------
// Forward pieces
// ---------------------------------------------------------------------------

inline constexpr double kLayerNormEps = 1e-6;

template <typename T>
Var<T> affine(const Var<T>& x, const VarMap<T>& p, const std::string& prefix) {
  return add_rowvec(matmul(x, p.at(prefix + ".weight")), p.at(prefix + ".bias"));
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const VarMap<T>& p, const std::string& prefix) {
  return layer_norm_rows(x, p.at(prefix + ".gamma"), p.at(prefix + ".beta"),
                         static_cast<T>(kLayerNormEps));
}

template <typename T>
Var<T> multi_head_attention(const Var<T>& x, const VarMap<T>& p, const std::string& prefix,
                            std::int64_t n_heads) {
  const std::int64_t dim = x.value().cols();
  if (dim % n_heads != 0) throw ConfigError("attention: dim not divisible by head count");
  const std::int64_t hd = dim / n_heads;
  const T inv_sqrt_hd = T(1) / std::sqrt(static_cast<T>(hd));

  Var<T> q = affine(x, p, prefix + ".q");
  Var<T> k = affine(x, p, prefix + ".k");
  Var<T> v = affine(x, p, prefix + ".v");

  std::vector<Var<T>> head_outs;
  head_outs.reserve(static_cast<std::size_t>(n_heads));
  for (std::int64_t h = 0; h < n_heads; ++h) {
    Var<T> qh = slice_cols(q, h * hd, (h + 1) * hd);
    Var<T> kh = slice_cols(k, h * hd, (h + 1) * hd);
    Var<T> vh = slice_cols(v, h * hd, (h + 1) * hd);
    Var<T> scores = scale(matmul_nt(qh, kh), inv_sqrt_hd);
    head_outs.push_back(matmul(softmax_rows(scores), vh));
  }
  Var<T> merged = n_heads == 1 ? head_outs[0] : concat_cols(head_outs);
  return affine(merged, p, prefix + ".out");
}

// One pre-norm block; output shape equals input shape.
template <typename T>
Var<T> transformer_block_forward(const Var<T>& x, const VarMap<T>& p,
                                 const std::string& prefix, std::int64_t n_heads) {
  Var<T> h = add(x, multi_head_attention(layer_norm(x, p, prefix + ".ln1"), p,
                                         prefix + ".attn", n_heads));
  Var<T> m = affine(gelu(affine(layer_norm(h, p, prefix + ".ln2"), p, prefix + ".mlp.fc1")),
                    p, prefix + ".mlp.fc2");
  return add(h, m);
}

// Convenience wrapper over a bare ParamSet slice (no gradients retained).
template <typename T>
Tensor<T> transformer_block_apply(const Tensor<T>& x, const ParamSet<T>& block_params,
                                  const std::string& prefix, std::int64_t n_heads) {
  VarMap<T> vars = make_param_vars(block_params, /*with_grad=*/false);
  return transformer_block_forward(make_constant(x), vars, prefix, n_heads).value();
}

// Fixed sinusoidal position table: row p holds interleaved sin/cos of
// p / 10000^(2i/dim). Row content is deterministic in (n_positions, dim).
template <typename T>
Tensor<T> sinusoidal_table(std::int64_t n_positions, std::int64_t dim) {
  Tensor<T> out(Shape{n_positions, dim});
  for (std::int64_t pos = 0; pos < n_positions; ++pos) {
    for (std::int64_t i = 0; i < dim; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      out.at(pos, i) = static_cast<T>((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
  }
  return out;
}

}  // namespace cosmae

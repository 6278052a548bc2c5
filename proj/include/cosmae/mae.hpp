#pragma once

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "cosmae/nn.hpp"

namespace cosmae {

struct MAEConfig {
  std::int64_t image_size = 224;
  std::int64_t channels = 3;
  std::int64_t patch_size = 16;
  std::int64_t enc_depth = 12;
  std::int64_t enc_heads = 12;
  std::int64_t enc_dim = 768;
  std::int64_t dec_depth = 8;
  std::int64_t dec_heads = 16;
  std::int64_t dec_dim = 512;
  double mask_ratio = 0.75;
  bool learned_pos_embed = false;
  bool normalize_targets = false;  // per-patch target normalization, default off

  std::int64_t grid() const { return image_size / patch_size; }
  std::int64_t n_patches() const { return grid() * grid(); }
  std::int64_t patch_dim() const { return patch_size * patch_size * channels; }

  void validate() const {
    if (image_size <= 0 || channels <= 0 || patch_size <= 0) {
      throw ConfigError("mae: image_size, channels and patch_size must be positive");
    }
    if (image_size % patch_size != 0) {
      throw ConfigError("mae: image_size must be divisible by patch_size");
    }
    if (enc_dim % enc_heads != 0) throw ConfigError("mae: enc_dim not divisible by enc_heads");
    if (dec_dim % dec_heads != 0) throw ConfigError("mae: dec_dim not divisible by dec_heads");
    if (enc_depth <= 0 || dec_depth <= 0) throw ConfigError("mae: depths must be positive");
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) {
      throw ConfigError("mae: mask_ratio must lie in (0,1)");
    }
  }
};

// Random patch mask for one image. Index sets are kept sorted; together they
// partition {0..n_patches-1}.
struct MaskPlan {
  std::int64_t n_patches = 0;
  std::vector<std::int64_t> masked;
  std::vector<std::int64_t> visible;

  std::int64_t n_masked() const { return static_cast<std::int64_t>(masked.size()); }
  std::int64_t n_visible() const { return static_cast<std::int64_t>(visible.size()); }
};

// Masked-patch count: round(r * n) with ties to even, pinned for
// reproducibility across platforms.
inline std::int64_t masked_count(std::int64_t n_patches, double ratio) {
  return static_cast<std::int64_t>(std::nearbyint(ratio * static_cast<double>(n_patches)));
}

inline MaskPlan sample_mask(std::int64_t n_patches, double ratio, Rng& rng) {
  if (n_patches < 2) throw UsageError("sample_mask: need at least 2 patches");
  if (!(ratio > 0.0 && ratio < 1.0)) throw UsageError("sample_mask: ratio must lie in (0,1)");
  const std::int64_t nr = masked_count(n_patches, ratio);
  if (nr == 0 || nr == n_patches) {
    throw ConfigError("sample_mask: degenerate mask (N_r is 0 or n_patches)");
  }
  std::vector<std::int64_t> perm(static_cast<std::size_t>(n_patches));
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  MaskPlan plan;
  plan.n_patches = n_patches;
  plan.masked.assign(perm.begin(), perm.begin() + nr);
  plan.visible.assign(perm.begin() + nr, perm.end());
  std::sort(plan.masked.begin(), plan.masked.end());
  std::sort(plan.visible.begin(), plan.visible.end());
  return plan;
}

// ---------------------------------------------------------------------------
// Patchify
// ---------------------------------------------------------------------------

// [C x H x W] -> [n_patches x (patch^2 * C)]. Patches run row-major over the
// grid (top-left first); inside a patch the layout is channel, then row, then
// column.
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::int64_t patch) {
  if (image.rank() != 3) throw UsageError("patchify: expected [C x H x W]");
  const std::int64_t C = image.shape[0], H = image.shape[1], W = image.shape[2];
  if (H % patch != 0 || W % patch != 0) {
    throw ConfigError("patchify: image dims not divisible by patch size");
  }
  const std::int64_t gh = H / patch, gw = W / patch;
  Tensor<T> out(Shape{gh * gw, patch * patch * C});
  for (std::int64_t gy = 0; gy < gh; ++gy) {
    for (std::int64_t gx = 0; gx < gw; ++gx) {
      const std::int64_t p = gy * gw + gx;
      std::int64_t k = 0;
      for (std::int64_t c = 0; c < C; ++c) {
        for (std::int64_t y = 0; y < patch; ++y) {
          for (std::int64_t x = 0; x < patch; ++x) {
            out.at(p, k++) = image.data[static_cast<std::size_t>(
                (c * H + gy * patch + y) * W + gx * patch + x)];
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::int64_t patch, std::int64_t channels,
                     std::int64_t height, std::int64_t width) {
  const std::int64_t gh = height / patch, gw = width / patch;
  if (patches.rank() != 2 || patches.rows() != gh * gw ||
      patches.cols() != patch * patch * channels) {
    throw UsageError("unpatchify: patch matrix does not match target image shape");
  }
  Tensor<T> image(Shape{channels, height, width});
  for (std::int64_t gy = 0; gy < gh; ++gy) {
    for (std::int64_t gx = 0; gx < gw; ++gx) {
      const std::int64_t p = gy * gw + gx;
      std::int64_t k = 0;
      for (std::int64_t c = 0; c < channels; ++c) {
        for (std::int64_t y = 0; y < patch; ++y) {
          for (std::int64_t x = 0; x < patch; ++x) {
            image.data[static_cast<std::size_t>((c * height + gy * patch + y) * width + gx * patch +
                                                x)] = patches.at(p, k++);
          }
        }
      }
    }
  }
  return image;
}

// Per-patch target preparation for the reconstruction objective.
template <typename T>
Tensor<T> recon_targets(const Tensor<T>& patches, bool normalize) {
  if (!normalize) return patches;
  Tensor<T> out = patches;
  const std::int64_t D = patches.cols();
  for (std::int64_t p = 0; p < patches.rows(); ++p) {
    T mean = T(0);
    for (std::int64_t j = 0; j < D; ++j) mean += patches.at(p, j);
    mean /= static_cast<T>(D);
    T var = T(0);
    for (std::int64_t j = 0; j < D; ++j) {
      const T d = patches.at(p, j) - mean;
      var += d * d;
    }
    var /= static_cast<T>(D);
    const T inv = T(1) / std::sqrt(var + T(1e-6));
    for (std::int64_t j = 0; j < D; ++j) out.at(p, j) = (patches.at(p, j) - mean) * inv;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <typename T>
struct MAEModel {
  MAEConfig config;
  ParamSet<T> params;
};

// Position table with a zero row for the class token followed by sinusoid
// rows per patch index.
template <typename T>
Tensor<T> position_table(std::int64_t n_patches, std::int64_t dim) {
  Tensor<T> sin = sinusoidal_table<T>(n_patches, dim);
  Tensor<T> out(Shape{n_patches + 1, dim});
  std::copy(sin.data.begin(), sin.data.end(), out.data.begin() + dim);
  return out;
}

// Parameter names are stable across save/load; construction order doubles as
// the RNG draw order for initialization.
template <typename T>
MAEModel<T> init_mae_model(const MAEConfig& cfg, Rng& rng) {
  cfg.validate();
  MAEModel<T> model;
  model.config = cfg;
  ParamSet<T>& ps = model.params;

  add_linear(ps, rng, "encoder.patch_embed", cfg.patch_dim(), cfg.enc_dim);
  {
    Tensor<T> cls(Shape{1, cfg.enc_dim});
    cls.fill_normal(rng, kInitStd);
    ps.add("encoder.cls_token", std::move(cls));
  }
  if (cfg.learned_pos_embed) {
    Tensor<T> pe(Shape{cfg.n_patches() + 1, cfg.enc_dim});
    pe.fill_normal(rng, kInitStd);
    ps.add("encoder.pos_embed", std::move(pe));
  }
  for (std::int64_t b = 0; b < cfg.enc_depth; ++b) {
    add_transformer_block(ps, rng, "encoder.block" + std::to_string(b), cfg.enc_dim);
  }
  add_layer_norm(ps, "encoder.norm", cfg.enc_dim);

  add_linear(ps, rng, "decoder.embed", cfg.enc_dim, cfg.dec_dim);
  {
    Tensor<T> mask(Shape{1, cfg.dec_dim});
    mask.fill_normal(rng, kInitStd);
    ps.add("decoder.mask_token", std::move(mask));
  }
  if (cfg.learned_pos_embed) {
    Tensor<T> pe(Shape{cfg.n_patches() + 1, cfg.dec_dim});
    pe.fill_normal(rng, kInitStd);
    ps.add("decoder.pos_embed", std::move(pe));
  }
  for (std::int64_t b = 0; b < cfg.dec_depth; ++b) {
    add_transformer_block(ps, rng, "decoder.block" + std::to_string(b), cfg.dec_dim);
  }
  add_linear(ps, rng, "decoder.head", cfg.dec_dim, cfg.patch_dim());
  return model;
}

namespace detail {

template <typename T>
Var<T> pos_rows(const MAEConfig& cfg, const VarMap<T>& p, const std::string& name,
                std::int64_t dim, const std::vector<std::int64_t>& token_positions) {
  Var<T> table = cfg.learned_pos_embed
                     ? p.at(name)
                     : make_constant(position_table<T>(cfg.n_patches(), dim));
  return gather_rows(table, token_positions);
}

}  // namespace detail

// Encoder forward on one image. `visible` selects the patch subset fed to the
// blocks (any order); pass nullptr for the unmasked path. Token row 0 is the
// class token; patch tokens follow in the given order. Output is the
// final-norm result, [tokens x enc_dim].
template <typename T>
Var<T> encode_tokens(const MAEConfig& cfg, const VarMap<T>& p, const Tensor<T>& image,
                     const std::vector<std::int64_t>* visible) {
  if (image.rank() != 3 || image.shape[0] != cfg.channels || image.shape[1] != cfg.image_size ||
      image.shape[2] != cfg.image_size) {
    throw UsageError("encode: image does not match model config");
  }
  Tensor<T> patches = patchify(image, cfg.patch_size);

  std::vector<std::int64_t> positions;  // rows of the position table, 0 = cls
  positions.push_back(0);
  if (visible != nullptr) {
    for (auto idx : *visible) {
      if (idx < 0 || idx >= cfg.n_patches()) throw UsageError("encode: visible index out of range");
      positions.push_back(1 + idx);
    }
    // Only the visible patches get embedded.
    patches = gather_rows(patches, *visible);
  } else {
    for (std::int64_t i = 0; i < cfg.n_patches(); ++i) positions.push_back(1 + i);
  }
  Var<T> tokens = affine(make_constant(std::move(patches)), p, "encoder.patch_embed");

  Var<T> x = concat_rows<T>({p.at("encoder.cls_token"), tokens});
  x = add(x, detail::pos_rows(cfg, p, "encoder.pos_embed", cfg.enc_dim, positions));
  for (std::int64_t b = 0; b < cfg.enc_depth; ++b) {
    x = transformer_block_forward(x, p, "encoder.block" + std::to_string(b), cfg.enc_heads);
  }
  return layer_norm(x, p, "encoder.norm");
}

template <typename T>
Var<T> encode(const MAEConfig& cfg, const VarMap<T>& p, const Tensor<T>& image,
              const MaskPlan* plan) {
  if (plan == nullptr) return encode_tokens(cfg, p, image, nullptr);
  if (plan->n_patches != cfg.n_patches()) throw UsageError("encode: mask plan size mismatch");
  return encode_tokens(cfg, p, image, &plan->visible);
}

// Decoder: project encoder tokens, insert the mask token at masked grid
// positions, add positions, run the blocks and emit one prediction row per
// patch (class token dropped at the head).
template <typename T>
Var<T> decode_and_reconstruct(const MAEConfig& cfg, const VarMap<T>& p, const Var<T>& enc_out,
                              const MaskPlan& plan) {
  const std::int64_t n_vis = plan.n_visible();
  if (enc_out.value().rows() != 1 + n_vis) {
    throw UsageError("decode: encoder output does not match the mask plan");
  }
  Var<T> proj = affine(enc_out, p, "decoder.embed");
  Var<T> stacked = concat_rows<T>({proj, p.at("decoder.mask_token")});

  // Row 1+j of `proj` is visible patch plan.visible[j]; the mask token sits
  // at stacked row 1+n_vis.
  std::vector<std::int64_t> grid_to_row(static_cast<std::size_t>(cfg.n_patches()), 1 + n_vis);
  for (std::int64_t j = 0; j < n_vis; ++j) grid_to_row[static_cast<std::size_t>(plan.visible[j])] = 1 + j;

  std::vector<std::int64_t> rows;
  std::vector<std::int64_t> positions;
  rows.reserve(static_cast<std::size_t>(cfg.n_patches() + 1));
  rows.push_back(0);
  positions.push_back(0);
  for (std::int64_t i = 0; i < cfg.n_patches(); ++i) {
    rows.push_back(grid_to_row[static_cast<std::size_t>(i)]);
    positions.push_back(1 + i);
  }

  Var<T> x = gather_rows(stacked, rows);
  x = add(x, detail::pos_rows(cfg, p, "decoder.pos_embed", cfg.dec_dim, positions));
  for (std::int64_t b = 0; b < cfg.dec_depth; ++b) {
    x = transformer_block_forward(x, p, "decoder.block" + std::to_string(b), cfg.dec_heads);
  }
  Var<T> preds = affine(x, p, "decoder.head");
  std::vector<std::int64_t> patch_rows(static_cast<std::size_t>(cfg.n_patches()));
  std::iota(patch_rows.begin(), patch_rows.end(), 1);
  return gather_rows(preds, patch_rows);
}

// Mean squared reconstruction error over masked patches only: the squared
// Euclidean norm of each masked patch residual, averaged over the N_r masked
// patches. Visible positions never contribute.
template <typename T>
Var<T> recon_loss(const Var<T>& recon, const Tensor<T>& patches, const MaskPlan& plan) {
  check_same_shape(recon.value(), patches, "recon_loss");
  if (plan.masked.empty()) throw UsageError("recon_loss: empty masked set");
  return masked_sq_err(recon, patches, plan.masked);
}

template <typename T>
double recon_loss_value(const Tensor<T>& patches, const Tensor<T>& recon, const MaskPlan& plan) {
  check_same_shape(patches, recon, "recon_loss");
  if (plan.masked.empty()) throw UsageError("recon_loss: empty masked set");
  double loss = 0.0;
  for (auto k : plan.masked) {
    for (std::int64_t j = 0; j < patches.cols(); ++j) {
      const double d = static_cast<double>(patches.at(k, j)) - static_cast<double>(recon.at(k, j));
      loss += d * d;
    }
  }
  return loss / static_cast<double>(plan.masked.size());
}

// Mean over patch tokens, class token excluded. This is the feature pooling
// used for distillation and downstream evaluation.
template <typename T>
Var<T> pooled_features(const Var<T>& enc_out) {
  return mean_rows_from(enc_out, 1);
}

// Gradient-free pooled features of an encoder on full images, one row per
// image. Shared by the teacher path and downstream feature extraction; the
// weights enter the graph as frozen leaves.
template <typename T>
Tensor<T> encoder_features(const MAEConfig& cfg, const ParamSet<T>& encoder_params,
                           const std::vector<Tensor<T>>& images) {
  if (images.empty()) throw UsageError("encoder_features: empty image list");
  VarMap<T> vars = make_param_vars(encoder_params, /*with_grad=*/false);
  Tensor<T> out(Shape{static_cast<std::int64_t>(images.size()), cfg.enc_dim});
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor<T> f = pooled_features(encode(cfg, vars, images[i], nullptr)).value();
    std::copy(f.data.begin(), f.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(i) * cfg.enc_dim);
  }
  return out;
}

}  // namespace cosmae

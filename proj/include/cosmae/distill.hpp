#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cosmae/mae.hpp"
#include "cosmae/mixup.hpp"

namespace cosmae {

struct DistillConfig {
  double alpha2 = 0.4;
  LambdaMode mode = LambdaMode::Beta;
  double constant = 0.5;
  double tau = 0.5;
  double beta_weight = 0.1;
  std::int64_t projector_hidden = 128;
  bool literal_denominator = true;   // exclude q=i from the denominator sums
  bool student_unmasked_pass = false;  // use a separate unmasked student pass

  void validate() const {
    if (alpha2 <= 0.0) throw ConfigError("distill: alpha2 must be positive");
    if (constant < 0.0 || constant > 1.0) throw ConfigError("distill: constant must lie in [0,1]");
    if (tau <= 0.0) throw ConfigError("distill: tau must be positive");
    if (beta_weight < 0.0) throw ConfigError("distill: beta_weight must be >= 0");
    if (projector_hidden <= 0) throw ConfigError("distill: projector_hidden must be positive");
  }
};

inline double sample_lambda2(const DistillConfig& cfg, Rng& rng) {
  cfg.validate();
  switch (cfg.mode) {
    case LambdaMode::Beta: return rng.beta_symmetric(cfg.alpha2);
    case LambdaMode::Uniform: return rng.uniform();
    case LambdaMode::Constant: return cfg.constant;
  }
  throw ConfigError("distill: invalid mode");
}

// Teacher weights: lam2 * theta_t + (1 - lam2) * theta_{t-1}, entry-wise over
// shape-compatible sets. The result is frozen; it is rebuilt from scratch
// every step, so no optimizer or gradient state can ever attach to it. The
// endpoint values copy bit-exactly.
template <typename T>
ParamSet<T> interpolate_weights(const ParamSet<T>& theta_cur, const ParamSet<T>& theta_prev,
                                double lam2) {
  if (!theta_cur.shape_compatible(theta_prev)) {
    throw UsageError("interpolate_weights: parameter sets are not shape-compatible");
  }
  if (lam2 < 0.0 || lam2 > 1.0) throw UsageError("interpolate_weights: lam2 must lie in [0,1]");
  ParamSet<T> mixed;
  for (const auto& e : theta_cur.entries()) {
    const Tensor<T>& prev = theta_prev.at(e.name);
    Tensor<T> value(e.value.shape);
    if (lam2 == 1.0) {
      value = e.value;
    } else if (lam2 == 0.0) {
      value = prev;
    } else {
      const T l = static_cast<T>(lam2);
      for (std::size_t i = 0; i < value.data.size(); ++i) {
        value.data[i] = l * e.value.data[i] + (T(1) - l) * prev.data[i];
      }
    }
    mixed.add(e.name, std::move(value), /*trainable=*/false);
  }
  return mixed;
}

// Pooled features of the mixed encoder on full (unmasked) images. Pure
// stop-gradient path: the returned tensors are detached values.
template <typename T>
Tensor<T> teacher_features(const MAEConfig& cfg, const ParamSet<T>& theta_mixed,
                           const std::vector<Tensor<T>>& images_unmasked) {
  return encoder_features(cfg, theta_mixed, images_unmasked);
}

// ---------------------------------------------------------------------------
// Projector g
// ---------------------------------------------------------------------------

// Two affine layers with a ReLU between; persists and trains across tasks.
template <typename T>
ParamSet<T> init_projector(std::int64_t enc_dim, std::int64_t hidden, Rng& rng) {
  ParamSet<T> ps;
  add_linear(ps, rng, "projector.fc1", enc_dim, hidden);
  add_linear(ps, rng, "projector.fc2", hidden, enc_dim);
  return ps;
}

template <typename T>
Var<T> project(const VarMap<T>& proj, const Var<T>& features) {
  return affine(relu(affine(features, proj, "projector.fc1")), proj, "projector.fc2");
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Symmetric temperature-scaled cross-entropy between projected student
// features and teacher features, with cosine similarity scoring. The teacher
// side is a constant.
template <typename T>
Var<T> mim_loss(const Var<T>& student_proj, const Tensor<T>& teacher, double tau,
                bool literal_denominator = true) {
  const Tensor<T>& s = student_proj.value();
  check_same_shape(s, teacher, "mim_loss");
  if (s.rank() != 2 || s.rows() < 2) throw UsageError("mim_loss: batch size must be >= 2");
  Var<T> ns = l2_normalize_rows(student_proj);
  Var<T> nt = l2_normalize_rows(make_constant(teacher));
  Var<T> sim = matmul_nt(ns, nt);
  return ntxent_from_sim(sim, static_cast<T>(tau), literal_denominator);
}

// L = L_recon + beta * L_mim.
template <typename T>
Var<T> total_loss(const Var<T>& recon, const Var<T>& mim, double beta_weight) {
  return add(recon, scale(mim, static_cast<T>(beta_weight)));
}

inline double total_loss_value(double recon, double mim, double beta_weight) {
  return recon + beta_weight * mim;
}

}  // namespace cosmae

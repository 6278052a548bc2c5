#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cosmae/augment.hpp"
#include "cosmae/config.hpp"
#include "cosmae/distill.hpp"
#include "cosmae/mae.hpp"
#include "cosmae/mixup.hpp"
#include "cosmae/optim.hpp"

namespace cosmae {

// One stage of the task sequence. Ids are 1-based and strictly increasing.
struct TaskSpec {
  std::int64_t task_id = 0;
  std::string dataset_dir;
  std::int64_t n_images = 0;
  int epochs = 1;
  int batch_size = 1;
};

// Instrumentation counters; the first-task contract and the stop-gradient
// tests assert on these.
struct TrainStats {
  std::int64_t buffer_reads = 0;
  std::int64_t teacher_builds = 0;
  std::int64_t optimizer_steps = 0;
};

// Everything a run carries between tasks.
//
// RNG draw order (all draws come from `rng`):
//   1. state init: model parameters in construction order, then projector.
//   2. per epoch: one shuffle of the dataset index permutation.
//   3. per step: lambda2 (when distillation is active), then per image in
//      batch order: memory index + lambda1 (when data mixup is active),
//      augmentation draws (when enabled), then the mask shuffle.
//   4. after each task: buffer rebalance draws.
struct TrainState {
  RunConfig config;
  ParamSet<float> params;        // encoder.*, decoder.*, projector.*
  ParamSet<float> prev_encoder;  // empty iff no task completed
  MemoryBuffer<float> buffer;
  OptimizerState<float> optimizer;
  std::int64_t task_index = 0;  // number of completed tasks
  std::int64_t global_step = 0;
  Rng rng;
  TrainStats stats;

  bool has_prev_encoder() const { return prev_encoder.size() > 0; }
  ParamSet<float> encoder_params() const { return params.subset("encoder."); }
};

inline TrainState init_train_state(const RunConfig& cfg) {
  cfg.validate();
  TrainState st;
  st.config = cfg;
  st.rng = Rng(cfg.seed);
  MAEModel<float> model = init_mae_model<float>(cfg.model, st.rng);
  st.params = std::move(model.params);
  ParamSet<float> proj = init_projector<float>(cfg.model.enc_dim, cfg.distill.projector_hidden, st.rng);
  for (const auto& e : proj.entries()) st.params.add(e.name, e.value, e.trainable);
  st.buffer = MemoryBuffer<float>(cfg.buffer_capacity);
  st.optimizer = OptimizerState<float>::init(st.params, cfg.optim);
  return st;
}

struct EpochMetrics {
  std::int64_t epoch = 0;
  double mean_recon = 0.0;
  double mean_mim = 0.0;
  double lr_last = 0.0;
  double seconds = 0.0;
};

// Deep copy of the encoder namespace, marked frozen. Training afterwards
// cannot touch the snapshot: it is value-copied and never handed to the
// optimizer.
inline void snapshot_prev_encoder(TrainState& state) {
  state.prev_encoder = state.params.subset("encoder.");
  state.prev_encoder.set_all_trainable(false);
}

namespace detail {

struct PreparedBatch {
  std::vector<Tensor<float>> images;  // mixed + augmented
  std::vector<MaskPlan> plans;
};

inline PreparedBatch prepare_batch(TrainState& state, const std::vector<Tensor<float>>& data,
                                   const std::vector<std::size_t>& batch_idx, bool mixup_active) {
  const RunConfig& cfg = state.config;
  PreparedBatch out;
  out.images.reserve(batch_idx.size());
  out.plans.reserve(batch_idx.size());
  for (auto idx : batch_idx) {
    Tensor<float> x = data[idx];
    if (mixup_active) {
      const Tensor<float>& mem = state.buffer.sample(state.rng);
      state.stats.buffer_reads += 1;
      const double lam1 = sample_lambda(cfg.mixup, state.rng);
      x = data_mixup(x, mem, lam1);
    }
    if (cfg.augment.enabled) x = augment_image(x, cfg.augment, state.rng);
    out.images.push_back(std::move(x));
    out.plans.push_back(sample_mask(cfg.model.n_patches(), cfg.model.mask_ratio, state.rng));
  }
  return out;
}

}  // namespace detail

// Trains one task. For the first task only the reconstruction objective is
// active; from the second task on, data mixup against the buffer and
// distillation from the weight-interpolated teacher join in when toggled on.
// The buffer is rebalanced once, after training, so during task t it holds
// images of tasks 1..t-1 only.
inline std::vector<EpochMetrics> train_task(TrainState& state, const TaskSpec& task,
                                            const std::vector<Tensor<float>>& images) {
  const RunConfig& cfg = state.config;
  if (task.task_id != state.task_index + 1) {
    throw UsageError("train_task: expected task " + std::to_string(state.task_index + 1) +
                     ", got " + std::to_string(task.task_id));
  }
  if (images.empty()) throw UsageError("train_task: no training images");
  if (task.epochs <= 0 || task.batch_size <= 0) {
    throw ConfigError("train_task: epochs and batch_size must be positive");
  }
  const std::int64_t n = static_cast<std::int64_t>(images.size());
  const std::int64_t steps_per_epoch = n / task.batch_size;  // drop last partial batch
  if (steps_per_epoch == 0) throw ConfigError("train_task: batch_size exceeds the dataset");

  ScheduleConfig sched;
  sched.lr_base = cfg.optim.lr_base;
  // Warmup is capped so that short tasks still satisfy warmup < total.
  sched.warmup_epochs = std::min(cfg.warmup_epochs, task.epochs - 1);
  sched.total_epochs = task.epochs;
  sched.steps_per_epoch = static_cast<int>(steps_per_epoch);
  sched.validate();

  // Optimizer state and lr schedule restart with each task.
  state.optimizer = OptimizerState<float>::init(state.params, cfg.optim);

  const bool first_task = state.task_index == 0;
  const bool mixup_active = !first_task && cfg.toggles.data_mixup && !state.buffer.empty();
  const bool kd_active = !first_task && cfg.toggles.model_mixup_kd && state.has_prev_encoder();
  if (kd_active && task.batch_size < 2) {
    throw ConfigError("train_task: distillation needs batch_size >= 2");
  }

  std::vector<std::size_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), std::size_t{0});

  std::vector<EpochMetrics> metrics;
  std::int64_t step_in_task = 0;
  for (int epoch = 0; epoch < task.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    state.rng.shuffle(perm);
    double recon_sum = 0.0, mim_sum = 0.0, lr_last = 0.0;

    for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
      const std::uint64_t frozen_allocs_before = cosmae::detail::frozen_grad_allocs;

      double lam2 = 1.0;
      ParamSet<float> teacher_params;
      if (kd_active) {
        lam2 = sample_lambda2(cfg.distill, state.rng);
        teacher_params = interpolate_weights(state.encoder_params(), state.prev_encoder, lam2);
        state.stats.teacher_builds += 1;
      }

      std::vector<std::size_t> batch_idx(perm.begin() + s * task.batch_size,
                                         perm.begin() + (s + 1) * task.batch_size);
      detail::PreparedBatch batch = detail::prepare_batch(state, images, batch_idx, mixup_active);

      // Student pass: one masked forward per image, shared between the
      // reconstruction loss and the pooled distillation features.
      VarMap<float> vars = make_param_vars(state.params, /*with_grad=*/true);
      Var<float> recon_acc;
      std::vector<Var<float>> pooled;
      pooled.reserve(batch.images.size());
      for (std::size_t i = 0; i < batch.images.size(); ++i) {
        const Tensor<float>& x = batch.images[i];
        const MaskPlan& plan = batch.plans[i];
        Var<float> enc = encode(cfg.model, vars, x, &plan);
        Var<float> rec = decode_and_reconstruct(cfg.model, vars, enc, plan);
        Tensor<float> targets =
            recon_targets(patchify(x, cfg.model.patch_size), cfg.model.normalize_targets);
        Var<float> li = masked_sq_err(rec, targets, plan.masked);
        recon_acc = i == 0 ? li : add(recon_acc, li);
        if (kd_active) {
          if (cfg.distill.student_unmasked_pass) {
            pooled.push_back(pooled_features(encode(cfg.model, vars, x, nullptr)));
          } else {
            pooled.push_back(pooled_features(enc));
          }
        }
      }
      Var<float> loss_recon = scale(recon_acc, 1.0f / static_cast<float>(batch.images.size()));

      Var<float> loss = loss_recon;
      double mim_value = 0.0;
      if (kd_active) {
        Tensor<float> teacher = teacher_features(cfg.model, teacher_params, batch.images);
        Var<float> student = project(vars, concat_rows(pooled));
        Var<float> mim = mim_loss(student, teacher, cfg.distill.tau, cfg.distill.literal_denominator);
        mim_value = static_cast<double>(mim.value().item());
        loss = total_loss(loss_recon, mim, cfg.distill.beta_weight);
      }

      const double recon_value = static_cast<double>(loss_recon.value().item());
      if (!std::isfinite(recon_value) || !std::isfinite(mim_value) ||
          !std::isfinite(static_cast<double>(loss.value().item()))) {
        throw NumericError("train_task: non-finite loss at task " + std::to_string(task.task_id) +
                           " epoch " + std::to_string(epoch) + " step " + std::to_string(s) +
                           " (recon=" + std::to_string(recon_value) +
                           ", mim=" + std::to_string(mim_value) + ")");
      }

      backward(loss);
      ParamSet<float> grads = collect_grads(state.params, vars);
      const double lr = lr_at(step_in_task, sched);
      adamw_step(state.params, grads, state.optimizer, lr);
      state.stats.optimizer_steps += 1;
      state.global_step += 1;
      step_in_task += 1;

      if (cosmae::detail::frozen_grad_allocs != frozen_allocs_before) {
        throw NumericError("train_task: gradient buffer allocated for frozen weights");
      }

      recon_sum += recon_value;
      mim_sum += mim_value;
      lr_last = lr;
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.mean_recon = recon_sum / static_cast<double>(steps_per_epoch);
    em.mean_mim = mim_sum / static_cast<double>(steps_per_epoch);
    em.lr_last = lr_last;
    em.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    metrics.push_back(em);
  }

  snapshot_prev_encoder(state);
  state.buffer.rebalance_insert(images, task.task_id, state.rng);
  state.task_index += 1;
  return metrics;
}

// Mean masked reconstruction error over a held-out set, with masks drawn from
// a dedicated generator so every model sees the same masks.
inline double validation_recon_error(const RunConfig& cfg, const ParamSet<float>& params,
                                     const std::vector<Tensor<float>>& images,
                                     std::uint64_t mask_seed) {
  if (images.empty()) throw UsageError("validation_recon_error: empty set");
  Rng mask_rng(mask_seed);
  VarMap<float> vars = make_param_vars(params, /*with_grad=*/false);
  double sum = 0.0;
  for (const auto& x : images) {
    const MaskPlan plan = sample_mask(cfg.model.n_patches(), cfg.model.mask_ratio, mask_rng);
    Var<float> enc = encode(cfg.model, vars, x, &plan);
    Var<float> rec = decode_and_reconstruct(cfg.model, vars, enc, plan);
    Tensor<float> targets =
        recon_targets(patchify(x, cfg.model.patch_size), cfg.model.normalize_targets);
    sum += recon_loss_value(targets, rec.value(), plan);
  }
  return sum / static_cast<double>(images.size());
}

}  // namespace cosmae

#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include "cosmae/checkpoint.hpp"
#include "cosmae/eval.hpp"
#include "cosmae/manifest.hpp"
#include "cosmae/metrics.hpp"
#include "cosmae/trainer.hpp"

namespace cosmae {

struct EvalOutcome {
  double micro_map = 0.0;
  double macro_map = 0.0;
};

// Frozen-encoder protocol: extract features for both splits, fit ML-kNN on
// the train split, score the test split.
inline EvalOutcome run_downstream_eval(const RunConfig& cfg, const ParamSet<float>& params,
                                       const EvalData& data) {
  const ParamSet<float> encoder = params.subset("encoder.");
  const Tensor<float> train_feats = extract_features(cfg.model, encoder, data.train.images);
  const Tensor<float> test_feats = extract_features(cfg.model, encoder, data.test.images);
  const MLkNN knn = MLkNN::fit(train_feats, data.train.labels, cfg.eval.k, cfg.eval.smoothing);
  const Tensor<double> scores = knn.predict(test_feats);
  EvalOutcome out;
  out.micro_map = micro_map(scores, data.test.labels);
  out.macro_map = macro_map(scores, data.test.labels);
  return out;
}

struct SequenceOptions {
  std::string out_dir;                   // checkpoint target; empty = no checkpoints
  const EvalData* eval_data = nullptr;   // downstream eval set, optional
  MetricsWriter* metrics = nullptr;      // optional
  std::string run_id = "run";
};

inline std::string default_run_id(const RunConfig& cfg) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(config_digest(cfg) ^ cfg.seed));
  return std::string(buf);
}

// Trains the manifest's tasks in order, checkpointing after each one and
// optionally evaluating downstream. Tasks already covered by the state (after
// a checkpoint restore) are skipped, so resuming mid-sequence replays
// nothing. A numeric failure checkpoints the last good state and rethrows.
inline void run_sequence(TrainState& state, const TaskManifest& manifest,
                         const SequenceOptions& opt) {
  namespace fs = std::filesystem;
  manifest.validate();
  const RunConfig& cfg = state.config;

  auto emit = [&](const MetricsRecord& r) {
    if (opt.metrics != nullptr) opt.metrics->append(r);
  };

  for (const TaskSpec& task : manifest.tasks) {
    if (task.task_id <= state.task_index) continue;  // done before resume

    std::vector<Tensor<float>> images =
        load_image_stack((fs::path(task.dataset_dir) / "train.f32t").string());
    if (images.empty() || images[0].shape[0] != cfg.model.channels ||
        images[0].shape[1] != cfg.model.image_size || images[0].shape[2] != cfg.model.image_size) {
      throw ConfigError("run_sequence: task " + std::to_string(task.task_id) +
                        " images do not match the model config");
    }

    std::vector<EpochMetrics> epochs;
    try {
      epochs = train_task(state, task, images);
    } catch (const NumericError&) {
      if (!opt.out_dir.empty()) {
        save_checkpoint((fs::path(opt.out_dir) / "abort.ckpt").string(), state);
      }
      throw;
    }

    for (const auto& em : epochs) {
      MetricsRecord r;
      r.run_id = opt.run_id;
      r.task_id = task.task_id;
      r.epoch = em.epoch;
      r.loss_recon = em.mean_recon;
      r.loss_mim = em.mean_mim;
      r.lr = em.lr_last;
      r.wall_time_s = em.seconds;
      emit(r);
    }

    if (!opt.out_dir.empty()) {
      save_checkpoint((fs::path(opt.out_dir) / ("task" + std::to_string(task.task_id) + ".ckpt")).string(),
                      state);
    }

    const bool last_task = task.task_id == manifest.tasks.back().task_id;
    if (opt.eval_data != nullptr && (cfg.eval.after_each_task || last_task)) {
      const auto t0 = std::chrono::steady_clock::now();
      const EvalOutcome ev = run_downstream_eval(cfg, state.params, *opt.eval_data);
      MetricsRecord r;
      r.run_id = opt.run_id;
      r.task_id = task.task_id;
      r.epoch = -1;  // eval event
      r.micro_map = ev.micro_map;
      r.macro_map = ev.macro_map;
      r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      emit(r);
    }
  }

  if (!opt.out_dir.empty()) {
    save_checkpoint((fs::path(opt.out_dir) / "final.ckpt").string(), state);
  }
}

}  // namespace cosmae

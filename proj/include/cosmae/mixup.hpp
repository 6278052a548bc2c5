#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cosmae/tensor.hpp"

namespace cosmae {

enum class LambdaMode { Beta, Uniform, Constant };

inline LambdaMode lambda_mode_from_string(const std::string& s) {
  if (s == "beta") return LambdaMode::Beta;
  if (s == "uniform") return LambdaMode::Uniform;
  if (s == "constant") return LambdaMode::Constant;
  throw ConfigError("unknown lambda mode '" + s + "' (expected beta|uniform|constant)");
}

inline std::string to_string(LambdaMode m) {
  switch (m) {
    case LambdaMode::Beta: return "beta";
    case LambdaMode::Uniform: return "uniform";
    case LambdaMode::Constant: return "constant";
  }
  return "?";
}

// Interpolation coefficient sampling for data mixup; the uniform and constant
// modes exist for the ablation grid.
struct MixupConfig {
  double alpha1 = 0.4;
  LambdaMode mode = LambdaMode::Beta;
  double constant = 0.5;

  void validate() const {
    if (alpha1 <= 0.0) throw ConfigError("mixup: alpha1 must be positive");
    if (constant < 0.0 || constant > 1.0) throw ConfigError("mixup: constant must lie in [0,1]");
  }
};

inline double sample_lambda(const MixupConfig& cfg, Rng& rng) {
  cfg.validate();
  switch (cfg.mode) {
    case LambdaMode::Beta: return rng.beta_symmetric(cfg.alpha1);
    case LambdaMode::Uniform: return rng.uniform();
    case LambdaMode::Constant: return cfg.constant;
  }
  throw ConfigError("mixup: invalid mode");
}

// lam * current + (1-lam) * memory, element-wise.
template <typename T>
Tensor<T> data_mixup(const Tensor<T>& x_current, const Tensor<T>& x_memory, double lam) {
  check_same_shape(x_current, x_memory, "data_mixup");
  if (lam < 0.0 || lam > 1.0) throw UsageError("data_mixup: lam must lie in [0,1]");
  Tensor<T> out = x_current;
  const T l = static_cast<T>(lam);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = l * x_current.data[i] + (T(1) - l) * x_memory.data[i];
  }
  return out;
}

// Bounded store of raw past-task images, balanced per task. Entries are kept
// grouped by ascending task id; within a task the stored order is the
// (random) selection order, which makes the serialized form deterministic.
template <typename T>
class MemoryBuffer {
 public:
  struct Entry {
    Tensor<T> image;
    std::int64_t task_id = 0;
  };

  explicit MemoryBuffer(std::int64_t capacity = 0) : capacity_(capacity) {
    if (capacity < 0) throw ConfigError("MemoryBuffer: negative capacity");
  }

  std::int64_t capacity() const { return capacity_; }
  std::int64_t size() const { return static_cast<std::int64_t>(entries_.size()); }
  bool empty() const { return entries_.empty(); }
  const std::vector<Entry>& entries() const { return entries_; }

  std::map<std::int64_t, std::int64_t> per_task_counts() const {
    std::map<std::int64_t, std::int64_t> counts;
    for (const auto& e : entries_) counts[e.task_id] += 1;
    return counts;
  }

  std::int64_t max_task_id() const {
    std::int64_t mx = 0;
    for (const auto& e : entries_) mx = std::max(mx, e.task_id);
    return mx;
  }

  // Uniform over entries, with replacement across calls.
  const Tensor<T>& sample(Rng& rng) const {
    if (entries_.empty()) throw UsageError("MemoryBuffer::sample: buffer is empty");
    return entries_[rng.index(entries_.size())].image;
  }

  // Makes room for a new task: every task ends up with quota M/t, the
  // remainder going to the earliest tasks. Survivors of already-stored tasks
  // are chosen uniformly at random; the new task's images are sampled
  // uniformly without replacement.
  void rebalance_insert(const std::vector<Tensor<T>>& task_images, std::int64_t task_id,
                        Rng& rng) {
    if (task_images.empty()) throw UsageError("rebalance_insert: no images supplied");
    if (task_id <= max_task_id()) {
      throw UsageError("rebalance_insert: task ids must be strictly increasing");
    }
    if (capacity_ == 0) return;

    std::vector<std::int64_t> task_ids;
    for (const auto& e : entries_) {
      if (task_ids.empty() || task_ids.back() != e.task_id) task_ids.push_back(e.task_id);
    }
    task_ids.push_back(task_id);

    const std::int64_t t = static_cast<std::int64_t>(task_ids.size());
    const std::int64_t q = capacity_ / t;
    const std::int64_t rem = capacity_ % t;
    auto quota_of = [&](std::int64_t pos) { return q + (pos < rem ? 1 : 0); };

    std::vector<Entry> next;
    next.reserve(static_cast<std::size_t>(capacity_));
    for (std::int64_t pos = 0; pos + 1 < t; ++pos) {
      const std::int64_t tid = task_ids[static_cast<std::size_t>(pos)];
      std::vector<std::size_t> own;
      for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].task_id == tid) own.push_back(i);
      }
      const std::int64_t keep = std::min<std::int64_t>(quota_of(pos),
                                                       static_cast<std::int64_t>(own.size()));
      rng.shuffle(own);
      own.resize(static_cast<std::size_t>(keep));
      std::sort(own.begin(), own.end());  // preserve stored order among survivors
      for (auto i : own) next.push_back(entries_[i]);
    }
    {
      std::vector<std::size_t> pick(task_images.size());
      std::iota(pick.begin(), pick.end(), std::size_t{0});
      const std::int64_t take = std::min<std::int64_t>(
          quota_of(t - 1), static_cast<std::int64_t>(task_images.size()));
      rng.shuffle(pick);
      pick.resize(static_cast<std::size_t>(take));
      for (auto i : pick) next.push_back(Entry{task_images[i], task_id});
    }
    entries_ = std::move(next);
  }

  // Checkpoint restore path.
  void restore(std::int64_t capacity, std::vector<Entry> entries) {
    capacity_ = capacity;
    entries_ = std::move(entries);
  }

 private:
  std::int64_t capacity_;
  std::vector<Entry> entries_;
};

}  // namespace cosmae

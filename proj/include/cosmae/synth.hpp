#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cosmae/io.hpp"
#include "cosmae/rng.hpp"

namespace cosmae {

// Procedural stand-in for a sequence of image archives. Each task draws from
// its own distribution: a dominant spatial frequency, a dominant orientation
// and a color tint, all far enough apart that the task shift is real (the
// generator verifies raw-pixel separability before writing anything).
struct SynthPreset {
  std::string name = "desk";
  std::int64_t n_tasks = 4;
  std::int64_t train_per_task = 512;
  std::int64_t val_per_task = 64;
  std::int64_t image_size = 32;
  std::int64_t channels = 3;
  std::int64_t eval_train = 128;
  std::int64_t eval_test = 128;
  int epochs = 25;       // recorded in the manifest
  int batch_size = 64;   // recorded in the manifest

  static SynthPreset desk() { return SynthPreset{}; }

  // Small enough for smoke tests.
  static SynthPreset tiny() {
    SynthPreset p;
    p.name = "tiny";
    p.n_tasks = 2;
    p.train_per_task = 96;
    p.val_per_task = 16;
    p.eval_train = 48;
    p.eval_test = 48;
    p.epochs = 2;
    p.batch_size = 16;
    return p;
  }

  static SynthPreset from_name(const std::string& name) {
    if (name == "desk") return desk();
    if (name == "tiny") return tiny();
    throw ConfigError("unknown synth preset '" + name + "' (expected desk|tiny)");
  }
};

namespace synth_detail {

struct TaskStyle {
  double frequency;    // cycles per image
  double orientation;  // radians
  double tint[3];
};

inline TaskStyle task_style(std::int64_t task_id) {
  static const TaskStyle styles[] = {
      {1.5, 0.0, {0.75, 0.35, 0.35}},
      {4.0, M_PI / 4.0, {0.35, 0.75, 0.35}},
      {7.0, M_PI / 2.0, {0.35, 0.35, 0.75}},
      {11.0, 3.0 * M_PI / 4.0, {0.75, 0.75, 0.30}},
  };
  return styles[static_cast<std::size_t>((task_id - 1) % 4)];
}

inline float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

inline Tensor<float> task_image(const TaskStyle& style, std::int64_t size, std::int64_t channels,
                                Rng& rng) {
  const double freq = style.frequency * rng.uniform(0.85, 1.15);
  const double theta = style.orientation + rng.uniform(-0.17, 0.17);
  const double phase = rng.uniform(0.0, 2.0 * M_PI);
  const double amp = rng.uniform(0.15, 0.30);
  std::vector<double> chan_gain(static_cast<std::size_t>(channels));
  for (auto& g : chan_gain) g = rng.uniform(0.7, 1.3);

  Tensor<float> img(Shape{channels, size, size});
  const double k = 2.0 * M_PI * freq / static_cast<double>(size);
  const double cx = std::cos(theta), sx = std::sin(theta);
  for (std::int64_t y = 0; y < size; ++y) {
    for (std::int64_t x = 0; x < size; ++x) {
      const double wave = std::sin(k * (cx * static_cast<double>(x) + sx * static_cast<double>(y)) + phase);
      for (std::int64_t c = 0; c < channels; ++c) {
        const double base = style.tint[static_cast<std::size_t>(c % 3)];
        const double noise = rng.normal() * 0.02;
        img.data[static_cast<std::size_t>((c * size + y) * size + x)] =
            clamp01(base + amp * chan_gain[static_cast<std::size_t>(c)] * wave + noise);
      }
    }
  }
  return img;
}

// The five generative factors of the downstream eval set. Labels mark which
// factors are present in an image.
inline void add_factor(Tensor<float>& img, std::int64_t factor, Rng& rng) {
  const std::int64_t C = img.shape[0], S = img.shape[1];
  const double amp = rng.uniform(0.18, 0.30);
  const double phase = rng.uniform(0.0, 2.0 * M_PI);
  auto add_wave = [&](double fx, double fy) {
    for (std::int64_t y = 0; y < S; ++y) {
      for (std::int64_t x = 0; x < S; ++x) {
        const double v = amp * std::sin(2.0 * M_PI * (fx * x + fy * y) / static_cast<double>(S) + phase);
        for (std::int64_t c = 0; c < C; ++c) {
          img.data[static_cast<std::size_t>((c * S + y) * S + x)] += static_cast<float>(v);
        }
      }
    }
  };
  switch (factor) {
    case 0:  // horizontal grating (varies along y)
      add_wave(0.0, rng.uniform(2.0, 4.0));
      break;
    case 1:  // vertical grating
      add_wave(rng.uniform(2.0, 4.0), 0.0);
      break;
    case 2:  // diagonal grating
      add_wave(rng.uniform(2.0, 4.0), rng.uniform(2.0, 4.0));
      break;
    case 3: {  // Gaussian blob
      const double cy = rng.uniform(0.25, 0.75) * static_cast<double>(S);
      const double cxp = rng.uniform(0.25, 0.75) * static_cast<double>(S);
      const double sigma = rng.uniform(0.10, 0.18) * static_cast<double>(S);
      for (std::int64_t y = 0; y < S; ++y) {
        for (std::int64_t x = 0; x < S; ++x) {
          const double d2 = (y - cy) * (y - cy) + (x - cxp) * (x - cxp);
          const double v = 2.0 * amp * std::exp(-d2 / (2.0 * sigma * sigma));
          for (std::int64_t c = 0; c < C; ++c) {
            img.data[static_cast<std::size_t>((c * S + y) * S + x)] += static_cast<float>(v);
          }
        }
      }
      break;
    }
    case 4: {  // checkerboard
      const std::int64_t cell = 2 + static_cast<std::int64_t>(rng.index(3));
      for (std::int64_t y = 0; y < S; ++y) {
        for (std::int64_t x = 0; x < S; ++x) {
          const double v = (((y / cell) + (x / cell)) % 2 == 0) ? amp : -amp;
          for (std::int64_t c = 0; c < C; ++c) {
            img.data[static_cast<std::size_t>((c * S + y) * S + x)] += static_cast<float>(v);
          }
        }
      }
      break;
    }
    default: throw UsageError("add_factor: unknown factor");
  }
}

inline constexpr std::int64_t kEvalLabels = 5;

inline std::pair<Tensor<float>, std::vector<float>> eval_image(std::int64_t size,
                                                               std::int64_t channels, Rng& rng) {
  std::vector<float> labels(static_cast<std::size_t>(kEvalLabels), 0.0f);
  bool any = false;
  while (!any) {
    for (auto& l : labels) {
      l = rng.uniform() < 0.4 ? 1.0f : 0.0f;
      any |= (l == 1.0f);
    }
  }
  Tensor<float> img(Shape{channels, size, size}, 0.5f);
  for (std::int64_t f = 0; f < kEvalLabels; ++f) {
    if (labels[static_cast<std::size_t>(f)] == 1.0f) add_factor(img, f, rng);
  }
  for (auto& v : img.data) v = clamp01(v + rng.normal() * 0.02);
  return {std::move(img), std::move(labels)};
}

// 1-NN on raw pixels; returns the fraction of val images assigned to their
// own task.
inline double task_separability(const std::vector<Tensor<float>>& train_a,
                                const std::vector<Tensor<float>>& train_b,
                                const std::vector<Tensor<float>>& val_a,
                                const std::vector<Tensor<float>>& val_b) {
  auto nearest_is_a = [&](const Tensor<float>& q) {
    double best = 1e300;
    bool is_a = true;
    auto scan = [&](const std::vector<Tensor<float>>& set, bool tag) {
      for (const auto& t : set) {
        double d = 0.0;
        for (std::size_t i = 0; i < q.data.size(); ++i) {
          const double diff = static_cast<double>(q.data[i]) - static_cast<double>(t.data[i]);
          d += diff * diff;
        }
        if (d < best) {
          best = d;
          is_a = tag;
        }
      }
    };
    scan(train_a, true);
    scan(train_b, false);
    return is_a;
  };
  double correct = 0.0;
  for (const auto& q : val_a) correct += nearest_is_a(q) ? 1.0 : 0.0;
  for (const auto& q : val_b) correct += nearest_is_a(q) ? 0.0 : 1.0;
  return correct / static_cast<double>(val_a.size() + val_b.size());
}

}  // namespace synth_detail

struct SynthResult {
  std::vector<std::string> task_dirs;
  std::string eval_dir;
  std::string manifest_path;
  std::string config_path;
  double task_separability = 0.0;
};

}  // namespace cosmae

#include "cosmae/config.hpp"
#include "cosmae/manifest.hpp"

namespace cosmae {

// Generates the task datasets, the eval set, a manifest and a matching config
// file under out_dir. Two invocations with the same preset and seed write
// bitwise-identical files. Refuses a non-empty out_dir unless forced.
inline SynthResult synth_tasks(const SynthPreset& preset, std::uint64_t seed,
                               const std::string& out_dir, bool force = false) {
  namespace fs = std::filesystem;
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force) {
    throw IoError("synth: output directory " + out_dir + " is not empty (use --force)");
  }
  fs::create_directories(out_dir);

  Rng rng(seed);
  SynthResult result;
  TaskManifest manifest;

  std::vector<std::vector<Tensor<float>>> train_sets, val_sets;
  for (std::int64_t t = 1; t <= preset.n_tasks; ++t) {
    const auto style = synth_detail::task_style(t);
    std::vector<Tensor<float>> train, val;
    for (std::int64_t i = 0; i < preset.train_per_task; ++i) {
      train.push_back(synth_detail::task_image(style, preset.image_size, preset.channels, rng));
    }
    for (std::int64_t i = 0; i < preset.val_per_task; ++i) {
      val.push_back(synth_detail::task_image(style, preset.image_size, preset.channels, rng));
    }
    const std::string task_dir = (fs::path(out_dir) / ("task" + std::to_string(t))).string();
    write_tensor_f32((fs::path(task_dir) / "train.f32t").string(), stack_images(train));
    write_tensor_f32((fs::path(task_dir) / "val.f32t").string(), stack_images(val));
    result.task_dirs.push_back(task_dir);

    TaskSpec spec;
    spec.task_id = t;
    spec.dataset_dir = "task" + std::to_string(t);
    spec.epochs = preset.epochs;
    spec.batch_size = preset.batch_size;
    manifest.tasks.push_back(spec);

    train_sets.push_back(std::move(train));
    val_sets.push_back(std::move(val));
  }

  // Multi-label eval set; labels are the generative factors present.
  {
    std::vector<Tensor<float>> images;
    std::vector<float> labels;
    for (std::int64_t i = 0; i < preset.eval_train + preset.eval_test; ++i) {
      auto [img, lab] = synth_detail::eval_image(preset.image_size, preset.channels, rng);
      images.push_back(std::move(img));
      labels.insert(labels.end(), lab.begin(), lab.end());
    }
    const std::string eval_dir = (fs::path(out_dir) / "eval").string();
    auto slice = [&](std::int64_t from, std::int64_t count) {
      std::vector<Tensor<float>> imgs(images.begin() + from, images.begin() + from + count);
      Tensor<float> lab(Shape{count, synth_detail::kEvalLabels});
      std::copy(labels.begin() + from * synth_detail::kEvalLabels,
                labels.begin() + (from + count) * synth_detail::kEvalLabels, lab.data.begin());
      return std::make_pair(std::move(imgs), std::move(lab));
    };
    auto [train_imgs, train_lab] = slice(0, preset.eval_train);
    auto [test_imgs, test_lab] = slice(preset.eval_train, preset.eval_test);
    write_tensor_f32((fs::path(eval_dir) / "images_train.f32t").string(), stack_images(train_imgs));
    write_tensor_f32((fs::path(eval_dir) / "labels_train.f32t").string(), train_lab);
    write_tensor_f32((fs::path(eval_dir) / "images_test.f32t").string(), stack_images(test_imgs));
    write_tensor_f32((fs::path(eval_dir) / "labels_test.f32t").string(), test_lab);
    result.eval_dir = eval_dir;
    manifest.eval_dir = "eval";
  }

  // Distribution-shift check: tasks must be separable on raw pixels.
  if (preset.n_tasks >= 2) {
    result.task_separability = synth_detail::task_separability(train_sets[0], train_sets[1],
                                                               val_sets[0], val_sets[1]);
    if (result.task_separability <= 0.9) {
      throw NumericError("synth: task 1 vs task 2 separability " +
                         std::to_string(result.task_separability) +
                         " is below 0.9; generated tasks do not shift enough");
    }
  }

  result.manifest_path = (fs::path(out_dir) / "manifest.json").string();
  write_manifest(result.manifest_path, manifest);

  RunConfig cfg = RunConfig::desk_preset();
  cfg.seed = seed;
  cfg.model.image_size = preset.image_size;
  cfg.model.channels = preset.channels;
  cfg.augment.crop_out_size = preset.image_size;
  if (preset.epochs <= cfg.warmup_epochs) cfg.warmup_epochs = std::max(0, preset.epochs - 1);
  result.config_path = (fs::path(out_dir) / "config.cfg").string();
  io::spit(result.config_path, serialize_config(cfg));
  return result;
}

}  // namespace cosmae

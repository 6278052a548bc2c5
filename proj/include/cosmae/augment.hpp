#pragma once

#include <cmath>
#include <cstdint>

#include "cosmae/config.hpp"
#include "cosmae/tensor.hpp"

namespace cosmae {

template <typename T>
Tensor<T> hflip(const Tensor<T>& image) {
  if (image.rank() != 3) throw UsageError("hflip: expected [C x H x W]");
  const std::int64_t C = image.shape[0], H = image.shape[1], W = image.shape[2];
  Tensor<T> out(image.shape);
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t y = 0; y < H; ++y) {
      for (std::int64_t x = 0; x < W; ++x) {
        out.data[static_cast<std::size_t>((c * H + y) * W + x)] =
            image.data[static_cast<std::size_t>((c * H + y) * W + (W - 1 - x))];
      }
    }
  }
  return out;
}

// Square crop of side `side` at (top, left), bilinearly resized to out_size.
template <typename T>
Tensor<T> crop_resize(const Tensor<T>& image, std::int64_t top, std::int64_t left,
                      std::int64_t side, std::int64_t out_size) {
  const std::int64_t C = image.shape[0], H = image.shape[1], W = image.shape[2];
  if (top < 0 || left < 0 || top + side > H || left + side > W || side <= 0) {
    throw UsageError("crop_resize: crop window out of bounds");
  }
  Tensor<T> out(Shape{C, out_size, out_size});
  const double s = static_cast<double>(side) / static_cast<double>(out_size);
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t oy = 0; oy < out_size; ++oy) {
      const double sy = (static_cast<double>(oy) + 0.5) * s - 0.5;
      const std::int64_t y0c = std::clamp<std::int64_t>(
          static_cast<std::int64_t>(std::floor(sy)), 0, side - 1);
      const std::int64_t y1c = std::min<std::int64_t>(y0c + 1, side - 1);
      const double fy = std::clamp(sy - std::floor(sy), 0.0, 1.0);
      for (std::int64_t ox = 0; ox < out_size; ++ox) {
        const double sx = (static_cast<double>(ox) + 0.5) * s - 0.5;
        const std::int64_t x0c = std::clamp<std::int64_t>(
            static_cast<std::int64_t>(std::floor(sx)), 0, side - 1);
        const std::int64_t x1c = std::min<std::int64_t>(x0c + 1, side - 1);
        const double fx = std::clamp(sx - std::floor(sx), 0.0, 1.0);
        auto px = [&](std::int64_t yy, std::int64_t xx) {
          return static_cast<double>(
              image.data[static_cast<std::size_t>((c * H + top + yy) * W + left + xx)]);
        };
        const double v = (1.0 - fy) * ((1.0 - fx) * px(y0c, x0c) + fx * px(y0c, x1c)) +
                         fy * ((1.0 - fx) * px(y1c, x0c) + fx * px(y1c, x1c));
        out.data[static_cast<std::size_t>((c * out_size + oy) * out_size + ox)] = static_cast<T>(v);
      }
    }
  }
  return out;
}

// Random horizontal flip followed by random resized crop. Draw order per
// image: u_flip, then (u_area, u_top, u_left) when cropping is enabled.
template <typename T>
Tensor<T> augment_image(const Tensor<T>& image, const AugmentConfig& cfg, Rng& rng) {
  if (!cfg.enabled) return image;
  Tensor<T> out = image;
  if (rng.uniform() < cfg.hflip_prob) out = hflip(out);
  const std::int64_t H = out.shape[1];
  const double area = rng.uniform(cfg.crop_min_ratio, 1.0);
  std::int64_t side = static_cast<std::int64_t>(std::lround(std::sqrt(area) * static_cast<double>(H)));
  side = std::clamp<std::int64_t>(side, 1, H);
  const std::int64_t top = static_cast<std::int64_t>(rng.index(static_cast<std::size_t>(H - side + 1)));
  const std::int64_t left = static_cast<std::int64_t>(rng.index(static_cast<std::size_t>(H - side + 1)));
  return crop_resize(out, top, left, side, cfg.crop_out_size);
}

}  // namespace cosmae

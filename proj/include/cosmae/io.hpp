#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cosmae/eval.hpp"
#include "cosmae/tensor.hpp"

namespace cosmae {

namespace io {

// All on-disk formats are little-endian regardless of host.

inline void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v & 0xffffffffu));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

inline void put_f32(std::string& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

inline void put_f64(std::string& out, double f) {
  std::uint64_t v;
  std::memcpy(&v, &f, 8);
  put_u64(out, v);
}

// Cursor over an in-memory file image; every failure reports the offset.
class Reader {
 public:
  Reader(std::string data, std::string origin)
      : data_(std::move(data)), origin_(std::move(origin)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool at_end() const { return pos_ == data_.size(); }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw IoError(origin_ + ": truncated " + what + " at byte offset " +
                    std::to_string(pos_) + " (need " + std::to_string(n) + " bytes, have " +
                    std::to_string(remaining()) + ")");
    }
  }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  std::uint64_t u64(const char* what) {
    const std::uint64_t lo = u32(what);
    const std::uint64_t hi = u32(what);
    return lo | (hi << 32);
  }

  float f32(const char* what) {
    const std::uint32_t v = u32(what);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }

  double f64(const char* what) {
    const std::uint64_t v = u64(what);
    double f;
    std::memcpy(&f, &v, 8);
    return f;
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  const std::string& origin() const { return origin_; }

 private:
  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

inline std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return data;
}

// Atomic write: temp file in the same directory, then rename.
inline void spit(const std::string& path, const std::string& data) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!f) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, target);
}

}  // namespace io

// ---------------------------------------------------------------------------
// Raw tensor file: "F32T", u8 rank, rank x u32 dims, float32 payload.
// ---------------------------------------------------------------------------

inline constexpr char kTensorMagic[4] = {'F', '3', '2', 'T'};

inline std::string encode_tensor_f32(const Tensor<float>& t) {
  if (t.rank() > 255) throw UsageError("tensor file: rank too large");
  std::string out(kTensorMagic, 4);
  out.push_back(static_cast<char>(t.rank()));
  for (auto d : t.shape) io::put_u32(out, static_cast<std::uint32_t>(d));
  for (float v : t.data) io::put_f32(out, v);
  return out;
}

inline void write_tensor_f32(const std::string& path, const Tensor<float>& t) {
  io::spit(path, encode_tensor_f32(t));
}

inline Tensor<float> decode_tensor_f32(io::Reader& r) {
  const std::string magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), kTensorMagic, 4) != 0) {
    throw IoError(r.origin() + ": bad magic at byte offset 0 (expected F32T)");
  }
  const std::uint8_t rank = r.u8("rank");
  Shape shape;
  std::int64_t numel = 1;
  for (std::uint8_t i = 0; i < rank; ++i) {
    const std::uint32_t d = r.u32("dims");
    if (d == 0) throw IoError(r.origin() + ": zero dimension in tensor header");
    shape.push_back(static_cast<std::int64_t>(d));
    numel *= d;
  }
  r.need(static_cast<std::size_t>(numel) * 4, "float32 payload");
  Tensor<float> t;
  t.shape = std::move(shape);
  t.data.resize(static_cast<std::size_t>(numel));
  for (auto& v : t.data) v = r.f32("float32 payload");
  return t;
}

inline Tensor<float> read_tensor_f32(const std::string& path) {
  io::Reader r(io::slurp(path), path);
  Tensor<float> t = decode_tensor_f32(r);
  if (!r.at_end()) {
    throw IoError(path + ": trailing bytes after payload (expected " +
                  std::to_string(r.offset()) + " bytes total, file has " +
                  std::to_string(r.offset() + r.remaining()) + ")");
  }
  return t;
}

// ---------------------------------------------------------------------------
// Dataset helpers
// ---------------------------------------------------------------------------

// Split an [N x C x H x W] stack into per-image tensors.
inline std::vector<Tensor<float>> split_image_stack(const Tensor<float>& stack) {
  if (stack.rank() != 4) throw IoError("image stack: expected rank-4 [N x C x H x W]");
  const std::int64_t n = stack.shape[0];
  const std::int64_t per = stack.numel() / n;
  std::vector<Tensor<float>> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    Tensor<float> img;
    img.shape = {stack.shape[1], stack.shape[2], stack.shape[3]};
    img.data.assign(stack.data.begin() + static_cast<std::ptrdiff_t>(i * per),
                    stack.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
    out.push_back(std::move(img));
  }
  return out;
}

inline Tensor<float> stack_images(const std::vector<Tensor<float>>& images) {
  if (images.empty()) throw UsageError("stack_images: empty list");
  const Shape& s = images[0].shape;
  Tensor<float> out;
  out.shape = {static_cast<std::int64_t>(images.size()), s[0], s[1], s[2]};
  out.data.reserve(static_cast<std::size_t>(shape_numel(out.shape)));
  for (const auto& img : images) {
    if (img.shape != s) throw UsageError("stack_images: inhomogeneous shapes");
    out.data.insert(out.data.end(), img.data.begin(), img.data.end());
  }
  return out;
}

inline std::vector<Tensor<float>> load_image_stack(const std::string& path) {
  return split_image_stack(read_tensor_f32(path));
}

// Eval set directory layout: images_train.f32t, labels_train.f32t,
// images_test.f32t, labels_test.f32t.
struct EvalData {
  MultiLabelEvalSet train;
  MultiLabelEvalSet test;
};

inline EvalData load_eval_data(const std::string& dir) {
  namespace fs = std::filesystem;
  EvalData d;
  d.train.images = load_image_stack((fs::path(dir) / "images_train.f32t").string());
  d.train.labels = read_tensor_f32((fs::path(dir) / "labels_train.f32t").string());
  d.test.images = load_image_stack((fs::path(dir) / "images_test.f32t").string());
  d.test.labels = read_tensor_f32((fs::path(dir) / "labels_test.f32t").string());
  d.train.validate();
  d.test.validate();
  return d;
}

}  // namespace cosmae

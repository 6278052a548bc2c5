#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "cosmae/io.hpp"
#include "cosmae/trainer.hpp"

namespace cosmae {

// Checkpoint layout (little-endian throughout):
//   magic "CSMAE1", u32 version, u64 config digest, u32 task_index,
//   u64 global step, rng engine state (u32 length + bytes),
//   params section, prev-encoder section (u8 presence flag + section),
//   buffer section (u32 count, then per entry u32 task_id + tensor),
//   optimizer section (u64 step_count + first/second moment sections).
// A named tensor section is: u32 count, then per tensor u16 name length,
// name bytes, u8 dtype code (0 = float32), u8 trainable flag, u8 rank,
// rank x u32 dims, payload.
inline constexpr char kCheckpointMagic[6] = {'C', 'S', 'M', 'A', 'E', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_named_tensors(std::string& out, const ParamSet<float>& ps) {
  io::put_u32(out, static_cast<std::uint32_t>(ps.size()));
  for (const auto& e : ps.entries()) {
    if (e.name.size() > 0xffff) throw UsageError("checkpoint: tensor name too long");
    out.push_back(static_cast<char>(e.name.size() & 0xff));
    out.push_back(static_cast<char>((e.name.size() >> 8) & 0xff));
    out += e.name;
    out.push_back(0);  // dtype code: float32
    out.push_back(e.trainable ? 1 : 0);
    out.push_back(static_cast<char>(e.value.rank()));
    for (auto d : e.value.shape) io::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : e.value.data) io::put_f32(out, v);
  }
}

inline ParamSet<float> get_named_tensors(io::Reader& r) {
  ParamSet<float> ps;
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len =
        static_cast<std::uint32_t>(r.u8("name length")) |
        (static_cast<std::uint32_t>(r.u8("name length")) << 8);
    const std::string name = r.bytes(name_len, "tensor name");
    const std::uint8_t dtype = r.u8("dtype code");
    if (dtype != 0) throw IoError(r.origin() + ": unsupported dtype code " + std::to_string(dtype));
    const bool trainable = r.u8("trainable flag") != 0;
    const std::uint8_t rank = r.u8("rank");
    Shape shape;
    std::int64_t numel = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32("dims");
      shape.push_back(static_cast<std::int64_t>(dim));
      numel *= dim;
    }
    Tensor<float> t;
    t.shape = std::move(shape);
    t.data.resize(static_cast<std::size_t>(numel));
    for (auto& v : t.data) v = r.f32("tensor payload");
    ps.add(name, std::move(t), trainable);
  }
  return ps;
}

}  // namespace detail

struct CheckpointData {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t config_digest = 0;
  std::int64_t task_index = 0;
  std::int64_t global_step = 0;
  std::string rng_state;
  ParamSet<float> params;
  bool has_prev_encoder = false;
  ParamSet<float> prev_encoder;
  std::vector<MemoryBuffer<float>::Entry> buffer_entries;
  std::int64_t optimizer_step_count = 0;
  ParamSet<float> opt_m;
  ParamSet<float> opt_v;
};

inline std::string encode_checkpoint(const CheckpointData& ck) {
  std::string out(kCheckpointMagic, 6);
  io::put_u32(out, ck.version);
  io::put_u64(out, ck.config_digest);
  io::put_u32(out, static_cast<std::uint32_t>(ck.task_index));
  io::put_u64(out, static_cast<std::uint64_t>(ck.global_step));
  io::put_u32(out, static_cast<std::uint32_t>(ck.rng_state.size()));
  out += ck.rng_state;
  detail::put_named_tensors(out, ck.params);
  out.push_back(ck.has_prev_encoder ? 1 : 0);
  if (ck.has_prev_encoder) detail::put_named_tensors(out, ck.prev_encoder);
  io::put_u32(out, static_cast<std::uint32_t>(ck.buffer_entries.size()));
  for (const auto& e : ck.buffer_entries) {
    io::put_u32(out, static_cast<std::uint32_t>(e.task_id));
    out.push_back(static_cast<char>(e.image.rank()));
    for (auto d : e.image.shape) io::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : e.image.data) io::put_f32(out, v);
  }
  io::put_u64(out, static_cast<std::uint64_t>(ck.optimizer_step_count));
  detail::put_named_tensors(out, ck.opt_m);
  detail::put_named_tensors(out, ck.opt_v);
  return out;
}

inline CheckpointData decode_checkpoint(io::Reader& r) {
  const std::string magic = r.bytes(6, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 6) != 0) {
    throw IoError(r.origin() + ": bad magic (expected CSMAE1)");
  }
  CheckpointData ck;
  ck.version = r.u32("version");
  if (ck.version != kCheckpointVersion) {
    throw IoError(r.origin() + ": unsupported checkpoint version " + std::to_string(ck.version));
  }
  ck.config_digest = r.u64("config digest");
  ck.task_index = r.u32("task index");
  ck.global_step = static_cast<std::int64_t>(r.u64("global step"));
  const std::uint32_t rng_len = r.u32("rng state length");
  ck.rng_state = r.bytes(rng_len, "rng state");
  ck.params = detail::get_named_tensors(r);
  ck.has_prev_encoder = r.u8("prev-encoder flag") != 0;
  if (ck.has_prev_encoder) ck.prev_encoder = detail::get_named_tensors(r);
  const std::uint32_t n_buf = r.u32("buffer count");
  for (std::uint32_t i = 0; i < n_buf; ++i) {
    MemoryBuffer<float>::Entry e;
    e.task_id = r.u32("buffer task id");
    const std::uint8_t rank = r.u8("buffer image rank");
    Shape shape;
    std::int64_t numel = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32("buffer image dims");
      shape.push_back(static_cast<std::int64_t>(dim));
      numel *= dim;
    }
    e.image.shape = std::move(shape);
    e.image.data.resize(static_cast<std::size_t>(numel));
    for (auto& v : e.image.data) v = r.f32("buffer image payload");
    ck.buffer_entries.push_back(std::move(e));
  }
  ck.optimizer_step_count = static_cast<std::int64_t>(r.u64("optimizer step count"));
  ck.opt_m = detail::get_named_tensors(r);
  ck.opt_v = detail::get_named_tensors(r);
  return ck;
}

inline CheckpointData snapshot_checkpoint(const TrainState& state) {
  CheckpointData ck;
  ck.config_digest = config_digest(state.config);
  ck.task_index = state.task_index;
  ck.global_step = state.global_step;
  ck.rng_state = state.rng.save_state();
  ck.params = state.params;
  ck.has_prev_encoder = state.has_prev_encoder();
  if (ck.has_prev_encoder) ck.prev_encoder = state.prev_encoder;
  ck.buffer_entries = state.buffer.entries();
  ck.optimizer_step_count = state.optimizer.step_count;
  ck.opt_m = state.optimizer.m;
  ck.opt_v = state.optimizer.v;
  return ck;
}

inline void save_checkpoint(const std::string& path, const TrainState& state) {
  io::spit(path, encode_checkpoint(snapshot_checkpoint(state)));
}

inline CheckpointData read_checkpoint(const std::string& path) {
  io::Reader r(io::slurp(path), path);
  CheckpointData ck = decode_checkpoint(r);
  if (!r.at_end()) throw IoError(path + ": trailing bytes after checkpoint payload");
  return ck;
}

// Rebuilds a TrainState from a checkpoint. The config must hash to the stored
// digest unless force is set.
inline TrainState restore_train_state(const RunConfig& cfg, const CheckpointData& ck,
                                      bool force = false) {
  if (!force && config_digest(cfg) != ck.config_digest) {
    throw ConfigError("checkpoint: config digest mismatch (use --force to override)");
  }
  TrainState st = init_train_state(cfg);
  st.params.assign_values(ck.params);
  if (ck.has_prev_encoder) {
    st.prev_encoder = ck.prev_encoder;
    st.prev_encoder.set_all_trainable(false);
  }
  st.buffer.restore(cfg.buffer_capacity, ck.buffer_entries);
  st.optimizer = OptimizerState<float>::init(st.params, cfg.optim);
  st.optimizer.step_count = ck.optimizer_step_count;
  st.optimizer.m.assign_values(ck.opt_m);
  st.optimizer.v.assign_values(ck.opt_v);
  st.task_index = ck.task_index;
  st.global_step = ck.global_step;
  st.rng.load_state(ck.rng_state);
  return st;
}

}  // namespace cosmae

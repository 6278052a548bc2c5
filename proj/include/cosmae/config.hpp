#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "cosmae/distill.hpp"
#include "cosmae/mae.hpp"
#include "cosmae/mixup.hpp"
#include "cosmae/optim.hpp"

namespace cosmae {

struct AugmentConfig {
  bool enabled = true;
  double hflip_prob = 0.5;
  double crop_min_ratio = 0.8;  // minimum area fraction of the random crop
  std::int64_t crop_out_size = 224;

  void validate() const {
    if (hflip_prob < 0.0 || hflip_prob > 1.0) {
      throw ConfigError("augment: hflip_prob must lie in [0,1]");
    }
    if (!(crop_min_ratio > 0.0 && crop_min_ratio <= 1.0)) {
      throw ConfigError("augment: crop_min_ratio must lie in (0,1]");
    }
    if (crop_out_size <= 0) throw ConfigError("augment: crop_out_size must be positive");
  }
};

struct Toggles {
  bool data_mixup = true;
  bool model_mixup_kd = true;
};

struct EvalConfig {
  std::int64_t k = 10;
  double smoothing = 1.0;
  bool after_each_task = true;
};

// Full run configuration. Flat key=value text with dotted sections on disk;
// unknown keys are rejected with the offending line.
struct RunConfig {
  std::uint64_t seed = 0;
  Toggles toggles;
  MAEConfig model;
  MixupConfig mixup;
  DistillConfig distill;
  AugmentConfig augment;
  AdamWConfig optim;
  int warmup_epochs = 10;
  std::int64_t buffer_capacity = 1000;
  EvalConfig eval;

  void validate() const {
    model.validate();
    mixup.validate();
    distill.validate();
    augment.validate();
    if (augment.enabled && augment.crop_out_size != model.image_size) {
      throw ConfigError("augment.crop_out_size must equal model.image_size");
    }
    if (optim.lr_base <= 0.0) throw ConfigError("optim.lr_base must be positive");
    if (warmup_epochs < 0) throw ConfigError("optim.warmup_epochs must be >= 0");
    if (buffer_capacity < 0) throw ConfigError("buffer.capacity must be >= 0");
    if (eval.k <= 0) throw ConfigError("eval.k must be positive");
    if (eval.smoothing <= 0.0) throw ConfigError("eval.smoothing must be positive");
  }

  // Full-scale values as reported for the reference setup.
  static RunConfig full_scale_preset() {
    RunConfig c;
    c.model.image_size = 224;
    c.model.channels = 3;
    c.model.patch_size = 16;
    c.model.enc_depth = 12;
    c.model.enc_heads = 12;
    c.model.enc_dim = 768;
    c.model.dec_depth = 8;
    c.model.dec_heads = 16;
    c.model.dec_dim = 512;
    c.model.mask_ratio = 0.75;
    c.mixup.alpha1 = 0.4;
    c.distill.alpha2 = 0.4;
    c.distill.tau = 0.5;
    c.distill.beta_weight = 0.1;
    c.distill.projector_hidden = 128;
    c.augment.hflip_prob = 0.5;
    c.augment.crop_min_ratio = 0.8;
    c.augment.crop_out_size = 224;
    c.optim.lr_base = 1e-3;
    c.warmup_epochs = 10;
    c.buffer_capacity = 1000;
    c.eval.k = 10;
    return c;
  }

  // Laptop-scale preset used by the synthetic workbench.
  static RunConfig desk_preset() {
    RunConfig c;
    c.model.image_size = 32;
    c.model.channels = 3;
    c.model.patch_size = 8;
    c.model.enc_depth = 2;
    c.model.enc_heads = 4;
    c.model.enc_dim = 32;
    c.model.dec_depth = 1;
    c.model.dec_heads = 4;
    c.model.dec_dim = 32;
    c.model.mask_ratio = 0.75;
    c.mixup.alpha1 = 0.4;
    c.distill.alpha2 = 0.4;
    c.distill.tau = 0.5;
    c.distill.beta_weight = 0.1;
    c.distill.projector_hidden = 128;
    c.augment.enabled = true;
    c.augment.hflip_prob = 0.5;
    c.augment.crop_min_ratio = 0.8;
    c.augment.crop_out_size = 32;
    c.optim.lr_base = 2e-3;
    c.optim.weight_decay = 0.05;
    c.warmup_epochs = 2;
    c.buffer_capacity = 256;
    c.eval.k = 10;
    return c;
  }
};

namespace detail {

struct ConfigField {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("expected a boolean (true/false), got '" + v + "'");
}

inline std::int64_t parse_int(const std::string& v) {
  std::size_t pos = 0;
  std::int64_t r = 0;
  try {
    r = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("expected an integer, got '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError("expected an integer, got '" + v + "'");
  return r;
}

inline double parse_double(const std::string& v) {
  std::size_t pos = 0;
  double r = 0;
  try {
    r = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("expected a number, got '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError("expected a number, got '" + v + "'");
  return r;
}

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// Schema: one entry per key, in canonical serialization order.
inline const std::map<std::string, ConfigField>& config_schema() {
  static const std::map<std::string, ConfigField> schema = [] {
    std::map<std::string, ConfigField> m;
    auto add_u64 = [&m](const std::string& k, std::uint64_t RunConfig::* f) {
      m[k] = {[f](const RunConfig& c) { return std::to_string(c.*f); },
              [f](RunConfig& c, const std::string& v) {
                c.*f = static_cast<std::uint64_t>(parse_int(v));
              }};
    };
    auto add_bool = [&m](const std::string& k, auto getter, auto setter) {
      m[k] = {[getter](const RunConfig& c) { return getter(c) ? std::string("true") : std::string("false"); },
              [setter](RunConfig& c, const std::string& v) { setter(c, parse_bool(v)); }};
    };
    auto add_int = [&m](const std::string& k, auto getter, auto setter) {
      m[k] = {[getter](const RunConfig& c) { return std::to_string(getter(c)); },
              [setter](RunConfig& c, const std::string& v) { setter(c, parse_int(v)); }};
    };
    auto add_dbl = [&m](const std::string& k, auto getter, auto setter) {
      m[k] = {[getter](const RunConfig& c) { return fmt_double(getter(c)); },
              [setter](RunConfig& c, const std::string& v) { setter(c, parse_double(v)); }};
    };
    auto add_str = [&m](const std::string& k, auto getter, auto setter) {
      m[k] = {[getter](const RunConfig& c) { return getter(c); },
              [setter](RunConfig& c, const std::string& v) { setter(c, v); }};
    };

    add_u64("seed", &RunConfig::seed);
    add_bool("toggles.data_mixup", [](const RunConfig& c) { return c.toggles.data_mixup; },
             [](RunConfig& c, bool v) { c.toggles.data_mixup = v; });
    add_bool("toggles.model_mixup_kd", [](const RunConfig& c) { return c.toggles.model_mixup_kd; },
             [](RunConfig& c, bool v) { c.toggles.model_mixup_kd = v; });

    add_int("model.image_size", [](const RunConfig& c) { return c.model.image_size; },
            [](RunConfig& c, std::int64_t v) { c.model.image_size = v; });
    add_int("model.channels", [](const RunConfig& c) { return c.model.channels; },
            [](RunConfig& c, std::int64_t v) { c.model.channels = v; });
    add_int("model.patch_size", [](const RunConfig& c) { return c.model.patch_size; },
            [](RunConfig& c, std::int64_t v) { c.model.patch_size = v; });
    add_int("model.enc_depth", [](const RunConfig& c) { return c.model.enc_depth; },
            [](RunConfig& c, std::int64_t v) { c.model.enc_depth = v; });
    add_int("model.enc_heads", [](const RunConfig& c) { return c.model.enc_heads; },
            [](RunConfig& c, std::int64_t v) { c.model.enc_heads = v; });
    add_int("model.enc_dim", [](const RunConfig& c) { return c.model.enc_dim; },
            [](RunConfig& c, std::int64_t v) { c.model.enc_dim = v; });
    add_int("model.dec_depth", [](const RunConfig& c) { return c.model.dec_depth; },
            [](RunConfig& c, std::int64_t v) { c.model.dec_depth = v; });
    add_int("model.dec_heads", [](const RunConfig& c) { return c.model.dec_heads; },
            [](RunConfig& c, std::int64_t v) { c.model.dec_heads = v; });
    add_int("model.dec_dim", [](const RunConfig& c) { return c.model.dec_dim; },
            [](RunConfig& c, std::int64_t v) { c.model.dec_dim = v; });
    add_dbl("model.mask_ratio", [](const RunConfig& c) { return c.model.mask_ratio; },
            [](RunConfig& c, double v) { c.model.mask_ratio = v; });
    add_bool("model.learned_pos_embed", [](const RunConfig& c) { return c.model.learned_pos_embed; },
             [](RunConfig& c, bool v) { c.model.learned_pos_embed = v; });
    add_bool("model.norm_pix_targets", [](const RunConfig& c) { return c.model.normalize_targets; },
             [](RunConfig& c, bool v) { c.model.normalize_targets = v; });

    add_dbl("mixup.alpha1", [](const RunConfig& c) { return c.mixup.alpha1; },
            [](RunConfig& c, double v) { c.mixup.alpha1 = v; });
    add_str("mixup.mode", [](const RunConfig& c) { return to_string(c.mixup.mode); },
            [](RunConfig& c, const std::string& v) { c.mixup.mode = lambda_mode_from_string(v); });
    add_dbl("mixup.constant", [](const RunConfig& c) { return c.mixup.constant; },
            [](RunConfig& c, double v) { c.mixup.constant = v; });

    add_dbl("distill.alpha2", [](const RunConfig& c) { return c.distill.alpha2; },
            [](RunConfig& c, double v) { c.distill.alpha2 = v; });
    add_str("distill.mode", [](const RunConfig& c) { return to_string(c.distill.mode); },
            [](RunConfig& c, const std::string& v) { c.distill.mode = lambda_mode_from_string(v); });
    add_dbl("distill.constant", [](const RunConfig& c) { return c.distill.constant; },
            [](RunConfig& c, double v) { c.distill.constant = v; });
    add_dbl("distill.tau", [](const RunConfig& c) { return c.distill.tau; },
            [](RunConfig& c, double v) { c.distill.tau = v; });
    add_dbl("distill.beta_weight", [](const RunConfig& c) { return c.distill.beta_weight; },
            [](RunConfig& c, double v) { c.distill.beta_weight = v; });
    add_int("distill.projector_hidden", [](const RunConfig& c) { return c.distill.projector_hidden; },
            [](RunConfig& c, std::int64_t v) { c.distill.projector_hidden = v; });
    m["distill.denominator"] = {
        [](const RunConfig& c) { return c.distill.literal_denominator ? std::string("literal") : std::string("ntxent"); },
        [](RunConfig& c, const std::string& v) {
          if (v == "literal") {
            c.distill.literal_denominator = true;
          } else if (v == "ntxent") {
            c.distill.literal_denominator = false;
          } else {
            throw ConfigError("expected literal|ntxent, got '" + v + "'");
          }
        }};
    m["distill.student_pass"] = {
        [](const RunConfig& c) { return c.distill.student_unmasked_pass ? std::string("unmasked") : std::string("masked"); },
        [](RunConfig& c, const std::string& v) {
          if (v == "masked") {
            c.distill.student_unmasked_pass = false;
          } else if (v == "unmasked") {
            c.distill.student_unmasked_pass = true;
          } else {
            throw ConfigError("expected masked|unmasked, got '" + v + "'");
          }
        }};

    add_bool("augment.enabled", [](const RunConfig& c) { return c.augment.enabled; },
             [](RunConfig& c, bool v) { c.augment.enabled = v; });
    add_dbl("augment.hflip_prob", [](const RunConfig& c) { return c.augment.hflip_prob; },
            [](RunConfig& c, double v) { c.augment.hflip_prob = v; });
    add_dbl("augment.crop_min_ratio", [](const RunConfig& c) { return c.augment.crop_min_ratio; },
            [](RunConfig& c, double v) { c.augment.crop_min_ratio = v; });
    add_int("augment.crop_out_size", [](const RunConfig& c) { return c.augment.crop_out_size; },
            [](RunConfig& c, std::int64_t v) { c.augment.crop_out_size = v; });

    add_dbl("optim.lr_base", [](const RunConfig& c) { return c.optim.lr_base; },
            [](RunConfig& c, double v) { c.optim.lr_base = v; });
    add_dbl("optim.beta1", [](const RunConfig& c) { return c.optim.beta1; },
            [](RunConfig& c, double v) { c.optim.beta1 = v; });
    add_dbl("optim.beta2", [](const RunConfig& c) { return c.optim.beta2; },
            [](RunConfig& c, double v) { c.optim.beta2 = v; });
    add_dbl("optim.eps", [](const RunConfig& c) { return c.optim.eps; },
            [](RunConfig& c, double v) { c.optim.eps = v; });
    add_dbl("optim.weight_decay", [](const RunConfig& c) { return c.optim.weight_decay; },
            [](RunConfig& c, double v) { c.optim.weight_decay = v; });
    add_int("optim.warmup_epochs", [](const RunConfig& c) { return static_cast<std::int64_t>(c.warmup_epochs); },
            [](RunConfig& c, std::int64_t v) { c.warmup_epochs = static_cast<int>(v); });

    add_int("buffer.capacity", [](const RunConfig& c) { return c.buffer_capacity; },
            [](RunConfig& c, std::int64_t v) { c.buffer_capacity = v; });

    add_int("eval.k", [](const RunConfig& c) { return c.eval.k; },
            [](RunConfig& c, std::int64_t v) { c.eval.k = v; });
    add_dbl("eval.smoothing", [](const RunConfig& c) { return c.eval.smoothing; },
            [](RunConfig& c, double v) { c.eval.smoothing = v; });
    add_bool("eval.after_each_task", [](const RunConfig& c) { return c.eval.after_each_task; },
             [](RunConfig& c, bool v) { c.eval.after_each_task = v; });
    return m;
  }();
  return schema;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

// Canonical text form (schema order); also the digest input.
inline std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : detail::config_schema()) {
    out += key;
    out += " = ";
    out += field.get(cfg);
    out += "\n";
  }
  return out;
}

inline RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  RunConfig cfg = RunConfig::desk_preset();
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  const auto& schema = detail::config_schema();
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    auto it = schema.find(key);
    if (it == schema.end()) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    try {
      it->second.set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

// COSMAE_SEED in the environment overrides the configured seed.
inline void apply_seed_env(RunConfig& cfg) {
  if (const char* env = std::getenv("COSMAE_SEED")) {
    try {
      cfg.seed = static_cast<std::uint64_t>(detail::parse_int(env));
    } catch (const ConfigError&) {
      throw ConfigError("COSMAE_SEED: expected an integer, got '" + std::string(env) + "'");
    }
  }
}

// FNV-1a over the canonical serialization.
inline std::uint64_t config_digest(const RunConfig& cfg) {
  const std::string s = serialize_config(cfg);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace cosmae

// cosmae: continual masked-autoencoder pretraining workbench.
//
// Subcommands: synth, train, eval, ablate, inspect. Exit codes: 0 success,
// 2 usage/config errors, 3 numeric failures, 4 I/O errors.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cosmae/cosmae.hpp"

namespace fs = std::filesystem;
using namespace cosmae;

namespace {

RunConfig load_config(const std::string& path) {
  RunConfig cfg = parse_config_text(io::slurp(path), path);
  apply_seed_env(cfg);
  return cfg;
}

struct TrainArgs {
  std::string config_path;
  std::string manifest_path;
  std::string out_dir;
  std::string resume;
  bool force = false;
};

int cmd_train(const TrainArgs& args) {
  RunConfig cfg = load_config(args.config_path);
  TaskManifest manifest = read_manifest(args.manifest_path);

  TrainState state = args.resume.empty()
                         ? init_train_state(cfg)
                         : restore_train_state(cfg, read_checkpoint(args.resume), args.force);

  fs::create_directories(args.out_dir);
  io::spit((fs::path(args.out_dir) / "config.cfg").string(), serialize_config(cfg));

  EvalData eval_data;
  bool have_eval = false;
  if (!manifest.eval_dir.empty()) {
    eval_data = load_eval_data(manifest.eval_dir);
    have_eval = true;
  }

  MetricsWriter metrics((fs::path(args.out_dir) / "metrics.jsonl").string());
  SequenceOptions opt;
  opt.out_dir = args.out_dir;
  opt.eval_data = have_eval ? &eval_data : nullptr;
  opt.metrics = &metrics;
  opt.run_id = default_run_id(cfg);

  run_sequence(state, manifest, opt);

  for (const auto& r : metrics.records()) {
    if (r.is_eval()) {
      std::printf("task %lld  micro_map %.4f  macro_map %.4f\n",
                  static_cast<long long>(r.task_id), r.micro_map.value_or(0.0),
                  r.macro_map.value_or(0.0));
    }
  }
  std::printf("done: %lld tasks, checkpoints and metrics in %s\n",
              static_cast<long long>(state.task_index), args.out_dir.c_str());
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data_dir;
  std::string config_path;  // optional; defaults to config.cfg next to the checkpoint
  std::string record_path;  // optional metrics append target
  bool force = false;
};

int cmd_eval(const EvalArgs& args) {
  std::string config_path = args.config_path;
  if (config_path.empty()) {
    config_path = (fs::path(args.checkpoint).parent_path() / "config.cfg").string();
    if (!fs::exists(config_path)) {
      throw ConfigError("eval: no config.cfg next to the checkpoint; pass --config");
    }
  }
  RunConfig cfg = load_config(config_path);
  CheckpointData ck = read_checkpoint(args.checkpoint);
  TrainState state = restore_train_state(cfg, ck, args.force);
  EvalData data = load_eval_data(args.data_dir);

  const EvalOutcome out = run_downstream_eval(cfg, state.params, data);
  nlohmann::ordered_json j;
  j["checkpoint"] = args.checkpoint;
  j["task_index"] = state.task_index;
  j["micro_map"] = out.micro_map;
  j["macro_map"] = out.macro_map;
  std::cout << j.dump() << "\n";

  if (!args.record_path.empty()) {
    MetricsWriter w(args.record_path);
    MetricsRecord r;
    r.run_id = default_run_id(cfg);
    r.task_id = state.task_index;
    r.epoch = -1;
    r.micro_map = out.micro_map;
    r.macro_map = out.macro_map;
    w.append(r);
  }
  return 0;
}

struct SynthArgs {
  std::string preset = "desk";
  std::string out_dir;
  std::uint64_t seed = 0;
  bool force = false;
};

int cmd_synth(const SynthArgs& args) {
  SynthResult r = synth_tasks(SynthPreset::from_name(args.preset), args.seed, args.out_dir,
                              args.force);
  std::printf("wrote %zu tasks + eval set under %s\n", r.task_dirs.size(), args.out_dir.c_str());
  std::printf("manifest: %s\nconfig: %s\ntask separability: %.3f\n", r.manifest_path.c_str(),
              r.config_path.c_str(), r.task_separability);
  return 0;
}

struct AblateArgs {
  std::string config_path;
  std::string manifest_path;
  std::string out_dir;
};

struct AblateRow {
  std::string name;
  RunConfig cfg;
};

int cmd_ablate(const AblateArgs& args) {
  const RunConfig base = load_config(args.config_path);
  TaskManifest manifest = read_manifest(args.manifest_path);
  if (manifest.eval_dir.empty()) {
    throw ConfigError("ablate: the manifest must name an eval_dir");
  }
  EvalData eval_data = load_eval_data(manifest.eval_dir);

  auto with = [&](bool data_mixup, bool model_mixup_kd, LambdaMode m1, LambdaMode m2) {
    RunConfig c = base;
    c.toggles.data_mixup = data_mixup;
    c.toggles.model_mixup_kd = model_mixup_kd;
    c.mixup.mode = m1;
    c.distill.mode = m2;
    c.distill.constant = 0.5;
    return c;
  };

  std::vector<AblateRow> rows;
  // Toggle grid (component on/off), then the lambda-mode grids.
  rows.push_back({"baseline", with(false, false, LambdaMode::Beta, LambdaMode::Beta)});
  rows.push_back({"data_mixup", with(true, false, LambdaMode::Beta, LambdaMode::Beta)});
  rows.push_back({"model_mixup_kd", with(false, true, LambdaMode::Beta, LambdaMode::Beta)});
  rows.push_back({"cosmae", with(true, true, LambdaMode::Beta, LambdaMode::Beta)});
  rows.push_back({"lambda1_uniform", with(true, false, LambdaMode::Uniform, LambdaMode::Beta)});
  rows.push_back({"lambda2_uniform", with(true, true, LambdaMode::Beta, LambdaMode::Uniform)});
  rows.push_back({"lambda2_constant", with(true, true, LambdaMode::Beta, LambdaMode::Constant)});

  fs::create_directories(args.out_dir);
  std::ofstream results((fs::path(args.out_dir) / "ablate_results.jsonl").string());
  if (!results) throw IoError("ablate: cannot write results file");

  std::printf("%-18s %-10s %-10s  micro mAP per task\n", "row", "data_mixup", "model_kd");
  for (const auto& row : rows) {
    TrainState state = init_train_state(row.cfg);
    MetricsWriter metrics;
    SequenceOptions opt;
    opt.out_dir = (fs::path(args.out_dir) / row.name).string();
    opt.eval_data = &eval_data;
    opt.metrics = &metrics;
    opt.run_id = row.name;
    run_sequence(state, manifest, opt);

    nlohmann::ordered_json j;
    j["row"] = row.name;
    j["data_mixup"] = row.cfg.toggles.data_mixup;
    j["model_mixup_kd"] = row.cfg.toggles.model_mixup_kd;
    j["lambda1_mode"] = to_string(row.cfg.mixup.mode);
    j["lambda2_mode"] = to_string(row.cfg.distill.mode);
    auto maps = nlohmann::ordered_json::array();
    std::printf("%-18s %-10s %-10s ", row.name.c_str(),
                row.cfg.toggles.data_mixup ? "on" : "off",
                row.cfg.toggles.model_mixup_kd ? "on" : "off");
    for (const auto& r : metrics.records()) {
      if (r.is_eval()) {
        maps.push_back(*r.micro_map);
        std::printf(" %.4f", *r.micro_map);
      }
    }
    std::printf("\n");
    j["micro_map"] = maps;
    results << j.dump() << "\n";
  }
  return 0;
}

int cmd_inspect(const std::string& checkpoint) {
  CheckpointData ck = read_checkpoint(checkpoint);
  std::printf("checkpoint:      %s\n", checkpoint.c_str());
  std::printf("format:          CSMAE1 v%u\n", ck.version);
  std::printf("config digest:   %016llx\n", static_cast<unsigned long long>(ck.config_digest));
  std::printf("tasks completed: %lld\n", static_cast<long long>(ck.task_index));
  std::printf("global step:     %lld\n", static_cast<long long>(ck.global_step));
  std::printf("rng state:       %zu bytes\n", ck.rng_state.size());
  std::printf("prev encoder:    %s\n", ck.has_prev_encoder ? "present" : "absent");
  std::printf("buffer entries:  %zu\n", ck.buffer_entries.size());
  std::printf("optimizer steps: %lld\n", static_cast<long long>(ck.optimizer_step_count));
  std::printf("\ntensors (%zu):\n", ck.params.size());
  for (const auto& e : ck.params.entries()) {
    std::printf("  %-40s %-12s %s\n", e.name.c_str(), shape_str(e.value.shape).c_str(),
                e.trainable ? "trainable" : "frozen");
  }
  if (ck.has_prev_encoder) {
    std::printf("\nprev-encoder snapshot tensors (%zu):\n", ck.prev_encoder.size());
    for (const auto& e : ck.prev_encoder.entries()) {
      std::printf("  %-40s %s\n", e.name.c_str(), shape_str(e.value.shape).c_str());
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continual masked-autoencoder pretraining workbench"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train a task sequence");
  train->add_option("--config", train_args.config_path, "run configuration file")->required();
  train->add_option("--manifest", train_args.manifest_path, "task manifest (JSON)")->required();
  train->add_option("--out", train_args.out_dir, "output directory")->required();
  train->add_option("--resume", train_args.resume, "checkpoint to resume from");
  train->add_flag("--force", train_args.force, "ignore config digest mismatch on resume");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "downstream multi-label kNN evaluation");
  eval->add_option("--checkpoint", eval_args.checkpoint, "checkpoint to evaluate")->required();
  eval->add_option("--data", eval_args.data_dir, "eval dataset directory")->required();
  eval->add_option("--config", eval_args.config_path, "config (default: next to checkpoint)");
  eval->add_option("--record", eval_args.record_path, "append an eval record to this file");
  eval->add_flag("--force", eval_args.force, "ignore config digest mismatch");

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate synthetic task datasets");
  synth->add_option("--preset", synth_args.preset, "desk|tiny");
  synth->add_option("--out", synth_args.out_dir, "output directory")->required();
  synth->add_option("--seed", synth_args.seed, "generator seed");
  synth->add_flag("--force", synth_args.force, "overwrite a non-empty output directory");

  AblateArgs ablate_args;
  auto* ablate = app.add_subcommand("ablate", "run the component and lambda-mode grids");
  ablate->add_option("--config", ablate_args.config_path, "base configuration")->required();
  ablate->add_option("--manifest", ablate_args.manifest_path, "task manifest")->required();
  ablate->add_option("--out", ablate_args.out_dir, "output directory")->required();

  std::string inspect_ckpt;
  auto* inspect = app.add_subcommand("inspect", "print checkpoint header and tensor inventory");
  inspect->add_option("--checkpoint", inspect_ckpt, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
    if (*train) return cmd_train(train_args);
    if (*eval) return cmd_eval(eval_args);
    if (*synth) return cmd_synth(synth_args);
    if (*ablate) return cmd_ablate(ablate_args);
    if (*inspect) return cmd_inspect(inspect_ckpt);
    return 2;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 4;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

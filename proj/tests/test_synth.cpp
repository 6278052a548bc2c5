#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "cosmae/synth.hpp"
#include "support/testutil.hpp"

using namespace cosmae;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "cosmae_synth_XXXXXX").string();
    path = mkdtemp(tmpl.data());
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("synthetic task generation") {
  TempDir tmp;
  SynthPreset preset = SynthPreset::tiny();

  SUBCASE("emits tasks, eval set, manifest and config") {
    SynthResult r = synth_tasks(preset, 42, tmp.file("d"));
    CHECK(r.task_dirs.size() == 2);
    CHECK(fs::exists(tmp.file("d/task1/train.f32t")));
    CHECK(fs::exists(tmp.file("d/task1/val.f32t")));
    CHECK(fs::exists(tmp.file("d/task2/train.f32t")));
    CHECK(fs::exists(tmp.file("d/eval/images_train.f32t")));
    CHECK(fs::exists(tmp.file("d/manifest.json")));
    CHECK(fs::exists(tmp.file("d/config.cfg")));

    Tensor<float> train = read_tensor_f32(tmp.file("d/task1/train.f32t"));
    CHECK(train.shape == Shape{preset.train_per_task, 3, 32, 32});
    for (float v : train.data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }

    EvalData eval = load_eval_data(tmp.file("d/eval"));
    CHECK(eval.train.size() == preset.eval_train);
    CHECK(eval.test.size() == preset.eval_test);
    CHECK(eval.train.n_labels() == 5);

    CHECK(r.task_separability > 0.9);

    RunConfig cfg = parse_config_text(io::slurp(tmp.file("d/config.cfg")), "config");
    CHECK(cfg.seed == 42);
    CHECK(cfg.model.image_size == 32);
  }

  SUBCASE("same seed produces bitwise-identical files") {
    synth_tasks(preset, 7, tmp.file("a"));
    synth_tasks(preset, 7, tmp.file("b"));
    for (const char* rel :
         {"task1/train.f32t", "task2/val.f32t", "eval/images_test.f32t", "eval/labels_train.f32t",
          "manifest.json", "config.cfg"}) {
      CHECK(io::slurp(tmp.file(std::string("a/") + rel)) ==
            io::slurp(tmp.file(std::string("b/") + rel)));
    }
    // different seed differs
    synth_tasks(preset, 8, tmp.file("c"));
    CHECK(io::slurp(tmp.file("a/task1/train.f32t")) != io::slurp(tmp.file("c/task1/train.f32t")));
  }

  SUBCASE("refuses a non-empty output directory unless forced") {
    synth_tasks(preset, 1, tmp.file("x"));
    CHECK_THROWS_AS(synth_tasks(preset, 2, tmp.file("x")), IoError);
    CHECK_NOTHROW(synth_tasks(preset, 2, tmp.file("x"), /*force=*/true));
  }

  SUBCASE("unknown preset name is a configuration error") {
    CHECK_THROWS_AS(SynthPreset::from_name("galaxy"), ConfigError);
    CHECK(SynthPreset::from_name("desk").n_tasks == 4);
    CHECK(SynthPreset::from_name("desk").train_per_task == 512);
    CHECK(SynthPreset::from_name("desk").image_size == 32);
  }
}

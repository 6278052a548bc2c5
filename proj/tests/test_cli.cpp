#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "cosmae/io.hpp"
#include "cosmae/manifest.hpp"
#include "cosmae/metrics.hpp"

using namespace cosmae;
namespace fs = std::filesystem;

#ifndef COSMAE_CLI_PATH
#error "COSMAE_CLI_PATH must be defined by the build"
#endif

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "cosmae_cli_XXXXXX").string();
    path = mkdtemp(tmpl.data());
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

struct CliResult {
  int exit_code;
  std::string out;
};

CliResult run_cli(const std::string& args, const std::string& log_name) {
  static int counter = 0;
  const std::string log =
      (fs::temp_directory_path() / (log_name + std::to_string(counter++) + ".log")).string();
  const std::string cmd = std::string(COSMAE_CLI_PATH) + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  r.out.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  fs::remove(log);
  return r;
}

}  // namespace

TEST_CASE("cli end-to-end: synth, train, eval, inspect") {
  TempDir tmp;
  auto synth = run_cli("synth --preset tiny --out " + tmp.file("data") + " --seed 3", "synth");
  CHECK(synth.exit_code == 0);
  CHECK(synth.out.find("manifest") != std::string::npos);

  auto train = run_cli("train --config " + tmp.file("data/config.cfg") + " --manifest " +
                           tmp.file("data/manifest.json") + " --out " + tmp.file("run"),
                       "train");
  CHECK(train.exit_code == 0);
  CHECK(fs::exists(tmp.file("run/final.ckpt")));
  CHECK(fs::exists(tmp.file("run/task1.ckpt")));
  CHECK(fs::exists(tmp.file("run/metrics.jsonl")));

  // metrics line count: epochs per task (2 x 2) + one eval per task (2)
  auto records = read_metrics(tmp.file("run/metrics.jsonl"));
  CHECK(records.size() == 6);

  auto eval = run_cli("eval --checkpoint " + tmp.file("run/final.ckpt") + " --data " +
                          tmp.file("data/eval"),
                      "eval");
  CHECK(eval.exit_code == 0);
  CHECK(eval.out.find("micro_map") != std::string::npos);

  auto inspect = run_cli("inspect --checkpoint " + tmp.file("run/final.ckpt"), "inspect");
  CHECK(inspect.exit_code == 0);
  CHECK(inspect.out.find("encoder.patch_embed.weight") != std::string::npos);
  CHECK(inspect.out.find("decoder.mask_token") != std::string::npos);
  CHECK(inspect.out.find("projector.fc1.weight") != std::string::npos);

  SUBCASE("resume continues from a task checkpoint") {
    auto resumed = run_cli("train --config " + tmp.file("data/config.cfg") + " --manifest " +
                               tmp.file("data/manifest.json") + " --out " + tmp.file("run2") +
                               " --resume " + tmp.file("run/task1.ckpt"),
                           "resume");
    CHECK(resumed.exit_code == 0);
    CHECK(io::slurp(tmp.file("run2/final.ckpt")) == io::slurp(tmp.file("run/final.ckpt")));
  }

  SUBCASE("COSMAE_SEED changes the run") {
    setenv("COSMAE_SEED", "99", 1);
    auto other = run_cli("train --config " + tmp.file("data/config.cfg") + " --manifest " +
                             tmp.file("data/manifest.json") + " --out " + tmp.file("run99"),
                         "seeded");
    unsetenv("COSMAE_SEED");
    CHECK(other.exit_code == 0);
    CHECK(io::slurp(tmp.file("run99/final.ckpt")) != io::slurp(tmp.file("run/final.ckpt")));
  }
}

TEST_CASE("cli error paths map to the documented exit codes") {
  TempDir tmp;

  SUBCASE("unknown subcommand and missing flags are usage errors (2)") {
    CHECK(run_cli("frobnicate", "err").exit_code == 2);
    CHECK(run_cli("train", "err").exit_code == 2);
  }

  SUBCASE("invalid config key is a config error (2) with a line-precise message") {
    io::spit(tmp.file("bad.cfg"), "seed = 1\nbogus.key = 2\n");
    io::spit(tmp.file("manifest.json"), "{\"tasks\":[]}");
    auto r = run_cli("train --config " + tmp.file("bad.cfg") + " --manifest " +
                         tmp.file("manifest.json") + " --out " + tmp.file("out"),
                     "badcfg");
    CHECK(r.exit_code == 2);
    CHECK(r.out.find("bad.cfg:2") != std::string::npos);
  }

  SUBCASE("missing files are io errors (4)") {
    CHECK(run_cli("inspect --checkpoint " + tmp.file("nope.ckpt"), "nockpt").exit_code == 4);
    io::spit(tmp.file("ok.cfg"), "seed = 1\n");
    CHECK(run_cli("train --config " + tmp.file("ok.cfg") + " --manifest " +
                      tmp.file("none.json") + " --out " + tmp.file("out"),
                  "nomanifest")
              .exit_code == 4);
  }

  SUBCASE("synth refuses a non-empty directory (4) unless forced") {
    REQUIRE(run_cli("synth --preset tiny --out " + tmp.file("d") + " --seed 1", "s1").exit_code == 0);
    CHECK(run_cli("synth --preset tiny --out " + tmp.file("d") + " --seed 1", "s2").exit_code == 4);
    CHECK(run_cli("synth --preset tiny --out " + tmp.file("d") + " --seed 1 --force", "s3")
              .exit_code == 0);
  }

  SUBCASE("corrupt checkpoint is an io error (4)") {
    io::spit(tmp.file("junk.ckpt"), "CSMAE1junkjunk");
    CHECK(run_cli("inspect --checkpoint " + tmp.file("junk.ckpt"), "junk").exit_code == 4);
  }
}

TEST_CASE("cli ablate emits the toggle grid and lambda-mode rows") {
  TempDir tmp;
  REQUIRE(run_cli("synth --preset tiny --out " + tmp.file("data") + " --seed 4", "synth").exit_code == 0);

  // one epoch per task keeps the grid cheap
  {
    TaskManifest m = read_manifest(tmp.file("data/manifest.json"));
    for (auto& t : m.tasks) t.epochs = 1;
    write_manifest(tmp.file("data/manifest.json"), m);
  }

  auto r = run_cli("ablate --config " + tmp.file("data/config.cfg") + " --manifest " +
                       tmp.file("data/manifest.json") + " --out " + tmp.file("ab"),
                   "ablate");
  CHECK(r.exit_code == 0);
  for (const char* row : {"baseline", "data_mixup", "model_mixup_kd", "cosmae",
                          "lambda1_uniform", "lambda2_uniform", "lambda2_constant"}) {
    CHECK(r.out.find(row) != std::string::npos);
  }

  std::ifstream results(tmp.file("ab/ablate_results.jsonl"));
  REQUIRE(results.good());
  std::string line;
  int rows = 0, toggle_rows = 0;
  while (std::getline(results, line)) {
    ++rows;
    auto j = nlohmann::json::parse(line);
    CHECK(j["micro_map"].size() == 2);  // one eval per task
    const std::string name = j["row"].get<std::string>();
    if (name == "baseline" || name == "data_mixup" || name == "model_mixup_kd" ||
        name == "cosmae") {
      ++toggle_rows;
    }
  }
  CHECK(rows == 7);
  CHECK(toggle_rows == 4);
}

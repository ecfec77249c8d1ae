#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cdnet/dataset.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace cdnet;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string output;  // stdout and stderr interleaved
};

int call_count = 0;

RunResult run(const std::string& args) {
  const fs::path cap =
      fs::temp_directory_path() / ("cdnet_cli_out_" + std::to_string(call_count++));
  const std::string cmd =
      std::string("\"") + CDNET_BIN + "\" " + args + " > \"" + cap.string() +
      "\" 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream f(cap);
  std::ostringstream ss;
  ss << f.rdbuf();
  r.output = ss.str();
  fs::remove(cap);
  return r;
}

fs::path scratch_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("cdnet_cli_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int line_count(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

// Shrinks the model so training commands finish in seconds.
const std::string kToySets =
    " --set model.base_dim=8 --set model.stage_depths=2,2,2,2,2"
    " --set model.stage_heads=2,2,2,2,2 --set model.window=4"
    " --set model.decoder_depth=2 --set model.input_h=64"
    " --set model.input_w=64 --set train.batch=2 --set train.seed=3";

}  // namespace

TEST_CASE("help and version exit cleanly") {
  RunResult help = run("--help");
  CHECK(help.code == 0);
  CHECK(help.output.find("synth") != std::string::npos);
  CHECK(help.output.find("Exit codes") != std::string::npos);

  RunResult ver = run("--version");
  CHECK(ver.code == 0);
  CHECK(ver.output == "cdnet 1.0.0\n");
}

TEST_CASE("synth writes a loadable stamped dataset") {
  fs::path dir = scratch_dir("synth");
  RunResult r = run("synth --out \"" + dir.string() + "\" --n 3 --size 64 --seed 5");
  CHECK(r.code == 0);
  CHECK(r.output.find("wrote 3 sample pairs, manifest ") != std::string::npos);

  for (int i = 0; i < 3; ++i) {
    const std::string id = "synth" + std::to_string(i);
    CHECK(fs::exists(dir / (id + "_t1.ppm")));
    CHECK(fs::exists(dir / (id + "_t2.ppm")));
    CHECK(fs::exists(dir / (id + "_mask.pgm")));
  }
  CHECK(line_count(file_bytes(dir / "manifest.txt")) == 3);
  CHECK(file_bytes(dir / "VERSION") == "cdnet 1.0.0\n");

  auto loaded = load_dataset((dir / "manifest.txt").string());
  REQUIRE(loaded.size() == 3);
  for (const auto& p : loaded) p.validate();
  fs::remove_all(dir);
}

TEST_CASE("synth rejects sizes the encoder cannot halve") {
  fs::path dir = scratch_dir("synth_bad");
  RunResult r = run("synth --out \"" + dir.string() + "\" --n 1 --size 60");
  CHECK(r.code == 2);
  CHECK(r.output.find("multiple of 64") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("synth is deterministic across processes") {
  fs::path a = scratch_dir("synth_a"), b = scratch_dir("synth_b");
  CHECK(run("synth --out \"" + a.string() + "\" --n 2 --size 64 --seed 11").code == 0);
  CHECK(run("synth --out \"" + b.string() + "\" --n 2 --size 64 --seed 11").code == 0);
  for (const auto& entry : fs::directory_iterator(a)) {
    const std::string name = entry.path().filename().string();
    CHECK(file_bytes(entry.path()) == file_bytes(b / name));
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("tile cuts grids and warns on undersized rasters") {
  fs::path src = scratch_dir("tile_src");
  REQUIRE(run("synth --out \"" + src.string() + "\" --n 1 --size 128 --seed 2").code == 0);

  fs::path cut = scratch_dir("tile_cut");
  RunResult r = run("tile --in \"" + src.string() + "\" --out \"" + cut.string() +
                    "\" --size 64");
  CHECK(r.code == 0);
  CHECK(r.output.find("wrote 4 tiles from 1 pairs") != std::string::npos);
  CHECK(fs::exists(cut / "synth0_r0_c0_t1.ppm"));
  CHECK(fs::exists(cut / "synth0_r1_c1_mask.pgm"));
  CHECK(line_count(file_bytes(cut / "manifest.txt")) == 4);

  fs::path none = scratch_dir("tile_none");
  RunResult w = run("tile --in \"" + src.string() + "\" --out \"" + none.string() +
                    "\" --size 256");
  CHECK(w.code == 0);
  CHECK(w.output.find("smaller than 256x256, dropped") != std::string::npos);
  CHECK(w.output.find("wrote 0 tiles") != std::string::npos);
  CHECK(line_count(file_bytes(none / "manifest.txt")) == 0);

  fs::remove_all(src);
  fs::remove_all(cut);
  fs::remove_all(none);
}

TEST_CASE("train writes a reproducible run directory") {
  fs::path data = scratch_dir("train_data");
  REQUIRE(run("synth --out \"" + data.string() + "\" --n 2 --size 64 --seed 9").code == 0);

  auto train_into = [&](const fs::path& out) {
    return run("train --data \"" + data.string() + "\" --out \"" + out.string() +
               "\" --max-steps 2" + kToySets);
  };

  fs::path r1 = scratch_dir("train_run1");
  RunResult t = train_into(r1);
  CHECK(t.code == 0);
  CHECK(t.output.find("trained 2 steps") != std::string::npos);
  CHECK(fs::exists(r1 / "model.ckpt"));
  CHECK(file_bytes(r1 / "VERSION") == "cdnet 1.0.0\n");

  const std::string cfg = file_bytes(r1 / "config.txt");
  CHECK(cfg.find("model.base_dim = 8\n") != std::string::npos);
  CHECK(cfg.find("train.seed = 3\n") != std::string::npos);
  CHECK(cfg.find("train.batch = 2\n") != std::string::npos);

  const std::string log = file_bytes(r1 / "train_log.txt");
  CHECK(line_count(log) == 2);
  CHECK(log.rfind("step 1 epoch 1 lr ", 0) == 0);
  CHECK(log.find("\nstep 2 ") != std::string::npos);
  CHECK(t.output.find(log.substr(0, log.find('\n'))) != std::string::npos);

  // A fresh process with the same seed produces the same bytes.
  fs::path r2 = scratch_dir("train_run2");
  CHECK(train_into(r2).code == 0);
  CHECK(file_bytes(r2 / "model.ckpt") == file_bytes(r1 / "model.ckpt"));
  CHECK(file_bytes(r2 / "train_log.txt") == log);

  SUBCASE("predict and eval consume the run directory") {
    fs::path pred = scratch_dir("pred_out");
    RunResult p = run("predict --ckpt \"" + (r1 / "model.ckpt").string() +
                      "\" --data \"" + data.string() + "\" --out \"" +
                      pred.string() + "\"");
    CHECK(p.code == 0);
    CHECK(p.output.find("wrote probability and binary maps for 2 pairs") !=
          std::string::npos);
    for (const std::string id : {"synth0", "synth1"}) {
      CHECK(fs::exists(pred / (id + "_prob.pgm")));
      CHECK(fs::exists(pred / (id + "_pred.pgm")));
      const auto raw = read_f32_raw((pred / (id + "_prob.f32")).string(), 64 * 64);
      for (float v : raw) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
      }
    }

    fs::path ev = scratch_dir("eval_out");
    RunResult e = run("eval --pred \"" + pred.string() + "\" --gt \"" +
                      data.string() + "\" --out \"" + ev.string() + "\"");
    CHECK(e.code == 0);
    const auto j = nlohmann::json::parse(file_bytes(ev / "metrics.json"));
    CHECK(j["samples"] == 2);
    CHECK(j["roc"].size() == 101);
    const double f1 = j["f1"].get<double>();
    CHECK(f1 >= 0.0);
    CHECK(f1 <= 1.0);
    fs::remove_all(pred);
    fs::remove_all(ev);
  }

  fs::remove_all(data);
  fs::remove_all(r1);
  fs::remove_all(r2);
}

TEST_CASE("eval scores a perfect prediction as unity") {
  fs::path data = scratch_dir("eval_data");
  REQUIRE(run("synth --out \"" + data.string() + "\" --n 2 --size 64 --seed 21").code == 0);

  fs::path out = scratch_dir("eval_perfect");
  RunResult e = run("eval --pred \"" + data.string() + "\" --gt \"" +
                    data.string() + "\" --out \"" + out.string() + "\"");
  CHECK(e.code == 0);
  CHECK(e.output.find("f1 1") != std::string::npos);

  const std::string txt = file_bytes(out / "metrics.txt");
  CHECK(txt.find("\nf1 = 1\n") != std::string::npos);
  CHECK(txt.find("\nmba = 1\n") != std::string::npos);
  CHECK(txt.find("\nroc.count = 101\n") != std::string::npos);
  CHECK(txt.find("\nfp = 0\n") != std::string::npos);

  const auto j = nlohmann::json::parse(file_bytes(out / "metrics.json"));
  CHECK(j["f1"].get<double>() == 1.0);
  CHECK(j["counts"]["fn"].get<long long>() == 0);
  fs::remove_all(data);
  fs::remove_all(out);
}

TEST_CASE("gradcheck passes at its default tolerance and flags impossible ones") {
  RunResult ok = run("gradcheck --instances 1 --no-e2e --seed 5");
  CHECK(ok.code == 0);
  CHECK(ok.output.find("PASS loss_wbce") != std::string::npos);
  CHECK(ok.output.find("PASS loss_ssim") != std::string::npos);
  CHECK(ok.output.find("OK: worst relative error") != std::string::npos);
  CHECK(ok.output.find("FAIL") == std::string::npos);

  RunResult bad = run("gradcheck --instances 1 --no-e2e --seed 5 --tol 1e-12");
  CHECK(bad.code == 3);
  CHECK(bad.output.find("BREACH: worst relative error") != std::string::npos);
}

TEST_CASE("usage and config errors map to distinct exit codes") {
  CHECK(run("synth").code == 1);             // missing required --out
  CHECK(run("motd").code == 1);              // no such subcommand
  CHECK(run("").code == 1);                  // a subcommand is required

  RunResult bad = run("train --set bogus.key=1");
  CHECK(bad.code == 2);
  CHECK(bad.output.find("unknown config key") != std::string::npos);

  RunResult miss = run("predict --ckpt /nope.ckpt --data /nope --out /tmp/cdnet_cli_x");
  CHECK(miss.code == 2);
}

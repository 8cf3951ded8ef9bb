#include <doctest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "spg/config.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code;
  std::string output;  // stdout + stderr interleaved
};

RunResult run_cli(const std::string& args) {
  std::string command = std::string(SPG_CLI_PATH) + " " + args + " 2>&1";
  std::array<char, 4096> buffer;
  std::string output;
  FILE* pipe = popen(command.c_str(), "r");
  REQUIRE(pipe != nullptr);
  size_t got;
  while ((got = fread(buffer.data(), 1, buffer.size(), pipe)) > 0)
    output.append(buffer.data(), got);
  int status = pclose(pipe);
  return {WEXITSTATUS(status), output};
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& leaf = "") const {
    return leaf.empty() ? path.string() : (path / leaf).string();
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// config parsing
// ---------------------------------------------------------------------------

TEST_CASE("config files parse sections, comments, and values") {
  std::istringstream in(
      "# comment\n"
      "[run]\n"
      "seed = 11\n"
      "[trainer]\n"
      "learning_rate = 0.5  ; trailing comment\n");
  spg::Config cfg = spg::Config::parse(in, "test.cfg");
  CHECK(cfg.get_u64("run.seed", 0) == 11);
  CHECK(cfg.get_number("trainer.learning_rate", 0.0) == 0.5);
  cfg.reject_unknown_keys();
}

TEST_CASE("config errors carry line numbers") {
  std::istringstream bad_line("[run]\nseed 11\n");
  CHECK_THROWS_WITH_AS(spg::Config::parse(bad_line, "bad.cfg"),
                       doctest::Contains("bad.cfg:2"), spg::ConfigError);

  std::istringstream bad_value("[run]\nseed = eleven\n");
  spg::Config cfg = spg::Config::parse(bad_value, "bad.cfg");
  CHECK_THROWS_WITH_AS(cfg.get_u64("run.seed", 0), doctest::Contains("bad.cfg:2"),
                       spg::ConfigError);
}

TEST_CASE("unknown keys are rejected with their location") {
  std::istringstream in("[run]\nseed = 1\nmystery = 3\n");
  spg::Config cfg = spg::Config::parse(in, "u.cfg");
  cfg.get_u64("run.seed", 0);
  CHECK_THROWS_WITH_AS(cfg.reject_unknown_keys(), doctest::Contains("u.cfg:3"),
                       spg::ConfigError);
}

TEST_CASE("resolved text includes defaults and groups by section") {
  std::istringstream in("[run]\nseed = 9\n");
  spg::Config cfg = spg::Config::parse(in, "r.cfg");
  cfg.get_u64("run.seed", 0);
  cfg.get_number("trainer.learning_rate", 0.01);
  std::string text = cfg.resolved_text();
  CHECK(text.find("[run]") != std::string::npos);
  CHECK(text.find("seed = 9") != std::string::npos);
  CHECK(text.find("[trainer]") != std::string::npos);
  CHECK(text.find("learning_rate = 0.01") != std::string::npos);
}

// ---------------------------------------------------------------------------
// CLI surface
// ---------------------------------------------------------------------------

TEST_CASE("landscape emits header plus grid-squared rows") {
  RunResult result = run_cli("landscape --beta 2 --grid 10");
  CHECK(result.exit_code == 0);
  int lines = 0;
  std::stringstream stream(result.output);
  std::string line;
  while (std::getline(stream, line))
    if (!line.empty()) ++lines;
  CHECK(lines == 101);  // header + 100 rows
  CHECK(result.output.rfind("a,b,elbo,eubo", 0) == 0);
}

TEST_CASE("verify exits zero on a passing suite and reports counts") {
  RunResult result = run_cli("verify --suite sandwich --instances 40 --seed 3");
  CHECK(result.exit_code == 0);
  CHECK(result.output.find("[PASS] sandwich-bounds (40 checks, 0 failures)") !=
        std::string::npos);
}

TEST_CASE("config parse failures exit with status 2 and a line-anchored message") {
  TempDir dir("spg-cli-badcfg");
  {
    std::ofstream cfg(dir.str("bad.cfg"));
    cfg << "[trainer]\nlearning_rate == 0.1\n";
  }
  RunResult result = run_cli("train --config " + dir.str("bad.cfg") + " --out " + dir.str("o"));
  CHECK(result.exit_code == 2);
  CHECK(result.output.find("bad.cfg:2") != std::string::npos);

  RunResult unknown = run_cli("verify --config /nonexistent/x.cfg");
  CHECK(unknown.exit_code == 2);
}

TEST_CASE("unknown config keys fail a run") {
  TempDir dir("spg-cli-unknown");
  {
    std::ofstream cfg(dir.str("odd.cfg"));
    cfg << "[trainer]\nwarp_factor = 9\n";
  }
  RunResult result =
      run_cli("train --config " + dir.str("odd.cfg") + " --steps 1 --out " + dir.str("o"));
  CHECK(result.exit_code == 2);
  CHECK(result.output.find("warp_factor") != std::string::npos);
  CHECK(result.output.find("odd.cfg:2") != std::string::npos);
}

TEST_CASE("train writes metrics, checkpoint, log, and resolved config") {
  TempDir dir("spg-cli-train");
  RunResult result = run_cli("train --task copy --vocab 3 --response-len 3 --prompt-len 3 "
                             "--steps 6 --seed 5 --block-size 3 --mc-samples 2 --out " +
                             dir.str());
  CHECK(result.exit_code == 0);
  CHECK(fs::exists(dir.path / "metrics.jsonl"));
  CHECK(fs::exists(dir.path / "checkpoint_final.spg"));
  CHECK(fs::exists(dir.path / "run.log"));
  CHECK(fs::exists(dir.path / "config.resolved"));

  std::string metrics = slurp(dir.path / "metrics.jsonl");
  int lines = 0;
  for (char c : metrics) lines += c == '\n';
  CHECK(lines == 6);
  CHECK(metrics.find("\"mean_reward\"") != std::string::npos);
  CHECK(metrics.find("wall_ms") == std::string::npos);  // timing lives in run.log only

  std::string resolved = slurp(dir.path / "config.resolved");
  CHECK(resolved.find("kind = copy") != std::string::npos);
  CHECK(resolved.find("seed = 5") != std::string::npos);
}

TEST_CASE("identical seed and config give byte-identical metrics and checkpoints") {
  TempDir a("spg-cli-det-a"), b("spg-cli-det-b");
  std::string args = "train --task copy --vocab 3 --response-len 3 --prompt-len 3 "
                     "--steps 8 --seed 77 --block-size 3 --mc-samples 2 --lr 0.1 --out ";
  CHECK(run_cli(args + a.str()).exit_code == 0);
  CHECK(run_cli(args + b.str()).exit_code == 0);
  CHECK(slurp(a.path / "metrics.jsonl") == slurp(b.path / "metrics.jsonl"));
  CHECK(slurp(a.path / "checkpoint_final.spg") == slurp(b.path / "checkpoint_final.spg"));
  // resolved configs agree except for the output path itself
  auto strip_out = [](std::string text) {
    size_t at = text.find("out = ");
    size_t end = text.find('\n', at);
    return text.erase(at, end - at);
  };
  CHECK(strip_out(slurp(a.path / "config.resolved")) ==
        strip_out(slurp(b.path / "config.resolved")));
}

TEST_CASE("decode prints deterministic sequences and honors checkpoints") {
  TempDir dir("spg-cli-decode");
  std::string train_args = "train --task copy --vocab 3 --response-len 3 --prompt-len 3 "
                           "--steps 4 --seed 9 --block-size 3 --mc-samples 2 --out " + dir.str();
  CHECK(run_cli(train_args).exit_code == 0);

  std::string decode_args = "decode --task copy --vocab 3 --response-len 3 --prompt-len 3 "
                            "--count 5 --seed 4 --ckpt " + dir.str("checkpoint_final.spg");
  RunResult first = run_cli(decode_args);
  RunResult second = run_cli(decode_args);
  CHECK(first.exit_code == 0);
  CHECK(first.output == second.output);
  int lines = 0;
  for (char c : first.output) lines += c == '\n';
  CHECK(lines == 5);
}

TEST_CASE("verify report is identical across thread counts") {
  RunResult one = run_cli("verify --suite sandwich --instances 30 --seed 12 --threads 1");
  RunResult four = run_cli("verify --suite sandwich --instances 30 --seed 12 --threads 4");
  CHECK(one.exit_code == 0);
  CHECK(one.output == four.output);
}

TEST_CASE("sweep writes the variance and bound-gap tables") {
  TempDir dir("spg-cli-sweep");
  RunResult result = run_cli(
      "sweep --instances 2 --reps 150 --bound-instances 5 --seed 6 --out " + dir.str());
  CHECK(result.exit_code == 0);
  std::string variance = slurp(dir.path / "omega_variance.csv");
  CHECK(variance.rfind("instance,omega,variance_sum", 0) == 0);
  int lines = 0;
  for (char c : variance) lines += c == '\n';
  CHECK(lines == 1 + 2 * 11);  // header + instances * omega points
  std::string bounds = slurp(dir.path / "beta_bounds.csv");
  CHECK(bounds.rfind("beta,mean_gap,min_gap,max_gap", 0) == 0);
  CHECK(fs::exists(dir.path / "omega_minimizers.csv"));
}

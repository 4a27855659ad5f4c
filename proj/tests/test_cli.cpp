// SPDX-License-Identifier: Apache-2.0
// End-to-end checks of the installed binary; the harness exports SORBET_CLI.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <doctest.h>
#include <json.hpp>

namespace fs = std::filesystem;

namespace {

std::string cli_path() {
  const char* p = std::getenv("SORBET_CLI");
  return p ? p : "";
}

int run(const std::string& args) {
  const std::string cmd =
      cli_path() + " " + args + " >/dev/null 2>/dev/null";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("sorbet-cli-" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

const std::string kTinyModel =
    " --blocks 1 --dim 8 --heads 2 --seq 4 --battery 2";

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  REQUIRE_FALSE(cli_path().empty());
  CHECK(run("") == 2);                      // missing subcommand
  CHECK(run("frobnicate") == 2);            // unknown subcommand
  CHECK(run("verify --no-such-flag") == 2);
  CHECK(run("demo --k-mode sideways" + kTinyModel) == 2);
  CHECK(run("demo --dim 33 --heads 2") == 2);  // indivisible width
  CHECK(run("verify --config /nonexistent.conf") == 2);
}

TEST_CASE("verification subcommand writes a passing report") {
  TempDir dir("verify");
  const int rc =
      run("verify --samples 1500 --seed 3 --out " + dir.str());
  CHECK(rc == 0);
  const auto report = nlohmann::json::parse(slurp(dir.path / "report.json"));
  CHECK(report.at("command") == "verify");
  CHECK(report.at("pass") == true);
  CHECK(report.at("config").at("seed") == 3);
  CHECK(report.at("suites").size() == 4);
  for (const auto& s : report.at("suites")) CHECK(s.at("pass") == true);
}

TEST_CASE("same seed, same bytes") {
  TempDir a("det-a"), b("det-b");
  CHECK(run("verify --samples 1200 --seed 11 --out " + a.str()) == 0);
  CHECK(run("verify --samples 1200 --seed 11 --out " + b.str()) == 0);
  CHECK(slurp(a.path / "report.json") == slurp(b.path / "report.json"));
}

TEST_CASE("cost-report subcommand reproduces the table") {
  TempDir dir("bench");
  CHECK(run("bench-ops --out " + dir.str()) == 0);
  const auto report = nlohmann::json::parse(slurp(dir.path / "report.json"));
  CHECK(report.at("match") == true);
  CHECK(report.at("model").at("break_even_rate") ==
        doctest::Approx(0.31875));
  bool saw_pt64 = false;
  for (const auto& row : report.at("kernels")) {
    if (row.at("kernel") == "ptsoftmax" && row.at("n") == 64) {
      saw_pt64 = true;
      CHECK(row.at("counts").at("add") == 63);
      CHECK(row.at("counts").at("sub") == 64);
      CHECK(row.at("counts").at("shift") == 64);
      CHECK(row.at("counts").at("lut") == 1);
      CHECK(row.at("match") == true);
    }
  }
  CHECK(saw_pt64);
}

TEST_CASE("demo runs the pipeline end to end") {
  TempDir dir("demo");
  CHECK(run("demo --seed 4 --out " + dir.str() + kTinyModel) == 0);
  const auto report = nlohmann::json::parse(slurp(dir.path / "report.json"));
  CHECK(report.at("snn").at("matches_fixed_point") == true);
  CHECK(report.at("snn").at("multiplier_free") == true);
  CHECK(report.at("snn").at("ops").at("mul") == 0);
  CHECK(report.at("stage_deviations").size() == 4);
  CHECK(fs::exists(dir.path / "checkpoint" / "manifest.json"));
  const std::string csv = slurp(dir.path / "spikes.csv");
  CHECK(csv.rfind("block,rate\n", 0) == 0);
  CHECK(csv.find("\n0,") != std::string::npos);
}

TEST_CASE("spike-report emits the csv and is deterministic") {
  TempDir a("spike-a"), b("spike-b");
  const std::string args = "spike-report --seed 8" + kTinyModel + " --out ";
  CHECK(run(args + a.str()) == 0);
  CHECK(run(args + b.str()) == 0);
  CHECK(slurp(a.path / "spikes.csv") == slurp(b.path / "spikes.csv"));
  CHECK(slurp(a.path / "report.json") == slurp(b.path / "report.json"));
  const auto report = nlohmann::json::parse(slurp(a.path / "report.json"));
  CHECK(report.at("spikes").at("block_rates").size() == 1);
}

TEST_CASE("config file mirrors the flags, flags win") {
  TempDir dir("conf");
  const fs::path conf = dir.path / "run.conf";
  {
    std::ofstream out(conf);
    out << "seed=8\nblocks=1\ndim=8\nheads=2\nseq=4\nbattery=2\n";
  }
  TempDir from_file("conf-file"), from_flags("conf-flags"),
      overridden("conf-override");
  CHECK(run("spike-report --config " + conf.string() + " --out " +
            from_file.str()) == 0);
  CHECK(run("spike-report --seed 8" + kTinyModel + " --out " +
            from_flags.str()) == 0);
  CHECK(slurp(from_file.path / "report.json") ==
        slurp(from_flags.path / "report.json"));
  CHECK(slurp(from_file.path / "spikes.csv") ==
        slurp(from_flags.path / "spikes.csv"));

  // command line beats the file
  CHECK(run("spike-report --config " + conf.string() + " --seed 9 --out " +
            overridden.str()) == 0);
  const auto j = nlohmann::json::parse(slurp(overridden.path / "report.json"));
  CHECK(j.at("config").at("seed") == 9);
}

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>

#include "nvs/nvs.hpp"

namespace fs = std::filesystem;
using namespace nvs;

namespace {

struct Run {
  int code = -1;
  std::string output;  // stdout and stderr
};

Run run(const std::string& args) {
  const std::string cmd = std::string(NVS_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe) != nullptr) r.output += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("nvs_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Cli, MissingCheckpointIsAReadableError) {
  const auto dir = scratch("missing");
  const auto r = run("eval --checkpoint " + (dir / "nope.nvsm").string() + " --manifest " +
                     (dir / "manifest.json").string() + " --out " + dir.string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("error: checkpoint not found"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(dir / "report.json"));
  fs::remove_all(dir);
}

TEST(Cli, UnknownSubcommandFails) {
  EXPECT_NE(run("frobnicate").code, 0);
  EXPECT_NE(run("").code, 0);
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, BadValuesFail) {
  const auto dir = scratch("bad");
  const auto r = run("gen-data --samples-per-class 0 --out " + dir.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("error:"), std::string::npos) << r.output;
  EXPECT_NE(run("train --epochs 0 --manifest x --out " + dir.string()).code, 0);
  EXPECT_NE(run("eval --checkpoint x --strategies learned_kth:12 --out " + dir.string()).code, 0);
  fs::remove_all(dir);
}

TEST(Cli, RenderingAnEmptyGridGivesBlackImages) {
  const auto dir = scratch("render");
  io::write_file(dir / "empty.vxg", vxg::encode(BinaryGrid(16)));
  const auto r = run("render --grid " + (dir / "empty.vxg").string() + " --image-size 16 --out " + dir.string());
  ASSERT_EQ(r.code, 0) << r.output;
  for (int i = 0; i < 11; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "view_%02d.ppm", i);
    const auto bytes = io::read_file(dir / name);
    const std::string header = "P6\n16 16\n255\n";
    ASSERT_EQ(bytes.substr(0, header.size()), header) << name;
    const auto pixels = bytes.substr(header.size());
    EXPECT_EQ(pixels.size(), 16u * 16u * 3u);
    EXPECT_EQ(pixels.find_first_not_of('\0'), std::string::npos) << name;
  }
  fs::remove_all(dir);
}

TEST(Cli, SmallPipelineEndToEnd) {
  const auto dir = scratch("pipeline");
  const auto data = dir / "data";
  const auto run_dir = dir / "run";
  auto r = run("gen-data --seed 3 --samples-per-class 3 --out " + data.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto m = load_manifest(data / "manifest.json");
  EXPECT_EQ(m.count(Split::kTrain), 10u);
  EXPECT_EQ(m.count(Split::kTest), 5u);
  EXPECT_TRUE(fs::exists(data / "resolved_config.json"));

  r = run("train --seed 3 --epochs 1 --manifest " + (data / "manifest.json").string() + " --out " +
          run_dir.string());
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* f : {"model.nvsm", "train.log", "probe_loss.tsv", "resolved_config.json"}) {
    EXPECT_TRUE(fs::exists(run_dir / f)) << f;
  }
  const auto log = io::read_file(run_dir / "train.log");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 2);  // 10 samples in batches of 8

  r = run("eval --seed 3 --checkpoint " + (run_dir / "model.nvsm").string() + " --manifest " +
          (data / "manifest.json").string() + " --out " + run_dir.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("overall"), std::string::npos);
  const auto report = report_from_json(nlohmann::json::parse(io::read_file(run_dir / "report.json")));
  EXPECT_EQ(report.row("overall", "learned_best").n, 5u);

  r = run("oracle --checkpoint " + (run_dir / "model.nvsm").string() + " --manifest " +
          (data / "manifest.json").string() + " --out " + run_dir.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto oracle = nlohmann::json::parse(io::read_file(run_dir / "oracle.json"));
  EXPECT_EQ(oracle.size(), 5u);

  r = run("report " + (run_dir / "report.json").string() + " " + (run_dir / "report.json").string() +
          " --labels a b --out " + dir.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir / "comparison.json"));

  r = run("render --sample chair_0000 --manifest " + (data / "manifest.json").string() + " --out " +
          (dir / "views").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir / "views" / "view_10.ppm"));
  fs::remove_all(dir);
}

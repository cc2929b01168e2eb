#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <regex>
#include <string>
#include <thread>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = STAA_CLI_PATH;

struct CliRun {
  int code;
  std::string output;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("staa_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

CliRun run(const std::string& args, const fs::path& log) {
  const std::string cmd = "'" + kCli + "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

std::string strip_timing(nlohmann::json j) {
  j.erase("duration_ms");
  return j.dump();
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  const auto dir = scratch("usage");
  EXPECT_EQ(run("--help", dir / "log").code, 0);
  EXPECT_EQ(run("", dir / "log").code, 2);
  EXPECT_EQ(run("frobnicate", dir / "log").code, 2);
  const CliRun bad_key = run("--out '" + dir.string() + "' --set nope=1 generate", dir / "log");
  EXPECT_EQ(bad_key.code, 6);
  EXPECT_NE(bad_key.output.find("unknown config key"), std::string::npos);
  const CliRun missing = run("--out '" + dir.string() + "' explain /nonexistent.raw", dir / "log");
  EXPECT_EQ(missing.code, 5);
}

TEST(Cli, GenerateExplainRenderIsDeterministic) {
  const auto dir = scratch("explain");
  const std::string out = "--out '" + dir.string() + "' ";
  ASSERT_EQ(run(out + "generate --count 2", dir / "log").code, 0);
  const auto clip = dir / "moving-square-0.raw";
  ASSERT_TRUE(fs::exists(clip));
  EXPECT_EQ(fs::file_size(clip), 8u * 32 * 32 * 3);

  const CliRun first = run(out + "explain --render '" + clip.string() + "'", dir / "log");
  ASSERT_EQ(first.code, 0) << first.output;
  const auto json_path = dir / "moving-square-0.staa.json";
  const auto frames = dir / "moving-square-0_frames";
  ASSERT_TRUE(fs::exists(json_path));
  int ppm = 0;
  for (const auto& e : fs::directory_iterator(frames)) ppm += e.path().extension() == ".ppm";
  EXPECT_EQ(ppm, 8);
  const std::string json1 = strip_timing(nlohmann::json::parse(slurp(json_path)));
  const std::string frame1 = slurp(frames / "moving-square-0_frame0005.ppm");

  ASSERT_EQ(run(out + "explain --render '" + clip.string() + "'", dir / "log").code, 0);
  EXPECT_EQ(strip_timing(nlohmann::json::parse(slurp(json_path))), json1);
  EXPECT_EQ(slurp(frames / "moving-square-0_frame0005.ppm"), frame1);

  fs::remove_all(frames);
  ASSERT_EQ(run(out + "render '" + clip.string() + "' --record '" + json_path.string() + "'",
                dir / "log")
                .code,
            0);
  EXPECT_EQ(slurp(frames / "moving-square-0_frame0005.ppm"), frame1);
}

TEST(Cli, ConfigDumpAndReload) {
  const auto dir = scratch("config");
  const auto cfg = dir / "run.cfg";
  ASSERT_EQ(run("--out '" + dir.string() + "' --set staa.lambda=0.5 --dump-config '" +
                    cfg.string() + "' generate",
                dir / "log")
                .code,
            0);
  EXPECT_NE(slurp(cfg).find("staa.lambda = 0.5"), std::string::npos);
  const auto cfg2 = dir / "run2.cfg";
  ASSERT_EQ(run("--config '" + cfg.string() + "' --dump-config '" + cfg2.string() + "' generate",
                dir / "log")
                .code,
            0);
  EXPECT_EQ(slurp(cfg), slurp(cfg2));
}

TEST(Cli, CompareAndEvalProduceAllMethods) {
  const auto dir = scratch("compare");
  const std::string common = "--out '" + dir.string() +
                             "' --set shap.segments=4 --set lime.perturbations=40 "
                             "--set metrics.predictor=oracle ";
  ASSERT_EQ(run(common + "generate --count 2", dir / "log").code, 0);
  const CliRun cmp = run(common + "compare --generated 2", dir / "log");
  ASSERT_EQ(cmp.code, 0) << cmp.output;
  for (const char* m : {"SHAP", "LIME", "STAA (Vanilla)", "STAA (Enhanced)"}) {
    EXPECT_NE(cmp.output.find(m), std::string::npos) << m;
  }
  const auto j = nlohmann::json::parse(slurp(dir / "compare.json"));
  EXPECT_EQ(j.at("cost").at("rows").size(), 4u);
  EXPECT_EQ(j.at("cost").at("reference"), "STAA (Vanilla)");

  const auto clips = dir / "clips";
  fs::create_directories(clips);
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".raw") fs::copy(e.path(), clips / e.path().filename());
  }
  const CliRun ev = run(common + "eval '" + clips.string() + "'", dir / "log");
  ASSERT_EQ(ev.code, 0) << ev.output;
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "metrics.json")).at("clips"), 2);
  const auto empty = dir / "empty";
  fs::create_directories(empty);
  EXPECT_EQ(run(common + "eval '" + empty.string() + "'", dir / "log").code, 5);
}

TEST(Cli, ServeStreamBenchOverLoopback) {
  const auto dir = scratch("serve");
  const std::string out = "--out '" + dir.string() + "' ";
  const auto server_log = dir / "server.log";
  std::thread server([&] { run(out + "serve --bind 127.0.0.1:0", server_log); });
  std::smatch m;
  std::string port;
  for (int i = 0; i < 200 && port.empty(); ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(25));
    const std::string text = slurp(server_log);
    if (std::regex_search(text, m, std::regex("listening on port (\\d+)"))) port = m[1];
  }
  ASSERT_FALSE(port.empty());
  const std::string addr = "127.0.0.1:" + port;

  ASSERT_EQ(run(out + "generate", dir / "log").code, 0);
  const CliRun st = run(out + "stream --connect " + addr + " --batch 4 --clip '" +
                         (dir / "moving-square-0.raw").string() + "'",
                     dir / "log");
  EXPECT_EQ(st.code, 0) << st.output;
  EXPECT_NE(st.output.find("sent 2 batches, 2 explanations, 0 dropped"), std::string::npos)
      << st.output;
  EXPECT_TRUE(fs::exists(dir / "stream_latency_cdf.csv"));

  const CliRun bench = run(out + "bench --connect " + addr + " --batches 10 --shutdown", dir / "log");
  EXPECT_EQ(bench.code, 0) << bench.output;
  EXPECT_NE(bench.output.find("dropped 0 of 10"), std::string::npos) << bench.output;
  server.join();
  EXPECT_NE(slurp(server_log).find("processed 12"), std::string::npos) << slurp(server_log);
  const std::string csv = slurp(dir / "latency_cdf.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 11);
}

#include "test_support.hpp"

#include <cstdio>
#include <sys/wait.h>

using namespace cocobm;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run_cli(const std::string& args) {
  std::string cmd = std::string(COCOBM_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
  int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

}  // namespace

TEST(Cli, HelpAndBadOptions) {
  auto help = run_cli("--help");
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("ground"), std::string::npos);
  EXPECT_EQ(run_cli("ground --bogus").code, 1);
  EXPECT_EQ(run_cli("").code, 1);
  EXPECT_EQ(run_cli("ground --backend other").code, 1);
}

TEST(Cli, GroundOnThePlantedWorld) {
  fixtures::TempDir dir;
  auto r = run_cli("ground --quiet --out " + (dir / "run").string());
  ASSERT_EQ(r.code, 0) << r.out;
  auto j = json::parse(r.out);
  EXPECT_EQ(j.at("status").get<std::string>(), "converged");
  EXPECT_TRUE(fs::exists(dir / "run" / "ground" / "run.json"));
  auto again = run_cli("ground --quiet --out " + (dir / "run").string());
  EXPECT_EQ(again.code, 1);
  EXPECT_NE(again.out.find("not empty"), std::string::npos);
}

TEST(Cli, InvalidThresholdWritesNothing) {
  fixtures::TempDir dir;
  auto r = run_cli("ground --ta 1.5 --out " + (dir / "run").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("t_a"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "run"));
}

TEST(Cli, TrainBeforeGroundFails) {
  fixtures::TempDir dir;
  auto r = run_cli("train --out " + (dir / "run").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("ground"), std::string::npos);
}

TEST(Cli, ConfigFileIsStrict) {
  fixtures::TempDir dir;
  write_text_file(dir / "c.json", R"({"unknown": true})");
  auto r = run_cli("ground --config " + (dir / "c.json").string() + " --out " + (dir / "run").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("unknown key"), std::string::npos);
}

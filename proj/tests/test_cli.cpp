#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "yolod/dataset.hpp"
#include "yolod/errors.hpp"

using namespace yolod;
using yolod::tools::run;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("yolod_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct Result {
  int code;
  std::string out, err;
};

Result call(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string read(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("config file parsing") {
  TempDir dir("cfg");
  write(dir.path / "a.cfg", "\xEF\xBB\xBF# comment\n\n epochs = 7 \n--lr0=0.5  # trailing\nout=a b\n");
  const auto e = tools::parse_config_file(dir.path / "a.cfg");
  REQUIRE(e.size() == 3);
  CHECK(e[0].key == "epochs");
  CHECK(e[0].value == "7");
  CHECK(e[0].line == 3);
  CHECK(e[1].key == "lr0");
  CHECK(e[1].value == "0.5");
  CHECK(e[2].value == "a b");

  write(dir.path / "b.cfg", "epochs=1\nnot a pair\n");
  try {
    tools::parse_config_file(dir.path / "b.cfg");
    FAIL("expected ConfigError");
  } catch (const ConfigError& err) {
    CHECK(std::string(err.what()).find(":2:") != std::string::npos);
  }
  CHECK_THROWS_AS(tools::parse_config_file(dir.path / "missing.cfg"), ConfigError);
}

TEST_CASE("usage errors exit 2") {
  CHECK(call({}).code == tools::kExitUsage);
  CHECK(call({"frobnicate"}).code == tools::kExitUsage);
  CHECK(call({"--help"}).code == tools::kExitOk);
  CHECK(call({"generate"}).code == tools::kExitUsage);
  CHECK(call({"curves", "--points", "many"}).code == tools::kExitUsage);
  CHECK(call({"train", "--data", "/nonexistent/yolod"}).code == tools::kExitUsage);
  CHECK(call({"train", "--data", "x", "--neck", "bifpn"}).code == tools::kExitUsage);
  CHECK(call({"assign"}).code == tools::kExitUsage);
  CHECK(call({"assign", "--box", "1,2,3"}).code == tools::kExitUsage);
  CHECK(call({"curves", "--scale", "2,x"}).code == tools::kExitUsage);

  TempDir dir("usage");
  const Result r = call({"generate", "--out", (dir.path / "d").string(), "--size", "100"});
  CHECK(r.code == tools::kExitUsage);
  CHECK(r.err.find("divisible by 32") != std::string::npos);

  write(dir.path / "bad.cfg", "no_such_key=1\n");
  const Result u = call({"curves", "--config", (dir.path / "bad.cfg").string()});
  CHECK(u.code == tools::kExitUsage);
  CHECK(u.err.find("no_such_key") != std::string::npos);
}

TEST_CASE("generate is deterministic and handles zero images") {
  TempDir dir("gen");
  const auto a = (dir.path / "a").string(), b = (dir.path / "b").string(), z = (dir.path / "z").string();
  REQUIRE(call({"generate", "--out", a, "--count", "3", "--seed", "5", "--size", "64", "--max-size", "12"}).code == 0);
  REQUIRE(call({"generate", "--out", b, "--count", "3", "--seed", "5", "--size", "64", "--max-size", "12"}).code == 0);
  CHECK(read(fs::path(a) / "annotations.txt") == read(fs::path(b) / "annotations.txt"));
  CHECK(load_dataset(a) == load_dataset(b));

  REQUIRE(call({"generate", "--out", z, "--count", "0"}).code == 0);
  CHECK(load_dataset(z).empty());
  // An empty dataset cannot be trained on.
  CHECK(call({"train", "--data", z, "--out", (dir.path / "r").string()}).code == tools::kExitUsage);
}

TEST_CASE("flags override the config file") {
  TempDir dir("prec");
  write(dir.path / "c.cfg", "scale=3\npoints=11\nout=" + (dir.path / "from_file").string() +
                                "\n# train-only keys are skipped for other subcommands\nepochs=4\n");
  const auto cfg = (dir.path / "c.cfg").string();
  Result r = call({"curves", "--config", cfg});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir.path / "from_file" / "curve_scale3.csv"));
  CHECK(!fs::exists(dir.path / "from_file" / "curve_scale2.csv"));

  r = call({"curves", "--scale", "4", "--config", cfg, "--out", (dir.path / "from_flag").string()});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir.path / "from_flag" / "curve_scale4.csv"));
  CHECK(!fs::exists(dir.path / "from_flag" / "curve_scale3.csv"));

  std::ifstream csv(dir.path / "from_flag" / "curve_scale4.csv");
  std::string line;
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 12);
}

TEST_CASE("curves report the slope law") {
  TempDir dir("curves");
  const Result r = call({"curves", "--out", dir.path.string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("3      0.500000   0.750000") != std::string::npos);
  CHECK(fs::exists(dir.path / "decode.svg"));
  CHECK(read(dir.path / "slope.svg").starts_with("<svg"));
}

TEST_CASE("assign dumps positives") {
  const Result r = call({"assign", "--box", "50,50,30,20,1", "--amp.enabled", "false"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("center_only") != std::string::npos);
  CHECK(r.out.find(" amp ") == std::string::npos);
  const Result a = call({"assign", "--box", "50,50,30,20,1"});
  REQUIRE(a.code == 0);
  CHECK(a.out.find("amp") != std::string::npos);
  auto positives = [](const std::string& text) {
    const auto end = text.rfind(" positives");
    return std::stoi(text.substr(text.rfind('\n', end) + 1, end));
  };
  CHECK(positives(a.out) > positives(r.out));
}

TEST_CASE("train, resume and eval round trip") {
  TempDir dir("train");
  const auto data = (dir.path / "d").string(), out = (dir.path / "r").string();
  REQUIRE(call({"generate", "--out", data, "--count", "4", "--size", "64", "--max-size", "14"}).code == 0);
  Result r = call({"train", "--data", data, "--out", out, "--epochs", "1", "--batch", "2", "--flips", "false"});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(fs::path(out) / "last.ckpt"));
  CHECK(fs::exists(fs::path(out) / "loss.svg"));
  CHECK(read(fs::path(out) / "config.txt").find("flips=") != std::string::npos);

  r = call({"train", "--data", data, "--out", out, "--epochs", "2", "--batch", "2", "--flips", "false", "--resume",
            (fs::path(out) / "last.ckpt").string()});
  REQUIRE(r.code == 0);
  std::ifstream csv(fs::path(out) / "metrics.csv");
  std::string line;
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 3);

  const auto ev = (dir.path / "e").string();
  r = call({"eval", "--data", data, "--ckpt", (fs::path(out) / "last.ckpt").string(), "--out", ev});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("AP50") != std::string::npos);
  CHECK(read(fs::path(ev) / "report.csv").starts_with("metric,value\nap,"));
  CHECK(fs::exists(fs::path(ev) / "predictions.txt"));

  // A checkpoint from another width is a state error.
  r = call({"eval", "--data", data, "--ckpt", (fs::path(out) / "last.ckpt").string(), "--preset", "m"});
  CHECK(r.code == tools::kExitState);
  CHECK(call({"eval", "--data", data, "--ckpt", (dir.path / "none.ckpt").string()}).code == tools::kExitUsage);
}

TEST_CASE("bench reports growing models") {
  const Result r = call({"bench", "--preset", "s,m", "--repeat", "2", "--warmup", "0", "--inner", "1", "--size", "64"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("\ns ") != std::string::npos);
  CHECK(r.out.find("\nm ") != std::string::npos);
  CHECK(call({"bench", "--repeat", "1"}).code == tools::kExitUsage);
  CHECK(call({"bench", "--size", "70"}).code == tools::kExitState);
}

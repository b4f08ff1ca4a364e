#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const char* cli_path() { return KLVL_CLI_PATH; }

int run_cli(const std::string& args) {
  const std::string cmd = std::string(cli_path()) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("klvl_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const std::string& body) {
  std::size_t n = 0;
  for (char c : body) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("run subcommand writes the expected artifacts") {
  fs::path dir = fresh_dir("run");
  const int rc = run_cli(
      "run --optimizer svmr --levels 3 --n 120 --batch 16 --initial-batch 16 "
      "--eta 0.01 --beta 0.1 --iters 40 --lf 50 --tag t --out " + dir.string());
  REQUIRE(rc == 0);
  const fs::path out = dir / "run-t";
  REQUIRE(fs::exists(out / "config.json"));
  REQUIRE(fs::exists(out / "rows.csv"));
  REQUIRE(fs::exists(out / "summary.csv"));
  REQUIRE(fs::exists(out / "metadata.json"));
  // header + t=0 + 40 iterations
  REQUIRE(line_count(slurp(out / "rows.csv")) == 42);
}

TEST_CASE("rerunning a subcommand reproduces rows.csv byte for byte") {
  fs::path dir = fresh_dir("det");
  const std::string base =
      "run --optimizer storm --problem quadratic --width 4 --n 32 --batch 4 "
      "--eta 0.02 --beta 0.3 --iters 50 --lf 100 --seed-base 9 --out " +
      dir.string();
  REQUIRE(run_cli(base + " --tag a") == 0);
  REQUIRE(run_cli(base + " --tag b") == 0);
  REQUIRE(slurp(dir / "run-a" / "rows.csv") == slurp(dir / "run-b" / "rows.csv"));
  REQUIRE(slurp(dir / "run-a" / "summary.csv") ==
          slurp(dir / "run-b" / "summary.csv"));
}

TEST_CASE("stability subcommand emits one row per seed") {
  fs::path dir = fresh_dir("stab");
  const int rc = run_cli(
      "stability --optimizer storm --problem quadratic --width 3 --n 64 "
      "--batch 1 --eta 0.01 --beta 0.3 --iters 32 --lf 100 --level 1 "
      "--position 3 --seed-count 5 --seed-base 7 --tag t --out " + dir.string());
  REQUIRE(rc == 0);
  const std::string rows = slurp(dir / "stability-t" / "rows.csv");
  REQUIRE(line_count(rows) == 6);  // header + 5 seeds
  REQUIRE(rows.find("7,") != std::string::npos);
  REQUIRE(rows.find("11,") != std::string::npos);  // seeds 7..11
}

TEST_CASE("sweep-levels produces one summary row per level count") {
  fs::path dir = fresh_dir("lv");
  const int rc = run_cli(
      "sweep-levels --k-min 1 --k-max 4 --n 80 --batch 16 --initial-batch 16 "
      "--eta 0.01 --beta 0.1 --iters 20 --lf 50 --seed-count 2 --tag t --out " +
      dir.string());
  REQUIRE(rc == 0);
  const std::string summary = slurp(dir / "sweep-levels-t" / "summary.csv");
  REQUIRE(line_count(summary) == 5);  // header + 4 points
  const std::string rows = slurp(dir / "sweep-levels-t" / "rows.csv");
  REQUIRE(line_count(rows) == 9);  // header + 4 points x 2 seeds
}

TEST_CASE("missing required optimizer is a usage error") {
  fs::path dir = fresh_dir("usage");
  REQUIRE(run_cli("run --levels 2 --out " + dir.string()) != 0);
}

TEST_CASE("conflicting schedule sources are rejected") {
  fs::path dir = fresh_dir("conflict");
  REQUIRE(run_cli("run --optimizer storm --problem quadratic --n 16 "
                  "--eta 0.1 --schedule convex --tag t --out " +
                  dir.string()) != 0);
}

TEST_CASE("config files merge under explicit flags") {
  fs::path dir = fresh_dir("cfg");
  const fs::path cfg = dir / "cfg.json";
  {
    std::ofstream f(cfg);
    f << R"({"optimizer":"storm","problem":"quadratic","width":3,"n":32,)"
      << R"("batch":2,"eta":0.02,"beta":0.3,"iters":30,"lf":100,)"
      << R"("explicit-schedule":true,"seed-base":4})";
  }
  REQUIRE(run_cli("run --config " + cfg.string() + " --tag t --out " +
                  dir.string()) == 0);
  const std::string echoed = slurp(dir / "run-t" / "config.json");
  REQUIRE(echoed.find("\"optimizer\": \"storm\"") != std::string::npos);
  REQUIRE(echoed.find("\"iters\": 30") != std::string::npos);
  // flag overrides the file
  REQUIRE(run_cli("run --config " + cfg.string() + " --iters 10 --tag u --out " +
                  dir.string()) == 0);
  REQUIRE(slurp(dir / "run-u" / "config.json").find("\"iters\": 10") !=
          std::string::npos);
}

TEST_CASE("unknown config keys are listed as errors") {
  fs::path dir = fresh_dir("unknown");
  const fs::path cfg = dir / "cfg.json";
  {
    std::ofstream f(cfg);
    f << R"({"optimizer":"storm","no-such-key":1})";
  }
  REQUIRE(run_cli("run --config " + cfg.string() + " --out " + dir.string()) !=
          0);
}

TEST_CASE("config echo round-trips through --config") {
  fs::path dir = fresh_dir("echo");
  REQUIRE(run_cli("run --optimizer storm --problem quadratic --width 3 --n 32 "
                  "--batch 2 --eta 0.02 --beta 0.3 --iters 25 --lf 100 "
                  "--tag t --out " + dir.string()) == 0);
  const fs::path echoed = dir / "run-t" / "config.json";
  // feed the echoed config back in; only output location changes
  REQUIRE(run_cli("run --config " + echoed.string() + " --tag u --out " +
                  dir.string()) == 0);
  const std::string a = slurp(dir / "run-t" / "rows.csv");
  const std::string b = slurp(dir / "run-u" / "rows.csv");
  REQUIRE(a == b);
  // and the echoed configs agree on everything but out/tag
  std::string ca = slurp(echoed), cb = slurp(dir / "run-u" / "config.json");
  auto strip = [](std::string s, const std::string& key) {
    const auto pos = s.find("\"" + key + "\"");
    if (pos == std::string::npos) return s;
    const auto end = s.find('\n', pos);
    return s.substr(0, pos) + s.substr(end + 1);
  };
  for (const char* key : {"tag", "out"}) {
    ca = strip(ca, key);
    cb = strip(cb, key);
  }
  REQUIRE(ca == cb);
}

TEST_CASE("check-invariants passes on a fresh build") {
  fs::path dir = fresh_dir("inv");
  REQUIRE(run_cli("check-invariants --tag t --out " + dir.string()) == 0);
}

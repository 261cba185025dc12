#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "moistsw/cli.hpp"

using namespace moistsw;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result call(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli_main(args, out, err);
  return {code, out.str(), err.str()};
}

bool has(const std::string& s, const std::string& what) { return s.find(what) != std::string::npos; }

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("moistsw-cli-" + std::to_string(rd()));
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("undersized grid is refused") {
  const auto r = call({"run", "--case", "steady-jet", "--nx", "3"});
  CHECK(r.code == 1);
  CHECK(has(r.err, "grid too small"));
}

TEST_CASE("bad arguments give usage and exit 1") {
  auto r = call({"run", "--frobnicate"});
  CHECK(r.code == 1);
  CHECK(has(r.err, "Usage"));
  r = call({});
  CHECK(r.code == 1);
  r = call({"run", "--placement", "sideways"});
  CHECK(r.code == 1);
  r = call({"run", "--case", "hurricane"});
  CHECK(r.code == 1);
  r = call({"sweep-dt", "--dts", "100,200"});
  CHECK(r.code == 1);
  CHECK(has(r.err, "decreasing"));
  r = call({"run", "--dt", "700", "--days", "1"});  // 86400 / 700 is not whole
  CHECK(r.code == 1);
  CHECK(has(r.err, "whole number"));
  r = call({"run", "--placement", "final", "--solver", "moist", "--nx", "8", "--days", "0.1"});
  CHECK(r.code == 1);
  CHECK(has(r.err, "cannot be used"));
}

TEST_CASE("help exits 0") {
  const auto r = call({"--help"});
  CHECK(r.code == 0);
  CHECK(has(r.out, "compare-coupling"));
  CHECK(has(r.out, "sweep-dx"));
}

TEST_CASE("small run writes both formulations") {
  TempDir tmp;
  const auto r = call({"run", "--case", "gravity-wave", "--nx", "16", "--dt", "1200", "--days", "0.125",
                       "--placement", "inner-loop", "--beta", "0.5", "--out", tmp.path.string()});
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(has(r.out, "vs integrated"));
  const auto split = tmp.path / "gravity-wave" / "inner-loop-beta0.5" / "dt1200";
  const auto integ = tmp.path / "gravity-wave" / "integrated" / "dt1200";
  CHECK(fs::exists(split / "diagnostics.csv"));
  CHECK(fs::exists(split / "fields" / "q_c_t10800.dat"));
  CHECK(fs::exists(integ / "fields" / "q_t_t10800.dat"));
  std::ifstream is(split / "summary.json");
  const auto js = nlohmann::json::parse(is);
  CHECK(js.contains("errors_vs_integrated"));
  CHECK(js["errors_vs_integrated"]["b"].get<double>() > 0);
}

TEST_CASE("Courant violations are reported, not fatal") {
  TempDir tmp;
  // 20 m/s jet across 10e7/8 m cells at dt = 86400: Courant about 1.4
  const auto r = call({"run", "--case", "steady-jet", "--nx", "8", "--dt", "86400", "--days", "1", "--out",
                       tmp.path.string()});
  CHECK(r.code == 0);
  CHECK(has(r.err, "Courant number above 1"));
}

TEST_CASE("small sweeps") {
  TempDir tmp;
  auto r = call({"sweep-dt", "--nx", "12", "--dts", "2400,1200", "--ref-dt", "600", "--days", "0.25", "--out",
            tmp.path.string()});
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(has(r.out, "slopes"));
  CHECK(fs::exists(tmp.path / "gravity-wave" / "convergence.csv"));

  r = call({"sweep-dx", "--nx", "8", "--days", "0.25", "--out", tmp.path.string()});
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(fs::exists(tmp.path / "steady-jet" / "convergence.csv"));
  CHECK(has(r.out, "integrated"));
}

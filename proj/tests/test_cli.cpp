#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "cli.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kSeq = "laser 3us\nmw freq=2884.7MHz rabi=(2.381MHz,0,0) dur=210ns\nreadout\n";
// sha256sum of kSeq.
constexpr const char* kSeqSha256 = "16c81a282ab824a20c957192927fe490b6a963c76a126fda45c26cbfc571de0f";

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = nvspin::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("nvspin_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const std::string& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

std::vector<std::vector<double>> read_csv(const std::string& path, std::string* header = nullptr) {
  std::istringstream in(slurp(path));
  std::string line;
  std::getline(in, line);
  if (header) *header = line;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

TEST_CASE("params calculator") {
  TempDir dir;
  const auto r = run({"params", "--d", "2870MHz", "--ex", "4MHz", "--zeeman", "100MHz", "--out", dir / "p.csv"});
  CHECK(r.code == 0);
  CHECK(r.out.find("D'        2875.219 MHz") != std::string::npos);
  CHECK(r.out.find("E'x       5.740 MHz") != std::string::npos);
  CHECK(r.out.find("exact 2880.951 MHz") != std::string::npos);

  const auto field = run({"params", "--field", "0.001", "--out", dir / "f.csv"});
  CHECK(field.code == 0);
  std::string header;
  const auto rows = read_csv(dir / "f.csv", &header);
  CHECK(header.rfind("zeeman_hz,d_prime_hz", 0) == 0);
  CHECK(rows.at(0).at(0) == doctest::Approx(28.024e6));
}

TEST_CASE("odmr output has minima at the default operating-point dips") {
  TempDir dir;
  const auto r = run({"odmr", "--d-prime", "2880.75MHz", "--ex-prime", "3.95MHz", "--linewidth", "1MHz", "--from",
                      "2.87GHz", "--to", "2.89GHz", "--points", "401", "--out", dir / "odmr.csv"});
  REQUIRE(r.code == 0);
  std::string header;
  const auto rows = read_csv(dir / "odmr.csv", &header);
  CHECK(header == "frequency_hz,signal");
  REQUIRE(rows.size() == 401);
  std::vector<double> minima;
  for (std::size_t i = 1; i + 1 < rows.size(); ++i) {
    if (rows[i][1] < rows[i - 1][1] && rows[i][1] <= rows[i + 1][1]) minima.push_back(rows[i][0]);
  }
  REQUIRE(minima.size() == 2);
  CHECK(minima[0] == doctest::Approx(2876.8e6));
  CHECK(minima[1] == doctest::Approx(2884.7e6));

  const auto manifest = ordered_json::parse(slurp(dir / "odmr.csv.manifest.json"));
  CHECK(manifest["command"] == "odmr");
  CHECK(manifest["config"]["--linewidth"] == "1MHz");
  CHECK(manifest["config"]["--from"] == "2.87GHz");
  CHECK(manifest["seed"] == 1);
  CHECK(manifest["outputs"][0] == dir / "odmr.csv");

  const auto fit = run({"fit-dips", dir / "odmr.csv", "--out", dir / "dips.csv"});
  CHECK(fit.code == 0);
  CHECK(fit.out.find("f(B<->D)      7.900 MHz") != std::string::npos);
}

TEST_CASE("JSON envelope mirrors the CSV records") {
  TempDir dir;
  REQUIRE(run({"rabi-mw", "--points", "101", "--out", dir / "r.csv"}).code == 0);
  REQUIRE(run({"rabi-mw", "--points", "101", "--format", "json", "--out", dir / "r.json"}).code == 0);
  const auto doc = ordered_json::parse(slurp(dir / "r.json"));
  REQUIRE(doc.contains("manifest"));
  const auto& recs = doc["records"];
  REQUIRE(recs.size() == 101);
  CHECK(recs[0].begin().key() == "time_s");
  const auto rows = read_csv(dir / "r.csv");
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(recs[i]["signal"].get<double>() == rows[i][1]);
}

TEST_CASE("noise is reproducible and output is byte-identical") {
  TempDir dir;
  const std::vector<std::string> base{"rabi-mw", "--points", "201", "--noise", "0.01", "--seed", "42"};
  auto a = base, b = base, c = base;
  a.insert(a.end(), {"--out", dir / "a.csv"});
  b.insert(b.end(), {"--out", dir / "b.csv"});
  c[6] = "43";
  c.insert(c.end(), {"--out", dir / "c.csv"});
  REQUIRE(run(a).code == 0);
  REQUIRE(run(b).code == 0);
  REQUIRE(run(c).code == 0);
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  CHECK(slurp(dir / "a.csv") != slurp(dir / "c.csv"));

  const std::string data = slurp(dir / "a.csv");
  const std::string manifest = slurp(dir / "a.csv.manifest.json");
  REQUIRE(run(a).code == 0);
  CHECK(slurp(dir / "a.csv") == data);
  CHECK(slurp(dir / "a.csv.manifest.json") == manifest);
}

TEST_CASE("fit-rabi") {
  TempDir dir;
  REQUIRE(run({"rabi-mw", "--out", dir / "trace.csv"}).code == 0);
  const auto fit = run({"fit-rabi", dir / "trace.csv", "--full-scale", "0.3", "--out", dir / "fit.csv"});
  CHECK(fit.code == 0);
  CHECK(fit.out.find("pi time       210.0 ns") != std::string::npos);

  std::string flat = "time_s,signal\n";
  for (int i = 0; i < 40; ++i) flat += std::to_string(i) + "e-8,1\n";
  write(dir / "flat.csv", flat);
  const auto r = run({"fit-rabi", dir / "flat.csv", "--out", dir / "x.csv"});
  CHECK(r.code == 2);
  CHECK(r.err.find("no oscillation detected") != std::string::npos);
}

TEST_CASE("simulate runs a sequence file and records its digest") {
  TempDir dir;
  write(dir / "rabi.seq", kSeq);
  const auto r = run({"simulate", dir / "rabi.seq", "--out", dir / "traj.csv", "--plot-data"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("readout") != std::string::npos);
  const auto manifest = ordered_json::parse(slurp(dir / "traj.csv.manifest.json"));
  CHECK(manifest["inputs"][0]["sha256"] == kSeqSha256);
  CHECK(fs::exists(dir / "traj.dat"));
  CHECK(slurp(dir / "traj.gp").find("'traj.dat' using 1:2") != std::string::npos);

  write(dir / "bad.seq", "laser 3us\nmw freq=2.88GHz dur=100ns\n");
  const auto bad = run({"simulate", dir / "bad.seq", "--out", dir / "bad.csv"});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("bad.seq:2:1: error: mw: missing `rabi=`") != std::string::npos);
}

TEST_CASE("chevron writes a long table with blocks for gnuplot") {
  TempDir dir;
  const auto r = run({"chevron", "--rows", "5", "--points", "11", "--out", dir / "chev.csv", "--plot-data"});
  REQUIRE(r.code == 0);
  std::string header;
  const auto rows = read_csv(dir / "chev.csv", &header);
  CHECK(header == "rf_frequency_hz,time_s,signal,p_bright,p_bright_analytic");
  CHECK(rows.size() == 55);
  CHECK(slurp(dir / "chev.gp").find("pm3d") != std::string::npos);
}

TEST_CASE("default output directory comes from the environment") {
  TempDir dir;
  ::setenv("NVSPIN_OUTPUT_DIR", dir.path.c_str(), 1);
  const auto r = run({"params"});
  ::unsetenv("NVSPIN_OUTPUT_DIR");
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "params.csv"));
}

TEST_CASE("usage errors exit with 1") {
  CHECK(run({}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"odmr", "--no-such-flag"}).code == 1);
  const auto q = run({"odmr", "--linewidth", "1MHzz", "--out", "/dev/null"});
  CHECK(q.code == 1);
  CHECK(q.err.find("--linewidth") != std::string::npos);
  CHECK(run({"rabi-bd", "--format", "xml"}).code == 1);
  CHECK(run({"fit-dips", "/nonexistent/file.csv"}).code == 1);
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"--version"}).code == 0);
}

// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "geoftscp/changepoint.hpp"
#include "geoftscp/cli.hpp"
#include "geoftscp/simstudy.hpp"

using namespace geoftscp;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  static int counter = 0;
  const fs::path dir =
      fs::temp_directory_path() / ("geoftscp_test_" + tag + "_" + std::to_string(counter++));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spit(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

int run(std::initializer_list<const char*> args) {
  std::vector<const char*> argv{"geoftscp"};
  argv.insert(argv.end(), args);
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

FunctionalDataset small_dataset(std::uint64_t seed) {
  SimDesign design;
  design.n_s1 = 5;
  design.n_s2 = 6;
  design.N = 12;
  design.m = 16;
  design.seed = seed;
  return generate_dataset(design, 10.0, Dependence::Independent, 0).first;
}

const char* kMiniSimConfig = R"({
  "seed": 99,
  "replicates": 1,
  "eta": 10.0,
  "mode": "independent",
  "detectors": [{"family": "score", "flavor": "individual", "q": 4, "alpha": 0.05}],
  "design": {"n_s1": 5, "n_s2": 6, "years": 12, "points_per_curve": 16},
  "null": {"replicates": 10000, "grid": 200}
})";

}  // namespace

TEST_CASE("gfts round trip is bit stable") {
  RngStream rng(130, 0);
  FunctionalDataset ds = small_dataset(131);
  // sprinkle in values that stress the 17-digit format
  ds.values[0] = 1.0 / 3.0;
  ds.values[1] = -2.2250738585072014e-308;
  ds.values[2] = 12345678.901234567;
  const fs::path dir = fresh_dir("roundtrip");
  write_gfts(ds, dir);
  const FunctionalDataset back = read_gfts(dir);
  CHECK(back.n == ds.n);
  CHECK(back.N == ds.N);
  CHECK(back.m == ds.m);
  CHECK(back.values == ds.values);
  CHECK(back.domain.coords == ds.domain.coords);
  CHECK(back.u_grid == ds.u_grid);
  fs::remove_all(dir);
}

TEST_CASE("gfts round trip preserves spherical domains") {
  Matrix lonlat(2, 2);
  lonlat << -37.25, 12.5, 101.0, -45.0;
  Vector u(4);
  for (int j = 0; j < 4; ++j) u[j] = (j + 0.5) / 4;
  FunctionalDataset ds = FunctionalDataset::zeros(SpatialDomain::sphere(lonlat), 2, u);
  RngStream rng(132, 0);
  for (auto& v : ds.values) v = rng.normal();
  const fs::path dir = fresh_dir("sphere");
  write_gfts(ds, dir);
  const FunctionalDataset back = read_gfts(dir);
  CHECK(back.domain.kind == DomainKind::SphereLatLon);
  CHECK(back.values == ds.values);
  CHECK(back.domain.unit_vecs.isApprox(ds.domain.unit_vecs));
  fs::remove_all(dir);
}

TEST_CASE("gfts rejects shuffled and missing rows") {
  FunctionalDataset ds = small_dataset(133);
  const fs::path dir = fresh_dir("order");
  write_gfts(ds, dir);

  std::vector<std::string> lines;
  {
    std::ifstream in(dir / "values.csv");
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
  }
  std::swap(lines[3], lines[7]);
  std::ostringstream shuffled;
  for (const auto& line : lines) shuffled << line << '\n';
  spit(dir / "values.csv", shuffled.str());
  try {
    read_gfts(dir);
    FAIL("expected OrderViolation");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::OrderViolation);
    CHECK(std::string(e.what()).find("line") != std::string::npos);
  }

  std::swap(lines[3], lines[7]);  // restore order before truncating
  std::ostringstream truncated;
  for (std::size_t i = 0; i + 10 < lines.size(); ++i) truncated << lines[i] << '\n';
  spit(dir / "values.csv", truncated.str());
  try {
    read_gfts(dir);
    FAIL("expected MissingRows");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::MissingRows);
  }
  fs::remove_all(dir);
}

TEST_CASE("simulate writes five metric rows per detector and is reproducible") {
  const fs::path dir = fresh_dir("simulate");
  spit(dir / "config.json", kMiniSimConfig);
  const fs::path out1 = dir / "out1";
  const fs::path out2 = dir / "out2";
  CHECK(run({"simulate", "-c", (dir / "config.json").c_str(), "-o", out1.c_str()}) == 0);
  CHECK(run({"simulate", "-c", (dir / "config.json").c_str(), "-o", out2.c_str()}) == 0);

  const std::string metrics = slurp(out1 / "metrics.csv");
  CHECK(metrics == slurp(out2 / "metrics.csv"));
  int lines = 0;
  for (char c : metrics) lines += c == '\n';
  CHECK(lines == 6);  // header + fpr, fnr, fdr_bh, fwer_bonf, tau_rmse
  CHECK(metrics.rfind("eta,dependence,detector,metric,value\n", 0) == 0);
  CHECK(fs::exists(out1 / "summary.json"));
  fs::remove_all(dir);
}

TEST_CASE("simulate outputs do not depend on the thread budget") {
  const fs::path dir = fresh_dir("threads");
  spit(dir / "config.json", kMiniSimConfig);
  setenv("GEOFTSCP_THREADS", "1", 1);
  CHECK(run({"simulate", "-c", (dir / "config.json").c_str(), "-o", (dir / "t1").c_str()}) == 0);
  setenv("GEOFTSCP_THREADS", "8", 1);
  CHECK(run({"simulate", "-c", (dir / "config.json").c_str(), "-o", (dir / "t8").c_str()}) == 0);
  unsetenv("GEOFTSCP_THREADS");
  CHECK(slurp(dir / "t1" / "metrics.csv") == slurp(dir / "t8" / "metrics.csv"));
  CHECK(slurp(dir / "t1" / "summary.json") == slurp(dir / "t8" / "summary.json"));
  fs::remove_all(dir);
}

TEST_CASE("simulate rejects bad configs naming the field") {
  const fs::path dir = fresh_dir("badcfg");
  std::string bad = kMiniSimConfig;
  bad.replace(bad.find("10.0"), 4, "-1.0");
  spit(dir / "config.json", bad);
  CHECK(run({"simulate", "-c", (dir / "config.json").c_str(), "-o", (dir / "out").c_str()}) == 2);
  CHECK_FALSE(fs::exists(dir / "out" / "metrics.csv"));

  std::string unknown = kMiniSimConfig;
  unknown.replace(unknown.find("\"seed\""), 6, "\"sede\"");
  spit(dir / "config.json", unknown);
  CHECK(run({"simulate", "-c", (dir / "config.json").c_str(), "-o", (dir / "out").c_str()}) == 2);
  fs::remove_all(dir);
}

TEST_CASE("detect reproduces the in-process report") {
  const FunctionalDataset ds = small_dataset(134);
  const fs::path dir = fresh_dir("detect");
  write_gfts(ds, dir / "data");
  spit(dir / "config.json", R"({
    "family": "score", "flavor": "individual", "q": 3,
    "null": {"replicates": 10000, "grid": 200}
  })");
  CHECK(run({"detect", "-d", (dir / "data").c_str(), "-c", (dir / "config.json").c_str(), "-o",
             (dir / "out").c_str()}) == 0);

  NullOptions nulls;
  nulls.R = 10000;
  nulls.grid = 200;
  const ChangepointReport expected = individual_reports(ds, 3, ChangeModel::Amoc,
                                                        StatFamily::Score, nulls);
  std::ifstream in(dir / "out" / "report.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "loc_id,coord1,coord2,stat,p,p_bh,p_bonf,tau_hat,delta_hat");
  for (int i = 0; i < ds.n; ++i) {
    std::string line;
    REQUIRE(std::getline(in, line));
    std::ostringstream want;
    want << i << ',' << format_double(ds.domain.coords(i, 0)) << ','
         << format_double(ds.domain.coords(i, 1)) << ',' << format_double(expected.stat[i]) << ','
         << format_double(expected.p[i]) << ',' << format_double(expected.p_bh[i]) << ','
         << format_double(expected.p_bonf[i]) << ',' << expected.tau[i] << ','
         << format_double(expected.delta_hat[i]);
    CHECK(line == want.str());
  }
  CHECK(fs::exists(dir / "out" / "model.json"));
  fs::remove_all(dir);
}

TEST_CASE("detect handles a single location with prediction") {
  SimDesign design;
  design.n_s1 = 1;
  design.n_s2 = 1;
  design.N = 12;
  design.m = 16;
  design.seed = 135;
  const FunctionalDataset ds = generate_dataset(design, 0.0, Dependence::Independent, 0).first;
  const fs::path dir = fresh_dir("single");
  write_gfts(ds, dir / "data");
  spit(dir / "config.json", R"({
    "family": "score", "flavor": "predicted", "q": 2,
    "null": {"replicates": 10000, "grid": 200}
  })");
  CHECK(run({"detect", "-d", (dir / "data").c_str(), "-c", (dir / "config.json").c_str(), "-o",
             (dir / "out").c_str()}) == 0);
  const std::string report = slurp(dir / "out" / "report.csv");
  int lines = 0;
  for (char c : report) lines += c == '\n';
  CHECK(lines == 2);  // header + one location
  fs::remove_all(dir);
}

TEST_CASE("detect rejects malformed value rows with the line number") {
  const FunctionalDataset ds = small_dataset(136);
  const fs::path dir = fresh_dir("malformed");
  write_gfts(ds, dir / "data");
  std::string values = slurp(dir / "data" / "values.csv");
  const std::size_t line_start = values.find('\n', values.find('\n') + 1) + 1;
  values.replace(line_start, values.find('\n', line_start) - line_start, "0,oops");
  spit(dir / "data" / "values.csv", values);
  spit(dir / "config.json", R"({"flavor": "individual", "q": 2})");
  CHECK(run({"detect", "-d", (dir / "data").c_str(), "-c", (dir / "config.json").c_str(), "-o",
             (dir / "out").c_str()}) == 2);
  try {
    read_gfts(dir / "data");
    FAIL("expected parse failure");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("report concatenates metric tables") {
  const fs::path dir = fresh_dir("report");
  spit(dir / "config.json", kMiniSimConfig);
  CHECK(run({"simulate", "-c", (dir / "config.json").c_str(), "-o", (dir / "a").c_str()}) == 0);
  CHECK(run({"simulate", "-c", (dir / "config.json").c_str(), "-o", (dir / "b").c_str()}) == 0);
  CHECK(run({"report", "-i", (dir / "a").c_str(), "-i", (dir / "b").c_str(), "-o",
             (dir / "combined.csv").c_str()}) == 0);
  const std::string combined = slurp(dir / "combined.csv");
  int lines = 0;
  for (char c : combined) lines += c == '\n';
  CHECK(lines == 11);  // one header + 2 x 5 rows
  fs::remove_all(dir);
}

TEST_CASE("usage errors exit with code 2") {
  CHECK(run({"simulate"}) == 2);
  CHECK(run({"frobnicate"}) == 2);
  CHECK(run({"detect", "-d", "/nonexistent", "-c", "/nonexistent", "-o", "/tmp/x"}) == 2);
}

TEST_CASE("epidemic detect reports both change times") {
  SimDesign design;
  design.n_s1 = 4;
  design.n_s2 = 4;
  design.N = 12;
  design.m = 16;
  design.seed = 137;
  const FunctionalDataset ds = generate_dataset(design, 0.0, Dependence::Independent, 0).first;
  const fs::path dir = fresh_dir("epidemic");
  write_gfts(ds, dir / "data");
  spit(dir / "config.json", R"({
    "model": "epidemic", "flavor": "individual", "q": 2,
    "null": {"replicates": 10000, "grid": 200}
  })");
  CHECK(run({"detect", "-d", (dir / "data").c_str(), "-c", (dir / "config.json").c_str(), "-o",
             (dir / "out").c_str()}) == 0);
  std::ifstream in(dir / "out" / "report.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "loc_id,coord1,coord2,stat,p,p_bh,p_bonf,tau1,tau2,delta_hat");
  fs::remove_all(dir);
}

// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "geoftscp/cli.hpp"

namespace geoftscp {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

namespace {

const char* kValuesHeader = "loc_id,coord1,coord2,k,j,value";

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_gfts(const FunctionalDataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["domain_kind"] =
      ds.domain.kind == DomainKind::Plane2D ? "plane2d" : "sphere_latlon";
  manifest["n"] = ds.n;
  manifest["N"] = ds.N;
  manifest["m"] = ds.m;
  std::vector<double> u(ds.u_grid.begin(), ds.u_grid.end());
  manifest["u_grid"] = u;
  manifest["value_file"] = "values.csv";
  {
    std::ofstream out(dir / "manifest.json");
    if (!out) fail(Errc::IoError, "cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";
  }

  FilePtr out(std::fopen((dir / "values.csv").string().c_str(), "w"));
  if (!out) fail(Errc::IoError, "cannot write " + (dir / "values.csv").string());
  std::fprintf(out.get(), "%s\n", kValuesHeader);
  for (int i = 0; i < ds.n; ++i) {
    const std::string c1 = format_double(ds.domain.coords(i, 0));
    const std::string c2 = format_double(ds.domain.coords(i, 1));
    for (int k = 0; k < ds.N; ++k)
      for (int j = 0; j < ds.m; ++j)
        std::fprintf(out.get(), "%d,%s,%s,%d,%d,%s\n", i, c1.c_str(), c2.c_str(), k, j,
                     format_double(ds.at(i, k, j)).c_str());
  }
  if (std::ferror(out.get())) fail(Errc::IoError, "write failure on values.csv");
}

namespace {

[[noreturn]] void row_error(Errc code, long line, const std::string& what) {
  std::ostringstream os;
  os << "values.csv line " << line << ": " << what;
  fail(code, os.str());
}

}  // namespace

FunctionalDataset read_gfts(const fs::path& dir) {
  json manifest;
  {
    std::ifstream in(dir / "manifest.json");
    if (!in) fail(Errc::IoError, "cannot read " + (dir / "manifest.json").string());
    try {
      in >> manifest;
    } catch (const json::exception& e) {
      fail(Errc::ConfigError, std::string("manifest.json: ") + e.what());
    }
  }
  FunctionalDataset ds;
  try {
    const std::string kind = manifest.at("domain_kind").get<std::string>();
    if (kind == "plane2d")
      ds.domain.kind = DomainKind::Plane2D;
    else if (kind == "sphere_latlon")
      ds.domain.kind = DomainKind::SphereLatLon;
    else
      fail(Errc::ConfigError, "manifest.json: unknown domain_kind '" + kind + "'");
    ds.n = manifest.at("n").get<int>();
    ds.N = manifest.at("N").get<int>();
    ds.m = manifest.at("m").get<int>();
    const auto u = manifest.at("u_grid").get<std::vector<double>>();
    ds.u_grid = Eigen::Map<const Vector>(u.data(), u.size());
  } catch (const json::exception& e) {
    fail(Errc::ConfigError, std::string("manifest.json: ") + e.what());
  }
  if (ds.n < 1 || ds.N < 1 || ds.m < 2)
    fail(Errc::ConfigError, "manifest.json: invalid dimensions");

  const fs::path values_path =
      dir / manifest.value("value_file", std::string("values.csv"));
  FilePtr in(std::fopen(values_path.string().c_str(), "r"));
  if (!in) fail(Errc::IoError, "cannot read " + values_path.string());

  const std::size_t total = static_cast<std::size_t>(ds.n) * ds.N * ds.m;
  ds.values.resize(total);
  Matrix coords(ds.n, 2);

  std::vector<char> buf(1 << 16);
  long line = 1;
  if (!std::fgets(buf.data(), static_cast<int>(buf.size()), in.get()))
    fail(Errc::MissingRows, "values.csv is empty");
  buf[std::strcspn(buf.data(), "\r\n")] = '\0';
  if (std::strcmp(buf.data(), kValuesHeader) != 0)
    row_error(Errc::OrderViolation, 1, "unexpected header");

  // Single streaming pass; the (i,k,j) counters double as the order check.
  std::size_t idx = 0;
  while (std::fgets(buf.data(), static_cast<int>(buf.size()), in.get())) {
    ++line;
    char* cur = buf.data();
    if (*cur == '\0' || *cur == '\n' || *cur == '\r') continue;
    if (idx >= total) row_error(Errc::MissingRows, line, "more rows than n*N*m");
    const int want_i = static_cast<int>(idx / (static_cast<std::size_t>(ds.N) * ds.m));
    const int want_k = static_cast<int>((idx / ds.m) % ds.N);
    const int want_j = static_cast<int>(idx % ds.m);

    char* end = nullptr;
    const long loc = std::strtol(cur, &end, 10);
    if (end == cur || *end != ',') row_error(Errc::ConfigError, line, "malformed loc_id");
    cur = end + 1;
    char* c1_start = cur;
    char* comma = std::strchr(cur, ',');
    if (!comma) row_error(Errc::ConfigError, line, "missing coord1");
    char* c2_start = comma + 1;
    comma = std::strchr(c2_start, ',');
    if (!comma) row_error(Errc::ConfigError, line, "missing coord2");
    cur = comma + 1;
    const long k = std::strtol(cur, &end, 10);
    if (end == cur || *end != ',') row_error(Errc::ConfigError, line, "malformed k");
    cur = end + 1;
    const long j = std::strtol(cur, &end, 10);
    if (end == cur || *end != ',') row_error(Errc::ConfigError, line, "malformed j");
    cur = end + 1;
    const double value = std::strtod(cur, &end);
    if (end == cur) row_error(Errc::ConfigError, line, "malformed value");

    if (loc != want_i || k != want_k || j != want_j) {
      std::ostringstream os;
      os << "expected (" << want_i << "," << want_k << "," << want_j << "), found (" << loc << ","
         << k << "," << j << ")";
      row_error(Errc::OrderViolation, line, os.str());
    }
    if (want_k == 0 && want_j == 0) {
      coords(want_i, 0) = std::strtod(c1_start, nullptr);
      coords(want_i, 1) = std::strtod(c2_start, nullptr);
    }
    ds.values[idx++] = value;
  }
  if (idx != total) {
    std::ostringstream os;
    os << "expected " << total << " rows, found " << idx;
    fail(Errc::MissingRows, os.str());
  }
  ds.domain = ds.domain.kind == DomainKind::Plane2D ? SpatialDomain::plane(std::move(coords))
                                                    : SpatialDomain::sphere(std::move(coords));
  return validate_dataset(std::move(ds));
}

}  // namespace geoftscp

// SPDX-License-Identifier: Apache-2.0
#include "geoftscp/core.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace geoftscp {

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::DuplicateLocation: return "DuplicateLocation";
    case Errc::NonFiniteValue: return "NonFiniteValue";
    case Errc::GridNotUniform: return "GridNotUniform";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::PointOutOfRange: return "PointOutOfRange";
    case Errc::DomainMismatch: return "DomainMismatch";
    case Errc::SingularSystem: return "SingularSystem";
    case Errc::AllDegenerate: return "AllDegenerate";
    case Errc::EmptySegment: return "EmptySegment";
    case Errc::SingularAnisotropy: return "SingularAnisotropy";
    case Errc::NotPositiveDefinite: return "NotPositiveDefinite";
    case Errc::NonPositiveVariance: return "NonPositiveVariance";
    case Errc::HypothesisMismatch: return "HypothesisMismatch";
    case Errc::MissingRows: return "MissingRows";
    case Errc::OrderViolation: return "OrderViolation";
    case Errc::ConfigError: return "ConfigError";
    case Errc::IoError: return "IoError";
  }
  return "UnknownError";
}

SpatialDomain SpatialDomain::plane(Matrix xy) {
  if (xy.cols() != 2) fail(Errc::DomainMismatch, "planar coordinates must be n x 2");
  SpatialDomain d;
  d.kind = DomainKind::Plane2D;
  d.coords = std::move(xy);
  return d;
}

SpatialDomain SpatialDomain::sphere(Matrix lonlat_deg) {
  if (lonlat_deg.cols() != 2) fail(Errc::DomainMismatch, "spherical coordinates must be n x 2");
  SpatialDomain d;
  d.kind = DomainKind::SphereLatLon;
  d.coords = std::move(lonlat_deg);
  const auto n = d.coords.rows();
  d.unit_vecs.resize(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double lon = d.coords(i, 0);
    const double lat = d.coords(i, 1);
    if (lon < -180.0 || lon >= 180.0)
      fail(Errc::PointOutOfRange, "longitude must satisfy -180 <= lon < 180");
    if (lat < -90.0 || lat > 90.0)
      fail(Errc::PointOutOfRange, "latitude must satisfy -90 <= lat <= 90");
    const double lam = lon * std::numbers::pi / 180.0;
    const double phi = lat * std::numbers::pi / 180.0;
    d.unit_vecs(i, 0) = std::cos(phi) * std::cos(lam);
    d.unit_vecs(i, 1) = std::cos(phi) * std::sin(lam);
    d.unit_vecs(i, 2) = std::sin(phi);
  }
  return d;
}

Eigen::Vector3d SpatialDomain::embedded(int i) const {
  if (i < 0 || i >= size()) fail(Errc::IndexOutOfRange, "location index out of range");
  if (kind == DomainKind::SphereLatLon) return kEarthRadiusKm * unit_vecs.row(i).transpose();
  return {coords(i, 0), coords(i, 1), 0.0};
}

double distance(const SpatialDomain& domain, int i1, int i2) {
  if (i1 < 0 || i1 >= domain.size() || i2 < 0 || i2 >= domain.size())
    fail(Errc::IndexOutOfRange, "location index out of range");
  if (domain.kind == DomainKind::Plane2D)
    return (domain.coords.row(i1) - domain.coords.row(i2)).norm();
  return kEarthRadiusKm * (domain.unit_vecs.row(i1) - domain.unit_vecs.row(i2)).norm();
}

FunctionalDataset FunctionalDataset::zeros(SpatialDomain domain, int N, const Vector& u_grid) {
  FunctionalDataset ds;
  ds.n = domain.size();
  ds.domain = std::move(domain);
  ds.N = N;
  ds.m = static_cast<int>(u_grid.size());
  ds.u_grid = u_grid;
  ds.values.assign(static_cast<std::size_t>(ds.n) * ds.N * ds.m, 0.0);
  return ds;
}

FunctionalDataset validate_dataset(FunctionalDataset ds) {
  if (ds.n != ds.domain.size()) fail(Errc::DomainMismatch, "location count does not match domain");
  if (ds.N < 1 || ds.m < 2) fail(Errc::DomainMismatch, "need N >= 1 and m >= 2");
  if (static_cast<std::size_t>(ds.n) * ds.N * ds.m != ds.values.size()) {
    std::ostringstream os;
    os << "expected " << static_cast<std::size_t>(ds.n) * ds.N * ds.m << " values, got "
       << ds.values.size();
    fail(Errc::MissingRows, os.str());
  }
  for (std::size_t idx = 0; idx < ds.values.size(); ++idx) {
    if (!std::isfinite(ds.values[idx])) {
      const int j = static_cast<int>(idx % ds.m);
      const int k = static_cast<int>((idx / ds.m) % ds.N);
      const int i = static_cast<int>(idx / (static_cast<std::size_t>(ds.m) * ds.N));
      std::ostringstream os;
      os << "non-finite value at (i=" << i << ", k=" << k << ", j=" << j << ")";
      fail(Errc::NonFiniteValue, os.str());
    }
  }
  if (static_cast<int>(ds.u_grid.size()) != ds.m)
    fail(Errc::DomainMismatch, "u grid length does not match m");
  if (ds.u_grid[0] < 0.0 || ds.u_grid[ds.m - 1] > 1.0)
    fail(Errc::PointOutOfRange, "u grid must lie inside [0,1]");
  const double h0 = ds.u_grid[1] - ds.u_grid[0];
  if (h0 <= 0.0) fail(Errc::GridNotUniform, "u grid must be strictly increasing");
  for (int j = 1; j < ds.m; ++j) {
    const double h = ds.u_grid[j] - ds.u_grid[j - 1];
    if (h <= 0.0) fail(Errc::GridNotUniform, "u grid must be strictly increasing");
    if (std::abs(h - h0) > 1e-9 * std::max(1.0, std::abs(h0))) {
      std::ostringstream os;
      os << "u spacing deviates at j=" << j;
      fail(Errc::GridNotUniform, os.str());
    }
  }
  for (int i1 = 0; i1 < ds.n; ++i1)
    for (int i2 = i1 + 1; i2 < ds.n; ++i2)
      if (ds.domain.coords.row(i1) == ds.domain.coords.row(i2)) {
        std::ostringstream os;
        os << "locations " << i1 << " and " << i2 << " coincide";
        fail(Errc::DuplicateLocation, os.str());
      }
  return ds;
}

void ChangeConfig::validate(int n, int N) const {
  if (model == ChangeModel::Amoc) {
    if (pilot_tau_pair) fail(Errc::ConfigError, "Amoc config cannot carry epidemic pilot pairs");
    if (pilot_tau) {
      if (static_cast<int>(pilot_tau->size()) != n)
        fail(Errc::ConfigError, "pilot tau length does not match location count");
      for (int t : *pilot_tau)
        if (t < 1 || t > N) fail(Errc::EmptySegment, "pilot tau outside [1, N]");
    }
  } else {
    if (pilot_tau) fail(Errc::ConfigError, "Epidemic config cannot carry scalar pilot taus");
    if (pilot_tau_pair) {
      if (static_cast<int>(pilot_tau_pair->size()) != n)
        fail(Errc::ConfigError, "pilot pair length does not match location count");
      for (auto [t1, t2] : *pilot_tau_pair)
        if (!(1 <= t1 && t1 < t2 && t2 <= N))
          fail(Errc::ConfigError, "epidemic pilot must satisfy 1 <= tau1 < tau2 <= N");
    }
  }
}

std::uint64_t mix_u64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RngStream::RngStream(RngSpec spec)
    : engine_(mix_u64(mix_u64(spec.seed) ^ mix_u64(~spec.stream_id))) {}

double RngStream::uniform01() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  double u1 = uniform01();
  while (u1 <= 0.0) u1 = uniform01();
  const double u2 = uniform01();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  cached_ = r * std::sin(a);
  has_cached_ = true;
  return r * std::cos(a);
}

}  // namespace geoftscp

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "geoftscp/errors.hpp"

namespace geoftscp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Earth radius in kilometers; chordal distances on the sphere use this scale.
inline constexpr double kEarthRadiusKm = 6371.0;

enum class DomainKind { Plane2D, SphereLatLon };

/// Set of spatial sites. Planar sites carry (x, y) in arbitrary units;
/// spherical sites carry (longitude, latitude) in degrees together with
/// precomputed unit 3-vectors for chordal geometry.
struct SpatialDomain {
  DomainKind kind = DomainKind::Plane2D;
  Matrix coords;     // n x 2, (x,y) or (lon,lat)
  Matrix unit_vecs;  // n x 3, SphereLatLon only

  static SpatialDomain plane(Matrix xy);
  static SpatialDomain sphere(Matrix lonlat_deg);

  int size() const { return static_cast<int>(coords.rows()); }

  /// Coordinates used for metric computations: 2D point for Plane2D,
  /// Earth-scaled embedding (km) for SphereLatLon.
  Eigen::Vector3d embedded(int i) const;
};

/// Pairwise distance in domain units (km on the sphere, chordal through the
/// Earth of radius 6371 km).
double distance(const SpatialDomain& domain, int i1, int i2);

/// Observed panel Y_k(s_i, u_j): n locations, N series steps, m points per
/// function on a uniform grid inside [0,1]. Values are stored dense in
/// (i, k, j) order, j fastest.
struct FunctionalDataset {
  SpatialDomain domain;
  int n = 0;
  int N = 0;
  int m = 0;
  Vector u_grid;
  std::vector<double> values;

  double& at(int i, int k, int j) { return values[(static_cast<std::size_t>(i) * N + k) * m + j]; }
  double at(int i, int k, int j) const {
    return values[(static_cast<std::size_t>(i) * N + k) * m + j];
  }
  Eigen::Map<const Vector> curve(int i, int k) const {
    return Eigen::Map<const Vector>(values.data() + (static_cast<std::size_t>(i) * N + k) * m, m);
  }
  Eigen::Map<Vector> curve(int i, int k) {
    return Eigen::Map<Vector>(values.data() + (static_cast<std::size_t>(i) * N + k) * m, m);
  }

  static FunctionalDataset zeros(SpatialDomain domain, int N, const Vector& u_grid);
};

/// Checks all dataset invariants (finiteness, shapes, distinct locations,
/// uniform u grid) and returns the dataset unchanged.
FunctionalDataset validate_dataset(FunctionalDataset ds);

enum class ChangeModel { Amoc, Epidemic };

/// Pilot changepoint configuration used when fitting mean/change surfaces.
/// Amoc: tau in [1, N] per location, tau = N meaning "no change".
/// Epidemic: pairs 1 <= tau1 < tau2 <= N; the mean shifts on (tau1, tau2].
struct ChangeConfig {
  ChangeModel model = ChangeModel::Amoc;
  std::optional<std::vector<int>> pilot_tau;                       // Amoc
  std::optional<std::vector<std::pair<int, int>>> pilot_tau_pair;  // Epidemic

  static ChangeConfig global_null() { return {}; }

  bool is_global_null() const { return !pilot_tau && !pilot_tau_pair; }

  /// Last pre-change index for location i under the Amoc model (N when null).
  int tau_at(int i, int N) const {
    if (model == ChangeModel::Amoc && pilot_tau) return (*pilot_tau)[i];
    return N;
  }

  void validate(int n, int N) const;
};

/// Seed/stream pair. Identical pairs yield bit-identical draw sequences
/// regardless of run or thread count.
struct RngSpec {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
};

/// Deterministic random stream: mt19937_64 keyed by (seed, stream), with a
/// fixed in-house Box-Muller normal (standard-library distributions are not
/// pinned by the C++ standard).
class RngStream {
 public:
  explicit RngStream(RngSpec spec);
  RngStream(std::uint64_t seed, std::uint64_t stream_id) : RngStream(RngSpec{seed, stream_id}) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform01();  // in [0, 1)
  double normal();     // standard normal

 private:
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

/// SplitMix64 finalizer, used to key streams.
std::uint64_t mix_u64(std::uint64_t x);

}  // namespace geoftscp

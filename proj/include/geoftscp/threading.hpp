// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

namespace geoftscp {

/// Thread budget: GEOFTSCP_THREADS when set (clamped to [1, 256]), otherwise
/// hardware concurrency.
int thread_budget();

/// Runs fn(t) for t in [0, count). Tasks must be independent and write only
/// to their own slots; results are then identical for any thread count.
void parallel_for(int count, const std::function<void(int)>& fn);

}  // namespace geoftscp

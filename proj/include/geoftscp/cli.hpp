// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "geoftscp/core.hpp"

namespace geoftscp {

/// GFTS on-disk dataset: manifest.json describing the panel plus values.csv
/// with header loc_id,coord1,coord2,k,j,value in (i,k,j) lexicographic order,
/// all floats printed with 17 significant digits (bit-stable round trips).
void write_gfts(const FunctionalDataset& ds, const std::filesystem::path& dir);
FunctionalDataset read_gfts(const std::filesystem::path& dir);

/// %.17g formatting used everywhere a double is serialized.
std::string format_double(double value);

/// Entry point behind the geoftscp binary: simulate / detect / report.
/// Returns 0 on success, 2 on usage or configuration errors, 3 on runtime
/// failures; diagnostics go to stderr.
int run_cli(int argc, const char* const* argv);

int cmd_simulate(const std::filesystem::path& config_path, const std::filesystem::path& outdir);
int cmd_detect(const std::filesystem::path& data_dir, const std::filesystem::path& config_path,
               const std::filesystem::path& outdir);
int cmd_report(const std::vector<std::filesystem::path>& indirs,
               const std::filesystem::path& outfile);

}  // namespace geoftscp

// SPDX-License-Identifier: Apache-2.0
#include "geoftscp/cli.hpp"

int main(int argc, char** argv) { return geoftscp::run_cli(argc, argv); }

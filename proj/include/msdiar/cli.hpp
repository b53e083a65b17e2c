// Copyright 2026 msdiar authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace msdiar::cli {

// Entry point behind main(); argv[0] is not expected in args.
// Subcommands: synth | diarize | train | score. Returns the process exit
// code; all diagnostics go to stderr.
int run(const std::vector<std::string>& args);

}  // namespace msdiar::cli

// Copyright 2026 msdiar authors
// SPDX-License-Identifier: Apache-2.0
#include <vector>

#include "msdiar/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return msdiar::cli::run(args);
}

// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#include <iostream>
#include <string>
#include <vector>

#include "facevl/cli/cli.hpp"
#include "facevl/runtime.hpp"

int main(int argc, char** argv) {
  facevl::tune_allocator();
  const std::vector<std::string> args(argv + 1, argv + argc);
  return facevl::cli::run_command(args, std::cout, std::cerr);
}

// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace facevl::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 1,
  kExitRuntime = 2,
  kExitNumerical = 3,
};

/// Runs one subcommand. `args` excludes the program name, so args[0] is the
/// subcommand: curate, pretrain, probe, finetune, eval, fewshot, gradcam or
/// report. Diagnostics go to `err`; summaries and tables go to `out`.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace facevl::cli

// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>

namespace facevl {

using WarningSink = std::function<void(const std::string&)>;

/// Routes library warnings; the default sink writes "warning: ..." to stderr.
/// Passing an empty function restores the default. Returns the previous sink.
WarningSink set_warning_sink(WarningSink sink);
void warn(const std::string& message);

}  // namespace facevl

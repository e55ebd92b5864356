// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace facevl {

/// Keeps large tensor buffers on the heap instead of fresh mappings, which
/// avoids repeated page faults in training loops. No-op outside glibc.
void tune_allocator() noexcept;

}  // namespace facevl

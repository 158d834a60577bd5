// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace echosynth {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace echosynth

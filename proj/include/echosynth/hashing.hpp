// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

namespace echosynth {

inline constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ull;

inline std::uint64_t fnv1a64(const void* data, std::size_t size,
                             std::uint64_t seed = kFnvOffset) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= bytes[i];
        h *= kFnvPrime;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t seed = kFnvOffset) {
    return fnv1a64(s.data(), s.size(), seed);
}

// Streams the file through fnv1a64. Throws IntegrityError if unreadable.
std::uint64_t file_hash(const std::filesystem::path& path);

std::string hash_hex(std::uint64_t h);
std::uint64_t hash_from_hex(const std::string& hex);

}  // namespace echosynth

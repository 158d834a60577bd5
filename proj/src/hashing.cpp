// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0

#include "echosynth/hashing.hpp"

#include <cstdio>
#include <fstream>
#include <vector>

#include "echosynth/errors.hpp"

namespace echosynth {

std::uint64_t file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IntegrityError("cannot open file for hashing: " + path.string());
    }
    std::uint64_t h = kFnvOffset;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        const auto got = in.gcount();
        if (got > 0) {
            h = fnv1a64(buf.data(), static_cast<std::size_t>(got), h);
        }
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return std::string(out);
}

std::uint64_t hash_from_hex(const std::string& hex) {
    return std::stoull(hex, nullptr, 16);
}

}  // namespace echosynth

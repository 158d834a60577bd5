// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0
//
// Run directories: every verb writes its artifacts under one directory that
// records the config snapshot, code version, and input hashes, and holds an
// exclusive lock while the process runs.

#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

namespace echosynth {

class RunDir {
public:
    RunDir(const std::filesystem::path& out_root, const std::string& verb,
           const std::string& name, const nlohmann::json& config_snapshot,
           const std::map<std::string, std::string>& input_hashes);
    ~RunDir();

    RunDir(const RunDir&) = delete;
    RunDir& operator=(const RunDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::filesystem::path lock_;
};

}  // namespace echosynth

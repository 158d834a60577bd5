// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0

#include "echosynth/rundir.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <fstream>

#include "echosynth/errors.hpp"
#include "echosynth/version.hpp"

namespace echosynth {

RunDir::RunDir(const std::filesystem::path& out_root, const std::string& verb,
               const std::string& name, const nlohmann::json& config_snapshot,
               const std::map<std::string, std::string>& input_hashes) {
    path_ = out_root / (verb + "-" + name);
    std::filesystem::create_directories(path_);
    lock_ = path_ / "lock";
    const int fd = ::open(lock_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        throw ConfigError("run directory is locked by another writer: " + path_.string());
    }
    ::close(fd);

    nlohmann::json run;
    run["verb"] = verb;
    run["version"] = kVersion;
    run["timestamp_utc"] = static_cast<long>(
        std::chrono::duration_cast<std::chrono::seconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count());
    run["config"] = config_snapshot;
    run["input_hashes"] = input_hashes;
    std::ofstream out(path_ / "run.json");
    if (!out) throw Error("cannot write run metadata in " + path_.string());
    out << run.dump(2) << "\n";
}

RunDir::~RunDir() {
    std::error_code ec;
    std::filesystem::remove(lock_, ec);
}

}  // namespace echosynth

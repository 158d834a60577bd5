// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0

#include "echosynth/config.hpp"

#include <fstream>

#include "echosynth/errors.hpp"

namespace echosynth {

nlohmann::json load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    try {
        return nlohmann::json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config parse error in " + path.string() + ": " + e.what());
    }
}

void apply_dotted_override(nlohmann::json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("override '" + assignment + "' is not of the form key=value");
    }
    const auto dotted = assignment.substr(0, eq);
    const auto raw = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::parse_error&) {
        value = raw;  // plain string
    }
    nlohmann::json* cur = &config;
    std::size_t pos = 0;
    while (true) {
        const auto dot = dotted.find('.', pos);
        const auto key = dotted.substr(pos, dot == std::string::npos ? dot : dot - pos);
        if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key part");
        if (dot == std::string::npos) {
            (*cur)[key] = value;
            break;
        }
        cur = &(*cur)[key];
        pos = dot + 1;
    }
}

void apply_env_overrides(nlohmann::json& config, const std::string& env_value) {
    std::size_t pos = 0;
    while (pos < env_value.size()) {
        auto sep = env_value.find(';', pos);
        if (sep == std::string::npos) sep = env_value.size();
        const auto part = env_value.substr(pos, sep - pos);
        if (!part.empty()) apply_dotted_override(config, part);
        pos = sep + 1;
    }
}

void reject_unknown_keys(const nlohmann::json& section, const std::string& section_name,
                         const std::set<std::string>& known) {
    if (!section.is_object()) return;
    for (const auto& [key, value] : section.items()) {
        if (!known.contains(key)) {
            throw ConfigError("unknown config key '" + section_name + "." + key + "'");
        }
    }
}

std::filesystem::path resolve_asset(const nlohmann::json& config, const std::string& name) {
    if (!config.contains("assets") || !config.at("assets").contains(name)) {
        throw ConfigError("asset '" + name + "' is not registered under config.assets");
    }
    const auto path = config.at("assets").at(name).get<std::string>();
    if (!std::filesystem::exists(path)) {
        throw ConfigError("asset '" + name + "' points to a missing file: " + path);
    }
    return path;
}

}  // namespace echosynth

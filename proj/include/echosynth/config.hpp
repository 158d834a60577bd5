// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0
//
// JSON configuration with layered overrides (file < environment < flags)
// and strict key validation.

#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace echosynth {

nlohmann::json load_config_file(const std::filesystem::path& path);

// "a.b.c=value"; the value is parsed as JSON when possible, else kept as a
// string.
void apply_dotted_override(nlohmann::json& config, const std::string& assignment);

// Semicolon-separated assignments, e.g. from ECHOSYNTH_SET.
void apply_env_overrides(nlohmann::json& config, const std::string& env_value);

// Rejects unknown keys, naming the offending key and section.
void reject_unknown_keys(const nlohmann::json& section, const std::string& section_name,
                         const std::set<std::string>& known);

// Lookup by dotted path with a default.
template <class T>
T config_get(const nlohmann::json& j, const std::string& dotted, const T& fallback) {
    const nlohmann::json* cur = &j;
    std::size_t pos = 0;
    while (true) {
        const auto dot = dotted.find('.', pos);
        const auto key = dotted.substr(pos, dot == std::string::npos ? dot : dot - pos);
        if (!cur->is_object() || !cur->contains(key)) return fallback;
        cur = &(*cur)[key];
        if (dot == std::string::npos) break;
        pos = dot + 1;
    }
    return cur->get<T>();
}

// Resolves a logical asset name through the config's "assets" table.
std::filesystem::path resolve_asset(const nlohmann::json& config, const std::string& name);

}  // namespace echosynth

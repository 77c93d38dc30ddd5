#pragma once

// Experiment configs are YAML files loaded into a JSON tree. Readers consume
// keys as they go, fill in defaults, and reject anything left unread.

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "darkmatter/common.hpp"

namespace dm::cli {

using Json = nlohmann::json;

/// Throws SchemaError on a missing, empty or malformed file.
Json load_config(const std::filesystem::path& path);
Json parse_config(const std::string& text);

class ConfigReader {
public:
    ConfigReader(Json node, std::string path);

    bool has(const std::string& key) const;

    double number(const std::string& key, std::optional<double> fallback = std::nullopt);
    Index integer(const std::string& key, std::optional<Index> fallback = std::nullopt);
    std::uint64_t seed(const std::string& key, std::optional<std::uint64_t> fallback = std::nullopt);
    bool boolean(const std::string& key, std::optional<bool> fallback = std::nullopt);
    std::string string(const std::string& key, std::optional<std::string> fallback = std::nullopt);
    std::vector<double> numbers(const std::string& key, std::optional<std::vector<double>> fallback = std::nullopt);
    /// Raw access for polymorphic values; marks the key as used.
    const Json& raw(const std::string& key);

    ConfigReader child(const std::string& key);
    /// Empty object when absent.
    ConfigReader optional_child(const std::string& key);

    /// Records a nested reader's resolved values under key.
    void adopt(const std::string& key, ConfigReader& child);
    /// Writes a resolved value without reading it from the source.
    void set(const std::string& key, Json value);

    /// Throws SchemaError naming the first unknown key.
    void finish();

    const Json& resolved() const { return resolved_; }
    const std::string& path() const { return path_; }

private:
    const Json* lookup(const std::string& key);
    std::string where(const std::string& key) const;

    Json node_;
    Json resolved_ = Json::object();
    std::string path_;
    std::set<std::string> used_;
};

} // namespace dm::cli

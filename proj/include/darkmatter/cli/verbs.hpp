#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "darkmatter/cli/config.hpp"

namespace dm::cli {

struct VerbInfo {
    std::string name;
    std::string summary;
    /// Library operations this verb exercises.
    std::vector<std::string> operations;
};

const std::vector<VerbInfo>& verbs();

struct RunOptions {
    std::filesystem::path config;
    std::filesystem::path out_dir = ".";
    std::optional<std::uint64_t> seed;
};

/// Runs one verb; returns the report path.
std::filesystem::path run_verb(const std::string& verb, const RunOptions& options);

/// Maps an error kind to the process exit status.
int exit_code(ErrorKind kind);

} // namespace dm::cli

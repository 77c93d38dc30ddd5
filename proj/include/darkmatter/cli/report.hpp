#pragma once

// dm-report/1 writer. Reports are named <verb>-<config hash>-r<N>.json and
// never overwritten; companion files share the report stem.

#include <filesystem>
#include <string>

#include "darkmatter/cli/config.hpp"

namespace dm::cli {

inline constexpr const char* kReportSchema = "dm-report/1";

/// FNV-1a over the canonical JSON dump, as 16 hex digits.
std::string config_hash(const Json& resolved);

class ReportWriter {
public:
    ReportWriter(std::filesystem::path out_dir, std::string verb, const Json& resolved_config);

    /// <out>/<stem>.<kind>
    std::filesystem::path artifact_path(const std::string& kind) const;
    std::filesystem::path report_path() const;
    const std::string& stem() const { return stem_; }

    void add_artifact(const std::string& kind);
    void write(const Json& results, std::uint64_t seed);

private:
    std::filesystem::path dir_;
    std::string verb_;
    Json config_;
    std::string stem_;
    Json artifacts_ = Json::array();
};

/// Writes rows of numbers under a header; fixed 17-significant-digit formatting.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

} // namespace dm::cli

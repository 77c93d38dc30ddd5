#include "darkmatter/cli/report.hpp"

#include <cstdio>
#include <fstream>

namespace dm::cli {

std::string config_hash(const Json& resolved)
{
    const std::string text = resolved.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

ReportWriter::ReportWriter(std::filesystem::path out_dir, std::string verb, const Json& resolved_config)
    : dir_(std::move(out_dir)), verb_(std::move(verb)), config_(resolved_config)
{
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec || !std::filesystem::is_directory(dir_)) {
        throw IoError("cannot create output directory '" + dir_.string() + "'");
    }
    const std::string base = verb_ + "-" + config_hash(config_);
    for (int run = 1;; ++run) {
        stem_ = base + "-r" + std::to_string(run);
        if (!std::filesystem::exists(dir_ / (stem_ + ".json"))) {
            break;
        }
    }
}

std::filesystem::path ReportWriter::artifact_path(const std::string& kind) const { return dir_ / (stem_ + "." + kind); }

std::filesystem::path ReportWriter::report_path() const { return dir_ / (stem_ + ".json"); }

void ReportWriter::add_artifact(const std::string& kind) { artifacts_.push_back(kind); }

void ReportWriter::write(const Json& results, std::uint64_t seed)
{
    const Json report{{"schema", kReportSchema},
                      {"experiment", verb_},
                      {"seed", seed},
                      {"config", config_},
                      {"results", results},
                      {"artifacts", artifacts_}};
    const auto path = report_path();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write report '" + path.string() + "'");
    }
    out << report.dump(2) << "\n";
    if (!out) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write '" + path.string() + "'");
    }
    for (std::size_t i = 0; i < header.size(); ++i) {
        out << (i ? "," : "") << header[i];
    }
    out << "\n";
    char buf[64];
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", row[i]);
            out << (i ? "," : "") << buf;
        }
        out << "\n";
    }
    if (!out) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

} // namespace dm::cli

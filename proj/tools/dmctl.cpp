#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "darkmatter/cli/verbs.hpp"

namespace {

std::string one_line(std::string s)
{
    for (char& c : s) {
        if (c == '\n' || c == '\r') {
            c = ' ';
        }
    }
    return s;
}

void report_error(const char* kind, const std::string& reason)
{
    std::cerr << "error: kind=" << kind << " reason=" << one_line(reason) << "\n";
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"dmctl: SAE dark-matter experiments"};
    app.require_subcommand(1);

    dm::cli::RunOptions options;
    std::string config;
    std::string out = ".";
    unsigned threads = 0;
    std::uint64_t seed = 0;

    for (const auto& verb : dm::cli::verbs()) {
        auto* sub = app.add_subcommand(verb.name, verb.summary);
        sub->add_option("--config", config, "experiment config (YAML)")->required();
        sub->add_option("--out", out, "output directory");
        sub->add_option("--threads", threads, "worker threads (0 = all cores)");
        sub->add_option("--seed", seed, "override the config seed");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        report_error("schema", e.what());
        return 2;
    }

    const auto* sub = app.get_subcommands().front();
    options.config = config;
    options.out_dir = out;
    if (sub->count("--seed") > 0) {
        options.seed = seed;
    }
    dm::set_thread_count(threads);

    try {
        const auto path = dm::cli::run_verb(sub->get_name(), options);
        std::cout << path.string() << "\n";
        return 0;
    } catch (const dm::Error& e) {
        report_error(dm::to_string(e.kind()), e.what());
        return dm::cli::exit_code(e.kind());
    } catch (const std::exception& e) {
        report_error("internal", e.what());
        return 1;
    }
}

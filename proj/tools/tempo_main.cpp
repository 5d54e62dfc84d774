#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "tempo/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitDivergence = 2;
constexpr int kExitIo = 3;

struct RunFlags {
    std::string config_path;
    std::string out_path;
    std::string format = "json";
    int ga_steps = -1;
    std::string amp;
    int prefetch = -1;
    std::string pin_policy;
    long long seed = -1;
};

tempo::ExperimentConfig load_with_overrides(const RunFlags& f) {
    tempo::ExperimentConfig cfg;
    if (!f.config_path.empty()) cfg = tempo::load_config(f.config_path);
    if (f.ga_steps >= 0) cfg.ga_steps = f.ga_steps;
    if (!f.amp.empty()) tempo::apply_config_entry(cfg, "amp", f.amp);
    if (f.prefetch == 0) {
        cfg.prefetch_enabled = false;
    } else if (f.prefetch > 0) {
        cfg.prefetch_enabled = true;
        cfg.k_buffers = f.prefetch;
    }
    if (!f.pin_policy.empty()) tempo::apply_config_entry(cfg, "pin_policy", f.pin_policy);
    if (f.seed >= 0) cfg.seed = std::uint64_t(f.seed);
    cfg.validate();
    return cfg;
}

tempo::ReportFormat parse_format(const std::string& name) {
    if (name == "json") return tempo::ReportFormat::Json;
    if (name == "csv") return tempo::ReportFormat::Csv;
    throw tempo::ConfigError("--format must be json or csv, got '" + name + "'");
}

void print_summary(const tempo::MetricsReport& r) {
    std::printf("run %-14s acc %6.2f%%  f1 %6.2f%%  time %8.3fs  throughput %.3g ops/s",
                r.run_id.c_str(), r.accuracy, r.macro_f1, r.exec_time_s, r.throughput);
    if (r.speedup_vs_baseline) std::printf("  speedup %.2fx", *r.speedup_vs_baseline);
    if (r.skipped_steps > 0) std::printf("  skipped %d", r.skipped_steps);
    std::printf("\n");
}

int cmd_run(const RunFlags& f) {
    const tempo::ExperimentConfig cfg = load_with_overrides(f);
    const tempo::ReportFormat format = parse_format(f.format);
    const tempo::MetricsReport report = tempo::train(cfg);
    print_summary(report);
    if (!f.out_path.empty()) {
        tempo::emit_report(report, format, f.out_path);
        std::printf("wrote %s\n", f.out_path.c_str());
    }
    return kExitOk;
}

int cmd_ablate(const RunFlags& f, const std::string& grid_arg, const std::string& out_dir) {
    const tempo::ExperimentConfig cfg = load_with_overrides(f);

    std::set<tempo::Technique> grid;
    std::string item;
    std::stringstream ss(grid_arg);
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const auto t = tempo::technique_from_name(item);
        if (!t) throw tempo::ConfigError("--grid: unknown technique '" + item +
                                         "' (expected ga, amp, prefetch)");
        grid.insert(*t);
    }
    if (grid.empty()) throw tempo::ConfigError("--grid: no techniques named");

    const tempo::ComparisonTable table = tempo::run_ablation(cfg, grid);
    print_summary(table.baseline);
    for (const auto& run : table.runs) {
        if (run.failed) {
            std::printf("run %-14s FAILED: %s\n", run.run_id.c_str(), run.error.c_str());
        } else if (run.run_id != "baseline") {
            print_summary(run.report);
        }
    }

    std::filesystem::create_directories(out_dir);
    tempo::emit_report(table, tempo::ReportFormat::Json, out_dir + "/ablation.json");
    tempo::emit_report(table, tempo::ReportFormat::Csv, out_dir + "/ablation.csv");
    std::printf("wrote %s/ablation.{json,csv}\n", out_dir.c_str());

    for (const auto& run : table.runs) {
        if (run.failed) return kExitDivergence;
    }
    return kExitOk;
}

int cmd_verify() {
    const auto results = tempo::run_verification();
    bool all_ok = true;
    for (const auto& r : results) {
        std::printf("%-20s %s  (%s)\n", r.name.c_str(), r.passed ? "PASS" : "FAIL",
                    r.detail.c_str());
        all_ok = all_ok && r.passed;
    }
    return all_ok ? kExitOk : kExitDivergence;
}

int cmd_make_fixture(const std::string& out, int records, long long seed,
                     const std::string& format) {
    if (format == "cifar10") {
        tempo::write_cifar10_fixture(out, records, std::uint64_t(seed));
    } else if (format == "cifar100") {
        tempo::write_cifar100_fixture(out, records, std::uint64_t(seed));
    } else {
        throw tempo::ConfigError("--format must be cifar10 or cifar100");
    }
    std::printf("wrote %d %s records to %s\n", records, format.c_str(), out.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tempo: a desk-scale lab for training-loop acceleration techniques"};
    app.require_subcommand(1);

    RunFlags flags;
    std::string grid = "ga,amp,prefetch";
    std::string ablate_out = "ablation";
    std::string fixture_out = "cifar10-fixture.bin";
    std::string fixture_format = "cifar10";
    int fixture_records = 2000;
    long long fixture_seed = 42;

    auto* run = app.add_subcommand("run", "Train one configuration and report metrics");
    run->add_option("--config", flags.config_path, "Config file (key = value lines)");
    run->add_option("--ga-steps", flags.ga_steps, "Gradient accumulation factor M");
    run->add_option("--amp", flags.amp, "Mixed precision on|off");
    run->add_option("--prefetch", flags.prefetch,
                    "Staging buffers K (0 disables prefetching)");
    run->add_option("--pin-policy", flags.pin_policy, "Pin policy on|off");
    run->add_option("--seed", flags.seed, "Random seed");
    run->add_option("--out", flags.out_path, "Write the report here");
    run->add_option("--format", flags.format, "json|csv");

    auto* ablate = app.add_subcommand("ablate", "Run the with/without technique grid");
    ablate->add_option("--config", flags.config_path, "Config file");
    ablate->add_option("--grid", grid, "Comma list of techniques: ga,amp,prefetch");
    ablate->add_option("--seed", flags.seed, "Random seed");
    ablate->add_option("--out", ablate_out, "Output directory");

    auto* verify = app.add_subcommand(
        "verify", "Run the GA-equivalence, finite-difference and loss-scale suites");

    auto* fixture = app.add_subcommand("make-fixture",
                                       "Write a synthetic CIFAR-format binary file");
    fixture->add_option("--out", fixture_out, "Output file");
    fixture->add_option("--records", fixture_records, "Record count");
    fixture->add_option("--seed", fixture_seed, "Random seed");
    fixture->add_option("--format", fixture_format, "cifar10|cifar100");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (run->parsed()) return cmd_run(flags);
        if (ablate->parsed()) return cmd_ablate(flags, grid, ablate_out);
        if (verify->parsed()) return cmd_verify();
        if (fixture->parsed())
            return cmd_make_fixture(fixture_out, fixture_records, fixture_seed,
                                    fixture_format);
    } catch (const tempo::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const tempo::DivergenceError& e) {
        std::fprintf(stderr, "divergence: %s\n", e.what());
        return kExitDivergence;
    } catch (const tempo::FormatError& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return kExitIo;
    } catch (const tempo::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kExitIo;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitDivergence;
    }
    return kExitConfig;
}

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tsc/harness.hpp"

namespace fs = std::filesystem;
using tsc::harness::RunConfig;

namespace {

struct Common {
    std::string profile = "desk";
    std::string config;
    std::optional<std::uint64_t> seed;
    std::vector<std::uint64_t> seeds;
    std::string out;
    std::string scheme;
    bool literal_reward_sign = false;
    std::optional<int> episodes;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--profile", c.profile, "Base profile")->check(CLI::IsMember({"desk", "full"}));
    sub->add_option("--config", c.config, "JSON config overlay")->check(CLI::ExistingFile);
    sub->add_option("--seed", c.seed, "Single master seed");
    sub->add_option("--seeds", c.seeds, "Master seeds")->delimiter(',');
    sub->add_option("--out", c.out, "Output directory");
    sub->add_option("--scheme", c.scheme, "idql | s2rl | s2r2l | max_pressure | random_baseline");
    sub->add_flag("--literal-reward-sign", c.literal_reward_sign, "Use w_now - w_prev as the local reward");
    sub->add_option("--episodes", c.episodes, "Training episodes");
}

RunConfig resolve(const Common& c) {
    RunConfig cfg = tsc::harness::profile(c.profile);
    if (!c.config.empty()) {
        cfg = tsc::harness::load_config(c.config, cfg);
    }
    if (c.seed) {
        cfg.seeds = {*c.seed};
    }
    if (!c.seeds.empty()) {
        cfg.seeds = c.seeds;
    }
    if (!c.out.empty()) {
        cfg.out_dir = c.out;
    }
    if (!c.scheme.empty()) {
        cfg.scheme = c.scheme;
    }
    if (c.literal_reward_sign) {
        cfg.literal_reward_sign = true;
    }
    if (c.episodes) {
        cfg.episodes = *c.episodes;
    }
    cfg.validate();
    return cfg;
}

fs::path seed_dir(const RunConfig& cfg, std::uint64_t seed) {
    const fs::path base(cfg.out_dir);
    return cfg.seeds.size() == 1 ? base : base / ("seed_" + std::to_string(seed));
}

std::optional<fs::path> seed_checkpoints(const std::string& ck, const RunConfig& cfg, std::uint64_t seed) {
    if (ck.empty()) {
        return std::nullopt;
    }
    const fs::path p(ck);
    const fs::path per_seed = p / ("seed_" + std::to_string(seed));
    if (cfg.seeds.size() > 1 && fs::is_directory(per_seed)) {
        return per_seed;
    }
    return p;
}

void print_summary(const std::string& tag, std::uint64_t seed, const tsc::harness::RunResult& r) {
    using tsc::harness::format_double;
    if (!r.segments.empty()) {
        const auto& all = r.segments.back();
        std::cout << tag << " seed=" << seed << " delay=" << format_double(all.mean_delay_s)
                  << " queued=" << format_double(all.mean_queued) << " fuel=" << format_double(all.mean_fuel_ml_per_s)
                  << '\n';
    } else if (!r.episodes.empty()) {
        const auto& e = r.episodes.back();
        std::cout << tag << " seed=" << seed << " episode=" << e.episode << " delay=" << format_double(e.mean_delay_s)
                  << " queued=" << format_double(e.mean_queued) << " fuel=" << format_double(e.mean_fuel_ml_per_s)
                  << '\n';
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Grid traffic signal control experiments"};
    app.require_subcommand(1);

    Common train_opts, test_opts, base_opts, sweep_w_opts, sweep_g_opts;
    std::string test_ck, sweep_g_ck;

    auto* train = app.add_subcommand("train", "Train a MARL scheme");
    add_common(train, train_opts);
    auto* test = app.add_subcommand("test", "Greedy test episode on the testing schedule");
    add_common(test, test_opts);
    test->add_option("--checkpoints", test_ck, "Training run or agents directory");
    auto* baseline = app.add_subcommand("baseline", "Test max_pressure (default) or random_baseline");
    add_common(baseline, base_opts);
    auto* sweep_w = app.add_subcommand("sweep-weight", "Self-weight sweep for s2r2l");
    add_common(sweep_w, sweep_w_opts);
    auto* sweep_g = app.add_subcommand("sweep-maxgreen", "Max-green sensitivity for s2r2l and max_pressure");
    add_common(sweep_g, sweep_g_opts);
    sweep_g->add_option("--checkpoints", sweep_g_ck, "Trained s2r2l run directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            const RunConfig cfg = resolve(train_opts);
            for (std::uint64_t seed : cfg.seeds) {
                print_summary("train", seed, tsc::harness::run_training(cfg, seed, seed_dir(cfg, seed)));
            }
        } else if (test->parsed()) {
            const RunConfig cfg = resolve(test_opts);
            for (std::uint64_t seed : cfg.seeds) {
                const auto r =
                    tsc::harness::run_testing(cfg, seed, seed_dir(cfg, seed), seed_checkpoints(test_ck, cfg, seed));
                print_summary("test " + cfg.scheme, seed, r);
            }
        } else if (baseline->parsed()) {
            if (base_opts.scheme.empty()) {
                base_opts.scheme = "max_pressure";
            }
            const RunConfig cfg = resolve(base_opts);
            if (cfg.is_marl()) {
                throw tsc::harness::ConfigError("baseline takes max_pressure or random_baseline", {"scheme"});
            }
            for (std::uint64_t seed : cfg.seeds) {
                const auto r = tsc::harness::run_testing(cfg, seed, seed_dir(cfg, seed), std::nullopt);
                print_summary("baseline " + cfg.scheme, seed, r);
            }
        } else if (sweep_w->parsed()) {
            const RunConfig cfg = resolve(sweep_w_opts);
            tsc::harness::sweep_reward_weight(cfg, cfg.out_dir);
            std::cout << "wrote " << (fs::path(cfg.out_dir) / "sweep_weight.csv").string() << '\n';
        } else if (sweep_g->parsed()) {
            const RunConfig cfg = resolve(sweep_g_opts);
            tsc::harness::sweep_max_green(cfg, cfg.out_dir, sweep_g_ck);
            std::cout << "wrote " << (fs::path(cfg.out_dir) / "sweep_maxgreen.csv").string() << '\n';
        }
    } catch (const tsc::harness::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

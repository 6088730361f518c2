#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsc/deep_q.hpp"
#include "tsc/grid.hpp"
#include "tsc/microsim.hpp"

namespace tsc::harness {

/// Validation failure; `keys` lists every offending config key.
struct ConfigError : std::runtime_error {
    ConfigError(const std::string& what, std::vector<std::string> keys)
        : std::runtime_error(what), keys(std::move(keys)) {}
    std::vector<std::string> keys;
};

struct CheckpointMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OdOverride {
    std::string entry;
    std::string exit;
    double probability = 0.0;
};

struct RunConfig {
    std::string scheme = "s2r2l"; // idql | s2rl | s2r2l | max_pressure | random_baseline

    int rows = 4;
    int cols = 4;
    double link_length_m = grid::kDefaultLinkLengthM;
    double speed_limit_mps = grid::kDefaultSpeedLimitMps;
    std::vector<grid::DemandSegment> training_schedule;
    std::vector<grid::DemandSegment> testing_schedule;
    std::vector<OdOverride> od_overrides;

    double episode_length_s = 20000.0;
    double warmup_s = 300.0;
    int control_step_s = 5;
    int learn_every = 16;
    int min_green_s = 10;
    int max_green_s = 60;
    int transition_s = 3;

    dq::DqnConfig dqn;
    std::vector<std::size_t> hidden{64, 32};
    std::vector<double> dropout{0.4, 0.0};
    double self_weight = 2.0;
    double reward_scale = 1.0;
    bool literal_reward_sign = false;
    std::string epsilon_clock = "learn_step"; // learn_step | control_step | episode

    sim::KraussParams krauss;
    sim::FuelCoeffs fuel;
    double queue_delay_per_vehicle_s = 2.0;
    double saturation_flow = 0.5;

    int episodes = 50;
    std::vector<std::uint64_t> seeds{1};
    std::string out_dir = "runs";

    std::vector<double> weight_candidates{0, 0.5, 1, 2, 3, 5, 10, 100, 1000};
    std::vector<int> max_green_values{30, 40, 50, 60};

    bool vehicle_trace = false;
    bool state_log = false;

    bool is_marl() const;
    /// Throws ConfigError listing every offending key.
    void validate() const;
};

/// 50 episodes x 20000 s, 4 x 5000 s schedules.
RunConfig full_profile();
/// 10 episodes x 4000 s, schedules compressed x5, learning rate 1e-3 and
/// rewards divided by 10 for the shorter budget.
RunConfig desk_profile();
RunConfig profile(const std::string& name);

/// Overlays keys from a JSON document onto `base`. Unknown keys and type
/// errors are collected and reported together.
RunConfig apply_config_text(const std::string& json_text, RunConfig base);
RunConfig load_config(const std::filesystem::path& path, RunConfig base);
std::string config_to_json(const RunConfig& cfg);

struct StepRow {
    int episode = 0;
    sim::MetricsRecord m;
};

struct EpisodeSummary {
    int episode = 0;
    double mean_delay_s = 0.0;
    double mean_queued = 0.0;
    double mean_fuel_ml_per_s = 0.0;
    std::size_t rows = 0;
};

struct SegmentSummary {
    std::string label; // segment index or "all"
    double start_s = 0.0;
    double end_s = 0.0;
    double mean_delay_s = 0.0;
    double mean_queued = 0.0;
    double mean_fuel_ml_per_s = 0.0;
    std::size_t rows = 0;
};

struct NodeReport {
    std::string node; // node name or "Network"
    double mean_delay_s = 0.0;
    double mean_queue_veh = 0.0;
};

struct RunResult {
    std::vector<StepRow> steps;
    std::vector<EpisodeSummary> episodes;
    std::vector<SegmentSummary> segments;
    std::vector<NodeReport> nodes;
};

/// Mean of each metric over rows; empty input gives zeros.
EpisodeSummary summarize(const std::vector<StepRow>& rows, int episode);
std::vector<SegmentSummary> summarize_segments(const std::vector<StepRow>& rows,
                                               const grid::DemandSchedule& schedule);

/// Trains a MARL scheme for `episodes` episodes. Writes metrics.csv,
/// summary.csv, agents/*.ckpt, agents/*_train.csv, signals.jsonl (last
/// episode) and run.json into `out`.
RunResult run_training(const RunConfig& cfg, std::uint64_t seed, const std::filesystem::path& out);

/// One greedy episode on the testing schedule. MARL schemes load
/// checkpoints from `checkpoints` (an agents/ directory or a run directory
/// holding one); without checkpoints the agents keep their seeded random
/// initialisation. Writes metrics.csv, summary.csv, report_nodes.csv,
/// signals.jsonl and run.json.
RunResult run_testing(const RunConfig& cfg, std::uint64_t seed, const std::filesystem::path& out,
                      const std::optional<std::filesystem::path>& checkpoints);

/// Trains and tests S2R2L per candidate self weight and seed; writes
/// sweep_weight.csv.
void sweep_reward_weight(const RunConfig& cfg, const std::filesystem::path& out);

/// Re-tests trained S2R2L checkpoints and MP at every max-green value;
/// writes sweep_maxgreen.csv.
void sweep_max_green(const RunConfig& cfg, const std::filesystem::path& out,
                     const std::filesystem::path& checkpoints);

/// Shortest round-trip decimal form.
std::string format_double(double v);

} // namespace tsc::harness

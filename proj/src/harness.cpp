#include "tsc/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tsc/marl.hpp"
#include "tsc/max_pressure.hpp"
#include "tsc/rng.hpp"

namespace tsc::harness {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string format_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

bool RunConfig::is_marl() const {
    return scheme == "idql" || scheme == "s2rl" || scheme == "s2r2l";
}

namespace {

double schedule_total(const std::vector<grid::DemandSegment>& s) {
    double t = 0.0;
    for (const auto& seg : s) {
        t += seg.duration_s;
    }
    return t;
}

bool schedule_ok(const std::vector<grid::DemandSegment>& s) {
    if (s.empty()) {
        return false;
    }
    return std::all_of(s.begin(), s.end(), [](const grid::DemandSegment& seg) {
        return seg.duration_s > 0.0 && seg.probability >= 0.0 && seg.probability <= 1.0;
    });
}

bool is_whole(double x) {
    return std::floor(x) == x;
}

} // namespace

void RunConfig::validate() const {
    std::vector<std::string> bad;
    static const std::set<std::string> schemes{"idql", "s2rl", "s2r2l", "max_pressure", "random_baseline"};
    if (!schemes.count(scheme)) {
        bad.push_back("scheme");
    }
    if (rows < 2) {
        bad.push_back("rows");
    }
    if (cols < 2) {
        bad.push_back("cols");
    }
    if (!(link_length_m > 0.0)) {
        bad.push_back("link_length_m");
    }
    if (!(speed_limit_mps > 0.0)) {
        bad.push_back("speed_limit_mps");
    }
    if (!(episode_length_s > 0.0) || !is_whole(episode_length_s)) {
        bad.push_back("episode_length_s");
    }
    if (!schedule_ok(training_schedule) || std::abs(schedule_total(training_schedule) - episode_length_s) > 1e-9) {
        bad.push_back("training_schedule");
    }
    if (!schedule_ok(testing_schedule) || std::abs(schedule_total(testing_schedule) - episode_length_s) > 1e-9) {
        bad.push_back("testing_schedule");
    }
    if (control_step_s <= 0 || (episode_length_s > 0.0 && std::fmod(episode_length_s, control_step_s) != 0.0)) {
        bad.push_back("control_step_s");
    }
    if (warmup_s < 0.0 || warmup_s >= episode_length_s ||
        (control_step_s > 0 && std::fmod(warmup_s, control_step_s) != 0.0)) {
        bad.push_back("warmup_s");
    }
    if (learn_every <= 0) {
        bad.push_back("learn_every");
    }
    if (min_green_s < 0) {
        bad.push_back("min_green_s");
    }
    if (max_green_s <= 0 || max_green_s < min_green_s) {
        bad.push_back("max_green_s");
    }
    if (transition_s < 0) {
        bad.push_back("transition_s");
    }
    try {
        dqn.validate();
    } catch (const std::exception&) {
        bad.push_back("dqn");
    }
    if (hidden.empty() || std::any_of(hidden.begin(), hidden.end(), [](std::size_t h) { return h == 0; })) {
        bad.push_back("hidden");
    }
    if (dropout.size() != hidden.size() ||
        std::any_of(dropout.begin(), dropout.end(), [](double p) { return !(p >= 0.0 && p < 1.0); })) {
        bad.push_back("dropout");
    }
    if (self_weight < 0.0) {
        bad.push_back("self_weight");
    }
    if (!(reward_scale > 0.0)) {
        bad.push_back("reward_scale");
    }
    if (epsilon_clock != "learn_step" && epsilon_clock != "control_step" && epsilon_clock != "episode") {
        bad.push_back("epsilon_clock");
    }
    try {
        krauss.validate();
    } catch (const std::exception&) {
        bad.push_back("krauss");
    }
    if (queue_delay_per_vehicle_s < 0.0) {
        bad.push_back("queue_delay_per_vehicle_s");
    }
    if (!(saturation_flow > 0.0)) {
        bad.push_back("saturation_flow");
    }
    if (episodes < 1) {
        bad.push_back("episodes");
    }
    if (seeds.empty()) {
        bad.push_back("seeds");
    }
    if (std::any_of(weight_candidates.begin(), weight_candidates.end(), [](double n) { return n < 0.0; })) {
        bad.push_back("weight_candidates");
    }
    if (max_green_values.empty() || std::any_of(max_green_values.begin(), max_green_values.end(),
                                                [this](int v) { return v <= 0 || v < min_green_s; })) {
        bad.push_back("max_green_values");
    }
    if (!od_overrides.empty() && rows >= 2 && cols >= 2) {
        const auto net = grid::build_grid(rows, cols);
        auto find = [](const std::vector<grid::Endpoint>& eps, const std::string& n) {
            return std::any_of(eps.begin(), eps.end(), [&](const grid::Endpoint& e) { return e.name == n; });
        };
        for (const auto& o : od_overrides) {
            if (!find(net.entries(), o.entry) || !find(net.exits(), o.exit) || o.probability < 0.0 ||
                o.probability > 1.0) {
                bad.push_back("od_overrides");
                break;
            }
        }
    }
    if (!bad.empty()) {
        std::string msg = "invalid configuration keys:";
        for (const auto& k : bad) {
            msg += " " + k;
        }
        throw ConfigError(msg, bad);
    }
}

namespace {

std::vector<grid::DemandSegment> scaled(const grid::DemandSchedule& s, double factor) {
    return s.compressed(factor).segments();
}

} // namespace

RunConfig full_profile() {
    RunConfig c;
    c.training_schedule = grid::DemandSchedule::training_default().segments();
    c.testing_schedule = grid::DemandSchedule::testing_default().segments();
    c.episode_length_s = 20000.0;
    c.episodes = 50;
    return c;
}

RunConfig desk_profile() {
    RunConfig c;
    c.training_schedule = scaled(grid::DemandSchedule::training_default(), 5.0);
    c.testing_schedule = scaled(grid::DemandSchedule::testing_default(), 5.0);
    c.episode_length_s = 4000.0;
    c.episodes = 10;
    c.reward_scale = 10.0;
    c.dqn.learning_rate = 1e-3;
    return c;
}

RunConfig profile(const std::string& name) {
    if (name == "desk") {
        return desk_profile();
    }
    if (name == "full") {
        return full_profile();
    }
    throw ConfigError("unknown profile '" + name + "'", {"profile"});
}

namespace {

template <class T>
void read_into(const json& j, const std::string& key, T& dst, std::vector<std::string>& bad) {
    try {
        dst = j.get<T>();
    } catch (const json::exception&) {
        bad.push_back(key);
    }
}

void read_schedule(const json& j, const std::string& key, std::vector<grid::DemandSegment>& dst,
                   std::vector<std::string>& bad) {
    if (!j.is_array()) {
        bad.push_back(key);
        return;
    }
    std::vector<grid::DemandSegment> out;
    for (const auto& seg : j) {
        grid::DemandSegment s;
        if (seg.is_array() && seg.size() == 2 && seg[0].is_number() && seg[1].is_number()) {
            s.duration_s = seg[0].get<double>();
            s.probability = seg[1].get<double>();
        } else if (seg.is_object() && seg.contains("duration_s") && seg.contains("probability") &&
                   seg["duration_s"].is_number() && seg["probability"].is_number()) {
            s.duration_s = seg["duration_s"].get<double>();
            s.probability = seg["probability"].get<double>();
        } else {
            bad.push_back(key);
            return;
        }
        out.push_back(s);
    }
    dst = std::move(out);
}

void read_dqn(const json& j, dq::DqnConfig& d, std::vector<std::string>& bad) {
    if (!j.is_object()) {
        bad.push_back("dqn");
        return;
    }
    for (const auto& [k, v] : j.items()) {
        const std::string key = "dqn." + k;
        if (k == "batch") {
            read_into(v, key, d.batch, bad);
        } else if (k == "n_step") {
            read_into(v, key, d.n_step, bad);
        } else if (k == "target_sync") {
            read_into(v, key, d.target_sync, bad);
        } else if (k == "gamma") {
            read_into(v, key, d.gamma, bad);
        } else if (k == "learning_rate") {
            read_into(v, key, d.learning_rate, bad);
        } else if (k == "per_alpha") {
            read_into(v, key, d.per_alpha, bad);
        } else if (k == "per_epsilon") {
            read_into(v, key, d.per_epsilon, bad);
        } else if (k == "capacity") {
            read_into(v, key, d.capacity, bad);
        } else if (k == "epsilon_decay") {
            read_into(v, key, d.epsilon_decay, bad);
        } else if (k == "epsilon_floor") {
            read_into(v, key, d.epsilon_floor, bad);
        } else {
            bad.push_back(key);
        }
    }
}

void read_krauss(const json& j, sim::KraussParams& p, std::vector<std::string>& bad) {
    if (!j.is_object()) {
        bad.push_back("krauss");
        return;
    }
    for (const auto& [k, v] : j.items()) {
        const std::string key = "krauss." + k;
        if (k == "accel_mps2") {
            read_into(v, key, p.accel_mps2, bad);
        } else if (k == "decel_mps2") {
            read_into(v, key, p.decel_mps2, bad);
        } else if (k == "tau_s") {
            read_into(v, key, p.tau_s, bad);
        } else if (k == "sigma") {
            read_into(v, key, p.sigma, bad);
        } else {
            bad.push_back(key);
        }
    }
}

void read_fuel(const json& j, sim::FuelCoeffs& c, std::vector<std::string>& bad) {
    if (!j.is_object()) {
        bad.push_back("fuel");
        return;
    }
    for (const auto& [k, v] : j.items()) {
        const std::string key = "fuel." + k;
        if (k == "c0") {
            read_into(v, key, c.c0, bad);
        } else if (k == "c1") {
            read_into(v, key, c.c1, bad);
        } else if (k == "c2") {
            read_into(v, key, c.c2, bad);
        } else if (k == "c3") {
            read_into(v, key, c.c3, bad);
        } else {
            bad.push_back(key);
        }
    }
}

} // namespace

RunConfig apply_config_text(const std::string& json_text, RunConfig c) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what(), {"<document>"});
    }
    if (!j.is_object()) {
        throw ConfigError("config must be a JSON object", {"<document>"});
    }
    std::vector<std::string> bad;
    for (const auto& [k, v] : j.items()) {
        if (k == "scheme") {
            read_into(v, k, c.scheme, bad);
        } else if (k == "rows") {
            read_into(v, k, c.rows, bad);
        } else if (k == "cols") {
            read_into(v, k, c.cols, bad);
        } else if (k == "link_length_m") {
            read_into(v, k, c.link_length_m, bad);
        } else if (k == "speed_limit_mps") {
            read_into(v, k, c.speed_limit_mps, bad);
        } else if (k == "training_schedule") {
            read_schedule(v, k, c.training_schedule, bad);
        } else if (k == "testing_schedule") {
            read_schedule(v, k, c.testing_schedule, bad);
        } else if (k == "od_overrides") {
            if (!v.is_array()) {
                bad.push_back(k);
                continue;
            }
            c.od_overrides.clear();
            for (const auto& o : v) {
                OdOverride ov;
                try {
                    ov.entry = o.at("entry").get<std::string>();
                    ov.exit = o.at("exit").get<std::string>();
                    ov.probability = o.at("probability").get<double>();
                } catch (const json::exception&) {
                    bad.push_back(k);
                    break;
                }
                c.od_overrides.push_back(ov);
            }
        } else if (k == "episode_length_s") {
            read_into(v, k, c.episode_length_s, bad);
        } else if (k == "warmup_s") {
            read_into(v, k, c.warmup_s, bad);
        } else if (k == "control_step_s") {
            read_into(v, k, c.control_step_s, bad);
        } else if (k == "learn_every") {
            read_into(v, k, c.learn_every, bad);
        } else if (k == "min_green_s") {
            read_into(v, k, c.min_green_s, bad);
        } else if (k == "max_green_s") {
            read_into(v, k, c.max_green_s, bad);
        } else if (k == "transition_s") {
            read_into(v, k, c.transition_s, bad);
        } else if (k == "dqn") {
            read_dqn(v, c.dqn, bad);
        } else if (k == "hidden") {
            read_into(v, k, c.hidden, bad);
        } else if (k == "dropout") {
            read_into(v, k, c.dropout, bad);
        } else if (k == "self_weight") {
            read_into(v, k, c.self_weight, bad);
        } else if (k == "reward_scale") {
            read_into(v, k, c.reward_scale, bad);
        } else if (k == "literal_reward_sign") {
            read_into(v, k, c.literal_reward_sign, bad);
        } else if (k == "epsilon_clock") {
            read_into(v, k, c.epsilon_clock, bad);
        } else if (k == "krauss") {
            read_krauss(v, c.krauss, bad);
        } else if (k == "fuel") {
            read_fuel(v, c.fuel, bad);
        } else if (k == "queue_delay_per_vehicle_s") {
            read_into(v, k, c.queue_delay_per_vehicle_s, bad);
        } else if (k == "saturation_flow") {
            read_into(v, k, c.saturation_flow, bad);
        } else if (k == "episodes") {
            read_into(v, k, c.episodes, bad);
        } else if (k == "seeds") {
            read_into(v, k, c.seeds, bad);
        } else if (k == "out_dir") {
            read_into(v, k, c.out_dir, bad);
        } else if (k == "weight_candidates") {
            read_into(v, k, c.weight_candidates, bad);
        } else if (k == "max_green_values") {
            read_into(v, k, c.max_green_values, bad);
        } else if (k == "vehicle_trace") {
            read_into(v, k, c.vehicle_trace, bad);
        } else if (k == "state_log") {
            read_into(v, k, c.state_log, bad);
        } else {
            bad.push_back(k);
        }
    }
    if (!bad.empty()) {
        std::string msg = "unknown or mistyped configuration keys:";
        for (const auto& k : bad) {
            msg += " " + k;
        }
        throw ConfigError(msg, bad);
    }
    return c;
}

RunConfig load_config(const fs::path& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file " + path.string(), {"--config"});
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return apply_config_text(ss.str(), std::move(base));
}

std::string config_to_json(const RunConfig& c) {
    auto sched = [](const std::vector<grid::DemandSegment>& s) {
        json a = json::array();
        for (const auto& seg : s) {
            a.push_back({{"duration_s", seg.duration_s}, {"probability", seg.probability}});
        }
        return a;
    };
    json od = json::array();
    for (const auto& o : c.od_overrides) {
        od.push_back({{"entry", o.entry}, {"exit", o.exit}, {"probability", o.probability}});
    }
    json j = {
        {"scheme", c.scheme},
        {"rows", c.rows},
        {"cols", c.cols},
        {"link_length_m", c.link_length_m},
        {"speed_limit_mps", c.speed_limit_mps},
        {"training_schedule", sched(c.training_schedule)},
        {"testing_schedule", sched(c.testing_schedule)},
        {"od_overrides", od},
        {"episode_length_s", c.episode_length_s},
        {"warmup_s", c.warmup_s},
        {"control_step_s", c.control_step_s},
        {"learn_every", c.learn_every},
        {"min_green_s", c.min_green_s},
        {"max_green_s", c.max_green_s},
        {"transition_s", c.transition_s},
        {"dqn",
         {{"batch", c.dqn.batch},
          {"n_step", c.dqn.n_step},
          {"target_sync", c.dqn.target_sync},
          {"gamma", c.dqn.gamma},
          {"learning_rate", c.dqn.learning_rate},
          {"per_alpha", c.dqn.per_alpha},
          {"per_epsilon", c.dqn.per_epsilon},
          {"capacity", c.dqn.capacity},
          {"epsilon_decay", c.dqn.epsilon_decay},
          {"epsilon_floor", c.dqn.epsilon_floor}}},
        {"hidden", c.hidden},
        {"dropout", c.dropout},
        {"self_weight", c.self_weight},
        {"reward_scale", c.reward_scale},
        {"literal_reward_sign", c.literal_reward_sign},
        {"epsilon_clock", c.epsilon_clock},
        {"krauss",
         {{"accel_mps2", c.krauss.accel_mps2},
          {"decel_mps2", c.krauss.decel_mps2},
          {"tau_s", c.krauss.tau_s},
          {"sigma", c.krauss.sigma}}},
        {"fuel", {{"c0", c.fuel.c0}, {"c1", c.fuel.c1}, {"c2", c.fuel.c2}, {"c3", c.fuel.c3}}},
        {"queue_delay_per_vehicle_s", c.queue_delay_per_vehicle_s},
        {"saturation_flow", c.saturation_flow},
        {"episodes", c.episodes},
        {"seeds", c.seeds},
        {"out_dir", c.out_dir},
        {"weight_candidates", c.weight_candidates},
        {"max_green_values", c.max_green_values},
        {"vehicle_trace", c.vehicle_trace},
        {"state_log", c.state_log},
    };
    return j.dump(2) + "\n";
}

EpisodeSummary summarize(const std::vector<StepRow>& rows, int episode) {
    EpisodeSummary s;
    s.episode = episode;
    for (const auto& r : rows) {
        s.mean_delay_s += r.m.avg_delay_s_per_veh;
        s.mean_queued += static_cast<double>(r.m.queued_vehicles);
        s.mean_fuel_ml_per_s += r.m.fuel_rate_ml_per_s;
    }
    s.rows = rows.size();
    if (!rows.empty()) {
        const auto n = static_cast<double>(rows.size());
        s.mean_delay_s /= n;
        s.mean_queued /= n;
        s.mean_fuel_ml_per_s /= n;
    }
    return s;
}

std::vector<SegmentSummary> summarize_segments(const std::vector<StepRow>& rows,
                                               const grid::DemandSchedule& schedule) {
    std::vector<SegmentSummary> out;
    double start = 0.0;
    for (std::size_t k = 0; k < schedule.segments().size(); ++k) {
        const double end = start + schedule.segments()[k].duration_s;
        std::vector<StepRow> part;
        for (const auto& r : rows) {
            if (r.m.time_s >= start && r.m.time_s < end) {
                part.push_back(r);
            }
        }
        const auto s = summarize(part, 0);
        out.push_back({std::to_string(k), start, end, s.mean_delay_s, s.mean_queued, s.mean_fuel_ml_per_s, s.rows});
        start = end;
    }
    const auto s = summarize(rows, 0);
    out.push_back({"all", 0.0, start, s.mean_delay_s, s.mean_queued, s.mean_fuel_ml_per_s, s.rows});
    return out;
}

namespace {

enum class Kind { Marl, MaxPressure, Random };

Kind kind_of(const RunConfig& cfg) {
    if (cfg.is_marl()) {
        return Kind::Marl;
    }
    return cfg.scheme == "max_pressure" ? Kind::MaxPressure : Kind::Random;
}

struct Scenario {
    grid::RoadNetwork net;
    grid::OdTable od;
};

std::unique_ptr<Scenario> make_scenario(const RunConfig& cfg) {
    auto sc = std::make_unique<Scenario>();
    sc->net = grid::build_grid(cfg.rows, cfg.cols, cfg.link_length_m, cfg.speed_limit_mps);
    sc->od = grid::OdTable::standard(sc->net);
    auto index_of = [](const std::vector<grid::Endpoint>& eps, const std::string& name) {
        for (std::size_t i = 0; i < eps.size(); ++i) {
            if (eps[i].name == name) {
                return static_cast<int>(i);
            }
        }
        throw ConfigError("unknown endpoint " + name, {"od_overrides"});
    };
    for (const auto& o : cfg.od_overrides) {
        sc->od.set_probability_override(index_of(sc->net.entries(), o.entry), index_of(sc->net.exits(), o.exit),
                                        o.probability);
    }
    return sc;
}

sim::SimConfig sim_config(const RunConfig& cfg) {
    sim::SimConfig s;
    s.krauss = cfg.krauss;
    s.fuel = cfg.fuel;
    s.timing.min_green_s = cfg.min_green_s;
    s.timing.max_green_s = cfg.max_green_s;
    s.timing.transition_s = cfg.transition_s;
    s.queue_delay_per_vehicle_s = cfg.queue_delay_per_vehicle_s;
    return s;
}

marl::AgentConfig agent_config(const RunConfig& cfg) {
    marl::AgentConfig a;
    a.scheme = marl::parse_scheme(cfg.scheme);
    a.dqn = cfg.dqn;
    a.hidden = cfg.hidden;
    a.dropout = cfg.dropout;
    a.self_weight = cfg.self_weight;
    a.reward_scale = cfg.reward_scale;
    a.literal_reward_sign = cfg.literal_reward_sign;
    a.learn_every = cfg.learn_every;
    if (cfg.epsilon_clock == "control_step") {
        a.epsilon_clock = marl::EpsilonClock::ControlSteps;
    } else if (cfg.epsilon_clock == "episode") {
        a.epsilon_clock = marl::EpsilonClock::Episodes;
    }
    return a;
}

struct EpisodeIo {
    std::ostream* signals = nullptr;
    std::ostream* vehicles = nullptr;
    std::ostream* states = nullptr;
};

struct EpisodeOutput {
    std::vector<sim::MetricsRecord> rows;
    std::vector<NodeReport> nodes;
};

EpisodeOutput run_episode(const RunConfig& cfg, const Scenario& sc, const grid::DemandSchedule& schedule,
                          std::uint64_t sim_seed, Kind kind, marl::MarlAgents* agents, Rng* random_rng,
                          bool learning, const EpisodeIo& io) {
    sim::Simulator sim(sc.net, sc.od, schedule, sim_config(cfg), sim_seed);
    const auto& nodes = sc.net.nodes();
    if (io.signals != nullptr) {
        std::ostream* os = io.signals;
        sim.set_signal_event_sink([os, &nodes](int node, double t, int stage, signal::SignalEvent ev) {
            *os << "{\"node\":\"" << nodes[static_cast<std::size_t>(node)].name << "\",\"time\":" << format_double(t)
                << ",\"stage\":" << stage << ",\"event\":\"" << signal::to_string(ev) << "\"}\n";
        });
    }
    sim.set_vehicle_trace(io.vehicles);
    if (agents != nullptr) {
        if (io.states != nullptr) {
            std::ostream* os = io.states;
            agents->set_state_sink([os, &nodes](const marl::StateActionEvent& e) {
                *os << "{\"node\":\"" << nodes[static_cast<std::size_t>(e.node)].name
                    << "\",\"time\":" << format_double(e.time_s) << ",\"action\":" << e.action << ",\"state\":[";
                for (std::size_t i = 0; i < e.state->size(); ++i) {
                    *os << (i ? "," : "") << format_double((*e.state)[i]);
                }
                *os << "]}\n";
            });
        } else {
            agents->set_state_sink({});
        }
    }

    const mp::MaxPressureController mpc(cfg.saturation_flow);
    const auto n_nodes = nodes.size();
    std::vector<double> node_delay(n_nodes, 0.0);
    std::vector<double> node_queue(n_nodes, 0.0);
    EpisodeOutput out;
    const auto horizon = static_cast<std::int64_t>(schedule.total_duration_s());
    const auto warmup = static_cast<std::int64_t>(cfg.warmup_s);
    for (std::int64_t t = 0; t < horizon; t += cfg.control_step_s) {
        if (t < warmup) {
            const auto stages = mpc.choose_all(sim);
            for (std::size_t i = 0; i < n_nodes; ++i) {
                sim.apply_decision(static_cast<int>(i), stages[i]);
            }
            if (agents != nullptr) {
                agents->track_waiting(sim);
            }
        } else {
            out.rows.push_back(sim.snapshot_metrics());
            for (std::size_t i = 0; i < n_nodes; ++i) {
                const auto ns = sim.node_snapshot(static_cast<int>(i));
                node_delay[i] += ns.mean_delay_s;
                node_queue[i] += ns.queued;
            }
            switch (kind) {
            case Kind::Marl:
                agents->control_step(sim, learning);
                break;
            case Kind::MaxPressure: {
                const auto stages = mpc.choose_all(sim);
                for (std::size_t i = 0; i < n_nodes; ++i) {
                    sim.apply_decision(static_cast<int>(i), stages[i]);
                }
                break;
            }
            case Kind::Random:
                for (std::size_t i = 0; i < n_nodes; ++i) {
                    sim.apply_decision(static_cast<int>(i), static_cast<int>(uniform_index(*random_rng, 2)));
                }
                break;
            }
        }
        sim.close_detector_interval();
        for (int k = 0; k < cfg.control_step_s; ++k) {
            sim.step();
        }
    }
    if (agents != nullptr) {
        agents->end_episode(sim, learning);
    }

    const double rows = static_cast<double>(std::max<std::size_t>(out.rows.size(), 1));
    double net_delay = 0.0;
    double net_queue = 0.0;
    for (const auto& r : out.rows) {
        net_delay += r.avg_delay_s_per_veh;
        net_queue += static_cast<double>(r.queued_vehicles);
    }
    for (std::size_t i = 0; i < n_nodes; ++i) {
        out.nodes.push_back({nodes[i].name, node_delay[i] / rows, node_queue[i] / rows});
    }
    out.nodes.push_back({"Network", net_delay / rows, net_queue / rows});
    return out;
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw std::runtime_error("cannot write " + p.string());
    }
    return f;
}

const char* kMetricsHeader = "time_s,avg_delay_s_per_veh,queued_vehicles,fuel_rate_ml_per_s,inserted,exited,pending";

void write_metrics_row(std::ostream& os, const sim::MetricsRecord& m) {
    os << format_double(m.time_s) << ',' << format_double(m.avg_delay_s_per_veh) << ',' << m.queued_vehicles << ','
       << format_double(m.fuel_rate_ml_per_s) << ',' << m.inserted << ',' << m.exited << ',' << m.pending << '\n';
}

void write_run_json(const fs::path& out, const RunConfig& cfg, std::uint64_t seed, const std::string& mode) {
    auto f = open_out(out / "run.json");
    json meta = json::parse(config_to_json(cfg));
    f << json({{"mode", mode}, {"seed", seed}, {"config", meta}}).dump(2) << "\n";
}

fs::path checkpoint_path(const fs::path& dir, const std::string& node) {
    return dir / (node + ".ckpt");
}

fs::path resolve_agents_dir(const fs::path& p) {
    if (fs::is_directory(p / "agents")) {
        return p / "agents";
    }
    return p;
}

} // namespace

RunResult run_training(const RunConfig& cfg, std::uint64_t seed, const fs::path& out) {
    cfg.validate();
    if (!cfg.is_marl()) {
        throw ConfigError("training needs a MARL scheme, got '" + cfg.scheme + "'", {"scheme"});
    }
    const auto sc = make_scenario(cfg);
    fs::create_directories(out / "agents");
    write_run_json(out, cfg, seed, "train");

    marl::MarlAgents agents(sc->net, agent_config(cfg), seed);
    const auto& nodes = sc->net.nodes();
    std::vector<std::ofstream> agent_logs;
    for (const auto& n : nodes) {
        agent_logs.push_back(open_out(out / "agents" / (n.name + "_train.csv")));
        agent_logs.back() << "episode,learn_step,mean_td_error,epsilon,reward_sum\n";
    }
    int episode = 0;
    agents.set_learn_sink([&](const marl::LearnEvent& e) {
        agent_logs[static_cast<std::size_t>(e.node)]
            << episode << ',' << e.learn_step << ',' << format_double(e.mean_abs_td) << ','
            << format_double(e.epsilon) << ',' << format_double(e.reward_sum) << '\n';
    });

    auto metrics = open_out(out / "metrics.csv");
    metrics << "episode," << kMetricsHeader << '\n';
    auto summary = open_out(out / "summary.csv");
    summary << "episode,mean_delay_s_per_veh,mean_queued_vehicles,mean_fuel_rate_ml_per_s,rows\n";
    auto signals = open_out(out / "signals.jsonl");

    const grid::DemandSchedule schedule(cfg.training_schedule);
    RunResult result;
    for (episode = 0; episode < cfg.episodes; ++episode) {
        agents.set_episode(episode);
        EpisodeIo io;
        if (episode + 1 == cfg.episodes) {
            io.signals = &signals;
        }
        const auto ep = run_episode(cfg, *sc, schedule, derive_seed(seed, "episode", static_cast<std::uint64_t>(episode)),
                                    Kind::Marl, &agents, nullptr, true, io);
        std::vector<StepRow> rows;
        for (const auto& m : ep.rows) {
            metrics << episode << ',';
            write_metrics_row(metrics, m);
            rows.push_back({episode, m});
        }
        const auto s = summarize(rows, episode);
        summary << episode << ',' << format_double(s.mean_delay_s) << ',' << format_double(s.mean_queued) << ','
                << format_double(s.mean_fuel_ml_per_s) << ',' << s.rows << '\n';
        result.episodes.push_back(s);
        result.steps.insert(result.steps.end(), rows.begin(), rows.end());
        result.nodes = ep.nodes;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            nn::save_checkpoint(agents.learner(static_cast<int>(i)).local(),
                                checkpoint_path(out / "agents", nodes[i].name));
        }
        metrics.flush();
        summary.flush();
    }
    return result;
}

RunResult run_testing(const RunConfig& cfg, std::uint64_t seed, const fs::path& out,
                      const std::optional<fs::path>& checkpoints) {
    cfg.validate();
    const auto sc = make_scenario(cfg);
    fs::create_directories(out);
    write_run_json(out, cfg, seed, "test");
    const Kind kind = kind_of(cfg);
    const auto& nodes = sc->net.nodes();

    std::unique_ptr<marl::MarlAgents> agents;
    if (kind == Kind::Marl) {
        agents = std::make_unique<marl::MarlAgents>(sc->net, agent_config(cfg), seed);
        if (checkpoints) {
            const fs::path dir = resolve_agents_dir(*checkpoints);
            for (std::size_t i = 0; i < nodes.size(); ++i) {
                const auto path = checkpoint_path(dir, nodes[i].name);
                const nn::Mlp net = nn::load_checkpoint(path);
                auto& learner = agents->learner(static_cast<int>(i));
                if (!net.same_shape(learner.local())) {
                    throw CheckpointMismatch("checkpoint " + path.string() + " has input width " +
                                             std::to_string(net.input_size()) + ", scheme " + cfg.scheme +
                                             " expects " + std::to_string(learner.local().input_size()));
                }
                learner.load(net);
            }
        }
    }
    Rng random_rng = make_stream(seed, "explore", 1u << 20);

    auto signals = open_out(out / "signals.jsonl");
    std::ofstream vehicles;
    std::ofstream states;
    EpisodeIo io;
    io.signals = &signals;
    if (cfg.vehicle_trace) {
        vehicles = open_out(out / "vehicles.jsonl");
        io.vehicles = &vehicles;
    }
    if (cfg.state_log && agents) {
        states = open_out(out / "state_actions.jsonl");
        io.states = &states;
    }

    const grid::DemandSchedule schedule(cfg.testing_schedule);
    const auto ep = run_episode(cfg, *sc, schedule, derive_seed(seed, "test"), kind, agents.get(), &random_rng,
                                false, io);

    RunResult result;
    auto metrics = open_out(out / "metrics.csv");
    metrics << kMetricsHeader << '\n';
    for (const auto& m : ep.rows) {
        write_metrics_row(metrics, m);
        result.steps.push_back({0, m});
    }
    result.episodes.push_back(summarize(result.steps, 0));
    result.segments = summarize_segments(result.steps, schedule);
    result.nodes = ep.nodes;

    auto summary = open_out(out / "summary.csv");
    summary << "segment,start_s,end_s,mean_delay_s_per_veh,mean_queued_vehicles,mean_fuel_rate_ml_per_s,rows\n";
    for (const auto& s : result.segments) {
        summary << s.label << ',' << format_double(s.start_s) << ',' << format_double(s.end_s) << ','
                << format_double(s.mean_delay_s) << ',' << format_double(s.mean_queued) << ','
                << format_double(s.mean_fuel_ml_per_s) << ',' << s.rows << '\n';
    }
    auto report = open_out(out / "report_nodes.csv");
    report << "node,mean_delay_s_per_veh,mean_queue_veh\n";
    for (const auto& n : result.nodes) {
        report << n.node << ',' << format_double(n.mean_delay_s) << ',' << format_double(n.mean_queue_veh) << '\n';
    }
    return result;
}

namespace {

std::string label_of(double v) {
    return format_double(v);
}

} // namespace

void sweep_reward_weight(const RunConfig& cfg, const fs::path& out) {
    cfg.validate();
    fs::create_directories(out);
    auto csv = open_out(out / "sweep_weight.csv");
    csv << "self_weight,seed,mean_delay_s_per_veh,mean_queued_vehicles,mean_fuel_rate_ml_per_s,neighbor_only\n";
    for (double n : cfg.weight_candidates) {
        RunConfig c = cfg;
        c.scheme = "s2r2l";
        c.self_weight = n;
        for (std::uint64_t seed : cfg.seeds) {
            const fs::path dir = out / ("n_" + label_of(n)) / ("seed_" + std::to_string(seed));
            run_training(c, seed, dir / "train");
            const auto r = run_testing(c, seed, dir / "test", dir / "train");
            const auto& all = r.segments.back();
            csv << label_of(n) << ',' << seed << ',' << format_double(all.mean_delay_s) << ','
                << format_double(all.mean_queued) << ',' << format_double(all.mean_fuel_ml_per_s) << ','
                << (n == 0.0 ? 1 : 0) << '\n';
            csv.flush();
        }
    }
}

void sweep_max_green(const RunConfig& cfg, const fs::path& out, const fs::path& checkpoints) {
    cfg.validate();
    fs::create_directories(out);
    auto csv = open_out(out / "sweep_maxgreen.csv");
    csv << "max_green_s,scheme,seed,mean_delay_s_per_veh,mean_queued_vehicles,mean_fuel_rate_ml_per_s\n";
    for (int v : cfg.max_green_values) {
        for (std::uint64_t seed : cfg.seeds) {
            for (const std::string scheme : {"s2r2l", "max_pressure"}) {
                RunConfig c = cfg;
                c.scheme = scheme;
                c.max_green_s = v;
                std::optional<fs::path> ck;
                if (scheme == "s2r2l") {
                    ck = cfg.seeds.size() > 1 && fs::is_directory(checkpoints / ("seed_" + std::to_string(seed)))
                             ? checkpoints / ("seed_" + std::to_string(seed))
                             : checkpoints;
                }
                const fs::path dir =
                    out / ("max_green_" + std::to_string(v)) / scheme / ("seed_" + std::to_string(seed));
                const auto r = run_testing(c, seed, dir, ck);
                const auto& all = r.segments.back();
                csv << v << ',' << scheme << ',' << seed << ',' << format_double(all.mean_delay_s) << ','
                    << format_double(all.mean_queued) << ',' << format_double(all.mean_fuel_ml_per_s) << '\n';
                csv.flush();
            }
        }
    }
}

} // namespace tsc::harness

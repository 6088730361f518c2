#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tsc/deep_q.hpp"
#include "tsc/grid.hpp"
#include "tsc/microsim.hpp"
#include "tsc/signal.hpp"

namespace tsc::marl {

struct WiringError : std::logic_error {
    using std::logic_error::logic_error;
};

enum class Scheme { Idql, S2rl, S2r2l };

std::string_view to_string(Scheme s);
/// Accepts "idql", "s2rl", "s2r2l".
Scheme parse_scheme(std::string_view name);

inline constexpr std::size_t kObservationWidth = 11;

/// <H1..H4, Q1..Q4, one-hot stage (2), elapsed ratio>.
std::vector<double> assemble_observation(const sim::DetectorReading& det, const signal::SignalController& ctrl);

/// Own observation followed by the neighbors' in (north, south, west, east)
/// order. Throws WiringError when the neighbor count differs from
/// `expected_neighbors`.
std::vector<double> assemble_shared_state(std::span<const double> own,
                                          const std::vector<std::vector<double>>& neighbors,
                                          std::size_t expected_neighbors);

/// -(w_now - w_prev) by default; literal mode returns w_now - w_prev.
double local_reward(double w_now, double w_prev, bool literal_sign = false);

/// (n r_self + sum r_j) / (n + |J|). Throws std::invalid_argument when n < 0
/// or n + |J| == 0.
double shared_reward(double r_self, std::span<const double> neighbor_rewards, double n);

std::size_t state_width(Scheme scheme, const grid::RoadNetwork& net, int node);

enum class EpsilonClock { LearnSteps, ControlSteps, Episodes };

struct AgentConfig {
    Scheme scheme = Scheme::S2r2l;
    dq::DqnConfig dqn;
    std::vector<std::size_t> hidden{64, 32};
    std::vector<double> dropout{0.4, 0.0};
    double self_weight = 2.0;
    bool literal_reward_sign = false;
    int learn_every = 16; // control steps per learning step
    double reward_scale = 1.0; // learners see reward / reward_scale
    EpsilonClock epsilon_clock = EpsilonClock::LearnSteps;

    void validate() const;
};

struct LearnEvent {
    int node = 0;
    std::int64_t learn_step = 0;
    double mean_abs_td = 0.0;
    double epsilon = 0.0;
    double reward_sum = 0.0; // rewards fed to this learner since its previous learning step
};

struct StateActionEvent {
    int node = 0;
    double time_s = 0.0;
    const std::vector<double>* state = nullptr;
    int action = 0;
};

/// One independent learner per intersection. Agents share observations and
/// rewards according to the scheme but never parameters or memories.
class MarlAgents {
public:
    MarlAgents(const grid::RoadNetwork& net, AgentConfig config, std::uint64_t master_seed);

    const AgentConfig& config() const { return config_; }
    std::size_t size() const { return learners_.size(); }
    dq::DqnLearner& learner(int node) { return learners_.at(static_cast<std::size_t>(node)); }
    const dq::DqnLearner& learner(int node) const { return learners_.at(static_cast<std::size_t>(node)); }
    std::size_t state_width(int node) const;

    std::vector<std::vector<double>> observe(const sim::Simulator& sim) const;
    std::vector<std::vector<double>> states(const std::vector<std::vector<double>>& obs) const;

    /// Records the interval waiting as the reference for the next reward
    /// without acting. Used during warm-up.
    void track_waiting(const sim::Simulator& sim);

    /// Observes, rewards the previous decision, chooses and applies a stage
    /// request for every node. With `learning`, feeds the n-step windows and
    /// runs a learning step every `learn_every` calls; otherwise acts greedily.
    std::vector<int> control_step(sim::Simulator& sim, bool learning);

    /// Closes the episode: rewards the last decision and flushes every window
    /// as terminal.
    void end_episode(const sim::Simulator& sim, bool learning);
    void set_episode(int episode) { episode_ = episode; }

    double epsilon(int node) const;

    /// Local rewards and the rewards fed to learners at the last control step,
    /// both before reward_scale is applied.
    const std::vector<double>& last_local_rewards() const { return last_local_; }
    const std::vector<double>& last_rewards() const { return last_reward_; }

    void set_learn_sink(std::function<void(const LearnEvent&)> sink) { learn_sink_ = std::move(sink); }
    void set_state_sink(std::function<void(const StateActionEvent&)> sink) { state_sink_ = std::move(sink); }

private:
    void compute_rewards(const sim::Simulator& sim);

    const grid::RoadNetwork& net_;
    AgentConfig config_;
    std::vector<dq::DqnLearner> learners_;
    std::vector<dq::NStepWindow> windows_;
    std::vector<Rng> explore_;
    std::vector<double> w_prev_;
    std::vector<double> last_local_;
    std::vector<double> last_reward_;
    std::vector<double> reward_since_learn_;
    std::vector<std::vector<double>> prev_state_;
    std::vector<int> prev_action_;
    bool has_prev_ = false;
    std::int64_t control_steps_ = 0;
    int episode_ = 0;
    std::function<void(const LearnEvent&)> learn_sink_;
    std::function<void(const StateActionEvent&)> state_sink_;
};

} // namespace tsc::marl

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "tsc/rng.hpp"

namespace tsc::tab {

struct MdpError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct OracleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Outcome {
    int next = 0;
    double prob = 0.0;
    double reward = 0.0;
};

struct Step {
    int next = 0;
    double reward = 0.0;
};

class FiniteMdp {
public:
    FiniteMdp(int states, int actions, double gamma);

    int states() const { return states_; }
    int actions() const { return actions_; }
    double gamma() const { return gamma_; }

    void add_outcome(int s, int a, int next, double prob, double reward);
    void set_terminal(int s, bool terminal = true);
    bool terminal(int s) const { return terminal_.at(static_cast<std::size_t>(s)) != 0; }
    void set_start_distribution(std::vector<double> p);

    const std::vector<Outcome>& outcomes(int s, int a) const;

    /// Throws MdpError unless every non-terminal (s,a) sums to 1.
    void validate() const;

    int sample_start(Rng& rng) const;
    Step sample(int s, int a, Rng& rng) const;

private:
    std::size_t index(int s, int a) const;

    int states_;
    int actions_;
    double gamma_;
    std::vector<std::vector<Outcome>> outcomes_;
    std::vector<char> terminal_;
    std::vector<double> start_;
};

class QTable {
public:
    QTable(int states, int actions, double init = 0.0);

    int states() const { return states_; }
    int actions() const { return actions_; }

    double& q(int s, int a) { return q_[index(s, a)]; }
    double q(int s, int a) const { return q_[index(s, a)]; }
    std::int64_t& visits(int s, int a) { return n_[index(s, a)]; }
    std::int64_t visits(int s, int a) const { return n_[index(s, a)]; }
    double& returns(int s, int a) { return returns_[index(s, a)]; }

    /// Empty for a pair that was never visited by an averaging estimator.
    std::optional<double> value(int s, int a) const;
    void mark_defined(int s, int a) { defined_[index(s, a)] = 1; }
    void mark_all_undefined() { std::fill(defined_.begin(), defined_.end(), 0); }

    /// Greedy action, lowest index on ties.
    int greedy(int s) const;
    double max_q(int s) const;
    std::vector<int> greedy_policy() const;
    double max_abs_diff(const QTable& other) const;

    const std::vector<double>& raw() const { return q_; }

private:
    std::size_t index(int s, int a) const;

    int states_;
    int actions_;
    std::vector<double> q_;
    std::vector<std::int64_t> n_;
    std::vector<double> returns_;
    std::vector<char> defined_;
};

/// Stochastic policy, pi[s][a].
using Policy = std::vector<std::vector<double>>;

enum class VisitMode { First, Every };

struct EpisodeStep {
    int state = 0;
    int action = 0;
    double reward = 0.0;
};

/// Rolls one episode from the start distribution. Stops at a terminal
/// state or after `max_steps`.
std::vector<EpisodeStep> generate_episode(const FiniteMdp& mdp, const std::function<int(int, Rng&)>& act,
                                          Rng& rng, int max_steps = 10000);

int epsilon_greedy(const QTable& q, int s, double eps, Rng& rng);

QTable mc_evaluate(const FiniteMdp& mdp, const Policy& policy, int episodes, VisitMode mode, Rng& rng);

struct ControlResult {
    std::vector<int> policy;
    QTable q;
};

ControlResult mc_control(const FiniteMdp& mdp, double eps, int iterations, int episodes, Rng& rng);

enum class StepSize { Constant, InverseVisits };

struct TdOptions {
    double alpha = 0.1;
    double eps = 0.1;
    StepSize step_size = StepSize::Constant; // InverseVisits: alpha = (1+N(s,a))^-step_exponent
    double step_exponent = 1.0;              // in (0.5, 1]
    bool greedy_prediction = false;          // SARSA only: bootstrap on argmax
    int max_steps = 10000;
};

/// Called after every update with the table state.
using TdObserver = std::function<void(const QTable&)>;

QTable sarsa(const FiniteMdp& mdp, const TdOptions& opt, int episodes, Rng& rng, const TdObserver& observe = {});
QTable q_learning(const FiniteMdp& mdp, const TdOptions& opt, int episodes, Rng& rng,
                  const TdObserver& observe = {});

struct ValueIterationResult {
    std::vector<double> v;
    QTable q;
    std::vector<int> policy;
    int iterations = 0;
};

ValueIterationResult value_iteration(const FiniteMdp& mdp, double tolerance, int max_iterations = 100000);

/// One state, two actions into a terminal state with the given rewards.
FiniteMdp bandit_mdp(double r0 = 0.0, double r1 = 1.0);
/// s0 -go-> s1 -go-> terminal with rewards (r0, r1); action 1 stays put with
/// reward 0. Starts in s0.
FiniteMdp chain_mdp(double gamma = 0.9, double r0 = 0.0, double r1 = 1.0);
/// rows x cols deterministic grid, actions N,S,W,E, walls keep the agent in
/// place, reward 1 on entering the goal (terminal, bottom-right corner).
/// Starts uniformly over the non-goal cells.
FiniteMdp gridworld_mdp(int rows = 4, int cols = 4, double gamma = 0.9);

} // namespace tsc::tab

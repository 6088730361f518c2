#include "tsc/marl.hpp"

#include <algorithm>

namespace tsc::marl {

std::string_view to_string(Scheme s) {
    switch (s) {
    case Scheme::Idql:
        return "idql";
    case Scheme::S2rl:
        return "s2rl";
    case Scheme::S2r2l:
        return "s2r2l";
    }
    return "unknown";
}

Scheme parse_scheme(std::string_view name) {
    if (name == "idql") {
        return Scheme::Idql;
    }
    if (name == "s2rl") {
        return Scheme::S2rl;
    }
    if (name == "s2r2l") {
        return Scheme::S2r2l;
    }
    throw std::invalid_argument("unknown MARL scheme '" + std::string(name) + "'");
}

std::vector<double> assemble_observation(const sim::DetectorReading& det, const signal::SignalController& ctrl) {
    std::vector<double> o;
    o.reserve(kObservationWidth);
    o.insert(o.end(), det.occupancy.begin(), det.occupancy.end());
    o.insert(o.end(), det.queue.begin(), det.queue.end());
    const auto h = ctrl.one_hot_stage();
    o.insert(o.end(), h.begin(), h.end());
    o.push_back(ctrl.elapsed_ratio());
    return o;
}

std::vector<double> assemble_shared_state(std::span<const double> own,
                                          const std::vector<std::vector<double>>& neighbors,
                                          std::size_t expected_neighbors) {
    if (neighbors.size() != expected_neighbors) {
        throw WiringError("expected " + std::to_string(expected_neighbors) + " neighbor observations, got " +
                          std::to_string(neighbors.size()));
    }
    std::vector<double> s(own.begin(), own.end());
    for (const auto& o : neighbors) {
        if (o.size() != own.size()) {
            throw WiringError("neighbor observation width differs from the own observation");
        }
        s.insert(s.end(), o.begin(), o.end());
    }
    return s;
}

double local_reward(double w_now, double w_prev, bool literal_sign) {
    const double d = w_now - w_prev;
    return literal_sign ? d : -d;
}

double shared_reward(double r_self, std::span<const double> neighbor_rewards, double n) {
    if (n < 0.0) {
        throw std::invalid_argument("self weight must be non-negative");
    }
    const double denom = n + static_cast<double>(neighbor_rewards.size());
    if (denom == 0.0) {
        throw std::invalid_argument("shared reward undefined with zero self weight and no neighbors");
    }
    double sum = n * r_self;
    for (double r : neighbor_rewards) {
        sum += r;
    }
    return sum / denom;
}

std::size_t state_width(Scheme scheme, const grid::RoadNetwork& net, int node) {
    if (scheme == Scheme::Idql) {
        return kObservationWidth;
    }
    return (net.neighbors(node).size() + 1) * kObservationWidth;
}

void AgentConfig::validate() const {
    dqn.validate();
    if (self_weight < 0.0) {
        throw std::invalid_argument("self weight must be non-negative");
    }
    if (learn_every <= 0) {
        throw std::invalid_argument("learn_every must be positive");
    }
    if (!(reward_scale > 0.0)) {
        throw std::invalid_argument("reward_scale must be positive");
    }
    if (hidden.empty() || dropout.size() != hidden.size()) {
        throw std::invalid_argument("need one dropout entry per hidden layer");
    }
}

MarlAgents::MarlAgents(const grid::RoadNetwork& net, AgentConfig config, std::uint64_t master_seed)
    : net_(net), config_(std::move(config)) {
    config_.validate();
    const std::size_t n = net_.nodes().size();
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> widths{marl::state_width(config_.scheme, net_, static_cast<int>(i))};
        widths.insert(widths.end(), config_.hidden.begin(), config_.hidden.end());
        widths.push_back(2);
        Rng init = make_stream(master_seed, "init", i);
        nn::Mlp mlp(widths, config_.dropout, init);
        learners_.emplace_back(std::move(mlp), config_.dqn, make_stream(master_seed, "dropout", i),
                               make_stream(master_seed, "per", i));
        windows_.emplace_back(config_.dqn.n_step, config_.dqn.gamma);
        explore_.push_back(make_stream(master_seed, "explore", i));
    }
    w_prev_.assign(n, 0.0);
    last_local_.assign(n, 0.0);
    last_reward_.assign(n, 0.0);
    reward_since_learn_.assign(n, 0.0);
    prev_state_.resize(n);
    prev_action_.assign(n, 0);
}

std::size_t MarlAgents::state_width(int node) const {
    return marl::state_width(config_.scheme, net_, node);
}

std::vector<std::vector<double>> MarlAgents::observe(const sim::Simulator& sim) const {
    std::vector<std::vector<double>> obs;
    obs.reserve(learners_.size());
    for (std::size_t i = 0; i < learners_.size(); ++i) {
        const int node = static_cast<int>(i);
        obs.push_back(assemble_observation(sim.read_detectors(node), sim.controller(node)));
    }
    return obs;
}

std::vector<std::vector<double>> MarlAgents::states(const std::vector<std::vector<double>>& obs) const {
    if (obs.size() != learners_.size()) {
        throw WiringError("observation count does not match agent count");
    }
    if (config_.scheme == Scheme::Idql) {
        return obs;
    }
    std::vector<std::vector<double>> out;
    out.reserve(obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i) {
        const auto& nb = net_.neighbors(static_cast<int>(i));
        std::vector<std::vector<double>> nobs;
        nobs.reserve(nb.size());
        for (int j : nb) {
            nobs.push_back(obs[static_cast<std::size_t>(j)]);
        }
        out.push_back(assemble_shared_state(obs[i], nobs, nb.size()));
    }
    return out;
}

void MarlAgents::track_waiting(const sim::Simulator& sim) {
    for (std::size_t i = 0; i < learners_.size(); ++i) {
        w_prev_[i] = sim.read_detectors(static_cast<int>(i)).interval_waiting_s;
    }
}

double MarlAgents::epsilon(int node) const {
    const auto& l = learner(node);
    std::int64_t t = l.learn_steps();
    if (config_.epsilon_clock == EpsilonClock::ControlSteps) {
        t = control_steps_;
    } else if (config_.epsilon_clock == EpsilonClock::Episodes) {
        t = episode_;
    }
    return dq::epsilon(t, config_.dqn.epsilon_decay, config_.dqn.epsilon_floor);
}

void MarlAgents::compute_rewards(const sim::Simulator& sim) {
    const std::size_t n = learners_.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double w = sim.read_detectors(static_cast<int>(i)).interval_waiting_s;
        last_local_[i] = local_reward(w, w_prev_[i], config_.literal_reward_sign);
        w_prev_[i] = w;
    }
    if (config_.scheme != Scheme::S2r2l) {
        last_reward_ = last_local_;
        return;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto& nb = net_.neighbors(static_cast<int>(i));
        std::vector<double> rn;
        rn.reserve(nb.size());
        for (int j : nb) {
            rn.push_back(last_local_[static_cast<std::size_t>(j)]);
        }
        last_reward_[i] = shared_reward(last_local_[i], rn, config_.self_weight);
    }
}

std::vector<int> MarlAgents::control_step(sim::Simulator& sim, bool learning) {
    const auto st = states(observe(sim));
    compute_rewards(sim);
    const std::size_t n = learners_.size();

    if (has_prev_ && learning) {
        for (std::size_t i = 0; i < n; ++i) {
            reward_since_learn_[i] += last_reward_[i];
            const double r = last_reward_[i] / config_.reward_scale;
            auto e = windows_[i].push({std::move(prev_state_[i]), prev_action_[i], r}, st[i]);
            if (e) {
                learners_[i].remember(std::move(*e));
            }
        }
    }

    std::vector<int> actions(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int node = static_cast<int>(i);
        const double eps = learning ? epsilon(node) : 0.0;
        actions[i] = dq::select_action(learners_[i].local(), st[i], eps, explore_[i]);
        sim.apply_decision(node, actions[i]);
        if (state_sink_) {
            state_sink_({node, sim.time_s(), &st[i], actions[i]});
        }
    }
    prev_state_ = st;
    prev_action_ = actions;
    has_prev_ = true;
    ++control_steps_;

    if (learning && control_steps_ % config_.learn_every == 0) {
        for (std::size_t i = 0; i < n; ++i) {
            const auto stats = learners_[i].learn();
            if (stats && learn_sink_) {
                learn_sink_({static_cast<int>(i), learners_[i].learn_steps(), stats->mean_abs_td,
                             epsilon(static_cast<int>(i)), reward_since_learn_[i]});
            }
            if (stats) {
                reward_since_learn_[i] = 0.0;
            }
        }
    }
    return actions;
}

void MarlAgents::end_episode(const sim::Simulator& sim, bool learning) {
    if (has_prev_ && learning) {
        const auto st = states(observe(sim));
        compute_rewards(sim);
        for (std::size_t i = 0; i < learners_.size(); ++i) {
            reward_since_learn_[i] += last_reward_[i];
            const double r = last_reward_[i] / config_.reward_scale;
            if (auto e = windows_[i].push({std::move(prev_state_[i]), prev_action_[i], r}, st[i])) {
                learners_[i].remember(std::move(*e));
            }
            for (auto& e : windows_[i].flush(st[i])) {
                learners_[i].remember(std::move(e));
            }
        }
    }
    for (auto& w : windows_) {
        w = dq::NStepWindow(config_.dqn.n_step, config_.dqn.gamma);
    }
    has_prev_ = false;
}

} // namespace tsc::marl

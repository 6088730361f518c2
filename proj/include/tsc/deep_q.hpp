#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "tsc/nn.hpp"
#include "tsc/rng.hpp"

namespace tsc::dq {

struct DqnConfig {
    std::size_t batch = 64;
    std::size_t n_step = 16;
    std::size_t target_sync = 100; // learn steps between target copies
    double gamma = 0.99;
    double learning_rate = 1e-4;
    double per_alpha = 1.0;
    double per_epsilon = 1e-6;
    std::size_t capacity = 100000;
    double epsilon_decay = 0.995;
    double epsilon_floor = 0.05;

    void validate() const;
};

/// max(decay^t, floor).
double epsilon(std::int64_t t, double decay = 0.995, double floor = 0.05);

struct Experience {
    std::vector<double> state;
    int action = 0;
    double reward = 0.0; // discounted sum over `steps` rewards
    std::vector<double> next_state;
    std::size_t steps = 1;
    bool done = false;
};

/// Binary sum tree over a fixed number of leaves. Internal sums are always
/// recomputed from their two children, so the root never drifts from the
/// sum of the leaves by more than rounding of a single pass.
class SumTree {
public:
    explicit SumTree(std::size_t capacity = 1);

    std::size_t capacity() const { return capacity_; }
    void set(std::size_t i, double value);
    double get(std::size_t i) const { return tree_.at(base_ + i); }
    double total() const { return tree_[1]; }
    /// Leaf whose cumulative interval contains u, for u in [0, total).
    /// Never returns a zero-valued leaf while total() > 0.
    std::size_t find(double u) const;

private:
    std::size_t capacity_;
    std::size_t base_;
    std::vector<double> tree_;
};

/// Proportional prioritized replay. Storage grows on demand up to capacity,
/// then the oldest entry is overwritten.
class ReplayMemory {
public:
    ReplayMemory(std::size_t capacity, double alpha, double priority_epsilon);

    std::size_t size() const { return data_.size(); }
    std::size_t capacity() const { return capacity_; }
    double alpha() const { return alpha_; }
    double max_priority() const { return max_priority_; }

    /// Stores with the current max priority. Returns the slot used.
    std::size_t push(Experience e);
    const Experience& at(std::size_t i) const { return data_.at(i); }

    /// Independent proportional draws; empty result when the memory is empty.
    std::vector<std::size_t> sample(std::size_t count, Rng& rng) const;
    /// Sets p_i = |td_error| + epsilon.
    void update_priority(std::size_t i, double td_error);
    double priority(std::size_t i) const { return priorities_.at(i); }
    double probability(std::size_t i) const;
    double tree_total() const { return tree_.total(); }

private:
    std::size_t capacity_;
    double alpha_;
    double epsilon_;
    double max_priority_ = 1.0;
    std::size_t next_ = 0;
    std::vector<Experience> data_;
    std::vector<double> priorities_;
    SumTree tree_;
};

struct OneStep {
    std::vector<double> state;
    int action = 0;
    double reward = 0.0;
};

/// Collapses a window of one-step records into an n-step experience. Throws
/// UsageError on an empty window.
Experience make_nstep(std::span<const OneStep> window, std::vector<double> bootstrap_state, double gamma,
                      bool done);

/// Sliding window that emits an n-step experience once n records are held.
class NStepWindow {
public:
    NStepWindow(std::size_t n, double gamma);

    std::optional<Experience> push(OneStep step, const std::vector<double>& next_state);
    /// Emits every remaining record as terminal and clears the window.
    std::vector<Experience> flush(const std::vector<double>& final_state);
    std::size_t size() const { return window_.size(); }

private:
    std::size_t n_;
    double gamma_;
    std::deque<OneStep> window_;
};

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> v);

int select_action(const nn::Mlp& net, std::span<const double> state, double eps, Rng& rng);

/// y = R or y = R + gamma^m q_target(s', argmax_a q_local(s', a)), eval-mode.
double double_dqn_target(const nn::Mlp& local, const nn::Mlp& target, const Experience& e, double gamma);

struct LearnStats {
    double mean_abs_td = 0.0;
    double loss = 0.0; // sum of 0.5 td^2 over the batch
    bool target_synced = false;
};

/// One agent's learner: local and target nets, replay memory and RNG
/// streams for dropout and replay sampling.
class DqnLearner {
public:
    DqnLearner(nn::Mlp net, DqnConfig config, Rng dropout_rng, Rng per_rng);

    const DqnConfig& config() const { return config_; }
    const nn::Mlp& local() const { return local_; }
    nn::Mlp& local() { return local_; }
    const nn::Mlp& target() const { return target_; }
    ReplayMemory& memory() { return memory_; }
    const ReplayMemory& memory() const { return memory_; }
    std::int64_t learn_steps() const { return learn_steps_; }
    double epsilon() const { return dq::epsilon(learn_steps_, config_.epsilon_decay, config_.epsilon_floor); }

    void remember(Experience e) { memory_.push(std::move(e)); }

    /// One batch update. Empty when the memory holds fewer than `batch`
    /// experiences.
    std::optional<LearnStats> learn();

    /// Replaces both nets, e.g. after loading a checkpoint.
    void load(const nn::Mlp& net);

private:
    DqnConfig config_;
    nn::Mlp local_;
    nn::Mlp target_;
    ReplayMemory memory_;
    Rng dropout_rng_;
    Rng per_rng_;
    std::int64_t learn_steps_ = 0;
    nn::Gradients grads_;
};

} // namespace tsc::dq

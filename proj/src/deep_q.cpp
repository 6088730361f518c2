#include "tsc/deep_q.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tsc::dq {

void DqnConfig::validate() const {
    if (batch == 0 || n_step == 0 || target_sync == 0 || capacity == 0) {
        throw std::invalid_argument("batch, n_step, target_sync and capacity must be positive");
    }
    if (!(gamma > 0.0 && gamma <= 1.0)) {
        throw std::invalid_argument("gamma must lie in (0, 1]");
    }
    if (!(learning_rate > 0.0)) {
        throw std::invalid_argument("learning rate must be positive");
    }
    if (per_alpha < 0.0 || !(per_epsilon > 0.0)) {
        throw std::invalid_argument("PER alpha must be >= 0 and PER epsilon > 0");
    }
    if (!(epsilon_decay > 0.0 && epsilon_decay <= 1.0) || epsilon_floor < 0.0 || epsilon_floor > 1.0) {
        throw std::invalid_argument("epsilon schedule out of range");
    }
}

double epsilon(std::int64_t t, double decay, double floor) {
    if (t < 0) {
        throw std::invalid_argument("epsilon step counter must be non-negative");
    }
    return std::max(std::pow(decay, static_cast<double>(t)), floor);
}

SumTree::SumTree(std::size_t capacity) : capacity_(capacity), base_(1) {
    if (capacity == 0) {
        throw std::invalid_argument("sum tree capacity must be positive");
    }
    while (base_ < capacity_) {
        base_ <<= 1;
    }
    tree_.assign(2 * base_, 0.0);
}

void SumTree::set(std::size_t i, double value) {
    if (i >= capacity_) {
        throw std::out_of_range("sum tree index " + std::to_string(i));
    }
    if (!(value >= 0.0) || !std::isfinite(value)) {
        throw std::invalid_argument("sum tree values must be finite and non-negative");
    }
    std::size_t k = base_ + i;
    tree_[k] = value;
    for (k >>= 1; k >= 1; k >>= 1) {
        tree_[k] = tree_[2 * k] + tree_[2 * k + 1];
    }
}

std::size_t SumTree::find(double u) const {
    std::size_t k = 1;
    while (k < base_) {
        const double left = tree_[2 * k];
        const double right = tree_[2 * k + 1];
        if (u < left || right <= 0.0) {
            k = 2 * k;
        } else {
            u -= left;
            k = 2 * k + 1;
        }
    }
    return std::min(k - base_, capacity_ - 1);
}

ReplayMemory::ReplayMemory(std::size_t capacity, double alpha, double priority_epsilon)
    : capacity_(capacity), alpha_(alpha), epsilon_(priority_epsilon), tree_(capacity) {
    if (alpha < 0.0 || !(priority_epsilon > 0.0)) {
        throw std::invalid_argument("PER alpha must be >= 0 and epsilon > 0");
    }
}

std::size_t ReplayMemory::push(Experience e) {
    std::size_t slot;
    if (data_.size() < capacity_) {
        slot = data_.size();
        data_.push_back(std::move(e));
        priorities_.push_back(max_priority_);
    } else {
        slot = next_;
        data_[slot] = std::move(e);
        priorities_[slot] = max_priority_;
    }
    next_ = (slot + 1) % capacity_;
    tree_.set(slot, std::pow(max_priority_, alpha_));
    return slot;
}

std::vector<std::size_t> ReplayMemory::sample(std::size_t count, Rng& rng) const {
    std::vector<std::size_t> out;
    if (data_.empty()) {
        return out;
    }
    out.reserve(count);
    const double total = tree_.total();
    for (std::size_t k = 0; k < count; ++k) {
        out.push_back(tree_.find(uniform01(rng) * total));
    }
    return out;
}

void ReplayMemory::update_priority(std::size_t i, double td_error) {
    if (i >= data_.size()) {
        throw std::out_of_range("replay index " + std::to_string(i));
    }
    const double p = std::abs(td_error) + epsilon_;
    priorities_[i] = p;
    max_priority_ = std::max(max_priority_, p);
    tree_.set(i, std::pow(p, alpha_));
}

double ReplayMemory::probability(std::size_t i) const {
    return tree_.get(i) / tree_.total();
}

Experience make_nstep(std::span<const OneStep> window, std::vector<double> bootstrap_state, double gamma,
                      bool done) {
    if (window.empty()) {
        throw nn::UsageError("n-step window is empty");
    }
    Experience e;
    e.state = window.front().state;
    e.action = window.front().action;
    double g = 1.0;
    for (const OneStep& s : window) {
        e.reward += g * s.reward;
        g *= gamma;
    }
    e.next_state = std::move(bootstrap_state);
    e.steps = window.size();
    e.done = done;
    return e;
}

NStepWindow::NStepWindow(std::size_t n, double gamma) : n_(n), gamma_(gamma) {
    if (n == 0) {
        throw std::invalid_argument("n-step window length must be positive");
    }
}

std::optional<Experience> NStepWindow::push(OneStep step, const std::vector<double>& next_state) {
    window_.push_back(std::move(step));
    if (window_.size() < n_) {
        return std::nullopt;
    }
    std::vector<OneStep> w(window_.begin(), window_.end());
    window_.pop_front();
    return make_nstep(w, next_state, gamma_, false);
}

std::vector<Experience> NStepWindow::flush(const std::vector<double>& final_state) {
    std::vector<Experience> out;
    while (!window_.empty()) {
        std::vector<OneStep> w(window_.begin(), window_.end());
        out.push_back(make_nstep(w, final_state, gamma_, true));
        window_.pop_front();
    }
    return out;
}

std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) {
            best = i;
        }
    }
    return best;
}

int select_action(const nn::Mlp& net, std::span<const double> state, double eps, Rng& rng) {
    if (uniform01(rng) < eps) {
        return static_cast<int>(uniform_index(rng, net.output_size()));
    }
    const auto q = net.forward(state);
    return static_cast<int>(argmax(q));
}

double double_dqn_target(const nn::Mlp& local, const nn::Mlp& target, const Experience& e, double gamma) {
    if (e.done) {
        return e.reward;
    }
    const auto q_local = local.forward(e.next_state);
    const auto q_target = target.forward(e.next_state);
    const std::size_t a = argmax(q_local);
    return e.reward + std::pow(gamma, static_cast<double>(e.steps)) * q_target[a];
}

DqnLearner::DqnLearner(nn::Mlp net, DqnConfig config, Rng dropout_rng, Rng per_rng)
    : config_(config),
      local_(std::move(net)),
      target_(local_),
      memory_(config.capacity, config.per_alpha, config.per_epsilon),
      dropout_rng_(dropout_rng),
      per_rng_(per_rng) {
    config_.validate();
    grads_ = local_.make_gradients();
}

void DqnLearner::load(const nn::Mlp& net) {
    if (!net.same_shape(local_)) {
        throw nn::ShapeError("checkpoint shape does not match the learner");
    }
    local_ = net;
    target_ = net;
}

std::optional<LearnStats> DqnLearner::learn() {
    if (memory_.size() < config_.batch) {
        return std::nullopt;
    }
    const auto idx = memory_.sample(config_.batch, per_rng_);

    // Targets use the parameters from before this update.
    std::vector<double> targets(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        targets[k] = double_dqn_target(local_, target_, memory_.at(idx[k]), config_.gamma);
    }

    grads_.zero();
    LearnStats stats;
    std::vector<double> td(idx.size());
    std::vector<double> dout(local_.output_size(), 0.0);
    nn::ForwardCache cache;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const Experience& e = memory_.at(idx[k]);
        const auto q = local_.forward_train(e.state, dropout_rng_, cache);
        const double delta = q.at(static_cast<std::size_t>(e.action)) - targets[k];
        td[k] = delta;
        std::fill(dout.begin(), dout.end(), 0.0);
        dout[static_cast<std::size_t>(e.action)] = delta;
        local_.backward(cache, dout, grads_);
        stats.loss += 0.5 * delta * delta;
        stats.mean_abs_td += std::abs(delta);
    }
    local_.sgd_step(grads_, config_.learning_rate);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        memory_.update_priority(idx[k], td[k]);
    }
    stats.mean_abs_td /= static_cast<double>(idx.size());

    ++learn_steps_;
    if (learn_steps_ % static_cast<std::int64_t>(config_.target_sync) == 0) {
        local_.copy_into(target_);
        stats.target_synced = true;
    }
    return stats;
}

} // namespace tsc::dq

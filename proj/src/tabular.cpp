#include "tsc/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace tsc::tab {

FiniteMdp::FiniteMdp(int states, int actions, double gamma) : states_(states), actions_(actions), gamma_(gamma) {
    if (states <= 0 || actions <= 0) {
        throw MdpError("an MDP needs at least one state and one action");
    }
    if (!(gamma > 0.0 && gamma <= 1.0)) {
        throw MdpError("gamma must lie in (0, 1]");
    }
    outcomes_.resize(static_cast<std::size_t>(states) * static_cast<std::size_t>(actions));
    terminal_.assign(static_cast<std::size_t>(states), 0);
    start_.assign(static_cast<std::size_t>(states), 0.0);
    start_[0] = 1.0;
}

std::size_t FiniteMdp::index(int s, int a) const {
    if (s < 0 || s >= states_ || a < 0 || a >= actions_) {
        throw MdpError("state/action out of range");
    }
    return static_cast<std::size_t>(s) * static_cast<std::size_t>(actions_) + static_cast<std::size_t>(a);
}

void FiniteMdp::add_outcome(int s, int a, int next, double prob, double reward) {
    if (next < 0 || next >= states_) {
        throw MdpError("next state out of range");
    }
    if (!(prob > 0.0 && prob <= 1.0) || !std::isfinite(reward)) {
        throw MdpError("outcome probability must lie in (0, 1] and reward be finite");
    }
    outcomes_[index(s, a)].push_back({next, prob, reward});
}

void FiniteMdp::set_terminal(int s, bool terminal) {
    terminal_.at(static_cast<std::size_t>(s)) = terminal ? 1 : 0;
}

void FiniteMdp::set_start_distribution(std::vector<double> p) {
    if (p.size() != static_cast<std::size_t>(states_)) {
        throw MdpError("start distribution size mismatch");
    }
    double sum = 0.0;
    for (double x : p) {
        if (x < 0.0) {
            throw MdpError("negative start probability");
        }
        sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw MdpError("start distribution must sum to 1");
    }
    start_ = std::move(p);
}

const std::vector<Outcome>& FiniteMdp::outcomes(int s, int a) const {
    return outcomes_[index(s, a)];
}

void FiniteMdp::validate() const {
    for (int s = 0; s < states_; ++s) {
        if (terminal(s)) {
            continue;
        }
        for (int a = 0; a < actions_; ++a) {
            double sum = 0.0;
            for (const Outcome& o : outcomes(s, a)) {
                sum += o.prob;
            }
            if (std::abs(sum - 1.0) > 1e-9) {
                throw MdpError("transition probabilities of (" + std::to_string(s) + "," + std::to_string(a) +
                               ") sum to " + std::to_string(sum));
            }
        }
    }
}

namespace {

int draw_categorical(const std::vector<double>& p, Rng& rng) {
    const double u = uniform01(rng);
    double acc = 0.0;
    int last = -1;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) {
            continue;
        }
        acc += p[i];
        last = static_cast<int>(i);
        if (u < acc) {
            return last;
        }
    }
    return last;
}

} // namespace

int FiniteMdp::sample_start(Rng& rng) const {
    return draw_categorical(start_, rng);
}

Step FiniteMdp::sample(int s, int a, Rng& rng) const {
    const auto& out = outcomes(s, a);
    if (out.empty()) {
        throw MdpError("no outcomes for (" + std::to_string(s) + "," + std::to_string(a) + ")");
    }
    if (out.size() == 1) {
        return {out[0].next, out[0].reward};
    }
    const double u = uniform01(rng);
    double acc = 0.0;
    for (const Outcome& o : out) {
        acc += o.prob;
        if (u < acc) {
            return {o.next, o.reward};
        }
    }
    return {out.back().next, out.back().reward};
}

QTable::QTable(int states, int actions, double init) : states_(states), actions_(actions) {
    const auto n = static_cast<std::size_t>(states) * static_cast<std::size_t>(actions);
    q_.assign(n, init);
    n_.assign(n, 0);
    returns_.assign(n, 0.0);
    defined_.assign(n, 1);
}

std::size_t QTable::index(int s, int a) const {
    return static_cast<std::size_t>(s) * static_cast<std::size_t>(actions_) + static_cast<std::size_t>(a);
}

std::optional<double> QTable::value(int s, int a) const {
    if (!defined_[index(s, a)]) {
        return std::nullopt;
    }
    return q_[index(s, a)];
}

int QTable::greedy(int s) const {
    int best = 0;
    for (int a = 1; a < actions_; ++a) {
        if (q(s, a) > q(s, best)) {
            best = a;
        }
    }
    return best;
}

double QTable::max_q(int s) const {
    return q(s, greedy(s));
}

std::vector<int> QTable::greedy_policy() const {
    std::vector<int> p(static_cast<std::size_t>(states_));
    for (int s = 0; s < states_; ++s) {
        p[static_cast<std::size_t>(s)] = greedy(s);
    }
    return p;
}

double QTable::max_abs_diff(const QTable& other) const {
    if (other.q_.size() != q_.size()) {
        throw MdpError("Q tables differ in shape");
    }
    double m = 0.0;
    for (std::size_t i = 0; i < q_.size(); ++i) {
        m = std::max(m, std::abs(q_[i] - other.q_[i]));
    }
    return m;
}

std::vector<EpisodeStep> generate_episode(const FiniteMdp& mdp, const std::function<int(int, Rng&)>& act,
                                          Rng& rng, int max_steps) {
    std::vector<EpisodeStep> ep;
    int s = mdp.sample_start(rng);
    for (int t = 0; t < max_steps && !mdp.terminal(s); ++t) {
        const int a = act(s, rng);
        const Step st = mdp.sample(s, a, rng);
        ep.push_back({s, a, st.reward});
        s = st.next;
    }
    return ep;
}

int epsilon_greedy(const QTable& q, int s, double eps, Rng& rng) {
    if (uniform01(rng) < eps) {
        return static_cast<int>(uniform_index(rng, static_cast<std::size_t>(q.actions())));
    }
    return q.greedy(s);
}

namespace {

// Backward pass over an episode: adds G_t to Returns(s,a) for every
// qualifying visit and recomputes the running average.
void accumulate_returns(const std::vector<EpisodeStep>& ep, double gamma, VisitMode mode, QTable& q) {
    std::vector<double> g(ep.size());
    double acc = 0.0;
    for (std::size_t t = ep.size(); t-- > 0;) {
        acc = ep[t].reward + gamma * acc;
        g[t] = acc;
    }
    std::vector<char> seen(static_cast<std::size_t>(q.states()) * static_cast<std::size_t>(q.actions()), 0);
    for (std::size_t t = 0; t < ep.size(); ++t) {
        const int s = ep[t].state;
        const int a = ep[t].action;
        auto& flag = seen[static_cast<std::size_t>(s) * static_cast<std::size_t>(q.actions()) +
                          static_cast<std::size_t>(a)];
        if (mode == VisitMode::First && flag) {
            continue;
        }
        flag = 1;
        q.returns(s, a) += g[t];
        q.visits(s, a) += 1;
        q.q(s, a) = q.returns(s, a) / static_cast<double>(q.visits(s, a));
        q.mark_defined(s, a);
    }
}

} // namespace

QTable mc_evaluate(const FiniteMdp& mdp, const Policy& policy, int episodes, VisitMode mode, Rng& rng) {
    if (policy.size() != static_cast<std::size_t>(mdp.states())) {
        throw MdpError("policy size does not match the MDP");
    }
    QTable q(mdp.states(), mdp.actions(), std::numeric_limits<double>::quiet_NaN());
    q.mark_all_undefined();
    auto act = [&](int s, Rng& r) { return draw_categorical(policy[static_cast<std::size_t>(s)], r); };
    for (int e = 0; e < episodes; ++e) {
        accumulate_returns(generate_episode(mdp, act, rng), mdp.gamma(), mode, q);
    }
    return q;
}

ControlResult mc_control(const FiniteMdp& mdp, double eps, int iterations, int episodes, Rng& rng) {
    if (!(eps >= 0.0 && eps < 1.0)) {
        throw MdpError("epsilon must lie in [0, 1)");
    }
    QTable q(mdp.states(), mdp.actions(), 0.0);
    std::vector<int> policy(static_cast<std::size_t>(mdp.states()), 0);
    for (int it = 0; it < iterations; ++it) {
        auto act = [&](int s, Rng& r) {
            if (uniform01(r) < eps) {
                return static_cast<int>(uniform_index(r, static_cast<std::size_t>(mdp.actions())));
            }
            return policy[static_cast<std::size_t>(s)];
        };
        for (int e = 0; e < episodes; ++e) {
            accumulate_returns(generate_episode(mdp, act, rng), mdp.gamma(), VisitMode::First, q);
        }
        policy = q.greedy_policy();
    }
    return {std::move(policy), std::move(q)};
}

namespace {

double step_size(const TdOptions& opt, const QTable& q, int s, int a) {
    if (opt.step_size == StepSize::InverseVisits) {
        return std::pow(1.0 + static_cast<double>(q.visits(s, a)), -opt.step_exponent);
    }
    return opt.alpha;
}

void check_td(const TdOptions& opt) {
    if (!(opt.alpha >= 0.0 && opt.alpha <= 1.0)) {
        throw MdpError("alpha must lie in [0, 1]");
    }
    if (!(opt.step_exponent > 0.5 && opt.step_exponent <= 1.0)) {
        throw MdpError("step exponent must lie in (0.5, 1]");
    }
    if (!(opt.eps >= 0.0 && opt.eps <= 1.0)) {
        throw MdpError("epsilon must lie in [0, 1]");
    }
}

} // namespace

QTable sarsa(const FiniteMdp& mdp, const TdOptions& opt, int episodes, Rng& rng, const TdObserver& observe) {
    check_td(opt);
    QTable q(mdp.states(), mdp.actions(), 0.0);
    const double gamma = mdp.gamma();
    for (int e = 0; e < episodes; ++e) {
        int s = mdp.sample_start(rng);
        if (mdp.terminal(s)) {
            continue;
        }
        int a = epsilon_greedy(q, s, opt.eps, rng);
        for (int t = 0; t < opt.max_steps; ++t) {
            const Step st = mdp.sample(s, a, rng);
            const bool end = mdp.terminal(st.next);
            const double alpha = step_size(opt, q, s, a);
            if (opt.greedy_prediction) {
                const double target = end ? st.reward : st.reward + gamma * q.max_q(st.next);
                q.q(s, a) += alpha * (target - q.q(s, a));
                q.visits(s, a) += 1;
                if (observe) {
                    observe(q);
                }
                if (end) {
                    break;
                }
                a = epsilon_greedy(q, st.next, opt.eps, rng);
            } else {
                int next_a = 0;
                if (!end) {
                    next_a = epsilon_greedy(q, st.next, opt.eps, rng);
                }
                const double target = end ? st.reward : st.reward + gamma * q.q(st.next, next_a);
                q.q(s, a) += alpha * (target - q.q(s, a));
                q.visits(s, a) += 1;
                if (observe) {
                    observe(q);
                }
                if (end) {
                    break;
                }
                a = next_a;
            }
            s = st.next;
        }
    }
    return q;
}

QTable q_learning(const FiniteMdp& mdp, const TdOptions& opt, int episodes, Rng& rng, const TdObserver& observe) {
    check_td(opt);
    QTable q(mdp.states(), mdp.actions(), 0.0);
    const double gamma = mdp.gamma();
    for (int e = 0; e < episodes; ++e) {
        int s = mdp.sample_start(rng);
        for (int t = 0; t < opt.max_steps && !mdp.terminal(s); ++t) {
            const int a = epsilon_greedy(q, s, opt.eps, rng);
            const Step st = mdp.sample(s, a, rng);
            const double alpha = step_size(opt, q, s, a);
            const double target = mdp.terminal(st.next) ? st.reward : st.reward + gamma * q.max_q(st.next);
            q.q(s, a) += alpha * (target - q.q(s, a));
            q.visits(s, a) += 1;
            if (observe) {
                observe(q);
            }
            s = st.next;
        }
    }
    return q;
}

ValueIterationResult value_iteration(const FiniteMdp& mdp, double tolerance, int max_iterations) {
    mdp.validate();
    if (!(tolerance > 0.0)) {
        throw OracleError("tolerance must be positive");
    }
    const int S = mdp.states();
    const int A = mdp.actions();
    std::vector<double> v(static_cast<std::size_t>(S), 0.0);
    QTable q(S, A, 0.0);
    auto backup = [&](int s, int a) {
        double x = 0.0;
        for (const Outcome& o : mdp.outcomes(s, a)) {
            const double cont = mdp.terminal(o.next) ? 0.0 : v[static_cast<std::size_t>(o.next)];
            x += o.prob * (o.reward + mdp.gamma() * cont);
        }
        return x;
    };
    for (int it = 1; it <= max_iterations; ++it) {
        double delta = 0.0;
        std::vector<double> nv(v.size(), 0.0);
        for (int s = 0; s < S; ++s) {
            if (mdp.terminal(s)) {
                continue;
            }
            double best = -std::numeric_limits<double>::infinity();
            for (int a = 0; a < A; ++a) {
                best = std::max(best, backup(s, a));
            }
            nv[static_cast<std::size_t>(s)] = best;
            delta = std::max(delta, std::abs(best - v[static_cast<std::size_t>(s)]));
        }
        v = std::move(nv);
        if (delta < tolerance) {
            for (int s = 0; s < S; ++s) {
                for (int a = 0; a < A; ++a) {
                    q.q(s, a) = mdp.terminal(s) ? 0.0 : backup(s, a);
                }
            }
            return {v, q, q.greedy_policy(), it};
        }
    }
    throw OracleError("value iteration did not converge within " + std::to_string(max_iterations) + " sweeps");
}

FiniteMdp bandit_mdp(double r0, double r1) {
    FiniteMdp m(2, 2, 1.0);
    m.add_outcome(0, 0, 1, 1.0, r0);
    m.add_outcome(0, 1, 1, 1.0, r1);
    m.set_terminal(1);
    return m;
}

FiniteMdp chain_mdp(double gamma, double r0, double r1) {
    FiniteMdp m(3, 2, gamma);
    m.add_outcome(0, 0, 1, 1.0, r0);
    m.add_outcome(0, 1, 0, 1.0, 0.0);
    m.add_outcome(1, 0, 2, 1.0, r1);
    m.add_outcome(1, 1, 1, 1.0, 0.0);
    m.set_terminal(2);
    return m;
}

FiniteMdp gridworld_mdp(int rows, int cols, double gamma) {
    if (rows < 1 || cols < 1 || rows * cols < 2) {
        throw MdpError("gridworld needs at least two cells");
    }
    const int n = rows * cols;
    const int goal = n - 1;
    FiniteMdp m(n, 4, gamma);
    const int dr[4] = {-1, 1, 0, 0};
    const int dc[4] = {0, 0, -1, 1};
    for (int s = 0; s < n; ++s) {
        if (s == goal) {
            continue;
        }
        const int r = s / cols;
        const int c = s % cols;
        for (int a = 0; a < 4; ++a) {
            const int nr = r + dr[a];
            const int nc = c + dc[a];
            const int next = (nr < 0 || nr >= rows || nc < 0 || nc >= cols) ? s : nr * cols + nc;
            m.add_outcome(s, a, next, 1.0, next == goal ? 1.0 : 0.0);
        }
    }
    m.set_terminal(goal);
    std::vector<double> start(static_cast<std::size_t>(n), 1.0 / (n - 1));
    start[static_cast<std::size_t>(goal)] = 0.0;
    m.set_start_distribution(std::move(start));
    return m;
}

} // namespace tsc::tab

#include "tsc/max_pressure.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tsc::mp {

double movement_weight(const MovementState& m) {
    if (m.downstream_queues.size() != m.splits.size()) {
        throw std::invalid_argument("downstream queues and splits differ in length");
    }
    double down = 0.0;
    for (std::size_t n = 0; n < m.splits.size(); ++n) {
        down += m.splits[n] * m.downstream_queues[n];
    }
    return m.queue - down;
}

double stage_pressure(std::span<const MovementState> movements) {
    double g = 0.0;
    for (const MovementState& m : movements) {
        g += movement_weight(m) * m.saturation;
    }
    return g;
}

bool pressure_tie(double a, double b, double rel_tol) {
    return std::abs(a - b) <= rel_tol * std::max({1.0, std::abs(a), std::abs(b)});
}

int select_stage(std::span<const double> pressures, int current_stage, double rel_tol) {
    if (pressures.empty()) {
        throw std::invalid_argument("no stages to select from");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < pressures.size(); ++i) {
        if (pressures[i] > pressures[best] && !pressure_tie(pressures[i], pressures[best], rel_tol)) {
            best = i;
        }
    }
    if (current_stage >= 0 && static_cast<std::size_t>(current_stage) < pressures.size() &&
        pressure_tie(pressures[static_cast<std::size_t>(current_stage)], pressures[best], rel_tol)) {
        return current_stage;
    }
    return static_cast<int>(best);
}

int lqf_select(std::span<const double> approach_queues, int current_stage) {
    if (approach_queues.size() != 2) {
        throw std::invalid_argument("LQF compares exactly two approaches");
    }
    if (approach_queues[0] == approach_queues[1]) {
        return current_stage;
    }
    return approach_queues[0] > approach_queues[1] ? 0 : 1;
}

std::array<MovementState, 4> node_movements(const sim::Simulator& sim, int node, double saturation) {
    const auto& net = sim.network();
    std::array<MovementState, 4> out;
    const auto lanes = net.entrance_lanes(node);
    for (std::size_t k = 0; k < lanes.size(); ++k) {
        MovementState& ms = out[k];
        ms.saturation = saturation;
        const auto& q = sim.lane(lanes[k].link, lanes[k].lane);
        const int down = net.next_link(lanes[k].link, static_cast<grid::Movement>(lanes[k].lane));
        const grid::Link& dl = net.link(down);
        const int n_out = dl.is_exit() ? 1 : 2;
        ms.downstream_queues.assign(static_cast<std::size_t>(n_out), 0.0);
        for (int n = 0; n < n_out; ++n) {
            for (const sim::Vehicle& v : sim.lane(down, n)) {
                ms.downstream_queues[static_cast<std::size_t>(n)] += v.halting() ? 1.0 : 0.0;
            }
        }
        // Exit stubs drain freely; their queue term stays zero.
        if (dl.is_exit()) {
            ms.downstream_queues[0] = 0.0;
        }

        std::vector<double> counts(static_cast<std::size_t>(n_out), 0.0);
        double queued = 0.0;
        for (const sim::Vehicle& v : q) {
            if (!v.halting()) {
                continue;
            }
            queued += 1.0;
            if (dl.is_exit()) {
                counts[0] += 1.0;
                continue;
            }
            const std::size_t pos = v.route_pos + 2;
            if (pos < v.route.links.size()) {
                const auto m = net.movement_between(down, v.route.links[pos]);
                counts[static_cast<std::size_t>(m ? static_cast<int>(*m) : 0)] += 1.0;
            }
        }
        ms.queue = queued;
        double total = 0.0;
        for (double c : counts) {
            total += c;
        }
        ms.splits.resize(counts.size());
        for (std::size_t n = 0; n < counts.size(); ++n) {
            ms.splits[n] = total > 0.0 ? counts[n] / total : 1.0 / static_cast<double>(counts.size());
        }
    }
    return out;
}

std::array<double, 2> node_pressures(const sim::Simulator& sim, int node, double saturation) {
    const auto mv = node_movements(sim, node, saturation);
    return {stage_pressure(std::span<const MovementState>(mv.data(), 2)),
            stage_pressure(std::span<const MovementState>(mv.data() + 2, 2))};
}

int MaxPressureController::choose(const sim::Simulator& sim, int node) const {
    const auto p = node_pressures(sim, node, saturation_);
    return select_stage(p, sim.controller(node).active_stage());
}

std::vector<int> MaxPressureController::choose_all(const sim::Simulator& sim) const {
    std::vector<int> out;
    out.reserve(sim.network().nodes().size());
    for (std::size_t n = 0; n < sim.network().nodes().size(); ++n) {
        out.push_back(choose(sim, static_cast<int>(n)));
    }
    return out;
}

} // namespace tsc::mp

#pragma once

#include <array>
#include <span>
#include <vector>

#include "tsc/microsim.hpp"

namespace tsc::mp {

inline constexpr double kDefaultSaturationFlow = 0.5; // veh/s/lane

/// Queue state of one movement (l, m): its own queue plus the queues and
/// split proportions of the movements leaving its downstream link.
struct MovementState {
    double queue = 0.0;
    std::vector<double> downstream_queues;
    std::vector<double> splits;
    double saturation = kDefaultSaturationFlow;
};

/// w = q_lm - sum_n p_mn q_mn. Throws std::invalid_argument on size mismatch.
double movement_weight(const MovementState& m);

/// gamma = sum over the stage's movements of w * s.
double stage_pressure(std::span<const MovementState> movements);

/// Ties within `rel_tol` keep the current stage.
bool pressure_tie(double a, double b, double rel_tol = 1e-9);

/// Argmax over stage pressures; on a tie with the current stage the current
/// stage is kept, otherwise the lowest index wins.
int select_stage(std::span<const double> pressures, int current_stage, double rel_tol = 1e-9);

/// Approach with the larger summed queue; ties hold the current stage.
int lqf_select(std::span<const double> approach_queues, int current_stage);

/// Movement states of a grid node, entrance lanes in order west-through,
/// west-turn, north-through, north-turn. Queues are halting vehicles; splits
/// come from the routes of the vehicles queued on each movement, uniform when
/// none are queued.
std::array<MovementState, 4> node_movements(const sim::Simulator& sim, int node,
                                            double saturation = kDefaultSaturationFlow);

/// Stage pressures (stage 0 = west approach, stage 1 = north approach).
std::array<double, 2> node_pressures(const sim::Simulator& sim, int node, double saturation = kDefaultSaturationFlow);

/// Per-node stage requests for the whole grid.
class MaxPressureController {
public:
    explicit MaxPressureController(double saturation = kDefaultSaturationFlow) : saturation_(saturation) {}

    int choose(const sim::Simulator& sim, int node) const;
    std::vector<int> choose_all(const sim::Simulator& sim) const;

private:
    double saturation_;
};

} // namespace tsc::mp

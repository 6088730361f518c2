#include <doctest.h>

#include "tsc/max_pressure.hpp"

using namespace tsc;
using namespace tsc::mp;

namespace {

MovementState movement(double q, std::vector<double> down, std::vector<double> splits, double s = 0.5) {
    MovementState m;
    m.queue = q;
    m.downstream_queues = std::move(down);
    m.splits = std::move(splits);
    m.saturation = s;
    return m;
}

// Grid intersection: the west approach feeds east (through) and south (turn),
// the north approach feeds south (through) and east (turn).
std::array<double, 2> grid_pressures(const std::array<double, 4>& q, double east_down, double south_down,
                                     double s) {
    const std::array<MovementState, 2> west{movement(q[0], {east_down}, {1.0}, s),
                                            movement(q[1], {south_down}, {1.0}, s)};
    const std::array<MovementState, 2> north{movement(q[2], {south_down}, {1.0}, s),
                                             movement(q[3], {east_down}, {1.0}, s)};
    return {stage_pressure(west), stage_pressure(north)};
}

} // namespace

TEST_CASE("movement weights") {
    CHECK(movement_weight(movement(5, {2, 4}, {0.5, 0.5})) == 2.0);
    CHECK(movement_weight(movement(0, {0, 0}, {0.5, 0.5})) == 0.0);
    CHECK(movement_weight(movement(0, {3, 1}, {0.5, 0.5})) < 0.0);
    CHECK_THROWS_AS(movement_weight(movement(1, {1}, {0.5, 0.5})), std::invalid_argument);
}

TEST_CASE("stage pressure") {
    const std::array<MovementState, 2> st{movement(2, {}, {}), movement(1, {}, {})};
    CHECK(stage_pressure(st) == doctest::Approx(1.5));
    const std::array<MovementState, 2> zero{movement(0, {0}, {1}), movement(0, {0}, {1})};
    CHECK(stage_pressure(zero) == 0.0);
}

TEST_CASE("doubling saturation flows doubles pressure and keeps the argmax") {
    Rng rng(1);
    for (int k = 0; k < 200; ++k) {
        std::array<double, 4> q;
        for (double& v : q) v = static_cast<double>(uniform_index(rng, 11));
        const double e = static_cast<double>(uniform_index(rng, 6));
        const double s = static_cast<double>(uniform_index(rng, 6));
        const auto p1 = grid_pressures(q, e, s, 0.5);
        const auto p2 = grid_pressures(q, e, s, 1.0);
        CHECK(p2[0] == doctest::Approx(2 * p1[0]));
        CHECK(p2[1] == doctest::Approx(2 * p1[1]));
        CHECK(select_stage(p1, 0) == select_stage(p2, 0));
    }
}

TEST_CASE("stage selection") {
    CHECK(select_stage(std::vector<double>{1.5, 3.0}, 0) == 1);
    CHECK(select_stage(std::vector<double>{2.0, 2.0}, 0) == 0);
    CHECK(select_stage(std::vector<double>{2.0, 2.0}, 1) == 1);
    CHECK(select_stage(std::vector<double>{2.0, 2.0 + 1e-12}, 0) == 0);
    CHECK_THROWS(select_stage(std::vector<double>{}, 0));
}

TEST_CASE("longest queue first") {
    CHECK(lqf_select(std::vector<double>{3 + 2, 4 + 4}, 0) == 1);
    CHECK(lqf_select(std::vector<double>{0, 0}, 1) == 1);
    CHECK(lqf_select(std::vector<double>{0, 0}, 0) == 0);
    CHECK_THROWS(lqf_select(std::vector<double>{1, 2, 3}, 0));
}

TEST_CASE("max pressure equals longest queue first over every queue vector") {
    std::size_t agree = 0;
    std::size_t total = 0;
    for (double east : {0.0, 3.0, 7.5}) {
        for (double south : {0.0, 2.0, 10.0}) {
            for (int a = 0; a <= 10; ++a) {
                for (int b = 0; b <= 10; ++b) {
                    for (int c = 0; c <= 10; ++c) {
                        for (int d = 0; d <= 10; ++d) {
                            const std::array<double, 4> q{double(a), double(b), double(c), double(d)};
                            const auto p = grid_pressures(q, east, south, 0.5);
                            const std::array<double, 2> approach{q[0] + q[1], q[2] + q[3]};
                            for (int cur : {0, 1}) {
                                ++total;
                                agree += select_stage(p, cur) == lqf_select(approach, cur) ? 1 : 0;
                            }
                        }
                    }
                }
            }
        }
    }
    CHECK(agree == total);
}

TEST_CASE("pressure is linear in the queue vector") {
    Rng rng(2);
    auto random_state = [&] {
        std::array<double, 6> v; // 4 upstream queues, east and south downstream
        for (double& x : v) x = 10.0 * uniform01(rng);
        return v;
    };
    for (int k = 0; k < 100; ++k) {
        const auto x = random_state();
        const auto y = random_state();
        const double alpha = uniform01(rng) * 3.0;
        const double beta = uniform01(rng) * 3.0;
        std::array<double, 6> z;
        for (std::size_t i = 0; i < 6; ++i) z[i] = alpha * x[i] + beta * y[i];
        auto eval = [](const std::array<double, 6>& v) {
            return grid_pressures({v[0], v[1], v[2], v[3]}, v[4], v[5], 0.5);
        };
        const auto px = eval(x);
        const auto py = eval(y);
        const auto pz = eval(z);
        for (std::size_t s = 0; s < 2; ++s) CHECK(pz[s] == doctest::Approx(alpha * px[s] + beta * py[s]));
    }
}

TEST_CASE("node movements read halting queues from the simulator") {
    const auto net = grid::build_grid();
    const auto od = grid::OdTable::standard(net);
    sim::Simulator sim(net, od, grid::DemandSchedule({{1000.0, 0.0}}), {}, 1);
    Rng rng(3);
    // Two stopped vehicles on the southbound approach to X11, one moving
    // vehicle on the eastbound approach.
    const auto south = grid::route_trip(net, od, {4, 4, 0.0}, grid::free_flow_cost, rng);
    sim.place_vehicle(south, 0, 149.0, 0.0);
    sim.place_vehicle(south, 0, 142.0, 0.0);
    const auto east = grid::route_trip(net, od, {0, 0, 0.0}, grid::free_flow_cost, rng);
    sim.place_vehicle(east, 0, 100.0, 8.0);
    const int x11 = net.node_index(1, 1);
    const auto mv = node_movements(sim, x11);
    CHECK(mv[0].queue == 0.0);
    CHECK(mv[2].queue == 2.0);
    CHECK(mv[2].splits == std::vector<double>{1.0, 0.0});
    CHECK(mv[1].splits == std::vector<double>{0.5, 0.5});
    const auto p = node_pressures(sim, x11);
    CHECK(p[0] == 0.0);
    CHECK(p[1] == doctest::Approx(1.0));
    const MaxPressureController mpc;
    CHECK(mpc.choose(sim, x11) == 1);
    CHECK(mpc.choose(sim, net.node_index(3, 3)) == sim.controller(net.node_index(3, 3)).active_stage());
}

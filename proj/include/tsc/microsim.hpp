#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "tsc/grid.hpp"
#include "tsc/rng.hpp"
#include "tsc/signal.hpp"

namespace tsc::sim {

inline constexpr double kVehicleLengthM = 5.0;
inline constexpr double kMinGapM = 2.0;
inline constexpr double kHaltingSpeedMps = 0.1;
inline constexpr double kSensingRangeM = 150.0;
inline constexpr double kStopLineOffsetM = 1.0;
/// Road length one queued vehicle covers: car length plus stopping gap.
inline constexpr double kSpacePerVehicleM = kVehicleLengthM + kMinGapM;

struct KraussParams {
    double accel_mps2 = 2.6;
    double decel_mps2 = 4.5;
    double tau_s = 1.0;
    double sigma = 0.0; // driver imperfection in [0,1]

    void validate() const;
};

/// Krauss safe speed, floored at zero:
///   v_safe = v_l + (g - v_l * tau) / ((v_f + v_l) / (2 b) + tau)
double krauss_safe_speed(double follower_speed, double leader_speed, double gap_m, const KraussParams& p);

/// Nearest obstacle ahead. `gap_m` is the usable distance (already net of the
/// minimum gap for real vehicles).
struct Leader {
    double gap_m = 0.0;
    double speed_mps = 0.0;
};

/// Speed for the next tick:
///   max(0, min(v + a dt, limit, v_safe) - sigma a dt u)
/// additionally capped at gap/dt so the follower never passes the leader.
double next_speed(double speed, double speed_limit, const std::optional<Leader>& leader, const KraussParams& p,
                  double dt_s, double noise_u);

/// Fuel surrogate (not HBEFA): c0 + c1 v + c2 v^3 + c3 max(a,0) v, in ml/s.
struct FuelCoeffs {
    double c0 = 0.2;
    double c1 = 0.03;
    double c2 = 1.5e-5;
    double c3 = 0.06;
};

double fuel_rate(double speed_mps, double accel_mps2, const FuelCoeffs& c);

struct Vehicle {
    std::int64_t id = 0;
    grid::Route route;
    std::size_t route_pos = 0; // index of current link in route
    int lane = 0;
    double pos_m = 0.0; // front bumper, from link start
    double speed_mps = 0.0;
    double accel_mps2 = 0.0;
    double created_s = 0.0;
    double entered_network_s = 0.0;
    double cumulative_delay_s = 0.0;
    double current_wait_spell_s = 0.0;

    int link() const { return route.links[route_pos]; }
    bool halting() const { return speed_mps < kHaltingSpeedMps; }
};

struct DetectorReading {
    std::array<double, 4> occupancy{}; // H per entrance lane
    std::array<double, 4> queue{};     // Q per entrance lane
    std::array<int, 4> vehicles{};
    std::array<int, 4> queued{};
    double interval_waiting_s = 0.0; // waiting accrued on entrance lanes since the last interval close
};

/// Occupancy-style ratio: min(1, 7 m * count / 150 m).
double lane_ratio(int vehicle_count);

struct MetricsRecord {
    double time_s = 0.0;
    double avg_delay_s_per_veh = 0.0;
    bool empty_network = true;
    std::int64_t queued_vehicles = 0;
    double fuel_rate_ml_per_s = 0.0;
    std::int64_t inserted = 0; // trips released by demand, pending ones included
    std::int64_t exited = 0;
    std::int64_t pending = 0;
    std::int64_t in_network = 0;
};

struct NodeSnapshot {
    int queued = 0;
    int vehicles = 0;
    double mean_delay_s = 0.0; // over vehicles on the node's entrance lanes
};

struct SimConfig {
    KraussParams krauss;
    FuelCoeffs fuel;
    signal::SignalTiming timing;
    double queue_delay_per_vehicle_s = 2.0; // routing cost per queued vehicle
    bool record_signal_trace = false;
};

using SignalEventSink = std::function<void(int node, double time_s, int stage, signal::SignalEvent event)>;

/// One-second tick microsimulation of the grid. Each tick: release trips,
/// move vehicles downstream-first, insert pending trips, account waiting and
/// fuel, advance signal controllers.
class Simulator {
public:
    Simulator(const grid::RoadNetwork& net, grid::OdTable od, grid::DemandSchedule schedule, SimConfig config,
              std::uint64_t seed);

    void step();
    void run_until(double time_s);

    double time_s() const { return static_cast<double>(time_); }
    const grid::RoadNetwork& network() const { return net_; }
    const SimConfig& config() const { return config_; }
    const grid::DemandSchedule& schedule() const { return schedule_; }

    signal::SignalController& controller(int node) { return controllers_.at(static_cast<std::size_t>(node)); }
    const signal::SignalController& controller(int node) const {
        return controllers_.at(static_cast<std::size_t>(node));
    }
    /// Routes a control decision through the node's gate and reports the event.
    signal::SignalEvent apply_decision(int node, int requested_stage);
    void set_max_green(int seconds);
    void set_signal_event_sink(SignalEventSink sink) { signal_sink_ = std::move(sink); }
    void set_vehicle_trace(std::ostream* out) { vehicle_trace_ = out; }

    DetectorReading read_detectors(int node) const;
    void close_detector_interval();
    /// Waiting accrued on the node's entrance lanes since the start.
    double total_entrance_waiting_s(int node) const { return node_wait_total_.at(static_cast<std::size_t>(node)); }

    MetricsRecord snapshot_metrics() const;
    NodeSnapshot node_snapshot(int node) const;

    const std::deque<Vehicle>& lane(int link, int lane) const;
    std::int64_t inserted() const { return inserted_; }
    std::int64_t exited() const { return exited_; }
    std::int64_t pending() const;
    std::int64_t in_network() const;

    /// Smallest bumper-to-bumper gap over consecutive vehicles of every lane;
    /// +inf when no lane holds two vehicles.
    double min_physical_gap_m() const;

    /// Per node, per elapsed tick: green stage or -1 during transitions.
    /// Filled only with `record_signal_trace`.
    const std::vector<std::vector<std::int8_t>>& signal_trace() const { return signal_trace_; }

    /// Puts a vehicle at the tail of the lane serving its next movement.
    /// Intended for tests and scripted scenarios.
    std::int64_t place_vehicle(grid::Route route, std::size_t route_pos, double pos_m, double speed_mps);

private:
    struct PendingTrip {
        grid::Trip trip;
        grid::Route route;
    };

    int lane_for(const grid::Route& route, std::size_t route_pos) const;
    int stage_for(const grid::Link& link) const;
    void release_trips();
    void move_vehicles();
    void move_lane(int link_id, int lane_id);
    void insert_pending();
    void account();

    std::deque<Vehicle>& lane_mut(int link, int lane);

    grid::RoadNetwork net_;
    grid::OdTable od_;
    grid::DemandSchedule schedule_;
    SimConfig config_;
    Rng demand_rng_;
    Rng routing_rng_;
    Rng driver_rng_;

    std::int64_t time_ = 0;
    std::int64_t next_id_ = 0;
    std::int64_t inserted_ = 0;
    std::int64_t exited_ = 0;

    std::vector<std::array<std::deque<Vehicle>, 2>> lanes_;
    std::vector<std::array<std::deque<PendingTrip>, 2>> pending_; // per entry, per lane
    std::vector<int> link_order_;
    std::vector<signal::SignalController> controllers_;
    std::vector<double> node_wait_total_;
    std::vector<double> node_wait_mark_;
    std::vector<std::vector<std::int8_t>> signal_trace_;
    double last_fuel_rate_ = 0.0;

    SignalEventSink signal_sink_;
    std::ostream* vehicle_trace_ = nullptr;
};

} // namespace tsc::sim

#include "tsc/microsim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

namespace tsc::sim {

namespace {

constexpr double kTickS = 1.0;

} // namespace

void KraussParams::validate() const {
    if (!(accel_mps2 > 0.0) || !(decel_mps2 > 0.0) || !(tau_s > 0.0)) {
        throw grid::ConfigError("Krauss accel, decel and tau must be positive");
    }
    if (sigma < 0.0 || sigma > 1.0) {
        throw grid::ConfigError("Krauss sigma must lie in [0, 1]");
    }
}

double krauss_safe_speed(double follower_speed, double leader_speed, double gap_m, const KraussParams& p) {
    const double denom = (follower_speed + leader_speed) / (2.0 * p.decel_mps2) + p.tau_s;
    const double v = leader_speed + (gap_m - leader_speed * p.tau_s) / denom;
    return std::max(0.0, v);
}

double next_speed(double speed, double speed_limit, const std::optional<Leader>& leader, const KraussParams& p,
                  double dt_s, double noise_u) {
    double v = std::min(speed + p.accel_mps2 * dt_s, speed_limit);
    double gap = std::numeric_limits<double>::infinity();
    if (leader) {
        gap = std::max(0.0, leader->gap_m);
        v = std::min(v, krauss_safe_speed(speed, leader->speed_mps, gap, p));
    }
    v = std::max(0.0, v - p.sigma * p.accel_mps2 * dt_s * noise_u);
    if (leader) {
        v = std::min(v, gap / dt_s);
    }
    return std::max(0.0, v);
}

double fuel_rate(double speed_mps, double accel_mps2, const FuelCoeffs& c) {
    const double v = std::max(0.0, speed_mps);
    return c.c0 + c.c1 * v + c.c2 * v * v * v + c.c3 * std::max(accel_mps2, 0.0) * v;
}

double lane_ratio(int vehicle_count) {
    return std::min(1.0, kSpacePerVehicleM * static_cast<double>(vehicle_count) / kSensingRangeM);
}

Simulator::Simulator(const grid::RoadNetwork& net, grid::OdTable od, grid::DemandSchedule schedule, SimConfig config,
                     std::uint64_t seed)
    : net_(net),
      od_(std::move(od)),
      schedule_(std::move(schedule)),
      config_(config),
      demand_rng_(make_stream(seed, "demand")),
      routing_rng_(make_stream(seed, "routing")),
      driver_rng_(make_stream(seed, "driver")) {
    config_.krauss.validate();
    if (od_.entry_count() != net_.entries().size() || od_.exit_count() != net_.exits().size()) {
        throw grid::ConfigError("OD table does not match the network endpoints");
    }
    if (config_.queue_delay_per_vehicle_s < 0.0) {
        throw grid::ConfigError("queue delay per vehicle must be non-negative");
    }
    lanes_.resize(net_.links().size());
    pending_.resize(net_.entries().size());
    for (std::size_t i = 0; i < net_.nodes().size(); ++i) {
        controllers_.emplace_back(config_.timing, 0);
    }
    node_wait_total_.assign(net_.nodes().size(), 0.0);
    node_wait_mark_.assign(net_.nodes().size(), 0.0);
    if (config_.record_signal_trace) {
        signal_trace_.resize(net_.nodes().size());
    }

    // Downstream first: exit stubs, then links by their downstream node's row+col, descending.
    for (const grid::Link& l : net_.links()) {
        link_order_.push_back(l.id);
    }
    auto key = [this](int id) {
        const grid::Link& l = net_.link(id);
        if (l.is_exit()) {
            return std::numeric_limits<int>::max();
        }
        const grid::Node& n = net_.node(l.to_node);
        return n.row + n.col;
    };
    std::stable_sort(link_order_.begin(), link_order_.end(), [&](int a, int b) { return key(a) > key(b); });
}

int Simulator::lane_for(const grid::Route& route, std::size_t route_pos) const {
    const grid::Link& l = net_.link(route.links.at(route_pos));
    if (l.is_exit()) {
        return 0;
    }
    const auto m = net_.movement_between(l.id, route.links.at(route_pos + 1));
    if (!m) {
        throw grid::RoutingError("route has disconnected links at " + l.name);
    }
    return static_cast<int>(*m);
}

int Simulator::stage_for(const grid::Link& link) const {
    return link.heading == grid::Heading::East ? 0 : 1;
}

std::deque<Vehicle>& Simulator::lane_mut(int link, int lane) {
    return lanes_.at(static_cast<std::size_t>(link)).at(static_cast<std::size_t>(lane));
}

const std::deque<Vehicle>& Simulator::lane(int link, int lane) const {
    return lanes_.at(static_cast<std::size_t>(link)).at(static_cast<std::size_t>(lane));
}

void Simulator::release_trips() {
    const double t = time_s();
    if (t >= schedule_.total_duration_s()) {
        return;
    }
    const auto trips = grid::spawn_trips(od_, schedule_, t, demand_rng_);
    if (trips.empty()) {
        return;
    }
    const double per_vehicle = config_.queue_delay_per_vehicle_s;
    auto cost = [this, per_vehicle](const grid::Link& l) {
        int queued = 0;
        for (const Vehicle& v : lanes_[static_cast<std::size_t>(l.id)][0]) {
            queued += v.halting() ? 1 : 0;
        }
        for (const Vehicle& v : lanes_[static_cast<std::size_t>(l.id)][1]) {
            queued += v.halting() ? 1 : 0;
        }
        return l.free_flow_time_s() + per_vehicle * queued;
    };
    for (const grid::Trip& trip : trips) {
        grid::Route route = grid::route_trip(net_, od_, trip, cost, routing_rng_);
        const int lane = lane_for(route, 0);
        pending_[static_cast<std::size_t>(trip.entry)][static_cast<std::size_t>(lane)].push_back(
            {trip, std::move(route)});
        ++inserted_;
    }
}

void Simulator::move_lane(int link_id, int lane_id) {
    auto& q = lane_mut(link_id, lane_id);
    const grid::Link& link = net_.link(link_id);
    const double len = link.length_m;
    const KraussParams& kp = config_.krauss;

    std::size_t i = 0;
    while (i < q.size()) {
        Vehicle& v = q[i];
        std::optional<Leader> leader;
        bool may_cross = false;
        int target_link = -1;
        int target_lane = 0;
        if (i > 0) {
            const Vehicle& ahead = q[i - 1];
            leader = Leader{(ahead.pos_m - kVehicleLengthM) - v.pos_m - kMinGapM, ahead.speed_mps};
        } else if (link.is_exit()) {
            may_cross = true;
        } else {
            target_link = v.route.links.at(v.route_pos + 1);
            target_lane = lane_for(v.route, v.route_pos + 1);
            const auto green = controllers_[static_cast<std::size_t>(link.to_node)].green_stage();
            const bool committed = v.pos_m > len - kStopLineOffsetM;
            if (committed || (green && *green == stage_for(link))) {
                may_cross = true;
                const auto& tq = lane(target_link, target_lane);
                if (!tq.empty()) {
                    const Vehicle& tail = tq.back();
                    leader = Leader{(len - v.pos_m) + (tail.pos_m - kVehicleLengthM) - kMinGapM, tail.speed_mps};
                }
            } else {
                leader = Leader{len - kStopLineOffsetM - v.pos_m, 0.0};
            }
        }

        const double u = kp.sigma > 0.0 ? uniform01(driver_rng_) : 0.0;
        const double nv = next_speed(v.speed_mps, link.speed_limit_mps, leader, kp, kTickS, u);
        v.accel_mps2 = (nv - v.speed_mps) / kTickS;
        v.speed_mps = nv;
        v.pos_m += nv * kTickS;

        if (may_cross && v.pos_m >= len) {
            if (link.is_exit()) {
                ++exited_;
                q.pop_front();
                continue;
            }
            Vehicle moved = std::move(v);
            q.pop_front();
            moved.pos_m -= len;
            moved.route_pos += 1;
            moved.lane = target_lane;
            lane_mut(target_link, target_lane).push_back(std::move(moved));
            continue;
        }
        ++i;
    }
}

void Simulator::move_vehicles() {
    for (int id : link_order_) {
        for (int l = 0; l < net_.link(id).lane_count && l < 2; ++l) {
            move_lane(id, l);
        }
    }
}

void Simulator::insert_pending() {
    const KraussParams& kp = config_.krauss;
    for (std::size_t e = 0; e < pending_.size(); ++e) {
        const int link_id = net_.entries()[e].link;
        const grid::Link& link = net_.link(link_id);
        for (int l = 0; l < 2; ++l) {
            auto& waiting = pending_[e][static_cast<std::size_t>(l)];
            if (waiting.empty()) {
                continue;
            }
            auto& q = lane_mut(link_id, l);
            double speed = link.speed_limit_mps;
            if (!q.empty()) {
                const Vehicle& tail = q.back();
                const double rear = tail.pos_m - kVehicleLengthM;
                if (rear < kSpacePerVehicleM) {
                    continue;
                }
                const double gap = rear - kVehicleLengthM - kMinGapM;
                speed = std::min({speed, krauss_safe_speed(speed, tail.speed_mps, gap, kp), gap / kTickS});
                speed = std::max(0.0, speed);
            }
            PendingTrip p = std::move(waiting.front());
            waiting.pop_front();
            Vehicle v;
            v.id = next_id_++;
            v.route = std::move(p.route);
            v.route_pos = 0;
            v.lane = l;
            v.pos_m = kVehicleLengthM;
            v.speed_mps = speed;
            v.created_s = p.trip.created_s;
            v.entered_network_s = time_s() + kTickS;
            q.push_back(std::move(v));
        }
    }
}

void Simulator::account() {
    double fuel = 0.0;
    for (const grid::Link& link : net_.links()) {
        for (auto& q : lanes_[static_cast<std::size_t>(link.id)]) {
            for (Vehicle& v : q) {
                fuel += fuel_rate(v.speed_mps, v.accel_mps2, config_.fuel);
                if (v.halting()) {
                    v.cumulative_delay_s += kTickS;
                    v.current_wait_spell_s += kTickS;
                    if (link.to_node != grid::kNoNode) {
                        node_wait_total_[static_cast<std::size_t>(link.to_node)] += kTickS;
                    }
                } else {
                    v.current_wait_spell_s = 0.0;
                }
            }
        }
    }
    last_fuel_rate_ = fuel;
}

void Simulator::step() {
    if (config_.record_signal_trace) {
        for (std::size_t n = 0; n < controllers_.size(); ++n) {
            const auto g = controllers_[n].green_stage();
            signal_trace_[n].push_back(static_cast<std::int8_t>(g ? *g : -1));
        }
    }
    release_trips();
    move_vehicles();
    insert_pending();
    account();

    if (vehicle_trace_ != nullptr) {
        for (const grid::Link& link : net_.links()) {
            for (const auto& q : lanes_[static_cast<std::size_t>(link.id)]) {
                for (const Vehicle& v : q) {
                    *vehicle_trace_ << "{\"t\":" << time_ << ",\"id\":" << v.id << ",\"link\":\"" << link.name
                                    << "\",\"lane\":" << v.lane << ",\"pos\":" << v.pos_m
                                    << ",\"speed\":" << v.speed_mps << "}\n";
                }
            }
        }
    }

    for (std::size_t n = 0; n < controllers_.size(); ++n) {
        const auto ev = controllers_[n].tick();
        if (ev && signal_sink_) {
            signal_sink_(static_cast<int>(n), time_s() + kTickS, controllers_[n].active_stage(), *ev);
        }
    }
    ++time_;
}

void Simulator::run_until(double t) {
    while (time_s() < t) {
        step();
    }
}

signal::SignalEvent Simulator::apply_decision(int node, int requested_stage) {
    auto& c = controller(node);
    const auto ev = c.apply_decision(requested_stage);
    if (signal_sink_) {
        signal_sink_(node, time_s(), c.active_stage(), ev);
    }
    return ev;
}

void Simulator::set_max_green(int seconds) {
    for (auto& c : controllers_) {
        c.set_max_green(seconds);
    }
    config_.timing.max_green_s = seconds;
}

DetectorReading Simulator::read_detectors(int node) const {
    DetectorReading r;
    const auto lanes = net_.entrance_lanes(node);
    for (std::size_t k = 0; k < lanes.size(); ++k) {
        const grid::Link& link = net_.link(lanes[k].link);
        const double from = link.length_m - kSensingRangeM;
        int n = 0;
        int h = 0;
        for (const Vehicle& v : lane(lanes[k].link, lanes[k].lane)) {
            if (v.pos_m >= from) {
                ++n;
                h += v.halting() ? 1 : 0;
            }
        }
        r.vehicles[k] = n;
        r.queued[k] = h;
        r.occupancy[k] = lane_ratio(n);
        r.queue[k] = lane_ratio(h);
    }
    const auto idx = static_cast<std::size_t>(node);
    r.interval_waiting_s = node_wait_total_.at(idx) - node_wait_mark_.at(idx);
    return r;
}

void Simulator::close_detector_interval() {
    node_wait_mark_ = node_wait_total_;
}

MetricsRecord Simulator::snapshot_metrics() const {
    MetricsRecord m;
    m.time_s = time_s();
    double delay = 0.0;
    std::int64_t count = 0;
    for (const auto& link_lanes : lanes_) {
        for (const auto& q : link_lanes) {
            for (const Vehicle& v : q) {
                delay += v.cumulative_delay_s;
                m.queued_vehicles += v.halting() ? 1 : 0;
                ++count;
            }
        }
    }
    m.in_network = count;
    m.empty_network = count == 0;
    m.avg_delay_s_per_veh = count == 0 ? 0.0 : delay / static_cast<double>(count);
    m.fuel_rate_ml_per_s = last_fuel_rate_;
    m.inserted = inserted_;
    m.exited = exited_;
    m.pending = pending();
    return m;
}

NodeSnapshot Simulator::node_snapshot(int node) const {
    NodeSnapshot s;
    double delay = 0.0;
    for (const grid::LaneRef& lr : net_.entrance_lanes(node)) {
        for (const Vehicle& v : lane(lr.link, lr.lane)) {
            ++s.vehicles;
            s.queued += v.halting() ? 1 : 0;
            delay += v.cumulative_delay_s;
        }
    }
    s.mean_delay_s = s.vehicles == 0 ? 0.0 : delay / s.vehicles;
    return s;
}

std::int64_t Simulator::pending() const {
    std::int64_t n = 0;
    for (const auto& e : pending_) {
        n += static_cast<std::int64_t>(e[0].size() + e[1].size());
    }
    return n;
}

std::int64_t Simulator::in_network() const {
    std::int64_t n = 0;
    for (const auto& link_lanes : lanes_) {
        n += static_cast<std::int64_t>(link_lanes[0].size() + link_lanes[1].size());
    }
    return n;
}

double Simulator::min_physical_gap_m() const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& link_lanes : lanes_) {
        for (const auto& q : link_lanes) {
            for (std::size_t i = 1; i < q.size(); ++i) {
                best = std::min(best, (q[i - 1].pos_m - kVehicleLengthM) - q[i].pos_m);
            }
        }
    }
    return best;
}

std::int64_t Simulator::place_vehicle(grid::Route route, std::size_t route_pos, double pos_m, double speed_mps) {
    if (route_pos >= route.links.size()) {
        throw std::out_of_range("route position past the end of the route");
    }
    const int link_id = route.links[route_pos];
    const int l = lane_for(route, route_pos);
    Vehicle v;
    v.id = next_id_++;
    v.route = std::move(route);
    v.route_pos = route_pos;
    v.lane = l;
    v.pos_m = pos_m;
    v.speed_mps = speed_mps;
    v.created_s = time_s();
    v.entered_network_s = time_s();
    const std::int64_t id = v.id;
    lane_mut(link_id, l).push_back(std::move(v));
    ++inserted_;
    return id;
}

} // namespace tsc::sim

#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsc/rng.hpp"

namespace tsc::grid {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RoutingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr double kDefaultLinkLengthM = 150.0;
inline constexpr double kDefaultSpeedLimitMps = 40.0 / 3.6;

// Rows run eastbound, columns run southbound.
enum class Heading { East, South };

// Through keeps the heading. Turn is a right turn for eastbound traffic and a
// left turn for southbound traffic. The value doubles as the lane index on the
// approach that serves the movement.
enum class Movement { Through = 0, Turn = 1 };

inline constexpr int kNoNode = -1;

struct Link {
    int id = 0;
    Heading heading = Heading::East;
    int from_node = kNoNode; // kNoNode for entry stubs
    int to_node = kNoNode;   // kNoNode for exit stubs
    int entry = -1;          // entry index for stubs, else -1
    int exit = -1;           // exit index for stubs, else -1
    double length_m = kDefaultLinkLengthM;
    int lane_count = 2;
    double speed_limit_mps = kDefaultSpeedLimitMps;
    std::string name;

    double free_flow_time_s() const { return length_m / speed_limit_mps; }
    bool is_entry() const { return entry >= 0; }
    bool is_exit() const { return exit >= 0; }
};

struct Node {
    int row = 0; // 1-based, top to bottom
    int col = 0; // 1-based, left to right
    std::string name;
    int in_from_west = -1;  // eastbound link arriving
    int in_from_north = -1; // southbound link arriving
    int out_east = -1;
    int out_south = -1;
};

struct Endpoint {
    std::string name;
    int link = -1;
};

/// One lane of a link. Lane index equals the Movement it serves at the
/// downstream node.
struct LaneRef {
    int link = -1;
    int lane = 0;
    friend bool operator==(const LaneRef&, const LaneRef&) = default;
};

/// One-way Manhattan grid: rows carry eastbound traffic, columns carry
/// southbound traffic. Entry stubs feed the west column and north row, exit
/// stubs leave from the east column and south row.
class RoadNetwork {
public:
    RoadNetwork() = default;

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    const std::vector<Node>& nodes() const { return nodes_; }
    const std::vector<Link>& links() const { return links_; }
    const std::vector<Endpoint>& entries() const { return entries_; }
    const std::vector<Endpoint>& exits() const { return exits_; }
    const Node& node(int i) const { return nodes_.at(static_cast<std::size_t>(i)); }
    const Link& link(int i) const { return links_.at(static_cast<std::size_t>(i)); }

    int node_index(int row, int col) const;

    /// Adjacent nodes in (north, south, west, east) order, absent ones skipped.
    const std::vector<int>& neighbors(int node) const { return neighbors_.at(static_cast<std::size_t>(node)); }

    /// Incoming links ordered (from west, from north).
    std::array<int, 2> incoming(int node) const;
    /// Outgoing links ordered (east, south).
    std::array<int, 2> outgoing(int node) const;

    /// Entrance lanes of a node: west approach through/turn, then north
    /// approach through/turn.
    std::array<LaneRef, 4> entrance_lanes(int node) const;

    /// Link reached from `link` by taking `m` at its downstream node.
    int next_link(int link, Movement m) const;

    /// Movement that joins `from` to `to` at their shared node.
    std::optional<Movement> movement_between(int from, int to) const;

private:
    friend RoadNetwork build_grid(int, int, double, double);

    int rows_ = 0;
    int cols_ = 0;
    std::vector<Node> nodes_;
    std::vector<Link> links_;
    std::vector<Endpoint> entries_;
    std::vector<Endpoint> exits_;
    std::vector<std::vector<int>> neighbors_;
};

/// Builds the rows x cols grid. Entries are In0k (west side, row k) followed by
/// In1k (north side, column k); exits are Out0k (east, row k) then Out1k
/// (south, column k). Throws ConfigError for dimensions below 2 or
/// non-positive lengths or speeds.
RoadNetwork build_grid(int rows = 4, int cols = 4, double link_length_m = kDefaultLinkLengthM,
                       double speed_limit_mps = kDefaultSpeedLimitMps);

struct OdPair {
    int entry = 0;
    int exit = 0;
};

class OdTable {
public:
    OdTable() = default;
    OdTable(std::size_t entries, std::size_t exits);

    /// In0k->Out0m iff m >= k, In1k->Out1m iff m >= k, every cross pair.
    static OdTable standard(const RoadNetwork& net);

    std::size_t entry_count() const { return entries_; }
    std::size_t exit_count() const { return exits_; }

    void permit(int entry, int exit, bool allowed = true);
    bool permitted(int entry, int exit) const;

    /// Per-pair probability that replaces the schedule value for that pair.
    void set_probability_override(int entry, int exit, double p);
    std::optional<double> probability_override(int entry, int exit) const;

    /// Permitted pairs, entry-major.
    std::vector<OdPair> permitted_pairs() const;

private:
    std::size_t index(int entry, int exit) const;

    std::size_t entries_ = 0;
    std::size_t exits_ = 0;
    std::vector<char> permitted_;
    std::vector<double> override_; // negative = none
};

struct DemandSegment {
    double duration_s = 0.0;
    double probability = 0.0;
};

class DemandSchedule {
public:
    DemandSchedule() = default;
    explicit DemandSchedule(std::vector<DemandSegment> segments);

    /// 4 x 5000 s training demand.
    static DemandSchedule training_default();
    /// 4 x 5000 s testing demand (medium, low, high, medium).
    static DemandSchedule testing_default();

    const std::vector<DemandSegment>& segments() const { return segments_; }
    double total_duration_s() const;
    std::size_t segment_index(double t) const;
    double probability_at(double t) const;
    /// Same probabilities with every duration divided by `factor`.
    DemandSchedule compressed(double factor) const;

private:
    std::vector<DemandSegment> segments_;
};

struct Trip {
    int entry = 0;
    int exit = 0;
    double created_s = 0.0;
};

/// One Bernoulli draw per permitted pair (entry-major) for second `t`.
std::vector<Trip> spawn_trips(const OdTable& od, const DemandSchedule& schedule, double t, Rng& rng);

using LinkCost = std::function<double(const Link&)>;

inline double free_flow_cost(const Link& l) { return l.free_flow_time_s(); }

struct Route {
    std::vector<int> links; // entry stub first, exit stub last
};

/// Minimum-cost route for the trip's OD pair. Ties are broken uniformly over
/// all minimum-cost paths using `rng`. Throws RoutingError for pairs that are
/// not permitted or not reachable.
Route route_trip(const RoadNetwork& net, const OdTable& od, const Trip& trip, const LinkCost& cost, Rng& rng);

} // namespace tsc::grid

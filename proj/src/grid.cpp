#include "tsc/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tsc::grid {

int RoadNetwork::node_index(int row, int col) const {
    if (row < 1 || row > rows_ || col < 1 || col > cols_) {
        throw ConfigError("node (" + std::to_string(row) + "," + std::to_string(col) + ") outside grid");
    }
    return (row - 1) * cols_ + (col - 1);
}

std::array<int, 2> RoadNetwork::incoming(int node) const {
    const Node& n = this->node(node);
    return {n.in_from_west, n.in_from_north};
}

std::array<int, 2> RoadNetwork::outgoing(int node) const {
    const Node& n = this->node(node);
    return {n.out_east, n.out_south};
}

std::array<LaneRef, 4> RoadNetwork::entrance_lanes(int node) const {
    const Node& n = this->node(node);
    return {LaneRef{n.in_from_west, 0}, LaneRef{n.in_from_west, 1}, LaneRef{n.in_from_north, 0},
            LaneRef{n.in_from_north, 1}};
}

int RoadNetwork::next_link(int link, Movement m) const {
    const Link& l = this->link(link);
    if (l.to_node == kNoNode) {
        return -1;
    }
    const Node& n = node(l.to_node);
    const bool through = m == Movement::Through;
    if (l.heading == Heading::East) {
        return through ? n.out_east : n.out_south;
    }
    return through ? n.out_south : n.out_east;
}

std::optional<Movement> RoadNetwork::movement_between(int from, int to) const {
    if (next_link(from, Movement::Through) == to) {
        return Movement::Through;
    }
    if (next_link(from, Movement::Turn) == to) {
        return Movement::Turn;
    }
    return std::nullopt;
}

RoadNetwork build_grid(int rows, int cols, double link_length_m, double speed_limit_mps) {
    if (rows < 2 || cols < 2) {
        throw ConfigError("grid dimensions must be at least 2x2");
    }
    if (!(link_length_m > 0.0) || !(speed_limit_mps > 0.0)) {
        throw ConfigError("link length and speed limit must be positive");
    }

    RoadNetwork net;
    net.rows_ = rows;
    net.cols_ = cols;
    net.nodes_.resize(static_cast<std::size_t>(rows * cols));
    for (int r = 1; r <= rows; ++r) {
        for (int c = 1; c <= cols; ++c) {
            Node& n = net.nodes_[static_cast<std::size_t>(net.node_index(r, c))];
            n.row = r;
            n.col = c;
            n.name = "X" + std::to_string(r) + std::to_string(c);
        }
    }

    auto add_link = [&](Heading h, int from, int to, std::string name) {
        Link l;
        l.id = static_cast<int>(net.links_.size());
        l.heading = h;
        l.from_node = from;
        l.to_node = to;
        l.length_m = link_length_m;
        l.speed_limit_mps = speed_limit_mps;
        l.name = std::move(name);
        net.links_.push_back(l);
        return l.id;
    };

    // Entries: In0k west of (k,1), In1k north of (1,k).
    for (int r = 1; r <= rows; ++r) {
        const int to = net.node_index(r, 1);
        const std::string name = "In0" + std::to_string(r);
        const int id = add_link(Heading::East, kNoNode, to, name);
        net.links_[static_cast<std::size_t>(id)].entry = static_cast<int>(net.entries_.size());
        net.entries_.push_back({name, id});
        net.nodes_[static_cast<std::size_t>(to)].in_from_west = id;
    }
    for (int c = 1; c <= cols; ++c) {
        const int to = net.node_index(1, c);
        const std::string name = "In1" + std::to_string(c);
        const int id = add_link(Heading::South, kNoNode, to, name);
        net.links_[static_cast<std::size_t>(id)].entry = static_cast<int>(net.entries_.size());
        net.entries_.push_back({name, id});
        net.nodes_[static_cast<std::size_t>(to)].in_from_north = id;
    }

    // Interior eastbound and southbound links.
    for (int r = 1; r <= rows; ++r) {
        for (int c = 1; c <= cols; ++c) {
            const int from = net.node_index(r, c);
            Node& fn = net.nodes_[static_cast<std::size_t>(from)];
            if (c < cols) {
                const int to = net.node_index(r, c + 1);
                const int id = add_link(Heading::East, from, to, fn.name + "->" + net.nodes_[static_cast<std::size_t>(to)].name);
                net.nodes_[static_cast<std::size_t>(from)].out_east = id;
                net.nodes_[static_cast<std::size_t>(to)].in_from_west = id;
            }
            if (r < rows) {
                const int to = net.node_index(r + 1, c);
                const int id = add_link(Heading::South, from, to, net.nodes_[static_cast<std::size_t>(from)].name + "->" +
                                                                       net.nodes_[static_cast<std::size_t>(to)].name);
                net.nodes_[static_cast<std::size_t>(from)].out_south = id;
                net.nodes_[static_cast<std::size_t>(to)].in_from_north = id;
            }
        }
    }

    // Exits: Out0k east of (k,cols), Out1k south of (rows,k).
    for (int r = 1; r <= rows; ++r) {
        const int from = net.node_index(r, cols);
        const std::string name = "Out0" + std::to_string(r);
        const int id = add_link(Heading::East, from, kNoNode, name);
        net.links_[static_cast<std::size_t>(id)].exit = static_cast<int>(net.exits_.size());
        net.exits_.push_back({name, id});
        net.nodes_[static_cast<std::size_t>(from)].out_east = id;
    }
    for (int c = 1; c <= cols; ++c) {
        const int from = net.node_index(rows, c);
        const std::string name = "Out1" + std::to_string(c);
        const int id = add_link(Heading::South, from, kNoNode, name);
        net.links_[static_cast<std::size_t>(id)].exit = static_cast<int>(net.exits_.size());
        net.exits_.push_back({name, id});
        net.nodes_[static_cast<std::size_t>(from)].out_south = id;
    }

    net.neighbors_.resize(net.nodes_.size());
    for (int r = 1; r <= rows; ++r) {
        for (int c = 1; c <= cols; ++c) {
            auto& nb = net.neighbors_[static_cast<std::size_t>(net.node_index(r, c))];
            if (r > 1) nb.push_back(net.node_index(r - 1, c));
            if (r < rows) nb.push_back(net.node_index(r + 1, c));
            if (c > 1) nb.push_back(net.node_index(r, c - 1));
            if (c < cols) nb.push_back(net.node_index(r, c + 1));
        }
    }
    return net;
}

OdTable::OdTable(std::size_t entries, std::size_t exits)
    : entries_(entries), exits_(exits), permitted_(entries * exits, 0), override_(entries * exits, -1.0) {}

OdTable OdTable::standard(const RoadNetwork& net) {
    const int rows = net.rows();
    const int cols = net.cols();
    OdTable od(net.entries().size(), net.exits().size());
    // West entries (rows) to east exits (rows): only same row or further south.
    for (int k = 0; k < rows; ++k) {
        for (int m = k; m < rows; ++m) {
            od.permit(k, m);
        }
        for (int m = 0; m < cols; ++m) {
            od.permit(k, rows + m);
        }
    }
    // North entries (columns) to south exits (columns): same column or further east.
    for (int k = 0; k < cols; ++k) {
        for (int m = k; m < cols; ++m) {
            od.permit(rows + k, rows + m);
        }
        for (int m = 0; m < rows; ++m) {
            od.permit(rows + k, m);
        }
    }
    return od;
}

std::size_t OdTable::index(int entry, int exit) const {
    if (entry < 0 || exit < 0 || static_cast<std::size_t>(entry) >= entries_ ||
        static_cast<std::size_t>(exit) >= exits_) {
        throw ConfigError("OD pair index out of range");
    }
    return static_cast<std::size_t>(entry) * exits_ + static_cast<std::size_t>(exit);
}

void OdTable::permit(int entry, int exit, bool allowed) {
    permitted_[index(entry, exit)] = allowed ? 1 : 0;
}

bool OdTable::permitted(int entry, int exit) const {
    return permitted_[index(entry, exit)] != 0;
}

void OdTable::set_probability_override(int entry, int exit, double p) {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw ConfigError("OD probability override must lie in [0,1]");
    }
    override_[index(entry, exit)] = p;
}

std::optional<double> OdTable::probability_override(int entry, int exit) const {
    const double p = override_[index(entry, exit)];
    if (p < 0.0) {
        return std::nullopt;
    }
    return p;
}

std::vector<OdPair> OdTable::permitted_pairs() const {
    std::vector<OdPair> out;
    for (std::size_t e = 0; e < entries_; ++e) {
        for (std::size_t x = 0; x < exits_; ++x) {
            if (permitted_[e * exits_ + x]) {
                out.push_back({static_cast<int>(e), static_cast<int>(x)});
            }
        }
    }
    return out;
}

DemandSchedule::DemandSchedule(std::vector<DemandSegment> segments) : segments_(std::move(segments)) {
    if (segments_.empty()) {
        throw ConfigError("demand schedule needs at least one segment");
    }
    for (const auto& s : segments_) {
        if (!(s.duration_s > 0.0)) {
            throw ConfigError("demand segment durations must be positive");
        }
        if (!(s.probability >= 0.0 && s.probability <= 1.0)) {
            throw ConfigError("demand segment probabilities must lie in [0,1]");
        }
    }
}

DemandSchedule DemandSchedule::training_default() {
    return DemandSchedule({{5000.0, 0.10}, {5000.0, 0.05}, {5000.0, 0.20}, {5000.0, 0.15}});
}

DemandSchedule DemandSchedule::testing_default() {
    return DemandSchedule({{5000.0, 0.15}, {5000.0, 0.03}, {5000.0, 0.25}, {5000.0, 0.18}});
}

double DemandSchedule::total_duration_s() const {
    double total = 0.0;
    for (const auto& s : segments_) {
        total += s.duration_s;
    }
    return total;
}

std::size_t DemandSchedule::segment_index(double t) const {
    if (t < 0.0) {
        throw ConfigError("time before schedule start");
    }
    double end = 0.0;
    for (std::size_t i = 0; i < segments_.size(); ++i) {
        end += segments_[i].duration_s;
        if (t < end) {
            return i;
        }
    }
    throw ConfigError("time " + std::to_string(t) + " beyond schedule horizon");
}

double DemandSchedule::probability_at(double t) const {
    return segments_[segment_index(t)].probability;
}

DemandSchedule DemandSchedule::compressed(double factor) const {
    if (!(factor > 0.0)) {
        throw ConfigError("compression factor must be positive");
    }
    std::vector<DemandSegment> out = segments_;
    for (auto& s : out) {
        s.duration_s /= factor;
    }
    return DemandSchedule(std::move(out));
}

std::vector<Trip> spawn_trips(const OdTable& od, const DemandSchedule& schedule, double t, Rng& rng) {
    const double p = schedule.probability_at(t);
    std::vector<Trip> trips;
    for (const OdPair& pair : od.permitted_pairs()) {
        const double pp = od.probability_override(pair.entry, pair.exit).value_or(p);
        if (bernoulli(rng, pp)) {
            trips.push_back({pair.entry, pair.exit, t});
        }
    }
    return trips;
}

Route route_trip(const RoadNetwork& net, const OdTable& od, const Trip& trip, const LinkCost& cost, Rng& rng) {
    if (!od.permitted(trip.entry, trip.exit)) {
        throw RoutingError("OD pair " + net.entries().at(static_cast<std::size_t>(trip.entry)).name + "->" +
                           net.exits().at(static_cast<std::size_t>(trip.exit)).name + " is not permitted");
    }
    const auto& links = net.links();
    const std::size_t n = links.size();
    constexpr double inf = std::numeric_limits<double>::infinity();
    auto same = [](double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(a)); };

    // Links in topological order: stubs first, then by upstream node row+col.
    std::vector<int> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = static_cast<int>(i);
    }
    auto key = [&](int id) {
        const Link& l = links[static_cast<std::size_t>(id)];
        if (l.from_node == kNoNode) return -1;
        const Node& fn = net.node(l.from_node);
        return fn.row + fn.col;
    };
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return key(a) < key(b); });

    std::vector<double> dist(n, inf);
    std::vector<double> count(n, 0.0);
    const int start = net.entries().at(static_cast<std::size_t>(trip.entry)).link;
    const int goal = net.exits().at(static_cast<std::size_t>(trip.exit)).link;
    dist[static_cast<std::size_t>(start)] = cost(links[static_cast<std::size_t>(start)]);
    count[static_cast<std::size_t>(start)] = 1.0;

    for (int id : order) {
        const auto u = static_cast<std::size_t>(id);
        if (dist[u] == inf || links[u].to_node == kNoNode) {
            continue;
        }
        for (int next : net.outgoing(links[u].to_node)) {
            const auto v = static_cast<std::size_t>(next);
            const double cand = dist[u] + cost(links[v]);
            if (dist[v] == inf || (cand < dist[v] && !same(cand, dist[v]))) {
                dist[v] = cand;
                count[v] = count[u];
            } else if (same(cand, dist[v])) {
                count[v] += count[u];
            }
        }
    }

    if (dist[static_cast<std::size_t>(goal)] == inf) {
        throw RoutingError("exit " + net.exits().at(static_cast<std::size_t>(trip.exit)).name + " unreachable from " +
                           net.entries().at(static_cast<std::size_t>(trip.entry)).name);
    }

    // Walk back, choosing each predecessor with probability proportional to
    // its number of shortest paths; this is uniform over all shortest paths.
    Route route;
    int cur = goal;
    route.links.push_back(cur);
    while (cur != start) {
        const Link& cl = links[static_cast<std::size_t>(cur)];
        std::vector<int> preds;
        double total = 0.0;
        for (int p : net.incoming(cl.from_node)) {
            const auto pi = static_cast<std::size_t>(p);
            if (dist[pi] != inf && same(dist[pi] + cost(cl), dist[static_cast<std::size_t>(cur)])) {
                preds.push_back(p);
                total += count[pi];
            }
        }
        if (preds.empty()) {
            throw RoutingError("inconsistent shortest-path table");
        }
        int pick = preds.front();
        if (preds.size() > 1) {
            double u = uniform01(rng) * total;
            for (int p : preds) {
                u -= count[static_cast<std::size_t>(p)];
                pick = p;
                if (u < 0.0) break;
            }
        }
        cur = pick;
        route.links.push_back(cur);
    }
    std::reverse(route.links.begin(), route.links.end());
    return route;
}

} // namespace tsc::grid

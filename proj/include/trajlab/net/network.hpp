#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <trajlab/common/error.hpp>
#include <trajlab/common/hash.hpp>

namespace trajlab::net {

// Observation alphabet: token 0 = Start, token 1 = End, links from 2 upward.
using Token = int;
inline constexpr Token kStart = 0;
inline constexpr Token kEnd = 1;
inline constexpr Token kFirstLink = 2;

/// Discrete action. Indices 0..3 are the turn/termination movements shared by
/// every link; indices 4.. select the origin link at the Start observation.
struct Action {
    int index = -1;

    static constexpr int kStraight = 0;
    static constexpr int kLeft = 1;
    static constexpr int kRight = 2;
    static constexpr int kTerminate = 3;
    static Action straight() { return {kStraight}; }
    static Action left() { return {kLeft}; }
    static Action right() { return {kRight}; }
    static Action terminate() { return {kTerminate}; }
    static Action origin(int k) { return {4 + k}; }

    bool is_origin() const { return index >= 4; }
    int origin_slot() const { return index - 4; }
    bool operator==(const Action& o) const { return index == o.index; }
    auto operator<=>(const Action& o) const = default;
};

inline std::string action_label(Action a) {
    switch (a.index) {
        case Action::kStraight: return "Straight";
        case Action::kLeft: return "Left";
        case Action::kRight: return "Right";
        case Action::kTerminate: return "Terminate";
        default: return "Origin(" + std::to_string(a.index - 4) + ")";
    }
}

struct Node {
    std::string id;
    double x = 0.0;
    double y = 0.0;
};

struct Link {
    std::string id;
    std::string from;
    std::string to;
    double length = 0.0;  // meters
};

/// Ordered link-id sequence with no virtual tokens.
using Route = std::vector<std::string>;

/// Directed link network with per-observation action masks and a
/// deterministic (observation, action) -> observation lookup. Immutable once
/// built; all queries are safe for concurrent readers.
class RoadNetwork {
public:
    RoadNetwork(std::vector<Node> nodes, std::vector<Link> links,
                std::vector<std::string> source_ids, std::vector<std::string> sink_ids,
                bool terminate_anywhere = false)
        : nodes_(std::move(nodes)), links_(std::move(links)) {
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            auto [it, fresh] = node_index_.emplace(nodes_[i].id, i);
            require(fresh, "duplicate node id ", nodes_[i].id);
        }
        for (std::size_t i = 0; i < links_.size(); ++i) {
            const Link& l = links_[i];
            require(node_index_.count(l.from) && node_index_.count(l.to),
                    "link ", l.id, " references unknown node");
            require(l.length > 0, "link ", l.id, " must have positive length");
            auto [it, fresh] = token_by_id_.emplace(l.id, kFirstLink + static_cast<Token>(i));
            require(fresh, "duplicate link id ", l.id);
        }
        for (const auto& s : source_ids) sources_.push_back(token(s));
        for (const auto& s : sink_ids) {
            Token t = token(s);
            require(!sinks_.count(t), "duplicate sink ", s);
            sinks_.insert(t);
        }
        if (terminate_anywhere)
            for (Token t = kFirstLink; t < alphabet_size(); ++t) sinks_.insert(t);
        num_actions_ = 4 + static_cast<int>(sources_.size());
        build_lookup();
    }

    int alphabet_size() const { return kFirstLink + static_cast<int>(links_.size()); }
    int num_links() const { return static_cast<int>(links_.size()); }
    int num_actions() const { return num_actions_; }
    const std::vector<Token>& sources() const { return sources_; }
    const std::set<Token>& sinks() const { return sinks_; }
    const std::vector<Link>& links() const { return links_; }
    const std::vector<Node>& nodes() const { return nodes_; }

    bool is_link(Token t) const { return t >= kFirstLink && t < alphabet_size(); }

    const Link& link(Token t) const {
        require(is_link(t), "token ", t, " is not a link");
        return links_[static_cast<std::size_t>(t - kFirstLink)];
    }

    Token token(const std::string& link_id) const {
        auto it = token_by_id_.find(link_id);
        if (it == token_by_id_.end()) throw ContractError("unknown link id: " + link_id);
        return it->second;
    }

    const std::string& link_id(Token t) const { return link(t).id; }

    const Node& node(const std::string& id) const {
        auto it = node_index_.find(id);
        if (it == node_index_.end()) throw ContractError("unknown node id: " + id);
        return nodes_[it->second];
    }

    /// Valid actions at an observation. Empty exactly at End.
    const std::vector<Action>& action_mask(Token obs) const {
        require(obs >= 0 && obs < alphabet_size(), "action_mask: unknown observation token ", obs);
        return masks_[static_cast<std::size_t>(obs)];
    }

    bool action_valid(Token obs, Action a) const {
        if (obs < 0 || obs >= alphabet_size() || a.index < 0 || a.index >= num_actions_)
            return false;
        return next_[static_cast<std::size_t>(obs)][static_cast<std::size_t>(a.index)] >= 0;
    }

    /// Deterministic next-observation lookup; defined exactly on masked pairs.
    Token next_observation(Token obs, Action a) const {
        require(obs >= 0 && obs < alphabet_size(), "next_observation: unknown observation ", obs);
        require(a.index >= 0 && a.index < num_actions_, "next_observation: unknown action ",
                a.index);
        Token nxt = next_[static_cast<std::size_t>(obs)][static_cast<std::size_t>(a.index)];
        if (nxt < 0)
            contract_fail("next_observation: action ", action_label(a),
                          " is masked out at observation ", obs_name(obs));
        return nxt;
    }

    std::string obs_name(Token t) const {
        if (t == kStart) return "Start";
        if (t == kEnd) return "End";
        return link_id(t);
    }

    /// Recovers the action sequence realizing a link route, including the
    /// initial Origin choice and the final Terminate.
    std::vector<Action> actions_for_route(const Route& route) const {
        require(!route.empty(), "actions_for_route: empty route");
        std::vector<Action> acts;
        Token prev = kStart;
        for (const auto& id : route) {
            Token t = token(id);
            acts.push_back(action_between(prev, t));
            prev = t;
        }
        acts.push_back(action_between(prev, kEnd));
        return acts;
    }

    Action action_between(Token from, Token to) const {
        for (Action a : action_mask(from))
            if (next_[static_cast<std::size_t>(from)][static_cast<std::size_t>(a.index)] == to)
                return a;
        contract_fail("no action leads from ", obs_name(from), " to ", obs_name(to));
    }

    bool route_connected(const Route& route) const {
        for (std::size_t i = 0; i + 1 < route.size(); ++i)
            if (link(token(route[i])).to != link(token(route[i + 1])).from) return false;
        return true;
    }

    double route_length(const Route& route) const {
        double total = 0.0;
        for (const auto& id : route) total += link(token(id)).length;
        return total;
    }

    /// Short content hash identifying the network in datasets and manifests.
    std::string id_hash() const { return hex64(fnv1a64(export_edge_list())); }

    /// Plain-text edge list: `#sources`/`#sinks`/`#node` header lines followed
    /// by one `link_id from_node to_node length_m` line per directed link.
    std::string export_edge_list() const {
        std::ostringstream os;
        os << "#sources";
        for (Token t : sources_) os << ' ' << link_id(t);
        os << "\n#sinks";
        for (Token t : sinks_) os << ' ' << link_id(t);
        os << '\n';
        for (const Node& n : nodes_)
            os << "#node " << n.id << ' ' << format_num(n.x) << ' ' << format_num(n.y) << '\n';
        for (const Link& l : links_)
            os << l.id << ' ' << l.from << ' ' << l.to << ' ' << format_num(l.length) << '\n';
        return os.str();
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write network file: " + path);
        out << export_edge_list();
    }

    static RoadNetwork parse_edge_list(const std::string& text) {
        std::vector<Node> nodes;
        std::vector<Link> links;
        std::vector<std::string> sources, sinks;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            std::istringstream ls(line);
            std::string head;
            ls >> head;
            if (head == "#sources") {
                for (std::string id; ls >> id;) sources.push_back(id);
            } else if (head == "#sinks") {
                for (std::string id; ls >> id;) sinks.push_back(id);
            } else if (head == "#node") {
                Node n;
                if (!(ls >> n.id >> n.x >> n.y))
                    throw IoError(concat("network line ", lineno, ": malformed #node"));
                nodes.push_back(n);
            } else {
                Link l;
                l.id = head;
                if (!(ls >> l.from >> l.to >> l.length))
                    throw IoError(concat("network line ", lineno, ": malformed link row"));
                links.push_back(l);
            }
        }
        return RoadNetwork(std::move(nodes), std::move(links), std::move(sources),
                           std::move(sinks));
    }

    static RoadNetwork load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open network file: " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse_edge_list(buf.str());
    }

private:
    static std::string format_num(double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    }

    double heading_deg(const Link& l) const {
        const Node& a = nodes_[node_index_.at(l.from)];
        const Node& b = nodes_[node_index_.at(l.to)];
        return std::atan2(b.y - a.y, b.x - a.x) * 180.0 / M_PI;
    }

    // Relative bearing: within +-45 deg = Straight, left turns Left, right
    // turns Right; 180-degree reversals are not representable (no U-turns).
    static std::optional<int> classify_turn(double in_deg, double out_deg) {
        double d = out_deg - in_deg;
        while (d > 180.0) d -= 360.0;
        while (d <= -180.0) d += 360.0;
        if (std::abs(d) <= 45.0) return Action::kStraight;
        if (d > 45.0 && d < 135.0) return Action::kLeft;
        if (d < -45.0 && d > -135.0) return Action::kRight;
        return std::nullopt;
    }

    void build_lookup() {
        const std::size_t n = static_cast<std::size_t>(alphabet_size());
        next_.assign(n, std::vector<Token>(static_cast<std::size_t>(num_actions_), -1));
        masks_.assign(n, {});

        // links leaving each node
        std::map<std::string, std::vector<Token>> outgoing;
        for (std::size_t i = 0; i < links_.size(); ++i)
            outgoing[links_[i].from].push_back(kFirstLink + static_cast<Token>(i));

        for (std::size_t k = 0; k < sources_.size(); ++k) {
            Action a = Action::origin(static_cast<int>(k));
            next_[kStart][static_cast<std::size_t>(a.index)] = sources_[k];
            masks_[kStart].push_back(a);
        }

        for (Token t = kFirstLink; t < alphabet_size(); ++t) {
            const Link& l = link(t);
            double in_deg = heading_deg(l);
            auto it = outgoing.find(l.to);
            if (it != outgoing.end()) {
                for (Token succ : it->second) {
                    const Link& m = link(succ);
                    if (m.to == l.from) continue;  // direct reversal
                    auto turn = classify_turn(in_deg, heading_deg(m));
                    if (!turn) continue;
                    auto& slot = next_[static_cast<std::size_t>(t)][static_cast<std::size_t>(*turn)];
                    require(slot < 0, "ambiguous ", action_label({*turn}), " successor of link ",
                            l.id);
                    slot = succ;
                }
            }
            for (int a : {Action::kStraight, Action::kLeft, Action::kRight})
                if (next_[static_cast<std::size_t>(t)][static_cast<std::size_t>(a)] >= 0)
                    masks_[static_cast<std::size_t>(t)].push_back(Action{a});
            if (sinks_.count(t)) {
                next_[static_cast<std::size_t>(t)][Action::kTerminate] = kEnd;
                masks_[static_cast<std::size_t>(t)].push_back(Action::terminate());
            }
            require(!masks_[static_cast<std::size_t>(t)].empty(), "link ", l.id,
                    " has no valid action; network is not closed");
        }
    }

    std::vector<Node> nodes_;
    std::vector<Link> links_;
    std::map<std::string, std::size_t> node_index_;
    std::map<std::string, Token> token_by_id_;
    std::vector<Token> sources_;
    std::set<Token> sinks_;
    int num_actions_ = 4;
    std::vector<std::vector<Token>> next_;     // [obs][action] -> obs, -1 when masked
    std::vector<std::vector<Action>> masks_;   // [obs] -> valid actions
};

/// Rectangular grid of four-way intersections with one inbound and one
/// outbound boundary stub per boundary approach. `rows` x `cols` counts
/// intersections; block_length is the spacing in meters. Boundary stubs have
/// length block_length as well. Sources are ordered side-major (N, E, S, W),
/// then by position along the side.
inline RoadNetwork build_grid(int rows, int cols, double block_length,
                              bool terminate_anywhere = false) {
    require(rows >= 2 && cols >= 2, "build_grid: rows and cols must both be >= 2, got ", rows,
            "x", cols);
    require(block_length > 0, "build_grid: block_length must be positive");

    std::vector<Node> nodes;
    auto node_id = [](int r, int c) { return concat("n", r, "_", c); };
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            nodes.push_back({node_id(r, c), c * block_length, -r * block_length});

    std::vector<Link> links;
    auto add_link = [&](std::string id, std::string from, std::string to) {
        links.push_back({std::move(id), std::move(from), std::move(to), block_length});
    };

    // internal links, both directions per adjacent intersection pair
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c + 1 < cols; ++c) {
            add_link(concat("E", r, "_", c), node_id(r, c), node_id(r, c + 1));
            add_link(concat("W", r, "_", c + 1), node_id(r, c + 1), node_id(r, c));
        }
    for (int r = 0; r + 1 < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            add_link(concat("S", r, "_", c), node_id(r, c), node_id(r + 1, c));
            add_link(concat("N", r + 1, "_", c), node_id(r + 1, c), node_id(r, c));
        }

    // boundary stubs: external node plus inbound/outbound link per approach
    std::vector<std::string> sources, sinks;
    auto add_boundary = [&](const std::string& side, int pos, int r, int c, double ex,
                            double ey) {
        std::string ext = concat("b", side, pos);
        nodes.push_back({ext, ex, ey});
        std::string in_id = concat("In", side, pos), out_id = concat("Out", side, pos);
        add_link(in_id, ext, node_id(r, c));
        add_link(out_id, node_id(r, c), ext);
        sources.push_back(in_id);
        sinks.push_back(out_id);
    };
    for (int c = 0; c < cols; ++c) add_boundary("N", c, 0, c, c * block_length, block_length);
    for (int r = 0; r < rows; ++r)
        add_boundary("E", r, r, cols - 1, cols * block_length, -r * block_length);
    for (int c = 0; c < cols; ++c)
        add_boundary("S", c, rows - 1, c, c * block_length, -rows * block_length);
    for (int r = 0; r < rows; ++r) add_boundary("W", r, r, 0, -block_length, -r * block_length);

    return RoadNetwork(std::move(nodes), std::move(links), std::move(sources), std::move(sinks),
                       terminate_anywhere);
}

/// Loop-free routes from origin to dest in (total length, lexicographic
/// link-id sequence) order, at most k of them. Unreachable pairs give an
/// empty list.
inline std::vector<Route> k_shortest_routes(const RoadNetwork& net, const std::string& origin,
                                            const std::string& dest, std::size_t k) {
    Token origin_t = net.token(origin), dest_t = net.token(dest);
    struct Item {
        double length;
        std::vector<std::string> ids;  // lexicographic tie-break key
        std::vector<Token> seq;
    };
    auto cmp = [](const Item& a, const Item& b) {
        if (a.length != b.length) return a.length > b.length;
        return a.ids > b.ids;
    };
    std::priority_queue<Item, std::vector<Item>, decltype(cmp)> pq(cmp);
    pq.push({net.link(origin_t).length, {origin}, {origin_t}});
    std::vector<Route> out;
    while (!pq.empty() && out.size() < k) {
        Item cur = pq.top();
        pq.pop();
        Token last = cur.seq.back();
        if (last == dest_t) {
            out.push_back(cur.ids);
            continue;
        }
        for (Action a : net.action_mask(last)) {
            if (a.index == Action::kTerminate) continue;
            Token nxt = net.next_observation(last, a);
            if (std::find(cur.seq.begin(), cur.seq.end(), nxt) != cur.seq.end()) continue;
            Item ext = cur;
            ext.length += net.link(nxt).length;
            ext.ids.push_back(net.link_id(nxt));
            ext.seq.push_back(nxt);
            pq.push(std::move(ext));
        }
    }
    return out;
}

/// All minimum-total-length routes between a source and a sink,
/// lexicographically ordered.
inline std::vector<Route> enumerate_shortest_routes(const RoadNetwork& net,
                                                    const std::string& origin,
                                                    const std::string& dest) {
    Token origin_t = net.token(origin), dest_t = net.token(dest);
    require(std::find(net.sources().begin(), net.sources().end(), origin_t) !=
                net.sources().end(),
            "enumerate_shortest_routes: origin ", origin, " is not a source");
    require(net.sinks().count(dest_t), "enumerate_shortest_routes: dest ", dest,
            " is not a sink");
    std::vector<Route> out;
    // grab routes in length order until the length strictly increases
    std::size_t want = 4;
    for (;;) {
        auto routes = k_shortest_routes(net, origin, dest, want);
        if (routes.empty()) return {};
        double best = net.route_length(routes.front());
        out.clear();
        for (const auto& r : routes)
            if (net.route_length(r) <= best + 1e-9) out.push_back(r);
        if (out.size() < routes.size() || routes.size() < want) return out;
        want *= 2;
    }
}

}  // namespace trajlab::net

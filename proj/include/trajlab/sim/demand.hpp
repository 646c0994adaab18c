#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <trajlab/common/error.hpp>
#include <trajlab/common/parallel.hpp>
#include <trajlab/common/rng.hpp>
#include <trajlab/data/dataset.hpp>
#include <trajlab/net/network.hpp>

namespace trajlab::sim {

// ---------------------------------------------------------------------------
// Route choice rules. Costs are free-flow travel costs (proportional to
// length). Scale-sensitive rules normalize theta by the mean cost so the
// parameters behave the same on 100 m and 1 km blocks.

enum class RuleKind { Binomial, CLogit, Proportional, Logit, Fixed };

struct RouteChoiceRule {
    RuleKind kind = RuleKind::Fixed;
    double p = 0.35;      // Binomial success probability
    double theta = 2.0;   // cost sensitivity (C-Logit, Proportional, Logit)
    double beta = 1.0;    // C-Logit commonality weight
    double gamma = 1.0;   // C-Logit commonality exponent

    static RouteChoiceRule binomial(double p = 0.35) { return {RuleKind::Binomial, p, 2, 1, 1}; }
    static RouteChoiceRule clogit(double theta = 2.0, double beta = 1.0, double gamma = 1.0) {
        return {RuleKind::CLogit, 0.35, theta, beta, gamma};
    }
    static RouteChoiceRule proportional(double theta = 2.0) {
        return {RuleKind::Proportional, 0.35, theta, 1, 1};
    }
    static RouteChoiceRule logit(double theta = 2.0) { return {RuleKind::Logit, 0.35, theta, 1, 1}; }
    static RouteChoiceRule fixed() { return {RuleKind::Fixed, 0.35, 2, 1, 1}; }

    void validate() const {
        switch (kind) {
            case RuleKind::Binomial:
                require(p > 0.0 && p < 1.0, "Binomial rule: p must lie in (0,1), got ", p);
                break;
            case RuleKind::CLogit:
                require(theta > 0.0, "C-Logit rule: theta must be positive");
                require(beta >= 0.0, "C-Logit rule: beta must be non-negative");
                require(gamma > 0.0, "C-Logit rule: gamma must be positive");
                break;
            case RuleKind::Proportional:
            case RuleKind::Logit:
                require(theta > 0.0, "rule: theta must be positive");
                break;
            case RuleKind::Fixed:
                break;
        }
    }
};

inline std::string rule_name(RuleKind k) {
    switch (k) {
        case RuleKind::Binomial: return "binomial";
        case RuleKind::CLogit: return "clogit";
        case RuleKind::Proportional: return "proportional";
        case RuleKind::Logit: return "logit";
        case RuleKind::Fixed: return "fixed";
    }
    return "?";
}

inline RuleKind rule_from_name(const std::string& s) {
    if (s == "binomial") return RuleKind::Binomial;
    if (s == "clogit") return RuleKind::CLogit;
    if (s == "proportional") return RuleKind::Proportional;
    if (s == "logit") return RuleKind::Logit;
    if (s == "fixed") return RuleKind::Fixed;
    throw ConfigError("unknown route choice rule: " + s);
}

namespace detail {

inline double binomial_pmf(int n, int k, double p) {
    double log_c = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
    return std::exp(log_c + k * std::log(p) + (n - k) * std::log1p(-p));
}

/// Shared length between two routes (sum of lengths of common links).
inline double overlap_length(const net::RoadNetwork& net, const net::Route& a,
                             const net::Route& b) {
    double total = 0.0;
    for (const auto& id : a)
        if (std::find(b.begin(), b.end(), id) != b.end()) total += net.link(net.token(id)).length;
    return total;
}

}  // namespace detail

/// Choice probabilities over candidate routes under a rule. The vector is
/// non-negative, sums to one and is covariant under permutation of the
/// candidates (ties rank by lexicographic route identity, not input order).
inline std::vector<double> route_choice_probs(const RouteChoiceRule& rule,
                                              const std::vector<net::Route>& routes,
                                              const std::vector<double>& costs,
                                              const net::RoadNetwork* net = nullptr) {
    rule.validate();
    const std::size_t n = routes.size();
    require(n >= 1 && costs.size() == n, "route_choice_probs: routes/costs size mismatch");
    for (double c : costs) require(c > 0.0, "route_choice_probs: costs must be positive");

    double mean_cost = 0.0;
    for (double c : costs) mean_cost += c;
    mean_cost /= static_cast<double>(n);

    // Rank candidates by (cost, route identity) so ordering never depends on
    // the caller's candidate order.
    std::vector<std::size_t> rank(n);
    for (std::size_t i = 0; i < n; ++i) rank[i] = i;
    std::sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
        if (costs[a] != costs[b]) return costs[a] < costs[b];
        return routes[a] < routes[b];
    });

    std::vector<double> probs(n, 0.0);
    switch (rule.kind) {
        case RuleKind::Fixed:
            probs[rank[0]] = 1.0;
            break;
        case RuleKind::Binomial: {
            for (std::size_t k = 0; k < n; ++k)
                probs[rank[k]] =
                    detail::binomial_pmf(static_cast<int>(n) - 1, static_cast<int>(k), rule.p);
            break;
        }
        case RuleKind::Logit: {
            double norm = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                probs[i] = std::exp(-rule.theta * costs[i] / mean_cost);
                norm += probs[i];
            }
            for (double& v : probs) v /= norm;
            break;
        }
        case RuleKind::Proportional: {
            double norm = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                probs[i] = std::pow(costs[i], -rule.theta);
                norm += probs[i];
            }
            for (double& v : probs) v /= norm;
            break;
        }
        case RuleKind::CLogit: {
            require(net != nullptr, "route_choice_probs: C-Logit needs the network for overlaps");
            std::vector<double> cf(n, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                double s = 0.0;
                double len_i = net->route_length(routes[i]);
                for (std::size_t j = 0; j < n; ++j) {
                    double len_j = net->route_length(routes[j]);
                    double ov = detail::overlap_length(*net, routes[i], routes[j]);
                    s += std::pow(ov / std::sqrt(len_i * len_j), rule.gamma);
                }
                cf[i] = std::log(s);
            }
            double norm = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                probs[i] = std::exp(-rule.theta * costs[i] / mean_cost - rule.beta * cf[i]);
                norm += probs[i];
            }
            for (double& v : probs) v /= norm;
            break;
        }
    }
    return probs;
}

// ---------------------------------------------------------------------------
// Demand patterns on grid networks.

enum class PatternKind { SingleOD, OneWayMultiOD, TwoWayMultiOD };

struct DemandPattern {
    PatternKind kind = PatternKind::SingleOD;
    std::string origin;           // Single-OD only
    std::string dest;             // Single-OD only
    double major_flow_weight = 8.0;

    static DemandPattern single_od(std::string origin, std::string dest) {
        DemandPattern p;
        p.kind = PatternKind::SingleOD;
        p.origin = std::move(origin);
        p.dest = std::move(dest);
        return p;
    }
    static DemandPattern one_way_multi(double major_weight = 8.0) {
        return {PatternKind::OneWayMultiOD, "", "", major_weight};
    }
    static DemandPattern two_way_multi(double major_weight = 8.0) {
        return {PatternKind::TwoWayMultiOD, "", "", major_weight};
    }
};

inline std::string pattern_name(PatternKind k) {
    switch (k) {
        case PatternKind::SingleOD: return "single_od";
        case PatternKind::OneWayMultiOD: return "oneway_multi_od";
        case PatternKind::TwoWayMultiOD: return "twoway_multi_od";
    }
    return "?";
}

/// Canonical Single-OD pair on a grid: enter heading east at the top-left
/// intersection, leave heading east two blocks east and two blocks south of
/// the entry (six equal-length shortest routes on a 3x3 grid).
inline std::pair<std::string, std::string> canonical_single_od() { return {"InW0", "OutE2"}; }

struct OdPair {
    std::string origin;
    std::string dest;
    double weight = 1.0;
};

/// Weighted OD pairs for a pattern. U-turn pairs (inbound and outbound stub
/// of the same boundary approach) are excluded.
inline std::vector<OdPair> od_pairs(const net::RoadNetwork& net, const DemandPattern& pattern) {
    if (pattern.kind == PatternKind::SingleOD) {
        require(!pattern.origin.empty() && !pattern.dest.empty(),
                "Single-OD pattern needs origin and dest links");
        return {{pattern.origin, pattern.dest, 1.0}};
    }
    // Multi-OD patterns are defined on grid networks whose boundary stubs
    // follow the In<side><pos> / Out<side><pos> naming of build_grid.
    auto approach_of = [](const std::string& id) -> std::string {
        if (id.rfind("In", 0) == 0) return id.substr(2);
        if (id.rfind("Out", 0) == 0) return id.substr(3);
        throw ContractError("multi-OD patterns need grid boundary stubs, got link " + id);
    };
    std::vector<OdPair> pairs;
    for (net::Token s : net.sources()) {
        const std::string& o = net.link_id(s);
        for (net::Token t : net.sinks()) {
            const std::string& d = net.link_id(t);
            if (approach_of(o) == approach_of(d)) continue;  // direct U-turn
            pairs.push_back({o, d, 1.0});
        }
    }
    for (auto& pr : pairs) {
        bool west_to_east = approach_of(pr.origin)[0] == 'W' && approach_of(pr.dest)[0] == 'E';
        bool east_to_west = approach_of(pr.origin)[0] == 'E' && approach_of(pr.dest)[0] == 'W';
        if (west_to_east) pr.weight = pattern.major_flow_weight;
        if (pattern.kind == PatternKind::TwoWayMultiOD && east_to_west)
            pr.weight = pattern.major_flow_weight;
    }
    return pairs;
}

/// Shortest plus next-shortest loop-free routes for an OD pair, at most
/// k_max, ordered by (total length, lexicographic link sequence).
inline std::vector<net::Route> candidate_routes(const net::RoadNetwork& net,
                                                const std::string& origin,
                                                const std::string& dest, std::size_t k_max) {
    auto routes = net::k_shortest_routes(net, origin, dest, k_max);
    require(!routes.empty(), "candidate_routes: ", origin, " cannot reach ", dest);
    return routes;
}

struct ScenarioConfig {
    DemandPattern pattern;
    RouteChoiceRule rule;
    std::size_t k_max = 6;
};

/// Expert-demonstration generator: samples an OD pair per trajectory
/// proportionally to pattern weights, then a candidate route per the choice
/// rule. Deterministic for a given seed and invariant to worker count.
inline data::Dataset generate_demand(const net::RoadNetwork& net, const ScenarioConfig& scenario,
                                     std::size_t n, std::uint64_t seed) {
    require(n >= 1, "generate_demand: n must be >= 1");
    auto pairs = od_pairs(net, scenario.pattern);

    struct OdChoice {
        std::vector<net::Route> routes;
        std::vector<double> probs;
    };
    std::vector<OdChoice> choices(pairs.size());
    std::vector<double> weights(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        auto routes = candidate_routes(net, pairs[i].origin, pairs[i].dest, scenario.k_max);
        std::vector<double> costs;
        costs.reserve(routes.size());
        for (const auto& r : routes) costs.push_back(net.route_length(r));
        choices[i].probs = route_choice_probs(scenario.rule, routes, costs, &net);
        choices[i].routes = std::move(routes);
        weights[i] = pairs[i].weight;
    }

    const std::string tag =
        pattern_name(scenario.pattern.kind) + "." + rule_name(scenario.rule.kind);
    data::Dataset out;
    out.network_ref = net.id_hash();
    out.trajectories.resize(n);
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            Rng rng(substream(seed, "sim.trajectory", i));
            std::size_t od = rng.categorical(weights);
            std::size_t r = rng.categorical(choices[od].probs);
            out.trajectories[i] = {choices[od].routes[r], tag};
        }
    });
    return out;
}

}  // namespace trajlab::sim

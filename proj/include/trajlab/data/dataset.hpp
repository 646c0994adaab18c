#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <trajlab/common/error.hpp>
#include <trajlab/common/rng.hpp>
#include <trajlab/net/network.hpp>

namespace trajlab::data {

// A ":trunc" tag suffix marks rollouts cut at the length cap; such
// trajectories count as unknown routes in every distribution comparison.
inline constexpr const char* kTruncSuffix = ":trunc";

struct Trajectory {
    net::Route route;
    std::string tag;

    bool truncated() const {
        return tag.size() >= 6 && tag.compare(tag.size() - 6, 6, kTruncSuffix) == 0;
    }
    bool operator==(const Trajectory& o) const { return route == o.route && tag == o.tag; }
};

struct Dataset {
    std::vector<Trajectory> trajectories;
    std::string network_ref;  // id hash of the network the routes validate against

    std::size_t size() const { return trajectories.size(); }
    bool operator==(const Dataset& o) const { return trajectories == o.trajectories; }
};

inline void validate_trajectory(const net::RoadNetwork& net, const Trajectory& t,
                                const std::string& where = {}) {
    require(!t.route.empty(), "trajectory with empty route", where);
    for (const auto& id : t.route) net.token(id);  // throws on unknown link
    for (std::size_t i = 0; i + 1 < t.route.size(); ++i) {
        const net::Link& a = net.link(net.token(t.route[i]));
        const net::Link& b = net.link(net.token(t.route[i + 1]));
        if (a.to != b.from)
            contract_fail("disconnected consecutive links ", a.id, " -> ", b.id, where);
    }
}

inline void validate_dataset(const net::RoadNetwork& net, const Dataset& d) {
    for (std::size_t i = 0; i < d.trajectories.size(); ++i)
        validate_trajectory(net, d.trajectories[i], concat(" (trajectory ", i, ")"));
}

// ---------------------------------------------------------------------------
// CSV persistence. One trajectory per row: traj_id,tag,"l1 l2 l3".

inline void save_csv(const Dataset& d, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write dataset file: " + path);
    out << "traj_id,tag,links\n";
    for (std::size_t i = 0; i < d.trajectories.size(); ++i) {
        const Trajectory& t = d.trajectories[i];
        if (t.tag.find_first_of(",\"\n") != std::string::npos)
            throw IoError(concat("tag contains CSV delimiter characters: ", t.tag));
        out << i << ',' << t.tag << ",\"";
        for (std::size_t j = 0; j < t.route.size(); ++j) {
            if (j) out << ' ';
            out << t.route[j];
        }
        out << "\"\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

inline Dataset load_csv(const std::string& path, const net::RoadNetwork& net) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset file: " + path);
    Dataset d;
    d.network_ref = net.id_hash();
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno == 1) {
            if (line != "traj_id,tag,links")
                throw IoError(concat(path, ":", lineno, ": expected header traj_id,tag,links"));
            continue;
        }
        if (line.empty()) continue;
        auto c1 = line.find(',');
        auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
        if (c2 == std::string::npos)
            throw IoError(concat(path, ":", lineno, ": malformed row (need 3 fields)"));
        Trajectory t;
        t.tag = line.substr(c1 + 1, c2 - c1 - 1);
        std::string field = line.substr(c2 + 1);
        if (field.size() < 2 || field.front() != '"' || field.back() != '"')
            throw IoError(concat(path, ":", lineno, ": links field must be quoted"));
        std::istringstream ls(field.substr(1, field.size() - 2));
        for (std::string id; ls >> id;) t.route.push_back(id);
        if (t.route.empty())
            throw IoError(concat(path, ":", lineno, ": empty link sequence"));
        try {
            validate_trajectory(net, t);
        } catch (const ContractError& e) {
            throw IoError(concat(path, ":", lineno, ": ", e.what()));
        }
        d.trajectories.push_back(std::move(t));
    }
    return d;
}

// ---------------------------------------------------------------------------

/// Seeded shuffle-then-cut partition; train receives floor(ratio*N) rows.
inline std::pair<Dataset, Dataset> split(const Dataset& d, double ratio, std::uint64_t seed) {
    require(ratio > 0.0 && ratio < 1.0, "split: ratio must lie in (0,1), got ", ratio);
    std::vector<std::size_t> idx(d.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(substream(seed, "data.split"));
    rng.shuffle(idx);
    std::size_t n_train = static_cast<std::size_t>(ratio * static_cast<double>(d.size()));
    Dataset train{{}, d.network_ref}, test{{}, d.network_ref};
    for (std::size_t i = 0; i < idx.size(); ++i)
        (i < n_train ? train : test).trajectories.push_back(d.trajectories[idx[i]]);
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------

/// Empirical probability over the reference's route set; mass on routes
/// absent from the reference (or on truncated rollouts) aggregates into
/// unknown_mass. Route identity is exact link-sequence equality.
struct RouteDistribution {
    std::map<net::Route, double> probs;
    double unknown_mass = 0.0;

    double total() const {
        double s = unknown_mass;
        for (const auto& [r, p] : probs) s += p;
        return s;
    }
};

inline RouteDistribution route_distribution(const Dataset& dataset, const Dataset& reference) {
    require(!dataset.trajectories.empty(), "route_distribution: empty dataset");
    require(!reference.trajectories.empty(), "route_distribution: empty reference");
    std::map<net::Route, double> counts;
    for (const auto& t : reference.trajectories) counts[t.route];  // keys only
    double unknown = 0.0;
    for (const auto& t : dataset.trajectories) {
        auto it = counts.find(t.route);
        if (it != counts.end() && !t.truncated())
            it->second += 1.0;
        else
            unknown += 1.0;
    }
    RouteDistribution out;
    const double n = static_cast<double>(dataset.size());
    for (auto& [route, c] : counts)
        if (c > 0) out.probs[route] = c / n;
    out.unknown_mass = unknown / n;
    return out;
}

/// Distinct route count (truncated rollouts excluded).
inline std::size_t unique_route_count(const Dataset& d) {
    std::map<net::Route, bool> seen;
    for (const auto& t : d.trajectories)
        if (!t.truncated()) seen[t.route] = true;
    return seen.size();
}

}  // namespace trajlab::data

#pragma once

#include <map>
#include <string>
#include <vector>

#include <trajlab/data/dataset.hpp>
#include <trajlab/net/network.hpp>
#include <trajlab/nn/tensor.hpp>

namespace trajlab::models {

/// Observation stream of a stored trajectory: Start, links..., End.
inline std::vector<int> obs_stream(const net::RoadNetwork& net, const net::Route& route) {
    std::vector<int> s;
    s.reserve(route.size() + 2);
    s.push_back(net::kStart);
    for (const auto& id : route) s.push_back(net.token(id));
    s.push_back(net::kEnd);
    return s;
}

inline net::Route route_from_tokens(const net::RoadNetwork& net, const std::vector<int>& obs) {
    net::Route r;
    for (int t : obs)
        if (net.is_link(t)) r.push_back(net.link_id(t));
    return r;
}

/// 0/1 keep matrices shared by every model that masks logits.
struct MaskCache {
    nn::Mat action_keep;    // [S x A]: valid actions per observation
    nn::Mat next_obs_keep;  // [S x S]: feasible next observations per observation

    explicit MaskCache(const net::RoadNetwork& net) {
        const int s = net.alphabet_size(), a = net.num_actions();
        action_keep = nn::Mat::Zero(s, a);
        next_obs_keep = nn::Mat::Zero(s, s);
        for (int o = 0; o < s; ++o)
            for (net::Action act : net.action_mask(o)) {
                action_keep(o, act.index) = 1.0;
                next_obs_keep(o, net.next_observation(o, act)) = 1.0;
            }
    }

    nn::Mat gather_action_rows(const std::vector<int>& obs) const {
        nn::Mat m(static_cast<Eigen::Index>(obs.size()), action_keep.cols());
        for (std::size_t i = 0; i < obs.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = action_keep.row(obs[i]);
        return m;
    }

    nn::Mat gather_next_obs_rows(const std::vector<int>& obs) const {
        nn::Mat m(static_cast<Eigen::Index>(obs.size()), next_obs_keep.cols());
        for (std::size_t i = 0; i < obs.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = next_obs_keep.row(obs[i]);
        return m;
    }
};

// logits at masked-out entries sink to this value before a softmax; exp of
// the shifted value underflows to exactly zero in double precision
inline constexpr double kMaskSink = -1e9;

/// One distinct observation stream with its multiplicity in the batch.
/// Weights let losses stay exact means over the original multiset while the
/// network only embeds each distinct sequence once.
struct UniqueSeq {
    std::vector<int> obs;              // Start, links... (End present iff terminated)
    std::vector<net::Action> actions;  // one per decision step
    double weight = 1.0;               // multiplicity
    bool truncated = false;

    std::size_t steps() const { return actions.size(); }
};

/// Groups identical expert trajectories. Every expert route terminates, so
/// obs ends with End and actions end with Terminate.
inline std::vector<UniqueSeq> unique_expert_sequences(const net::RoadNetwork& net,
                                                      const data::Dataset& dataset) {
    require(!dataset.trajectories.empty(), "expert dataset is empty");
    std::map<net::Route, double> counts;
    for (const auto& t : dataset.trajectories) {
        require(!t.truncated(), "expert dataset contains truncated trajectories");
        counts[t.route] += 1.0;
    }
    std::vector<UniqueSeq> out;
    out.reserve(counts.size());
    for (const auto& [route, c] : counts) {
        UniqueSeq u;
        u.obs = obs_stream(net, route);
        u.actions = net.actions_for_route(route);
        u.weight = c;
        out.push_back(std::move(u));
    }
    return out;
}

}  // namespace trajlab::models

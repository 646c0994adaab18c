#pragma once

#include <trajlab/net/network.hpp>

namespace trajlab::testing {

/// Start -> L0 -> L1 -> End: every observation has exactly one valid action.
inline net::RoadNetwork chain_net() {
    std::vector<net::Node> nodes = {{"s", -1, 0}, {"n0", 0, 0}, {"n1", 1, 0}};
    std::vector<net::Link> links = {{"L0", "s", "n0", 100.0}, {"L1", "n0", "n1", 100.0}};
    return net::RoadNetwork(nodes, links, {"L0"}, {"L1"});
}

/// The chain with Terminate valid on every link: two links and a real
/// branching decision at L0 (continue or stop).
inline net::RoadNetwork chain_net_terminate_anywhere() {
    std::vector<net::Node> nodes = {{"s", -1, 0}, {"n0", 0, 0}, {"n1", 1, 0}};
    std::vector<net::Link> links = {{"L0", "s", "n0", 100.0}, {"L1", "n0", "n1", 100.0}};
    return net::RoadNetwork(nodes, links, {"L0"}, {"L1"}, true);
}

/// Start -> L0 -> {A | B}, both terminable: the smallest branching network.
inline net::RoadNetwork fork_net() {
    std::vector<net::Node> nodes = {{"s", -1, 0}, {"n0", 0, 0}, {"na", 0, 1}, {"nb", 0, -1}};
    std::vector<net::Link> links = {
        {"L0", "s", "n0", 100.0}, {"A", "n0", "na", 100.0}, {"B", "n0", "nb", 100.0}};
    return net::RoadNetwork(nodes, links, {"L0"}, {"A", "B"});
}

}  // namespace trajlab::testing

#pragma once

#include <string>
#include <vector>

#include <trajlab/common/parallel.hpp>
#include <trajlab/common/rng.hpp>
#include <trajlab/models/common.hpp>

namespace trajlab::models {

/// First-order mobility Markov chain over the observation alphabet. Start
/// and End take part in the chain, so the fitted table is a complete
/// generative model: the Start row is the empirical origin distribution and
/// End rows terminate trips.
class MmcModel {
public:
    MmcModel() = default;

    explicit MmcModel(int alphabet) { counts_ = nn::Mat::Zero(alphabet, alphabet); }

    static MmcModel fit(const data::Dataset& dataset, const net::RoadNetwork& net) {
        require(!dataset.trajectories.empty(), "mmc_fit: empty dataset");
        MmcModel m(net.alphabet_size());
        for (const auto& t : dataset.trajectories) {
            auto stream = obs_stream(net, t.route);
            for (std::size_t i = 0; i + 1 < stream.size(); ++i)
                m.counts_(stream[i], stream[i + 1]) += 1.0;
        }
        return m;
    }

    const nn::Mat& counts() const { return counts_; }

    /// Row-normalized transition probabilities; zero rows stay zero.
    nn::Mat probabilities() const {
        nn::Mat p = counts_;
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            double total = p.row(i).sum();
            if (total > 0.0) p.row(i) /= total;
        }
        return p;
    }

    double prob(int from, int to) const {
        double total = counts_.row(from).sum();
        return total > 0.0 ? counts_(from, to) / total : 0.0;
    }

    data::Dataset generate(const net::RoadNetwork& net, std::size_t n, std::size_t max_len,
                           std::uint64_t seed, const std::string& tag = "mmc") const {
        require(counts_.rows() == net.alphabet_size(), "mmc generate: alphabet mismatch");
        data::Dataset out;
        out.network_ref = net.id_hash();
        out.trajectories.resize(n);
        parallel_for(n, [&](std::size_t begin, std::size_t end) {
            for (std::size_t i = begin; i < end; ++i) {
                Rng rng(substream(seed, "mmc.generate", i));
                net::Route route;
                int cur = net::kStart;
                bool terminated = false;
                while (route.size() < max_len) {
                    double total = counts_.row(cur).sum();
                    if (total <= 0.0)
                        contract_fail("mmc generate: zero-mass row at ", net.obs_name(cur));
                    double u = rng.uniform01() * total;
                    double acc = 0.0;
                    int nxt = -1;
                    for (Eigen::Index j = 0; j < counts_.cols(); ++j) {
                        acc += counts_(cur, j);
                        if (u < acc) {
                            nxt = static_cast<int>(j);
                            break;
                        }
                    }
                    if (nxt < 0) nxt = static_cast<int>(counts_.cols()) - 1;
                    if (nxt == net::kEnd) {
                        terminated = true;
                        break;
                    }
                    route.push_back(net.link_id(nxt));
                    cur = nxt;
                }
                out.trajectories[i] = {std::move(route),
                                       terminated ? tag : tag + data::kTruncSuffix};
            }
        });
        return out;
    }

    std::vector<std::pair<std::string, const nn::Mat*>> tensors() const {
        return {{"mmc.counts", &counts_}};
    }

    static MmcModel from_tensors(const std::map<std::string, nn::Mat>& t) {
        MmcModel m;
        m.counts_ = t.at("mmc.counts");
        return m;
    }

private:
    nn::Mat counts_;
};

}  // namespace trajlab::models

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <trajlab/common/parallel.hpp>
#include <trajlab/common/rng.hpp>
#include <trajlab/models/common.hpp>
#include <trajlab/nn/checkpoint.hpp>

namespace trajlab::models {

enum class MaxEntVariant { SVF, SAVF };

inline std::string variant_name(MaxEntVariant v) {
    return v == MaxEntVariant::SVF ? "maxent_svf" : "maxent_savf";
}

struct MaxEntConfig {
    double lr = 0.2;
    int iterations = 200;
    double tol = 1e-4;            // max-abs gradient for convergence
    double horizon_factor = 1.5;  // times the longest expert decision count
};

/// Maximum-entropy IRL over the observation space with one-hot features per
/// state (SVF) or per state-action pair (SAVF). Finite-horizon soft value
/// iteration (log-sum-exp backups over masked actions, no discount) induces
/// a time-varying stochastic policy; weights ascend the difference between
/// empirical and expected visitation frequencies.
class MaxEntModel {
public:
    MaxEntModel() = default;

    MaxEntModel(const net::RoadNetwork& net, MaxEntVariant variant, int horizon)
        : variant_(variant), horizon_(horizon) {
        const int s = net.alphabet_size(), a = net.num_actions();
        weights_ = variant == MaxEntVariant::SVF ? nn::Mat::Zero(s, 1) : nn::Mat::Zero(s, a);
    }

    MaxEntVariant variant() const { return variant_; }
    int horizon() const { return horizon_; }
    const nn::Mat& weights() const { return weights_; }
    nn::Mat& weights() { return weights_; }
    bool converged() const { return converged_; }
    const std::vector<nn::Mat>& policy() const { return policy_; }

    /// Per-state reward of moving to s' via (s,a): SVF rewards arrival at
    /// s', SAVF rewards the pair itself.
    double reward(const net::RoadNetwork& net, int s, net::Action a) const {
        int nxt = net.next_observation(s, a);
        return variant_ == MaxEntVariant::SVF ? (nxt == net::kEnd ? 0.0 : weights_(nxt, 0))
                                              : weights_(s, a.index);
    }

    /// Soft value iteration under the current weights; fills the per-step
    /// policy table policy()[t](s, a).
    void solve_policy(const net::RoadNetwork& net) {
        const int s_count = net.alphabet_size(), a_count = net.num_actions();
        policy_.assign(static_cast<std::size_t>(horizon_), nn::Mat::Zero(s_count, a_count));
        std::vector<double> value_next(static_cast<std::size_t>(s_count), 0.0);
        for (int t = horizon_ - 1; t >= 0; --t) {
            std::vector<double> value(static_cast<std::size_t>(s_count), 0.0);
            for (int s = 0; s < s_count; ++s) {
                if (s == net::kEnd) continue;  // absorbing, value 0
                const auto& mask = net.action_mask(s);
                double mx = -std::numeric_limits<double>::infinity();
                std::vector<double> q(mask.size());
                for (std::size_t k = 0; k < mask.size(); ++k) {
                    int nxt = net.next_observation(s, mask[k]);
                    q[k] = reward(net, s, mask[k]) + (nxt == net::kEnd ? 0.0 : value_next[static_cast<std::size_t>(nxt)]);
                    mx = std::max(mx, q[k]);
                }
                double lse = 0.0;
                for (double qv : q) lse += std::exp(qv - mx);
                double v = mx + std::log(lse);
                value[static_cast<std::size_t>(s)] = v;
                for (std::size_t k = 0; k < mask.size(); ++k)
                    policy_[static_cast<std::size_t>(t)](s, mask[k].index) = std::exp(q[k] - v);
            }
            value_next = std::move(value);
        }
    }

    /// Expected per-trajectory visitation frequencies under the current
    /// policy, by forward propagation of the Start distribution. Shape
    /// matches the weights ([S x 1] states or [S x A] pairs).
    nn::Mat expected_visitations(const net::RoadNetwork& net) const {
        require(!policy_.empty(), "expected_visitations: policy not solved");
        const int s_count = net.alphabet_size(), a_count = net.num_actions();
        nn::Mat freq = variant_ == MaxEntVariant::SVF ? nn::Mat::Zero(s_count, 1)
                                                      : nn::Mat::Zero(s_count, a_count);
        std::vector<double> density(static_cast<std::size_t>(s_count), 0.0);
        density[net::kStart] = 1.0;
        for (int t = 0; t < horizon_; ++t) {
            std::vector<double> next_density(static_cast<std::size_t>(s_count), 0.0);
            for (int s = 0; s < s_count; ++s) {
                double d = density[static_cast<std::size_t>(s)];
                if (d <= 0.0 || s == net::kEnd) continue;
                for (net::Action a : net.action_mask(s)) {
                    double mass = d * policy_[static_cast<std::size_t>(t)](s, a.index);
                    if (mass <= 0.0) continue;
                    int nxt = net.next_observation(s, a);
                    if (variant_ == MaxEntVariant::SVF) {
                        if (nxt != net::kEnd) freq(nxt, 0) += mass;
                    } else {
                        freq(s, a.index) += mass;
                    }
                    next_density[static_cast<std::size_t>(nxt)] += mass;
                }
            }
            density = std::move(next_density);
        }
        return freq;
    }

    /// Mean per-trajectory empirical visitation counts of the expert data.
    nn::Mat empirical_visitations(const data::Dataset& dataset,
                                  const net::RoadNetwork& net) const {
        const int s_count = net.alphabet_size(), a_count = net.num_actions();
        nn::Mat freq = variant_ == MaxEntVariant::SVF ? nn::Mat::Zero(s_count, 1)
                                                      : nn::Mat::Zero(s_count, a_count);
        for (const auto& t : dataset.trajectories) {
            if (variant_ == MaxEntVariant::SVF) {
                for (const auto& id : t.route) freq(net.token(id), 0) += 1.0;
            } else {
                auto acts = net.actions_for_route(t.route);
                int cur = net::kStart;
                for (const net::Action& a : acts) {
                    freq(cur, a.index) += 1.0;
                    cur = net.next_observation(cur, a);
                }
            }
        }
        freq /= static_cast<double>(dataset.size());
        return freq;
    }

    struct TrainLog {
        std::vector<double> grad_norms;  // max-abs gradient per iteration
        bool converged = false;
    };

    static std::pair<MaxEntModel, TrainLog> train(const data::Dataset& dataset,
                                                  const net::RoadNetwork& net,
                                                  MaxEntVariant variant,
                                                  const MaxEntConfig& cfg) {
        require(!dataset.trajectories.empty(), "maxent_train: empty dataset");
        std::size_t max_steps = 0;
        for (const auto& t : dataset.trajectories)
            max_steps = std::max(max_steps, t.route.size() + 1);  // + Terminate
        int horizon =
            static_cast<int>(std::ceil(cfg.horizon_factor * static_cast<double>(max_steps)));
        MaxEntModel model(net, variant, horizon);
        nn::Mat empirical = model.empirical_visitations(dataset, net);

        TrainLog log;
        nn::Mat best_weights = model.weights_;
        double best_norm = std::numeric_limits<double>::infinity();
        for (int it = 0; it < cfg.iterations; ++it) {
            model.solve_policy(net);
            nn::Mat grad = empirical - model.expected_visitations(net);
            double norm = grad.cwiseAbs().maxCoeff();
            log.grad_norms.push_back(norm);
            if (norm < best_norm) {
                best_norm = norm;
                best_weights = model.weights_;
            }
            if (norm < cfg.tol) {
                log.converged = true;
                break;
            }
            model.weights_ += cfg.lr * grad;
        }
        if (!log.converged) model.weights_ = best_weights;
        model.solve_policy(net);
        model.converged_ = log.converged;
        return {std::move(model), std::move(log)};
    }

    data::Dataset generate(const net::RoadNetwork& net, std::size_t n, std::size_t max_len,
                           std::uint64_t seed, const std::string& tag_base = "") const {
        require(!policy_.empty(), "maxent generate: policy not solved");
        const std::string tag = tag_base.empty() ? variant_name(variant_) : tag_base;
        data::Dataset out;
        out.network_ref = net.id_hash();
        out.trajectories.resize(n);
        parallel_for(n, [&](std::size_t begin, std::size_t end) {
            for (std::size_t i = begin; i < end; ++i) {
                Rng rng(substream(seed, "maxent.generate", i));
                net::Route route;
                int cur = net::kStart;
                bool terminated = false;
                for (int t = 0; t < horizon_ && route.size() < max_len; ++t) {
                    const auto& mask = net.action_mask(cur);
                    std::vector<double> w(mask.size());
                    for (std::size_t k = 0; k < mask.size(); ++k)
                        w[k] = policy_[static_cast<std::size_t>(t)](cur, mask[k].index);
                    net::Action a = mask[rng.categorical(w)];
                    int nxt = net.next_observation(cur, a);
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
        horizon_cache_ = nn::Mat::Constant(1, 1, static_cast<double>(horizon_));
        return {{variant_name(variant_) + ".weights", &weights_},
                {variant_name(variant_) + ".horizon", &horizon_cache_}};
    }

    static MaxEntModel from_tensors(const std::map<std::string, nn::Mat>& t,
                                    const net::RoadNetwork& net) {
        MaxEntVariant variant =
            t.count("maxent_svf.weights") ? MaxEntVariant::SVF : MaxEntVariant::SAVF;
        std::string base = variant_name(variant);
        MaxEntModel m(net, variant,
                      static_cast<int>(std::llround(t.at(base + ".horizon")(0, 0))));
        m.weights_ = t.at(base + ".weights");
        require(m.weights_.rows() == net.alphabet_size(), "maxent weights/alphabet mismatch");
        m.solve_policy(net);
        return m;
    }

private:
    MaxEntVariant variant_ = MaxEntVariant::SVF;
    int horizon_ = 0;
    bool converged_ = false;
    nn::Mat weights_;
    std::vector<nn::Mat> policy_;  // per step t: [S x A]
    mutable nn::Mat horizon_cache_;
};

}  // namespace trajlab::models

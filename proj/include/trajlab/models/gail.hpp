#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <trajlab/common/parallel.hpp>
#include <trajlab/common/rng.hpp>
#include <trajlab/models/common.hpp>
#include <trajlab/nn/adam.hpp>
#include <trajlab/nn/checkpoint.hpp>
#include <trajlab/nn/rnn.hpp>
#include <trajlab/nn/tape.hpp>

namespace trajlab::gail {

using models::MaskCache;
using models::UniqueSeq;

// Discriminator outputs are clamped to [1e-7, 1-1e-7]; rewards -log D are
// therefore bounded by this cap and always strictly positive.
inline constexpr double kProbClamp = 1e-7;
inline const double kRewardCap = -std::log(kProbClamp);

struct TrainConfig {
    int iterations = 20000;
    std::size_t samples = 20000;     // rollouts per iteration
    int discrim_updates = 2;
    int gen_updates = 6;
    int hidden = 64;
    int layers = 3;
    double lr = 0.00005;
    double gamma = 0.95;             // reward discount
    double entropy_coef = 0.01;      // lambda
    std::size_t max_len = 0;         // link cap per rollout; 0 = 3x longest expert route
    std::uint64_t seed = 1;
    std::size_t mode_collapse_floor = 2;   // unique-route floor
    int mode_collapse_window = 50;         // consecutive iterations below floor
    std::size_t chunk = 256;               // sequences per backward chunk

    void validate() const {
        require(iterations > 0 && samples > 0 && discrim_updates > 0 && gen_updates > 0 &&
                    hidden > 0 && layers > 0 && chunk > 0,
                "TrainConfig: counts must be positive");
        require(lr > 0.0, "TrainConfig: lr must be positive");
        require(gamma > 0.0 && gamma <= 1.0, "TrainConfig: gamma must lie in (0,1]");
        require(entropy_coef >= 0.0, "TrainConfig: entropy coefficient must be >= 0");
    }
};

// ---------------------------------------------------------------------------
// The three modules. Each owns its recurrent embedding, so no objective's
// backward pass can reach another module's parameters.

namespace detail {
struct EmbeddingHead {
    nn::RecurrentStack stack;
    nn::Param head_w;  // [H x A]
    nn::Param head_b;  // [1 x A]

    EmbeddingHead() = default;
    // Heads start at zero: the policy begins at the masked-uniform
    // distribution, value estimates at zero and the discriminator at 1/2, so
    // no module sees an arbitrary initial asymmetry from the other two.
    EmbeddingHead(const std::string& prefix, int alphabet, int actions, int hidden, int layers,
                  std::uint64_t seed)
        : stack(prefix, alphabet, hidden, layers, substream(seed, prefix + ".stack")) {
        head_w.init_zero(prefix + ".head.w", hidden, actions);
        head_b.init_zero(prefix + ".head.b", 1, actions);
    }

    std::vector<nn::Param*> params() {
        auto out = stack.params();
        out.push_back(&head_w);
        out.push_back(&head_b);
        return out;
    }

    /// Head output rows for each step's active rows, without gradients.
    /// tops[t] are the step-t hidden states of the padded batch.
    nn::Mat head_rows(const nn::Mat& hidden_rows) const {
        nn::Mat out = hidden_rows * head_w.value;
        out.rowwise() += head_b.value.row(0);
        return out;
    }
};

/// Step-t hidden states of a padded batch without tape records.
inline std::vector<nn::Mat> forward_tops_nograd(const nn::RecurrentStack& stack,
                                                const std::vector<std::vector<int>>& tokens,
                                                std::size_t max_steps) {
    auto state = stack.initial_state(static_cast<Eigen::Index>(tokens.size()));
    std::vector<nn::Mat> tops;
    tops.reserve(max_steps);
    for (std::size_t t = 0; t < max_steps; ++t) {
        std::vector<int> col(tokens.size());
        for (std::size_t b = 0; b < tokens.size(); ++b)
            col[b] = t < tokens[b].size() ? tokens[b][t] : stack.pad_token();
        stack.step(col, state);
        tops.push_back(state.h.back());
    }
    return tops;
}
}  // namespace detail

struct PolicyGenerator {
    detail::EmbeddingHead net;

    PolicyGenerator() = default;
    PolicyGenerator(int alphabet, int actions, int hidden, int layers, std::uint64_t seed)
        : net("policy", alphabet, actions, hidden, layers, seed) {}

    /// Masked action distribution for one hidden row.
    std::vector<double> action_probs(const nn::Mat& hidden_row, int obs,
                                     const MaskCache& masks) const {
        nn::Mat logits = hidden_row * net.head_w.value;
        logits.row(0) += net.head_b.value.row(0);
        const Eigen::Index a_count = logits.cols();
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index a = 0; a < a_count; ++a)
            if (masks.action_keep(obs, a) > 0.0) mx = std::max(mx, logits(0, a));
        std::vector<double> probs(static_cast<std::size_t>(a_count), 0.0);
        double z = 0.0;
        for (Eigen::Index a = 0; a < a_count; ++a)
            if (masks.action_keep(obs, a) > 0.0) {
                probs[static_cast<std::size_t>(a)] = std::exp(logits(0, a) - mx);
                z += probs[static_cast<std::size_t>(a)];
            }
        for (double& p : probs) p /= z;
        return probs;
    }
};

struct ValueEstimator {
    detail::EmbeddingHead net;  // head column a is Q(s, a)

    ValueEstimator() = default;
    ValueEstimator(int alphabet, int actions, int hidden, int layers, std::uint64_t seed)
        : net("value", alphabet, actions, hidden, layers, seed) {}
};

struct Discriminator {
    detail::EmbeddingHead net;  // head column a is the logit of D(s, a)

    Discriminator() = default;
    Discriminator(int alphabet, int actions, int hidden, int layers, std::uint64_t seed)
        : net("discrim", alphabet, actions, hidden, layers, seed) {}
};

/// R(s, a) = -log D(s, a) with D clamped away from {0, 1}.
inline double discriminator_reward(double logit) {
    double neg_log_d = std::log1p(std::exp(-std::abs(logit))) + std::max(-logit, 0.0);
    return std::min(neg_log_d, kRewardCap);
}

// ---------------------------------------------------------------------------
// Rollouts.

struct RolloutTraj {
    std::vector<int> obs;              // Start, links...; ends with End iff terminated
    std::vector<net::Action> actions;  // one per decision step
    bool truncated = false;
    std::vector<double> rewards;       // filled by compute_rewards
    std::vector<double> returns;

    std::size_t steps() const { return actions.size(); }
};

struct RolloutBatch {
    std::vector<RolloutTraj> trajs;
};

/// Samples n trajectories autoregressively under the policy. Each walker
/// draws from its own (seed, index) substream, so the result is independent
/// of batching and worker count, and identical across runs.
inline RolloutBatch rollout(const PolicyGenerator& policy, const net::RoadNetwork& net,
                            std::size_t n, std::size_t max_len, std::uint64_t seed) {
    require(max_len >= 1, "rollout: max_len must be >= 1");
    MaskCache masks(net);
    RolloutBatch batch;
    batch.trajs.resize(n);

    struct Walker {
        std::size_t index;
        int cur = net::kStart;
        Rng rng;
    };
    std::vector<Walker> active;
    active.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        batch.trajs[i].obs.push_back(net::kStart);
        active.push_back({i, net::kStart, Rng(substream(seed, "gail.rollout", i))});
    }

    auto state = policy.net.stack.initial_state(static_cast<Eigen::Index>(n));
    while (!active.empty()) {
        std::vector<int> tokens(active.size());
        for (std::size_t b = 0; b < active.size(); ++b) tokens[b] = active[b].cur;
        policy.net.stack.step(tokens, state);
        nn::Mat logits = policy.net.head_rows(state.h.back());

        std::vector<bool> done(active.size(), false);
        for (std::size_t b = 0; b < active.size(); ++b) {
            Walker& w = active[b];
            RolloutTraj& traj = batch.trajs[w.index];
            // masked softmax sample over valid actions
            double mx = -std::numeric_limits<double>::infinity();
            for (Eigen::Index a = 0; a < logits.cols(); ++a)
                if (masks.action_keep(w.cur, a) > 0.0)
                    mx = std::max(mx, logits(static_cast<Eigen::Index>(b), a));
            double z = 0.0;
            for (Eigen::Index a = 0; a < logits.cols(); ++a)
                if (masks.action_keep(w.cur, a) > 0.0)
                    z += std::exp(logits(static_cast<Eigen::Index>(b), a) - mx);
            double u = w.rng.uniform01() * z;
            double acc = 0.0;
            int chosen = -1;
            for (Eigen::Index a = 0; a < logits.cols(); ++a) {
                if (masks.action_keep(w.cur, a) <= 0.0) continue;
                acc += std::exp(logits(static_cast<Eigen::Index>(b), a) - mx);
                chosen = static_cast<int>(a);
                if (u < acc) break;
            }
            traj.actions.push_back(net::Action{chosen});
            int nxt = net.next_observation(w.cur, net::Action{chosen});
            traj.obs.push_back(nxt);
            if (nxt == net::kEnd) {
                done[b] = true;
            } else {
                w.cur = nxt;
                if (traj.obs.size() - 1 >= max_len) {  // links recorded so far
                    traj.truncated = true;
                    done[b] = true;
                }
            }
        }
        // compact finished walkers out of the batch
        std::vector<Eigen::Index> keep;
        for (std::size_t b = 0; b < done.size(); ++b)
            if (!done[b]) keep.push_back(static_cast<Eigen::Index>(b));
        if (keep.size() != active.size()) {
            std::vector<Walker> next_active;
            next_active.reserve(keep.size());
            for (Eigen::Index b : keep) next_active.push_back(std::move(active[static_cast<std::size_t>(b)]));
            active = std::move(next_active);
            for (nn::Mat& h : state.h) {
                nn::Mat compacted(static_cast<Eigen::Index>(keep.size()), h.cols());
                for (std::size_t r = 0; r < keep.size(); ++r)
                    compacted.row(static_cast<Eigen::Index>(r)) = h.row(keep[r]);
                h = std::move(compacted);
            }
        }
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Unique-sequence view of a batch. Losses stay exact weighted means over the
// original multiset while each distinct sequence is embedded once.

struct UniqueBatch {
    std::vector<UniqueSeq> seqs;
    std::vector<std::vector<double>> rewards;  // per seq, per step
    std::vector<std::vector<double>> returns;
    double total_pairs = 0.0;  // sum of weight * steps
    std::size_t max_steps = 0;

    static UniqueBatch from_rollouts(const RolloutBatch& batch) {
        UniqueBatch out;
        std::map<std::vector<int>, std::size_t> index;
        for (const RolloutTraj& t : batch.trajs) {
            auto [it, fresh] = index.emplace(t.obs, out.seqs.size());
            if (fresh) {
                UniqueSeq u;
                u.obs = t.obs;
                u.actions = t.actions;
                u.truncated = t.truncated;
                u.weight = 0.0;
                out.seqs.push_back(std::move(u));
                out.rewards.emplace_back();
                out.returns.emplace_back();
            }
            out.seqs[it->second].weight += 1.0;
        }
        for (const UniqueSeq& u : out.seqs) {
            out.total_pairs += u.weight * static_cast<double>(u.steps());
            out.max_steps = std::max(out.max_steps, u.steps());
        }
        return out;
    }

    static UniqueBatch from_expert(const net::RoadNetwork& net, const data::Dataset& dataset) {
        UniqueBatch out;
        out.seqs = models::unique_expert_sequences(net, dataset);
        out.rewards.resize(out.seqs.size());
        out.returns.resize(out.seqs.size());
        for (const UniqueSeq& u : out.seqs) {
            out.total_pairs += u.weight * static_cast<double>(u.steps());
            out.max_steps = std::max(out.max_steps, u.steps());
        }
        return out;
    }

    /// Decision-point token prefixes (obs without the final unacted token).
    std::vector<std::vector<int>> decision_inputs() const {
        std::vector<std::vector<int>> inputs;
        inputs.reserve(seqs.size());
        for (const UniqueSeq& u : seqs)
            inputs.emplace_back(u.obs.begin(), u.obs.begin() + static_cast<std::ptrdiff_t>(u.steps()));
        return inputs;
    }

    /// Full streams including the final observation (End or the unacted link).
    std::vector<std::vector<int>> extended_inputs() const {
        std::vector<std::vector<int>> inputs;
        inputs.reserve(seqs.size());
        for (const UniqueSeq& u : seqs) inputs.push_back(u.obs);
        return inputs;
    }

    std::size_t unique_routes() const { return seqs.size(); }
};

/// Discriminator logits z(s_t, a_t) for every step of every unique sequence.
inline std::vector<std::vector<double>> discriminator_logits(const Discriminator& d,
                                                             const UniqueBatch& batch) {
    std::vector<std::vector<double>> out(batch.seqs.size());
    if (batch.seqs.empty()) return out;
    auto tops = detail::forward_tops_nograd(d.net.stack, batch.decision_inputs(), batch.max_steps);
    for (std::size_t i = 0; i < batch.seqs.size(); ++i)
        out[i].resize(batch.seqs[i].steps());
    for (std::size_t t = 0; t < batch.max_steps; ++t) {
        nn::Mat heads = d.net.head_rows(tops[t]);
        for (std::size_t i = 0; i < batch.seqs.size(); ++i)
            if (t < batch.seqs[i].steps())
                out[i][t] = heads(static_cast<Eigen::Index>(i), batch.seqs[i].actions[t].index);
    }
    return out;
}

/// Fills rewards with -log D(s_t, a_t) and returns with the discounted
/// suffix sums G_t = r_t + gamma * G_{t+1}, G after the last step being 0.
inline void compute_rewards(UniqueBatch& batch, const Discriminator& d, double gamma) {
    auto logits = discriminator_logits(d, batch);
    for (std::size_t i = 0; i < batch.seqs.size(); ++i) {
        const std::size_t n = batch.seqs[i].steps();
        batch.rewards[i].resize(n);
        batch.returns[i].resize(n);
        for (std::size_t t = 0; t < n; ++t)
            batch.rewards[i][t] = discriminator_reward(logits[i][t]);
        double g = 0.0;
        for (std::size_t t = n; t-- > 0;) {
            g = batch.rewards[i][t] + gamma * g;
            batch.returns[i][t] = g;
        }
    }
}

/// Same, scattered back onto the per-trajectory records of a RolloutBatch.
inline void compute_rewards(RolloutBatch& batch, const Discriminator& d, double gamma) {
    UniqueBatch unique = UniqueBatch::from_rollouts(batch);
    compute_rewards(unique, d, gamma);
    std::map<std::vector<int>, std::size_t> index;
    for (std::size_t i = 0; i < unique.seqs.size(); ++i) index[unique.seqs[i].obs] = i;
    for (RolloutTraj& t : batch.trajs) {
        std::size_t i = index.at(t.obs);
        t.rewards = unique.rewards[i];
        t.returns = unique.returns[i];
    }
}

// ---------------------------------------------------------------------------
// Updates. Each objective is an exact weighted mean over (history, action)
// step-pairs; backward passes run in sequence chunks that accumulate into
// Param::grad before a single optimizer step.

namespace detail {

struct StepSlice {
    std::vector<int> rows;      // active rows of the chunk at this step
    std::vector<int> obs;       // observation at the decision point
    std::vector<int> acts;      // chosen action index
    std::vector<double> weight; // sequence multiplicity
};

inline std::vector<StepSlice> make_slices(const UniqueBatch& batch, std::size_t begin,
                                          std::size_t end, std::size_t max_steps) {
    std::vector<StepSlice> slices(max_steps);
    for (std::size_t t = 0; t < max_steps; ++t)
        for (std::size_t i = begin; i < end; ++i) {
            const UniqueSeq& u = batch.seqs[i];
            if (t >= u.steps()) continue;
            slices[t].rows.push_back(static_cast<int>(i - begin));
            slices[t].obs.push_back(u.obs[t]);
            slices[t].acts.push_back(u.actions[t].index);
            slices[t].weight.push_back(u.weight);
        }
    return slices;
}

}  // namespace detail

/// Bootstrap targets r_t + gamma * E_pi[Q(s_{t+1}, .)] under the current
/// value and policy parameters. Terminated final steps bootstrap to zero;
/// truncated rollouts bootstrap through their final unacted observation.
inline std::vector<std::vector<double>> value_targets(const ValueEstimator& value,
                                                      const PolicyGenerator& policy,
                                                      const UniqueBatch& batch, double gamma,
                                                      const MaskCache& masks) {
    auto extended = batch.extended_inputs();
    std::size_t ext_steps = 0;
    for (const auto& s : extended) ext_steps = std::max(ext_steps, s.size());
    auto v_tops = detail::forward_tops_nograd(value.net.stack, extended, ext_steps);
    auto p_tops = detail::forward_tops_nograd(policy.net.stack, extended, ext_steps);

    std::vector<std::vector<double>> targets(batch.seqs.size());
    for (std::size_t i = 0; i < batch.seqs.size(); ++i)
        targets[i].resize(batch.seqs[i].steps());
    for (std::size_t next_t = 1; next_t < ext_steps; ++next_t) {
        nn::Mat q_heads = value.net.head_rows(v_tops[next_t]);
        nn::Mat p_logits = policy.net.head_rows(p_tops[next_t]);
        for (std::size_t i = 0; i < batch.seqs.size(); ++i) {
            const UniqueSeq& u = batch.seqs[i];
            std::size_t t = next_t - 1;
            if (t >= u.steps()) continue;
            double bootstrap = 0.0;
            const bool final_step = (t + 1 == u.steps());
            if (!final_step || u.truncated) {
                // expectation of Q over the masked policy at the next history
                const int next_obs = u.obs[t + 1];
                const Eigen::Index row = static_cast<Eigen::Index>(i);
                double mx = -std::numeric_limits<double>::infinity();
                for (Eigen::Index a = 0; a < p_logits.cols(); ++a)
                    if (masks.action_keep(next_obs, a) > 0.0)
                        mx = std::max(mx, p_logits(row, a));
                double z = 0.0, acc = 0.0;
                for (Eigen::Index a = 0; a < p_logits.cols(); ++a)
                    if (masks.action_keep(next_obs, a) > 0.0) {
                        double p = std::exp(p_logits(row, a) - mx);
                        z += p;
                        acc += p * q_heads(row, a);
                    }
                bootstrap = acc / z;
            }
            targets[i][t] = batch.rewards[i][t] + gamma * bootstrap;
        }
    }
    return targets;
}

/// Weighted mean squared error between Q(s_t, a_t) and fixed targets. The
/// targets are inputs, never differentiated through.
inline double value_objective(ValueEstimator& value, const UniqueBatch& batch,
                              const std::vector<std::vector<double>>& targets,
                              std::size_t chunk, bool with_grad) {
    require(batch.total_pairs > 0.0, "update_value: empty batch");
    double total = 0.0;
    for (std::size_t begin = 0; begin < batch.seqs.size(); begin += chunk) {
        std::size_t end = std::min(batch.seqs.size(), begin + chunk);
        std::size_t max_steps = 0;
        std::vector<std::vector<int>> inputs;
        for (std::size_t i = begin; i < end; ++i) {
            inputs.emplace_back(batch.seqs[i].obs.begin(),
                                batch.seqs[i].obs.begin() +
                                    static_cast<std::ptrdiff_t>(batch.seqs[i].steps()));
            max_steps = std::max(max_steps, inputs.back().size());
        }
        auto slices = detail::make_slices(batch, begin, end, max_steps);
        nn::Tape tape;
        auto lv = value.net.stack.leaves(tape);
        nn::Var hw = tape.leaf(value.net.head_w);
        nn::Var hb = tape.leaf(value.net.head_b);
        auto tops = value.net.stack.forward_all_steps(tape, lv, inputs, max_steps);
        nn::Var loss;
        for (std::size_t t = 0; t < max_steps; ++t) {
            const auto& sl = slices[t];
            if (sl.rows.empty()) continue;
            nn::Var h = tape.gather_rows(tops[t], sl.rows);
            nn::Var q_all = tape.add_rowvec(tape.matmul(h, hw), hb);
            nn::Var q = tape.select_per_row(q_all, sl.acts);
            nn::Mat target(static_cast<Eigen::Index>(sl.rows.size()), 1);
            nn::Mat w(static_cast<Eigen::Index>(sl.rows.size()), 1);
            for (std::size_t r = 0; r < sl.rows.size(); ++r) {
                std::size_t i = begin + static_cast<std::size_t>(sl.rows[r]);
                target(static_cast<Eigen::Index>(r), 0) = targets[i][t];
                w(static_cast<Eigen::Index>(r), 0) = sl.weight[r] / batch.total_pairs;
            }
            nn::Var err = tape.square(tape.sub(q, tape.constant(target)));
            nn::Var term = tape.weighted_sum_all(err, w);
            loss = loss.valid() ? tape.add(loss, term) : term;
        }
        double v = tape.scalar(loss);
        require(std::isfinite(v), "update_value: non-finite loss; iteration aborted");
        if (with_grad) tape.backward(loss);
        total += v;
    }
    return total;
}

/// One optimizer step on the value objective; returns the post-step value.
inline double update_value(ValueEstimator& value, const PolicyGenerator& policy,
                           const UniqueBatch& batch, double gamma, const MaskCache& masks,
                           nn::Adam& opt, std::size_t chunk) {
    auto targets = value_targets(value, policy, batch, gamma, masks);
    value_objective(value, batch, targets, chunk, true);
    opt.step(value.net.params());
    return value_objective(value, batch, targets, chunk, false);
}

/// Q(s_t, a_t) coefficients from the value estimator for each pair.
inline std::vector<std::vector<double>> policy_coefficients(const ValueEstimator& value,
                                                            const UniqueBatch& batch) {
    auto v_tops =
        detail::forward_tops_nograd(value.net.stack, batch.decision_inputs(), batch.max_steps);
    std::vector<std::vector<double>> coeff(batch.seqs.size());
    for (std::size_t i = 0; i < batch.seqs.size(); ++i)
        coeff[i].resize(batch.seqs[i].steps());
    for (std::size_t t = 0; t < batch.max_steps; ++t) {
        nn::Mat q = value.net.head_rows(v_tops[t]);
        for (std::size_t i = 0; i < batch.seqs.size(); ++i)
            if (t < batch.seqs[i].steps())
                coeff[i][t] = q(static_cast<Eigen::Index>(i), batch.seqs[i].actions[t].index);
    }
    return coeff;
}

/// Loss -(J_policy + lambda * H) over the batch; coefficients enter as
/// constants. j_policy/entropy outputs report the two ascent components.
inline double policy_objective(PolicyGenerator& policy, const UniqueBatch& batch,
                               const std::vector<std::vector<double>>& coeff,
                               double entropy_coef, const MaskCache& masks, std::size_t chunk,
                               bool with_grad, double* j_policy_out = nullptr,
                               double* entropy_out = nullptr) {
    require(batch.total_pairs > 0.0, "update_policy: empty batch");
    double total_j = 0.0, total_entropy = 0.0, total_loss = 0.0;
    for (std::size_t begin = 0; begin < batch.seqs.size(); begin += chunk) {
        std::size_t end = std::min(batch.seqs.size(), begin + chunk);
        std::size_t max_steps = 0;
        std::vector<std::vector<int>> inputs;
        for (std::size_t i = begin; i < end; ++i) {
            inputs.emplace_back(batch.seqs[i].obs.begin(),
                                batch.seqs[i].obs.begin() +
                                    static_cast<std::ptrdiff_t>(batch.seqs[i].steps()));
            max_steps = std::max(max_steps, inputs.back().size());
        }
        auto slices = detail::make_slices(batch, begin, end, max_steps);
        nn::Tape tape;
        auto lv = policy.net.stack.leaves(tape);
        nn::Var hw = tape.leaf(policy.net.head_w);
        nn::Var hb = tape.leaf(policy.net.head_b);
        auto tops = policy.net.stack.forward_all_steps(tape, lv, inputs, max_steps);
        nn::Var surrogate, entropy_sum;
        for (std::size_t t = 0; t < max_steps; ++t) {
            const auto& sl = slices[t];
            if (sl.rows.empty()) continue;
            nn::Var h = tape.gather_rows(tops[t], sl.rows);
            nn::Var logits = tape.add_rowvec(tape.matmul(h, hw), hb);
            nn::Var masked =
                tape.masked_fill(logits, masks.gather_action_rows(sl.obs), models::kMaskSink);
            nn::Var lsm = tape.log_softmax(masked);
            nn::Var picked = tape.select_per_row(lsm, sl.acts);

            nn::Mat wq(static_cast<Eigen::Index>(sl.rows.size()), 1);
            nn::Mat w(static_cast<Eigen::Index>(sl.rows.size()), 1);
            for (std::size_t r = 0; r < sl.rows.size(); ++r) {
                std::size_t i = begin + static_cast<std::size_t>(sl.rows[r]);
                wq(static_cast<Eigen::Index>(r), 0) =
                    sl.weight[r] * coeff[i][t] / batch.total_pairs;
                w(static_cast<Eigen::Index>(r), 0) = sl.weight[r] / batch.total_pairs;
            }
            nn::Var j_term = tape.weighted_sum_all(picked, wq);
            surrogate = surrogate.valid() ? tape.add(surrogate, j_term) : j_term;

            // analytic entropy of each masked row: -sum p * log p
            nn::Var probs = tape.exp(lsm);
            nn::Var ent_rows = tape.scale(tape.row_sum(tape.mul(probs, lsm)), -1.0);
            nn::Var ent_term = tape.weighted_sum_all(ent_rows, w);
            entropy_sum = entropy_sum.valid() ? tape.add(entropy_sum, ent_term) : ent_term;
        }
        nn::Var gain = tape.add(surrogate, tape.scale(entropy_sum, entropy_coef));
        nn::Var loss = tape.scale(gain, -1.0);  // ascent via minimizer
        double j = tape.scalar(surrogate);
        double ent = tape.scalar(entropy_sum);
        require(std::isfinite(j) && std::isfinite(ent),
                "update_policy: non-finite objective; iteration aborted");
        if (with_grad) tape.backward(loss);
        total_j += j;
        total_entropy += ent;
        total_loss += tape.scalar(loss);
    }
    if (j_policy_out) *j_policy_out = total_j;
    if (entropy_out) *entropy_out = total_entropy;
    return total_loss;
}

/// One ascent step on J_policy + lambda * H(pi); returns the post-step
/// (J_policy, entropy) pair.
inline std::pair<double, double> update_policy(PolicyGenerator& policy,
                                               const ValueEstimator& value,
                                               const UniqueBatch& batch, double entropy_coef,
                                               const MaskCache& masks, nn::Adam& opt,
                                               std::size_t chunk) {
    auto coeff = policy_coefficients(value, batch);
    policy_objective(policy, batch, coeff, entropy_coef, masks, chunk, true);
    opt.step(policy.net.params());
    double j_policy = 0.0, entropy = 0.0;
    policy_objective(policy, batch, coeff, entropy_coef, masks, chunk, false, &j_policy,
                     &entropy);
    return {j_policy, entropy};
}

/// Binary cross-entropy of the discriminator: generated pairs are labeled 1,
/// expert pairs 0, each side averaged per step-pair and the two means summed
/// (ln 4 at the uninformative D = 1/2). expert_weights[i][t] carries the
/// resampled minibatch mass for expert pair (i, t); pass uniform weights to
/// evaluate on the full expert set.
inline double discriminator_objective(Discriminator& discrim, const UniqueBatch& generated,
                                      const UniqueBatch& expert,
                                      const std::vector<std::vector<double>>& expert_weights,
                                      std::size_t chunk, bool with_grad) {
    auto side = [&](const UniqueBatch& batch, bool label_generated,
                    const std::vector<std::vector<double>>* weights) {
        double total = 0.0;
        double norm = 0.0;
        if (weights) {
            for (const auto& row : *weights)
                for (double w : row) norm += w;
        } else {
            norm = batch.total_pairs;
        }
        require(norm > 0.0, "update_discriminator: empty batch side");
        for (std::size_t begin = 0; begin < batch.seqs.size(); begin += chunk) {
            std::size_t end = std::min(batch.seqs.size(), begin + chunk);
            std::size_t max_steps = 0;
            std::vector<std::vector<int>> inputs;
            for (std::size_t i = begin; i < end; ++i) {
                inputs.emplace_back(batch.seqs[i].obs.begin(),
                                    batch.seqs[i].obs.begin() +
                                        static_cast<std::ptrdiff_t>(batch.seqs[i].steps()));
                max_steps = std::max(max_steps, inputs.back().size());
            }
            auto slices = detail::make_slices(batch, begin, end, max_steps);
            nn::Tape tape;
            auto lv = discrim.net.stack.leaves(tape);
            nn::Var hw = tape.leaf(discrim.net.head_w);
            nn::Var hb = tape.leaf(discrim.net.head_b);
            auto tops = discrim.net.stack.forward_all_steps(tape, lv, inputs, max_steps);
            nn::Var loss;
            for (std::size_t t = 0; t < max_steps; ++t) {
                const auto& sl = slices[t];
                if (sl.rows.empty()) continue;
                nn::Var h = tape.gather_rows(tops[t], sl.rows);
                nn::Var z_all = tape.add_rowvec(tape.matmul(h, hw), hb);
                nn::Var z = tape.select_per_row(z_all, sl.acts);
                // generated: -log D = softplus(-z); expert: -log(1-D) = softplus(z)
                nn::Var bce =
                    tape.clamp_max(tape.softplus(label_generated ? tape.scale(z, -1.0) : z),
                                   kRewardCap);
                nn::Mat w(static_cast<Eigen::Index>(sl.rows.size()), 1);
                for (std::size_t r = 0; r < sl.rows.size(); ++r) {
                    std::size_t i = begin + static_cast<std::size_t>(sl.rows[r]);
                    double mass = weights ? (*weights)[i][t] : sl.weight[r];
                    w(static_cast<Eigen::Index>(r), 0) = mass / norm;
                }
                nn::Var term = tape.weighted_sum_all(bce, w);
                loss = loss.valid() ? tape.add(loss, term) : term;
            }
            if (!loss.valid()) continue;
            double v = tape.scalar(loss);
            require(std::isfinite(v), "update_discriminator: non-finite loss; iteration aborted");
            if (with_grad) tape.backward(loss);
            total += v;
        }
        return total;
    };
    return side(generated, true, nullptr) + side(expert, false, &expert_weights);
}

/// Uniform resample of expert (history, action) pairs: count_pairs draws
/// tallied into per-(sequence, step) masses.
inline std::vector<std::vector<double>> sample_expert_pairs(const UniqueBatch& expert,
                                                            std::size_t count_pairs, Rng& rng) {
    std::vector<std::vector<double>> weights(expert.seqs.size());
    std::vector<double> seq_mass(expert.seqs.size());
    for (std::size_t i = 0; i < expert.seqs.size(); ++i) {
        weights[i].assign(expert.seqs[i].steps(), 0.0);
        seq_mass[i] = expert.seqs[i].weight * static_cast<double>(expert.seqs[i].steps());
    }
    for (std::size_t k = 0; k < count_pairs; ++k) {
        std::size_t i = rng.categorical(seq_mass);
        std::size_t t = static_cast<std::size_t>(rng.bounded(expert.seqs[i].steps()));
        weights[i][t] += 1.0;
    }
    return weights;
}

/// One optimizer step minimizing the discriminator BCE; returns the
/// post-step objective.
inline double update_discriminator(Discriminator& discrim, const UniqueBatch& expert,
                                   const std::vector<std::vector<double>>& expert_weights,
                                   const UniqueBatch& generated, nn::Adam& opt,
                                   std::size_t chunk) {
    discriminator_objective(discrim, generated, expert, expert_weights, chunk, true);
    opt.step(discrim.net.params());
    return discriminator_objective(discrim, generated, expert, expert_weights, chunk, false);
}

// ---------------------------------------------------------------------------
// Training.

struct ConvergenceRow {
    int iter = 0;
    double j_policy = 0.0;
    double j_value = 0.0;
    double j_discrim = 0.0;
    double entropy = 0.0;
    std::size_t unique_routes = 0;
};

struct TrainResult {
    PolicyGenerator policy;
    ValueEstimator value;
    Discriminator discrim;
    std::vector<ConvergenceRow> log;
    std::vector<std::string> warnings;
};

/// Adversarial training: per iteration, roll out `samples` trajectories,
/// take gen_updates alternations of (value step, policy step) against
/// rewards frozen at the iteration start, then discrim_updates discriminator
/// steps on fresh expert minibatches. Logged objectives are post-step values
/// of the last update of each kind.
inline TrainResult train(const data::Dataset& expert_data, const net::RoadNetwork& net,
                         const TrainConfig& cfg,
                         const std::function<void(const ConvergenceRow&)>& on_iteration = {}) {
    cfg.validate();
    require(!expert_data.trajectories.empty(), "gail train: empty expert dataset");

    const int alphabet = net.alphabet_size();
    const int actions = net.num_actions();
    TrainResult result{
        PolicyGenerator(alphabet, actions, cfg.hidden, cfg.layers, substream(cfg.seed, "policy")),
        ValueEstimator(alphabet, actions, cfg.hidden, cfg.layers, substream(cfg.seed, "value")),
        Discriminator(alphabet, actions, cfg.hidden, cfg.layers, substream(cfg.seed, "discrim")),
        {},
        {}};

    UniqueBatch expert = UniqueBatch::from_expert(net, expert_data);
    std::size_t max_len = cfg.max_len;
    if (max_len == 0) {
        std::size_t longest = 0;
        for (const auto& t : expert_data.trajectories) longest = std::max(longest, t.route.size());
        max_len = 3 * longest;
    }

    MaskCache masks(net);
    nn::Adam opt_policy(cfg.lr), opt_value(cfg.lr), opt_discrim(cfg.lr);
    Rng expert_rng(substream(cfg.seed, "gail.expert_minibatch"));
    int collapse_streak = 0;

    result.log.reserve(static_cast<std::size_t>(cfg.iterations));
    for (int iter = 0; iter < cfg.iterations; ++iter) {
        RolloutBatch rolled = rollout(result.policy, net, cfg.samples, max_len,
                                      substream(cfg.seed, "gail.iteration", static_cast<std::uint64_t>(iter)));
        UniqueBatch batch = UniqueBatch::from_rollouts(rolled);
        compute_rewards(batch, result.discrim, cfg.gamma);  // frozen for this iteration

        ConvergenceRow row;
        row.iter = iter;
        for (int u = 0; u < cfg.gen_updates; ++u) {
            const bool log_update = (u + 1 == cfg.gen_updates);
            auto targets = value_targets(result.value, result.policy, batch, cfg.gamma, masks);
            value_objective(result.value, batch, targets, cfg.chunk, true);
            opt_value.step(result.value.net.params());
            if (log_update)
                row.j_value = value_objective(result.value, batch, targets, cfg.chunk, false);
            auto coeff = policy_coefficients(result.value, batch);
            policy_objective(result.policy, batch, coeff, cfg.entropy_coef, masks, cfg.chunk,
                             true);
            opt_policy.step(result.policy.net.params());
            if (log_update)
                policy_objective(result.policy, batch, coeff, cfg.entropy_coef, masks, cfg.chunk,
                                 false, &row.j_policy, &row.entropy);
        }
        std::size_t pair_count = static_cast<std::size_t>(std::llround(batch.total_pairs));
        for (int u = 0; u < cfg.discrim_updates; ++u) {
            const bool log_update = (u + 1 == cfg.discrim_updates);
            auto expert_weights = sample_expert_pairs(expert, pair_count, expert_rng);
            discriminator_objective(result.discrim, batch, expert, expert_weights, cfg.chunk,
                                    true);
            opt_discrim.step(result.discrim.net.params());
            if (log_update)
                row.j_discrim = discriminator_objective(result.discrim, batch, expert,
                                                        expert_weights, cfg.chunk, false);
        }
        row.unique_routes = batch.unique_routes();

        if (row.unique_routes < cfg.mode_collapse_floor) {
            if (++collapse_streak == cfg.mode_collapse_window)
                result.warnings.push_back(concat(
                    "possible mode collapse: unique generated routes below ",
                    cfg.mode_collapse_floor, " for ", collapse_streak,
                    " consecutive iterations at iteration ", iter, "; training continues"));
        } else {
            collapse_streak = 0;
        }
        result.log.push_back(row);
        if (on_iteration) on_iteration(row);
    }
    return result;
}

/// Sampling from a trained policy; identical contracts to rollout, with
/// truncated rollouts tagged.
inline data::Dataset generate(const PolicyGenerator& policy, const net::RoadNetwork& net,
                              std::size_t n, std::size_t max_len, std::uint64_t seed,
                              const std::string& tag = "trajgail") {
    RolloutBatch batch = rollout(policy, net, n, max_len, seed);
    data::Dataset out;
    out.network_ref = net.id_hash();
    out.trajectories.reserve(n);
    for (const RolloutTraj& t : batch.trajs) {
        data::Trajectory traj;
        traj.route = models::route_from_tokens(net, t.obs);
        traj.tag = t.truncated ? tag + data::kTruncSuffix : tag;
        out.trajectories.push_back(std::move(traj));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpointing: three named parameter groups (policy.*, value.*, discrim.*).

inline std::vector<nn::Param*> all_params(TrainResult& r) {
    std::vector<nn::Param*> out;
    for (auto* group : {&r.policy.net, &r.value.net, &r.discrim.net})
        for (nn::Param* p : group->params()) out.push_back(p);
    return out;
}

inline void save(TrainResult& r, const std::string& path) {
    std::vector<std::pair<std::string, const nn::Mat*>> tensors;
    for (nn::Param* p : all_params(r)) tensors.emplace_back(p->name, &p->value);
    nn::save_checkpoint(path, tensors);
}

inline TrainResult load(const std::map<std::string, nn::Mat>& tensors,
                        const net::RoadNetwork& net) {
    int hidden = static_cast<int>(tensors.at("policy.head.w").rows());
    int layers = 0;
    while (tensors.count("policy.gru" + std::to_string(layers) + ".w")) ++layers;
    require(layers > 0, "gail checkpoint has no recurrent layers");
    TrainResult r{PolicyGenerator(net.alphabet_size(), net.num_actions(), hidden, layers, 0),
                  ValueEstimator(net.alphabet_size(), net.num_actions(), hidden, layers, 0),
                  Discriminator(net.alphabet_size(), net.num_actions(), hidden, layers, 0),
                  {},
                  {}};
    nn::load_params(tensors, all_params(r));
    return r;
}

}  // namespace trajlab::gail

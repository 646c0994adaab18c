#pragma once

#include <string>
#include <vector>

#include <trajlab/common/rng.hpp>
#include <trajlab/models/common.hpp>
#include <trajlab/nn/adam.hpp>
#include <trajlab/nn/checkpoint.hpp>
#include <trajlab/nn/rnn.hpp>
#include <trajlab/nn/tape.hpp>

namespace trajlab::models {

struct BcRnnConfig {
    int hidden = 64;
    int layers = 3;
    double lr = 1e-3;
    int epochs = 200;
    std::size_t chunk = 256;  // sequences per backward chunk
    std::uint64_t seed = 1;
};

/// Behavior-cloning recurrent model: a recurrent embedding plus a linear
/// next-observation head over the alphabet, trained with teacher forcing and
/// masked cross-entropy. Infeasible next observations get zero probability.
class BcRnnModel {
public:
    BcRnnModel() = default;

    BcRnnModel(const net::RoadNetwork& net, const BcRnnConfig& cfg)
        : alphabet_(net.alphabet_size()),
          chunk_(cfg.chunk),
          stack_("bcrnn", alphabet_, cfg.hidden, cfg.layers, substream(cfg.seed, "bcrnn.stack")) {
        Rng rng(substream(cfg.seed, "bcrnn.head"));
        head_w_.init_uniform("bcrnn.head.w", cfg.hidden, alphabet_, cfg.hidden, rng);
        head_b_.init_zero("bcrnn.head.b", 1, alphabet_);
    }

    std::vector<nn::Param*> params() {
        auto out = stack_.params();
        out.push_back(&head_w_);
        out.push_back(&head_b_);
        return out;
    }

    /// Teacher-forced training; returns the per-epoch mean cross-entropy (in
    /// nats per step). Aborts on a non-finite loss.
    std::vector<double> train(const data::Dataset& dataset, const net::RoadNetwork& net,
                              const BcRnnConfig& cfg) {
        auto seqs = unique_expert_sequences(net, dataset);
        MaskCache masks(net);
        nn::Adam opt(cfg.lr);
        auto leaves = params();
        std::vector<double> losses;
        losses.reserve(static_cast<std::size_t>(cfg.epochs));
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            double loss = epoch_pass(seqs, masks, true);
            require(std::isfinite(loss), "bc_rnn_train: loss diverged (non-finite) at epoch ",
                    epoch);
            opt.step(leaves);
            losses.push_back(loss);
        }
        return losses;
    }

    /// Mean masked cross-entropy of the dataset under the current weights.
    double evaluate(const data::Dataset& dataset, const net::RoadNetwork& net) {
        auto seqs = unique_expert_sequences(net, dataset);
        MaskCache masks(net);
        return epoch_pass(seqs, masks, false);
    }

    /// Next-observation distribution given an observation history.
    nn::Mat next_probs(const net::RoadNetwork& net, const std::vector<int>& history) const {
        MaskCache masks(net);
        nn::Mat h = stack_.embed_sequences({history});
        nn::Mat logits = h * head_w_.value;
        logits.row(0) += head_b_.value.row(0);
        const int cur = history.back();
        nn::Mat probs = nn::Mat::Zero(1, alphabet_);
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < alphabet_; ++j)
            if (masks.next_obs_keep(cur, j) > 0.0) mx = std::max(mx, logits(0, j));
        double z = 0.0;
        for (int j = 0; j < alphabet_; ++j)
            if (masks.next_obs_keep(cur, j) > 0.0) z += std::exp(logits(0, j) - mx);
        for (int j = 0; j < alphabet_; ++j)
            if (masks.next_obs_keep(cur, j) > 0.0) probs(0, j) = std::exp(logits(0, j) - mx) / z;
        return probs;
    }

    /// Autoregressive sampling through the recurrent state, one independent
    /// RNG substream per trajectory index.
    data::Dataset generate(const net::RoadNetwork& net, std::size_t n, std::size_t max_len,
                           std::uint64_t seed, const std::string& tag = "bcrnn") const {
        MaskCache masks(net);
        data::Dataset out;
        out.network_ref = net.id_hash();
        out.trajectories.resize(n);

        struct Walker {
            std::size_t index;
            int cur;
            Rng rng;
        };
        std::vector<Walker> active;
        active.reserve(n);
        for (std::size_t i = 0; i < n; ++i)
            active.push_back({i, net::kStart, Rng(substream(seed, "bcrnn.generate", i))});
        for (std::size_t i = 0; i < n; ++i) out.trajectories[i].tag = tag;

        nn::RecurrentStack::State state =
            stack_.initial_state(static_cast<Eigen::Index>(active.size()));
        for (std::size_t step = 0; step <= max_len && !active.empty(); ++step) {
            std::vector<int> tokens(active.size());
            for (std::size_t b = 0; b < active.size(); ++b) tokens[b] = active[b].cur;
            stack_.step(tokens, state);
            nn::Mat logits = state.h.back() * head_w_.value;
            logits.rowwise() += head_b_.value.row(0);

            std::vector<bool> done(active.size(), false);
            for (std::size_t b = 0; b < active.size(); ++b) {
                Walker& w = active[b];
                int nxt = sample_masked_row(logits, static_cast<Eigen::Index>(b),
                                            masks.next_obs_keep, w.cur, w.rng);
                if (nxt == net::kEnd) {
                    done[b] = true;
                    continue;
                }
                auto& traj = out.trajectories[w.index];
                traj.route.push_back(net.link_id(nxt));
                w.cur = nxt;
                if (traj.route.size() >= max_len) {
                    traj.tag += data::kTruncSuffix;
                    done[b] = true;
                }
            }
            compact(active, state, done);
        }
        return out;
    }

    nn::RecurrentStack& stack() { return stack_; }
    const nn::Param& head_w() const { return head_w_; }

    void save(const std::string& path) {
        std::vector<std::pair<std::string, const nn::Mat*>> tensors;
        for (nn::Param* p : params()) tensors.emplace_back(p->name, &p->value);
        nn::save_checkpoint(path, tensors);
    }

    static BcRnnModel load(const std::map<std::string, nn::Mat>& tensors,
                           const net::RoadNetwork& net) {
        BcRnnConfig cfg;
        cfg.hidden = static_cast<int>(tensors.at("bcrnn.head.w").rows());
        cfg.layers = 0;
        while (tensors.count("bcrnn.gru" + std::to_string(cfg.layers) + ".w")) ++cfg.layers;
        require(cfg.layers > 0, "bcrnn checkpoint has no recurrent layers");
        BcRnnModel m(net, cfg);
        nn::load_params(tensors, m.params());
        return m;
    }

private:
    // Samples a next observation from a masked softmax over logits row b.
    static int sample_masked_row(const nn::Mat& logits, Eigen::Index b, const nn::Mat& keep,
                                 int cur, Rng& rng) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < logits.cols(); ++j)
            if (keep(cur, j) > 0.0) mx = std::max(mx, logits(b, j));
        double z = 0.0;
        for (Eigen::Index j = 0; j < logits.cols(); ++j)
            if (keep(cur, j) > 0.0) z += std::exp(logits(b, j) - mx);
        double u = rng.uniform01() * z;
        double acc = 0.0;
        int last = -1;
        for (Eigen::Index j = 0; j < logits.cols(); ++j) {
            if (keep(cur, j) <= 0.0) continue;
            acc += std::exp(logits(b, j) - mx);
            last = static_cast<int>(j);
            if (u < acc) return last;
        }
        return last;
    }

    template <typename WalkerVec>
    void compact(WalkerVec& active, nn::RecurrentStack::State& state, const std::vector<bool>& done) const {
        std::vector<Eigen::Index> keep_rows;
        for (std::size_t b = 0; b < done.size(); ++b)
            if (!done[b]) keep_rows.push_back(static_cast<Eigen::Index>(b));
        if (keep_rows.size() == done.size()) return;
        WalkerVec next_active;
        next_active.reserve(keep_rows.size());
        for (Eigen::Index b : keep_rows) next_active.push_back(std::move(active[static_cast<std::size_t>(b)]));
        active = std::move(next_active);
        for (nn::Mat& h : state.h) {
            nn::Mat compacted(static_cast<Eigen::Index>(keep_rows.size()), h.cols());
            for (std::size_t r = 0; r < keep_rows.size(); ++r)
                compacted.row(static_cast<Eigen::Index>(r)) = h.row(keep_rows[r]);
            h = std::move(compacted);
        }
    }

    /// One full pass over the unique sequences; returns the weighted mean
    /// cross-entropy and (optionally) accumulates gradients.
    double epoch_pass(const std::vector<UniqueSeq>& seqs, const MaskCache& masks,
                      bool with_grad) {
        double total_steps = 0.0;
        for (const auto& u : seqs) total_steps += u.weight * static_cast<double>(u.obs.size() - 1);
        double loss_sum = 0.0;
        for (std::size_t begin = 0; begin < seqs.size(); begin += chunk_) {
            std::size_t end = std::min(seqs.size(), begin + chunk_);
            loss_sum += chunk_pass(seqs, begin, end, masks, total_steps, with_grad);
        }
        return loss_sum;
    }

    double chunk_pass(const std::vector<UniqueSeq>& seqs, std::size_t begin, std::size_t end,
                      const MaskCache& masks, double total_steps, bool with_grad) {
        std::size_t max_steps = 0;  // input positions: obs minus trailing End
        std::vector<std::vector<int>> inputs;
        inputs.reserve(end - begin);
        for (std::size_t u = begin; u < end; ++u) {
            inputs.emplace_back(seqs[u].obs.begin(), seqs[u].obs.end() - 1);
            max_steps = std::max(max_steps, inputs.back().size());
        }
        nn::Tape tape;
        auto lv = stack_.leaves(tape);
        nn::Var w = tape.leaf(head_w_);
        nn::Var b = tape.leaf(head_b_);
        auto tops = stack_.forward_all_steps(tape, lv, inputs, max_steps);

        nn::Var loss;
        for (std::size_t t = 0; t < max_steps; ++t) {
            std::vector<int> cur_obs, targets;
            std::vector<Eigen::Index> rows;
            for (std::size_t u = begin; u < end; ++u) {
                const auto& obs = seqs[u].obs;
                if (t + 1 >= obs.size()) continue;
                rows.push_back(static_cast<Eigen::Index>(u - begin));
                cur_obs.push_back(obs[t]);
                targets.push_back(obs[t + 1]);
            }
            if (rows.empty()) continue;
            // select the active rows of this step's hidden state
            std::vector<int> row_idx(rows.begin(), rows.end());
            nn::Var h = tape.gather_rows(tops[t], row_idx);
            nn::Var logits = tape.add_rowvec(tape.matmul(h, w), b);
            nn::Var masked = tape.masked_fill(logits, masks.gather_next_obs_rows(cur_obs),
                                              kMaskSink);
            nn::Var lsm = tape.log_softmax(masked);
            nn::Var picked = tape.select_per_row(lsm, targets);
            nn::Mat step_w(static_cast<Eigen::Index>(rows.size()), 1);
            for (std::size_t r = 0; r < rows.size(); ++r)
                step_w(static_cast<Eigen::Index>(r), 0) =
                    -seqs[begin + static_cast<std::size_t>(row_idx[r])].weight / total_steps;
            nn::Var term = tape.weighted_sum_all(picked, step_w);
            loss = loss.valid() ? tape.add(loss, term) : term;
        }
        double value = tape.scalar(loss);
        if (with_grad) tape.backward(loss);
        return value;
    }

    int alphabet_ = 0;
    std::size_t chunk_ = 256;
    nn::RecurrentStack stack_;
    nn::Param head_w_;
    nn::Param head_b_;
};

}  // namespace trajlab::models

#pragma once

#include <string>
#include <vector>

#include <trajlab/nn/tape.hpp>
#include <trajlab/nn/tensor.hpp>

namespace trajlab::nn {

/// Token embedding table plus a stack of gated recurrent (3-gate) layers.
///
/// Gates use fused blocks: the input block W is [in x 3H] (update | reset |
/// candidate), the recurrent block U is [H x 3H], with separate input and
/// recurrent biases. The reset gate scales the recurrent candidate product:
///   z = sigma(xW_z + hU_z + b)    r = sigma(xW_r + hU_r + b)
///   n = tanh(xW_n + r (x) (hU_n + bh_n))
///   h' = (1 - z) (x) n + z (x) h
///
/// The table has one extra row for the padding token used by ragged batches;
/// prefix masks carry hidden states through padded positions, so padding
/// never changes an embedding.
class RecurrentStack {
public:
    struct GruLayer {
        Param w;   // input block   [in x 3H]
        Param u;   // recurrent block [H x 3H]
        Param bx;  // input bias    [1 x 3H]
        Param bh;  // recurrent bias [1 x 3H]
    };

    RecurrentStack() = default;

    RecurrentStack(std::string prefix, int alphabet, int hidden, int layers, std::uint64_t seed)
        : prefix_(std::move(prefix)), alphabet_(alphabet), hidden_(hidden) {
        require(alphabet >= 1 && hidden >= 1 && layers >= 1,
                "RecurrentStack: alphabet, hidden and layers must be positive");
        Rng rng(substream(seed, prefix_ + ".init"));
        embed_.init_uniform(prefix_ + ".embed", alphabet_ + 1, hidden_, hidden_, rng);
        layers_.resize(static_cast<std::size_t>(layers));
        for (int l = 0; l < layers; ++l) {
            GruLayer& g = layers_[static_cast<std::size_t>(l)];
            auto name = [&](const char* part) {
                return prefix_ + ".gru" + std::to_string(l) + "." + part;
            };
            int in = hidden_;
            g.w.init_uniform(name("w"), in, 3 * hidden_, in, rng);
            g.u.init_uniform(name("u"), hidden_, 3 * hidden_, hidden_, rng);
            g.bx.init_zero(name("bx"), 1, 3 * hidden_);
            g.bh.init_zero(name("bh"), 1, 3 * hidden_);
        }
    }

    int alphabet() const { return alphabet_; }
    int hidden() const { return hidden_; }
    int num_layers() const { return static_cast<int>(layers_.size()); }
    int pad_token() const { return alphabet_; }
    const std::string& prefix() const { return prefix_; }

    std::vector<Param*> params() {
        std::vector<Param*> out{&embed_};
        for (GruLayer& g : layers_)
            for (Param* p : {&g.w, &g.u, &g.bx, &g.bh}) out.push_back(p);
        return out;
    }

    // -- tape path -----------------------------------------------------------

    struct TapeLeaves {
        Var embed;
        struct L {
            Var w, u, bx, bh;
        };
        std::vector<L> layers;
    };

    TapeLeaves leaves(Tape& t) {
        TapeLeaves lv;
        lv.embed = t.leaf(embed_);
        for (GruLayer& g : layers_)
            lv.layers.push_back({t.leaf(g.w), t.leaf(g.u), t.leaf(g.bx), t.leaf(g.bh)});
        return lv;
    }

    /// One recurrent step on the tape. `x` is the [B x H] layer input,
    /// `h` the previous hidden states per layer (updated in place).
    /// `step_mask` (B x 1 of 0/1), when given, freezes rows that are past
    /// their sequence end.
    Var step_on_tape(Tape& t, const TapeLeaves& lv, Var x, std::vector<Var>& h,
                     const Mat* step_mask = nullptr) const {
        const Eigen::Index H = hidden_;
        Var inp = x;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const TapeLeaves::L& w = lv.layers[l];
            Var prev = h[l];
            Var xg = t.add_rowvec(t.matmul(inp, w.w), w.bx);
            Var hg = t.add_rowvec(t.matmul(prev, w.u), w.bh);
            Var z = t.sigmoid(t.add(t.slice_cols(xg, 0, H), t.slice_cols(hg, 0, H)));
            Var r = t.sigmoid(t.add(t.slice_cols(xg, H, H), t.slice_cols(hg, H, H)));
            Var cand =
                t.tanh(t.add(t.slice_cols(xg, 2 * H, H), t.mul(r, t.slice_cols(hg, 2 * H, H))));
            // h' = (1 - z) (x) cand + z (x) prev
            Var hnew = t.add(cand, t.mul(z, t.sub(prev, cand)));
            if (step_mask) {
                Var mask = t.constant(*step_mask);
                hnew = t.add(prev, t.mul_colvec(t.sub(hnew, prev), mask));
            }
            h[l] = hnew;
            inp = hnew;
        }
        return h.back();
    }

    Var embed_tokens(Tape& t, const TapeLeaves& lv, const std::vector<int>& tokens) const {
        return t.gather_rows(lv.embed, tokens);
    }

    std::vector<Var> zero_state(Tape& t, Eigen::Index batch) const {
        std::vector<Var> h;
        for (std::size_t l = 0; l < layers_.size(); ++l)
            h.push_back(t.constant(Mat::Zero(batch, hidden_)));
        return h;
    }

    /// Runs the stack over a padded token batch [B x L]; returns the top
    /// hidden state after every step (step t embeds the length-(t+1) prefix).
    std::vector<Var> forward_all_steps(Tape& t, const TapeLeaves& lv,
                                       const std::vector<std::vector<int>>& tokens,
                                       std::size_t max_steps) const {
        const Eigen::Index batch = static_cast<Eigen::Index>(tokens.size());
        std::vector<Var> h = zero_state(t, batch);
        std::vector<Var> tops;
        bool any_ragged = false;
        for (const auto& seq : tokens) any_ragged |= seq.size() != max_steps;
        for (std::size_t step = 0; step < max_steps; ++step) {
            std::vector<int> col(tokens.size());
            Mat mask(batch, 1);
            for (std::size_t b = 0; b < tokens.size(); ++b) {
                bool active = step < tokens[b].size();
                col[b] = active ? tokens[b][step] : pad_token();
                mask(static_cast<Eigen::Index>(b), 0) = active ? 1.0 : 0.0;
            }
            Var x = embed_tokens(t, lv, col);
            tops.push_back(step_on_tape(t, lv, x, h, any_ragged ? &mask : nullptr));
        }
        return tops;
    }

    /// Whole-sequence forward as a single tape node: returns the top-layer
    /// hidden states of all steps stacked column-wise, [B x (max_steps*H)]
    /// (step t occupies columns [t*H, (t+1)*H)). The backward closure runs
    /// truncated-free BPTT over stored gate activations and accumulates
    /// straight into this stack's parameter gradients. Numerically identical
    /// to forward_all_steps, at a fraction of the tape overhead.
    Var forward_fused(Tape& t, const std::vector<std::vector<int>>& tokens,
                      std::size_t max_steps) {
        const Eigen::Index B = static_cast<Eigen::Index>(tokens.size());
        const Eigen::Index H = hidden_;
        const std::size_t L = layers_.size();
        require(B > 0 && max_steps > 0, "forward_fused: empty batch");

        struct Trace {
            std::vector<std::vector<int>> cols;      // per step: padded tokens
            std::vector<Mat> masks;                  // per step: [B x 1], empty if full
            std::vector<std::vector<Mat>> z, r, hgn, cand, h;  // [step][layer]
            std::vector<Mat> x0;                     // per step: embedded input
        };
        auto trace = std::make_shared<Trace>();
        trace->cols.resize(max_steps);
        trace->masks.resize(max_steps);
        trace->z.assign(max_steps, std::vector<Mat>(L));
        trace->r.assign(max_steps, std::vector<Mat>(L));
        trace->hgn.assign(max_steps, std::vector<Mat>(L));
        trace->cand.assign(max_steps, std::vector<Mat>(L));
        trace->h.assign(max_steps, std::vector<Mat>(L));
        trace->x0.resize(max_steps);

        bool any_ragged = false;
        for (const auto& seq : tokens) any_ragged |= seq.size() != max_steps;

        Mat tops(B, static_cast<Eigen::Index>(max_steps) * H);
        std::vector<Mat> hprev(L, Mat::Zero(B, H));
        auto sig = [](auto&& m) { return (1.0 + (-m).exp()).inverse(); };
        for (std::size_t step = 0; step < max_steps; ++step) {
            auto& col = trace->cols[step];
            col.resize(tokens.size());
            Mat mask;
            if (any_ragged) mask.resize(B, 1);
            for (std::size_t b = 0; b < tokens.size(); ++b) {
                bool active = step < tokens[b].size();
                col[b] = active ? tokens[b][step] : pad_token();
                require(col[b] >= 0 && col[b] <= alphabet_, "forward_fused: unknown token ",
                        col[b]);
                if (any_ragged) mask(static_cast<Eigen::Index>(b), 0) = active ? 1.0 : 0.0;
            }
            trace->masks[step] = mask;
            Mat x(B, H);
            for (Eigen::Index b = 0; b < B; ++b)
                x.row(b) = embed_.value.row(col[static_cast<std::size_t>(b)]);
            trace->x0[step] = x;
            for (std::size_t l = 0; l < L; ++l) {
                const GruLayer& g = layers_[l];
                const Mat& prev = hprev[l];
                Mat xg = (x * g.w.value).rowwise() + g.bx.value.row(0);
                Mat hg = (prev * g.u.value).rowwise() + g.bh.value.row(0);
                Mat z = sig(xg.leftCols(H).array() + hg.leftCols(H).array()).matrix();
                Mat r = sig(xg.middleCols(H, H).array() + hg.middleCols(H, H).array()).matrix();
                Mat hgn = hg.rightCols(H);
                Mat cand = (xg.rightCols(H).array() + r.array() * hgn.array()).tanh().matrix();
                Mat hnew = (cand.array() + z.array() * (prev.array() - cand.array())).matrix();
                if (any_ragged)
                    hnew = (prev.array() +
                            (hnew - prev).array().colwise() * mask.col(0).array())
                               .matrix();
                trace->z[step][l] = std::move(z);
                trace->r[step][l] = std::move(r);
                trace->hgn[step][l] = std::move(hgn);
                trace->cand[step][l] = std::move(cand);
                trace->h[step][l] = hnew;
                hprev[l] = std::move(hnew);
                x = hprev[l];
            }
            tops.middleCols(static_cast<Eigen::Index>(step) * H, H) = hprev.back();
        }

        RecurrentStack* self = this;
        return t.custom(std::move(tops), [self, trace, B, H, L, max_steps](const Mat& dtops) {
            std::vector<Mat> dh_next(L, Mat::Zero(B, H));  // into h_eff at step t from t+1
            Mat dx_up = Mat::Zero(B, H);                   // from layer above, same step
            const Mat zero_state = Mat::Zero(B, H);
            for (std::size_t step = max_steps; step-- > 0;) {
                const Mat* mask = trace->masks[step].size() ? &trace->masks[step] : nullptr;
                for (std::size_t l = L; l-- > 0;) {
                    GruLayer& g = self->layers_[l];
                    Mat dh_eff = dh_next[l];
                    if (l + 1 == L)
                        dh_eff += dtops.middleCols(static_cast<Eigen::Index>(step) * H, H);
                    else
                        dh_eff += dx_up;
                    const Mat& prev = step > 0 ? trace->h[step - 1][l] : zero_state;
                    Mat dh = dh_eff;
                    Mat dcarry = Mat::Zero(B, H);
                    if (mask) {
                        dh = (dh_eff.array().colwise() * mask->col(0).array()).matrix();
                        dcarry = (dh_eff.array().colwise() * (1.0 - mask->col(0).array()))
                                     .matrix();
                    }
                    const Mat& z = trace->z[step][l];
                    const Mat& r = trace->r[step][l];
                    const Mat& hgn = trace->hgn[step][l];
                    const Mat& cand = trace->cand[step][l];
                    Mat dcand = (dh.array() * (1.0 - z.array())).matrix();
                    Mat dz = (dh.array() * (prev.array() - cand.array())).matrix();
                    Mat dan = (dcand.array() * (1.0 - cand.array().square())).matrix();
                    Mat dr = (dan.array() * hgn.array()).matrix();
                    Mat dhgn = (dan.array() * r.array()).matrix();
                    Mat daz = (dz.array() * z.array() * (1.0 - z.array())).matrix();
                    Mat dar = (dr.array() * r.array() * (1.0 - r.array())).matrix();
                    Mat dxg(B, 3 * H), dhg(B, 3 * H);
                    dxg << daz, dar, dan;
                    dhg << daz, dar, dhgn;
                    const Mat& x = l == 0 ? trace->x0[step] : trace->h[step][l - 1];
                    g.w.grad.noalias() += x.transpose() * dxg;
                    g.u.grad.noalias() += prev.transpose() * dhg;
                    g.bx.grad.noalias() += dxg.colwise().sum();
                    g.bh.grad.noalias() += dhg.colwise().sum();
                    Mat dx = dxg * g.w.value.transpose();
                    // into h_eff of step-1: carry + gate passthrough + recurrent matmul
                    dh_next[l] = dcarry + (dh.array() * z.array()).matrix() +
                                 dhg * g.u.value.transpose();
                    if (l > 0) {
                        dx_up = std::move(dx);
                    } else {
                        Mat& eg = self->embed_.grad;
                        const auto& col = trace->cols[step];
                        for (Eigen::Index b = 0; b < B; ++b)
                            eg.row(col[static_cast<std::size_t>(b)]) += dx.row(b);
                    }
                }
            }
        });
    }

    // -- plain (no-gradient) path --------------------------------------------

    struct State {
        std::vector<Mat> h;  // per layer, [B x H]
    };

    State initial_state(Eigen::Index batch) const {
        State s;
        for (std::size_t l = 0; l < layers_.size(); ++l)
            s.h.push_back(Mat::Zero(batch, hidden_));
        return s;
    }

    /// Incremental batched step without gradients. Each row advances
    /// independently, so results do not depend on the batch composition.
    void step(const std::vector<int>& tokens, State& s) const {
        const Eigen::Index batch = static_cast<Eigen::Index>(tokens.size());
        const Eigen::Index H = hidden_;
        Mat x(batch, H);
        for (Eigen::Index b = 0; b < batch; ++b) {
            int tok = tokens[static_cast<std::size_t>(b)];
            require(tok >= 0 && tok <= alphabet_, "RecurrentStack::step: unknown token ", tok);
            x.row(b) = embed_.value.row(tok);
        }
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const GruLayer& g = layers_[l];
            const Mat& prev = s.h[l];
            Mat xg = (x * g.w.value).rowwise() + g.bx.value.row(0);
            Mat hg = (prev * g.u.value).rowwise() + g.bh.value.row(0);
            auto sig = [](auto&& m) { return (1.0 + (-m).exp()).inverse(); };
            Mat z = sig(xg.leftCols(H).array() + hg.leftCols(H).array()).matrix();
            Mat r = sig(xg.middleCols(H, H).array() + hg.middleCols(H, H).array()).matrix();
            Mat cand = (xg.rightCols(H).array() + r.array() * hg.rightCols(H).array())
                           .tanh()
                           .matrix();
            s.h[l] = (cand.array() + z.array() * (prev.array() - cand.array())).matrix();
            x = s.h[l];
        }
    }

    /// Belief-state embedding of whole sequences: [B x H] final top hidden
    /// state. Ragged batches are handled by stepping each row only through
    /// its own length.
    Mat embed_sequences(const std::vector<std::vector<int>>& seqs) const {
        require(!seqs.empty(), "embed_sequences: empty batch");
        std::size_t max_len = 0;
        for (const auto& s : seqs) {
            require(!s.empty(), "embed_sequences: empty sequence");
            max_len = std::max(max_len, s.size());
        }
        State st = initial_state(static_cast<Eigen::Index>(seqs.size()));
        Mat out(static_cast<Eigen::Index>(seqs.size()), hidden_);
        for (std::size_t step = 0; step < max_len; ++step) {
            std::vector<int> col(seqs.size());
            for (std::size_t b = 0; b < seqs.size(); ++b)
                col[b] = step < seqs[b].size() ? seqs[b][step] : pad_token();
            this->step(col, st);
            // rows are independent, so a row's state at its own final step is
            // unaffected by other rows stepping further
            for (std::size_t b = 0; b < seqs.size(); ++b)
                if (step + 1 == seqs[b].size())
                    out.row(static_cast<Eigen::Index>(b)) =
                        st.h.back().row(static_cast<Eigen::Index>(b));
        }
        return out;
    }

    Param& embed_table() { return embed_; }
    std::vector<GruLayer>& gru_layers() { return layers_; }

private:
    std::string prefix_;
    int alphabet_ = 0;
    int hidden_ = 0;
    Param embed_;
    std::vector<GruLayer> layers_;
};

/// Free-function form of the belief-state embedding.
inline Mat rnn_embed(const RecurrentStack& stack, const std::vector<std::vector<int>>& seqs) {
    return stack.embed_sequences(seqs);
}

}  // namespace trajlab::nn

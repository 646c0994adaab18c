#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <trajlab/common/parallel.hpp>

#include <trajlab/common/error.hpp>
#include <trajlab/data/dataset.hpp>

namespace trajlab::eval {

// Sequence scores operate on token streams: link ids with the virtual
// start/end markers added at the model boundary. All logarithms in this
// module are base 2, so distances live exactly in [0,1] and entropies are
// in bits.
inline constexpr const char* kStartToken = "__start__";
inline constexpr const char* kEndToken = "__end__";

using TokenSeq = std::vector<std::string>;

inline TokenSeq token_stream(const net::Route& route) {
    TokenSeq s;
    s.reserve(route.size() + 2);
    s.push_back(kStartToken);
    s.insert(s.end(), route.begin(), route.end());
    s.push_back(kEndToken);
    return s;
}

// ---------------------------------------------------------------------------
// BLEU. Modified n-gram precision with per-chunk clipping against the best
// single reference, a closest-length brevity penalty, and a geometric mean
// over the orders for which the candidate has at least one n-gram (so short
// sequences are scored on the orders they support instead of scoring zero).

namespace detail {

using Ngram = std::vector<std::string>;

inline std::map<Ngram, int> ngram_counts(const TokenSeq& seq, std::size_t n) {
    std::map<Ngram, int> counts;
    if (seq.size() >= n)
        for (std::size_t i = 0; i + n <= seq.size(); ++i)
            ++counts[Ngram(seq.begin() + static_cast<std::ptrdiff_t>(i),
                           seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
    return counts;
}

}  // namespace detail

/// Precomputed reference-side tables so scoring a dataset against a large
/// reference pool stays linear in the candidate length.
class BleuReference {
public:
    BleuReference(const std::vector<TokenSeq>& references, int max_order) : order_(max_order) {
        require(max_order >= 1, "bleu: n must be >= 1");
        require(!references.empty(), "bleu: references must be non-empty");
        max_counts_.resize(static_cast<std::size_t>(max_order));
        for (const TokenSeq& ref : references) {
            require(!ref.empty(), "bleu: empty reference sequence");
            lengths_.push_back(ref.size());
            for (int n = 1; n <= max_order; ++n)
                for (const auto& [gram, c] : detail::ngram_counts(ref, static_cast<std::size_t>(n))) {
                    int& slot = max_counts_[static_cast<std::size_t>(n - 1)][gram];
                    slot = std::max(slot, c);
                }
        }
        std::sort(lengths_.begin(), lengths_.end());
    }

    int order() const { return order_; }

    /// Reference length closest to len; ties resolve to the shorter one.
    std::size_t closest_length(std::size_t len) const {
        std::size_t best = lengths_.front();
        for (std::size_t l : lengths_) {
            auto dist = [&](std::size_t x) {
                return x > len ? x - len : len - x;
            };
            if (dist(l) < dist(best)) best = l;  // lengths_ ascending: ties keep the shorter
        }
        return best;
    }

    double score(const TokenSeq& candidate) const {
        require(!candidate.empty(), "bleu: empty candidate");
        double log_sum = 0.0;
        int active_orders = 0;
        for (int n = 1; n <= order_; ++n) {
            auto cand = detail::ngram_counts(candidate, static_cast<std::size_t>(n));
            if (cand.empty()) continue;  // candidate shorter than n: order skipped
            ++active_orders;
            long long total = 0, clipped = 0;
            const auto& table = max_counts_[static_cast<std::size_t>(n - 1)];
            for (const auto& [gram, c] : cand) {
                total += c;
                auto it = table.find(gram);
                clipped += std::min<long long>(c, it == table.end() ? 0 : it->second);
            }
            if (clipped == 0) return 0.0;
            log_sum += std::log(static_cast<double>(clipped) / static_cast<double>(total));
        }
        double precision = std::exp(log_sum / static_cast<double>(active_orders));
        double brevity = std::min(
            1.0, static_cast<double>(candidate.size()) /
                     static_cast<double>(closest_length(candidate.size())));
        return brevity * precision;
    }

private:
    int order_;
    std::vector<std::map<detail::Ngram, int>> max_counts_;
    std::vector<std::size_t> lengths_;
};

inline double bleu_n(const TokenSeq& candidate, const std::vector<TokenSeq>& references, int n) {
    return BleuReference(references, n).score(candidate);
}

// ---------------------------------------------------------------------------
// METEOR with exact matching only. The alignment maximizes the number of
// mappings, then minimizes crossings (ties toward the monotone, leftmost
// assignment). Chunks are maximal runs of mappings adjacent in the candidate
// whose reference positions are adjacent as well.

namespace detail {

struct Alignment {
    std::vector<int> map_to;  // candidate position -> reference position or -1
    int matches = 0;
    int crossings = 0;
};

inline int count_chunks(const std::vector<int>& map_to) {
    int chunks = 0;
    int prev_pos = -2, prev_ref = std::numeric_limits<int>::min();
    for (std::size_t i = 0; i < map_to.size(); ++i) {
        if (map_to[i] < 0) continue;
        bool adjacent = static_cast<int>(i) == prev_pos + 1 &&
                        std::abs(map_to[i] - prev_ref) == 1;
        if (!adjacent) ++chunks;
        prev_pos = static_cast<int>(i);
        prev_ref = map_to[i];
    }
    return chunks;
}

/// Exhaustive minimal-crossing search over per-token occurrence choices.
/// Trajectory tokens are mostly distinct, so the branching is tiny; the
/// recursion walks candidate positions left to right and prunes on the
/// crossing count.
class MeteorAligner {
public:
    MeteorAligner(const TokenSeq& cand, const TokenSeq& ref) : cand_(cand) {
        for (std::size_t j = 0; j < ref.size(); ++j) positions_[ref[j]].push_back(static_cast<int>(j));
        remaining_.resize(cand.size() + 1, 0);
        for (std::size_t i = cand.size(); i-- > 0;) {
            auto it = positions_.find(cand_[i]);
            remaining_[i] = remaining_[i + 1] + (it != positions_.end() ? 1 : 0);
        }
    }

    Alignment best() {
        cur_.map_to.assign(cand_.size(), -1);
        search(0, 0, 0);
        return best_;
    }

private:
    // Exhaustion only branches on repeated tokens; loop-heavy degenerate
    // candidates get a node budget, after which the best alignment found so
    // far (the greedy leftmost one is explored first) is kept.
    static constexpr long long kNodeBudget = 500000;

    void search(std::size_t i, int matches, int crossings) {
        if (++nodes_ > kNodeBudget) return;
        // bound: even matching every remaining candidate token cannot beat best
        int optimistic = matches + remaining_[i];
        if (optimistic < best_.matches) return;
        if (optimistic == best_.matches && crossings >= best_.crossings &&
            best_.matches >= 0 && found_)
            return;
        if (i == cand_.size()) {
            if (!found_ || matches > best_.matches ||
                (matches == best_.matches && crossings < best_.crossings)) {
                best_.map_to = cur_.map_to;
                best_.matches = matches;
                best_.crossings = crossings;
                found_ = true;
            }
            return;
        }
        auto it = positions_.find(cand_[i]);
        if (it != positions_.end()) {
            for (int j : it->second) {
                if (used_.count(j)) continue;
                int crossed = 0;
                for (std::size_t k = 0; k < i; ++k)
                    if (cur_.map_to[k] >= 0 && cur_.map_to[k] > j) ++crossed;
                used_.insert(j);
                cur_.map_to[i] = j;
                search(i + 1, matches + 1, crossings + crossed);
                cur_.map_to[i] = -1;
                used_.erase(j);
            }
        }
        search(i + 1, matches, crossings);  // leave unmapped
    }

    const TokenSeq& cand_;
    std::map<std::string, std::vector<int>> positions_;
    std::vector<int> remaining_;
    std::set<int> used_;
    Alignment cur_;
    Alignment best_{{}, -1, std::numeric_limits<int>::max()};
    bool found_ = false;
    long long nodes_ = 0;
};

}  // namespace detail

/// Single-reference METEOR; exact matching, penalty p = 0.5 (c / m)^3, and
/// F_mean weighting recall nine times the precision.
inline double meteor_single(const TokenSeq& candidate, const TokenSeq& reference) {
    require(!candidate.empty() && !reference.empty(), "meteor: empty sequence");
    detail::MeteorAligner aligner(candidate, reference);
    detail::Alignment a = aligner.best();
    if (a.matches <= 0) return 0.0;
    double m = static_cast<double>(a.matches);
    double precision = m / static_cast<double>(candidate.size());
    double recall = m / static_cast<double>(reference.size());
    double f_mean = 10.0 * precision * recall / (recall + 9.0 * precision);
    double chunks = static_cast<double>(detail::count_chunks(a.map_to));
    double penalty = 0.5 * std::pow(chunks / m, 3.0);
    return f_mean * (1.0 - penalty);
}

/// Multi-reference METEOR: the maximum single-reference score.
inline double meteor(const TokenSeq& candidate, const std::vector<TokenSeq>& references) {
    require(!references.empty(), "meteor: references must be non-empty");
    double best = 0.0;
    for (const auto& ref : references) best = std::max(best, meteor_single(candidate, ref));
    return best;
}

// ---------------------------------------------------------------------------
// Jensen-Shannon distance between route distributions (base-2 logs, so the
// value lies in [0,1]); the unknown bucket is one more outcome.

inline double js_distance(const data::RouteDistribution& p, const data::RouteDistribution& q) {
    require(std::abs(p.total() - 1.0) < 1e-9, "js_distance: first distribution sums to ",
            p.total());
    require(std::abs(q.total() - 1.0) < 1e-9, "js_distance: second distribution sums to ",
            q.total());
    std::map<net::Route, std::pair<double, double>> outcomes;
    for (const auto& [r, v] : p.probs) outcomes[r].first = v;
    for (const auto& [r, v] : q.probs) outcomes[r].second = v;
    std::vector<std::pair<double, double>> mass(outcomes.size());
    std::size_t i = 0;
    for (const auto& [r, pq] : outcomes) mass[i++] = pq;
    mass.emplace_back(p.unknown_mass, q.unknown_mass);

    auto kl_term = [](double a, double m) { return a > 0.0 ? a * std::log2(a / m) : 0.0; };
    double kl_pm = 0.0, kl_qm = 0.0;
    for (auto [a, b] : mass) {
        double m = 0.5 * (a + b);
        if (m <= 0.0) continue;
        kl_pm += kl_term(a, m);
        kl_qm += kl_term(b, m);
    }
    double divergence = 0.5 * (kl_pm + kl_qm);
    return std::sqrt(std::max(0.0, divergence));
}

// ---------------------------------------------------------------------------
// Link transition entropy: mean per-source-link entropy (bits) of empirical
// next-link probabilities. Links never serving as a transition source do not
// enter the average.

inline double link_transition_entropy(const data::Dataset& d) {
    require(!d.trajectories.empty(), "link_transition_entropy: empty dataset");
    std::map<std::string, std::map<std::string, double>> counts;
    for (const auto& t : d.trajectories)
        for (std::size_t i = 0; i + 1 < t.route.size(); ++i)
            counts[t.route[i]][t.route[i + 1]] += 1.0;
    if (counts.empty()) return 0.0;
    double total = 0.0;
    for (const auto& [src, row] : counts) {
        double n = 0.0;
        for (const auto& [dst, c] : row) n += c;
        double h = 0.0;
        for (const auto& [dst, c] : row) {
            double pr = c / n;
            h -= pr * std::log2(pr);
        }
        total += h;
    }
    return total / static_cast<double>(counts.size());
}

// ---------------------------------------------------------------------------
// Complexity sensitivity: OLS slope of d_JS on entropy.

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};

inline LinearFit complexity_sensitivity(const std::vector<std::pair<double, double>>& points) {
    require(points.size() >= 2, "complexity_sensitivity: need at least two points");
    double n = static_cast<double>(points.size());
    double sx = 0, sy = 0;
    for (auto [x, y] : points) {
        sx += x;
        sy += y;
    }
    double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (auto [x, y] : points) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    require(sxx > 0.0, "complexity_sensitivity: zero variance in entropy values");
    LinearFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    return fit;
}

// ---------------------------------------------------------------------------
// Dataset-level scoring: every generated trajectory against the full
// reference pool.

struct ScoreReport {
    std::vector<double> bleu;
    std::vector<double> meteor;
    double bleu_mean = 0.0, bleu_std = 0.0;
    double meteor_mean = 0.0, meteor_std = 0.0;
};

namespace detail {
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
    double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    return {mean, std::sqrt(var / n)};
}
}  // namespace detail

/// Scores every generated trajectory against the whole reference set as its
/// reference pool (BLEU order n; METEOR maximum over references). Duplicate
/// candidates are scored once and broadcast.
inline ScoreReport dataset_scores(const data::Dataset& generated, const data::Dataset& reference,
                                  int n = 4) {
    require(!generated.trajectories.empty(), "dataset_scores: empty generated dataset");
    require(!reference.trajectories.empty(), "dataset_scores: empty reference dataset");

    std::vector<TokenSeq> ref_streams;
    ref_streams.reserve(reference.size());
    std::set<TokenSeq> ref_set;
    for (const auto& t : reference.trajectories) {
        ref_streams.push_back(token_stream(t.route));
        ref_set.insert(ref_streams.back());
    }
    std::vector<TokenSeq> ref_unique(ref_set.begin(), ref_set.end());
    BleuReference pool(ref_streams, n);

    // dedup candidates
    std::map<TokenSeq, std::size_t> unique_index;
    std::vector<TokenSeq> unique_streams;
    std::vector<std::size_t> cand_slot(generated.size());
    for (std::size_t i = 0; i < generated.size(); ++i) {
        TokenSeq s = token_stream(generated.trajectories[i].route);
        auto [it, fresh] = unique_index.emplace(std::move(s), unique_streams.size());
        if (fresh) unique_streams.push_back(it->first);
        cand_slot[i] = it->second;
    }

    std::vector<double> ubleu(unique_streams.size()), umeteor(unique_streams.size());
    parallel_for(unique_streams.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t u = begin; u < end; ++u) {
            const TokenSeq& s = unique_streams[u];
            if (ref_set.count(s)) {
                // exact pool membership: BLEU is 1 and the self-match already
                // attains the METEOR maximum
                ubleu[u] = 1.0;
                double w = static_cast<double>(s.size());
                umeteor[u] = 1.0 - 0.5 / (w * w * w);
            } else {
                ubleu[u] = pool.score(s);
                umeteor[u] = meteor(s, ref_unique);
            }
        }
    });

    ScoreReport rep;
    rep.bleu.resize(generated.size());
    rep.meteor.resize(generated.size());
    for (std::size_t i = 0; i < generated.size(); ++i) {
        rep.bleu[i] = ubleu[cand_slot[i]];
        rep.meteor[i] = umeteor[cand_slot[i]];
    }
    std::tie(rep.bleu_mean, rep.bleu_std) = detail::mean_std(rep.bleu);
    std::tie(rep.meteor_mean, rep.meteor_std) = detail::mean_std(rep.meteor);
    return rep;
}

// ---------------------------------------------------------------------------

struct DistributionReport {
    double d_js = 0.0;
    std::size_t unknown_count = 0;
    double unknown_rate = 0.0;
    double entropy_generated = 0.0;
    double entropy_reference = 0.0;
    struct Row {
        net::Route route;
        std::size_t ref_count = 0;
        std::size_t gen_count = 0;
        double ref_prob = 0.0;
        double gen_prob = 0.0;
    };
    std::vector<Row> rows;  // deterministic, lexicographic by route
};

inline DistributionReport distribution_report(const data::Dataset& generated,
                                              const data::Dataset& reference) {
    auto gen_dist = data::route_distribution(generated, reference);
    auto ref_dist = data::route_distribution(reference, reference);
    DistributionReport rep;
    rep.d_js = js_distance(gen_dist, ref_dist);
    rep.unknown_rate = gen_dist.unknown_mass;
    rep.unknown_count = static_cast<std::size_t>(
        std::llround(gen_dist.unknown_mass * static_cast<double>(generated.size())));
    rep.entropy_generated = link_transition_entropy(generated);
    rep.entropy_reference = link_transition_entropy(reference);
    for (const auto& [route, p] : ref_dist.probs) {
        DistributionReport::Row row;
        row.route = route;
        row.ref_prob = p;
        row.ref_count =
            static_cast<std::size_t>(std::llround(p * static_cast<double>(reference.size())));
        auto it = gen_dist.probs.find(route);
        if (it != gen_dist.probs.end()) {
            row.gen_prob = it->second;
            row.gen_count = static_cast<std::size_t>(
                std::llround(it->second * static_cast<double>(generated.size())));
        }
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

}  // namespace trajlab::eval

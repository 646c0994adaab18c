#include <catch2/catch_amalgamated.hpp>

#include <trajlab/common/rng.hpp>
#include <trajlab/eval/metrics.hpp>
#include <trajlab/net/network.hpp>

using namespace trajlab;
using namespace trajlab::eval;

namespace {
TokenSeq seq(std::initializer_list<const char*> toks) {
    TokenSeq s;
    for (const char* t : toks) s.emplace_back(t);
    return s;
}
}  // namespace

TEST_CASE("bleu: perfect match scores one", "[eval]") {
    auto c = seq({"A", "B", "C"});
    CHECK(bleu_n(c, {c}, 4) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("bleu: hand-computed bigram example", "[eval]") {
    double s = bleu_n(seq({"A", "B", "C", "D"}), {seq({"A", "B", "C", "E"})}, 2);
    CHECK(s == Catch::Approx(std::sqrt(0.5)).margin(1e-9));
}

TEST_CASE("bleu: clipping caps repeated chunks", "[eval]") {
    double s = bleu_n(seq({"A", "A", "A"}), {seq({"A", "B"})}, 1);
    CHECK(s == Catch::Approx(1.0 / 3.0).margin(1e-9));
}

TEST_CASE("bleu: brevity penalty uses the closest reference length", "[eval]") {
    // candidate shorter than the only reference
    double s = bleu_n(seq({"A", "B"}), {seq({"A", "B", "C", "D"})}, 1);
    CHECK(s == Catch::Approx(0.5).margin(1e-9));  // P1=1, BP=2/4
    // tie between lengths 2 and 4 at candidate length 3 resolves to 2
    double t = bleu_n(seq({"A", "B", "X"}), {seq({"A", "B"}), seq({"A", "B", "C", "D"})}, 1);
    CHECK(t == Catch::Approx(2.0 / 3.0).margin(1e-9));  // P1=2/3, BP=min(1,3/2)=1
}

TEST_CASE("bleu: orders beyond the candidate length are skipped", "[eval]") {
    // length-2 candidate scored at n=4: geometric mean over orders 1..2 only
    auto ref = seq({"A", "B"});
    CHECK(bleu_n(seq({"A", "B"}), {ref}, 4) == Catch::Approx(1.0).margin(1e-12));
    CHECK(bleu_n(seq({"A"}), {ref}, 4) == Catch::Approx(0.5).margin(1e-9));  // BP=1/2
}

TEST_CASE("bleu: n < 1 rejected", "[eval]") {
    CHECK_THROWS_AS(bleu_n(seq({"A"}), {seq({"A"})}, 0), ContractError);
}

TEST_CASE("meteor: identical sequences", "[eval]") {
    auto c = seq({"A", "B", "C", "D"});
    CHECK(meteor(c, {c}) == Catch::Approx(0.9921875).margin(1e-12));
}

TEST_CASE("meteor: disjoint alphabets score zero", "[eval]") {
    CHECK(meteor(seq({"A", "B"}), {seq({"X", "Y"})}) == 0.0);
}

TEST_CASE("meteor: swapped middle pair gives three chunks", "[eval]") {
    double s = meteor(seq({"A", "B", "C", "D"}), {seq({"A", "C", "B", "D"})});
    CHECK(s == Catch::Approx(0.7890625).margin(1e-9));
}

TEST_CASE("meteor: max over references", "[eval]") {
    auto c = seq({"A", "B", "C", "D"});
    double s = meteor(c, {seq({"X", "Y"}), c, seq({"A", "C", "B", "D"})});
    CHECK(s == Catch::Approx(0.9921875).margin(1e-12));
}

TEST_CASE("meteor: partial overlap has sane precision/recall", "[eval]") {
    // candidate AB vs reference ABCD: m=2, P=1, R=1/2, c=1
    // F = 10*1*0.5/(0.5+9) = 5/9.5; p = 0.5*(1/2)^3 = 1/16
    double s = meteor(seq({"A", "B"}), {seq({"A", "B", "C", "D"})});
    CHECK(s == Catch::Approx((5.0 / 9.5) * (15.0 / 16.0)).margin(1e-9));
}

TEST_CASE("scores are permutation-invariant over the reference set", "[eval]") {
    auto c = seq({"A", "B", "C"});
    std::vector<TokenSeq> refs = {seq({"A", "B"}), seq({"B", "C", "A"}),
                                  seq({"A", "B", "C", "D"})};
    std::vector<TokenSeq> perm = {refs[2], refs[0], refs[1]};
    CHECK(bleu_n(c, refs, 4) == Catch::Approx(bleu_n(c, perm, 4)).margin(1e-12));
    CHECK(meteor(c, refs) == Catch::Approx(meteor(c, perm)).margin(1e-12));
}

TEST_CASE("js distance: identical, disjoint and hand-computed cases", "[eval]") {
    data::RouteDistribution p, q;
    p.probs[{"a"}] = 1.0;
    q.probs[{"a"}] = 1.0;
    CHECK(js_distance(p, q) == Catch::Approx(0.0).margin(1e-12));

    data::RouteDistribution r;
    r.probs[{"b"}] = 1.0;
    CHECK(js_distance(p, r) == Catch::Approx(1.0).margin(1e-12));

    data::RouteDistribution u;
    u.probs[{"a"}] = 0.5;
    u.probs[{"b"}] = 0.5;
    double expect = std::sqrt((std::log2(4.0 / 3.0) + 0.5 * std::log2(2.0 / 3.0) + 0.5) / 2.0);
    CHECK(js_distance(p, u) == Catch::Approx(expect).margin(1e-12));
    CHECK(js_distance(p, u) == Catch::Approx(0.557923).margin(1e-6));

    // symmetry
    CHECK(js_distance(u, p) == Catch::Approx(js_distance(p, u)).margin(1e-15));

    data::RouteDistribution bad;
    bad.probs[{"a"}] = 0.7;
    CHECK_THROWS_AS(js_distance(bad, p), ContractError);
}

TEST_CASE("js distance includes the unknown bucket as an outcome", "[eval]") {
    data::RouteDistribution p, q;
    p.probs[{"a"}] = 0.5;
    p.unknown_mass = 0.5;
    q.probs[{"a"}] = 1.0;
    double d = js_distance(p, q);
    data::RouteDistribution p2, q2;
    p2.probs[{"a"}] = 0.5;
    p2.probs[{"zz"}] = 0.5;  // unknown modeled as an explicit distinct outcome
    q2.probs[{"a"}] = 1.0;
    CHECK(d == Catch::Approx(js_distance(p2, q2)).margin(1e-12));
}

TEST_CASE("js distance satisfies the triangle inequality on random triples", "[eval]") {
    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        auto random_dist = [&]() {
            data::RouteDistribution d;
            double total = 0.0;
            std::vector<double> w(4);
            for (double& x : w) {
                x = rng.uniform01() + 1e-3;
                total += x;
            }
            d.probs[{"a"}] = w[0] / total;
            d.probs[{"b"}] = w[1] / total;
            d.probs[{"c"}] = w[2] / total;
            d.unknown_mass = w[3] / total;
            return d;
        };
        auto p = random_dist(), q = random_dist(), r = random_dist();
        CHECK(js_distance(p, r) <= js_distance(p, q) + js_distance(q, r) + 1e-12);
        CHECK(js_distance(p, q) == Catch::Approx(js_distance(q, p)).margin(1e-15));
        CHECK(js_distance(p, p) == Catch::Approx(0.0).margin(1e-12));
    }
}

namespace {
data::Dataset make_ds(std::initializer_list<net::Route> routes) {
    data::Dataset d;
    for (const auto& r : routes) d.trajectories.push_back({r, "t"});
    return d;
}
}  // namespace

TEST_CASE("link transition entropy hand cases", "[eval]") {
    // deterministic transitions -> 0 bits
    CHECK(link_transition_entropy(make_ds({{"a", "b", "c"}, {"a", "b", "c"}})) ==
          Catch::Approx(0.0).margin(1e-12));

    // one source uniform over 4 successors, averaged with nothing else
    auto d4 = make_ds({{"a", "b"}, {"a", "c"}, {"a", "d"}, {"a", "e"}});
    CHECK(link_transition_entropy(d4) == Catch::Approx(2.0).margin(1e-12));

    // one 50/50 source and one deterministic source -> (1+0)/2
    auto dm = make_ds({{"a", "b"}, {"a", "c"}, {"b", "d"}});
    CHECK(link_transition_entropy(dm) == Catch::Approx(0.5).margin(1e-12));

    // duplication invariance
    auto dup = make_ds(
        {{"a", "b"}, {"a", "c"}, {"b", "d"}, {"a", "b"}, {"a", "c"}, {"b", "d"}});
    CHECK(link_transition_entropy(dup) ==
          Catch::Approx(link_transition_entropy(dm)).margin(1e-12));

    // single-link trajectories have no transitions
    CHECK(link_transition_entropy(make_ds({{"a"}})) == 0.0);
}

TEST_CASE("complexity sensitivity OLS", "[eval]") {
    CHECK(complexity_sensitivity({{0, 0}, {1, 1}}).slope == Catch::Approx(1.0).margin(1e-12));
    CHECK(complexity_sensitivity({{0, 0.2}, {1, 0.2}, {2, 0.2}}).slope ==
          Catch::Approx(0.0).margin(1e-12));
    auto fit = complexity_sensitivity({{0, 0}, {1, 0.5}, {2, 1.2}});
    CHECK(fit.slope == Catch::Approx(0.6).margin(1e-9));
    CHECK_THROWS_AS(complexity_sensitivity({{1, 0}, {1, 1}}), ContractError);
    CHECK_THROWS_AS(complexity_sensitivity({{1, 0}}), ContractError);
}

TEST_CASE("dataset scores: self-comparison saturates", "[eval]") {
    auto g = net::build_grid(3, 3, 200.0);
    auto routes = net::enumerate_shortest_routes(g, "InW0", "OutE2");
    data::Dataset d;
    for (std::size_t i = 0; i < 10; ++i) d.trajectories.push_back({routes[i % 6], "t"});
    auto rep = dataset_scores(d, d, 4);
    CHECK(rep.bleu_mean == Catch::Approx(1.0).margin(1e-12));
    CHECK(rep.bleu_std == Catch::Approx(0.0).margin(1e-12));
    for (std::size_t i = 0; i < d.size(); ++i) {
        double w = static_cast<double>(d.trajectories[i].route.size() + 2);
        CHECK(rep.meteor[i] == Catch::Approx(1.0 - 0.5 / (w * w * w)).margin(1e-12));
    }
}

TEST_CASE("dataset scores: single-route datasets have zero spread", "[eval]") {
    auto g = net::build_grid(3, 3, 200.0);
    auto routes = net::enumerate_shortest_routes(g, "InW0", "OutE2");
    data::Dataset a, b;
    a.trajectories.assign(5, {routes[0], "t"});
    b.trajectories.assign(3, {routes[0], "t"});
    auto rep = dataset_scores(a, b, 4);
    CHECK(rep.bleu_std == Catch::Approx(0.0).margin(1e-12));
    CHECK(rep.meteor_std == Catch::Approx(0.0).margin(1e-12));
    CHECK(rep.bleu_mean == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("distribution report wiring", "[eval]") {
    auto g = net::build_grid(3, 3, 200.0);
    auto routes = net::enumerate_shortest_routes(g, "InW0", "OutE2");
    data::Dataset ref, gen;
    ref.trajectories = {{routes[0], "r"}, {routes[0], "r"}, {routes[1], "r"}, {routes[1], "r"}};
    gen.trajectories = {{routes[0], "g"}, {routes[1], "g"}, {routes[2], "g"}, {routes[2], "g"}};
    auto rep = distribution_report(gen, ref);
    CHECK(rep.unknown_count == 2);
    CHECK(rep.unknown_rate == Catch::Approx(0.5));
    CHECK(rep.rows.size() == 2);
    CHECK(rep.d_js > 0.0);
    auto self = distribution_report(ref, ref);
    CHECK(self.d_js == Catch::Approx(0.0).margin(1e-12));
    CHECK(self.unknown_count == 0);
}

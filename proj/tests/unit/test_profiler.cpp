// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "../fixtures.hpp"
#include "../oracles.hpp"
#include "moesim/profiler.hpp"
#include "moesim/synth.hpp"

using namespace moesim;
using namespace moesim::testing;

namespace {

// Random small trace with mixed phases, built without the generator.
TraceSet random_fixture(std::uint64_t seed, std::uint32_t E = 8, std::uint32_t k = 2, std::uint32_t layers = 4) {
    std::mt19937_64 rng(seed);
    TraceSet ts{model(E, k, layers), {}};
    const std::size_t nreq = 2 + rng() % 9;
    for (std::size_t r = 0; r < nreq; ++r) {
        RequestTrace req;
        req.request_id = "q" + std::to_string(r);
        const std::size_t prefill = rng() % 4;
        for (std::size_t t = 0; t < 8; ++t) {
            TokenStep s;
            s.phase = t < prefill ? Phase::prefill : Phase::decode;
            for (std::uint32_t l = 0; l < layers; ++l) {
                std::vector<ExpertId> all(E);
                std::iota(all.begin(), all.end(), 0);
                std::shuffle(all.begin(), all.end(), rng);
                all.resize(k);
                std::sort(all.begin(), all.end());
                s.selections.push_back(all);
            }
            req.tokens.push_back(s);
        }
        ts.requests.push_back(req);
    }
    return ts;
}

void check_pairs(const TransitionCounts& got, const oracle::Pairs& want) {
    for (std::size_t i = 0; i < got.dims(); ++i) {
        CHECK(static_cast<double>(got.support(i)) == want.support[i]);
        for (std::size_t j = 0; j < got.dims(); ++j) CHECK(static_cast<double>(got.count(i, j)) == want.count[i][j]);
    }
}

void check_matrix(const Heatmap& h, const oracle::Matrix& m, double tol) {
    REQUIRE(h.dims == m.size());
    for (std::size_t i = 0; i < h.dims; ++i)
        for (std::size_t j = 0; j < h.dims; ++j) CHECK(std::abs(h.at(i, j) - m[i][j]) <= tol);
}

}  // namespace

TEST_CASE("cross-layer hand example") {
    TraceSet ts{model(4, 1, 2), {}};
    ts.requests.push_back(request("a", {token(Phase::decode, {{0}, {1}}), token(Phase::decode, {{0}, {1}}),
                                        token(Phase::decode, {{2}, {3}})}));
    const auto h = cross_layer_heatmap(ts, 0);
    CHECK(h.kind == HeatmapKind::conditional_prob);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            const double want = (i == 0 && j == 1) || (i == 2 && j == 3) ? 1.0 : 0.0;
            CHECK(h.at(i, j) == want);
        }
    const auto c = cross_layer_counts(ts, 0);
    CHECK(c.count(0, 1) == 2);
    CHECK(c.count(2, 3) == 1);
}

TEST_CASE("single expert model gives the unit heatmap") {
    TraceSet ts{model(1, 1, 2), {}};
    ts.requests.push_back(request("a", {token(Phase::decode, {{0}, {0}}), token(Phase::decode, {{0}, {0}})}));
    CHECK(cross_layer_heatmap(ts, 0).values == std::vector<double>{1.0});
    CHECK(cross_token_heatmap(ts, 0, PhaseFilter::both).values == std::vector<double>{1.0});
}

TEST_CASE("cross-layer heatmap on the last layer is rejected") {
    TraceSet ts{model(4, 1, 2), {}};
    CHECK_THROWS(cross_layer_heatmap(ts, 1));
}

TEST_CASE("cross-token hand example") {
    TraceSet ts{model(4, 2, 1), {}};
    ts.requests.push_back(request("a", {token(Phase::decode, {{0, 1}}), token(Phase::decode, {{1, 2}})}));
    const auto sel = cross_token_heatmap(ts, 0, PhaseFilter::both, ConditionalNorm::per_selection);
    CHECK(sel.at(0, 1) == 0.5);
    CHECK(sel.at(0, 2) == 0.5);
    CHECK(sel.at(1, 1) == 0.5);
    CHECK(sel.at(1, 2) == 0.5);
    CHECK(sel.at(0, 0) == 0.0);
    CHECK(sel.at(2, 0) == 0.0);
    // per activation: same pattern scaled by top_k
    const auto act = cross_token_heatmap(ts, 0, PhaseFilter::both);
    CHECK(act.at(0, 1) == 1.0);
    CHECK(act.at(1, 2) == 1.0);
}

TEST_CASE("transitions never cross request boundaries") {
    TraceSet ts{model(4, 1, 1), {}};
    ts.requests.push_back(request("a", {token(Phase::decode, {{0}})}));
    ts.requests.push_back(request("b", {token(Phase::decode, {{1}})}));
    CHECK(cross_token_counts(ts, 0, PhaseFilter::both).transitions() == 0);
}

TEST_CASE("full stickiness gives the identity pattern") {
    const ModelSpec m = model(8, 1, 2);
    SynthParams p;
    p.num_requests = 50;
    p.tokens_per_request = 10;
    p.stickiness = 1.0;
    p.zipf_s = 0.5;
    p.seed = 2;
    const auto h = cross_token_heatmap(generate_synthetic(m, p), 1, PhaseFilter::decode);
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j)
            if (i != j) CHECK(h.at(i, j) == 0.0);
    std::size_t diag = 0;
    for (std::size_t i = 0; i < 8; ++i) diag += h.at(i, i) == 1.0;
    CHECK(diag > 0);
}

TEST_CASE("oracle equivalence on random fixtures") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto ts = random_fixture(seed);
        CAPTURE(seed);
        for (PhaseFilter f : {PhaseFilter::both, PhaseFilter::prefill, PhaseFilter::decode}) {
            for (MoeLayer l = 0; l < 4; ++l) {
                const auto ct = cross_token_counts(ts, l, f);
                const auto ct_ref = oracle::cross_token(ts, l, f);
                check_pairs(ct, ct_ref);
                check_matrix(ct.conditional(2), oracle::conditional(ct_ref), 1e-12);

                const auto co = coactivation_counts(ts, l, f);
                const auto co_ref = oracle::coactivation(ts, l, f);
                CHECK(static_cast<double>(co.tokens()) == co_ref.tokens);
                for (std::size_t i = 0; i < 8; ++i)
                    for (std::size_t j = 0; j < 8; ++j) CHECK(static_cast<double>(co.count(i, j)) == co_ref.count[i][j]);
                if (co_ref.tokens > 0)
                    check_matrix(coactivation_heatmap(ts, l, f), oracle::coactivation_normalized(co_ref), 1e-12);

                const auto fr = expert_frequency(ts, l, f);
                const auto fr_ref = oracle::frequency(ts, l, f);
                for (std::size_t e = 0; e < 8; ++e) CHECK(static_cast<double>(fr.counts[e]) == fr_ref[e]);

                if (l + 1 < 4) {
                    const auto cl = cross_layer_counts(ts, l, f);
                    const auto cl_ref = oracle::cross_layer(ts, l, f);
                    check_pairs(cl, cl_ref);
                    check_matrix(cross_layer_heatmap(ts, l, f), oracle::conditional(cl_ref), 1e-12);
                }
            }
        }
    }
}

TEST_CASE("conditional rows sum to top_k") {
    const auto ts = random_fixture(77, 16, 4, 3);
    for (MoeLayer l = 0; l < 2; ++l) {
        const auto counts = cross_layer_counts(ts, l);
        const auto h = counts.conditional(4);
        for (std::size_t i = 0; i < 16; ++i) {
            if (counts.support(i) == 0) continue;
            const auto row = h.row(i);
            CHECK(std::accumulate(row.begin(), row.end(), 0.0) == doctest::Approx(4.0).epsilon(1e-12));
        }
        const auto sel = counts.conditional(4, ConditionalNorm::per_selection);
        for (std::size_t i = 0; i < 16; ++i) {
            if (counts.support(i) == 0) continue;
            const auto row = sel.row(i);
            CHECK(std::accumulate(row.begin(), row.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("coactivation is symmetric with an empty diagonal") {
    const auto ts = random_fixture(5, 8, 3, 2);
    const auto h = coactivation_heatmap(ts, 1);
    for (std::size_t i = 0; i < 8; ++i) {
        CHECK(h.at(i, i) == 0.0);
        for (std::size_t j = 0; j < 8; ++j) CHECK(h.at(i, j) == h.at(j, i));
    }
}

TEST_CASE("coactivation hand example and top_k 1 rejection") {
    TraceSet ts{model(4, 2, 1), {}};
    ts.requests.push_back(request("a", {token(Phase::decode, {{0, 1}}), token(Phase::decode, {{0, 1}})}));
    const auto h = coactivation_heatmap(ts, 0);
    CHECK(h.at(0, 1) == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(h.at(1, 0) == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(h.at(2, 3) == 0.0);

    TraceSet single{model(4, 1, 1), {}};
    single.requests.push_back(request("a", {token(Phase::decode, {{0}})}));
    CHECK_THROWS_AS(coactivation_heatmap(single, 0), DataError);
}

TEST_CASE("exact coactivation normalizer uses k(k-1)/(n(n-1))") {
    TraceSet ts{model(6, 3, 1), {}};
    ts.requests.push_back(request("a", {token(Phase::decode, {{0, 1, 2}})}));
    const auto h = coactivation_counts(ts, 0, PhaseFilter::both).normalized(3, CoactivationNormalizer::exact);
    // P(pair) = 3*2/(6*5) = 0.2, observed frequency 1
    CHECK(h.at(0, 1) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("phase split adds up away from the boundary") {
    for (std::uint64_t seed = 30; seed < 35; ++seed) {
        const auto ts = random_fixture(seed);
        for (MoeLayer l = 0; l < 4; ++l) {
            const auto pre = cross_token_counts(ts, l, PhaseFilter::prefill);
            const auto dec = cross_token_counts(ts, l, PhaseFilter::decode);
            const auto all = cross_token_counts(ts, l, PhaseFilter::both);
            // boundary pairs: last prefill token -> first decode token
            TransitionCounts boundary(8);
            for (const auto& r : ts.requests) {
                const std::size_t p = r.prefill_count();
                if (p > 0 && p < r.tokens.size())
                    boundary.add(r.tokens[p - 1].selections[l], r.tokens[p].selections[l]);
            }
            for (std::size_t i = 0; i < 8; ++i)
                for (std::size_t j = 0; j < 8; ++j)
                    CHECK(pre.count(i, j) + dec.count(i, j) + boundary.count(i, j) == all.count(i, j));
        }
    }
}

TEST_CASE("merging shards in any order gives the same counts") {
    const auto ts = random_fixture(8);
    TransitionCounts whole = cross_token_counts(ts, 2, PhaseFilter::both);
    TransitionCounts a(8), b(8);
    for (std::size_t r = 0; r < ts.requests.size(); ++r)
        accumulate_cross_token(r % 2 ? a : b, ts.requests[r], 2, PhaseFilter::both);
    TransitionCounts ab = a, ba = b;
    ab.merge(b);
    ba.merge(a);
    CHECK(ab == whole);
    CHECK(ba == whole);
}

TEST_CASE("spearman examples") {
    const std::vector<double> a{1, 2, 3}, b{3, 1, 2};
    CHECK(*spearman_rho(a, b) == doctest::Approx(-0.5).epsilon(1e-12));
    const std::vector<double> v{0.3, 5, -1, 2, 8};
    std::vector<double> rev(v);
    for (auto& x : rev) x = -x;
    CHECK(*spearman_rho(v, v) == 1.0);
    CHECK(*spearman_rho(v, rev) == -1.0);
    const std::vector<double> flat{2, 2, 2};
    CHECK_FALSE(spearman_rho(flat, a).has_value());
    CHECK_FALSE(spearman_rho(a, flat).has_value());
}

TEST_CASE("spearman is invariant under monotone transforms") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.1, 10.0);
    std::vector<double> a(40), b(40);
    for (std::size_t i = 0; i < 40; ++i) {
        a[i] = u(rng);
        b[i] = u(rng);
    }
    std::vector<double> ta(a), tb(b);
    for (auto& x : ta) x = std::log(x) * 3.0 + 1.0;
    for (auto& x : tb) x = x * x * x;
    CHECK(*spearman_rho(a, b) == doctest::Approx(*spearman_rho(ta, tb)).epsilon(1e-12));
    CHECK(*spearman_rho(a, b) == doctest::Approx(oracle::spearman_closed_form(a, b)).epsilon(1e-9));
}

TEST_CASE("average ranks share tied positions") {
    const std::vector<double> v{10, 20, 10, 30, 20, 10};
    CHECK(average_ranks(v) == oracle::average_ranks_quadratic(v));
    CHECK(average_ranks(v) == std::vector<double>{2, 4.5, 2, 6, 4.5, 2});
}

TEST_CASE("mirrored prefill gives spearman 1") {
    const ModelSpec m = model(8, 2, 2);
    SynthParams p;
    p.num_requests = 40;
    p.tokens_per_request = 12;
    p.prefill_mirrors_decode = true;
    p.stickiness = 0.5;
    p.zipf_s = 0.8;
    p.seed = 21;
    const auto ts = generate_synthetic(m, p);
    for (MoeLayer l = 0; l < 2; ++l) CHECK(*prefill_decode_spearman(ts, l) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("frequency normalisation") {
    TraceSet ts{model(4, 1, 1), {}};
    ts.requests.push_back(request("a", {token(Phase::decode, {{2}}), token(Phase::decode, {{2}})}));
    const auto f = expert_frequency(ts, 0);
    CHECK(f.normalized == std::vector<double>{0.0, 0.0, 4.0, 0.0});
    const auto g = expert_frequency(random_fixture(4), 3);
    CHECK(std::accumulate(g.normalized.begin(), g.normalized.end(), 0.0) / 8.0 == doctest::Approx(1.0).epsilon(1e-12));
    const auto empty = make_frequency(std::vector<std::uint64_t>(4, 0));
    CHECK(empty.normalized == std::vector<double>(4, 0.0));
}

TEST_CASE("top fraction and cumulative curve") {
    const std::vector<double> v{7, 2, 1};
    CHECK(cumulative_top_fraction(v, 1.0 / 3.0) == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(cumulative_top_fraction(v, 1.0) == 1.0);
    // ceil(0.5 * 3) = 2 entries
    CHECK(cumulative_top_fraction(v, 0.5) == doctest::Approx(0.9).epsilon(1e-12));
    CHECK_THROWS_AS(cumulative_top_fraction(std::vector<double>{0, 0}, 0.5), DataError);

    const std::vector<double> w{1, 5, 3, 0, 2};
    const auto c = cumulative_curve(w);
    CHECK(std::is_sorted(c.shares.rbegin(), c.shares.rend()));
    for (std::size_t i = 1; i < c.cumulative.size(); ++i) CHECK(c.cumulative[i] >= c.cumulative[i - 1]);
    CHECK(c.cumulative.back() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("uniform generator matches the null model") {
    const ModelSpec m = model(8, 2, 1);
    SynthParams p;
    p.num_requests = 1000;
    p.tokens_per_request = 100;
    p.seed = 13;
    const auto ts = generate_synthetic(m, p);
    const auto co = coactivation_heatmap(ts, 0);
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j)
            if (i != j) CHECK(co.at(i, j) == doctest::Approx(1.0).epsilon(0.1));
    const auto cl = cross_token_heatmap(ts, 0, PhaseFilter::decode, ConditionalNorm::per_selection);
    for (double x : cl.values) CHECK(std::abs(x - 0.125) <= 0.05);
}

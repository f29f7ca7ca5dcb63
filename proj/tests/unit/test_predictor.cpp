// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

#include <doctest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "../fixtures.hpp"
#include "moesim/engine.hpp"
#include "moesim/predictor.hpp"
#include "moesim/profiler.hpp"
#include "moesim/synth.hpp"

using namespace moesim;
using namespace moesim::testing;

namespace {

void observe_n(OnlineHeatmapState& hm, std::vector<ExpertId> prev, std::vector<ExpertId> cur, int n) {
    for (int i = 0; i < n; ++i) hm.observe(0, prev, cur, 1.0);
}

// Rows 1 and 4 rank {2,4} and {4,6} in their top two.
OnlineHeatmapState worked_example_heatmap() {
    OnlineHeatmapState hm(1, 8);
    observe_n(hm, {1}, {2, 4}, 3);
    observe_n(hm, {1}, {7}, 1);
    observe_n(hm, {4}, {4, 6}, 3);
    observe_n(hm, {4}, {0}, 2);
    return hm;
}

TraceSet sticky_trace(std::uint64_t seed, bool mirror) {
    SynthParams p;
    p.num_requests = 64;
    p.tokens_per_request = 24;
    p.prefill_tokens = mirror ? 0 : 8;
    p.prefill_mirrors_decode = mirror;
    p.zipf_s = 1.0;
    p.stickiness = 0.7;
    p.seed = seed;
    return generate_synthetic(model(32, 2, 2), p);
}

}  // namespace

TEST_CASE("worked example: prediction and admission") {
    const auto hm = worked_example_heatmap();
    const PredictorConfig cfg;
    CHECK(hm.top_successors(0, 1, 2) == std::vector<ExpertId>{2, 4});
    CHECK(hm.top_successors(0, 4, 2) == std::vector<ExpertId>{4, 6});

    const auto topo = preset("dojo");
    const ModelSpec m = model(8, 2, 1);
    auto table = initial_round_robin(m, topo);
    DuplicationState dup(25, topo.die().cache_capacity_bytes());
    PredictionTable pt(25, 1, 8);
    const DieId die = 10;

    DieExpertSets active(25);
    active[die] = {1, 4};
    const auto predicted = predict_next(active, hm, 0, cfg);
    CHECK(predicted[die] == std::vector<ExpertId>{2, 4, 6});
    for (DieId d = 0; d < 25; ++d)
        if (d != die) CHECK(predicted[d].empty());

    DieExpertSets remote(25);
    remote[die] = {1, 4};
    const auto decisions = duplication_decisions(0, predicted, remote, pt, dup, table, m.expert_bytes, 1);
    REQUIRE(decisions.size() == 1);
    CHECK(decisions[0].die == die);
    CHECK(decisions[0].expert == 4);
    CHECK(decisions[0].report.admitted);
    CHECK(dup.resident(die, 0, 4));
    CHECK(pt.is_local(die, 0, 4));
    for (ExpertId e = 0; e < 8; ++e) CHECK(pt.cp_en(die, 0, e) == (e == 2 || e == 4 || e == 6));
    CHECK_NOTHROW(pt.check_consistency(dup));

    // the same decision again: already resident, nothing to admit
    CHECK(duplication_decisions(0, predicted, remote, pt, dup, table, m.expert_bytes, 2).empty());
}

TEST_CASE("empty active set predicts nothing") {
    const auto hm = worked_example_heatmap();
    const auto out = predict_next(DieExpertSets(4), hm, 0, PredictorConfig{});
    for (const auto& s : out) CHECK(s.empty());
}

TEST_CASE("cold heatmap predicts nothing") {
    const OnlineHeatmapState hm(2, 8);
    CHECK(hm.empty());
    DieExpertSets active{{0, 1, 2}};
    CHECK(predict_next(active, hm, 1, PredictorConfig{})[0].empty());
}

TEST_CASE("identity heatmap predicts the active expert") {
    OnlineHeatmapState hm(1, 8);
    for (ExpertId e = 0; e < 8; ++e) observe_n(hm, {e}, {e}, 2);
    DieExpertSets active{{3}};
    PredictorConfig cfg;
    cfg.top_n = 1;
    CHECK(predict_next(active, hm, 0, cfg)[0] == std::vector<ExpertId>{3});
}

TEST_CASE("prediction size is bounded by active times top_n") {
    const auto ts = sticky_trace(3, false);
    OnlineHeatmapState hm(2, 32);
    for (const auto& r : ts.requests)
        for (std::size_t t = 1; t < r.tokens.size(); ++t) hm.observe(1, r.tokens[t - 1].selections[1], r.tokens[t].selections[1], 1.0);
    for (std::uint32_t n = 1; n <= 4; ++n) {
        PredictorConfig cfg;
        cfg.top_n = n;
        DieExpertSets active{{0, 5, 9}, {1}, {}};
        const auto out = predict_next(active, hm, 1, cfg);
        for (std::size_t d = 0; d < active.size(); ++d) CHECK(out[d].size() <= active[d].size() * n);
    }
}

TEST_CASE("observe and decay") {
    OnlineHeatmapState hm(1, 4);
    const PredictorConfig cfg;
    const std::vector<ExpertId> a{0}, b{1};
    observe_transition(hm, 0, a, b, cfg);
    CHECK(hm.count(0, 0, 1) == 1.0);
    observe_n(hm, {2}, {3}, 4);
    const std::vector<ExpertId> none;
    hm.observe(0, none, none, 0.5);
    hm.observe(0, none, none, 0.5);
    CHECK(hm.count(0, 0, 1) == 0.25);
    CHECK(hm.count(0, 2, 3) == 1.0);
}

TEST_CASE("long decay runs stay finite and ordered") {
    OnlineHeatmapState hm(1, 4);
    const std::vector<ExpertId> a{0}, b{1}, c{2};
    for (int i = 0; i < 5000; ++i) hm.observe(0, a, i % 3 ? b : c, 0.7);
    CHECK(std::isfinite(hm.count(0, 0, 1)));
    CHECK(hm.count(0, 0, 1) > 0.0);
    CHECK(hm.top_successors(0, 0, 1).size() == 1);
}

TEST_CASE("replaying a trace reproduces profiler counts") {
    const auto ts = sticky_trace(5, false);
    OnlineHeatmapState hm(2, 32);
    const PredictorConfig cfg;
    for (const auto& r : ts.requests)
        for (std::size_t t = 1; t < r.tokens.size(); ++t)
            for (MoeLayer l = 0; l < 2; ++l)
                observe_transition(hm, l, r.tokens[t - 1].selections[l], r.tokens[t].selections[l], cfg);
    for (MoeLayer l = 0; l < 2; ++l) CHECK(hm.counts(l) == cross_token_counts(ts, l, PhaseFilter::both).as_counts());
}

TEST_CASE("prefill seeding equals prefill-only profiler counts") {
    const auto ts = sticky_trace(7, false);
    std::string warning;
    const auto hm = seed_from_prefill(ts, &warning);
    CHECK(warning.empty());
    for (MoeLayer l = 0; l < 2; ++l) CHECK(hm.counts(l) == cross_token_counts(ts, l, PhaseFilter::prefill).as_counts());

    TraceSet decode_only{model(4, 1, 1), {}};
    decode_only.requests.push_back(request("a", {token(Phase::decode, {{0}}), token(Phase::decode, {{1}})}));
    const auto empty = seed_from_prefill(decode_only, &warning);
    CHECK(empty.empty());
    CHECK_FALSE(warning.empty());
}

TEST_CASE("capacity of one expert: second admission evicts the first") {
    const auto topo = preset("dojo");
    const ModelSpec m = model(8, 2, 1);
    auto table = initial_round_robin(m, topo);
    DuplicationState dup(25, m.expert_bytes);
    PredictionTable pt(25, 1, 8);
    DieExpertSets predicted(25), remote(25);
    predicted[20] = {4, 7};
    remote[20] = {4, 7};
    const auto d = duplication_decisions(0, predicted, remote, pt, dup, table, m.expert_bytes, 1);
    REQUIRE(d.size() == 2);
    CHECK(d[0].expert == 4);
    CHECK(d[0].report.evicted.empty());
    CHECK(d[1].expert == 7);
    REQUIRE(d[1].report.evicted.size() == 1);
    CHECK(d[1].report.evicted[0].expert == 4);
    CHECK(dup.resident(20, 0, 7));
    CHECK_FALSE(pt.is_local(20, 0, 4));
    CHECK(pt.is_local(20, 0, 7));

    DuplicationState roomy(25, 2 * m.expert_bytes);
    auto table2 = initial_round_robin(m, topo);
    const auto d2 = duplication_decisions(0, predicted, remote, pt, roomy, table2, m.expert_bytes, 1);
    for (const auto& x : d2) CHECK(x.report.evicted.empty());
}

TEST_CASE("perfect prediction limit on a frozen trace") {
    SynthParams p;
    p.num_requests = 40;
    p.tokens_per_request = 8;
    p.stickiness = 1.0;
    p.zipf_s = 1.0;
    p.seed = 17;
    const ModelSpec m = model(32, 1, 2);
    const auto ts = generate_synthetic(m, p);
    SimConfig cfg;
    cfg.model = m;
    cfg.strategy = Strategy::pred_only;
    cfg.batch_size = 40;
    const auto rep = run(ts, cfg);
    std::uint64_t early = 0;
    for (const auto& k : rep.kernels) {
        if (k.step >= 2) CHECK(k.result.dram_remote_read_bytes == 0);
        else early += k.result.dram_remote_read_bytes;
    }
    CHECK(early > 0);
    CHECK(rep.predictor.duplicate_hits > 0);
}

TEST_CASE("prefill-seeded hit rate matches online steady state") {
    const auto ts = sticky_trace(11, true);
    SimConfig cfg;
    cfg.model = ts.model;
    cfg.strategy = Strategy::pred_only;
    cfg.batch_size = 64;
    const auto online = run(ts, cfg);
    cfg.predictor.mode = PredictorMode::prefill_seeded;
    const auto seeded = run(ts, cfg);
    CHECK(seeded.warnings.empty());
    CHECK(seeded.predictor.precision() == doctest::Approx(online.predictor.precision()).epsilon(0.05));
}

TEST_CASE("predictor config") {
    PredictorConfig c;
    c.top_n = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = PredictorConfig{};
    c.decay = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    const auto j = nlohmann::json::parse(R"({"top_n": 3, "mode": "prefill_seeded"})");
    const auto d = j.get<PredictorConfig>();
    CHECK(d.top_n == 3);
    CHECK(d.mode == PredictorMode::prefill_seeded);
    CHECK_THROWS_AS(parse_predictor_mode("oracle"), ConfigError);
}

// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "../fixtures.hpp"
#include "../oracles.hpp"
#include "moesim/allocator.hpp"
#include "moesim/config.hpp"
#include "moesim/engine.hpp"
#include "moesim/fabric.hpp"
#include "moesim/predictor.hpp"
#include "moesim/profiler.hpp"
#include "moesim/synth.hpp"

using namespace moesim;
using namespace moesim::testing;

namespace {

struct Outcome {
    bool ok = true;
    std::ostringstream detail;

    void require(bool cond, const std::string& what) {
        if (!cond && ok) {
            ok = false;
            detail << "failed: " << what << "; ";
        }
    }
};

int failures = 0;

void criterion(const std::string& name, double budget_s, const std::function<void(Outcome&)>& body) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        body(o);
    } catch (const std::exception& e) {
        o.ok = false;
        o.detail << "exception: " << e.what() << "; ";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > budget_s) {
        o.ok = false;
        o.detail << "took " << secs << " s, budget " << budget_s << " s; ";
    }
    if (!o.ok) ++failures;
    std::printf("%s %s (%.2f s) %s\n", o.ok ? "PASS" : "FAIL", name.c_str(), secs, o.detail.str().c_str());
    std::fflush(stdout);
}

TraceSet fixture_trace(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    TraceSet ts{model(8, 2, 4), {}};
    for (std::size_t r = 0; r < 10; ++r) {
        RequestTrace req;
        req.request_id = "r" + std::to_string(r);
        const std::size_t prefill = rng() % 4;
        for (std::size_t t = 0; t < 8; ++t) {
            TokenStep s;
            s.phase = t < prefill ? Phase::prefill : Phase::decode;
            for (int l = 0; l < 4; ++l) {
                const ExpertId a = static_cast<ExpertId>(rng() % 8);
                ExpertId b = static_cast<ExpertId>(rng() % 7);
                if (b >= a) ++b;
                s.selections.push_back({std::min(a, b), std::max(a, b)});
            }
            req.tokens.push_back(s);
        }
        ts.requests.push_back(req);
    }
    return ts;
}

bool same_counts(const TransitionCounts& c, const oracle::Pairs& p) {
    for (std::size_t i = 0; i < c.dims(); ++i) {
        if (static_cast<double>(c.support(i)) != p.support[i]) return false;
        for (std::size_t j = 0; j < c.dims(); ++j)
            if (static_cast<double>(c.count(i, j)) != p.count[i][j]) return false;
    }
    return true;
}

bool close(const Heatmap& h, const oracle::Matrix& m, double tol) {
    for (std::size_t i = 0; i < h.dims; ++i)
        for (std::size_t j = 0; j < h.dims; ++j)
            if (std::abs(h.at(i, j) - m[i][j]) > tol) return false;
    return true;
}

void profiler_oracle(Outcome& o) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto ts = fixture_trace(seed);
        for (PhaseFilter f : {PhaseFilter::both, PhaseFilter::prefill, PhaseFilter::decode})
            for (MoeLayer l = 0; l < 4; ++l) {
                const auto ct = cross_token_counts(ts, l, f);
                const auto ct_ref = oracle::cross_token(ts, l, f);
                o.require(same_counts(ct, ct_ref), "cross-token counts");
                o.require(close(ct.conditional(2), oracle::conditional(ct_ref), 1e-12), "cross-token probabilities");
                if (l < 3) {
                    const auto cl_ref = oracle::cross_layer(ts, l, f);
                    o.require(same_counts(cross_layer_counts(ts, l, f), cl_ref), "cross-layer counts");
                    o.require(close(cross_layer_heatmap(ts, l, f), oracle::conditional(cl_ref), 1e-12),
                              "cross-layer probabilities");
                }
                const auto co = coactivation_counts(ts, l, f);
                const auto co_ref = oracle::coactivation(ts, l, f);
                o.require(static_cast<double>(co.tokens()) == co_ref.tokens, "coactivation token count");
                for (std::size_t i = 0; i < 8; ++i)
                    for (std::size_t j = 0; j < 8; ++j)
                        o.require(static_cast<double>(co.count(i, j)) == co_ref.count[i][j], "coactivation counts");
                if (co_ref.tokens > 0)
                    o.require(close(coactivation_heatmap(ts, l, f), oracle::coactivation_normalized(co_ref), 1e-12),
                              "coactivation normalisation");
                const auto fr = expert_frequency(ts, l, f);
                const auto fr_ref = oracle::frequency(ts, l, f);
                for (std::size_t e = 0; e < 8; ++e)
                    o.require(static_cast<double>(fr.counts[e]) == fr_ref[e], "frequency counts");
            }
    }
    o.detail << "5 fixtures x 3 phases x 4 layers";
}

void uniform_null(Outcome& o) {
    SynthParams p;
    p.num_requests = 1000;
    p.tokens_per_request = 500;  // 1000 * 500 tokens * 2 layers = 1e6 token-layer samples
    p.seed = 42;
    const auto ts = generate_synthetic(model(8, 2, 2), p);
    double co_dev = 0, freq_ratio = 0, cond_dev = 0;
    for (MoeLayer l = 0; l < 2; ++l) {
        const auto co = coactivation_heatmap(ts, l);
        for (std::size_t i = 0; i < 8; ++i)
            for (std::size_t j = 0; j < 8; ++j)
                if (i != j) co_dev = std::max(co_dev, std::abs(co.at(i, j) - 1.0));
        const auto f = expert_frequency(ts, l);
        freq_ratio = std::max(freq_ratio, *std::max_element(f.normalized.begin(), f.normalized.end()));
        std::vector<Heatmap> cond{cross_token_heatmap(ts, l, PhaseFilter::both, ConditionalNorm::per_selection)};
        if (l == 0) cond.push_back(cross_layer_heatmap(ts, 0, PhaseFilter::both, ConditionalNorm::per_selection));
        for (const auto& h : cond)
            for (double v : h.values) cond_dev = std::max(cond_dev, std::abs(v - 1.0 / 8.0));
    }
    o.require(co_dev <= 0.1, "coactivation within 1 +- 0.1");
    o.require(freq_ratio <= 1.2, "frequency max/mean <= 1.2");
    o.require(cond_dev <= 0.05, "conditional entries within 1/E +- 0.05");
    o.detail << "max |coact-1|=" << co_dev << " max/mean=" << freq_ratio << " max |cond-1/8|=" << cond_dev;
}

void spearman(Outcome& o) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g;
    double worst_free = 0, worst_tied = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 5 + rng() % 60;
        std::vector<double> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = g(rng);
            b[i] = g(rng);
        }
        worst_free = std::max(worst_free, std::abs(*spearman_rho(a, b) - oracle::spearman_closed_form(a, b)));
        std::vector<double> ta(n), tb(n);
        for (std::size_t i = 0; i < n; ++i) {
            ta[i] = static_cast<double>(rng() % 4);
            tb[i] = static_cast<double>(rng() % 3);
        }
        const auto rho = spearman_rho(ta, tb);
        const bool flat = std::all_of(ta.begin(), ta.end(), [&](double x) { return x == ta[0]; }) ||
                          std::all_of(tb.begin(), tb.end(), [&](double x) { return x == tb[0]; });
        if (flat) {
            o.require(!rho.has_value(), "constant input is undefined");
        } else {
            worst_tied = std::max(worst_tied, std::abs(*rho - oracle::spearman_tied(ta, tb)));
        }
        std::vector<double> rev(a);
        for (auto& x : rev) x = -x;
        o.require(*spearman_rho(a, a) == 1.0, "identity gives 1");
        o.require(*spearman_rho(a, rev) == -1.0, "reversal gives -1");
    }
    o.require(worst_free <= 1e-9, "closed form");
    o.require(worst_tied <= 1e-9, "average-rank reference");
    o.detail << "max err tie-free=" << worst_free << " tied=" << worst_tied;
}

void allocator_oracle(Outcome& o) {
    std::mt19937_64 rng(2024);
    ModelSpec m = model(4, 1, 1);
    m.expert_bytes = 18874368;
    m.activation_bytes = 8192;
    m.flops_per_token_per_expert = 37748736.0;
    const DieSpec die = preset("dojo").die();
    CostParams p;  // req_blk 50
    double worst = 0;
    for (int inst = 0; inst < 20; ++inst) {
        const MeshTopology topo = inst % 2 ? MeshTopology(2, 2, die) : MeshTopology(2, 1, die);
        const std::uint32_t D = topo.num_dies();
        const std::size_t E = 1 + rng() % 4;
        m.num_experts = static_cast<std::uint32_t>(E);
        ExpertDistributionTable table(1, E, D);
        oracle::CostWorld w;
        w.x_dies = topo.x_dies();
        w.y_dies = topo.y_dies();
        w.compute = die.compute_flops;
        w.dram_bw = die.dram_bw;
        w.d2d_bw = die.d2d_bw;
        w.flops = m.flops_per_token_per_expert;
        w.expert_bytes = static_cast<double>(m.expert_bytes);
        w.act_bytes = static_cast<double>(m.activation_bytes);
        for (std::size_t e = 0; e < E; ++e) {
            std::vector<DieId> homes{static_cast<DieId>(rng() % D)};
            if (rng() % 4 == 0) {
                const DieId extra = static_cast<DieId>(rng() % D);
                if (extra != homes[0]) homes.push_back(extra);
            }
            std::sort(homes.begin(), homes.end());
            table.set_home(0, static_cast<ExpertId>(e), homes);
            w.holders.push_back(homes);
        }
        // at most 100 tokens in the kernel
        ExpertRequests reqs(E);
        std::uint32_t budget = 100;
        for (std::size_t e = 0; e < E && budget > 0; ++e) {
            const std::uint32_t n = static_cast<std::uint32_t>(rng() % (budget + 1));
            for (std::uint32_t i = 0; i < n; ++i) reqs.token_homes[e].push_back(static_cast<DieId>(rng() % D));
            budget -= n;
        }
        std::vector<oracle::Block> blocks;
        for (std::size_t e = 0; e < E; ++e)
            for (std::size_t off = 0; off < reqs.token_homes[e].size(); off += p.req_blk) {
                oracle::Block b;
                b.expert = e;
                const std::size_t end = std::min(reqs.token_homes[e].size(), off + p.req_blk);
                for (std::size_t i = off; i < end; ++i) b.sources[reqs.token_homes[e][i]] += 1;
                b.tokens = static_cast<double>(end - off);
                blocks.push_back(b);
            }
        if (blocks.empty()) continue;
        const auto plan = allocate(reqs, 0, table, topo, m, p);
        plan.check_conserves(reqs);
        std::vector<oracle::Block> as_blocks;
        std::vector<DieId> assign;
        for (const auto& en : plan.entries) {
            oracle::Block b;
            b.expert = en.expert;
            b.tokens = en.tokens;
            for (const auto& s : en.sources) b.sources[s.die] += s.tokens;
            as_blocks.push_back(b);
            assign.push_back(en.die);
        }
        const double got = oracle::assignment_cost(w, as_blocks, assign);
        const double lib = plan_cost(plan, 0, table, topo, m, p);
        o.require(std::abs(got - lib) <= 1e-9 * got, "library plan cost agrees with the reference cost");
        const double best = oracle::exhaustive_optimum(w, blocks);
        worst = std::max(worst, got / best);
    }
    o.require(worst <= 1.1, "plan cost <= 1.1x exhaustive optimum");
    o.detail << "worst ratio " << worst;
}

struct DirectionalRuns {
    std::map<Strategy, RunReport> reports;
    TraceSet traces;
    ExperimentConfig cfg;
};

DirectionalRuns& directional_runs() {
    static DirectionalRuns runs = [] {
        DirectionalRuns r;
        r.cfg = load_experiment(std::string(MOESIM_SOURCE_DIR) + "/configs/qwen3_like_dojo.json");
        r.traces = materialize_traces(r.cfg);
        for (Strategy s : {Strategy::base, Strategy::allo_only, Strategy::pred_only, Strategy::allo_pred})
            r.reports[s] = run(r.traces, r.cfg.sim_config(s));
        return r;
    }();
    return runs;
}

void directional(Outcome& o) {
    const auto& r = directional_runs();
    const auto& c = r.cfg;
    o.require(c.model.num_experts == 128 && c.model.top_k == 8, "E=128, top_k=8");
    o.require(c.synth && c.synth->zipf_s == 1.0 && c.synth->stickiness == 0.5, "zipf 1.0, stickiness 0.5");
    o.require(c.batch_size == 1024 && c.synth->tokens_per_request >= 32 && c.max_steps == 32, "batch 1024, 32 steps");
    o.require(c.resolved_topology() == preset("dojo"), "dojo preset");
    const auto& rep = r.reports;
    const double tb = rep.at(Strategy::base).throughput(), ta = rep.at(Strategy::allo_only).throughput(),
                 tp = rep.at(Strategy::allo_pred).throughput();
    const double hb = static_cast<double>(rep.at(Strategy::base).hops), ha = static_cast<double>(rep.at(Strategy::allo_only).hops),
                 hp = static_cast<double>(rep.at(Strategy::allo_pred).hops);
    o.require(tp >= ta, "throughput(allo_pred) >= throughput(allo_only)");
    o.require(ta >= tb, "throughput(allo_only) >= throughput(base)");
    o.require(tp / tb >= 2.0, "allo_pred/base throughput >= 2");
    o.require(hb / ha >= 3.0, "base/allo_only hops >= 3");
    o.require(hb / hp >= hb / ha, "allo_pred hop reduction >= allo_only's");
    o.detail << "throughput x" << ta / tb << " (allo_only) x" << rep.at(Strategy::pred_only).throughput() / tb
             << " (pred_only) x" << tp / tb << " (allo_pred); hop reduction " << hb / ha << " / " << hb / hp;
}

void dram_trend(Outcome& o) {
    const auto& rep = directional_runs().reports;
    const auto& base = rep.at(Strategy::base);
    const auto& pred = rep.at(Strategy::pred_only);
    const auto& ap = rep.at(Strategy::allo_pred);
    o.require(pred.dram_remote_read_bytes < base.dram_remote_read_bytes, "pred_only remote reads < base");
    o.require(ap.remote_read_fraction() < 0.2, "allo_pred remote-read fraction < 0.2");
    o.detail << "remote-read fraction base=" << base.remote_read_fraction() << " pred_only=" << pred.remote_read_fraction()
             << " allo_pred=" << ap.remote_read_fraction();
}

void conservation_determinism(Outcome& o) {
    // run() throws InvariantViolation if any kernel loses or duplicates work.
    const auto cfg = load_experiment(std::string(MOESIM_SOURCE_DIR) + "/configs/small_e8.json");
    const auto ts = materialize_traces(cfg);
    std::size_t kernels = 0;
    for (Strategy s : {Strategy::base, Strategy::allo_only, Strategy::pred_only, Strategy::allo_pred}) {
        const auto a = run(ts, cfg.sim_config(s));
        const auto b = run(materialize_traces(cfg), cfg.sim_config(s));
        o.require(to_json(a).dump() == to_json(b).dump(), "small config rerun identical");
        kernels += a.kernels.size();
    }
    const auto& big = directional_runs();
    const auto again = run(big.traces, big.cfg.sim_config(Strategy::allo_pred));
    o.require(to_json(again).dump() == to_json(big.reports.at(Strategy::allo_pred)).dump(),
              "directional allo_pred rerun identical");
    for (const auto& [s, r] : big.reports) kernels += r.kernels.size();
    o.detail << kernels << " kernels conserved, reruns bit-identical";
}

void predictor_example(Outcome& o) {
    OnlineHeatmapState hm(1, 8);
    auto observe = [&](std::vector<ExpertId> a, std::vector<ExpertId> b, int n) {
        for (int i = 0; i < n; ++i) hm.observe(0, a, b, 1.0);
    };
    observe({1}, {2, 4}, 3);
    observe({1}, {5}, 1);
    observe({4}, {4, 6}, 3);
    observe({4}, {3}, 1);
    const PredictorConfig cfg;  // top_n 2
    o.require(hm.top_successors(0, 1, 2) == std::vector<ExpertId>{2, 4}, "row 1 ranks {2,4}");
    o.require(hm.top_successors(0, 4, 2) == std::vector<ExpertId>{4, 6}, "row 4 ranks {4,6}");

    const auto topo = preset("dojo");
    const ModelSpec m = model(8, 2, 1);
    auto table = initial_round_robin(m, topo);
    DuplicationState dup(topo.num_dies(), topo.die().cache_capacity_bytes());
    PredictionTable pt(topo.num_dies(), 1, 8);
    const DieId die = 12;
    DieExpertSets active(topo.num_dies()), remote(topo.num_dies());
    active[die] = {1, 4};
    remote[die] = {1, 4};
    const auto predicted = predict_next(active, hm, 0, cfg);
    o.require(predicted[die] == std::vector<ExpertId>{2, 4, 6}, "prediction {2,4,6}");
    const auto admitted = duplication_decisions(0, predicted, remote, pt, dup, table, m.expert_bytes, 1);
    o.require(admitted.size() == 1 && admitted[0].expert == 4 && admitted[0].report.admitted, "admission {4}");
    o.require(table.dies_holding(0, 4) == std::vector<DieId>{4, die}, "expert 4 duplicated on the die");
    o.detail << "prediction {2,4,6}, admission {4}";
}

void presets(Outcome& o) {
    for (const auto& [name, dies] : std::vector<std::pair<std::string, std::uint32_t>>{{"dojo", 25}, {"tsmc_sow", 24}}) {
        const auto t = preset(name);
        const auto& d = t.die();
        o.require(t.num_dies() == dies, name + " die count");
        o.require(d.dram_bw == 2e12, name + " dram 2 TB/s");
        o.require(d.d2d_bw == 1.5e12, name + " d2d 1.5 TB/s");
        o.require(d.dram_capacity == 256'000'000'000ull, name + " 256 GB");
        o.require(d.compute_flops == 1000e12, name + " 1000 TFLOPS");
        o.require(d.reserved_cache_fraction == 0.10, name + " 10% reserve");
    }
    o.require(preset("dojo").x_dies() == 5 && preset("dojo").y_dies() == 5, "dojo 5x5");
    o.require(preset("tsmc_sow").x_dies() == 3 && preset("tsmc_sow").y_dies() == 8, "tsmc_sow 3x8");
    o.detail << "dojo 5x5, tsmc_sow 3x8";
}

}  // namespace

int main() {
    criterion("profiler_oracle_equivalence", 1.0, profiler_oracle);
    criterion("uniform_null_model", 60.0, uniform_null);
    criterion("spearman_correctness", 10.0, spearman);
    criterion("allocator_vs_exhaustive_optimum", 30.0, allocator_oracle);
    criterion("directional_throughput_and_hops", 120.0, directional);
    criterion("dram_breakdown_trend", 120.0, dram_trend);
    criterion("conservation_and_determinism", 120.0, conservation_determinism);
    criterion("predictor_worked_example", 1.0, predictor_example);
    criterion("hardware_presets", 1.0, presets);
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}

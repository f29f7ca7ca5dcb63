// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

#include "moesim/engine.hpp"

#include "moesim/export.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace moesim {

namespace {

// Activations move in blocks of this many tokens; each block is one hop event per direction.
constexpr std::uint32_t kActivationBlock = 50;

void insert_sorted(std::vector<ExpertId>& v, ExpertId e) {
    auto it = std::lower_bound(v.begin(), v.end(), e);
    if (it == v.end() || *it != e) v.insert(it, e);
}

void route(std::vector<double>& link_busy, const MeshTopology& topo, DieId from, DieId to, double seconds) {
    for (const Link& l : topo.route_path(from, to)) link_busy[topo.link_index(l)] += seconds;
}

}  // namespace

std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::base: return "base";
        case Strategy::allo_only: return "allo_only";
        case Strategy::pred_only: return "pred_only";
        case Strategy::allo_pred: return "allo_pred";
    }
    return "?";
}

Strategy parse_strategy(std::string_view s) {
    for (Strategy v : {Strategy::base, Strategy::allo_only, Strategy::pred_only, Strategy::allo_pred})
        if (s == to_string(v)) return v;
    throw ConfigError("unknown strategy '" + std::string(s) + "' (expected base|allo_only|pred_only|allo_pred)");
}

std::string_view to_string(TokenHomePolicy p) { return p == TokenHomePolicy::expert_home ? "expert_home" : "round_robin"; }

TokenHomePolicy parse_token_home(std::string_view s) {
    if (s == "expert_home") return TokenHomePolicy::expert_home;
    if (s == "round_robin") return TokenHomePolicy::round_robin;
    throw ConfigError("unknown token home policy '" + std::string(s) + "' (expected expert_home|round_robin)");
}

void SimConfig::validate() const {
    model.validate();
    topology.die().validate();
    cost.validate();
    predictor.validate();
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (initial_placement) {
        const auto& t = *initial_placement;
        if (t.num_layers() != model.num_moe_layers() || t.num_experts() != model.num_experts ||
            t.num_dies() != topology.num_dies())
            throw ConfigError("initial placement shape does not match model and topology");
        t.validate();
    }
}

nlohmann::json to_json(const SimConfig& c) {
    nlohmann::json j = fingerprint(c);
    j["strategy"] = to_string(c.strategy);
    return j;
}

nlohmann::json fingerprint(const SimConfig& c) {
    nlohmann::json j;
    j["topology"] = c.topology;
    j["model"] = c.model;
    j["batch_size"] = c.batch_size;
    j["cost"] = c.cost;
    j["predictor"] = c.predictor;
    j["seed"] = c.seed;
    j["max_steps"] = c.max_steps;
    j["baseline_dispatch"] = to_string(c.baseline_dispatch);
    j["token_home"] = to_string(c.token_home);
    j["workload"] = c.workload;
    j["initial_placement"] = c.initial_placement ? nlohmann::json(*c.initial_placement) : nlohmann::json("round_robin");
    return j;
}

std::vector<std::size_t> select_batch(const TraceSet& ts, std::uint32_t batch_size) {
    std::vector<std::size_t> batch;
    for (std::size_t i = 0; i < ts.requests.size() && batch.size() < batch_size; ++i)
        if (ts.requests[i].decode_count() > 0) batch.push_back(i);
    return batch;
}

std::size_t active_tokens(const TraceSet& ts, const std::vector<std::size_t>& batch, std::uint32_t step) {
    std::size_t n = 0;
    for (std::size_t r : batch)
        if (ts.requests[r].decode_index(step)) ++n;
    return n;
}

ExpertRequests kernel_requests(const TraceSet& ts, const std::vector<std::size_t>& batch, std::uint32_t step,
                               MoeLayer layer, TokenHomePolicy policy, const ExpertDistributionTable& initial,
                               std::uint32_t num_dies) {
    ExpertRequests reqs(ts.model.num_experts);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& r = ts.requests[batch[b]];
        const auto idx = r.decode_index(step);
        if (!idx) continue;
        for (ExpertId e : r.tokens[*idx].selections.at(layer)) {
            const DieId home = policy == TokenHomePolicy::expert_home ? initial.home_dies(layer, e).front()
                                                                      : static_cast<DieId>(b % num_dies);
            reqs.token_homes[e].push_back(home);
        }
    }
    return reqs;
}

std::vector<std::uint32_t> kernel_counts(const TraceSet& ts, const std::vector<std::size_t>& batch, std::uint32_t step,
                                         MoeLayer layer) {
    std::vector<std::uint32_t> counts(ts.model.num_experts, 0);
    for (std::size_t r : batch) {
        const auto idx = ts.requests[r].decode_index(step);
        if (!idx) continue;
        for (ExpertId e : ts.requests[r].tokens[*idx].selections.at(layer)) ++counts[e];
    }
    return counts;
}

void KernelOutcome::refresh_makespan() {
    double m = 0.0;
    for (double v : die_busy) m = std::max(m, v);
    for (double v : link_busy) m = std::max(m, v);
    result.makespan = m;
}

KernelOutcome simulate_kernel(const AllocationPlan& plan, MoeLayer layer, const ExpertDistributionTable& table,
                              const MeshTopology& topo, const ModelSpec& spec) {
    const DieSpec& die = topo.die();
    const std::uint32_t D = topo.num_dies();
    KernelOutcome k;
    k.die_busy.assign(D, 0.0);
    k.link_busy.assign(topo.link_slots(), 0.0);
    k.active.resize(D);
    k.remote_reads.resize(D);
    k.duplicate_hits.resize(D);

    const double weight_read = static_cast<double>(spec.expert_bytes) / die.dram_bw;
    const double weight_link = static_cast<double>(spec.expert_bytes) / die.d2d_bw;

    for (const PlanEntry& en : plan.entries) {
        if (en.die >= D) throw InvariantViolation("plan places expert " + std::to_string(en.expert) + " on die " +
                                                  std::to_string(en.die) + " outside the mesh");
        k.token_expert_pairs += en.tokens;
        insert_sorted(k.active[en.die], en.expert);
        k.die_busy[en.die] += static_cast<double>(en.tokens) * spec.flops_per_token_per_expert / die.compute_flops;

        if (table.holds(layer, en.expert, en.die)) {
            k.die_busy[en.die] += weight_read;
            k.result.dram_local_read_bytes += spec.expert_bytes;
            if (!table.is_home(layer, en.expert, en.die)) insert_sorted(k.duplicate_hits[en.die], en.expert);
        } else {
            const auto holders = table.dies_holding(layer, en.expert);
            if (holders.empty()) throw InvariantViolation("expert " + std::to_string(en.expert) + " has no holder");
            DieId src = holders.front();
            for (DieId h : holders)
                if (topo.manhattan(h, en.die) < topo.manhattan(src, en.die)) src = h;
            k.die_busy[src] += weight_read;
            k.result.dram_remote_read_bytes += spec.expert_bytes;
            route(k.link_busy, topo, src, en.die, weight_link);
            k.result.hop_count += static_cast<std::uint64_t>(spec.slices_per_expert) * topo.manhattan(src, en.die);
            insert_sorted(k.remote_reads[en.die], en.expert);
        }

        for (const SourceCount& s : en.sources) {
            if (s.die == en.die) continue;
            const std::uint32_t dist = topo.manhattan(s.die, en.die);
            const std::uint64_t events = (s.tokens + kActivationBlock - 1) / kActivationBlock;
            k.result.hop_count += 2 * events * dist;
            const double t = static_cast<double>(s.tokens) * static_cast<double>(spec.activation_bytes) / die.d2d_bw;
            route(k.link_busy, topo, s.die, en.die, t);
            route(k.link_busy, topo, en.die, s.die, t);
        }
    }
    k.refresh_makespan();
    return k;
}

void charge_duplicate_writes(KernelOutcome& k, const std::vector<AdmissionDecision>& admissions,
                             const MeshTopology& topo, std::uint64_t expert_bytes) {
    bool any = false;
    for (const auto& a : admissions) {
        if (!a.report.admitted) continue;
        k.die_busy.at(a.die) += static_cast<double>(expert_bytes) / topo.die().dram_bw;
        k.result.dram_local_write_bytes += expert_bytes;
        any = true;
    }
    if (any) k.refresh_makespan();
}

DramBreakdown RunReport::dram_fractions() const {
    const double total = static_cast<double>(dram_local_read_bytes) + static_cast<double>(dram_remote_read_bytes) +
                         static_cast<double>(dram_local_write_bytes);
    if (total <= 0.0) return {};
    return {static_cast<double>(dram_local_read_bytes) / total, static_cast<double>(dram_remote_read_bytes) / total,
            static_cast<double>(dram_local_write_bytes) / total};
}

double RunReport::remote_read_fraction() const {
    const double reads = static_cast<double>(dram_local_read_bytes) + static_cast<double>(dram_remote_read_bytes);
    return reads > 0.0 ? static_cast<double>(dram_remote_read_bytes) / reads : 0.0;
}

nlohmann::json to_json(const RunReport& r) {
    const auto f = r.dram_fractions();
    nlohmann::json kernels = nlohmann::json::array();
    for (const auto& k : r.kernels)
        kernels.push_back({{"step", k.step},
                           {"layer", k.layer},
                           {"makespan", k.result.makespan},
                           {"hops", k.result.hop_count},
                           {"local_rd", k.result.dram_local_read_bytes},
                           {"remote_rd", k.result.dram_remote_read_bytes},
                           {"local_wr", k.result.dram_local_write_bytes}});
    return {{"config", r.config},
            {"strategy", to_string(r.strategy)},
            {"generated_tokens", r.generated_tokens},
            {"total_time", r.total_time},
            {"throughput", r.throughput()},
            {"hops", r.hops},
            {"dram",
             {{"local_read_bytes", r.dram_local_read_bytes},
              {"remote_read_bytes", r.dram_remote_read_bytes},
              {"local_write_bytes", r.dram_local_write_bytes},
              {"local_read_fraction", f.local_read},
              {"remote_read_fraction", f.remote_read},
              {"local_write_fraction", f.local_write}}},
            {"predictor",
             {{"predicted", r.predictor.predicted},
              {"predicted_used", r.predictor.predicted_used},
              {"precision", r.predictor.precision()},
              {"admitted", r.predictor.admitted},
              {"rejected", r.predictor.rejected},
              {"evicted", r.predictor.evicted},
              {"duplicate_hits", r.predictor.duplicate_hits}}},
            {"warnings", r.warnings},
            {"kernels", std::move(kernels)}};
}

RunReport report_from_json(const nlohmann::json& j) {
    try {
        RunReport r;
        r.config = j.at("config");
        r.strategy = parse_strategy(j.at("strategy").get<std::string>());
        r.generated_tokens = j.at("generated_tokens").get<std::uint64_t>();
        for (const auto& k : j.at("kernels")) {
            KernelRecord rec;
            rec.step = k.at("step").get<std::uint32_t>();
            rec.layer = k.at("layer").get<MoeLayer>();
            rec.result.makespan = k.at("makespan").get<double>();
            rec.result.hop_count = k.at("hops").get<std::uint64_t>();
            rec.result.dram_local_read_bytes = k.at("local_rd").get<std::uint64_t>();
            rec.result.dram_remote_read_bytes = k.at("remote_rd").get<std::uint64_t>();
            rec.result.dram_local_write_bytes = k.at("local_wr").get<std::uint64_t>();
            r.total_time += rec.result.makespan;
            r.hops += rec.result.hop_count;
            r.dram_local_read_bytes += rec.result.dram_local_read_bytes;
            r.dram_remote_read_bytes += rec.result.dram_remote_read_bytes;
            r.dram_local_write_bytes += rec.result.dram_local_write_bytes;
            r.kernels.push_back(rec);
        }
        if (j.contains("predictor")) {
            const auto& p = j.at("predictor");
            r.predictor.predicted = p.value("predicted", std::uint64_t{0});
            r.predictor.predicted_used = p.value("predicted_used", std::uint64_t{0});
            r.predictor.admitted = p.value("admitted", std::uint64_t{0});
            r.predictor.rejected = p.value("rejected", std::uint64_t{0});
            r.predictor.evicted = p.value("evicted", std::uint64_t{0});
            r.predictor.duplicate_hits = p.value("duplicate_hits", std::uint64_t{0});
        }
        if (j.contains("warnings")) r.warnings = j.at("warnings").get<std::vector<std::string>>();
        const auto& d = j.at("dram");
        if (j.at("hops").get<std::uint64_t>() != r.hops || j.at("total_time").get<double>() != r.total_time ||
            d.at("local_read_bytes").get<std::uint64_t>() != r.dram_local_read_bytes ||
            d.at("remote_read_bytes").get<std::uint64_t>() != r.dram_remote_read_bytes ||
            d.at("local_write_bytes").get<std::uint64_t>() != r.dram_local_write_bytes)
            throw DataError("report aggregates do not match its kernel records");
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed run report: ") + e.what());
    }
}

void write_kernel_csv(std::ostream& os, const RunReport& r) {
    os << "step,layer,strategy,makespan,hops,local_rd,remote_rd,local_wr\n";
    for (const auto& k : r.kernels)
        os << k.step << ',' << k.layer << ',' << to_string(r.strategy) << ',' << format_double(k.result.makespan) << ','
           << k.result.hop_count << ',' << k.result.dram_local_read_bytes << ',' << k.result.dram_remote_read_bytes
           << ',' << k.result.dram_local_write_bytes << '\n';
}

RunReport run(const TraceSet& ts, const SimConfig& cfg) {
    cfg.validate();
    const ModelSpec& spec = ts.model;
    if (spec.num_experts != cfg.model.num_experts || spec.top_k != cfg.model.top_k ||
        spec.num_moe_layers() != cfg.model.num_moe_layers())
        throw ConfigError("trace model (E=" + std::to_string(spec.num_experts) + ", top_k=" + std::to_string(spec.top_k) +
                          ", moe layers=" + std::to_string(spec.num_moe_layers()) + ") does not match the config model");
    // The config's sizes drive timing; the trace only has to agree on shape.
    const ModelSpec& timing = cfg.model;
    const MeshTopology& topo = cfg.topology;
    const std::uint32_t D = topo.num_dies();
    const std::size_t L = spec.num_moe_layers();

    const auto batch = select_batch(ts, cfg.batch_size);
    if (batch.size() < cfg.batch_size)
        throw ConfigError("batch_size " + std::to_string(cfg.batch_size) + " exceeds the " +
                          std::to_string(batch.size()) + " requests with decode tokens");
    std::uint32_t steps = 0;
    for (std::size_t r : batch) steps = std::max<std::uint32_t>(steps, static_cast<std::uint32_t>(ts.requests[r].decode_count()));
    if (cfg.max_steps > 0) steps = std::min(steps, cfg.max_steps);

    const ExpertDistributionTable initial = cfg.initial_placement ? *cfg.initial_placement : initial_round_robin(timing, topo);
    ExpertDistributionTable table = initial;
    DuplicationState dup(D, topo.die().cache_capacity_bytes());
    PredictionTable pt(D, L, spec.num_experts);
    OnlineHeatmapState hm(L, spec.num_experts);
    std::vector<DieExpertSets> last_prediction(L);

    RunReport rep;
    rep.config = to_json(cfg);
    rep.strategy = cfg.strategy;

    const bool predict = uses_predictor(cfg.strategy);
    if (predict && cfg.predictor.mode == PredictorMode::prefill_seeded) {
        std::string warning;
        hm = seed_from_prefill(ts, &warning);
        if (!warning.empty()) rep.warnings.push_back(warning);
    }

    Tick now = 0;
    for (std::uint32_t step = 0; step < steps; ++step) {
        const std::size_t tokens = active_tokens(ts, batch, step);
        rep.generated_tokens += tokens;
        for (MoeLayer layer = 0; layer < L; ++layer, ++now) {
            const ExpertRequests reqs = kernel_requests(ts, batch, step, layer, cfg.token_home, initial, D);
            const AllocationPlan plan = uses_allocator(cfg.strategy)
                                            ? allocate(reqs, layer, table, topo, timing, cfg.cost)
                                            : baseline_allocate(reqs, layer, table, topo, cfg.baseline_dispatch);
            plan.check_conserves(reqs);
            if (plan.total_tokens() != static_cast<std::uint64_t>(tokens) * spec.top_k)
                throw InvariantViolation("kernel (step " + std::to_string(step) + ", layer " + std::to_string(layer) +
                                         ") computes " + std::to_string(plan.total_tokens()) + " token-expert pairs, expected " +
                                         std::to_string(tokens * spec.top_k));

            KernelOutcome k = simulate_kernel(plan, layer, table, topo, timing);

            if (predict) {
                for (DieId d = 0; d < D; ++d) {
                    for (ExpertId e : k.duplicate_hits[d]) dup.touch(d, layer, e, now);
                    rep.predictor.duplicate_hits += k.duplicate_hits[d].size();
                    if (!last_prediction[layer].empty()) {
                        const auto& pred = last_prediction[layer][d];
                        rep.predictor.predicted += pred.size();
                        std::vector<ExpertId> used;
                        std::set_intersection(pred.begin(), pred.end(), k.active[d].begin(), k.active[d].end(),
                                              std::back_inserter(used));
                        rep.predictor.predicted_used += used.size();
                    }
                }
                if (step > 0) {
                    for (std::size_t r : batch) {
                        const auto& req = ts.requests[r];
                        const auto cur = req.decode_index(step);
                        if (!cur) continue;
                        const auto& prev = req.tokens[*cur - 1].selections[layer];
                        observe_transition(hm, layer, prev, req.tokens[*cur].selections[layer], cfg.predictor);
                    }
                }
                auto predicted = predict_next(k.active, hm, layer, cfg.predictor);
                const auto admissions = duplication_decisions(layer, predicted, k.remote_reads, pt, dup, table,
                                                              timing.expert_bytes, now);
                for (const auto& a : admissions) {
                    if (a.report.admitted) ++rep.predictor.admitted;
                    else ++rep.predictor.rejected;
                    rep.predictor.evicted += a.report.evicted.size();
                }
                charge_duplicate_writes(k, admissions, topo, timing.expert_bytes);
                last_prediction[layer] = std::move(predicted);
            }

            rep.total_time += k.result.makespan;
            rep.hops += k.result.hop_count;
            rep.dram_local_read_bytes += k.result.dram_local_read_bytes;
            rep.dram_remote_read_bytes += k.result.dram_remote_read_bytes;
            rep.dram_local_write_bytes += k.result.dram_local_write_bytes;
            rep.kernels.push_back({step, layer, k.result});
        }
    }
    if (predict) {
        dup.check_consistency(table);
        pt.check_consistency(dup);
    }
    return rep;
}

std::vector<ComparisonRow> compare(const std::map<Strategy, RunReport>& reports) {
    auto base_it = reports.find(Strategy::base);
    if (base_it == reports.end()) throw ConfigError("compare: a base report is required");
    const RunReport& base = base_it->second;
    auto strip = [](nlohmann::json j) {
        j.erase("strategy");
        return j;
    };
    const auto fp = strip(base.config);
    std::vector<ComparisonRow> rows;
    for (const auto& [s, r] : reports) {
        if (r.strategy != s) throw ConfigError("compare: report keyed as " + std::string(to_string(s)) + " ran " +
                                               std::string(to_string(r.strategy)));
        if (strip(r.config) != fp)
            throw ConfigError("compare: " + std::string(to_string(s)) + " report was produced from a different config");
        ComparisonRow row;
        row.strategy = s;
        row.throughput = r.throughput();
        row.throughput_ratio = base.throughput() > 0.0 ? row.throughput / base.throughput() : 1.0;
        row.hops = r.hops;
        if (r.hops > 0) row.hop_reduction = static_cast<double>(base.hops) / static_cast<double>(r.hops);
        else row.hop_reduction = base.hops > 0 ? std::numeric_limits<double>::infinity() : 1.0;
        row.dram = r.dram_fractions();
        rows.push_back(row);
    }
    return rows;
}

void write_comparison_csv(std::ostream& os, const std::vector<ComparisonRow>& rows) {
    os << "strategy,throughput,throughput_ratio,hops,hop_reduction,local_rd_frac,remote_rd_frac,local_wr_frac\n";
    for (const auto& r : rows)
        os << to_string(r.strategy) << ',' << format_double(r.throughput) << ',' << format_double(r.throughput_ratio) << ','
           << r.hops << ',' << format_double(r.hop_reduction) << ',' << format_double(r.dram.local_read) << ','
           << format_double(r.dram.remote_read) << ',' << format_double(r.dram.local_write) << '\n';
}

nlohmann::json to_json(const std::vector<ComparisonRow>& rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json hr = std::isinf(r.hop_reduction) ? nlohmann::json("inf") : nlohmann::json(r.hop_reduction);
        out.push_back({{"strategy", to_string(r.strategy)},
                       {"throughput", r.throughput},
                       {"throughput_ratio", r.throughput_ratio},
                       {"hops", r.hops},
                       {"hop_reduction", hr},
                       {"local_rd_frac", r.dram.local_read},
                       {"remote_rd_frac", r.dram.remote_read},
                       {"local_wr_frac", r.dram.local_write}});
    }
    return out;
}

}  // namespace moesim

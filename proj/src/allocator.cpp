// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

#include "moesim/allocator.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>

namespace moesim {

std::vector<std::uint32_t> ExpertRequests::counts() const {
    std::vector<std::uint32_t> c(token_homes.size());
    for (std::size_t e = 0; e < c.size(); ++e) c[e] = count(static_cast<ExpertId>(e));
    return c;
}

std::uint64_t ExpertRequests::total() const {
    std::uint64_t n = 0;
    for (const auto& h : token_homes) n += h.size();
    return n;
}

std::vector<SourceCount> histogram(std::span<const DieId> homes) {
    std::map<DieId, std::uint32_t> m;
    for (DieId d : homes) ++m[d];
    std::vector<SourceCount> out;
    out.reserve(m.size());
    for (const auto& [d, n] : m) out.push_back({d, n});
    return out;
}

namespace {

void add_sources(std::vector<SourceCount>& into, std::span<const SourceCount> from) {
    for (const auto& s : from) {
        auto it = std::lower_bound(into.begin(), into.end(), s.die,
                                   [](const SourceCount& a, DieId d) { return a.die < d; });
        if (it != into.end() && it->die == s.die) it->tokens += s.tokens;
        else into.insert(it, s);
    }
}

}  // namespace

std::uint64_t AllocationPlan::total_tokens() const {
    std::uint64_t n = 0;
    for (const auto& e : entries) n += e.tokens;
    return n;
}

std::uint64_t AllocationPlan::tokens_for(ExpertId e) const {
    std::uint64_t n = 0;
    for (const auto& en : entries)
        if (en.expert == e) n += en.tokens;
    return n;
}

void AllocationPlan::check_conserves(const ExpertRequests& reqs) const {
    std::vector<std::uint64_t> per(reqs.num_experts(), 0);
    std::vector<std::pair<ExpertId, DieId>> seen;
    seen.reserve(entries.size());
    for (const auto& en : entries) {
        if (en.expert >= reqs.num_experts()) throw InvariantViolation("plan names unknown expert " + std::to_string(en.expert));
        if (en.tokens == 0) throw InvariantViolation("plan entry with zero tokens");
        std::uint32_t src = 0;
        for (const auto& s : en.sources) src += s.tokens;
        if (src != en.tokens) throw InvariantViolation("plan entry sources do not sum to its token count");
        per[en.expert] += en.tokens;
        seen.emplace_back(en.expert, en.die);
    }
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end())
        throw InvariantViolation("plan has duplicate (expert, die) entries after merge");
    for (std::size_t e = 0; e < per.size(); ++e)
        if (per[e] != reqs.count(static_cast<ExpertId>(e)))
            throw InvariantViolation("expert " + std::to_string(e) + ": plan carries " + std::to_string(per[e]) +
                                     " tokens, requests " + std::to_string(reqs.count(static_cast<ExpertId>(e))));
}

void CostParams::validate() const {
    if (req_blk < 1) throw ConfigError("cost: req_blk must be >= 1");
    for (double w : {w_load, w_compute, w_weights, w_activations, w_dram})
        if (!(w >= 0.0)) throw ConfigError("cost: term weights must be >= 0");
}

void to_json(nlohmann::json& j, const CostParams& p) {
    j = nlohmann::json{{"req_blk", p.req_blk},       {"candidate_dis", p.candidate_dis}, {"split_divisor", p.split_divisor},
                       {"w_load", p.w_load},         {"w_compute", p.w_compute},         {"w_weights", p.w_weights},
                       {"w_activations", p.w_activations}, {"w_dram", p.w_dram},        {"holder_affinity", p.holder_affinity}};
}

void from_json(const nlohmann::json& j, CostParams& p) {
    CostParams out;
    out.req_blk = j.value("req_blk", out.req_blk);
    out.candidate_dis = j.value("candidate_dis", out.candidate_dis);
    out.split_divisor = j.value("split_divisor", out.split_divisor);
    out.w_load = j.value("w_load", out.w_load);
    out.w_compute = j.value("w_compute", out.w_compute);
    out.w_weights = j.value("w_weights", out.w_weights);
    out.w_activations = j.value("w_activations", out.w_activations);
    out.w_dram = j.value("w_dram", out.w_dram);
    out.holder_affinity = j.value("holder_affinity", out.holder_affinity);
    out.validate();
    p = out;
}

CostModel::CostModel(const ModelSpec& spec, const MeshTopology& topo, const ExpertDistributionTable& table,
                     MoeLayer layer, CostParams params)
    : spec_(spec), topo_(topo), table_(table), layer_(layer), p_(params), load_(topo.num_dies(), 0.0),
      fetched_(spec.num_experts), reserved_(spec.num_experts, 0) {}

double CostModel::dram_time() const {
    return p_.w_dram * static_cast<double>(spec_.expert_bytes) / topo_.die().dram_bw;
}

void CostModel::reserve_reads(const ExpertRequests& reqs) {
    for (ExpertId e = 0; e < reqs.num_experts(); ++e) {
        if (reqs.count(e) == 0 || reserved_[e]) continue;
        const auto holders = table_.dies_holding(layer_, e);
        if (holders.size() != 1) continue;
        load_[holders.front()] += dram_time();
        reserved_[e] = 1;
    }
}

double CostModel::makespan() const { return load_.empty() ? 0.0 : *std::max_element(load_.begin(), load_.end()); }

DieId CostModel::nearest_holder(ExpertId e, DieId die) const {
    DieId best = 0;
    std::uint32_t best_d = std::numeric_limits<std::uint32_t>::max();
    for (DieId h : table_.dies_holding(layer_, e)) {
        const std::uint32_t d = topo_.manhattan(h, die);
        if (d < best_d) {
            best_d = d;
            best = h;
        }
    }
    return best;
}

double CostModel::compute_time(std::uint32_t tokens) const {
    return static_cast<double>(tokens) * spec_.flops_per_token_per_expert / topo_.die().compute_flops;
}

double CostModel::activation_time(DieId die, std::span<const SourceCount> sources) const {
    double hops = 0.0;
    for (const auto& s : sources) hops += static_cast<double>(s.tokens) * topo_.manhattan(s.die, die);
    return hops * static_cast<double>(spec_.activation_bytes) / topo_.die().d2d_bw;
}

double CostModel::weight_time(DieId die, ExpertId e) const {
    if (std::binary_search(fetched_[e].begin(), fetched_[e].end(), die)) return 0.0;
    if (table_.holds(layer_, e, die)) return reserved(e, die) ? 0.0 : dram_time();
    const std::uint32_t hops = topo_.manhattan(nearest_holder(e, die), die);
    // the DRAM read itself lands on the holder, see commit()
    return p_.w_weights * static_cast<double>(spec_.expert_bytes) * hops / topo_.die().d2d_bw;
}

double CostModel::block_cost(DieId die, ExpertId e, std::uint32_t tokens, std::span<const SourceCount> sources) const {
    return p_.w_load * load_[die] + p_.w_compute * compute_time(tokens) + weight_time(die, e) +
           p_.w_activations * activation_time(die, sources);
}

double CostModel::placement_cost(DieId die, ExpertId e, std::uint32_t tokens,
                                 std::span<const SourceCount> sources) const {
    const double own = block_cost(die, e, tokens, sources);
    if (table_.holds(layer_, e, die) || std::binary_search(fetched_[e].begin(), fetched_[e].end(), die)) return own;
    const DieId h = nearest_holder(e, die);
    return std::max(own, p_.w_load * load_[h] + (reserved(e, h) ? 0.0 : dram_time()));
}

void CostModel::commit(DieId die, ExpertId e, std::uint32_t tokens, std::span<const SourceCount> sources) {
    load_[die] += p_.w_compute * compute_time(tokens) + weight_time(die, e) + p_.w_activations * activation_time(die, sources);
    if (std::binary_search(fetched_[e].begin(), fetched_[e].end(), die)) return;
    const DieId h = table_.holds(layer_, e, die) ? die : nearest_holder(e, die);
    if (h != die && !reserved(e, h)) load_[h] += dram_time();
    reserved_[e] = 0;
    fetched_[e].insert(std::lower_bound(fetched_[e].begin(), fetched_[e].end(), die), die);
}

std::vector<DieId> gen_candidate_list(ExpertId expert, MoeLayer layer, const ExpertDistributionTable& table,
                                      const MeshTopology& topo, std::span<const double> load, const CostParams& p,
                                      std::uint32_t req_num) {
    const std::vector<DieId> holders = table.dies_holding(layer, expert);
    std::vector<DieId> cands = holders;
    for (DieId h : holders)
        for (DieId d : topo.dies_within(h, p.candidate_dis)) cands.push_back(d);
    std::sort(cands.begin(), cands.end());
    cands.erase(std::unique(cands.begin(), cands.end()), cands.end());

    auto is_holder = [&](DieId d) { return std::binary_search(holders.begin(), holders.end(), d); };
    auto less = [&](DieId a, DieId b) {
        if (load[a] != load[b]) return load[a] < load[b];
        if (p.holder_affinity && is_holder(a) != is_holder(b)) return is_holder(a);
        return a < b;
    };
    std::sort(cands.begin(), cands.end(), less);

    const std::uint64_t div = p.effective_split_divisor();
    const std::uint64_t want = div == 0 ? 1 : (static_cast<std::uint64_t>(std::max<std::uint32_t>(req_num, 1)) + div - 1) / div;
    const std::size_t keep = static_cast<std::size_t>(std::clamp<std::uint64_t>(want, 1, cands.size()));
    std::vector<DieId> out(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep));
    if (p.holder_affinity) {
        for (DieId h : holders)
            if (std::find(out.begin(), out.end(), h) == out.end()) out.push_back(h);
        std::sort(out.begin(), out.end(), less);
    }
    return out;
}

AllocationPlan allocate(const ExpertRequests& reqs, MoeLayer layer, const ExpertDistributionTable& table,
                        const MeshTopology& topo, const ModelSpec& spec, const CostParams& p) {
    p.validate();
    CostModel cm(spec, topo, table, layer, p);
    cm.reserve_reads(reqs);

    std::vector<ExpertId> order;
    for (ExpertId e = 0; e < reqs.num_experts(); ++e)
        if (reqs.count(e) > 0) order.push_back(e);
    std::stable_sort(order.begin(), order.end(), [&](ExpertId a, ExpertId b) { return reqs.count(a) > reqs.count(b); });

    AllocationPlan plan;
    for (ExpertId e : order) {
        const auto& homes = reqs.token_homes[e];
        const std::uint32_t req_num = reqs.count(e);
        const auto cands = gen_candidate_list(e, layer, table, topo, cm.load(), p, req_num);
        const std::size_t first_entry = plan.entries.size();
        for (std::uint32_t off = 0; off < req_num; off += p.req_blk) {
            const std::uint32_t blk = std::min(p.req_blk, req_num - off);
            const auto sources = histogram(std::span<const DieId>(homes).subspan(off, blk));
            DieId target = cands.front();
            double best = std::numeric_limits<double>::infinity();
            for (DieId d : cands) {
                const double c = cm.placement_cost(d, e, blk, sources);
                if (c < best || (c == best && d < target)) {
                    best = c;
                    target = d;
                }
            }
            cm.commit(target, e, blk, sources);
            // MergeTasks: fold blocks for the same (expert, die) into one entry.
            auto it = std::find_if(plan.entries.begin() + static_cast<std::ptrdiff_t>(first_entry), plan.entries.end(),
                                   [&](const PlanEntry& en) { return en.die == target; });
            if (it == plan.entries.end()) {
                plan.entries.push_back({e, target, blk, sources});
            } else {
                it->tokens += blk;
                add_sources(it->sources, sources);
            }
        }
    }
    std::sort(plan.entries.begin(), plan.entries.end(), [](const PlanEntry& a, const PlanEntry& b) {
        return std::pair(a.expert, a.die) < std::pair(b.expert, b.die);
    });
    // Greedy can still lose to the whole-expert-at-home plan on odd instances;
    // keep whichever the cost model prefers so allocation never does worse.
    AllocationPlan home = baseline_allocate(reqs, layer, table, topo, BaselineDispatch::home);
    if (plan_cost(home, layer, table, topo, spec, p) < plan_cost(plan, layer, table, topo, spec, p)) return home;
    return plan;
}

std::string_view to_string(BaselineDispatch d) {
    return d == BaselineDispatch::home ? "home" : "placement_oblivious";
}

BaselineDispatch parse_baseline_dispatch(std::string_view s) {
    if (s == "home") return BaselineDispatch::home;
    if (s == "placement_oblivious") return BaselineDispatch::placement_oblivious;
    throw ConfigError("unknown baseline dispatch '" + std::string(s) + "' (expected placement_oblivious|home)");
}

AllocationPlan baseline_allocate(const ExpertRequests& reqs, MoeLayer layer, const ExpertDistributionTable& table,
                                 const MeshTopology& topo, BaselineDispatch dispatch) {
    AllocationPlan plan;
    const std::uint64_t E = reqs.num_experts();
    const std::uint64_t D = topo.num_dies();
    for (ExpertId e = 0; e < E; ++e) {
        if (reqs.count(e) == 0) continue;
        DieId die = dispatch == BaselineDispatch::home ? table.home_dies(layer, e).front()
                                                       : static_cast<DieId>(static_cast<std::uint64_t>(e) * D / E);
        plan.entries.push_back({e, die, reqs.count(e), histogram(reqs.token_homes[e])});
    }
    return plan;
}

double plan_cost(const AllocationPlan& plan, MoeLayer layer, const ExpertDistributionTable& table,
                 const MeshTopology& topo, const ModelSpec& spec, const CostParams& p) {
    CostModel cm(spec, topo, table, layer, p);
    for (const auto& en : plan.entries) cm.commit(en.die, en.expert, en.tokens, en.sources);
    return cm.makespan();
}

}  // namespace moesim

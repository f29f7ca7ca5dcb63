// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "moesim/fabric.hpp"
#include "moesim/placement.hpp"
#include "moesim/trace.hpp"

namespace moesim {

/// Tokens routed to each expert in one MoE kernel, with the die each token's
/// activation starts on.
struct ExpertRequests {
    // token_homes[e][i]: home die of the i-th token (batch order) routed to expert e.
    std::vector<std::vector<DieId>> token_homes;

    ExpertRequests() = default;
    explicit ExpertRequests(std::size_t experts) : token_homes(experts) {}

    std::size_t num_experts() const { return token_homes.size(); }
    std::uint32_t count(ExpertId e) const { return static_cast<std::uint32_t>(token_homes[e].size()); }
    std::vector<std::uint32_t> counts() const;
    std::uint64_t total() const;
};

/// Builds requests where every token of expert e is homed on `home_of(e)`.
template <class HomeFn>
ExpertRequests requests_from_counts(std::span<const std::uint32_t> counts, HomeFn home_of) {
    ExpertRequests r(counts.size());
    for (std::size_t e = 0; e < counts.size(); ++e) r.token_homes[e].assign(counts[e], home_of(static_cast<ExpertId>(e)));
    return r;
}

struct SourceCount {
    DieId die = 0;
    std::uint32_t tokens = 0;
    bool operator==(const SourceCount&) const = default;
};

/// Histogram of home dies, ascending by die.
std::vector<SourceCount> histogram(std::span<const DieId> homes);

struct PlanEntry {
    ExpertId expert = 0;
    DieId die = 0;
    std::uint32_t tokens = 0;
    std::vector<SourceCount> sources;  // where this entry's activations come from
    bool operator==(const PlanEntry&) const = default;
};

struct AllocationPlan {
    std::vector<PlanEntry> entries;

    std::uint64_t total_tokens() const;
    std::uint64_t tokens_for(ExpertId e) const;
    /// Throws InvariantViolation unless every expert's tokens are conserved,
    /// every entry is non-empty and (expert, die) pairs are unique.
    void check_conserves(const ExpertRequests& reqs) const;

    bool operator==(const AllocationPlan&) const = default;
};

struct CostParams {
    std::uint32_t req_blk = 50;
    std::uint32_t candidate_dis = 1;
    /// Tokens per additional candidate die; 0 means req_blk.
    std::uint32_t split_divisor = 0;
    double w_load = 1.0;
    double w_compute = 1.0;
    double w_weights = 1.0;
    double w_activations = 1.0;
    double w_dram = 1.0;
    /// Holder dies win load ties and are never truncated out of the candidate list.
    bool holder_affinity = true;

    std::uint32_t effective_split_divisor() const { return split_divisor == 0 ? req_blk : split_divisor; }
    void validate() const;
};

void to_json(nlohmann::json& j, const CostParams& p);
/// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, CostParams& p);

/// Per-kernel load ledger plus the block cost model.
///
/// block_cost(d) = load[d] + T_compute + T_weights + T_activations, where
///   T_compute     = tokens * flops_per_token_per_expert / compute
///   T_weights     = 0 if d already has the weights this kernel,
///                   w_dram * expert_bytes / dram_bw if d holds the expert,
///                   else expert_bytes * hops(nearest holder, d) / d2d_bw
///   T_activations = sum over tokens of activation_bytes * hops(home, d) / d2d_bw
///
/// commit() adds the block's compute/transfer time to d, and the weight DRAM
/// read (expert_bytes / dram_bw) to whichever die's DRAM serves it, once per
/// (expert, die) per kernel.
class CostModel {
   public:
    CostModel(const ModelSpec& spec, const MeshTopology& topo, const ExpertDistributionTable& table, MoeLayer layer,
              CostParams params);

    std::span<const double> load() const { return load_; }
    double makespan() const;

    /// Weight cost of a block on `die`: zero once the die has the expert's weights
    /// this kernel, else its own DRAM read (holders) or the fetch (non-holders).
    double weight_time(DieId die, ExpertId e) const;
    /// Nearest die holding `e` (Manhattan, then lowest id).
    DieId nearest_holder(ExpertId e, DieId die) const;

    double compute_time(std::uint32_t tokens) const;
    double activation_time(DieId die, std::span<const SourceCount> sources) const;
    double block_cost(DieId die, ExpertId e, std::uint32_t tokens, std::span<const SourceCount> sources) const;
    /// What allocate minimises: block_cost, or the serving holder's load after
    /// its DRAM read if that is larger. Offloading never looks free.
    double placement_cost(DieId die, ExpertId e, std::uint32_t tokens, std::span<const SourceCount> sources) const;
    void commit(DieId die, ExpertId e, std::uint32_t tokens, std::span<const SourceCount> sources);
    /// Charges each single-holder active expert's first DRAM read to its holder
    /// now. The first read that holder actually serves for it is then free, so
    /// final loads are unchanged but early blocks see the reads to come.
    void reserve_reads(const ExpertRequests& reqs);

   private:
    double dram_time() const;
    bool reserved(ExpertId e, DieId holder) const { return reserved_[e] && nearest_holder(e, holder) == holder; }

    const ModelSpec& spec_;
    const MeshTopology& topo_;
    const ExpertDistributionTable& table_;
    MoeLayer layer_;
    CostParams p_;
    std::vector<double> load_;
    std::vector<std::vector<DieId>> fetched_;  // per expert, sorted
    std::vector<char> reserved_;               // per expert: holder read prepaid
};

/// Holders plus dies within candidate_dis of any holder, ordered by current
/// load (ties: holders first when holder_affinity, then lower id), truncated
/// to clamp(ceil(req_num / split_divisor), 1, |candidates|).
std::vector<DieId> gen_candidate_list(ExpertId expert, MoeLayer layer, const ExpertDistributionTable& table,
                                      const MeshTopology& topo, std::span<const double> load, const CostParams& p,
                                      std::uint32_t req_num);

/// Placement-aware block allocation: experts in descending request order, blocks
/// of req_blk tokens each sent to the argmin-cost candidate, then merged into one entry per (expert, die), sorted by expert then die.
/// Falls back to the home-die baseline plan when that has a strictly lower plan_cost.
AllocationPlan allocate(const ExpertRequests& reqs, MoeLayer layer, const ExpertDistributionTable& table,
                        const MeshTopology& topo, const ModelSpec& spec, const CostParams& p);

enum class BaselineDispatch : std::uint8_t {
    /// Expert e runs on die floor(e * dies / E): equal experts per die, chosen
    /// without looking at where the weights live.
    placement_oblivious,
    /// Expert e runs on its lowest home die.
    home,
};

std::string_view to_string(BaselineDispatch d);
BaselineDispatch parse_baseline_dispatch(std::string_view s);

/// Whole expert to one die; no splitting, no load awareness.
AllocationPlan baseline_allocate(const ExpertRequests& reqs, MoeLayer layer, const ExpertDistributionTable& table,
                                 const MeshTopology& topo, BaselineDispatch dispatch = BaselineDispatch::home);

/// Cost-model makespan (max die load) of a plan.
double plan_cost(const AllocationPlan& plan, MoeLayer layer, const ExpertDistributionTable& table,
                 const MeshTopology& topo, const ModelSpec& spec, const CostParams& p);

}  // namespace moesim

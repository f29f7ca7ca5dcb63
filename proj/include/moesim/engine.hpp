// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "moesim/allocator.hpp"
#include "moesim/fabric.hpp"
#include "moesim/placement.hpp"
#include "moesim/predictor.hpp"
#include "moesim/trace.hpp"

namespace moesim {

enum class Strategy : std::uint8_t { base, allo_only, pred_only, allo_pred };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view s);
inline bool uses_allocator(Strategy s) { return s == Strategy::allo_only || s == Strategy::allo_pred; }
inline bool uses_predictor(Strategy s) { return s == Strategy::pred_only || s == Strategy::allo_pred; }

/// Where a token's activation lives before the MoE kernel runs.
enum class TokenHomePolicy : std::uint8_t {
    /// The activation for expert e starts on e's initial home die.
    expert_home,
    /// Token at batch position b lives on die b mod dies.
    round_robin,
};

std::string_view to_string(TokenHomePolicy p);
TokenHomePolicy parse_token_home(std::string_view s);

struct SimConfig {
    MeshTopology topology = preset("dojo");
    ModelSpec model;
    Strategy strategy = Strategy::base;
    std::uint32_t batch_size = 1;
    CostParams cost;
    PredictorConfig predictor;
    std::uint64_t seed = 0;
    /// 0 runs every decode step of the batch.
    std::uint32_t max_steps = 0;
    BaselineDispatch baseline_dispatch = BaselineDispatch::placement_oblivious;
    TokenHomePolicy token_home = TokenHomePolicy::expert_home;
    /// Defaults to round-robin homes.
    std::optional<ExpertDistributionTable> initial_placement;
    /// Describes the trace source (synthetic parameters or file paths); only recorded.
    nlohmann::json workload;

    void validate() const;
};

nlohmann::json to_json(const SimConfig& c);
/// Strategy-independent view of the config used to check that reports are comparable.
nlohmann::json fingerprint(const SimConfig& c);

/// Indices of the first batch_size requests that have at least one decode token.
std::vector<std::size_t> select_batch(const TraceSet& ts, std::uint32_t batch_size);

/// Number of batch requests with a decode token at `step`.
std::size_t active_tokens(const TraceSet& ts, const std::vector<std::size_t>& batch, std::uint32_t step);

/// Per-expert token homes for one kernel. Requests without a decode token at
/// `step` drop out; batch position is the index into `batch`.
ExpertRequests kernel_requests(const TraceSet& ts, const std::vector<std::size_t>& batch, std::uint32_t step,
                               MoeLayer layer, TokenHomePolicy policy, const ExpertDistributionTable& initial,
                               std::uint32_t num_dies);

/// Plain per-expert counts for one kernel.
std::vector<std::uint32_t> kernel_counts(const TraceSet& ts, const std::vector<std::size_t>& batch, std::uint32_t step,
                                         MoeLayer layer);

struct KernelResult {
    double makespan = 0.0;
    std::uint64_t hop_count = 0;
    std::uint64_t dram_local_read_bytes = 0;
    std::uint64_t dram_remote_read_bytes = 0;
    std::uint64_t dram_local_write_bytes = 0;

    bool operator==(const KernelResult&) const = default;
};

struct KernelOutcome {
    KernelResult result;
    std::vector<double> die_busy;
    std::vector<double> link_busy;
    /// Experts run on each die, ascending.
    DieExpertSets active;
    /// Experts each die fetched from another die's DRAM, ascending.
    DieExpertSets remote_reads;
    /// Experts served from a duplicate copy on the executing die.
    DieExpertSets duplicate_hits;
    std::uint64_t token_expert_pairs = 0;

    void refresh_makespan();
};

/// Bottleneck contention model: every die and directed link accumulates busy
/// time, and the kernel takes as long as the busiest one.
KernelOutcome simulate_kernel(const AllocationPlan& plan, MoeLayer layer, const ExpertDistributionTable& table,
                              const MeshTopology& topo, const ModelSpec& spec);

/// Adds local DRAM write time for freshly admitted duplicates to `k`.
void charge_duplicate_writes(KernelOutcome& k, const std::vector<AdmissionDecision>& admissions,
                             const MeshTopology& topo, std::uint64_t expert_bytes);

struct KernelRecord {
    std::uint32_t step = 0;
    MoeLayer layer = 0;
    KernelResult result;
};

struct PredictorStats {
    std::uint64_t predicted = 0;       // (die, expert) predictions issued
    std::uint64_t predicted_used = 0;  // of those, run on that die at the next step
    std::uint64_t admitted = 0;
    std::uint64_t rejected = 0;
    std::uint64_t evicted = 0;
    std::uint64_t duplicate_hits = 0;

    double precision() const { return predicted ? static_cast<double>(predicted_used) / predicted : 0.0; }
};

struct DramBreakdown {
    double local_read = 0.0;
    double remote_read = 0.0;
    double local_write = 0.0;
};

struct RunReport {
    nlohmann::json config;
    Strategy strategy = Strategy::base;
    std::vector<KernelRecord> kernels;
    std::uint64_t generated_tokens = 0;
    double total_time = 0.0;
    std::uint64_t hops = 0;
    std::uint64_t dram_local_read_bytes = 0;
    std::uint64_t dram_remote_read_bytes = 0;
    std::uint64_t dram_local_write_bytes = 0;
    PredictorStats predictor;
    std::vector<std::string> warnings;

    double throughput() const { return total_time > 0.0 ? static_cast<double>(generated_tokens) / total_time : 0.0; }
    /// Fractions of all DRAM traffic; zeros when there was none.
    DramBreakdown dram_fractions() const;
    /// remote / (local + remote) reads.
    double remote_read_fraction() const;
};

nlohmann::json to_json(const RunReport& r);
/// Rebuilds a report and recomputes its aggregates from the kernel records;
/// DataError if the stored aggregates disagree.
RunReport report_from_json(const nlohmann::json& j);

/// `step,layer,strategy,makespan,hops,local_rd,remote_rd,local_wr`
void write_kernel_csv(std::ostream& os, const RunReport& r);

RunReport run(const TraceSet& ts, const SimConfig& cfg);

struct ComparisonRow {
    Strategy strategy = Strategy::base;
    double throughput = 0.0;
    double throughput_ratio = 1.0;
    std::uint64_t hops = 0;
    /// base.hops / hops; +inf when the variant has no hops but base does.
    double hop_reduction = 1.0;
    DramBreakdown dram;
};

/// Rows in Strategy order. Throws ConfigError without a base report or when
/// reports differ in anything but strategy.
std::vector<ComparisonRow> compare(const std::map<Strategy, RunReport>& reports);

void write_comparison_csv(std::ostream& os, const std::vector<ComparisonRow>& rows);
nlohmann::json to_json(const std::vector<ComparisonRow>& rows);

}  // namespace moesim

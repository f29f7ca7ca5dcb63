// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moesim/placement.hpp"
#include "moesim/profiler.hpp"
#include "moesim/trace.hpp"

namespace moesim {

enum class PredictorMode : std::uint8_t { online, prefill_seeded };

std::string_view to_string(PredictorMode m);
PredictorMode parse_predictor_mode(std::string_view s);

struct PredictorConfig {
    std::uint32_t top_n = 2;
    PredictorMode mode = PredictorMode::online;
    /// Applied to every count of a layer before each observed transition; 1 disables decay.
    double decay = 1.0;

    void validate() const;
};

void to_json(nlohmann::json& j, const PredictorConfig& c);
void from_json(const nlohmann::json& j, PredictorConfig& c);

/// Per-layer cross-token transition counts maintained while simulating.
///
/// Decay is applied lazily through a per-layer scale so an observation costs
/// O(|prev| * |cur|) rather than O(E^2). With decay == 1 the scale stays at 1
/// and counts remain exact integers.
class OnlineHeatmapState {
   public:
    OnlineHeatmapState() = default;
    OnlineHeatmapState(std::size_t num_layers, std::size_t num_experts);

    std::size_t num_layers() const { return layers_.size(); }
    std::size_t num_experts() const { return experts_; }
    bool empty() const;

    double count(MoeLayer layer, ExpertId i, ExpertId j) const;
    Heatmap counts(MoeLayer layer) const;

    void observe(MoeLayer layer, std::span<const ExpertId> prev, std::span<const ExpertId> cur, double decay);
    /// Up to n successors of `from` with positive count, highest first (ties: lower id).
    std::vector<ExpertId> top_successors(MoeLayer layer, ExpertId from, std::uint32_t n) const;

   private:
    struct Layer {
        double scale = 1.0;
        std::vector<double> raw;  // count = raw * scale
    };
    std::size_t experts_ = 0;
    std::vector<Layer> layers_;
};

void observe_transition(OnlineHeatmapState& hm, MoeLayer layer, std::span<const ExpertId> prev_token_sel,
                        std::span<const ExpertId> cur_token_sel, const PredictorConfig& cfg);

/// Cross-token counts over prefill-to-prefill pairs of every request. Writes a
/// warning and returns an all-zero state when the trace has no prefill pairs.
OnlineHeatmapState seed_from_prefill(const TraceSet& ts, std::string* warning = nullptr);

/// Per-die expert sets, each ascending.
using DieExpertSets = std::vector<std::vector<ExpertId>>;

/// For each die: union over its active experts of their top_n heatmap successors.
DieExpertSets predict_next(const DieExpertSets& active, const OnlineHeatmapState& hm, MoeLayer layer,
                           const PredictorConfig& cfg);

/// Per-die, per-(layer, expert) duplication flags mirrored from the D2D controller.
class PredictionTable {
   public:
    PredictionTable() = default;
    PredictionTable(std::uint32_t num_dies, std::size_t num_layers, std::size_t num_experts);

    bool cp_en(DieId die, MoeLayer layer, ExpertId expert) const { return cp_en_[index(die, layer, expert)]; }
    bool is_local(DieId die, MoeLayer layer, ExpertId expert) const { return is_local_[index(die, layer, expert)]; }

    /// Sets cp_en for exactly `experts` on (die, layer), clearing the rest of that layer.
    void set_predicted(DieId die, MoeLayer layer, std::span<const ExpertId> experts);
    void sync_is_local(const DuplicationState& dup);
    /// Throws InvariantViolation if any is_local bit disagrees with `dup`.
    void check_consistency(const DuplicationState& dup) const;

   private:
    std::size_t index(DieId die, MoeLayer layer, ExpertId expert) const {
        return (static_cast<std::size_t>(die) * layers_ + layer) * experts_ + expert;
    }
    std::uint32_t dies_ = 0;
    std::size_t layers_ = 0;
    std::size_t experts_ = 0;
    std::vector<bool> cp_en_;
    std::vector<bool> is_local_;
};

struct AdmissionDecision {
    DieId die = 0;
    ExpertId expert = 0;
    AdmitReport report;
};

/// Admits predicted ∩ remote_reads per die (skipping experts already resident),
/// after setting cp_en to the predicted set. Decisions are in (die, expert) order.
std::vector<AdmissionDecision> duplication_decisions(MoeLayer layer, const DieExpertSets& predicted,
                                                     const DieExpertSets& remote_reads, PredictionTable& pt,
                                                     DuplicationState& dup, ExpertDistributionTable& table,
                                                     std::uint64_t expert_bytes, Tick now);

}  // namespace moesim

// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

#include "moesim/predictor.hpp"

#include <algorithm>
#include <iterator>
#include <nlohmann/json.hpp>

namespace moesim {

std::string_view to_string(PredictorMode m) { return m == PredictorMode::online ? "online" : "prefill_seeded"; }

PredictorMode parse_predictor_mode(std::string_view s) {
    if (s == "online") return PredictorMode::online;
    if (s == "prefill_seeded") return PredictorMode::prefill_seeded;
    throw ConfigError("unknown predictor mode '" + std::string(s) + "' (expected online|prefill_seeded)");
}

void PredictorConfig::validate() const {
    if (top_n < 1) throw ConfigError("predictor: top_n must be >= 1");
    if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("predictor: decay must be in (0, 1]");
}

void to_json(nlohmann::json& j, const PredictorConfig& c) {
    j = nlohmann::json{{"top_n", c.top_n}, {"mode", to_string(c.mode)}, {"decay", c.decay}};
}

void from_json(const nlohmann::json& j, PredictorConfig& c) {
    PredictorConfig out;
    out.top_n = j.value("top_n", out.top_n);
    if (j.contains("mode")) out.mode = parse_predictor_mode(j.at("mode").get<std::string>());
    out.decay = j.value("decay", out.decay);
    out.validate();
    c = out;
}

OnlineHeatmapState::OnlineHeatmapState(std::size_t num_layers, std::size_t num_experts)
    : experts_(num_experts), layers_(num_layers) {
    for (auto& l : layers_) l.raw.assign(num_experts * num_experts, 0.0);
}

bool OnlineHeatmapState::empty() const {
    for (const auto& l : layers_)
        for (double v : l.raw)
            if (v != 0.0) return false;
    return true;
}

double OnlineHeatmapState::count(MoeLayer layer, ExpertId i, ExpertId j) const {
    const Layer& l = layers_.at(layer);
    return l.raw[static_cast<std::size_t>(i) * experts_ + j] * l.scale;
}

Heatmap OnlineHeatmapState::counts(MoeLayer layer) const {
    const Layer& l = layers_.at(layer);
    Heatmap h(experts_, HeatmapKind::counts);
    for (std::size_t k = 0; k < l.raw.size(); ++k) h.values[k] = l.raw[k] * l.scale;
    return h;
}

void OnlineHeatmapState::observe(MoeLayer layer, std::span<const ExpertId> prev, std::span<const ExpertId> cur,
                                 double decay) {
    Layer& l = layers_.at(layer);
    if (decay != 1.0) {
        l.scale *= decay;
        if (l.scale < 1e-200) {
            for (double& v : l.raw) v *= l.scale;
            l.scale = 1.0;
        }
    }
    const double inc = 1.0 / l.scale;
    for (ExpertId i : prev) {
        double* row = l.raw.data() + static_cast<std::size_t>(i) * experts_;
        for (ExpertId j : cur) row[j] += inc;
    }
}

std::vector<ExpertId> OnlineHeatmapState::top_successors(MoeLayer layer, ExpertId from, std::uint32_t n) const {
    const Layer& l = layers_.at(layer);
    const double* row = l.raw.data() + static_cast<std::size_t>(from) * experts_;
    std::vector<ExpertId> ids;
    for (ExpertId j = 0; j < experts_; ++j)
        if (row[j] > 0.0) ids.push_back(j);
    const std::size_t k = std::min<std::size_t>(n, ids.size());
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), [&](ExpertId a, ExpertId b) {
        if (row[a] != row[b]) return row[a] > row[b];
        return a < b;
    });
    ids.resize(k);
    return ids;
}

void observe_transition(OnlineHeatmapState& hm, MoeLayer layer, std::span<const ExpertId> prev_token_sel,
                        std::span<const ExpertId> cur_token_sel, const PredictorConfig& cfg) {
    hm.observe(layer, prev_token_sel, cur_token_sel, cfg.decay);
}

OnlineHeatmapState seed_from_prefill(const TraceSet& ts, std::string* warning) {
    const std::size_t L = ts.model.num_moe_layers();
    OnlineHeatmapState hm(L, ts.model.num_experts);
    bool any = false;
    for (const auto& r : ts.requests) {
        for (std::size_t t = 1; t < r.tokens.size(); ++t) {
            if (r.tokens[t].phase != Phase::prefill) break;
            any = true;
            for (MoeLayer l = 0; l < L; ++l) hm.observe(l, r.tokens[t - 1].selections[l], r.tokens[t].selections[l], 1.0);
        }
    }
    if (!any && warning) *warning = "trace has no adjacent prefill tokens; predictor starts from an empty heatmap";
    return hm;
}

DieExpertSets predict_next(const DieExpertSets& active, const OnlineHeatmapState& hm, MoeLayer layer,
                           const PredictorConfig& cfg) {
    DieExpertSets out(active.size());
    for (std::size_t d = 0; d < active.size(); ++d) {
        auto& pred = out[d];
        for (ExpertId e : active[d]) {
            const auto succ = hm.top_successors(layer, e, cfg.top_n);
            pred.insert(pred.end(), succ.begin(), succ.end());
        }
        std::sort(pred.begin(), pred.end());
        pred.erase(std::unique(pred.begin(), pred.end()), pred.end());
    }
    return out;
}

PredictionTable::PredictionTable(std::uint32_t num_dies, std::size_t num_layers, std::size_t num_experts)
    : dies_(num_dies), layers_(num_layers), experts_(num_experts),
      cp_en_(static_cast<std::size_t>(num_dies) * num_layers * num_experts, false),
      is_local_(static_cast<std::size_t>(num_dies) * num_layers * num_experts, false) {}

void PredictionTable::set_predicted(DieId die, MoeLayer layer, std::span<const ExpertId> experts) {
    for (ExpertId e = 0; e < experts_; ++e) cp_en_[index(die, layer, e)] = false;
    for (ExpertId e : experts) cp_en_[index(die, layer, e)] = true;
}

void PredictionTable::sync_is_local(const DuplicationState& dup) {
    std::fill(is_local_.begin(), is_local_.end(), false);
    for (DieId d = 0; d < dies_; ++d)
        for (const auto& k : dup.residents(d)) is_local_[index(d, k.layer, k.expert)] = true;
}

void PredictionTable::check_consistency(const DuplicationState& dup) const {
    for (DieId d = 0; d < dies_; ++d)
        for (MoeLayer l = 0; l < layers_; ++l)
            for (ExpertId e = 0; e < experts_; ++e)
                if (is_local_[index(d, l, e)] != dup.resident(d, l, e))
                    throw InvariantViolation("prediction table is_local out of sync on die " + std::to_string(d));
}

std::vector<AdmissionDecision> duplication_decisions(MoeLayer layer, const DieExpertSets& predicted,
                                                     const DieExpertSets& remote_reads, PredictionTable& pt,
                                                     DuplicationState& dup, ExpertDistributionTable& table,
                                                     std::uint64_t expert_bytes, Tick now) {
    std::vector<AdmissionDecision> out;
    for (DieId d = 0; d < predicted.size(); ++d) {
        pt.set_predicted(d, layer, predicted[d]);
        if (d >= remote_reads.size()) continue;
        std::vector<ExpertId> wanted;
        std::set_intersection(predicted[d].begin(), predicted[d].end(), remote_reads[d].begin(), remote_reads[d].end(),
                              std::back_inserter(wanted));
        for (ExpertId e : wanted) {
            if (dup.resident(d, layer, e) || table.is_home(layer, e, d)) continue;
            out.push_back({d, e, dup.admit(table, d, layer, e, expert_bytes, now)});
        }
    }
    pt.sync_is_local(dup);
    return out;
}

}  // namespace moesim

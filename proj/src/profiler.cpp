// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

#include "moesim/profiler.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace moesim {

std::string_view to_string(HeatmapKind k) {
    switch (k) {
        case HeatmapKind::counts: return "counts";
        case HeatmapKind::conditional_prob: return "conditional_prob";
        case HeatmapKind::normalized_coactivation: return "normalized_coactivation";
    }
    return "counts";
}

namespace {

void check_layer(const ModelSpec& m, MoeLayer layer) {
    if (layer >= m.num_moe_layers())
        throw DataError("MoE layer index " + std::to_string(layer) + " out of range [0, " +
                        std::to_string(m.num_moe_layers()) + ")");
}

}  // namespace

void TransitionCounts::add(std::span<const ExpertId> from, std::span<const ExpertId> to) {
    for (ExpertId i : from) {
        ++support_[i];
        std::uint64_t* row = counts_.data() + static_cast<std::size_t>(i) * dims_;
        for (ExpertId j : to) ++row[j];
    }
    ++transitions_;
}

void TransitionCounts::merge(const TransitionCounts& other) {
    if (other.dims_ != dims_) throw DataError("TransitionCounts::merge: dimension mismatch");
    for (std::size_t k = 0; k < counts_.size(); ++k) counts_[k] += other.counts_[k];
    for (std::size_t k = 0; k < support_.size(); ++k) support_[k] += other.support_[k];
    transitions_ += other.transitions_;
}

Heatmap TransitionCounts::as_counts() const {
    Heatmap h(dims_, HeatmapKind::counts);
    for (std::size_t k = 0; k < counts_.size(); ++k) h.values[k] = static_cast<double>(counts_[k]);
    return h;
}

Heatmap TransitionCounts::conditional(std::size_t to_set_size, ConditionalNorm norm) const {
    Heatmap h(dims_, HeatmapKind::conditional_prob);
    const double scale = norm == ConditionalNorm::per_selection ? static_cast<double>(to_set_size) : 1.0;
    for (std::size_t i = 0; i < dims_; ++i) {
        if (support_[i] == 0) continue;
        const double denom = static_cast<double>(support_[i]) * scale;
        for (std::size_t j = 0; j < dims_; ++j) h.at(i, j) = static_cast<double>(count(i, j)) / denom;
    }
    return h;
}

void accumulate_cross_layer(TransitionCounts& acc, const RequestTrace& r, MoeLayer from_layer, PhaseFilter phase) {
    for (const auto& tok : r.tokens) {
        if (!admits(phase, tok.phase)) continue;
        acc.add(tok.selections[from_layer], tok.selections[from_layer + 1]);
    }
}

void accumulate_cross_token(TransitionCounts& acc, const RequestTrace& r, MoeLayer layer, PhaseFilter phase) {
    for (std::size_t t = 1; t < r.tokens.size(); ++t) {
        const auto& prev = r.tokens[t - 1];
        const auto& cur = r.tokens[t];
        if (phase != PhaseFilter::both && !(admits(phase, prev.phase) && admits(phase, cur.phase))) continue;
        acc.add(prev.selections[layer], cur.selections[layer]);
    }
}

TransitionCounts cross_layer_counts(const TraceSet& ts, MoeLayer from_layer, PhaseFilter phase) {
    check_layer(ts.model, from_layer);
    if (from_layer + 1 >= ts.model.num_moe_layers())
        throw DataError("MoE layer " + std::to_string(from_layer) + " is the last MoE layer; it has no successor");
    TransitionCounts acc(ts.model.num_experts);
    for (const auto& r : ts.requests) accumulate_cross_layer(acc, r, from_layer, phase);
    return acc;
}

TransitionCounts cross_token_counts(const TraceSet& ts, MoeLayer layer, PhaseFilter phase) {
    check_layer(ts.model, layer);
    TransitionCounts acc(ts.model.num_experts);
    for (const auto& r : ts.requests) accumulate_cross_token(acc, r, layer, phase);
    return acc;
}

Heatmap cross_layer_heatmap(const TraceSet& ts, MoeLayer from_layer, PhaseFilter phase, ConditionalNorm norm) {
    return cross_layer_counts(ts, from_layer, phase).conditional(ts.model.top_k, norm);
}

Heatmap cross_token_heatmap(const TraceSet& ts, MoeLayer layer, PhaseFilter phase, ConditionalNorm norm) {
    return cross_token_counts(ts, layer, phase).conditional(ts.model.top_k, norm);
}

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i + 1;
        while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
        // positions i..j-1 (0-based) share rank mean((i+1)..j)
        const double r = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) ranks[idx[k]] = r;
        i = j;
    }
    return ranks;
}

std::optional<double> spearman_rho(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DataError("spearman_rho: inputs differ in length");
    const std::size_t n = a.size();
    if (n < 2) return std::nullopt;
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    // Mean rank is (n+1)/2 regardless of ties.
    const double mean = 0.5 * static_cast<double>(n + 1);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = ra[i] - mean;
        const double db = rb[i] - mean;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) return std::nullopt;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::optional<double> spearman_rho(const Heatmap& a, const Heatmap& b) {
    if (a.dims != b.dims) throw DataError("spearman_rho: heatmap dimensions differ");
    return spearman_rho(std::span<const double>(a.values), std::span<const double>(b.values));
}

std::optional<double> prefill_decode_spearman(const TraceSet& ts, MoeLayer layer) {
    return spearman_rho(cross_token_heatmap(ts, layer, PhaseFilter::prefill),
                        cross_token_heatmap(ts, layer, PhaseFilter::decode));
}

void accumulate_frequency(std::vector<std::uint64_t>& counts, const RequestTrace& r, MoeLayer layer, PhaseFilter phase) {
    for (const auto& tok : r.tokens) {
        if (!admits(phase, tok.phase)) continue;
        for (ExpertId e : tok.selections[layer]) ++counts[e];
    }
}

FrequencyVector make_frequency(std::vector<std::uint64_t> counts) {
    FrequencyVector f;
    f.normalized.assign(counts.size(), 0.0);
    const std::uint64_t total = std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
    if (total > 0) {
        const double mean = static_cast<double>(total) / static_cast<double>(counts.size());
        for (std::size_t e = 0; e < counts.size(); ++e) f.normalized[e] = static_cast<double>(counts[e]) / mean;
    }
    f.counts = std::move(counts);
    return f;
}

FrequencyVector expert_frequency(const TraceSet& ts, MoeLayer layer, PhaseFilter phase) {
    check_layer(ts.model, layer);
    std::vector<std::uint64_t> counts(ts.model.num_experts, 0);
    for (const auto& r : ts.requests) accumulate_frequency(counts, r, layer, phase);
    return make_frequency(std::move(counts));
}

void CoactivationCounts::add(std::span<const ExpertId> selection) {
    for (std::size_t a = 0; a < selection.size(); ++a) {
        for (std::size_t b = a + 1; b < selection.size(); ++b) {
            ++counts_[static_cast<std::size_t>(selection[a]) * dims_ + selection[b]];
            ++counts_[static_cast<std::size_t>(selection[b]) * dims_ + selection[a]];
        }
    }
    ++tokens_;
}

void CoactivationCounts::merge(const CoactivationCounts& other) {
    if (other.dims_ != dims_) throw DataError("CoactivationCounts::merge: dimension mismatch");
    for (std::size_t k = 0; k < counts_.size(); ++k) counts_[k] += other.counts_[k];
    tokens_ += other.tokens_;
}

Heatmap CoactivationCounts::as_counts() const {
    Heatmap h(dims_, HeatmapKind::counts);
    for (std::size_t k = 0; k < counts_.size(); ++k) h.values[k] = static_cast<double>(counts_[k]);
    return h;
}

Heatmap CoactivationCounts::normalized(std::uint32_t top_k, CoactivationNormalizer norm) const {
    if (top_k < 2) throw DataError("co-activation needs top_k >= 2 (one expert per token has no pairs)");
    Heatmap h(dims_, HeatmapKind::normalized_coactivation);
    if (tokens_ == 0 || dims_ < 2) return h;
    const double n = static_cast<double>(dims_);
    double p = 2.0 / (n * (n - 1.0));
    if (norm == CoactivationNormalizer::exact) p *= static_cast<double>(top_k) * (top_k - 1) / 2.0;
    const double t = static_cast<double>(tokens_);
    for (std::size_t k = 0; k < counts_.size(); ++k) h.values[k] = (static_cast<double>(counts_[k]) / t) / p;
    return h;
}

CoactivationCounts coactivation_counts(const TraceSet& ts, MoeLayer layer, PhaseFilter phase) {
    check_layer(ts.model, layer);
    CoactivationCounts acc(ts.model.num_experts);
    for (const auto& r : ts.requests)
        for (const auto& tok : r.tokens)
            if (admits(phase, tok.phase)) acc.add(tok.selections[layer]);
    return acc;
}

Heatmap coactivation_heatmap(const TraceSet& ts, MoeLayer layer, PhaseFilter phase, CoactivationNormalizer norm) {
    if (ts.model.top_k < 2) throw DataError("co-activation needs top_k >= 2 (one expert per token has no pairs)");
    return coactivation_counts(ts, layer, phase).normalized(ts.model.top_k, norm);
}

CumulativeCurve cumulative_curve(std::span<const double> values) {
    CumulativeCurve c;
    const double total = std::accumulate(values.begin(), values.end(), 0.0);
    if (!(total > 0.0)) throw DataError("cumulative curve: total is zero");
    c.shares.assign(values.begin(), values.end());
    std::sort(c.shares.begin(), c.shares.end(), std::greater<>());
    for (auto& s : c.shares) s /= total;
    c.cumulative.resize(c.shares.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < c.shares.size(); ++i) {
        acc += c.shares[i];
        c.cumulative[i] = std::min(acc, 1.0);
    }
    if (!c.cumulative.empty()) c.cumulative.back() = 1.0;
    return c;
}

double cumulative_top_fraction(std::span<const double> values, double fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw DataError("top fraction must be in (0, 1]");
    if (values.empty()) throw DataError("top fraction of an empty input");
    const double total = std::accumulate(values.begin(), values.end(), 0.0);
    if (!(total > 0.0)) throw DataError("top fraction: total is zero");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    // Guard against 0.3 * 10 = 3.0000000000000004 rounding up to 4.
    const double raw = fraction * static_cast<double>(sorted.size());
    std::size_t take = static_cast<std::size_t>(std::ceil(raw - 1e-9 * raw));
    take = std::clamp<std::size_t>(take, 1, sorted.size());
    if (take == sorted.size()) return 1.0;
    const double top = std::accumulate(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(take), 0.0);
    return top / total;
}

double cumulative_top_fraction(const Heatmap& counts, double fraction) {
    return cumulative_top_fraction(std::span<const double>(counts.values), fraction);
}

double cumulative_top_fraction(const FrequencyVector& freq, double fraction) {
    std::vector<double> v(freq.counts.begin(), freq.counts.end());
    return cumulative_top_fraction(std::span<const double>(v), fraction);
}

}  // namespace moesim

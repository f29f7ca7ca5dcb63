// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "moesim/trace.hpp"

namespace moesim {

enum class HeatmapKind : std::uint8_t { counts, conditional_prob, normalized_coactivation };

std::string_view to_string(HeatmapKind k);

/// Dense E x E matrix, row-major.
struct Heatmap {
    std::size_t dims = 0;
    HeatmapKind kind = HeatmapKind::counts;
    std::vector<double> values;

    Heatmap() = default;
    Heatmap(std::size_t n, HeatmapKind k) : dims(n), kind(k), values(n * n, 0.0) {}

    double at(std::size_t i, std::size_t j) const { return values[i * dims + j]; }
    double& at(std::size_t i, std::size_t j) { return values[i * dims + j]; }
    std::span<const double> row(std::size_t i) const { return {values.data() + i * dims, dims}; }

    bool operator==(const Heatmap&) const = default;
};

/// How a conditional heatmap row is normalised.
enum class ConditionalNorm : std::uint8_t {
    /// Divide by the number of conditioning activations of the row expert; rows sum to top_k.
    per_activation,
    /// Additionally divide by the successor set size; rows sum to 1.
    per_selection,
};

/// Integer co-occurrence counts between a "from" selection and a "to" selection.
/// Merging is associative and commutative, so shards can be counted independently.
class TransitionCounts {
   public:
    explicit TransitionCounts(std::size_t experts = 0) : dims_(experts), counts_(experts * experts, 0), support_(experts, 0) {}

    void add(std::span<const ExpertId> from, std::span<const ExpertId> to);
    void merge(const TransitionCounts& other);

    std::size_t dims() const { return dims_; }
    std::uint64_t count(std::size_t i, std::size_t j) const { return counts_[i * dims_ + j]; }
    /// Transitions in which expert i was part of the "from" selection.
    std::uint64_t support(std::size_t i) const { return support_[i]; }
    std::uint64_t transitions() const { return transitions_; }

    Heatmap as_counts() const;
    Heatmap conditional(std::size_t to_set_size, ConditionalNorm norm = ConditionalNorm::per_activation) const;

    bool operator==(const TransitionCounts&) const = default;

   private:
    std::size_t dims_;
    std::vector<std::uint64_t> counts_;
    std::vector<std::uint64_t> support_;
    std::uint64_t transitions_ = 0;
};

/// Adds every (layer from_layer -> next MoE layer) pair of one request.
void accumulate_cross_layer(TransitionCounts& acc, const RequestTrace& r, MoeLayer from_layer, PhaseFilter phase);
/// Adds every adjacent-token pair at `layer` of one request. With prefill/decode
/// filters a pair must have both tokens in that phase; `both` takes all pairs.
void accumulate_cross_token(TransitionCounts& acc, const RequestTrace& r, MoeLayer layer, PhaseFilter phase);

TransitionCounts cross_layer_counts(const TraceSet& ts, MoeLayer from_layer, PhaseFilter phase = PhaseFilter::both);
TransitionCounts cross_token_counts(const TraceSet& ts, MoeLayer layer, PhaseFilter phase);

/// values[i][j] = P(j selected at the next MoE layer | i selected at from_layer).
Heatmap cross_layer_heatmap(const TraceSet& ts, MoeLayer from_layer, PhaseFilter phase = PhaseFilter::both,
                            ConditionalNorm norm = ConditionalNorm::per_activation);
/// values[i][j] = P(j selected at token t+1 | i selected at token t), same layer.
Heatmap cross_token_heatmap(const TraceSet& ts, MoeLayer layer, PhaseFilter phase,
                            ConditionalNorm norm = ConditionalNorm::per_activation);

/// Average ranks (1-based); tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> v);

/// Spearman rank correlation with average ranks for ties. nullopt when either
/// input has zero variance (the coefficient is undefined there).
std::optional<double> spearman_rho(std::span<const double> a, std::span<const double> b);
std::optional<double> spearman_rho(const Heatmap& a, const Heatmap& b);

/// Prefill vs decode cross-token heatmap similarity at one layer.
std::optional<double> prefill_decode_spearman(const TraceSet& ts, MoeLayer layer);

struct FrequencyVector {
    std::vector<std::uint64_t> counts;
    /// counts / mean(counts); all zero when there are no activations.
    std::vector<double> normalized;
};

void accumulate_frequency(std::vector<std::uint64_t>& counts, const RequestTrace& r, MoeLayer layer, PhaseFilter phase);
FrequencyVector make_frequency(std::vector<std::uint64_t> counts);
FrequencyVector expert_frequency(const TraceSet& ts, MoeLayer layer, PhaseFilter phase = PhaseFilter::both);

enum class CoactivationNormalizer : std::uint8_t {
    /// p = 2 / (n (n - 1)) regardless of top_k.
    pairwise,
    /// Exact expectation for a uniform top_k set: k (k - 1) / (n (n - 1)).
    exact,
};

/// Symmetric unordered-pair counts within one token's selection set.
class CoactivationCounts {
   public:
    explicit CoactivationCounts(std::size_t experts = 0) : dims_(experts), counts_(experts * experts, 0) {}

    void add(std::span<const ExpertId> selection);
    void merge(const CoactivationCounts& other);

    std::size_t dims() const { return dims_; }
    std::uint64_t count(std::size_t i, std::size_t j) const { return counts_[i * dims_ + j]; }
    std::uint64_t tokens() const { return tokens_; }

    Heatmap as_counts() const;
    Heatmap normalized(std::uint32_t top_k, CoactivationNormalizer norm = CoactivationNormalizer::pairwise) const;

   private:
    std::size_t dims_;
    std::vector<std::uint64_t> counts_;
    std::uint64_t tokens_ = 0;
};

CoactivationCounts coactivation_counts(const TraceSet& ts, MoeLayer layer, PhaseFilter phase = PhaseFilter::both);
/// values[i][j] = (count(i,j) / tokens) / p. Throws DataError when top_k < 2.
Heatmap coactivation_heatmap(const TraceSet& ts, MoeLayer layer, PhaseFilter phase = PhaseFilter::both,
                             CoactivationNormalizer norm = CoactivationNormalizer::pairwise);

struct CumulativeCurve {
    std::vector<double> shares;      // descending
    std::vector<double> cumulative;  // running sum of shares; ends at 1
};

CumulativeCurve cumulative_curve(std::span<const double> values);
/// Share of the total held by the top ceil(fraction * N) entries. Throws DataError on zero total.
double cumulative_top_fraction(std::span<const double> values, double fraction);
double cumulative_top_fraction(const Heatmap& counts, double fraction);
double cumulative_top_fraction(const FrequencyVector& freq, double fraction);

}  // namespace moesim

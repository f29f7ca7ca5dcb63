// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "moesim/trace.hpp"

namespace moesim {

struct SynthParams {
    std::uint32_t num_requests = 1;
    /// Decode tokens per request.
    std::uint32_t tokens_per_request = 1;
    std::uint32_t prefill_tokens = 0;
    /// Zipf exponent of per-layer expert popularity (0 = uniform).
    double zipf_s = 0.0;
    /// Per selection slot: probability of reusing an expert the previous token picked at this layer.
    double stickiness = 0.0;
    /// Per selection slot: probability of drawing from the fixed successor list of
    /// an expert this token picked at the previous MoE layer.
    double layer_coupling = 0.0;
    std::uint64_t seed = 0;
    /// Prefill tokens replay the first decode tokens verbatim (prefill/decode A/B fixtures).
    bool prefill_mirrors_decode = false;
    /// Each request draws one value per key, e.g. {"language", {"en", "zh"}}.
    std::vector<std::pair<std::string, std::vector<std::string>>> tag_choices;

    void validate() const;
};

/// Deterministic for fixed (spec, params): draws only from a seeded mt19937_64
/// with hand-rolled uniform/discrete sampling, so output does not depend on the
/// standard library's distribution implementations.
TraceSet generate_synthetic(const ModelSpec& spec, const SynthParams& p);

/// Uniform double in [0, 1) built from the top 53 bits of one engine draw.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, n) by rejection (no modulo bias).
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n);

}  // namespace moesim

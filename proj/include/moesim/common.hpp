// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace moesim {

using ExpertId = std::uint32_t;
using DieId = std::uint32_t;
// Position within ModelSpec::moe_layer_ids, not the raw transformer layer number.
using MoeLayer = std::uint32_t;
using Tick = std::uint64_t;

enum class Phase : std::uint8_t { prefill, decode };

// Phase filter for statistics; `both` also admits the prefill->decode boundary pair.
enum class PhaseFilter : std::uint8_t { prefill, decode, both };

std::string_view to_string(Phase p);
std::string_view to_string(PhaseFilter p);
PhaseFilter parse_phase_filter(std::string_view s);

inline bool admits(PhaseFilter f, Phase p) {
    return f == PhaseFilter::both || (f == PhaseFilter::prefill) == (p == Phase::prefill);
}

// Error categories map onto CLI exit codes: config -> 2, data -> 3, invariant -> 4.
class ConfigError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class InvariantViolation : public std::logic_error {
   public:
    using std::logic_error::logic_error;
};

}  // namespace moesim

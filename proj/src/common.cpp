// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

#include "moesim/common.hpp"

namespace moesim {

std::string_view to_string(Phase p) { return p == Phase::prefill ? "prefill" : "decode"; }

std::string_view to_string(PhaseFilter p) {
    switch (p) {
        case PhaseFilter::prefill: return "prefill";
        case PhaseFilter::decode: return "decode";
        case PhaseFilter::both: return "both";
    }
    return "both";
}

PhaseFilter parse_phase_filter(std::string_view s) {
    if (s == "prefill") return PhaseFilter::prefill;
    if (s == "decode") return PhaseFilter::decode;
    if (s == "both") return PhaseFilter::both;
    throw ConfigError("unknown phase '" + std::string(s) + "' (expected prefill|decode|both)");
}

}  // namespace moesim

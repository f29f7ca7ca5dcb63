// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

// Small builders shared by the unit and acceptance tests.

#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "moesim/trace.hpp"

namespace moesim::testing {

inline ModelSpec model(std::uint32_t experts, std::uint32_t top_k, std::uint32_t moe_layers) {
    ModelSpec m;
    m.name = "fixture";
    m.num_layers = moe_layers;
    m.moe_layer_ids.clear();
    for (std::uint32_t i = 0; i < moe_layers; ++i) m.moe_layer_ids.push_back(i);
    m.num_experts = experts;
    m.top_k = top_k;
    m.expert_bytes = 1000;
    m.slices_per_expert = 2;
    m.activation_bytes = 10;
    m.flops_per_token_per_expert = 100.0;
    return m;
}

using Sel = std::vector<ExpertId>;

inline TokenStep token(Phase ph, std::vector<Sel> per_layer) { return TokenStep{ph, std::move(per_layer)}; }

inline RequestTrace request(std::string id, std::vector<TokenStep> tokens) {
    RequestTrace r;
    r.request_id = std::move(id);
    r.tokens = std::move(tokens);
    return r;
}

}  // namespace moesim::testing

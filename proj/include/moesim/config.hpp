// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moesim/engine.hpp"
#include "moesim/profiler.hpp"
#include "moesim/synth.hpp"

namespace moesim {

/// Environment variable that overrides the configured output directory.
inline constexpr const char* kOutputDirEnv = "MOESIM_OUTPUT_DIR";

void to_json(nlohmann::json& j, const SynthParams& p);
/// `seed` is not read here; it comes from the experiment's single seed.
void from_json(const nlohmann::json& j, SynthParams& p);

struct ProfileOptions {
    /// Empty: every MoE layer.
    std::vector<MoeLayer> layers;
    std::vector<PhaseFilter> phases{PhaseFilter::both};
    ConditionalNorm conditional_norm = ConditionalNorm::per_activation;
    CoactivationNormalizer coactivation_normalizer = CoactivationNormalizer::pairwise;
    double top_fraction = 0.2;
    bool json = false;
};

struct ExperimentConfig {
    ModelSpec model;
    nlohmann::json topology = {{"preset", "dojo"}};
    std::vector<Strategy> strategies{Strategy::base, Strategy::allo_only, Strategy::pred_only, Strategy::allo_pred};
    std::optional<SynthParams> synth;
    std::vector<std::filesystem::path> traces;
    std::filesystem::path output_dir = "out";
    std::uint64_t seed = 0;

    std::uint32_t batch_size = 1;
    std::uint32_t max_steps = 0;
    CostParams cost;
    PredictorConfig predictor;
    BaselineDispatch baseline_dispatch = BaselineDispatch::placement_oblivious;
    TokenHomePolicy token_home = TokenHomePolicy::expert_home;
    ProfileOptions profile;

    /// Throws ConfigError on the first problem.
    void validate() const;
    /// Exactly one trace source must be set.
    void require_trace_source() const;
    MeshTopology resolved_topology() const;
    SimConfig sim_config(Strategy s) const;
};

/// Missing keys keep their defaults. Throws ConfigError on malformed input.
ExperimentConfig experiment_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);

/// Parses a JSON config file; ConfigError if unreadable or malformed.
ExperimentConfig load_experiment(const std::filesystem::path& path);

/// Synthetic traces (seeded by the experiment seed) or the concatenation of
/// the configured trace files, checked against the configured model.
TraceSet materialize_traces(const ExperimentConfig& c);

ConditionalNorm parse_conditional_norm(std::string_view s);
std::string_view to_string(ConditionalNorm n);
CoactivationNormalizer parse_coactivation_normalizer(std::string_view s);
std::string_view to_string(CoactivationNormalizer n);

}  // namespace moesim

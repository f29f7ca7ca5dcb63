// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "moesim/common.hpp"

namespace moesim {

/// Static geometry of an MoE model. Only the MoE layers listed in
/// `moe_layer_ids` carry expert selections; everything downstream indexes
/// them by position (MoeLayer), so interleaved dense layers need no special case.
struct ModelSpec {
    std::string name = "model";
    std::uint32_t num_layers = 1;
    std::vector<std::uint32_t> moe_layer_ids{0};
    std::uint32_t num_experts = 1;
    std::uint32_t top_k = 1;
    std::uint64_t expert_bytes = 2;
    std::uint32_t slices_per_expert = 2;
    std::uint64_t activation_bytes = 1;
    double flops_per_token_per_expert = 1.0;

    std::size_t num_moe_layers() const { return moe_layer_ids.size(); }
    std::uint64_t slice_bytes() const { return expert_bytes / slices_per_expert; }

    /// Throws ConfigError naming the first violated invariant.
    void validate() const;

    bool operator==(const ModelSpec&) const = default;
};

void to_json(nlohmann::json& j, const ModelSpec& m);
void from_json(const nlohmann::json& j, ModelSpec& m);

struct TokenStep {
    Phase phase = Phase::decode;
    // selections[layer] holds exactly top_k distinct ids, ascending.
    std::vector<std::vector<ExpertId>> selections;

    bool operator==(const TokenStep&) const = default;
};

struct RequestTrace {
    std::string request_id;
    std::vector<TokenStep> tokens;
    std::map<std::string, std::string> tags;

    std::size_t prefill_count() const;
    std::size_t decode_count() const { return tokens.size() - prefill_count(); }
    /// Index of decode step `step` within `tokens`, if the request is that long.
    std::optional<std::size_t> decode_index(std::size_t step) const;

    bool operator==(const RequestTrace&) const = default;
};

/// Throws DataError naming request/token/layer if `r` does not conform to `m`.
/// Sorts each selection ascending as a side effect.
void canonicalize_and_validate(RequestTrace& r, const ModelSpec& m);

struct TraceSet {
    ModelSpec model;
    std::vector<RequestTrace> requests;

    std::size_t token_count() const;
    bool operator==(const TraceSet&) const = default;
};

/// Converts one parsed JSON record into a RequestTrace. The canonical adapter
/// reads the schema written by save_traces; foreign dumps plug in here.
using RecordAdapter = std::function<RequestTrace(const nlohmann::json& record, const ModelSpec& model)>;

RequestTrace canonical_record_adapter(const nlohmann::json& record, const ModelSpec& model);

struct LoadOptions {
    /// Throw on the first malformed record instead of skipping it.
    bool strict = true;
    RecordAdapter adapter = canonical_record_adapter;
};

/// Record-by-record reader: holds at most one request in memory.
/// Files ending in ".gz" are decompressed transparently.
class TraceReader {
   public:
    /// Reads the header line. If `expected` is given, the header model must match it.
    explicit TraceReader(const std::filesystem::path& path,
                         std::optional<ModelSpec> expected = std::nullopt,
                         LoadOptions options = {});
    ~TraceReader();
    TraceReader(TraceReader&&) noexcept;
    TraceReader& operator=(TraceReader&&) noexcept;

    const ModelSpec& model() const { return model_; }

    /// Next valid request, or nullopt at end of file.
    std::optional<RequestTrace> next();

    /// Diagnostics for records skipped in non-strict mode.
    const std::vector<std::string>& skipped() const { return skipped_; }

   private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    ModelSpec model_;
    LoadOptions options_;
    std::vector<std::string> skipped_;
    std::size_t line_no_ = 0;
};

struct LoadedTraces {
    TraceSet traces;
    std::vector<std::string> skipped;
};

LoadedTraces load_traces(const std::filesystem::path& path, const ModelSpec& spec, LoadOptions options = {});
LoadedTraces load_traces(const std::filesystem::path& path, LoadOptions options = {});

/// Writes the header line and one JSON line per request. Output is a pure
/// function of `ts` (and the optional provenance blob stored in the header).
void save_traces(const TraceSet& ts, const std::filesystem::path& path,
                 const nlohmann::json* provenance = nullptr);

/// Requests whose tags[key] == value.
TraceSet filter_by_tag(const TraceSet& ts, const std::string& key, const std::string& value);

}  // namespace moesim

// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "moesim/allocator.hpp"
#include "moesim/profiler.hpp"

namespace moesim {

/// `<model>_<stat>_<layer>_<phase>.csv`; layer may be "all".
std::string output_name(std::string_view model, std::string_view stat, std::string_view layer, std::string_view phase,
                        std::string_view ext = "csv");

/// One `# <compact json>` line; readers skip lines starting with '#'.
void write_comment_header(std::ostream& os, const nlohmann::json& meta);

/// Header `from,0,1,...,E-1`, then one row per "from" expert.
void write_heatmap_csv(std::ostream& os, const Heatmap& h);
nlohmann::json heatmap_json(const Heatmap& h);

/// `expert,count,normalized`
void write_frequency_csv(std::ostream& os, const FrequencyVector& f);
/// `rank,share,cumulative`
void write_cumulative_csv(std::ostream& os, const CumulativeCurve& c);

struct SpearmanRow {
    MoeLayer layer = 0;
    std::optional<double> rho;  // nullopt: undefined (zero variance)
};
/// `layer,rho`; undefined values are written as `undefined`.
void write_spearman_csv(std::ostream& os, const std::vector<SpearmanRow>& rows);

/// `kernel,expert,die,tokens`
void write_plan_csv(std::ostream& os, std::uint64_t kernel, const AllocationPlan& plan, bool header = true);

/// Writes `content` to `path`, creating parent directories. Throws DataError on failure.
void write_text_file(const std::filesystem::path& path, const std::string& content);

/// Shortest round-trip text for a double.
std::string format_double(double v);

}  // namespace moesim

// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

#include "moesim/export.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>

namespace moesim {

std::string output_name(std::string_view model, std::string_view stat, std::string_view layer, std::string_view phase,
                        std::string_view ext) {
    std::string s;
    s.append(model).append("_").append(stat).append("_").append(layer).append("_").append(phase);
    s.append(".").append(ext);
    return s;
}

void write_comment_header(std::ostream& os, const nlohmann::json& meta) { os << "# " << meta.dump() << '\n'; }

std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void write_heatmap_csv(std::ostream& os, const Heatmap& h) {
    os << "from";
    for (std::size_t j = 0; j < h.dims; ++j) os << ',' << j;
    os << '\n';
    for (std::size_t i = 0; i < h.dims; ++i) {
        os << i;
        for (double v : h.row(i)) os << ',' << format_double(v);
        os << '\n';
    }
}

nlohmann::json heatmap_json(const Heatmap& h) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < h.dims; ++i) {
        const auto r = h.row(i);
        rows.push_back(std::vector<double>(r.begin(), r.end()));
    }
    return {{"kind", to_string(h.kind)}, {"dims", h.dims}, {"values", std::move(rows)}};
}

void write_frequency_csv(std::ostream& os, const FrequencyVector& f) {
    os << "expert,count,normalized\n";
    for (std::size_t e = 0; e < f.counts.size(); ++e) os << e << ',' << f.counts[e] << ',' << format_double(f.normalized[e]) << '\n';
}

void write_cumulative_csv(std::ostream& os, const CumulativeCurve& c) {
    os << "rank,share,cumulative\n";
    for (std::size_t i = 0; i < c.shares.size(); ++i)
        os << i + 1 << ',' << format_double(c.shares[i]) << ',' << format_double(c.cumulative[i]) << '\n';
}

void write_spearman_csv(std::ostream& os, const std::vector<SpearmanRow>& rows) {
    os << "layer,rho\n";
    for (const auto& r : rows) os << r.layer << ',' << (r.rho ? format_double(*r.rho) : "undefined") << '\n';
}

void write_plan_csv(std::ostream& os, std::uint64_t kernel, const AllocationPlan& plan, bool header) {
    if (header) os << "kernel,expert,die,tokens\n";
    for (const auto& e : plan.entries) os << kernel << ',' << e.expert << ',' << e.die << ',' << e.tokens << '\n';
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw DataError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path.string() + " for writing");
    f << content;
    if (!f) throw DataError("failed writing " + path.string());
}

}  // namespace moesim

// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "moesim/common.hpp"

namespace moesim {

struct DieSpec {
    double compute_flops = 1000e12;      // FP8 FLOP/s
    double dram_bw = 2e12;               // bytes/s
    std::uint64_t dram_capacity = 256'000'000'000ull;
    double d2d_bw = 1.5e12;              // bytes/s per link, per direction
    double reserved_cache_fraction = 0.10;

    void validate() const;
    /// DRAM reserved for duplicated experts.
    std::uint64_t cache_capacity_bytes() const;

    bool operator==(const DieSpec&) const = default;
};

struct Coord {
    std::uint32_t x = 0;
    std::uint32_t y = 0;
    bool operator==(const Coord&) const = default;
};

/// Directed link between two mesh-adjacent dies.
struct Link {
    DieId from = 0;
    DieId to = 0;
    bool operator==(const Link&) const = default;
};

enum class Direction : std::uint8_t { east, west, north, south };

/// Homogeneous x_dies by y_dies mesh. Die ids are row-major: id = y * x_dies + x.
class MeshTopology {
   public:
    MeshTopology() = default;
    MeshTopology(std::uint32_t x_dies, std::uint32_t y_dies, DieSpec die);

    std::uint32_t x_dies() const { return x_dies_; }
    std::uint32_t y_dies() const { return y_dies_; }
    std::uint32_t num_dies() const { return x_dies_ * y_dies_; }
    const DieSpec& die() const { return die_; }

    Coord coord(DieId id) const;
    DieId id(Coord c) const;

    std::uint32_t manhattan(DieId a, DieId b) const;
    /// Dies within `dis` hops of `center`, including it; ascending ids.
    std::vector<DieId> dies_within(DieId center, std::uint32_t dis) const;
    /// X-then-Y dimension-ordered route; empty when a == b.
    std::vector<Link> route_path(DieId a, DieId b) const;

    /// Dense index for per-link accounting: die * 4 + outgoing direction.
    std::size_t link_index(const Link& l) const;
    std::size_t link_slots() const { return static_cast<std::size_t>(num_dies()) * 4; }

    bool operator==(const MeshTopology&) const = default;

   private:
    void check(DieId id) const;

    std::uint32_t x_dies_ = 1;
    std::uint32_t y_dies_ = 1;
    DieSpec die_;
};

/// "dojo" (5 x 5) or "tsmc_sow" (3 x 8). Throws ConfigError otherwise.
MeshTopology preset(std::string_view name);

void to_json(nlohmann::json& j, const DieSpec& d);
void to_json(nlohmann::json& j, const MeshTopology& t);
/// Accepts {"preset": name, "x_dies": .., "y_dies": .., <DieSpec fields>}; explicit fields override the preset.
MeshTopology topology_from_json(const nlohmann::json& j);

}  // namespace moesim

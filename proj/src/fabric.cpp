// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

#include "moesim/fabric.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

namespace moesim {

void DieSpec::validate() const {
    if (!(compute_flops > 0.0)) throw ConfigError("die: compute must be positive");
    if (!(dram_bw > 0.0)) throw ConfigError("die: dram_bw must be positive");
    if (dram_capacity == 0) throw ConfigError("die: dram_capacity must be positive");
    if (!(d2d_bw > 0.0)) throw ConfigError("die: d2d_bw must be positive");
    if (!(reserved_cache_fraction >= 0.0 && reserved_cache_fraction < 1.0))
        throw ConfigError("die: reserved_cache_fraction must be in [0, 1)");
}

std::uint64_t DieSpec::cache_capacity_bytes() const {
    return static_cast<std::uint64_t>(std::floor(static_cast<double>(dram_capacity) * reserved_cache_fraction));
}

MeshTopology::MeshTopology(std::uint32_t x_dies, std::uint32_t y_dies, DieSpec die)
    : x_dies_(x_dies), y_dies_(y_dies), die_(die) {
    if (x_dies == 0 || y_dies == 0) throw ConfigError("topology: mesh needs at least one die");
    die_.validate();
}

void MeshTopology::check(DieId id) const {
    if (id >= num_dies())
        throw std::out_of_range("die id " + std::to_string(id) + " outside mesh of " + std::to_string(num_dies()));
}

Coord MeshTopology::coord(DieId id) const {
    check(id);
    return {id % x_dies_, id / x_dies_};
}

DieId MeshTopology::id(Coord c) const {
    if (c.x >= x_dies_ || c.y >= y_dies_) throw std::out_of_range("coordinate outside mesh");
    return c.y * x_dies_ + c.x;
}

std::uint32_t MeshTopology::manhattan(DieId a, DieId b) const {
    const Coord ca = coord(a), cb = coord(b);
    const auto d = [](std::uint32_t u, std::uint32_t v) { return u > v ? u - v : v - u; };
    return d(ca.x, cb.x) + d(ca.y, cb.y);
}

std::vector<DieId> MeshTopology::dies_within(DieId center, std::uint32_t dis) const {
    check(center);
    std::vector<DieId> out;
    for (DieId d = 0; d < num_dies(); ++d)
        if (manhattan(center, d) <= dis) out.push_back(d);
    return out;
}

std::vector<Link> MeshTopology::route_path(DieId a, DieId b) const {
    Coord cur = coord(a);
    const Coord dst = coord(b);
    std::vector<Link> path;
    path.reserve(manhattan(a, b));
    while (cur.x != dst.x) {
        Coord nxt = cur;
        nxt.x = cur.x < dst.x ? cur.x + 1 : cur.x - 1;
        path.push_back({id(cur), id(nxt)});
        cur = nxt;
    }
    while (cur.y != dst.y) {
        Coord nxt = cur;
        nxt.y = cur.y < dst.y ? cur.y + 1 : cur.y - 1;
        path.push_back({id(cur), id(nxt)});
        cur = nxt;
    }
    return path;
}

std::size_t MeshTopology::link_index(const Link& l) const {
    const Coord a = coord(l.from), b = coord(l.to);
    Direction dir;
    if (b.y == a.y && b.x == a.x + 1) dir = Direction::east;
    else if (b.y == a.y && b.x + 1 == a.x) dir = Direction::west;
    else if (b.x == a.x && b.y == a.y + 1) dir = Direction::north;
    else if (b.x == a.x && b.y + 1 == a.y) dir = Direction::south;
    else throw std::invalid_argument("link between non-adjacent dies");
    return static_cast<std::size_t>(l.from) * 4 + static_cast<std::size_t>(dir);
}

MeshTopology preset(std::string_view name) {
    const DieSpec die{};  // defaults are the shared per-die hardware row
    if (name == "dojo") return MeshTopology(5, 5, die);
    if (name == "tsmc_sow") return MeshTopology(3, 8, die);
    throw ConfigError("unknown topology preset '" + std::string(name) + "' (expected dojo|tsmc_sow)");
}

void to_json(nlohmann::json& j, const DieSpec& d) {
    j = nlohmann::json{{"compute_flops", d.compute_flops},
                       {"dram_bw", d.dram_bw},
                       {"dram_capacity", d.dram_capacity},
                       {"d2d_bw", d.d2d_bw},
                       {"reserved_cache_fraction", d.reserved_cache_fraction}};
}

void to_json(nlohmann::json& j, const MeshTopology& t) {
    j = nlohmann::json{{"x_dies", t.x_dies()}, {"y_dies", t.y_dies()}, {"die", t.die()}};
}

MeshTopology topology_from_json(const nlohmann::json& j) {
    MeshTopology base = preset(j.value("preset", std::string("dojo")));
    DieSpec die = base.die();
    const nlohmann::json& d = j.contains("die") ? j.at("die") : j;
    die.compute_flops = d.value("compute_flops", die.compute_flops);
    die.dram_bw = d.value("dram_bw", die.dram_bw);
    die.dram_capacity = d.value("dram_capacity", die.dram_capacity);
    die.d2d_bw = d.value("d2d_bw", die.d2d_bw);
    die.reserved_cache_fraction = d.value("reserved_cache_fraction", die.reserved_cache_fraction);
    return MeshTopology(j.value("x_dies", base.x_dies()), j.value("y_dies", base.y_dies()), die);
}

}  // namespace moesim

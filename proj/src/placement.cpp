// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

#include "moesim/placement.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>
#include <iterator>
#include <stdexcept>
#include <utility>

namespace moesim {

namespace {

bool sorted_contains(const std::vector<DieId>& v, DieId d) { return std::binary_search(v.begin(), v.end(), d); }

std::string key_str(MoeLayer layer, ExpertId expert) {
    return "layer " + std::to_string(layer) + " expert " + std::to_string(expert);
}

}  // namespace

ExpertDistributionTable::ExpertDistributionTable(std::size_t num_layers, std::size_t num_experts, std::uint32_t num_dies)
    : num_layers_(num_layers), num_experts_(num_experts), num_dies_(num_dies), slots_(num_layers * num_experts) {}

const ExpertDistributionTable::Slot& ExpertDistributionTable::slot(MoeLayer layer, ExpertId expert) const {
    if (layer >= num_layers_ || expert >= num_experts_)
        throw std::out_of_range("distribution table: " + key_str(layer, expert) + " out of range");
    return slots_[static_cast<std::size_t>(layer) * num_experts_ + expert];
}

ExpertDistributionTable::Slot& ExpertDistributionTable::slot(MoeLayer layer, ExpertId expert) {
    return const_cast<Slot&>(std::as_const(*this).slot(layer, expert));
}

void ExpertDistributionTable::set_home(MoeLayer layer, ExpertId expert, std::vector<DieId> homes) {
    if (homes.empty()) throw std::invalid_argument("home die set must not be empty");
    for (DieId d : homes)
        if (d >= num_dies_) throw std::out_of_range("home die " + std::to_string(d) + " outside mesh");
    std::sort(homes.begin(), homes.end());
    homes.erase(std::unique(homes.begin(), homes.end()), homes.end());
    Slot& s = slot(layer, expert);
    s.home = std::move(homes);
    std::erase_if(s.dup, [&](DieId d) { return sorted_contains(s.home, d); });
}

std::vector<DieId> ExpertDistributionTable::dies_holding(MoeLayer layer, ExpertId expert) const {
    const Slot& s = slot(layer, expert);
    std::vector<DieId> out;
    out.reserve(s.home.size() + s.dup.size());
    std::merge(s.home.begin(), s.home.end(), s.dup.begin(), s.dup.end(), std::back_inserter(out));
    return out;
}

bool ExpertDistributionTable::holds(MoeLayer layer, ExpertId expert, DieId die) const {
    const Slot& s = slot(layer, expert);
    return sorted_contains(s.home, die) || sorted_contains(s.dup, die);
}

bool ExpertDistributionTable::is_home(MoeLayer layer, ExpertId expert, DieId die) const {
    return sorted_contains(slot(layer, expert).home, die);
}

void ExpertDistributionTable::add_duplicate(MoeLayer layer, ExpertId expert, DieId die) {
    if (die >= num_dies_) throw std::out_of_range("duplicate die outside mesh");
    Slot& s = slot(layer, expert);
    if (sorted_contains(s.home, die)) throw std::invalid_argument(key_str(layer, expert) + " already homes on die " + std::to_string(die));
    auto it = std::lower_bound(s.dup.begin(), s.dup.end(), die);
    if (it == s.dup.end() || *it != die) s.dup.insert(it, die);
}

void ExpertDistributionTable::remove_duplicate(MoeLayer layer, ExpertId expert, DieId die) {
    Slot& s = slot(layer, expert);
    auto it = std::lower_bound(s.dup.begin(), s.dup.end(), die);
    if (it != s.dup.end() && *it == die) s.dup.erase(it);
}

std::string ExpertDistributionTable::presence_code(MoeLayer layer, ExpertId expert) const {
    std::string code(num_dies_, '0');
    for (DieId d : dies_holding(layer, expert)) code[d] = '1';
    return code;
}

void ExpertDistributionTable::validate() const {
    for (std::size_t l = 0; l < num_layers_; ++l) {
        for (std::size_t e = 0; e < num_experts_; ++e) {
            const Slot& s = slots_[l * num_experts_ + e];
            const auto k = key_str(static_cast<MoeLayer>(l), static_cast<ExpertId>(e));
            if (s.home.empty()) throw InvariantViolation(k + " has no home die");
            for (DieId d : s.dup)
                if (sorted_contains(s.home, d)) throw InvariantViolation(k + ": die " + std::to_string(d) + " is both home and duplicate");
        }
    }
}

ExpertDistributionTable initial_round_robin(const ModelSpec& spec, const MeshTopology& topo) {
    ExpertDistributionTable t(spec.num_moe_layers(), spec.num_experts, topo.num_dies());
    for (MoeLayer l = 0; l < spec.num_moe_layers(); ++l)
        for (ExpertId e = 0; e < spec.num_experts; ++e) t.set_home(l, e, {e % topo.num_dies()});
    return t;
}

DuplicationState::DuplicationState(std::uint32_t num_dies, std::uint64_t capacity_bytes)
    : capacity_(capacity_bytes), dies_(num_dies) {}

bool DuplicationState::resident(DieId die, MoeLayer layer, ExpertId expert) const {
    return dies_.at(die).entries.contains({layer, expert});
}

std::optional<Tick> DuplicationState::last_use(DieId die, MoeLayer layer, ExpertId expert) const {
    const auto& m = dies_.at(die).entries;
    auto it = m.find({layer, expert});
    if (it == m.end()) return std::nullopt;
    return it->second.last_use;
}

std::vector<ExpertKey> DuplicationState::residents(DieId die) const {
    std::vector<ExpertKey> out;
    for (const auto& [k, _] : dies_.at(die).entries) out.push_back(k);
    return out;
}

AdmitReport DuplicationState::admit(ExpertDistributionTable& table, DieId die, MoeLayer layer, ExpertId expert,
                                    std::uint64_t bytes, Tick now) {
    DieCache& cache = dies_.at(die);
    const ExpertKey key{layer, expert};
    if (cache.entries.contains(key))
        throw std::invalid_argument(key_str(layer, expert) + " already resident on die " + std::to_string(die));
    if (table.is_home(layer, expert, die))
        throw std::invalid_argument(key_str(layer, expert) + " homes on die " + std::to_string(die));

    AdmitReport report;
    if (bytes > capacity_) {
        report.reason = "expert (" + std::to_string(bytes) + " bytes) exceeds duplicate capacity (" +
                        std::to_string(capacity_) + " bytes)";
        return report;
    }
    while (cache.used + bytes > capacity_) {
        auto victim = cache.entries.begin();
        for (auto it = cache.entries.begin(); it != cache.entries.end(); ++it)
            if (it->second.last_use < victim->second.last_use) victim = it;
        report.evicted.push_back(victim->first);
        table.remove_duplicate(victim->first.layer, victim->first.expert, die);
        cache.used -= victim->second.bytes;
        cache.entries.erase(victim);
    }
    cache.entries.emplace(key, Entry{now, bytes});
    cache.used += bytes;
    table.add_duplicate(layer, expert, die);
    report.admitted = true;
    return report;
}

void DuplicationState::touch(DieId die, MoeLayer layer, ExpertId expert, Tick now) {
    auto& m = dies_.at(die).entries;
    auto it = m.find({layer, expert});
    if (it != m.end()) it->second.last_use = std::max(it->second.last_use, now);
}

void DuplicationState::check_consistency(const ExpertDistributionTable& table) const {
    for (DieId d = 0; d < dies_.size(); ++d) {
        const DieCache& c = dies_[d];
        if (c.used > capacity_) throw InvariantViolation("die " + std::to_string(d) + " duplicate cache over capacity");
        std::uint64_t sum = 0;
        for (const auto& [k, e] : c.entries) {
            sum += e.bytes;
            if (!sorted_contains(table.duplicate_dies(k.layer, k.expert), d))
                throw InvariantViolation(key_str(k.layer, k.expert) + " resident on die " + std::to_string(d) +
                                         " but missing from the distribution table");
        }
        if (sum != c.used) throw InvariantViolation("die " + std::to_string(d) + " used-bytes ledger drifted");
    }
    for (MoeLayer l = 0; l < table.num_layers(); ++l)
        for (ExpertId e = 0; e < table.num_experts(); ++e)
            for (DieId d : table.duplicate_dies(l, e))
                if (d >= dies_.size() || !dies_[d].entries.contains({l, e}))
                    throw InvariantViolation(key_str(l, e) + " listed as duplicate on die " + std::to_string(d) +
                                             " but not resident");
}

void to_json(nlohmann::json& j, const ExpertDistributionTable& t) {
    nlohmann::json home = nlohmann::json::array(), dup = nlohmann::json::array();
    for (MoeLayer l = 0; l < t.num_layers(); ++l) {
        nlohmann::json hl = nlohmann::json::array(), dl = nlohmann::json::array();
        for (ExpertId e = 0; e < t.num_experts(); ++e) {
            hl.push_back(t.home_dies(l, e));
            dl.push_back(t.duplicate_dies(l, e));
        }
        home.push_back(std::move(hl));
        dup.push_back(std::move(dl));
    }
    j = nlohmann::json{{"num_dies", t.num_dies()}, {"home", std::move(home)}, {"duplicates", std::move(dup)}};
}

void from_json(const nlohmann::json& j, ExpertDistributionTable& t) {
    const auto& home = j.at("home");
    const std::size_t layers = home.size();
    const std::size_t experts = layers ? home.at(0).size() : 0;
    ExpertDistributionTable out(layers, experts, j.at("num_dies").get<std::uint32_t>());
    for (MoeLayer l = 0; l < layers; ++l) {
        if (home.at(l).size() != experts) throw DataError("placement: ragged home table");
        for (ExpertId e = 0; e < experts; ++e) out.set_home(l, e, home.at(l).at(e).get<std::vector<DieId>>());
    }
    if (j.contains("duplicates")) {
        const auto& dup = j.at("duplicates");
        for (MoeLayer l = 0; l < std::min(layers, dup.size()); ++l)
            for (ExpertId e = 0; e < std::min(experts, dup.at(l).size()); ++e)
                for (DieId d : dup.at(l).at(e).get<std::vector<DieId>>()) out.add_duplicate(l, e, d);
    }
    out.validate();
    t = std::move(out);
}

void to_json(nlohmann::json& j, const DuplicationState& s) {
    nlohmann::json dies = nlohmann::json::array();
    for (const auto& c : s.dies_) {
        nlohmann::json entries = nlohmann::json::array();
        for (const auto& [k, e] : c.entries)
            entries.push_back({{"layer", k.layer}, {"expert", k.expert}, {"last_use", e.last_use}, {"bytes", e.bytes}});
        dies.push_back(std::move(entries));
    }
    j = nlohmann::json{{"capacity_bytes", s.capacity_}, {"dies", std::move(dies)}};
}

void from_json(const nlohmann::json& j, DuplicationState& s) {
    const auto& dies = j.at("dies");
    DuplicationState out(static_cast<std::uint32_t>(dies.size()), j.at("capacity_bytes").get<std::uint64_t>());
    for (std::size_t d = 0; d < dies.size(); ++d) {
        for (const auto& e : dies[d]) {
            const ExpertKey k{e.at("layer").get<MoeLayer>(), e.at("expert").get<ExpertId>()};
            const auto bytes = e.at("bytes").get<std::uint64_t>();
            out.dies_[d].entries[k] = DuplicationState::Entry{e.at("last_use").get<Tick>(), bytes};
            out.dies_[d].used += bytes;
        }
    }
    s = std::move(out);
}

}  // namespace moesim

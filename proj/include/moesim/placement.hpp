// SPDX-License-Identifier: Apache-2.0
// SPDX-FileCopyrightText: © 2026 The moesim Authors

#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "moesim/fabric.hpp"
#include "moesim/trace.hpp"

namespace moesim {

struct ExpertKey {
    MoeLayer layer = 0;
    ExpertId expert = 0;
    auto operator<=>(const ExpertKey&) const = default;
};

/// Which dies hold each (layer, expert): the initial home dies plus dynamic duplicates.
class ExpertDistributionTable {
   public:
    ExpertDistributionTable() = default;
    ExpertDistributionTable(std::size_t num_layers, std::size_t num_experts, std::uint32_t num_dies);

    std::size_t num_layers() const { return num_layers_; }
    std::size_t num_experts() const { return num_experts_; }
    std::uint32_t num_dies() const { return num_dies_; }

    void set_home(MoeLayer layer, ExpertId expert, std::vector<DieId> homes);
    const std::vector<DieId>& home_dies(MoeLayer layer, ExpertId expert) const { return slot(layer, expert).home; }
    const std::vector<DieId>& duplicate_dies(MoeLayer layer, ExpertId expert) const { return slot(layer, expert).dup; }
    /// home ∪ duplicates, ascending.
    std::vector<DieId> dies_holding(MoeLayer layer, ExpertId expert) const;
    bool holds(MoeLayer layer, ExpertId expert, DieId die) const;
    bool is_home(MoeLayer layer, ExpertId expert, DieId die) const;

    /// Low-level edits; DuplicationState keeps these in step with its residency.
    void add_duplicate(MoeLayer layer, ExpertId expert, DieId die);
    void remove_duplicate(MoeLayer layer, ExpertId expert, DieId die);

    /// n-bit presence code, bit d set when die d holds the expert (die 0 leftmost).
    std::string presence_code(MoeLayer layer, ExpertId expert) const;

    /// Throws InvariantViolation on empty homes or overlapping home/duplicate sets.
    void validate() const;

    bool operator==(const ExpertDistributionTable&) const = default;

   private:
    struct Slot {
        std::vector<DieId> home;
        std::vector<DieId> dup;
        bool operator==(const Slot&) const = default;
    };
    const Slot& slot(MoeLayer layer, ExpertId expert) const;
    Slot& slot(MoeLayer layer, ExpertId expert);

    std::size_t num_layers_ = 0;
    std::size_t num_experts_ = 0;
    std::uint32_t num_dies_ = 0;
    std::vector<Slot> slots_;
};

/// Expert e of every layer homes on die e mod num_dies; no duplicates.
ExpertDistributionTable initial_round_robin(const ModelSpec& spec, const MeshTopology& topo);

struct AdmitReport {
    bool admitted = false;
    std::vector<ExpertKey> evicted;
    std::string reason;  // set when not admitted
};

/// Per-die duplicate residency in the reserved DRAM slice, with LRU eviction.
class DuplicationState {
   public:
    DuplicationState() = default;
    DuplicationState(std::uint32_t num_dies, std::uint64_t capacity_bytes);

    std::uint64_t capacity_bytes() const { return capacity_; }
    std::uint64_t used_bytes(DieId die) const { return dies_.at(die).used; }
    bool resident(DieId die, MoeLayer layer, ExpertId expert) const;
    std::optional<Tick> last_use(DieId die, MoeLayer layer, ExpertId expert) const;
    std::vector<ExpertKey> residents(DieId die) const;

    /// Makes the expert resident on `die`, evicting least-recently-used
    /// duplicates (oldest tick, then lowest key) until it fits. Throws
    /// std::invalid_argument if already resident or if `die` is a home die.
    AdmitReport admit(ExpertDistributionTable& table, DieId die, MoeLayer layer, ExpertId expert,
                      std::uint64_t bytes, Tick now);
    /// Records a use of a resident duplicate. No-op if not resident.
    void touch(DieId die, MoeLayer layer, ExpertId expert, Tick now);

    /// Throws InvariantViolation if capacity is exceeded or residency and table disagree.
    void check_consistency(const ExpertDistributionTable& table) const;

   private:
    struct Entry {
        Tick last_use = 0;
        std::uint64_t bytes = 0;
    };
    struct DieCache {
        std::map<ExpertKey, Entry> entries;
        std::uint64_t used = 0;
    };
    std::uint64_t capacity_ = 0;
    std::vector<DieCache> dies_;

    friend void to_json(nlohmann::json& j, const DuplicationState& s);
    friend void from_json(const nlohmann::json& j, DuplicationState& s);
};

void to_json(nlohmann::json& j, const ExpertDistributionTable& t);
void from_json(const nlohmann::json& j, ExpertDistributionTable& t);
void to_json(nlohmann::json& j, const DuplicationState& s);
void from_json(const nlohmann::json& j, DuplicationState& s);

}  // namespace moesim

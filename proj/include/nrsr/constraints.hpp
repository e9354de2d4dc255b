#pragma once

#include "nrsr/tokens.hpp"
#include "nrsr/traversal.hpp"

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace nrsr {

struct MaskConfig {
    int min_length = 4;
    int max_length = 32;
    bool forbid_inverse_child = true;
    bool forbid_trig_descendant = true;
    bool require_variable = true;
};

// Per-step legality vector over the token library.
struct ActionMask {
    std::vector<std::uint8_t> legal;

    int count_legal() const {
        int n = 0;
        for (auto v : legal) n += v ? 1 : 0;
        return n;
    }
    bool operator==(const ActionMask& other) const = default;
};

// A_original: the structural legality of each token at the next open slot.
// Rules: (a) no token that inverts its immediate parent (log/exp); (b) no
// trig token under a trig ancestor; (c) no token whose arity makes finishing
// within max_length impossible; (d) no terminal that would close the
// traversal below min_length; (e) on the last open slot of a still
// variable-free traversal, only variable terminals.
inline ActionMask structural_mask(const Traversal& partial, const TokenLibrary& lib,
                                  const MaskConfig& cfg) {
    const int slots = partial.token_ids.empty() ? 1 : needed_slots(partial, lib);
    if (slots < 1) throw std::invalid_argument("structural_mask: traversal already complete");

    const TreePosition pos = tree_position(partial, lib);
    const int inverse_of_parent =
        (cfg.forbid_inverse_child && pos.parent >= 0) ? lib.inverse_of(pos.parent) : -1;

    bool trig_ancestor = false;
    if (cfg.forbid_trig_descendant) {
        for (int id : pos.open_path) {
            if (lib.is_trig(id)) {
                trig_ancestor = true;
                break;
            }
        }
    }

    bool has_variable = false;
    for (int id : partial.token_ids) {
        if (lib.is_variable(id)) {
            has_variable = true;
            break;
        }
    }

    const int length = static_cast<int>(partial.token_ids.size());
    ActionMask mask;
    mask.legal.assign(static_cast<std::size_t>(lib.size()), 1);
    for (int id = 0; id < lib.size(); ++id) {
        const int arity = lib.arity(id);
        bool legal = true;
        if (id == inverse_of_parent) legal = false;
        if (trig_ancestor && lib.is_trig(id)) legal = false;
        // minimal completion after placing this token: every open slot takes
        // one terminal, so the final length is at least length + slots + arity
        if (length + slots + arity > cfg.max_length) legal = false;
        if (arity == 0 && slots == 1 && length + 1 < cfg.min_length) legal = false;
        if (cfg.require_variable && arity == 0 && slots == 1 && !has_variable &&
            !lib.is_variable(id)) {
            legal = false;
        }
        mask.legal[static_cast<std::size_t>(id)] = legal ? 1 : 0;
    }
    if (mask.count_legal() == 0) {
        throw std::runtime_error("structural_mask: no legal token at length " +
                                 std::to_string(length) + " with " + std::to_string(slots) +
                                 " open slots");
    }
    return mask;
}

// A_new = A_original o G: variables whose gate is off become illegal,
// non-variable tokens pass through unchanged.
inline ActionMask compose_gate(const ActionMask& structural,
                               const std::vector<std::uint8_t>& gate_binary,
                               const TokenLibrary& lib) {
    if (static_cast<int>(structural.legal.size()) != lib.size()) {
        throw std::invalid_argument("compose_gate: mask size mismatch");
    }
    if (static_cast<int>(gate_binary.size()) != lib.variable_count()) {
        throw std::invalid_argument("compose_gate: gate length must equal variable count");
    }
    ActionMask out = structural;
    for (int id = 0; id < lib.size(); ++id) {
        if (!lib.is_variable(id)) continue;
        const int v = lib.variable_index(id);
        if (!gate_binary[static_cast<std::size_t>(v)]) out.legal[static_cast<std::size_t>(id)] = 0;
    }
    if (out.count_legal() == 0) {
        throw std::runtime_error("compose_gate: gate eliminated all variables");
    }
    return out;
}

}  // namespace nrsr

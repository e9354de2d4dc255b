#pragma once

#include "nrsr/numerics.hpp"
#include "nrsr/tokens.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nrsr {

// Pre-order traversal of an expression tree; doubles as the RL trajectory.
struct Traversal {
    std::vector<int> token_ids;

    std::size_t length() const { return token_ids.size(); }
    bool operator==(const Traversal& other) const = default;
};

// Open slots remaining: 1 + sum(arity - 1). Zero iff the traversal is a
// complete expression. Throws if the counter closes before the last token.
inline int needed_slots(const Traversal& traversal, const TokenLibrary& lib) {
    int counter = 1;
    for (std::size_t i = 0; i < traversal.token_ids.size(); ++i) {
        counter += lib.arity(traversal.token_ids[i]) - 1;
        if (counter == 0 && i + 1 < traversal.token_ids.size()) {
            throw std::invalid_argument("malformed traversal: complete before final token");
        }
        if (counter < 0) {
            throw std::invalid_argument("malformed traversal: negative slot counter");
        }
    }
    return counter;
}

inline bool is_complete(const Traversal& traversal, const TokenLibrary& lib) {
    return !traversal.token_ids.empty() && needed_slots(traversal, lib) == 0;
}

// Position of the next open slot in a partial traversal: the parent node the
// slot hangs off, the completed left sibling (root token) when the parent is
// binary and half-filled, and the token ids on the open ancestor path.
struct TreePosition {
    int parent = -1;   // token id, -1 when the traversal is empty
    int sibling = -1;  // root token id of the completed left sibling, -1 if none
    std::vector<int> open_path;  // ancestors of the open slot, root first
    int open_slots = 0;
};

inline TreePosition tree_position(const Traversal& partial, const TokenLibrary& lib) {
    struct Node {
        int token_id;
        int arity;
        int filled = 0;
        int first_child = -1;
    };
    std::vector<Node> stack;
    for (std::size_t i = 0; i < partial.token_ids.size(); ++i) {
        const int tok = partial.token_ids[i];
        stack.push_back({tok, lib.arity(tok)});
        while (!stack.empty() && stack.back().filled == stack.back().arity) {
            const int completed_root = stack.back().token_id;
            stack.pop_back();
            if (stack.empty()) {
                if (i + 1 < partial.token_ids.size()) {
                    throw std::invalid_argument("malformed traversal: complete before final token");
                }
                break;
            }
            Node& parent = stack.back();
            if (parent.filled == 0) parent.first_child = completed_root;
            parent.filled += 1;
        }
    }

    TreePosition pos;
    for (const Node& n : stack) pos.open_path.push_back(n.token_id);
    if (!stack.empty()) {
        const Node& top = stack.back();
        pos.parent = top.token_id;
        if (top.filled == 1 && top.arity == 2) pos.sibling = top.first_child;
        int open = 0;
        for (const Node& n : stack) open += n.arity - n.filled;
        pos.open_slots = open;
    } else {
        pos.open_slots = partial.token_ids.empty() ? 1 : 0;
    }
    return pos;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
    Array predictions;
    bool valid = false;  // false iff any output element is non-finite
};

// Single right-to-left pass over the prefix sequence with an explicit value
// stack. Operators are unprotected: /0, log(<=0), exp overflow follow IEEE
// semantics and flip `valid` when they reach the output.
inline EvalResult evaluate(const Traversal& traversal, const TokenLibrary& lib,
                           const Matrix& inputs) {
    if (!is_complete(traversal, lib)) {
        throw std::invalid_argument("evaluate: traversal is not a complete expression");
    }
    const Eigen::Index m = inputs.rows();
    std::vector<Array> stack;
    stack.reserve(8);
    for (auto it = traversal.token_ids.rbegin(); it != traversal.token_ids.rend(); ++it) {
        const Token& tok = lib.token(*it);
        switch (tok.kind) {
            case TokenKind::Variable: {
                if (tok.variable_index < 0 || tok.variable_index >= inputs.cols()) {
                    throw std::out_of_range("evaluate: variable index out of range");
                }
                stack.emplace_back(inputs.col(tok.variable_index).array());
                break;
            }
            case TokenKind::UnaryOp: {
                Array a = std::move(stack.back());
                stack.pop_back();
                if (tok.name == "sin") a = a.sin();
                else if (tok.name == "cos") a = a.cos();
                else if (tok.name == "log") a = a.log();
                else if (tok.name == "exp") a = a.exp();
                else throw std::invalid_argument("evaluate: unknown unary op " + tok.name);
                stack.push_back(std::move(a));
                break;
            }
            case TokenKind::BinaryOp: {
                Array left = std::move(stack.back());
                stack.pop_back();
                Array right = std::move(stack.back());
                stack.pop_back();
                if (tok.name == "add") left += right;
                else if (tok.name == "sub") left -= right;
                else if (tok.name == "mul") left *= right;
                else if (tok.name == "div") left /= right;
                else throw std::invalid_argument("evaluate: unknown binary op " + tok.name);
                stack.push_back(std::move(left));
                break;
            }
        }
    }
    EvalResult result;
    result.predictions = std::move(stack.back());
    result.valid = result.predictions.isFinite().all();
    (void)m;
    return result;
}

// ---------------------------------------------------------------------------
// Keys and rendering
// ---------------------------------------------------------------------------

// Injective byte key over token sequences (syntactic dedup).
inline std::string canonical_key(const Traversal& traversal) {
    std::string key;
    key.reserve(traversal.token_ids.size());
    for (int id : traversal.token_ids) {
        key.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    }
    return key;
}

namespace detail {
inline std::string infix_symbol(const std::string& name) {
    if (name == "add") return "+";
    if (name == "sub") return "-";
    if (name == "mul") return "*";
    if (name == "div") return "/";
    return name;
}

inline std::string render_infix_rec(const Traversal& t, const TokenLibrary& lib,
                                    std::size_t& cursor) {
    const Token& tok = lib.token(t.token_ids.at(cursor++));
    switch (tok.kind) {
        case TokenKind::Variable:
            return tok.name;
        case TokenKind::UnaryOp: {
            std::string inner = render_infix_rec(t, lib, cursor);
            return tok.name + "(" + inner + ")";
        }
        case TokenKind::BinaryOp: {
            std::string left = render_infix_rec(t, lib, cursor);
            std::string right = render_infix_rec(t, lib, cursor);
            return "(" + left + " " + infix_symbol(tok.name) + " " + right + ")";
        }
    }
    throw std::logic_error("unreachable");
}
}  // namespace detail

// Fully parenthesized infix rendering, e.g. "sin((x1 * x1))".
inline std::string render_infix(const Traversal& traversal, const TokenLibrary& lib) {
    if (!is_complete(traversal, lib)) {
        throw std::invalid_argument("render_infix: traversal is not complete");
    }
    std::size_t cursor = 0;
    return detail::render_infix_rec(traversal, lib, cursor);
}

// Text form used in reports and golden files: whitespace-separated names.
inline std::string to_text(const Traversal& traversal, const TokenLibrary& lib) {
    std::string out;
    for (std::size_t i = 0; i < traversal.token_ids.size(); ++i) {
        if (i) out += ' ';
        out += lib.token(traversal.token_ids[i]).name;
    }
    return out;
}

inline Traversal from_text(const std::string& text, const TokenLibrary& lib) {
    Traversal t;
    std::istringstream in(text);
    std::string name;
    while (in >> name) t.token_ids.push_back(lib.require(name));
    return t;
}

}  // namespace nrsr

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nrsr {

enum class TokenKind { BinaryOp, UnaryOp, Variable };

struct Token {
    int id = -1;
    TokenKind kind = TokenKind::Variable;
    std::string name;
    int arity = 0;
    int variable_index = -1;  // valid iff kind == Variable
};

// The symbol set L. Token ids are positions in `tokens`, which keeps masks
// and policy logits index-aligned with the library.
class TokenLibrary {
public:
    TokenLibrary() = default;

    int add(TokenKind kind, std::string name, int arity, int variable_index = -1) {
        for (const auto& t : tokens_) {
            if (t.name == name) throw std::invalid_argument("duplicate token name: " + name);
        }
        Token t;
        t.id = static_cast<int>(tokens_.size());
        t.kind = kind;
        t.name = std::move(name);
        t.arity = arity;
        t.variable_index = variable_index;
        tokens_.push_back(std::move(t));
        return tokens_.back().id;
    }

    void add_inverse_pair(int a, int b) { inverse_pairs_.emplace_back(a, b); }
    void add_trig(int id) { trig_.push_back(id); }

    int size() const { return static_cast<int>(tokens_.size()); }
    const Token& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    const std::vector<Token>& tokens() const { return tokens_; }

    int arity(int id) const { return token(id).arity; }
    bool is_variable(int id) const { return token(id).kind == TokenKind::Variable; }
    bool is_terminal(int id) const { return token(id).arity == 0; }
    int variable_index(int id) const { return token(id).variable_index; }
    int variable_count() const {
        int n = 0;
        for (const auto& t : tokens_) n += (t.kind == TokenKind::Variable) ? 1 : 0;
        return n;
    }

    bool is_trig(int id) const {
        for (int t : trig_) {
            if (t == id) return true;
        }
        return false;
    }

    // -1 when the token has no inverse partner in the library.
    int inverse_of(int id) const {
        for (const auto& [a, b] : inverse_pairs_) {
            if (a == id) return b;
            if (b == id) return a;
        }
        return -1;
    }

    int find(const std::string& name) const {
        for (const auto& t : tokens_) {
            if (t.name == name) return t.id;
        }
        return -1;
    }

    int require(const std::string& name) const {
        const int id = find(name);
        if (id < 0) throw std::invalid_argument("unknown token: " + name);
        return id;
    }

private:
    std::vector<Token> tokens_;
    std::vector<std::pair<int, int>> inverse_pairs_;
    std::vector<int> trig_;
};

// {+, -, *, /, sin, cos, log, exp, x1..xn}. No constant tokens; constants
// arise syntactically (e.g. x/x).
inline TokenLibrary standard_library(int n_variables) {
    if (n_variables < 1) throw std::invalid_argument("standard_library: need >= 1 variable");
    TokenLibrary lib;
    lib.add(TokenKind::BinaryOp, "add", 2);
    lib.add(TokenKind::BinaryOp, "sub", 2);
    lib.add(TokenKind::BinaryOp, "mul", 2);
    lib.add(TokenKind::BinaryOp, "div", 2);
    const int sin_id = lib.add(TokenKind::UnaryOp, "sin", 1);
    const int cos_id = lib.add(TokenKind::UnaryOp, "cos", 1);
    const int log_id = lib.add(TokenKind::UnaryOp, "log", 1);
    const int exp_id = lib.add(TokenKind::UnaryOp, "exp", 1);
    for (int i = 0; i < n_variables; ++i) {
        lib.add(TokenKind::Variable, "x" + std::to_string(i + 1), 0, i);
    }
    lib.add_inverse_pair(log_id, exp_id);
    lib.add_trig(sin_id);
    lib.add_trig(cos_id);
    return lib;
}

}  // namespace nrsr

#pragma once

#include "nrsr/constraints.hpp"
#include "nrsr/numerics.hpp"
#include "nrsr/rng.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace nrsr {

// Hard-concrete gate parameters: one log-alpha per input variable plus the
// stretched Binary Concrete constants (a < 0 < 1 < b, temperature tau).
struct GateParams {
    Vector log_alpha;
    double temperature = 2.0 / 3.0;
    double stretch_lo = -0.1;  // a
    double stretch_hi = 1.1;   // b

    explicit GateParams(Eigen::Index n = 0) : log_alpha(Vector::Zero(n)) {}

    void validate() const {
        if (temperature <= 0) throw std::invalid_argument("gate temperature must be positive");
        if (!(stretch_lo < 0.0 && stretch_hi > 1.0)) {
            throw std::invalid_argument("gate stretch must satisfy a < 0 < 1 < b");
        }
    }
};

// One stretched-and-clipped Binary Concrete draw per gate:
//   X = sigmoid((ln u - ln(1-u) + log_alpha) / tau)
//   Z = clamp(X * (b - a) + a, 0, 1)
// d_dlog_alpha carries the reparameterized derivative, zero where clipped.
struct GateSample {
    Vector z;
    Vector d_dlog_alpha;
};

inline GateSample sample_gates_with_grad(const GateParams& gate, const Vector& uniforms) {
    gate.validate();
    if (uniforms.size() != gate.log_alpha.size()) {
        throw std::invalid_argument("sample_gates: uniforms length mismatch");
    }
    const double span = gate.stretch_hi - gate.stretch_lo;
    GateSample out;
    out.z.resize(gate.log_alpha.size());
    out.d_dlog_alpha.resize(gate.log_alpha.size());
    for (Eigen::Index j = 0; j < gate.log_alpha.size(); ++j) {
        const double u = uniforms[j];
        if (!(u > 0.0 && u < 1.0)) {
            throw std::invalid_argument("sample_gates: uniforms must lie strictly inside (0,1)");
        }
        const double s = 1.0 / (1.0 + std::exp(-(std::log(u) - std::log1p(-u) + gate.log_alpha[j]) /
                                               gate.temperature));
        const double stretched = s * span + gate.stretch_lo;
        if (stretched <= 0.0) {
            out.z[j] = 0.0;
            out.d_dlog_alpha[j] = 0.0;
        } else if (stretched >= 1.0) {
            out.z[j] = 1.0;
            out.d_dlog_alpha[j] = 0.0;
        } else {
            out.z[j] = stretched;
            out.d_dlog_alpha[j] = s * (1.0 - s) * span / gate.temperature;
        }
    }
    return out;
}

inline Vector sample_gates(const GateParams& gate, const Vector& uniforms) {
    return sample_gates_with_grad(gate, uniforms).z;
}

// P(Z != 0) = sigmoid(log_alpha - tau * ln(-a / (b - a))), the differentiable
// L0 penalty per gate.
inline Vector prob_nonzero(const GateParams& gate) {
    gate.validate();
    const double shift =
        gate.temperature * std::log(-gate.stretch_lo / (gate.stretch_hi - gate.stretch_lo));
    Vector p(gate.log_alpha.size());
    for (Eigen::Index j = 0; j < gate.log_alpha.size(); ++j) {
        p[j] = 1.0 / (1.0 + std::exp(-(gate.log_alpha[j] - shift)));
    }
    return p;
}

// Trained filter: epoch-averaged P(Z != 0) plus its Otsu binarization.
// fallback_applied means binarization zeroed everything and the gate was
// reset to all-ones so no variable is filtered out.
struct GateVector {
    Vector probabilities;
    std::vector<std::uint8_t> binary;
    double threshold_used = 0.0;
    bool fallback_applied = false;

    static GateVector all_ones(Eigen::Index n) {
        GateVector g;
        g.probabilities = Vector::Ones(n);
        g.binary.assign(static_cast<std::size_t>(n), 1);
        g.threshold_used = 0.0;
        g.fallback_applied = false;
        return g;
    }

    int kept_count() const {
        int n = 0;
        for (auto b : binary) n += b ? 1 : 0;
        return n;
    }
};

inline ActionMask compose_gate(const ActionMask& structural, const GateVector& gates,
                               const TokenLibrary& lib) {
    return compose_gate(structural, gates.binary, lib);
}

}  // namespace nrsr

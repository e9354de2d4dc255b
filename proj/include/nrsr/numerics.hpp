#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

namespace nrsr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Array = Eigen::ArrayXd;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

// Numerically stable log-softmax. -inf entries are legal (masked actions)
// and map to probability zero. Throws if every entry is -inf.
inline Vector log_softmax(const Vector& logits) {
    const double m = logits.maxCoeff();
    if (!std::isfinite(m)) {
        throw std::runtime_error("log_softmax: no legal action (all logits are -inf)");
    }
    double sum = 0.0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        sum += std::exp(logits[i] - m);
    }
    const double log_z = m + std::log(sum);
    Vector out(logits.size());
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        out[i] = logits[i] - log_z;  // -inf stays -inf
    }
    return out;
}

inline Vector softmax(const Vector& logits) {
    Vector lp = log_softmax(logits);
    for (Eigen::Index i = 0; i < lp.size(); ++i) {
        lp[i] = std::isfinite(lp[i]) ? std::exp(lp[i]) : 0.0;
    }
    return lp;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
    Vector first_moment;
    Vector second_moment;
    long step_count = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double learning_rate = 1e-3;

    AdamState() = default;
    AdamState(Eigen::Index n, double lr, double b1 = 0.9, double b2 = 0.999)
        : first_moment(Vector::Zero(n)),
          second_moment(Vector::Zero(n)),
          beta1(b1),
          beta2(b2),
          learning_rate(lr) {}
};

// Bias-corrected Adam step, in place. Returns false (and leaves params and
// state untouched) when the gradient contains a non-finite entry.
inline bool adam_update(Vector& params, const Vector& grads, AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
        throw std::invalid_argument("adam_update: shape mismatch");
    }
    if (!grads.allFinite()) return false;

    state.step_count += 1;
    state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads;
    state.second_moment =
        state.beta2 * state.second_moment + (1.0 - state.beta2) * grads.cwiseProduct(grads);
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        const double m_hat = state.first_moment[i] / c1;
        const double v_hat = state.second_moment[i] / c2;
        params[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
    return true;
}

// ---------------------------------------------------------------------------
// Otsu threshold
// ---------------------------------------------------------------------------

struct OtsuResult {
    double threshold = 0.0;
    bool degenerate = false;  // all inputs identical; caller treats as all-below
};

// Exact sweep over splits between consecutive sorted values (inputs here are
// short gate vectors, so no histogram binning). The returned threshold is the
// midpoint of the best split; ties resolve to the lowest midpoint.
inline OtsuResult otsu_threshold(const Vector& values) {
    const Eigen::Index n = values.size();
    if (n < 2) throw std::invalid_argument("otsu_threshold: need at least 2 values");

    std::vector<double> sorted(values.data(), values.data() + n);
    std::sort(sorted.begin(), sorted.end());
    if (sorted.front() == sorted.back()) {
        return {sorted.front(), true};
    }

    // prefix sums over the sorted order
    double total = 0.0;
    for (double v : sorted) total += v;

    double best_var = -1.0;
    double best_threshold = 0.0;
    double prefix = 0.0;
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
        prefix += sorted[i];
        if (sorted[i] == sorted[i + 1]) continue;  // not a split point
        const double w0 = static_cast<double>(i + 1) / static_cast<double>(n);
        const double w1 = 1.0 - w0;
        const double mu0 = prefix / static_cast<double>(i + 1);
        const double mu1 = (total - prefix) / static_cast<double>(n - i - 1);
        const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (between > best_var) {
            best_var = between;
            best_threshold = 0.5 * (sorted[i] + sorted[i + 1]);
        }
    }
    return {best_threshold, false};
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

// Central differences against an analytic gradient; returns the maximum
// elementwise relative error. `step` is the absolute perturbation.
inline double finite_diff_check(const std::function<double(const Vector&)>& f,
                                const Vector& analytic_grad, const Vector& params,
                                double step) {
    if (analytic_grad.size() != params.size()) {
        throw std::invalid_argument("finite_diff_check: shape mismatch");
    }
    double max_rel = 0.0;
    Vector p = params;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double saved = p[i];
        p[i] = saved + step;
        const double fp = f(p);
        p[i] = saved - step;
        const double fm = f(p);
        p[i] = saved;
        const double numeric = (fp - fm) / (2.0 * step);
        const double a = analytic_grad[i];
        const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-6);
        if (rel > max_rel) max_rel = rel;
    }
    return max_rel;
}

}  // namespace nrsr

#pragma once

#include "nrsr/constraints.hpp"
#include "nrsr/gates.hpp"
#include "nrsr/numerics.hpp"
#include "nrsr/rng.hpp"
#include "nrsr/tokens.hpp"
#include "nrsr/traversal.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace nrsr {

// Single-layer LSTM policy: observation -> recurrent cell -> affine
// projection to one logit per library token. Gate blocks are ordered
// (input, forget, candidate, output) within the stacked weight rows.
struct PolicyParams {
    int obs_dim = 0;
    int hidden = 0;
    int n_tokens = 0;
    Matrix Wx;  // 4h x obs_dim
    Matrix Wh;  // 4h x h
    Vector b;   // 4h
    Matrix Wp;  // n_tokens x h
    Vector bp;  // n_tokens

    PolicyParams() = default;
    PolicyParams(int obs, int h, int n)
        : obs_dim(obs),
          hidden(h),
          n_tokens(n),
          Wx(Matrix::Zero(4 * h, obs)),
          Wh(Matrix::Zero(4 * h, h)),
          b(Vector::Zero(4 * h)),
          Wp(Matrix::Zero(n, h)),
          bp(Vector::Zero(n)) {}

    Eigen::Index param_count() const {
        return Wx.size() + Wh.size() + b.size() + Wp.size() + bp.size();
    }

    template <typename Self, typename F>
    static void for_each_block(Self& p, F&& f) {
        f(p.Wx);
        f(p.Wh);
        f(p.b);
        f(p.Wp);
        f(p.bp);
    }

    Vector to_vector() const {
        Vector v(param_count());
        Eigen::Index off = 0;
        for_each_block(*this, [&](const auto& block) {
            std::copy(block.data(), block.data() + block.size(), v.data() + off);
            off += block.size();
        });
        return v;
    }

    void from_vector(const Vector& v) {
        if (v.size() != param_count()) throw std::invalid_argument("PolicyParams: bad vector size");
        Eigen::Index off = 0;
        for_each_block(*this, [&](auto& block) {
            std::copy(v.data() + off, v.data() + off + block.size(), block.data());
            off += block.size();
        });
    }

    void set_zero() {
        for_each_block(*this, [](auto& block) { block.setZero(); });
    }
};

inline int observation_dim(const TokenLibrary& lib) { return 2 * (lib.size() + 1); }

// Uniform +-0.08 weights, zero biases except the forget gate block at 1.0.
inline PolicyParams init_policy(const TokenLibrary& lib, int hidden, RngStream& rng) {
    PolicyParams p(observation_dim(lib), hidden, lib.size());
    const auto fill = [&](Matrix& w) {
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-0.08, 0.08);
    };
    fill(p.Wx);
    fill(p.Wh);
    fill(p.Wp);
    p.b.segment(hidden, hidden).setConstant(1.0);  // forget gate bias
    return p;
}

// ---------------------------------------------------------------------------
// Observation encoding
// ---------------------------------------------------------------------------

// Parent and sibling of the next open slot as one-hot positions; slot value
// |L| is the reserved "empty" symbol.
struct Observation {
    int parent_slot = 0;
    int sibling_slot = 0;
};

inline Observation encode_observation_sparse(const Traversal& partial, const TokenLibrary& lib) {
    const TreePosition pos = tree_position(partial, lib);
    Observation obs;
    obs.parent_slot = pos.parent >= 0 ? pos.parent : lib.size();
    obs.sibling_slot = pos.sibling >= 0 ? pos.sibling : lib.size();
    return obs;
}

// Dense form: concatenated parent and sibling one-hots, dimension 2(|L|+1).
inline Vector encode_observation(const Traversal& partial, const TokenLibrary& lib) {
    const Observation obs = encode_observation_sparse(partial, lib);
    const int half = lib.size() + 1;
    Vector v = Vector::Zero(2 * half);
    v[obs.parent_slot] = 1.0;
    v[half + obs.sibling_slot] = 1.0;
    return v;
}

// ---------------------------------------------------------------------------
// LSTM cell
// ---------------------------------------------------------------------------

namespace detail {

struct LstmStepCache {
    Observation obs;
    Vector h_prev, c_prev;
    Vector gi, gf, gg, go;  // post-activation gate values
    Vector c, tanh_c, h;
    // masked-softmax quantities used by the backward pass
    Vector probs;      // zero at masked entries
    double entropy = 0.0;
    double log_prob = 0.0;  // of the chosen action
};

// One cell step exploiting the two-hot observation: Wx * obs collapses to
// two column reads.
inline void lstm_cell_sparse(const PolicyParams& p, const Observation& obs, const Vector& h_prev,
                             const Vector& c_prev, LstmStepCache& cache) {
    const int h = p.hidden;
    const int half = p.n_tokens + 1;
    Vector pre = p.b + p.Wx.col(obs.parent_slot) + p.Wx.col(half + obs.sibling_slot);
    pre.noalias() += p.Wh * h_prev;

    cache.obs = obs;
    cache.h_prev = h_prev;
    cache.c_prev = c_prev;
    cache.gi = (1.0 + (-pre.segment(0, h).array()).exp()).inverse();
    cache.gf = (1.0 + (-pre.segment(h, h).array()).exp()).inverse();
    cache.gg = pre.segment(2 * h, h).array().tanh();
    cache.go = (1.0 + (-pre.segment(3 * h, h).array()).exp()).inverse();
    cache.c = cache.gf.cwiseProduct(c_prev) + cache.gi.cwiseProduct(cache.gg);
    cache.tanh_c = cache.c.array().tanh();
    cache.h = cache.go.cwiseProduct(cache.tanh_c);
}

inline Vector project_logits(const PolicyParams& p, const Vector& h) { return p.Wp * h + p.bp; }

inline void apply_mask(Vector& logits, const ActionMask& mask) {
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        if (!mask.legal[static_cast<std::size_t>(i)]) logits[i] = kNegInf;
    }
}

// log-softmax over the masked logits; fills probs/entropy into the cache and
// returns the per-token log-probabilities.
inline Vector masked_distribution(Vector logits, const ActionMask& mask, LstmStepCache& cache) {
    apply_mask(logits, mask);
    Vector lp = log_softmax(logits);
    cache.probs.resize(lp.size());
    double entropy = 0.0;
    for (Eigen::Index i = 0; i < lp.size(); ++i) {
        if (std::isfinite(lp[i])) {
            cache.probs[i] = std::exp(lp[i]);
            entropy -= cache.probs[i] * lp[i];
        } else {
            cache.probs[i] = 0.0;
        }
    }
    cache.entropy = entropy;
    return lp;
}

}  // namespace detail

// Public single-step op: dense observation in, logits and new state out.
struct PolicyStepResult {
    Vector logits;
    Vector h;
    Vector c;
};

inline PolicyStepResult policy_step(const PolicyParams& params, const Vector& obs,
                                    const Vector& hidden, const Vector& cell) {
    if (obs.size() != params.obs_dim || hidden.size() != params.hidden ||
        cell.size() != params.hidden) {
        throw std::invalid_argument("policy_step: shape mismatch");
    }
    if (!obs.allFinite() || !hidden.allFinite() || !cell.allFinite()) {
        throw std::runtime_error("policy_step: non-finite state");
    }
    // dense path: used by tests and one-off callers; sampling uses the
    // sparse two-hot path which is algebraically identical
    const int h = params.hidden;
    Vector pre = params.Wx * obs + params.Wh * hidden + params.b;
    Vector gi = (1.0 + (-pre.segment(0, h).array()).exp()).inverse();
    Vector gf = (1.0 + (-pre.segment(h, h).array()).exp()).inverse();
    Vector gg = pre.segment(2 * h, h).array().tanh();
    Vector go = (1.0 + (-pre.segment(3 * h, h).array()).exp()).inverse();
    PolicyStepResult out;
    out.c = gf.cwiseProduct(cell) + gi.cwiseProduct(gg);
    Vector tanh_c = out.c.array().tanh();
    out.h = go.cwiseProduct(tanh_c);
    out.logits = detail::project_logits(params, out.h);
    return out;
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

struct StepRecord {
    Observation observation;
    int action = -1;
    double log_prob = 0.0;
    double dist_entropy = 0.0;
    ActionMask mask;
};

struct TrajectoryRecord {
    std::vector<StepRecord> steps;
    Traversal traversal;
    double sequence_log_prob = 0.0;
    double reward = 0.0;  // filled by the trainer
};

namespace detail {

inline int draw_categorical(const Vector& probs, double u) {
    double cum = 0.0;
    int last_legal = -1;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0.0) continue;
        last_legal = static_cast<int>(i);
        cum += probs[i];
        if (u < cum) return static_cast<int>(i);
    }
    if (last_legal < 0) throw std::runtime_error("draw_categorical: no mass");
    return last_legal;  // u landed in the rounding tail
}

// Shared autoregressive loop. `forced` non-null replays that traversal
// (teacher forcing); otherwise actions are sampled from `rng`.
inline TrajectoryRecord roll_trajectory(const PolicyParams& params, const TokenLibrary& lib,
                                        const MaskConfig& cfg, const GateVector& gates,
                                        RngStream* rng, const Traversal* forced) {
    TrajectoryRecord traj;
    Vector h = Vector::Zero(params.hidden);
    Vector c = Vector::Zero(params.hidden);
    LstmStepCache cache;
    std::size_t step_index = 0;
    while (traj.traversal.token_ids.empty() || needed_slots(traj.traversal, lib) > 0) {
        const Observation obs = encode_observation_sparse(traj.traversal, lib);
        lstm_cell_sparse(params, obs, h, c, cache);
        h = cache.h;
        c = cache.c;
        if (!h.allFinite()) throw std::runtime_error("sample_trajectory: non-finite state");

        const ActionMask mask =
            compose_gate(structural_mask(traj.traversal, lib, cfg), gates, lib);
        Vector lp = masked_distribution(project_logits(params, cache.h), mask, cache);

        int action;
        if (forced) {
            if (step_index >= forced->token_ids.size()) {
                throw std::invalid_argument("force_trajectory: traversal ended early");
            }
            action = forced->token_ids[step_index];
            if (!mask.legal[static_cast<std::size_t>(action)]) {
                throw std::invalid_argument("force_trajectory: forced action is masked");
            }
        } else {
            action = draw_categorical(cache.probs, rng->uniform());
        }

        StepRecord rec;
        rec.observation = obs;
        rec.action = action;
        rec.log_prob = lp[action];
        rec.dist_entropy = cache.entropy;
        rec.mask = mask;
        traj.steps.push_back(std::move(rec));
        traj.traversal.token_ids.push_back(action);
        traj.sequence_log_prob += lp[action];
        ++step_index;
    }
    if (forced && step_index != forced->token_ids.size()) {
        throw std::invalid_argument("force_trajectory: traversal continues past completion");
    }
    return traj;
}

}  // namespace detail

// Autoregressive sampling under the composed mask. Terminates exactly when
// the traversal completes; the mask construction guarantees
// min_length <= T <= max_length.
inline TrajectoryRecord sample_trajectory(const PolicyParams& params, const TokenLibrary& lib,
                                          const MaskConfig& cfg, const GateVector& gates,
                                          RngStream& rng) {
    return detail::roll_trajectory(params, lib, cfg, gates, &rng, nullptr);
}

// Teacher-forced replay of a known traversal (used to inject candidate
// expressions into a batch with consistent step records).
inline TrajectoryRecord force_trajectory(const PolicyParams& params, const TokenLibrary& lib,
                                         const MaskConfig& cfg, const GateVector& gates,
                                         const Traversal& traversal) {
    return detail::roll_trajectory(params, lib, cfg, gates, nullptr, &traversal);
}

// ---------------------------------------------------------------------------
// Rescoring and backward
// ---------------------------------------------------------------------------

struct RescoreResult {
    std::vector<double> log_probs;
    std::vector<double> entropies;
    double sequence_log_prob = 0.0;
};

namespace detail {

// Teacher-forced forward pass under the stored masks, caching everything the
// backward pass needs.
inline RescoreResult rescore_cached(const PolicyParams& params, const TrajectoryRecord& traj,
                                    std::vector<LstmStepCache>& caches) {
    RescoreResult out;
    caches.clear();
    caches.resize(traj.steps.size());
    Vector h = Vector::Zero(params.hidden);
    Vector c = Vector::Zero(params.hidden);
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
        LstmStepCache& cache = caches[t];
        lstm_cell_sparse(params, traj.steps[t].observation, h, c, cache);
        h = cache.h;
        c = cache.c;
        Vector lp = masked_distribution(project_logits(params, cache.h), traj.steps[t].mask, cache);
        cache.log_prob = lp[traj.steps[t].action];
        out.log_probs.push_back(cache.log_prob);
        out.entropies.push_back(cache.entropy);
        out.sequence_log_prob += cache.log_prob;
    }
    return out;
}

// BPTT over one trajectory given dL/dlogits per step; accumulates into grad.
inline void policy_backward(const PolicyParams& params, const std::vector<LstmStepCache>& caches,
                            const std::vector<Vector>& dlogits, PolicyParams& grad) {
    const int h = params.hidden;
    const int half = params.n_tokens + 1;
    Vector dh_next = Vector::Zero(h);
    Vector dc_next = Vector::Zero(h);
    Vector dpre(4 * h);
    for (std::size_t ti = caches.size(); ti-- > 0;) {
        const LstmStepCache& cache = caches[ti];
        grad.Wp.noalias() += dlogits[ti] * cache.h.transpose();
        grad.bp += dlogits[ti];
        Vector dh = params.Wp.transpose() * dlogits[ti] + dh_next;

        Vector do_ = dh.cwiseProduct(cache.tanh_c);
        Vector dc = dc_next +
                    dh.cwiseProduct(cache.go)
                        .cwiseProduct((1.0 - cache.tanh_c.array().square()).matrix());
        Vector di = dc.cwiseProduct(cache.gg);
        Vector dg = dc.cwiseProduct(cache.gi);
        Vector df = dc.cwiseProduct(cache.c_prev);
        dc_next = dc.cwiseProduct(cache.gf);

        dpre.segment(0, h) =
            di.cwiseProduct(cache.gi).cwiseProduct((1.0 - cache.gi.array()).matrix());
        dpre.segment(h, h) =
            df.cwiseProduct(cache.gf).cwiseProduct((1.0 - cache.gf.array()).matrix());
        dpre.segment(2 * h, h) = dg.cwiseProduct((1.0 - cache.gg.array().square()).matrix());
        dpre.segment(3 * h, h) =
            do_.cwiseProduct(cache.go).cwiseProduct((1.0 - cache.go.array()).matrix());

        grad.Wx.col(cache.obs.parent_slot) += dpre;
        grad.Wx.col(half + cache.obs.sibling_slot) += dpre;
        grad.Wh.noalias() += dpre * cache.h_prev.transpose();
        grad.b += dpre;
        dh_next = params.Wh.transpose() * dpre;
    }
}

}  // namespace detail

// Per-step log-probabilities and entropies of a stored trajectory under the
// current parameters (same code path as sampling, so at the sampling
// parameters it reproduces the stored values bit-for-bit).
inline RescoreResult rescore(const PolicyParams& params, const TrajectoryRecord& traj) {
    std::vector<detail::LstmStepCache> caches;
    return detail::rescore_cached(params, traj, caches);
}

}  // namespace nrsr

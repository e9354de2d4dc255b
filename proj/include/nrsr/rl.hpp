#pragma once

#include "nrsr/dataset.hpp"
#include "nrsr/numerics.hpp"
#include "nrsr/policy.hpp"
#include "nrsr/traversal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace nrsr {

// ---------------------------------------------------------------------------
// Reward
// ---------------------------------------------------------------------------

struct RewardEval {
    double nrmse = std::numeric_limits<double>::infinity();
    double reward = 0.0;  // 1 / (1 + NRMSE); 0 when the evaluation is invalid
    bool valid = false;
};

inline RewardEval reward_from_predictions(const Array& pred, const Vector& y, double sigma_y) {
    if (sigma_y <= 0.0) throw std::invalid_argument("reward: sigma_y must be positive");
    RewardEval out;
    if (!pred.isFinite().all()) return out;
    const double mse = (pred - y.array()).square().mean();
    out.nrmse = std::sqrt(mse) / sigma_y;
    out.reward = 1.0 / (1.0 + out.nrmse);
    out.valid = true;
    return out;
}

inline RewardEval reward(const Traversal& traversal, const TokenLibrary& lib,
                         const Dataset& reward_set) {
    if (reward_set.rows() == 0) throw std::invalid_argument("reward: empty reward set");
    const EvalResult eval = evaluate(traversal, lib, reward_set.X);
    if (!eval.valid) return {};
    return reward_from_predictions(eval.predictions, reward_set.y, reward_set.sigma_y);
}

// ---------------------------------------------------------------------------
// Quantile risk filter
// ---------------------------------------------------------------------------

struct BatchStats {
    double baseline = 0.0;  // R_eta, the empirical (1-eps)-quantile
    std::vector<std::size_t> kept_indices;
    double mean_reward = 0.0;
    double max_reward = 0.0;
    double hierarchical_entropy = 0.0;  // filled by the trainer
    double path_entropy = 0.0;          // filled by the trainer
};

// Keeps the ceil(eps*N) largest rewards (ties to the lower index) and sets
// the baseline to the (1-eps) order statistic with lower interpolation.
inline BatchStats quantile_filter(const std::vector<double>& rewards, double epsilon) {
    if (rewards.empty()) throw std::invalid_argument("quantile_filter: empty batch");
    if (!(epsilon > 0.0 && epsilon < 1.0)) {
        throw std::invalid_argument("quantile_filter: epsilon must lie in (0,1)");
    }
    const std::size_t n = rewards.size();
    const std::size_t keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(epsilon * static_cast<double>(n))));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return rewards[a] > rewards[b];
    });

    BatchStats stats;
    stats.kept_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));

    std::vector<double> ascending(rewards);
    std::sort(ascending.begin(), ascending.end());
    const double q = 1.0 - epsilon;
    const auto idx = static_cast<std::size_t>(std::floor(static_cast<double>(n - 1) * q));
    stats.baseline = ascending[idx];

    stats.max_reward = ascending.back();
    stats.mean_reward = std::accumulate(rewards.begin(), rewards.end(), 0.0) /
                        static_cast<double>(n);
    return stats;
}

// ---------------------------------------------------------------------------
// Entropy terms
// ---------------------------------------------------------------------------

// Decay-weighted per-step entropy, Sum_t gamma^(t-1) H_t, averaged over the
// batch. Rewards exploratory freedom in the earliest tokens most.
inline double hierarchical_entropy(const std::vector<const TrajectoryRecord*>& trajectories,
                                   double gamma) {
    if (trajectories.empty()) return 0.0;
    double total = 0.0;
    for (const TrajectoryRecord* traj : trajectories) {
        double w = 1.0;
        for (const StepRecord& step : traj->steps) {
            total += w * step.dist_entropy;
            w *= gamma;
        }
    }
    return total / static_cast<double>(trajectories.size());
}

// Monte Carlo estimator of the whole-sequence entropy: mean of
// -log pi(tau) over the batch.
inline double path_entropy(const std::vector<const TrajectoryRecord*>& trajectories) {
    if (trajectories.empty()) return 0.0;
    double total = 0.0;
    for (const TrajectoryRecord* traj : trajectories) total -= traj->sequence_log_prob;
    return total / static_cast<double>(trajectories.size());
}

// ---------------------------------------------------------------------------
// Clipped-surrogate loss with mixed path-entropy bonus
// ---------------------------------------------------------------------------

struct PpoConfig {
    double clip = 0.2;
    double alpha = 0.05;  // path-entropy coefficient
    double beta = 0.02;   // hierarchical-entropy coefficient
    double gamma = 0.7;   // step-entropy decay
};

struct PpoEvaluation {
    double loss = 0.0;
    double surrogate = 0.0;
    double path_entropy = 0.0;
    double hierarchical_entropy = 0.0;
    int skipped_samples = 0;  // non-finite importance ratios
};

// L = -mean_t[min(r Â, clip(r) Â)] - alpha*H_tau - beta*H over the kept
// set. Advantages are constant per trajectory (R(tau) - R_eta). Gradients
// flow through the re-scored log-probabilities and entropies; masked logits
// receive exactly zero gradient.
inline PpoEvaluation ppo_loss_and_grad(const PolicyParams& params,
                                       const std::vector<const TrajectoryRecord*>& kept,
                                       const std::vector<double>& advantages,
                                       const PpoConfig& cfg, PolicyParams* grad_out) {
    if (kept.size() != advantages.size()) {
        throw std::invalid_argument("ppo_loss: advantage count mismatch");
    }
    if (kept.empty()) throw std::invalid_argument("ppo_loss: empty kept set");

    std::size_t total_steps = 0;
    for (const TrajectoryRecord* traj : kept) total_steps += traj->steps.size();
    const double inv_steps = 1.0 / static_cast<double>(total_steps);
    const double inv_kept = 1.0 / static_cast<double>(kept.size());

    PpoEvaluation eval;
    if (grad_out) grad_out->set_zero();

    std::vector<detail::LstmStepCache> caches;
    std::vector<Vector> dlogits;
    for (std::size_t k = 0; k < kept.size(); ++k) {
        const TrajectoryRecord& traj = *kept[k];
        const double advantage = advantages[k];
        const RescoreResult rescored = detail::rescore_cached(params, traj, caches);

        eval.path_entropy -= rescored.sequence_log_prob * inv_kept;
        if (grad_out) {
            dlogits.assign(traj.steps.size(), Vector());
        }

        double decay = 1.0;
        for (std::size_t t = 0; t < traj.steps.size(); ++t) {
            const double lp_new = rescored.log_probs[t];
            const double lp_old = traj.steps[t].log_prob;
            const double ratio = std::exp(lp_new - lp_old);
            const double h_t = rescored.entropies[t];
            eval.hierarchical_entropy += decay * h_t * inv_kept;

            double lp_coef = cfg.alpha * inv_kept;  // -alpha * H_tau term
            if (!std::isfinite(ratio)) {
                eval.skipped_samples += 1;
            } else {
                const double clipped = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
                const double unclipped_term = ratio * advantage;
                const double clipped_term = clipped * advantage;
                eval.surrogate -= std::min(unclipped_term, clipped_term) * inv_steps;
                if (unclipped_term <= clipped_term) {
                    lp_coef -= inv_steps * ratio * advantage;
                }
            }

            if (grad_out) {
                const detail::LstmStepCache& cache = caches[t];
                const double h_coef = -cfg.beta * decay * inv_kept;
                Vector dz(params.n_tokens);
                for (int j = 0; j < params.n_tokens; ++j) {
                    const double p = cache.probs[j];
                    if (p <= 0.0) {
                        dz[j] = 0.0;
                        continue;
                    }
                    const double lp_j = std::log(p);
                    const double indicator = (j == traj.steps[t].action) ? 1.0 : 0.0;
                    dz[j] = lp_coef * (indicator - p) + h_coef * (-p * (lp_j + h_t));
                }
                dlogits[t] = std::move(dz);
            }
            decay *= cfg.gamma;
        }
        if (grad_out) detail::policy_backward(params, caches, dlogits, *grad_out);
    }

    eval.loss = eval.surrogate - cfg.alpha * eval.path_entropy - cfg.beta * eval.hierarchical_entropy;
    return eval;
}

}  // namespace nrsr

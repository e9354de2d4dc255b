#pragma once

#include "nrsr/constraints.hpp"
#include "nrsr/dataset.hpp"
#include "nrsr/gates.hpp"
#include "nrsr/numerics.hpp"
#include "nrsr/policy.hpp"
#include "nrsr/rl.hpp"
#include "nrsr/rng.hpp"

#include <chrono>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

namespace nrsr {

struct TrainerConfig {
    int batch_size = 1000;        // trajectories per iteration
    double risk_epsilon = 0.05;   // top fraction kept
    double clip = 0.2;
    int ppo_epochs = 4;
    double learning_rate = 5e-5;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double alpha = 0.05;          // path-entropy coefficient
    double beta = 0.02;           // hierarchical-entropy coefficient
    double gamma = 0.7;           // step-entropy decay
    long max_expressions = 2000000;
    double recovery_tol = 1e-10;
    int lstm_hidden = 32;
    bool use_ppo = true;          // false: single plain policy-gradient pass
    bool use_path_entropy = true; // false: alpha forced to zero
    int jobs = 1;
    MaskConfig mask;

    void validate() const {
        if (!(risk_epsilon > 0.0 && risk_epsilon < 1.0)) {
            throw std::invalid_argument("TrainerConfig: risk_epsilon must lie in (0,1)");
        }
        if (!(gamma > 0.0 && gamma < 1.0)) {
            throw std::invalid_argument("TrainerConfig: gamma must lie in (0,1)");
        }
        if (clip <= 0.0) throw std::invalid_argument("TrainerConfig: clip must be positive");
        if (batch_size <= 0 || ppo_epochs <= 0 || max_expressions <= 0 || lstm_hidden <= 0 ||
            jobs <= 0) {
            throw std::invalid_argument("TrainerConfig: counts must be positive");
        }
        if (learning_rate <= 0.0 || recovery_tol <= 0.0) {
            throw std::invalid_argument("TrainerConfig: rates must be positive");
        }
    }
};

struct IterationLog {
    long iteration = 0;
    long een = 0;
    long uen = 0;
    double baseline = 0.0;        // R_eta
    double best_reward = 0.0;
    double hierarchical_entropy = 0.0;  // H over the kept set
    double path_entropy = 0.0;          // H_tau over the kept set
    double batch_path_entropy = 0.0;    // full-batch estimator of H_tau
    double loss = 0.0;
};

struct RunReport {
    bool recovered = false;
    Traversal best_traversal;
    double best_reward = 0.0;
    long expressions_consumed = 0;  // EEN
    long unique_expressions = 0;    // UEN
    double eval_nmse = 1.0;
    bool eval_valid = false;
    long iterations = 0;
    double wall_time_seconds = 0.0;
    std::uint64_t seed = 0;
    std::string status = "ok";
    long overfit_rejections = 0;  // reward-set hits rejected by the eval set
};

using IterationSink = std::function<void(const IterationLog&)>;

namespace detail {

// Samples `count` trajectories with per-trajectory RNG streams. Results land
// in index order, so the batch is identical for any worker count.
inline void sample_batch(const PolicyParams& params, const TokenLibrary& lib,
                         const MaskConfig& mask_cfg, const GateVector& gates,
                         std::uint64_t master_seed, std::uint64_t iteration, int count, int jobs,
                         std::vector<TrajectoryRecord>& out) {
    out.assign(static_cast<std::size_t>(count), TrajectoryRecord{});
    const std::uint64_t role = stream::kSamplingBase + iteration;
    auto worker = [&](int lo, int hi) {
        for (int j = lo; j < hi; ++j) {
            RngStream rng = make_stream(master_seed, role, static_cast<std::uint64_t>(j));
            out[static_cast<std::size_t>(j)] = sample_trajectory(params, lib, mask_cfg, gates, rng);
        }
    };
    const int workers = std::min(jobs, count);
    if (workers <= 1) {
        worker(0, count);
        return;
    }
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(workers));
    const int chunk = (count + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const int lo = w * chunk;
        const int hi = std::min(count, lo + chunk);
        if (lo >= hi) break;
        threads.emplace_back(worker, lo, hi);
    }
    for (auto& t : threads) t.join();
}

}  // namespace detail

// The NRSR search loop: sample a batch under the composed mask, score with
// the cached reward, keep the top-epsilon slice, take clipped-surrogate
// steps with the mixed path-entropy bonus, stop on exact recovery (verified
// on the held-out eval set) or on budget exhaustion.
//
// `inject_first_batch` is a test hook: the given traversals replace the
// head of the first sampled batch via teacher forcing.
inline RunReport train(const TrainerConfig& cfg, const TokenLibrary& lib,
                       const Dataset& reward_set, const Dataset& eval_set,
                       const GateVector& gates, std::uint64_t master_seed,
                       const IterationSink& sink = nullptr,
                       const std::vector<Traversal>& inject_first_batch = {}) {
    cfg.validate();
    const auto start_time = std::chrono::steady_clock::now();

    RunReport report;
    report.seed = master_seed;

    RngStream init_rng = make_stream(master_seed, stream::kPolicyInit);
    PolicyParams params = init_policy(lib, cfg.lstm_hidden, init_rng);
    Vector theta = params.to_vector();
    AdamState adam(theta.size(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);

    PpoConfig ppo;
    ppo.clip = cfg.use_ppo ? cfg.clip : 1e18;  // effectively unclipped
    ppo.alpha = cfg.use_path_entropy ? cfg.alpha : 0.0;
    ppo.beta = cfg.beta;
    ppo.gamma = cfg.gamma;
    const int update_epochs = cfg.use_ppo ? cfg.ppo_epochs : 1;

    const double recovery_reward = 1.0 / (1.0 + cfg.recovery_tol);
    const double eval_var = population_var(eval_set.y);
    if (eval_var <= 0.0) throw std::invalid_argument("train: eval set variance is zero");

    std::unordered_map<std::string, RewardEval> reward_cache;
    std::vector<TrajectoryRecord> batch;
    std::vector<double> rewards(static_cast<std::size_t>(cfg.batch_size));
    PolicyParams grad(params.obs_dim, params.hidden, params.n_tokens);

    try {
        for (std::uint64_t iteration = 0;; ++iteration) {
            detail::sample_batch(params, lib, cfg.mask, gates, master_seed, iteration,
                                 cfg.batch_size, cfg.jobs, batch);
            if (iteration == 0 && !inject_first_batch.empty()) {
                if (inject_first_batch.size() > batch.size()) {
                    throw std::invalid_argument("train: injected batch larger than batch_size");
                }
                for (std::size_t k = 0; k < inject_first_batch.size(); ++k) {
                    batch[k] = force_trajectory(params, lib, cfg.mask, gates,
                                                inject_first_batch[k]);
                }
            }

            // reward pass: every generated expression counts toward EEN, the
            // cache only saves re-evaluation
            for (std::size_t j = 0; j < batch.size(); ++j) {
                const std::string key = canonical_key(batch[j].traversal);
                auto it = reward_cache.find(key);
                if (it == reward_cache.end()) {
                    it = reward_cache.emplace(key, reward(batch[j].traversal, lib, reward_set))
                             .first;
                }
                batch[j].reward = it->second.reward;
                rewards[j] = it->second.reward;
                if (it->second.reward > report.best_reward) {
                    report.best_reward = it->second.reward;
                    report.best_traversal = batch[j].traversal;
                }
            }
            report.expressions_consumed += static_cast<long>(batch.size());
            report.unique_expressions = static_cast<long>(reward_cache.size());
            report.iterations = static_cast<long>(iteration) + 1;

            bool recovered_now = false;
            if (report.best_reward >= recovery_reward) {
                const EvalResult eval = evaluate(report.best_traversal, lib, eval_set.X);
                if (eval.valid) {
                    const double mse = (eval.predictions - eval_set.y.array()).square().mean();
                    const double nrmse_eval = std::sqrt(mse) / eval_set.sigma_y;
                    if (nrmse_eval <= cfg.recovery_tol) recovered_now = true;
                }
                if (!recovered_now) report.overfit_rejections += 1;
            }

            BatchStats stats = quantile_filter(rewards, cfg.risk_epsilon);
            std::vector<const TrajectoryRecord*> kept;
            std::vector<double> advantages;
            kept.reserve(stats.kept_indices.size());
            for (std::size_t idx : stats.kept_indices) {
                kept.push_back(&batch[idx]);
                advantages.push_back(batch[idx].reward - stats.baseline);
            }
            stats.hierarchical_entropy = hierarchical_entropy(kept, cfg.gamma);
            stats.path_entropy = path_entropy(kept);

            std::vector<const TrajectoryRecord*> all;
            all.reserve(batch.size());
            for (const auto& t : batch) all.push_back(&t);

            IterationLog log;
            log.iteration = static_cast<long>(iteration) + 1;
            log.een = report.expressions_consumed;
            log.uen = report.unique_expressions;
            log.baseline = stats.baseline;
            log.best_reward = report.best_reward;
            log.hierarchical_entropy = stats.hierarchical_entropy;
            log.path_entropy = stats.path_entropy;
            log.batch_path_entropy = path_entropy(all);

            if (recovered_now) {
                report.recovered = true;
                if (sink) sink(log);
                break;
            }
            if (report.expressions_consumed >= cfg.max_expressions) {
                if (sink) sink(log);
                break;
            }

            double last_loss = 0.0;
            for (int epoch = 0; epoch < update_epochs; ++epoch) {
                const PpoEvaluation eval =
                    ppo_loss_and_grad(params, kept, advantages, ppo, &grad);
                last_loss = eval.loss;
                Vector grad_vec = grad.to_vector();
                theta = params.to_vector();
                if (!adam_update(theta, grad_vec, adam)) {
                    throw std::runtime_error("train: non-finite policy gradient at iteration " +
                                             std::to_string(iteration + 1));
                }
                params.from_vector(theta);
            }
            log.loss = last_loss;
            if (sink) sink(log);
        }
    } catch (const std::exception& e) {
        report.status = std::string("aborted: ") + e.what();
    }

    if (is_complete(report.best_traversal, lib)) {
        const EvalResult eval = evaluate(report.best_traversal, lib, eval_set.X);
        report.eval_valid = eval.valid;
        if (eval.valid) {
            const double mse = (eval.predictions - eval_set.y.array()).square().mean();
            report.eval_nmse = mse / eval_var;
        } else {
            report.eval_nmse = 1.0;  // mean-predictor fallback for invalid fits
        }
    }

    report.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
    return report;
}

}  // namespace nrsr

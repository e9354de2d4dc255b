#pragma once

#include "nrsr/dataset.hpp"
#include "nrsr/ngm.hpp"
#include "nrsr/rng.hpp"
#include "nrsr/tokens.hpp"
#include "nrsr/trainer.hpp"
#include "nrsr/traversal.hpp"

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace nrsr {

// One Nguyen task: closed-form ground truth (may use sqrt/pow internally,
// which are not part of the search library), variable count, sampling range.
struct BenchmarkSpec {
    int id = 0;
    std::string name;
    std::function<double(const double*)> ground_truth;
    int variable_count = 1;
    double range_lo = -1.0;
    double range_hi = 1.0;
    bool resample_zero = false;  // x1^x2 needs x1 > 0
};

inline const std::vector<BenchmarkSpec>& nguyen_suite() {
    static const std::vector<BenchmarkSpec> suite = [] {
        auto poly = [](int degree) {
            return [degree](const double* x) {
                double sum = 0.0;
                double p = 1.0;
                for (int k = 1; k <= degree; ++k) {
                    p *= x[0];
                    sum += p;
                }
                return sum;
            };
        };
        std::vector<BenchmarkSpec> s;
        s.push_back({1, "Nguyen-1", poly(3), 1, -1.0, 1.0});
        s.push_back({2, "Nguyen-2", poly(4), 1, -1.0, 1.0});
        s.push_back({3, "Nguyen-3", poly(5), 1, -1.0, 1.0});
        s.push_back({4, "Nguyen-4", poly(6), 1, -1.0, 1.0});
        s.push_back({5, "Nguyen-5",
                     [](const double* x) { return std::sin(x[0] * x[0]) * std::cos(x[0]) - 1.0; },
                     1, -1.0, 1.0});
        s.push_back({6, "Nguyen-6",
                     [](const double* x) { return std::sin(x[0]) + std::sin(x[0] + x[0] * x[0]); },
                     1, -1.0, 1.0});
        s.push_back({7, "Nguyen-7",
                     [](const double* x) {
                         return std::log(x[0] + 1.0) + std::sin(x[0] * x[0] + 1.0);
                     },
                     1, -1.0, 1.0});
        s.push_back({8, "Nguyen-8", [](const double* x) { return std::sqrt(x[0]); }, 1, 0.0, 4.0});
        s.push_back({9, "Nguyen-9",
                     [](const double* x) { return std::sin(x[0]) + std::sin(x[1] * x[1]); }, 2,
                     0.0, 1.0});
        s.push_back({10, "Nguyen-10",
                     [](const double* x) { return 2.0 * std::sin(x[0]) * std::cos(x[1]); }, 2, 0.0,
                     1.0});
        s.push_back({11, "Nguyen-11",
                     [](const double* x) { return std::exp(x[1] * std::log(x[0])); }, 2, 0.0, 1.0,
                     true});
        s.push_back({12, "Nguyen-12",
                     [](const double* x) {
                         const double a = x[0] * x[0];
                         return a * a - a * x[0] + 0.5 * x[1] * x[1] - x[1];
                     },
                     2, 0.0, 1.0});
        return s;
    }();
    return suite;
}

inline const BenchmarkSpec& nguyen(int id) {
    for (const auto& spec : nguyen_suite()) {
        if (spec.id == id) return spec;
    }
    throw std::invalid_argument("unknown benchmark id " + std::to_string(id));
}

inline const BenchmarkSpec& nguyen(const std::string& name) {
    for (const auto& spec : nguyen_suite()) {
        if (spec.name == name) return spec;
    }
    throw std::invalid_argument("unknown benchmark " + name);
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

struct DatasetSizes {
    Eigen::Index ngm = 20000;
    Eigen::Index reward = 20;
    Eigen::Index eval = 20;
};

struct BenchmarkDatasets {
    Dataset ngm_set;
    Dataset reward_set;
    Dataset eval_set;
};

namespace detail {

inline Dataset make_one_dataset(const BenchmarkSpec& spec, Eigen::Index rows, int noise_count,
                                RngStream& rng) {
    const int n_real = spec.variable_count;
    const int n_cols = n_real + noise_count;
    Dataset data;
    data.X.resize(rows, n_cols);
    data.y.resize(rows);
    data.noise_column_mask.assign(static_cast<std::size_t>(n_cols), 0);
    for (int c = n_real; c < n_cols; ++c) {
        data.noise_column_mask[static_cast<std::size_t>(c)] = 1;
    }
    std::vector<double> x_row(static_cast<std::size_t>(n_real));
    for (int attempt = 0; attempt < 64; ++attempt) {
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (int c = 0; c < n_cols; ++c) {
                double v = rng.uniform(spec.range_lo, spec.range_hi);
                while (spec.resample_zero && c < n_real && v == 0.0) {
                    v = rng.uniform(spec.range_lo, spec.range_hi);
                }
                data.X(r, c) = v;
            }
            for (int c = 0; c < n_real; ++c) x_row[static_cast<std::size_t>(c)] = data.X(r, c);
            data.y[r] = spec.ground_truth(x_row.data());
        }
        data.sigma_y = population_std(data.y);
        if (data.sigma_y > 1e-12) return data;
        // degenerate target draw; redraw the whole split (not expected for
        // the Nguyen specs)
    }
    throw std::runtime_error("make_datasets: target variance stayed degenerate");
}

}  // namespace detail

// The three-way protocol: 20,000 rows for NGM training, 20 for the fitness
// reward, 20 for evaluation, from three disjoint RNG streams. Noise columns
// are i.i.d. draws from the same range, independent of y.
inline BenchmarkDatasets make_datasets(const BenchmarkSpec& spec, int noise_count,
                                       std::uint64_t master_seed,
                                       const DatasetSizes& sizes = {}) {
    if (noise_count < 0) throw std::invalid_argument("make_datasets: noise_count must be >= 0");
    if (sizes.ngm <= 0 || sizes.reward <= 0 || sizes.eval <= 0) {
        throw std::invalid_argument("make_datasets: sizes must be positive");
    }
    BenchmarkDatasets out;
    RngStream rng_ngm = make_stream(master_seed, stream::kData, 0);
    RngStream rng_reward = make_stream(master_seed, stream::kData, 1);
    RngStream rng_eval = make_stream(master_seed, stream::kData, 2);
    out.ngm_set = detail::make_one_dataset(spec, sizes.ngm, noise_count, rng_ngm);
    out.reward_set = detail::make_one_dataset(spec, sizes.reward, noise_count, rng_reward);
    out.eval_set = detail::make_one_dataset(spec, sizes.eval, noise_count, rng_eval);
    return out;
}

// Ground truth as a traversal over the search library, used by tests and by
// the recovery oracle. Constants are synthesized (1 = x/x), sqrt and pow
// targets have no library form and return nullopt.
inline std::optional<Traversal> ground_truth_traversal(int benchmark_id, const TokenLibrary& lib) {
    auto t = [&](const char* text) { return from_text(text, lib); };
    switch (benchmark_id) {
        case 1:
            return t("add add mul mul x1 x1 x1 mul x1 x1 x1");
        case 2:
            return t("add add add mul mul mul x1 x1 x1 x1 mul mul x1 x1 x1 mul x1 x1 x1");
        case 3:
            return t("add add add add mul mul mul mul x1 x1 x1 x1 x1 mul mul mul x1 x1 x1 x1 "
                     "mul mul x1 x1 x1 mul x1 x1 x1");
        case 4:
            // Horner form x(1+x(1+x(1+x(1+x(1+x))))) keeps the traversal
            // inside the 32-token search budget (1 synthesized as x/x)
            return t("mul x1 add div x1 x1 mul x1 add div x1 x1 mul x1 add div x1 x1 "
                     "mul x1 add div x1 x1 mul x1 add div x1 x1 x1");
        case 5:
            return t("sub mul sin mul x1 x1 cos x1 div x1 x1");
        case 6:
            return t("add sin x1 sin add x1 mul x1 x1");
        case 7:
            return t("add log add x1 div x1 x1 sin add mul x1 x1 div x1 x1");
        case 9:
            return t("add sin x1 sin mul x2 x2");
        case 10:
            return t("mul add sin x1 sin x1 cos x2");
        case 12:
            return t("sub add sub mul mul x1 x1 mul x1 x1 mul mul x1 x1 x1 "
                     "div mul x2 x2 add div x2 x2 div x2 x2 x2");
        default:
            return std::nullopt;  // Nguyen-8 (sqrt) and Nguyen-11 (pow)
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct NmseResult {
    double value = 1.0;
    bool valid = false;
};

// Mean squared error over the evaluation set divided by the population
// variance of its targets. Invalid evaluations are flagged, not averaged.
inline NmseResult nmse(const Traversal& traversal, const TokenLibrary& lib,
                       const Dataset& eval_set) {
    const double var = population_var(eval_set.y);
    if (var <= 0.0) throw std::invalid_argument("nmse: eval variance is zero");
    const EvalResult eval = evaluate(traversal, lib, eval_set.X);
    if (!eval.valid) return {};
    NmseResult out;
    out.value = (eval.predictions - eval_set.y.array()).square().mean() / var;
    out.valid = true;
    return out;
}

struct AggregateMetrics {
    double recovery_rate = 0.0;
    double mean_een = 0.0;
    double mean_nmse = 0.0;  // over runs with a valid eval fit
    long uen_total = 0;      // successful runs only, per the EER definition
    long een_total = 0;
    double eer = 0.0;
    int runs = 0;
    int failures = 0;        // aborted runs, excluded from the means
    int invalid_nmse = 0;
};

inline AggregateMetrics aggregate_reports(const std::vector<RunReport>& reports) {
    AggregateMetrics agg;
    int recovered = 0;
    int nmse_count = 0;
    for (const RunReport& r : reports) {
        if (r.status != "ok") {
            agg.failures += 1;
            continue;
        }
        agg.runs += 1;
        recovered += r.recovered ? 1 : 0;
        agg.mean_een += static_cast<double>(r.expressions_consumed);
        agg.een_total += r.expressions_consumed;
        if (r.recovered) agg.uen_total += r.unique_expressions;
        if (r.eval_valid) {
            agg.mean_nmse += r.eval_nmse;
            nmse_count += 1;
        } else {
            agg.invalid_nmse += 1;
        }
    }
    if (agg.runs > 0) {
        agg.recovery_rate = static_cast<double>(recovered) / agg.runs;
        agg.mean_een /= agg.runs;
    }
    if (nmse_count > 0) agg.mean_nmse /= nmse_count;
    if (agg.een_total > 0) {
        agg.eer = static_cast<double>(agg.uen_total) / static_cast<double>(agg.een_total);
    }
    return agg;
}

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

struct SuiteConfig {
    TrainerConfig trainer;
    NgmHyper ngm;
    bool use_ngm = true;
    int jobs = 1;  // concurrent (benchmark, seed) runs
};

struct SuiteRun {
    std::string benchmark;
    int noise_count = 0;
    std::uint64_t seed = 0;
    RunReport report;
};

// One full (benchmark, seed) experiment: datasets -> NGM gates -> RL search.
inline RunReport run_single(const BenchmarkSpec& spec, int noise_count, std::uint64_t seed,
                            const TrainerConfig& trainer_cfg, const NgmHyper& ngm_hyper,
                            bool use_ngm, const IterationSink& sink = nullptr,
                            GateVector* gates_out = nullptr) {
    const BenchmarkDatasets data = make_datasets(spec, noise_count, seed);
    const int n_vars = static_cast<int>(data.reward_set.cols());
    GateVector gates = GateVector::all_ones(n_vars);
    if (use_ngm) {
        RngStream ngm_rng = make_stream(seed, stream::kNgm);
        gates = train_ngm(data.ngm_set, ngm_hyper, ngm_rng);
    }
    if (gates_out) *gates_out = gates;
    const TokenLibrary lib = standard_library(n_vars);
    return train(trainer_cfg, lib, data.reward_set, data.eval_set, gates, seed, sink);
}

// Multi-seed orchestration with deterministic seed-ordered aggregation.
inline std::vector<SuiteRun> run_suite(const std::vector<int>& benchmark_ids, int noise_count,
                                       const std::vector<std::uint64_t>& seeds,
                                       const SuiteConfig& cfg) {
    struct Job {
        int benchmark_id;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (int id : benchmark_ids) {
        for (std::uint64_t seed : seeds) jobs.push_back({id, seed});
    }
    std::vector<SuiteRun> runs(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            const BenchmarkSpec& spec = nguyen(jobs[i].benchmark_id);
            SuiteRun& run = runs[i];
            run.benchmark = spec.name;
            run.noise_count = noise_count;
            run.seed = jobs[i].seed;
            run.report = run_single(spec, noise_count, jobs[i].seed, cfg.trainer, cfg.ngm,
                                    cfg.use_ngm);
        }
    };
    const int workers = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(jobs.size())));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return runs;
}

// ---------------------------------------------------------------------------
// NGM filtration accuracy
// ---------------------------------------------------------------------------

struct FilterAccuracy {
    int perfect = 0;
    int total = 0;
    double rate() const { return total ? static_cast<double>(perfect) / total : 0.0; }
};

// A gate is a perfect filter iff it keeps exactly the true variables and
// drops exactly the noise columns. Fallback gates count as imperfect
// whenever noise is present.
inline bool is_perfect_filter(const GateVector& gates, int variable_count, int noise_count) {
    if (static_cast<int>(gates.binary.size()) != variable_count + noise_count) {
        throw std::invalid_argument("is_perfect_filter: gate length mismatch");
    }
    if (gates.fallback_applied) return noise_count == 0;
    for (int j = 0; j < variable_count + noise_count; ++j) {
        const bool keep = gates.binary[static_cast<std::size_t>(j)] != 0;
        if (j < variable_count && !keep) return false;
        if (j >= variable_count && keep) return false;
    }
    return true;
}

inline FilterAccuracy ngm_accuracy_suite(const std::vector<int>& benchmark_ids, int noise_count,
                                         const std::vector<std::uint64_t>& seeds,
                                         const NgmHyper& hyper, int jobs = 1) {
    struct Job {
        int benchmark_id;
        std::uint64_t seed;
    };
    std::vector<Job> work;
    for (int id : benchmark_ids) {
        for (std::uint64_t seed : seeds) work.push_back({id, seed});
    }
    std::vector<std::uint8_t> perfect(work.size(), 0);
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= work.size()) return;
            const BenchmarkSpec& spec = nguyen(work[i].benchmark_id);
            const BenchmarkDatasets data = make_datasets(spec, noise_count, work[i].seed);
            RngStream rng = make_stream(work[i].seed, stream::kNgm);
            const GateVector gates = train_ngm(data.ngm_set, hyper, rng);
            perfect[i] = is_perfect_filter(gates, spec.variable_count, noise_count) ? 1 : 0;
        }
    };
    const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(work.size())));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    FilterAccuracy acc;
    acc.total = static_cast<int>(work.size());
    for (auto p : perfect) acc.perfect += p ? 1 : 0;
    return acc;
}

}  // namespace nrsr

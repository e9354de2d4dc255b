#pragma once

#include "nrsr/dataset.hpp"
#include "nrsr/gates.hpp"
#include "nrsr/numerics.hpp"
#include "nrsr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace nrsr {

struct NgmHyper {
    double lambda_l0 = 0.25;
    double l2_weight = 1e-5;
    double learning_rate = 1e-3;
    int epochs = 20;
    int batch_size = 256;
    double train_ratio = 0.8;
    double otsu_scale = 1.05;
    double adam_beta1 = 0.99;
    double adam_beta2 = 0.999;
    int hidden_size = 128;

    void validate() const {
        if (lambda_l0 <= 0 || l2_weight <= 0 || learning_rate <= 0 || epochs <= 0 ||
            batch_size <= 0 || otsu_scale <= 0 || hidden_size <= 0) {
            throw std::invalid_argument("NgmHyper: all values must be positive");
        }
        if (!(train_ratio > 0.0 && train_ratio < 1.0)) {
            throw std::invalid_argument("NgmHyper: train_ratio must lie in (0,1)");
        }
    }
};

// Gating layer -> dense(n, h) + batchnorm + relu -> dense(h, h) + batchnorm
// + relu -> scalar output. Running stats are buffers, not trainables.
struct NgmParams {
    int n_in = 0;
    int hidden = 0;
    GateParams gate;
    Matrix W1, W2;       // h x n, h x h
    Vector b1, b2;       // h
    Vector gamma1, delta1, gamma2, delta2;  // batchnorm scale/shift
    Vector w3;           // h
    Vector b3;           // size 1
    Vector running_mean1, running_var1, running_mean2, running_var2;
    double bn_eps = 1e-5;
    double bn_momentum = 0.9;  // keep fraction for running stats

    NgmParams() = default;
    NgmParams(int n, int h)
        : n_in(n),
          hidden(h),
          gate(n),
          W1(Matrix::Zero(h, n)),
          W2(Matrix::Zero(h, h)),
          b1(Vector::Zero(h)),
          b2(Vector::Zero(h)),
          gamma1(Vector::Ones(h)),
          delta1(Vector::Zero(h)),
          gamma2(Vector::Ones(h)),
          delta2(Vector::Zero(h)),
          w3(Vector::Zero(h)),
          b3(Vector::Zero(1)),
          running_mean1(Vector::Zero(h)),
          running_var1(Vector::Ones(h)),
          running_mean2(Vector::Zero(h)),
          running_var2(Vector::Ones(h)) {}

    Eigen::Index param_count() const {
        return gate.log_alpha.size() + W1.size() + b1.size() + gamma1.size() + delta1.size() +
               W2.size() + b2.size() + gamma2.size() + delta2.size() + w3.size() + b3.size();
    }

    template <typename Self, typename F>
    static void for_each_block(Self& p, F&& f) {
        f(p.gate.log_alpha);
        f(p.W1);
        f(p.b1);
        f(p.gamma1);
        f(p.delta1);
        f(p.W2);
        f(p.b2);
        f(p.gamma2);
        f(p.delta2);
        f(p.w3);
        f(p.b3);
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
        if (v.size() != param_count()) throw std::invalid_argument("NgmParams: bad vector size");
        Eigen::Index off = 0;
        for_each_block(*this, [&](auto& block) {
            std::copy(v.data() + off, v.data() + off + block.size(), block.data());
            off += block.size();
        });
    }
};

// He-initialized dense weights, gates biased open (log_alpha ~ N(1, 0.1)) so
// the regression can identify relevant variables before pruning.
inline NgmParams init_ngm(int n_in, int hidden, RngStream& rng) {
    NgmParams p(n_in, hidden);
    for (Eigen::Index j = 0; j < p.gate.log_alpha.size(); ++j) {
        p.gate.log_alpha[j] = rng.normal(1.0, 0.1);
    }
    const double s1 = std::sqrt(2.0 / static_cast<double>(n_in));
    for (Eigen::Index i = 0; i < p.W1.size(); ++i) p.W1.data()[i] = rng.normal(0.0, s1);
    const double s2 = std::sqrt(2.0 / static_cast<double>(hidden));
    for (Eigen::Index i = 0; i < p.W2.size(); ++i) p.W2.data()[i] = rng.normal(0.0, s2);
    for (Eigen::Index i = 0; i < p.w3.size(); ++i) p.w3[i] = rng.normal(0.0, s2);
    return p;
}

enum class NgmMode { Train, Eval };

namespace detail {

struct BnCache {
    Matrix xhat;
    Vector inv_std;
    Vector batch_mean;
    Vector batch_var;
};

inline Matrix bn_forward_train(const Matrix& a, const Vector& gamma, const Vector& delta,
                               double eps, BnCache& cache) {
    const double m = static_cast<double>(a.rows());
    cache.batch_mean = a.colwise().mean();
    Matrix centered = a.rowwise() - cache.batch_mean.transpose();
    cache.batch_var = centered.array().square().colwise().mean();
    cache.inv_std = (cache.batch_var.array() + eps).rsqrt();
    cache.xhat = centered.array().rowwise() * cache.inv_std.transpose().array();
    (void)m;
    return (cache.xhat.array().rowwise() * gamma.transpose().array()).rowwise() +
           delta.transpose().array();
}

inline Matrix bn_forward_eval(const Matrix& a, const Vector& gamma, const Vector& delta,
                              const Vector& running_mean, const Vector& running_var, double eps) {
    Vector inv_std = (running_var.array() + eps).rsqrt();
    Matrix xhat = (a.rowwise() - running_mean.transpose()).array().rowwise() *
                  inv_std.transpose().array();
    return (xhat.array().rowwise() * gamma.transpose().array()).rowwise() +
           delta.transpose().array();
}

// Standard batchnorm backward through the batch statistics.
inline Matrix bn_backward(const Matrix& dy, const Vector& gamma, const BnCache& cache,
                          Vector& dgamma, Vector& ddelta) {
    const double m = static_cast<double>(dy.rows());
    dgamma = (dy.array() * cache.xhat.array()).colwise().sum();
    ddelta = dy.colwise().sum();
    Matrix dxhat = dy.array().rowwise() * gamma.transpose().array();
    Vector sum_dxhat = dxhat.colwise().sum();
    Vector sum_dxhat_xhat = (dxhat.array() * cache.xhat.array()).colwise().sum();
    Matrix da = (dxhat * m).rowwise() - sum_dxhat.transpose();
    da -= cache.xhat.array().rowwise() * sum_dxhat_xhat.transpose().array();
    da.array().rowwise() *= (cache.inv_std / m).transpose().array();
    return da;
}

struct NgmCache {
    Matrix Xp, A1, Y1, H1, A2, Y2, H2;
    BnCache bn1, bn2;
    Vector out;
};

inline Vector ngm_forward_impl(const NgmParams& p, const Vector& z, const Matrix& X,
                               NgmMode mode, NgmCache* cache) {
    if (X.cols() != p.n_in) throw std::invalid_argument("ngm_forward: column count mismatch");
    if (z.size() != p.n_in) throw std::invalid_argument("ngm_forward: gate length mismatch");
    if (mode == NgmMode::Train && X.rows() < 2) {
        throw std::invalid_argument("ngm_forward: train mode needs batch size >= 2");
    }
    NgmCache local;
    NgmCache& c = cache ? *cache : local;

    c.Xp = X.array().rowwise() * z.transpose().array();
    c.A1 = (c.Xp * p.W1.transpose()).rowwise() + p.b1.transpose();
    c.Y1 = (mode == NgmMode::Train)
               ? bn_forward_train(c.A1, p.gamma1, p.delta1, p.bn_eps, c.bn1)
               : bn_forward_eval(c.A1, p.gamma1, p.delta1, p.running_mean1, p.running_var1,
                                 p.bn_eps);
    c.H1 = c.Y1.cwiseMax(0.0);
    c.A2 = (c.H1 * p.W2.transpose()).rowwise() + p.b2.transpose();
    c.Y2 = (mode == NgmMode::Train)
               ? bn_forward_train(c.A2, p.gamma2, p.delta2, p.bn_eps, c.bn2)
               : bn_forward_eval(c.A2, p.gamma2, p.delta2, p.running_mean2, p.running_var2,
                                 p.bn_eps);
    c.H2 = c.Y2.cwiseMax(0.0);
    c.out = (c.H2 * p.w3).array() + p.b3[0];
    return c.out;
}

}  // namespace detail

// Gated forward pass. Train mode normalizes with batch statistics and folds
// them into the running buffers; eval mode is pure.
inline Vector ngm_forward(NgmParams& params, const Vector& gates, const Matrix& batch,
                          NgmMode mode) {
    detail::NgmCache cache;
    Vector out = detail::ngm_forward_impl(params, gates, batch, mode, &cache);
    if (mode == NgmMode::Train) {
        const double keep = params.bn_momentum;
        params.running_mean1 = keep * params.running_mean1 + (1 - keep) * cache.bn1.batch_mean;
        params.running_var1 = keep * params.running_var1 + (1 - keep) * cache.bn1.batch_var;
        params.running_mean2 = keep * params.running_mean2 + (1 - keep) * cache.bn2.batch_mean;
        params.running_var2 = keep * params.running_var2 + (1 - keep) * cache.bn2.batch_var;
    }
    return out;
}

inline Vector ngm_forward(const NgmParams& params, const Vector& gates, const Matrix& batch) {
    return detail::ngm_forward_impl(params, gates, batch, NgmMode::Eval, nullptr);
}

// MSE + lambda * sum_j P(Z_j != 0) + l2 * ||dense weights||^2.
inline double ngm_loss(const Vector& pred, const Vector& targets, const NgmParams& params,
                       const NgmHyper& hyper) {
    if (pred.size() != targets.size()) throw std::invalid_argument("ngm_loss: shape mismatch");
    const double mse = (pred - targets).squaredNorm() / static_cast<double>(pred.size());
    const double l0 = prob_nonzero(params.gate).sum();
    const double l2 = params.W1.squaredNorm() + params.W2.squaredNorm() + params.w3.squaredNorm();
    return mse + hyper.lambda_l0 * l0 + hyper.l2_weight * l2;
}

// Full train-mode loss with analytic gradients for every trainable block,
// including log_alpha through both the reparameterized sample path and the
// L0 penalty.
inline double ngm_loss_and_grad(const NgmParams& params, const Matrix& X, const Vector& y,
                                const Vector& uniforms, const NgmHyper& hyper, Vector& grad_out,
                                detail::NgmCache* cache_out = nullptr) {
    const GateSample gs = sample_gates_with_grad(params.gate, uniforms);
    detail::NgmCache local;
    detail::NgmCache& c = cache_out ? *cache_out : local;
    detail::ngm_forward_impl(params, gs.z, X, NgmMode::Train, &c);
    const double loss = ngm_loss(c.out, y, params, hyper);

    const double m = static_cast<double>(X.rows());
    NgmParams g(params.n_in, params.hidden);  // gradient holder; every block assigned below

    Vector dout = 2.0 * (c.out - y) / m;
    g.w3 = c.H2.transpose() * dout + 2.0 * hyper.l2_weight * params.w3;
    g.b3[0] = dout.sum();
    Matrix dH2 = dout * params.w3.transpose();
    Matrix dY2 = (c.Y2.array() > 0.0).select(dH2, 0.0);
    Matrix dA2 = detail::bn_backward(dY2, params.gamma2, c.bn2, g.gamma2, g.delta2);
    g.W2 = dA2.transpose() * c.H1 + 2.0 * hyper.l2_weight * params.W2;
    g.b2 = dA2.colwise().sum();
    Matrix dH1 = dA2 * params.W2;
    Matrix dY1 = (c.Y1.array() > 0.0).select(dH1, 0.0);
    Matrix dA1 = detail::bn_backward(dY1, params.gamma1, c.bn1, g.gamma1, g.delta1);
    g.W1 = dA1.transpose() * c.Xp + 2.0 * hyper.l2_weight * params.W1;
    g.b1 = dA1.colwise().sum();

    Matrix dXp = dA1 * params.W1;
    Vector dz = (dXp.array() * X.array()).colwise().sum();
    Vector p = prob_nonzero(params.gate);
    g.gate.log_alpha = dz.cwiseProduct(gs.d_dlog_alpha) +
                       hyper.lambda_l0 * p.cwiseProduct(Vector::Ones(p.size()) - p);

    grad_out = g.to_vector();
    return loss;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

// Trains on a seeded shuffle split (leading train_ratio fraction), records
// P(Z != 0) at the end of every epoch, averages the per-epoch vectors, then
// binarizes with a scaled Otsu threshold. An all-zero binarization falls
// back to all-ones so no input variable is filtered out.
inline GateVector train_ngm(const Dataset& data, const NgmHyper& hyper, RngStream& rng) {
    hyper.validate();
    const Eigen::Index m = data.rows();
    const int n = static_cast<int>(data.cols());
    const Eigen::Index m_train = static_cast<Eigen::Index>(
        std::floor(static_cast<double>(m) * hyper.train_ratio));
    if (m_train < 2 || m - m_train < 2) {
        throw std::invalid_argument("train_ngm: need >= 2 rows per split");
    }

    std::vector<Eigen::Index> perm(static_cast<std::size_t>(m));
    std::iota(perm.begin(), perm.end(), 0);
    for (Eigen::Index i = m - 1; i > 0; --i) {
        const auto j = static_cast<Eigen::Index>(rng.uniform_int(static_cast<std::uint64_t>(i + 1)));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    std::vector<Eigen::Index> train_idx(perm.begin(), perm.begin() + m_train);

    NgmParams params = init_ngm(n, hyper.hidden_size, rng);
    AdamState adam(params.param_count(), hyper.learning_rate, hyper.adam_beta1, hyper.adam_beta2);

    Vector prob_sum = Vector::Zero(n);
    Matrix bx;
    Vector by, uniforms(n), grad;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        for (std::size_t i = train_idx.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(rng.uniform_int(i));
            std::swap(train_idx[i - 1], train_idx[j]);
        }
        for (std::size_t start = 0; start < train_idx.size();
             start += static_cast<std::size_t>(hyper.batch_size)) {
            const std::size_t count =
                std::min(static_cast<std::size_t>(hyper.batch_size), train_idx.size() - start);
            if (count < 2) continue;  // batchnorm needs >= 2 rows
            bx.resize(static_cast<Eigen::Index>(count), n);
            by.resize(static_cast<Eigen::Index>(count));
            for (std::size_t r = 0; r < count; ++r) {
                bx.row(static_cast<Eigen::Index>(r)) = data.X.row(train_idx[start + r]);
                by[static_cast<Eigen::Index>(r)] = data.y[train_idx[start + r]];
            }
            for (Eigen::Index k = 0; k < n; ++k) uniforms[k] = rng.uniform_open();

            detail::NgmCache cache;
            const double loss = ngm_loss_and_grad(params, bx, by, uniforms, hyper, grad, &cache);
            if (!std::isfinite(loss)) {
                throw std::runtime_error("train_ngm: non-finite loss at epoch " +
                                         std::to_string(epoch));
            }
            const double keep = params.bn_momentum;
            params.running_mean1 = keep * params.running_mean1 + (1 - keep) * cache.bn1.batch_mean;
            params.running_var1 = keep * params.running_var1 + (1 - keep) * cache.bn1.batch_var;
            params.running_mean2 = keep * params.running_mean2 + (1 - keep) * cache.bn2.batch_mean;
            params.running_var2 = keep * params.running_var2 + (1 - keep) * cache.bn2.batch_var;

            Vector theta = params.to_vector();
            if (!adam_update(theta, grad, adam)) {
                throw std::runtime_error("train_ngm: non-finite gradient");
            }
            params.from_vector(theta);
        }
        prob_sum += prob_nonzero(params.gate);
    }

    GateVector result;
    result.probabilities = prob_sum / static_cast<double>(hyper.epochs);
    const OtsuResult otsu = otsu_threshold(result.probabilities);
    result.threshold_used = otsu.threshold * hyper.otsu_scale;
    result.binary.assign(static_cast<std::size_t>(n), 0);
    if (!otsu.degenerate) {
        for (Eigen::Index j = 0; j < result.probabilities.size(); ++j) {
            result.binary[static_cast<std::size_t>(j)] =
                result.probabilities[j] > result.threshold_used ? 1 : 0;
        }
    }
    if (result.kept_count() == 0) {
        result.binary.assign(static_cast<std::size_t>(n), 1);
        result.fallback_applied = true;
    }
    return result;
}

}  // namespace nrsr

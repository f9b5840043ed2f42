#pragma once

// Test-only reference implementations, deliberately independent of the
// library code paths they are used to check.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "mcglab/metrics.hpp"
#include "mcglab/policy.hpp"
#include "mcglab/training.hpp"

namespace oracles {

// Direct-summation mutual information over a counts matrix: separate passes
// for the marginals and the joint, accumulation in long double.
inline double mi_direct(const std::vector<long long>& counts, int rows, int cols) {
    long long total = 0;
    for (long long c : counts) total += c;
    if (total <= 0) throw std::invalid_argument("mi_direct: empty counts");
    std::vector<long double> pm(rows, 0.0L), pa(cols, 0.0L);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) {
            pm[i] += counts[static_cast<size_t>(i) * cols + j];
            pa[j] += counts[static_cast<size_t>(i) * cols + j];
        }
    for (auto& x : pm) x /= total;
    for (auto& x : pa) x /= total;
    long double mi = 0.0L;
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) {
            const long long c = counts[static_cast<size_t>(i) * cols + j];
            if (c == 0) continue;
            const long double p = static_cast<long double>(c) / total;
            mi += p * std::log(static_cast<double>(p / (pm[i] * pa[j])));
        }
    return static_cast<double>(mi < 0.0L ? 0.0L : mi);
}

// Central finite difference of a scalar function of one parameter tensor
// entry.
inline double central_diff(const std::function<double()>& f, double& param, double step) {
    const double saved = param;
    param = saved + step;
    const double up = f();
    param = saved - step;
    const double down = f();
    param = saved;
    return (up - down) / (2.0 * step);
}

// The composite per-round objective as a plain scalar function of the
// parameters, with the advantages frozen (the policy terms treat the
// baseline as a constant). Matches the gradient seeds produced by
// round_loss.
inline double composite_surrogate_loss(const mcglab::PolicyParams& params,
                                       const std::vector<double>& msg_obs,
                                       const std::vector<double>& act_obs, int msg, int action,
                                       double ret, const mcglab::LearnConfig& cfg,
                                       double frozen_adv_a, double frozen_adv_c, bool train_comm) {
    mcglab::FwdCache act_cache, msg_cache;
    mcglab::forward_cached(params, act_obs, act_cache);
    const std::vector<double> pa = mcglab::softmax(act_cache.action_logits);
    double loss = -std::log(pa[static_cast<size_t>(action)]) * frozen_adv_a;
    loss += cfg.lambda_ent * -mcglab::entropy_nats(pa);
    const double adv_v = ret - act_cache.value;
    loss += cfg.lambda_v * adv_v * adv_v;
    if (train_comm) {
        mcglab::forward_cached(params, msg_obs, msg_cache);
        const std::vector<double> pc = mcglab::softmax(msg_cache.comm_logits);
        loss += cfg.lambda_c * -std::log(pc[static_cast<size_t>(msg)]) * frozen_adv_c;
        loss += cfg.lambda_ent * -mcglab::entropy_nats(pc);
    }
    return loss;
}

// Full symmetric-matrix eigendecomposition by cyclic Jacobi rotations.
// Returns eigenvalues sorted descending.
inline std::vector<double> jacobi_eigenvalues(std::vector<double> a, int n) {
    auto at = [&](int i, int j) -> double& { return a[static_cast<size_t>(i) * n + j]; };
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
        if (off < 1e-24) break;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                if (std::abs(at(p, q)) < 1e-300) continue;
                const double theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = at(k, p), akq = at(k, q);
                    at(k, p) = c * akp - s * akq;
                    at(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = at(p, k), aqk = at(q, k);
                    at(p, k) = c * apk - s * aqk;
                    at(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> eig(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) eig[static_cast<size_t>(i)] = at(i, i);
    std::sort(eig.begin(), eig.end(), std::greater<double>());
    return eig;
}

}  // namespace oracles

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcglab/env.hpp"
#include "mcglab/rng.hpp"

namespace mcglab {

enum class ArchTag { shared, separate_comm };

inline const char* to_string(ArchTag t) {
    return t == ArchTag::shared ? "shared" : "separate_comm";
}

// All weights of one agent: a two-layer relu trunk plus linear heads for
// action, communication and value. Under separate_comm a second independent
// trunk (cw*, cb*) feeds the comm head and the main trunk never sees
// communication gradients.
//
// Shapes (row-major, rows = outputs):
//   w1 [hidden x input]   b1 [hidden]
//   w2 [hidden x hidden]  b2 [hidden]
//   wa [n x hidden]       ba [n]
//   wc [M x hidden]       bc [M]
//   wv [hidden]           bv [1]
struct PolicyParams {
    int input_dim = 0;
    int hidden = 0;
    int n_actions = 0;
    int n_messages = 0;
    ArchTag arch = ArchTag::shared;

    std::vector<double> w1, b1, w2, b2;
    std::vector<double> wa, ba, wc, bc, wv, bv;
    std::vector<double> cw1, cb1, cw2, cb2;  // separate_comm trunk only
};

// Gradients mirror the parameter layout exactly.
using ParamGrads = PolicyParams;

struct TensorRef {
    const char* name;
    std::vector<double> PolicyParams::*member;
};

inline const std::vector<TensorRef>& tensor_refs(ArchTag arch) {
    static const std::vector<TensorRef> shared = {
        {"trunk.w1", &PolicyParams::w1}, {"trunk.b1", &PolicyParams::b1},
        {"trunk.w2", &PolicyParams::w2}, {"trunk.b2", &PolicyParams::b2},
        {"action.w", &PolicyParams::wa}, {"action.b", &PolicyParams::ba},
        {"comm.w", &PolicyParams::wc},   {"comm.b", &PolicyParams::bc},
        {"value.w", &PolicyParams::wv},  {"value.b", &PolicyParams::bv},
    };
    static const std::vector<TensorRef> separate = {
        {"trunk.w1", &PolicyParams::w1},      {"trunk.b1", &PolicyParams::b1},
        {"trunk.w2", &PolicyParams::w2},      {"trunk.b2", &PolicyParams::b2},
        {"action.w", &PolicyParams::wa},      {"action.b", &PolicyParams::ba},
        {"comm.w", &PolicyParams::wc},        {"comm.b", &PolicyParams::bc},
        {"value.w", &PolicyParams::wv},       {"value.b", &PolicyParams::bv},
        {"comm_trunk.w1", &PolicyParams::cw1}, {"comm_trunk.b1", &PolicyParams::cb1},
        {"comm_trunk.w2", &PolicyParams::cw2}, {"comm_trunk.b2", &PolicyParams::cb2},
    };
    return arch == ArchTag::shared ? shared : separate;
}

inline void resize_tensors(PolicyParams& p) {
    const size_t d = static_cast<size_t>(p.input_dim);
    const size_t h = static_cast<size_t>(p.hidden);
    p.w1.assign(h * d, 0.0);
    p.b1.assign(h, 0.0);
    p.w2.assign(h * h, 0.0);
    p.b2.assign(h, 0.0);
    p.wa.assign(static_cast<size_t>(p.n_actions) * h, 0.0);
    p.ba.assign(static_cast<size_t>(p.n_actions), 0.0);
    p.wc.assign(static_cast<size_t>(p.n_messages) * h, 0.0);
    p.bc.assign(static_cast<size_t>(p.n_messages), 0.0);
    p.wv.assign(h, 0.0);
    p.bv.assign(1, 0.0);
    if (p.arch == ArchTag::separate_comm) {
        p.cw1.assign(h * d, 0.0);
        p.cb1.assign(h, 0.0);
        p.cw2.assign(h * h, 0.0);
        p.cb2.assign(h, 0.0);
    }
}

inline ParamGrads make_zero_grads(const PolicyParams& p) {
    ParamGrads g;
    g.input_dim = p.input_dim;
    g.hidden = p.hidden;
    g.n_actions = p.n_actions;
    g.n_messages = p.n_messages;
    g.arch = p.arch;
    resize_tensors(g);
    return g;
}

inline void zero_grads(ParamGrads& g) {
    for (const auto& t : tensor_refs(g.arch)) {
        auto& v = g.*(t.member);
        std::fill(v.begin(), v.end(), 0.0);
    }
}

namespace detail {

inline void glorot_fill(std::vector<double>& w, int fan_out, int fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& x : w) x = (2.0 * rng.uniform() - 1.0) * bound;
}

inline void fanin_fill(std::vector<double>& w, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& x : w) x = (2.0 * rng.uniform() - 1.0) * bound;
}

inline void he_fill(std::vector<double>& w, int fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& x : w) x = (2.0 * rng.uniform() - 1.0) * bound;
}

// Sample a Gaussian matrix and orthonormalize its rows by modified
// Gram-Schmidt, then scale by `gain`. rows <= cols expected for full rank.
inline void orthogonal_fill(std::vector<double>& w, int rows, int cols, double gain, Rng& rng) {
    for (double& x : w) x = rng.gaussian(0.0, 1.0);
    for (int i = 0; i < rows; ++i) {
        double* wi = w.data() + static_cast<size_t>(i) * cols;
        for (int k = 0; k < i; ++k) {
            const double* wk = w.data() + static_cast<size_t>(k) * cols;
            double dot = 0;
            for (int j = 0; j < cols; ++j) dot += wi[j] * wk[j];
            for (int j = 0; j < cols; ++j) wi[j] -= dot * wk[j];
        }
        double norm = 0;
        for (int j = 0; j < cols; ++j) norm += wi[j] * wi[j];
        norm = std::sqrt(norm);
        if (norm < 1e-12) continue;
        for (int j = 0; j < cols; ++j) wi[j] /= norm;
    }
    for (double& x : w) x *= gain;
}

}  // namespace detail

// Uniform fan-in init on weights and biases, one layer at a time in a fixed
// draw order: (w1, b1), (w2, b2), (wa, ba), (wc, bc), (wv, bv), then the comm
// trunk when present.
inline PolicyParams init_policy(int input_dim, int hidden, int n_actions, int n_messages,
                                ArchTag arch, Rng& rng) {
    PolicyParams p;
    p.input_dim = input_dim;
    p.hidden = hidden;
    p.n_actions = n_actions;
    p.n_messages = n_messages;
    p.arch = arch;
    resize_tensors(p);
    detail::orthogonal_fill(p.w1, hidden, input_dim, std::sqrt(2.0), rng);
    detail::fanin_fill(p.b1, input_dim, rng);
    detail::orthogonal_fill(p.w2, hidden, hidden, std::sqrt(2.0), rng);
    detail::fanin_fill(p.b2, hidden, rng);
    detail::he_fill(p.wa, hidden, rng);
    detail::fanin_fill(p.ba, hidden, rng);
    detail::he_fill(p.wc, hidden, rng);
    detail::fanin_fill(p.bc, hidden, rng);
    detail::fanin_fill(p.wv, hidden, rng);
    detail::fanin_fill(p.bv, hidden, rng);
    if (arch == ArchTag::separate_comm) {
        detail::fanin_fill(p.cw1, input_dim, rng);
        detail::fanin_fill(p.cb1, input_dim, rng);
        detail::fanin_fill(p.cw2, hidden, rng);
        detail::fanin_fill(p.cb2, hidden, rng);
    }
    return p;
}

// Hidden width used throughout the experiments, by matrix size.
inline int hidden_width_for(int n_actions) {
    switch (n_actions) {
        case 2: return 40;
        case 4: return 60;
        case 8: return 100;
        default:
            throw std::invalid_argument("hidden_width_for: no configured width for n_actions = " +
                                        std::to_string(n_actions));
    }
}

struct NetOutputs {
    std::vector<double> action_logits;
    std::vector<double> comm_logits;
    double value = 0.0;
    std::vector<double> hidden;       // main trunk, post-tanh layer 2
    std::vector<double> comm_hidden;  // separate comm trunk, empty when shared
};

// Forward-pass scratch kept by trainers so backward can reuse activations
// without reallocating.
struct FwdCache {
    std::vector<double> obs;
    std::vector<double> h1, h2;    // main trunk activations
    std::vector<double> ch1, ch2;  // comm trunk activations (separate_comm)
    std::vector<double> action_logits, comm_logits;
    double value = 0.0;
};

namespace detail {

// y = W x + b, W is [rows x cols] row-major.
inline void affine(const std::vector<double>& w, const std::vector<double>& b, const double* x,
                   int rows, int cols, double* y) {
    const double* wp = w.data();
    for (int i = 0; i < rows; ++i) {
        double acc = b[static_cast<size_t>(i)];
        const double* row = wp + static_cast<size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) acc += row[j] * x[j];
        y[i] = acc;
    }
}

inline void tanh_inplace(double* x, int n) {
    for (int i = 0; i < n; ++i) x[i] = std::tanh(x[i]);
}

inline void relu_inplace(double* x, int n) {
    for (int i = 0; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

inline void trunk_forward(const std::vector<double>& w1, const std::vector<double>& b1,
                          const std::vector<double>& w2, const std::vector<double>& b2,
                          const double* x, int input_dim, int hidden,
                          std::vector<double>& h1, std::vector<double>& h2) {
    h1.resize(static_cast<size_t>(hidden));
    h2.resize(static_cast<size_t>(hidden));
    affine(w1, b1, x, hidden, input_dim, h1.data());
    relu_inplace(h1.data(), hidden);
    affine(w2, b2, h1.data(), hidden, hidden, h2.data());
    relu_inplace(h2.data(), hidden);
}

}  // namespace detail

inline void forward_cached(const PolicyParams& p, const std::vector<double>& obs, FwdCache& cache) {
    if (static_cast<int>(obs.size()) != p.input_dim)
        throw std::invalid_argument("forward: observation segment has length " +
                                    std::to_string(obs.size()) + ", network input expects " +
                                    std::to_string(p.input_dim));
    cache.obs = obs;
    detail::trunk_forward(p.w1, p.b1, p.w2, p.b2, obs.data(), p.input_dim, p.hidden, cache.h1, cache.h2);
    cache.action_logits.resize(static_cast<size_t>(p.n_actions));
    detail::affine(p.wa, p.ba, cache.h2.data(), p.n_actions, p.hidden, cache.action_logits.data());

    const double* comm_src = cache.h2.data();
    if (p.arch == ArchTag::separate_comm) {
        detail::trunk_forward(p.cw1, p.cb1, p.cw2, p.cb2, obs.data(), p.input_dim, p.hidden,
                              cache.ch1, cache.ch2);
        comm_src = cache.ch2.data();
    }
    cache.comm_logits.resize(static_cast<size_t>(p.n_messages));
    detail::affine(p.wc, p.bc, comm_src, p.n_messages, p.hidden, cache.comm_logits.data());

    double v = p.bv[0];
    for (int i = 0; i < p.hidden; ++i) v += p.wv[static_cast<size_t>(i)] * cache.h2[static_cast<size_t>(i)];
    cache.value = v;
}

inline NetOutputs forward(const PolicyParams& p, const ObsVector& obs) {
    FwdCache cache;
    forward_cached(p, obs.values, cache);
    NetOutputs out;
    out.action_logits = cache.action_logits;
    out.comm_logits = cache.comm_logits;
    out.value = cache.value;
    out.hidden = cache.h2;
    if (p.arch == ArchTag::separate_comm) out.comm_hidden = cache.ch2;
    return out;
}

// Upstream gradients w.r.t. the raw head outputs. Empty vector = all zeros.
struct HeadGrads {
    std::vector<double> d_action_logits;
    std::vector<double> d_comm_logits;
    double d_value = 0.0;
};

// Exact analytic gradients of (sum over heads of head_grad . head_output)
// w.r.t. every parameter, accumulated into `accum`. Optionally also returns
// the gradient w.r.t. the observation.
inline void backward_cached(const PolicyParams& p, const FwdCache& cache, const HeadGrads& hg,
                            ParamGrads& accum, std::vector<double>* obs_grad = nullptr) {
    const int h = p.hidden;
    const int d = p.input_dim;
    if (!hg.d_action_logits.empty() && static_cast<int>(hg.d_action_logits.size()) != p.n_actions)
        throw std::invalid_argument("backward: action head gradient has wrong length");
    if (!hg.d_comm_logits.empty() && static_cast<int>(hg.d_comm_logits.size()) != p.n_messages)
        throw std::invalid_argument("backward: comm head gradient has wrong length");

    if (obs_grad != nullptr) obs_grad->assign(static_cast<size_t>(d), 0.0);

    std::vector<double> dh2(static_cast<size_t>(h), 0.0);
    std::vector<double> dch2;  // comm trunk upstream (separate_comm)

    if (!hg.d_action_logits.empty()) {
        for (int i = 0; i < p.n_actions; ++i) {
            const double g = hg.d_action_logits[static_cast<size_t>(i)];
            if (g == 0.0) continue;
            double* row = accum.wa.data() + static_cast<size_t>(i) * h;
            const double* w_row = p.wa.data() + static_cast<size_t>(i) * h;
            for (int j = 0; j < h; ++j) {
                row[j] += g * cache.h2[static_cast<size_t>(j)];
                dh2[static_cast<size_t>(j)] += g * w_row[j];
            }
            accum.ba[static_cast<size_t>(i)] += g;
        }
    }
    if (hg.d_value != 0.0) {
        for (int j = 0; j < h; ++j) {
            accum.wv[static_cast<size_t>(j)] += hg.d_value * cache.h2[static_cast<size_t>(j)];
            dh2[static_cast<size_t>(j)] += hg.d_value * p.wv[static_cast<size_t>(j)];
        }
        accum.bv[0] += hg.d_value;
    }
    if (!hg.d_comm_logits.empty()) {
        const std::vector<double>& comm_h = (p.arch == ArchTag::separate_comm) ? cache.ch2 : cache.h2;
        std::vector<double>* sink = &dh2;
        if (p.arch == ArchTag::separate_comm) {
            dch2.assign(static_cast<size_t>(h), 0.0);
            sink = &dch2;
        }
        for (int i = 0; i < p.n_messages; ++i) {
            const double g = hg.d_comm_logits[static_cast<size_t>(i)];
            if (g == 0.0) continue;
            double* row = accum.wc.data() + static_cast<size_t>(i) * h;
            const double* w_row = p.wc.data() + static_cast<size_t>(i) * h;
            for (int j = 0; j < h; ++j) {
                row[j] += g * comm_h[static_cast<size_t>(j)];
                (*sink)[static_cast<size_t>(j)] += g * w_row[j];
            }
            accum.bc[static_cast<size_t>(i)] += g;
        }
    }

    // Main trunk.
    {
        std::vector<double> dz2(static_cast<size_t>(h));
        for (int i = 0; i < h; ++i) {
            dz2[static_cast<size_t>(i)] =
                cache.h2[static_cast<size_t>(i)] > 0.0 ? dh2[static_cast<size_t>(i)] : 0.0;
        }
        std::vector<double> dh1(static_cast<size_t>(h), 0.0);
        for (int i = 0; i < h; ++i) {
            const double g = dz2[static_cast<size_t>(i)];
            if (g == 0.0) continue;
            double* dw2_row = accum.w2.data() + static_cast<size_t>(i) * h;
            const double* w2_row = p.w2.data() + static_cast<size_t>(i) * h;
            for (int j = 0; j < h; ++j) {
                dw2_row[j] += g * cache.h1[static_cast<size_t>(j)];
                dh1[static_cast<size_t>(j)] += g * w2_row[j];
            }
            accum.b2[static_cast<size_t>(i)] += g;
        }
        for (int i = 0; i < h; ++i) {
            const double g = cache.h1[static_cast<size_t>(i)] > 0.0 ? dh1[static_cast<size_t>(i)] : 0.0;
            if (g == 0.0) continue;
            double* dw1_row = accum.w1.data() + static_cast<size_t>(i) * d;
            const double* w1_row = p.w1.data() + static_cast<size_t>(i) * d;
            for (int j = 0; j < d; ++j) dw1_row[j] += g * cache.obs[static_cast<size_t>(j)];
            accum.b1[static_cast<size_t>(i)] += g;
            if (obs_grad != nullptr)
                for (int j = 0; j < d; ++j) (*obs_grad)[static_cast<size_t>(j)] += g * w1_row[j];
        }
    }

    // Comm trunk, when separate.
    if (!dch2.empty()) {
        std::vector<double> dz2(static_cast<size_t>(h));
        for (int i = 0; i < h; ++i) {
            dz2[static_cast<size_t>(i)] =
                cache.ch2[static_cast<size_t>(i)] > 0.0 ? dch2[static_cast<size_t>(i)] : 0.0;
        }
        std::vector<double> dh1(static_cast<size_t>(h), 0.0);
        for (int i = 0; i < h; ++i) {
            const double g = dz2[static_cast<size_t>(i)];
            if (g == 0.0) continue;
            double* dw2_row = accum.cw2.data() + static_cast<size_t>(i) * h;
            const double* w2_row = p.cw2.data() + static_cast<size_t>(i) * h;
            for (int j = 0; j < h; ++j) {
                dw2_row[j] += g * cache.ch1[static_cast<size_t>(j)];
                dh1[static_cast<size_t>(j)] += g * w2_row[j];
            }
            accum.cb2[static_cast<size_t>(i)] += g;
        }
        for (int i = 0; i < h; ++i) {
            const double g = cache.ch1[static_cast<size_t>(i)] > 0.0 ? dh1[static_cast<size_t>(i)] : 0.0;
            if (g == 0.0) continue;
            double* dw1_row = accum.cw1.data() + static_cast<size_t>(i) * d;
            const double* w1_row = p.cw1.data() + static_cast<size_t>(i) * d;
            for (int j = 0; j < d; ++j) dw1_row[j] += g * cache.obs[static_cast<size_t>(j)];
            accum.cb1[static_cast<size_t>(i)] += g;
            if (obs_grad != nullptr)
                for (int j = 0; j < d; ++j) (*obs_grad)[static_cast<size_t>(j)] += g * w1_row[j];
        }
    }
}

inline ParamGrads backward(const PolicyParams& p, const ObsVector& obs, const HeadGrads& hg,
                           std::vector<double>* obs_grad = nullptr) {
    FwdCache cache;
    forward_cached(p, obs.values, cache);
    ParamGrads g = make_zero_grads(p);
    backward_cached(p, cache, hg, g, obs_grad);
    return g;
}

// --- Categorical sampling ------------------------------------------------

struct CategoricalDraw {
    int index = 0;
    double log_prob = 0.0;
    double entropy = 0.0;  // nats
};

inline std::vector<double> softmax(const std::vector<double>& logits) {
    if (logits.empty()) throw std::invalid_argument("softmax: empty logits");
    double mx = logits[0];
    for (double z : logits) {
        if (std::isnan(z)) throw std::runtime_error("softmax: NaN logit");
        if (z > mx) mx = z;
    }
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    for (double& x : p) x /= sum;
    return p;
}

inline double entropy_nats(const std::vector<double>& probs) {
    double h = 0.0;
    for (double p : probs)
        if (p > 0.0) h -= p * std::log(p);
    return h;
}

inline CategoricalDraw sample_categorical(const std::vector<double>& logits, Rng& rng) {
    const std::vector<double> p = softmax(logits);
    const double u = rng.uniform();
    double c = 0.0;
    int idx = static_cast<int>(p.size()) - 1;
    for (size_t i = 0; i < p.size(); ++i) {
        c += p[i];
        if (u < c) {
            idx = static_cast<int>(i);
            break;
        }
    }
    CategoricalDraw d;
    d.index = idx;
    d.log_prob = std::log(p[static_cast<size_t>(idx)]);
    d.entropy = entropy_nats(p);
    return d;
}

// --- Adam ----------------------------------------------------------------

struct AdamState {
    ParamGrads m;  // first moments, same shapes as the parameters
    ParamGrads v;  // second moments
    long long step = 0;

    static AdamState for_params(const PolicyParams& p) {
        AdamState s;
        s.m = make_zero_grads(p);
        s.v = make_zero_grads(p);
        return s;
    }
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One bias-corrected Adam step. Tensors with all-zero gradient stay
// bit-identical (0 / (sqrt(0) + eps) == 0).
inline void adam_update(PolicyParams& params, const ParamGrads& grads, AdamState& state, double lr,
                        const AdamConfig& cfg = {}) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (const auto& t : tensor_refs(params.arch)) {
        auto& p = params.*(t.member);
        const auto& g = grads.*(t.member);
        auto& m = state.m.*(t.member);
        auto& v = state.v.*(t.member);
        if (p.size() != g.size())
            throw std::invalid_argument(std::string("adam_update: shape mismatch on ") + t.name);
        for (size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

}  // namespace mcglab

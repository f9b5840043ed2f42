#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcglab/env.hpp"
#include "mcglab/policy.hpp"
#include "mcglab/training.hpp"

namespace mcglab {

// --- Action classifier probes -------------------------------------------------

enum class ProbeSource { from_input, from_hidden };
enum class ProbeKind { linear, mlp };

struct ProbeVariant {
    ProbeSource source = ProbeSource::from_input;
    bool with_message = true;
};

struct ProbeDataset {
    std::vector<std::vector<double>> inputs;
    std::vector<int> labels;  // opponent action indices
    std::vector<int> train_idx, heldout_idx;
    ProbeVariant variant;
    int n_classes = 0;
    int feature_width = 0;
};

// Features are taken from the listener's act-phase view of each evaluation
// round: the raw observation (from_input) or the listener network's last
// hidden layer on that observation (from_hidden). with_message = false zeroes
// the opponent's message slot before either is computed. Labels are the
// opponent's sampled action. Held-out split: the final 20% of games.
inline ProbeDataset collect_probe_dataset(const TrainedPair& pair, int n_games,
                                          const ProbeVariant& variant, int listener_agent,
                                          uint64_t master_seed) {
    if (n_games < 2) throw std::invalid_argument("collect_probe_dataset: need at least 2 games");
    if (listener_agent != 1 && listener_agent != 2)
        throw std::invalid_argument("collect_probe_dataset: listener_agent must be 1 or 2");
    const std::vector<RoundRecord> records = evaluate_pair(pair, n_games, master_seed);
    const ObsLayout layout = ObsLayout::from(pair.game);
    const PolicyParams& listener = (listener_agent == 1) ? pair.agent1 : pair.agent2;
    const int opponent = 3 - listener_agent;

    ProbeDataset ds;
    ds.variant = variant;
    ds.n_classes = pair.game.n_actions;
    ds.inputs.reserve(records.size());
    ds.labels.reserve(records.size());
    for (const RoundRecord& rec : records) {
        ObsVector obs = build_observation(rec.payoffs, listener_agent, Phase::act, layout,
                                          rec.m1_observed, rec.m2_observed);
        if (!variant.with_message) {
            const int begin = layout.msg_begin(opponent);
            for (int j = 0; j < layout.m; ++j) obs.values[static_cast<size_t>(begin + j)] = 0.0;
        }
        if (variant.source == ProbeSource::from_input) {
            ds.inputs.push_back(obs.values);
        } else {
            ds.inputs.push_back(forward(listener, obs).hidden);
        }
        ds.labels.push_back(opponent == 1 ? rec.a1 : rec.a2);
    }
    ds.feature_width = ds.inputs.empty() ? 0 : static_cast<int>(ds.inputs.front().size());
    const size_t n = ds.inputs.size();
    const size_t heldout = std::max<size_t>(1, n / 5);
    for (size_t i = 0; i < n - heldout; ++i) ds.train_idx.push_back(static_cast<int>(i));
    for (size_t i = n - heldout; i < n; ++i) ds.heldout_idx.push_back(static_cast<int>(i));
    return ds;
}

namespace detail {

// Minimal softmax classifier: optional tanh hidden layer, cross-entropy
// loss, Adam. Kept separate from the policy network on purpose; probes are
// diagnostic tooling, not part of the agents.
class ProbeNet {
public:
    ProbeNet(int input, int hidden, int classes, Rng& rng)
        : input_(input), hidden_(hidden), classes_(classes) {
        const int rows1 = hidden_ > 0 ? hidden_ : classes_;
        w1_.assign(static_cast<size_t>(rows1) * input_, 0.0);
        b1_.assign(static_cast<size_t>(rows1), 0.0);
        glorot_fill(w1_, rows1, input_, rng);
        if (hidden_ > 0) {
            w2_.assign(static_cast<size_t>(classes_) * hidden_, 0.0);
            b2_.assign(static_cast<size_t>(classes_), 0.0);
            glorot_fill(w2_, classes_, hidden_, rng);
        }
        const size_t np = w1_.size() + b1_.size() + w2_.size() + b2_.size();
        m_.assign(np, 0.0);
        v_.assign(np, 0.0);
    }

    std::vector<double> logits(const std::vector<double>& x) const {
        if (static_cast<int>(x.size()) != input_)
            throw std::invalid_argument("ProbeNet: feature width mismatch");
        if (hidden_ == 0) {
            std::vector<double> z(static_cast<size_t>(classes_));
            affine(w1_, b1_, x.data(), classes_, input_, z.data());
            return z;
        }
        std::vector<double> h(static_cast<size_t>(hidden_));
        affine(w1_, b1_, x.data(), hidden_, input_, h.data());
        tanh_inplace(h.data(), hidden_);
        std::vector<double> z(static_cast<size_t>(classes_));
        affine(w2_, b2_, h.data(), classes_, hidden_, z.data());
        return z;
    }

    int predict(const std::vector<double>& x) const {
        const std::vector<double> z = logits(x);
        return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
    }

    // One Adam step on the mean cross-entropy of a minibatch.
    void train_step(const std::vector<std::vector<double>>& xs, const std::vector<int>& ys,
                    const std::vector<int>& batch, double lr) {
        std::vector<double> gw1(w1_.size(), 0.0), gb1(b1_.size(), 0.0);
        std::vector<double> gw2(w2_.size(), 0.0), gb2(b2_.size(), 0.0);
        const double scale = 1.0 / static_cast<double>(batch.size());
        std::vector<double> h(static_cast<size_t>(std::max(hidden_, 1)));
        for (int idx : batch) {
            const std::vector<double>& x = xs[static_cast<size_t>(idx)];
            const int y = ys[static_cast<size_t>(idx)];
            if (hidden_ == 0) {
                std::vector<double> z(static_cast<size_t>(classes_));
                affine(w1_, b1_, x.data(), classes_, input_, z.data());
                std::vector<double> p = softmax(z);
                p[static_cast<size_t>(y)] -= 1.0;  // dCE/dz
                for (int i = 0; i < classes_; ++i) {
                    const double g = scale * p[static_cast<size_t>(i)];
                    double* row = gw1.data() + static_cast<size_t>(i) * input_;
                    for (int j = 0; j < input_; ++j) row[j] += g * x[static_cast<size_t>(j)];
                    gb1[static_cast<size_t>(i)] += g;
                }
            } else {
                h.resize(static_cast<size_t>(hidden_));
                affine(w1_, b1_, x.data(), hidden_, input_, h.data());
                tanh_inplace(h.data(), hidden_);
                std::vector<double> z(static_cast<size_t>(classes_));
                affine(w2_, b2_, h.data(), classes_, hidden_, z.data());
                std::vector<double> p = softmax(z);
                p[static_cast<size_t>(y)] -= 1.0;
                std::vector<double> dh(static_cast<size_t>(hidden_), 0.0);
                for (int i = 0; i < classes_; ++i) {
                    const double g = scale * p[static_cast<size_t>(i)];
                    double* row = gw2.data() + static_cast<size_t>(i) * hidden_;
                    const double* wrow = w2_.data() + static_cast<size_t>(i) * hidden_;
                    for (int j = 0; j < hidden_; ++j) {
                        row[j] += g * h[static_cast<size_t>(j)];
                        dh[static_cast<size_t>(j)] += g * wrow[j];
                    }
                    gb2[static_cast<size_t>(i)] += g;
                }
                for (int i = 0; i < hidden_; ++i) {
                    const double gz = dh[static_cast<size_t>(i)] * (1.0 - h[static_cast<size_t>(i)] * h[static_cast<size_t>(i)]);
                    if (gz == 0.0) continue;
                    double* row = gw1.data() + static_cast<size_t>(i) * input_;
                    for (int j = 0; j < input_; ++j) row[j] += gz * x[static_cast<size_t>(j)];
                    gb1[static_cast<size_t>(i)] += gz;
                }
            }
        }
        adam_flat(gw1, gb1, gw2, gb2, lr);
    }

private:
    void adam_flat(const std::vector<double>& gw1, const std::vector<double>& gb1,
                   const std::vector<double>& gw2, const std::vector<double>& gb2, double lr) {
        step_ += 1;
        const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(step_));
        size_t off = 0;
        auto apply = [&](std::vector<double>& p, const std::vector<double>& g) {
            for (size_t i = 0; i < p.size(); ++i, ++off) {
                m_[off] = 0.9 * m_[off] + 0.1 * g[i];
                v_[off] = 0.999 * v_[off] + 0.001 * g[i] * g[i];
                p[i] -= lr * (m_[off] / bc1) / (std::sqrt(v_[off] / bc2) + 1e-8);
            }
        };
        apply(w1_, gw1);
        apply(b1_, gb1);
        apply(w2_, gw2);
        apply(b2_, gb2);
    }

    int input_, hidden_, classes_;
    std::vector<double> w1_, b1_, w2_, b2_;
    std::vector<double> m_, v_;
    long long step_ = 0;
};

}  // namespace detail

struct ProbeCurvePoint {
    int train_size = 0;
    double accuracy = 0.0;
};

struct ProbeCurve {
    ProbeKind kind = ProbeKind::linear;
    std::vector<ProbeCurvePoint> points;  // held-out accuracy vs training-set size
    std::vector<std::string> warnings;
};

struct ProbeHyper {
    int mlp_hidden = 32;
    int steps = 2000;
    double lr = 0.005;
    int batch_size = 64;
};

// Trains one probe per geometric training-set size and reports held-out
// accuracy at each size. A dataset with a single label class short-circuits
// to accuracy 1.0 with a warning.
inline ProbeCurve train_probe(const ProbeDataset& ds, ProbeKind kind, uint64_t master_seed,
                              const ProbeHyper& hyper = {}) {
    if (kind == ProbeKind::linear && ds.variant.source != ProbeSource::from_hidden)
        throw std::invalid_argument("train_probe: linear probes read from_hidden features");
    if (kind == ProbeKind::mlp && ds.variant.source != ProbeSource::from_input)
        throw std::invalid_argument("train_probe: mlp probes read from_input features");
    if (ds.train_idx.empty() || ds.heldout_idx.empty())
        throw std::invalid_argument("train_probe: dataset has an empty split");

    ProbeCurve curve;
    curve.kind = kind;

    bool single_class = true;
    for (size_t i = 1; i < ds.labels.size(); ++i)
        if (ds.labels[i] != ds.labels[0]) {
            single_class = false;
            break;
        }
    if (single_class) {
        curve.warnings.push_back("degenerate single-class dataset; accuracy is trivially 1.0");
        curve.points.push_back({static_cast<int>(ds.train_idx.size()), 1.0});
        return curve;
    }

    std::vector<int> sizes;
    const int full = static_cast<int>(ds.train_idx.size());
    for (int s = 64; s < full; s *= 2) sizes.push_back(s);
    sizes.push_back(full);

    for (int size : sizes) {
        Rng rng = make_stream(master_seed, "probe");
        detail::ProbeNet net(ds.feature_width, kind == ProbeKind::mlp ? hyper.mlp_hidden : 0,
                             ds.n_classes, rng);
        std::vector<int> batch(static_cast<size_t>(hyper.batch_size));
        for (int step = 0; step < hyper.steps; ++step) {
            for (int& b : batch) b = ds.train_idx[static_cast<size_t>(rng.uniform_int(size))];
            net.train_step(ds.inputs, ds.labels, batch, hyper.lr);
        }
        int correct = 0;
        for (int idx : ds.heldout_idx)
            if (net.predict(ds.inputs[static_cast<size_t>(idx)]) == ds.labels[static_cast<size_t>(idx)])
                ++correct;
        curve.points.push_back(
            {size, static_cast<double>(correct) / static_cast<double>(ds.heldout_idx.size())});
    }
    return curve;
}

// --- Activation collection and PCA ---------------------------------------------

enum class TrunkChoice { action_trunk, comm_trunk };

struct ActivationMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;  // row-major
    std::vector<int> actions;  // the observed agent's sampled action per row

    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
};

// One row per evaluation game: the observed agent's last-layer activation at
// its act phase, with its sampled action alongside.
inline ActivationMatrix collect_activations(const TrainedPair& pair, int agent, int n_games,
                                            uint64_t master_seed,
                                            TrunkChoice trunk = TrunkChoice::action_trunk) {
    const std::vector<RoundRecord> records = evaluate_pair(pair, n_games, master_seed);
    const ObsLayout layout = ObsLayout::from(pair.game);
    const PolicyParams& params = (agent == 1) ? pair.agent1 : pair.agent2;
    if (trunk == TrunkChoice::comm_trunk && params.arch != ArchTag::separate_comm)
        throw std::invalid_argument("collect_activations: no separate comm trunk in this architecture");

    ActivationMatrix mat;
    mat.rows = static_cast<int>(records.size());
    mat.cols = params.hidden;
    mat.data.reserve(static_cast<size_t>(mat.rows) * mat.cols);
    for (const RoundRecord& rec : records) {
        const ObsVector obs = build_observation(rec.payoffs, agent, Phase::act, layout,
                                                rec.m1_observed, rec.m2_observed);
        const NetOutputs out = forward(params, obs);
        const std::vector<double>& h =
            (trunk == TrunkChoice::comm_trunk) ? out.comm_hidden : out.hidden;
        mat.data.insert(mat.data.end(), h.begin(), h.end());
        mat.actions.push_back(agent == 1 ? rec.a1 : rec.a2);
    }
    return mat;
}

struct PcaResult {
    int k = 0;
    std::vector<double> projected;       // rows x k, row-major
    std::vector<double> explained_frac;  // k entries, non-increasing
    std::vector<double> components;      // k x cols, row-major, unit rows
    std::vector<std::string> warnings;
};

// Principal components of the row cloud: mean-center columns, then extract
// the top-k covariance eigenvectors by power iteration with deflation.
// Deterministic canonical-basis starts; each component's largest-magnitude
// loading is made positive.
inline PcaResult pca_project(const ActivationMatrix& mat, int k) {
    if (k < 1) throw std::invalid_argument("pca_project: k must be >= 1");
    if (mat.rows <= k) throw std::invalid_argument("pca_project: need more rows than components");
    const int d = mat.cols;
    const int n = mat.rows;

    std::vector<double> mean(static_cast<size_t>(d), 0.0);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) mean[static_cast<size_t>(c)] += mat.at(r, c);
    for (double& x : mean) x /= static_cast<double>(n);

    std::vector<double> centered(static_cast<size_t>(n) * d);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c)
            centered[static_cast<size_t>(r) * d + c] = mat.at(r, c) - mean[static_cast<size_t>(c)];

    // Sample covariance, d x d.
    std::vector<double> cov(static_cast<size_t>(d) * d, 0.0);
    for (int r = 0; r < n; ++r) {
        const double* row = centered.data() + static_cast<size_t>(r) * d;
        for (int i = 0; i < d; ++i) {
            const double xi = row[i];
            if (xi == 0.0) continue;
            double* crow = cov.data() + static_cast<size_t>(i) * d;
            for (int j = 0; j < d; ++j) crow[j] += xi * row[j];
        }
    }
    for (double& x : cov) x /= static_cast<double>(n - 1);
    double trace = 0.0;
    for (int i = 0; i < d; ++i) trace += cov[static_cast<size_t>(i) * d + i];

    constexpr double kTol = 1e-10;
    constexpr int kMaxIter = 10000;

    PcaResult res;
    std::vector<std::vector<double>> comps;
    std::vector<double> eigenvalues;
    for (int c = 0; c < k && c < d; ++c) {
        std::vector<double> v(static_cast<size_t>(d), 0.0);
        v[static_cast<size_t>(c)] = 1.0;
        auto orthogonalize = [&](std::vector<double>& x) {
            for (const auto& u : comps) {
                double dot = 0.0;
                for (int i = 0; i < d; ++i) dot += x[static_cast<size_t>(i)] * u[static_cast<size_t>(i)];
                for (int i = 0; i < d; ++i) x[static_cast<size_t>(i)] -= dot * u[static_cast<size_t>(i)];
            }
        };
        orthogonalize(v);
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-300) {
            res.warnings.push_back("rank exhausted before component " + std::to_string(c));
            break;
        }
        for (double& x : v) x /= norm;

        std::vector<double> y(static_cast<size_t>(d));
        double lambda = 0.0;
        for (int iter = 0; iter < kMaxIter; ++iter) {
            for (int i = 0; i < d; ++i) {
                double acc = 0.0;
                const double* crow = cov.data() + static_cast<size_t>(i) * d;
                for (int j = 0; j < d; ++j) acc += crow[j] * v[static_cast<size_t>(j)];
                y[static_cast<size_t>(i)] = acc;
            }
            orthogonalize(y);
            double ynorm = 0.0;
            for (double x : y) ynorm += x * x;
            ynorm = std::sqrt(ynorm);
            if (ynorm < 1e-300) {
                lambda = 0.0;
                break;
            }
            for (double& x : y) x /= ynorm;
            double align = 0.0;
            for (int i = 0; i < d; ++i) align += y[static_cast<size_t>(i)] * v[static_cast<size_t>(i)];
            v = y;
            if (std::abs(std::abs(align) - 1.0) < kTol) break;
        }
        // Rayleigh quotient on the deflated operator.
        lambda = 0.0;
        for (int i = 0; i < d; ++i) {
            double acc = 0.0;
            const double* crow = cov.data() + static_cast<size_t>(i) * d;
            for (int j = 0; j < d; ++j) acc += crow[j] * v[static_cast<size_t>(j)];
            lambda += v[static_cast<size_t>(i)] * acc;
        }
        if (lambda <= trace * 1e-14) {
            res.warnings.push_back("rank exhausted before component " + std::to_string(c));
            break;
        }
        // Sign convention: largest-magnitude loading positive.
        int arg = 0;
        for (int i = 1; i < d; ++i)
            if (std::abs(v[static_cast<size_t>(i)]) > std::abs(v[static_cast<size_t>(arg)])) arg = i;
        if (v[static_cast<size_t>(arg)] < 0.0)
            for (double& x : v) x = -x;
        comps.push_back(v);
        eigenvalues.push_back(lambda);
    }

    res.k = static_cast<int>(comps.size());
    if (res.k < k)
        res.warnings.push_back("returned " + std::to_string(res.k) + " of " + std::to_string(k) +
                               " requested components");
    res.projected.assign(static_cast<size_t>(n) * res.k, 0.0);
    for (int r = 0; r < n; ++r) {
        const double* row = centered.data() + static_cast<size_t>(r) * d;
        for (int c = 0; c < res.k; ++c) {
            double acc = 0.0;
            for (int j = 0; j < d; ++j) acc += row[j] * comps[static_cast<size_t>(c)][static_cast<size_t>(j)];
            res.projected[static_cast<size_t>(r) * res.k + c] = acc;
        }
    }
    for (int c = 0; c < res.k; ++c) {
        res.explained_frac.push_back(trace > 0.0 ? eigenvalues[static_cast<size_t>(c)] / trace : 0.0);
        res.components.insert(res.components.end(), comps[static_cast<size_t>(c)].begin(),
                              comps[static_cast<size_t>(c)].end());
    }
    return res;
}

// Between-action-class variance over total variance, in the projected space.
// Quantifies how strongly the projection separates rows by chosen action.
inline double action_class_separation(const PcaResult& pca, const std::vector<int>& actions) {
    const int k = pca.k;
    const int n = static_cast<int>(actions.size());
    if (n == 0 || static_cast<int>(pca.projected.size()) != n * k)
        throw std::invalid_argument("action_class_separation: shape mismatch");
    const int n_classes = *std::max_element(actions.begin(), actions.end()) + 1;
    std::vector<double> total_mean(static_cast<size_t>(k), 0.0);
    std::vector<double> class_mean(static_cast<size_t>(n_classes) * k, 0.0);
    std::vector<int> class_n(static_cast<size_t>(n_classes), 0);
    for (int r = 0; r < n; ++r) {
        class_n[static_cast<size_t>(actions[static_cast<size_t>(r)])] += 1;
        for (int c = 0; c < k; ++c) {
            const double x = pca.projected[static_cast<size_t>(r) * k + c];
            total_mean[static_cast<size_t>(c)] += x;
            class_mean[static_cast<size_t>(actions[static_cast<size_t>(r)]) * k + c] += x;
        }
    }
    for (double& x : total_mean) x /= static_cast<double>(n);
    for (int cl = 0; cl < n_classes; ++cl)
        if (class_n[static_cast<size_t>(cl)] > 0)
            for (int c = 0; c < k; ++c)
                class_mean[static_cast<size_t>(cl) * k + c] /= static_cast<double>(class_n[static_cast<size_t>(cl)]);
    double between = 0.0, total = 0.0;
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < k; ++c) {
            const double x = pca.projected[static_cast<size_t>(r) * k + c];
            const double tm = total_mean[static_cast<size_t>(c)];
            total += (x - tm) * (x - tm);
        }
    }
    for (int cl = 0; cl < n_classes; ++cl) {
        for (int c = 0; c < k; ++c) {
            const double diff = class_mean[static_cast<size_t>(cl) * k + c] - total_mean[static_cast<size_t>(c)];
            between += static_cast<double>(class_n[static_cast<size_t>(cl)]) * diff * diff;
        }
    }
    return total > 0.0 ? between / total : 0.0;
}

}  // namespace mcglab

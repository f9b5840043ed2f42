#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcglab/env.hpp"
#include "mcglab/policy.hpp"

namespace mcglab {

// Integer (message, action) co-occurrence counts: rows = messages, cols = actions.
struct CooccurrenceMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<long long> counts;
    long long total = 0;

    CooccurrenceMatrix() = default;
    CooccurrenceMatrix(int rows_, int cols_)
        : rows(rows_), cols(cols_), counts(static_cast<size_t>(rows_) * cols_, 0) {}

    void add(int message, int action, long long k = 1) {
        if (message < 0 || message >= rows || action < 0 || action >= cols)
            throw std::out_of_range("CooccurrenceMatrix::add: index outside matrix");
        counts[static_cast<size_t>(message) * cols + action] += k;
        total += k;
    }
    long long at(int message, int action) const {
        return counts[static_cast<size_t>(message) * cols + action];
    }
};

// Mutual information (nats) of the empirical joint. Zero-count cells
// contribute nothing; tiny negative rounding residue is clamped to 0.
// Marginals are exact integer sums and cell contributions are added in
// sorted order, so relabeling messages (permuting rows) changes nothing,
// not even the last bit.
inline double mutual_information(const CooccurrenceMatrix& co) {
    if (co.total <= 0) throw std::invalid_argument("mutual_information: empty counts");
    std::vector<long long> row_tot(static_cast<size_t>(co.rows), 0);
    std::vector<long long> col_tot(static_cast<size_t>(co.cols), 0);
    for (int i = 0; i < co.rows; ++i)
        for (int j = 0; j < co.cols; ++j) {
            row_tot[static_cast<size_t>(i)] += co.at(i, j);
            col_tot[static_cast<size_t>(j)] += co.at(i, j);
        }
    std::vector<double> terms;
    terms.reserve(static_cast<size_t>(co.rows) * co.cols);
    const double n = static_cast<double>(co.total);
    for (int i = 0; i < co.rows; ++i) {
        for (int j = 0; j < co.cols; ++j) {
            const long long c = co.at(i, j);
            if (c == 0) continue;
            const double p = static_cast<double>(c) / n;
            const double ratio = (static_cast<double>(c) * n) /
                                 (static_cast<double>(row_tot[static_cast<size_t>(i)]) *
                                  static_cast<double>(col_tot[static_cast<size_t>(j)]));
            terms.push_back(p * std::log(ratio));
        }
    }
    std::sort(terms.begin(), terms.end());
    double mi = 0.0;
    for (double t : terms) mi += t;
    return std::max(mi, 0.0);
}

namespace detail {

inline int require_messages(std::span<const RoundRecord> records, int n_messages) {
    if (records.empty()) throw std::invalid_argument("metric: no records");
    if (n_messages < 1) throw std::invalid_argument("metric: n_messages must be >= 1");
    return records.front().payoffs.n;
}

}  // namespace detail

// Per agent, the mutual information between its own sent message and its own
// action, accumulated over all records.
inline std::pair<double, double> speaker_consistency(std::span<const RoundRecord> records,
                                                     int n_messages) {
    const int n = detail::require_messages(records, n_messages);
    CooccurrenceMatrix c1(n_messages, n), c2(n_messages, n);
    for (const RoundRecord& r : records) {
        c1.add(r.m1, r.a1);
        c2.add(r.m2, r.a2);
    }
    return {mutual_information(c1), mutual_information(c2)};
}

// As speaker_consistency, but pairing agent i's message with the other
// agent's action.
inline std::pair<double, double> instantaneous_coordination(std::span<const RoundRecord> records,
                                                            int n_messages) {
    const int n = detail::require_messages(records, n_messages);
    CooccurrenceMatrix c1(n_messages, n), c2(n_messages, n);
    for (const RoundRecord& r : records) {
        c1.add(r.m1, r.a2);
        c2.add(r.m2, r.a1);
    }
    return {mutual_information(c1), mutual_information(c2)};
}

// Shannon entropy (nats) of each agent's empirical message marginal.
// Sorted-term summation keeps the value exactly invariant to message
// relabeling.
inline std::pair<double, double> message_entropy(std::span<const RoundRecord> records,
                                                 int n_messages) {
    detail::require_messages(records, n_messages);
    std::vector<long long> c1(static_cast<size_t>(n_messages), 0);
    std::vector<long long> c2(static_cast<size_t>(n_messages), 0);
    for (const RoundRecord& r : records) {
        c1[static_cast<size_t>(r.m1)] += 1;
        c2[static_cast<size_t>(r.m2)] += 1;
    }
    auto entropy_of_counts = [&](const std::vector<long long>& counts) {
        std::vector<double> terms;
        const double n = static_cast<double>(records.size());
        for (long long c : counts) {
            if (c == 0) continue;
            const double p = static_cast<double>(c) / n;
            terms.push_back(-p * std::log(p));
        }
        std::sort(terms.begin(), terms.end());
        double h = 0.0;
        for (double t : terms) h += t;
        return h;
    };
    return {entropy_of_counts(c1), entropy_of_counts(c2)};
}

// --- Context independence --------------------------------------------------

// Total rule assigning a concept label in [0, num_concepts) to each record,
// per agent. The default concept is the agent's own action that round.
struct ConceptExtractor {
    int num_concepts = 0;
    std::function<int(const RoundRecord&, int agent)> label;

    static ConceptExtractor own_action(int n_actions) {
        return {n_actions,
                [](const RoundRecord& r, int agent) { return agent == 1 ? r.a1 : r.a2; }};
    }
};

struct ContextIndependence {
    double ci1 = 0.0;
    double ci2 = 0.0;
    std::vector<std::string> warnings;
};

// CI = (1/|C|) sum_c p(m^c|c) * p(c|m^c) with m^c = argmax_m p(c|m),
// ties broken toward the lowest message index. Concepts never observed
// contribute 0 and produce a warning.
inline ContextIndependence context_independence(std::span<const RoundRecord> records,
                                                const ConceptExtractor& extractor, int n_messages) {
    detail::require_messages(records, n_messages);
    if (extractor.num_concepts < 1 || !extractor.label)
        throw std::invalid_argument("context_independence: extractor is not total");

    ContextIndependence out;
    for (int agent = 1; agent <= 2; ++agent) {
        const int nc = extractor.num_concepts;
        std::vector<long long> joint(static_cast<size_t>(n_messages) * nc, 0);
        std::vector<long long> msg_tot(static_cast<size_t>(n_messages), 0);
        std::vector<long long> con_tot(static_cast<size_t>(nc), 0);
        for (const RoundRecord& r : records) {
            const int m = (agent == 1) ? r.m1 : r.m2;
            const int c = extractor.label(r, agent);
            if (c < 0 || c >= nc)
                throw std::out_of_range("context_independence: concept label outside range");
            joint[static_cast<size_t>(m) * nc + c] += 1;
            msg_tot[static_cast<size_t>(m)] += 1;
            con_tot[static_cast<size_t>(c)] += 1;
        }
        double ci = 0.0;
        for (int c = 0; c < nc; ++c) {
            if (con_tot[static_cast<size_t>(c)] == 0) {
                out.warnings.push_back("agent " + std::to_string(agent) + ": concept " +
                                       std::to_string(c) + " never occurred; contributes 0");
                continue;
            }
            int best_m = 0;
            double best_pcm = -1.0;
            for (int m = 0; m < n_messages; ++m) {
                const double pcm =
                    msg_tot[static_cast<size_t>(m)] == 0
                        ? 0.0
                        : static_cast<double>(joint[static_cast<size_t>(m) * nc + c]) /
                              static_cast<double>(msg_tot[static_cast<size_t>(m)]);
                if (pcm > best_pcm) {
                    best_pcm = pcm;
                    best_m = m;
                }
            }
            const double pmc = static_cast<double>(joint[static_cast<size_t>(best_m) * nc + c]) /
                               static_cast<double>(con_tot[static_cast<size_t>(c)]);
            ci += pmc * best_pcm;
        }
        ci /= static_cast<double>(nc);
        (agent == 1 ? out.ci1 : out.ci2) = ci;
    }
    return out;
}

// --- Causal influence of communication --------------------------------------

// Interventional mutual information, one value per sampled game: force each
// possible message into the listener's observation, weight the listener's
// resulting action distribution by the speaker's message probability, and
// compute the MI of that within-game joint.
struct CICReport {
    std::vector<double> per_game;  // nats, one per game
    double mean = 0.0;

    double fraction_below(double eps) const {
        if (per_game.empty()) return 0.0;
        long long k = 0;
        for (double v : per_game)
            if (v < eps) ++k;
        return static_cast<double>(k) / static_cast<double>(per_game.size());
    }
};

// The two policies enter as per-game distribution callables so the metric is
// independent of any particular network:
//   speaker_message_dist(payoffs)          -> p(m), length M
//   listener_action_dist(payoffs, msg_j)   -> p(a | do(m = j)), length n
struct CicSpeaker {
    std::function<std::vector<double>(const PayoffPair&)> message_dist;
};
struct CicListener {
    std::function<std::vector<double>(const PayoffPair&, int forced_message)> action_dist;
};

namespace detail {

inline void check_distribution(const std::vector<double>& p, const char* who) {
    double s = 0.0;
    for (double x : p) {
        if (!(x >= 0.0))
            throw std::runtime_error(std::string("causal_influence: ") + who +
                                     " produced a negative or NaN probability");
        s += x;
    }
    if (std::abs(s - 1.0) > 1e-6)
        throw std::runtime_error(std::string("causal_influence: ") + who +
                                 " distribution sums to " + std::to_string(s));
}

}  // namespace detail

inline CICReport causal_influence(const CicListener& listener, const CicSpeaker& speaker,
                                  const std::function<PayoffPair()>& game_sampler, int n_games) {
    if (n_games < 1) throw std::invalid_argument("causal_influence: n_games must be >= 1");
    CICReport report;
    report.per_game.reserve(static_cast<size_t>(n_games));
    double sum = 0.0;
    for (int g = 0; g < n_games; ++g) {
        const PayoffPair payoffs = game_sampler();
        const std::vector<double> pm = speaker.message_dist(payoffs);
        detail::check_distribution(pm, "speaker");
        const int n_messages = static_cast<int>(pm.size());

        std::vector<std::vector<double>> cond(static_cast<size_t>(n_messages));
        int n_actions = 0;
        for (int j = 0; j < n_messages; ++j) {
            if (pm[static_cast<size_t>(j)] == 0.0) continue;  // weight zero, never queried
            cond[static_cast<size_t>(j)] = listener.action_dist(payoffs, j);
            detail::check_distribution(cond[static_cast<size_t>(j)], "listener");
            n_actions = static_cast<int>(cond[static_cast<size_t>(j)].size());
        }

        std::vector<double> pa(static_cast<size_t>(n_actions), 0.0);
        for (int j = 0; j < n_messages; ++j) {
            if (cond[static_cast<size_t>(j)].empty()) continue;
            for (int a = 0; a < n_actions; ++a)
                pa[static_cast<size_t>(a)] += pm[static_cast<size_t>(j)] * cond[static_cast<size_t>(j)][static_cast<size_t>(a)];
        }
        // Accumulate joint * (log cond - log pa); algebraically equal to
        // joint * log(joint / (pm * pa)) but immune to probability underflow.
        double mi = 0.0;
        for (int j = 0; j < n_messages; ++j) {
            if (cond[static_cast<size_t>(j)].empty()) continue;
            for (int a = 0; a < n_actions; ++a) {
                const double c = cond[static_cast<size_t>(j)][static_cast<size_t>(a)];
                const double joint = pm[static_cast<size_t>(j)] * c;
                if (joint <= 0.0) continue;
                mi += joint * (std::log(c) - std::log(pa[static_cast<size_t>(a)]));
            }
        }
        mi = std::max(mi, 0.0);
        report.per_game.push_back(mi);
        sum += mi;
    }
    report.mean = sum / static_cast<double>(n_games);
    return report;
}

// Net-backed speaker: the message distribution on its first-speaker
// observation (no messages seen yet).
inline CicSpeaker make_cic_speaker(PolicyParams params, int role, const GameConfig& config) {
    const ObsLayout layout = ObsLayout::from(config);
    return CicSpeaker{[params = std::move(params), role, layout](const PayoffPair& payoffs) {
        const ObsVector obs = build_observation(payoffs, role, Phase::speak_first, layout);
        return softmax(forward(params, obs).comm_logits);
    }};
}

// Net-backed listener: its own message slot is pinned to its greedy message
// on the no-message observation, so the intervention varies only the
// speaker's slot.
inline CicListener make_cic_listener(PolicyParams params, int role, const GameConfig& config) {
    const ObsLayout layout = ObsLayout::from(config);
    return CicListener{[params = std::move(params), role, layout](const PayoffPair& payoffs, int forced_message) {
        const ObsVector base = build_observation(payoffs, role, Phase::speak_first, layout);
        const std::vector<double> own_logits = forward(params, base).comm_logits;
        const int own_msg = static_cast<int>(
            std::max_element(own_logits.begin(), own_logits.end()) - own_logits.begin());
        std::optional<int> m1, m2;
        (role == 1 ? m1 : m2) = own_msg;
        (role == 1 ? m2 : m1) = forced_message;
        const ObsVector obs = build_observation(payoffs, role, Phase::act, layout, m1, m2);
        return softmax(forward(params, obs).action_logits);
    }};
}

// --- Message input norm ------------------------------------------------------

// Frobenius norm of the selected input columns of the first trunk weight
// matrix. [col_begin, col_end) indexes observation components.
inline double input_column_norm(const PolicyParams& params, int col_begin, int col_end) {
    if (col_begin < 0 || col_end > params.input_dim || col_begin >= col_end)
        throw std::invalid_argument("input_column_norm: column range [" + std::to_string(col_begin) +
                                    ", " + std::to_string(col_end) + ") does not fit input width " +
                                    std::to_string(params.input_dim));
    double sq = 0.0;
    for (int i = 0; i < params.hidden; ++i) {
        const double* row = params.w1.data() + static_cast<size_t>(i) * params.input_dim;
        for (int j = col_begin; j < col_end; ++j) sq += row[j] * row[j];
    }
    return std::sqrt(sq);
}

// Norm of the columns fed by the opponent's message slot; zero rules out any
// positive listening.
inline double message_input_norm(const PolicyParams& params, const ObsLayout& layout, int role) {
    if (layout.size() != params.input_dim)
        throw std::invalid_argument("message_input_norm: layout size does not match network input");
    const int other = 3 - role;
    const int begin = layout.msg_begin(other);
    return input_column_norm(params, begin, begin + layout.m);
}

inline double payoff_input_norm(const PolicyParams& params, const ObsLayout& layout) {
    return input_column_norm(params, 0, 2 * layout.n * layout.n);
}

}  // namespace mcglab

#pragma once

#include <cmath>
#include <cstdio>
#include <deque>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcglab/payoffs.hpp"
#include "mcglab/rng.hpp"

namespace mcglab {

enum class PayoffMode { randomized, fixed };

struct GameConfig {
    int n_actions = 2;
    int n_messages = 4;
    PayoffMode payoff_mode = PayoffMode::randomized;
    double payoff_mean = 0.0;
    double payoff_variance = 9.0;  // entries are N(0, 9): standard deviation 3
    std::string fixed_game;  // used when payoff_mode == fixed
    bool iterated = false;
    int memory_len = 0;      // 5 when iterated
    bool scramble = false;
    double message_cost = 0.0;  // cheap talk; nonzero is rejected at config parse

    void validate() const {
        if (n_actions < 2) throw std::invalid_argument("GameConfig: n_actions must be >= 2");
        if (n_messages < 1) throw std::invalid_argument("GameConfig: n_messages must be >= 1");
        if (payoff_mode == PayoffMode::randomized && !(payoff_variance > 0.0))
            throw std::invalid_argument("GameConfig: payoff_variance must be > 0");
        if (payoff_mode == PayoffMode::fixed && fixed_game.empty())
            throw std::invalid_argument("GameConfig: fixed payoff mode needs a game name");
        if (iterated && memory_len < 1)
            throw std::invalid_argument("GameConfig: iterated play needs memory_len >= 1");
        if (message_cost != 0.0)
            throw std::invalid_argument("GameConfig: only costless messages are supported");
    }
};

// Observation vector layout, identical for both agents:
//   [own payoff n^2 | opponent payoff n^2 | agent 1 msg (M) | agent 2 msg (M) | memory]
// Message slots are indexed by agent identity, not by speaking order. The
// memory block holds the last memory_len rounds as one-hot (a1, a2, m1, m2)
// tuples, most recent first, zero-filled where no round exists yet.
struct ObsLayout {
    int n = 0;
    int m = 0;
    bool iterated = false;
    int memory_len = 0;
    static ObsLayout from(const GameConfig& cfg) {
        return ObsLayout{cfg.n_actions, cfg.n_messages, cfg.iterated,
                         cfg.iterated ? cfg.memory_len : 0};
    }

    int payoff_own_begin() const { return 0; }
    int payoff_opp_begin() const { return n * n; }
    int msg_begin(int agent) const { return 2 * n * n + (agent - 1) * m; }
    int memory_begin() const { return 2 * n * n + 2 * m; }
    int memory_round_width() const { return 2 * n + 2 * m; }
    int size() const { return 2 * n * n + 2 * m + memory_len * memory_round_width(); }
};

struct ObsVector {
    ObsLayout layout;
    std::vector<double> values;
};

// Ring of the last memory_len rounds' true (a1, a2, m1, m2) tuples.
class MemoryBuffer {
public:
    struct Tuple {
        int a1, a2, m1, m2;
    };

    explicit MemoryBuffer(int capacity = 0) : capacity_(capacity) {}

    void push(const Tuple& t) {
        ring_.push_front(t);
        if (static_cast<int>(ring_.size()) > capacity_) ring_.pop_back();
    }
    void clear() { ring_.clear(); }
    int capacity() const { return capacity_; }
    int size() const { return static_cast<int>(ring_.size()); }

    // rounds_ago = 0 is the most recent stored round.
    std::optional<Tuple> recall(int rounds_ago) const {
        if (rounds_ago < 0 || rounds_ago >= size()) return std::nullopt;
        return ring_[static_cast<size_t>(rounds_ago)];
    }

private:
    int capacity_;
    std::deque<Tuple> ring_;
};

// One full round: who spoke first, what was said, what was observed (differs
// from what was said only under scrambling), actions and looked-up rewards.
struct RoundRecord {
    PayoffPair payoffs;
    int first_speaker = 1;  // 1 or 2
    int m1 = 0, m2 = 0;
    int m1_observed = 0, m2_observed = 0;
    int a1 = 0, a2 = 0;
    double r1 = 0.0, r2 = 0.0;
    long long episode = 0;
    unsigned long long seed = 0;
};

enum class Phase { speak_first, speak_second, act };

// Builds one agent's observation. Payoffs are flattened row-major with the
// viewing agent's own action as the row index, so agent 2 sees transposed
// matrices. Message arguments are the observed values; pass nullopt for a
// slot that has not been filled at this phase.
inline ObsVector build_observation(const PayoffPair& payoffs, int role, Phase phase,
                                   const ObsLayout& layout,
                                   std::optional<int> msg1_observed = std::nullopt,
                                   std::optional<int> msg2_observed = std::nullopt,
                                   const MemoryBuffer* memory = nullptr) {
    if (role != 1 && role != 2) throw std::invalid_argument("build_observation: role must be 1 or 2");
    if (payoffs.n != layout.n) throw std::invalid_argument("build_observation: payoff size does not match layout");
    const int n = layout.n;
    const int m = layout.m;

    ObsVector obs;
    obs.layout = layout;
    obs.values.assign(static_cast<size_t>(layout.size()), 0.0);

    const std::vector<double>& own = (role == 1) ? payoffs.r1 : payoffs.r2;
    const std::vector<double>& opp = (role == 1) ? payoffs.r2 : payoffs.r1;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            // row = own action, column = opponent action
            const size_t src = (role == 1) ? static_cast<size_t>(i) * n + j : static_cast<size_t>(j) * n + i;
            obs.values[static_cast<size_t>(layout.payoff_own_begin()) + i * n + j] = own[src];
            obs.values[static_cast<size_t>(layout.payoff_opp_begin()) + i * n + j] = opp[src];
        }
    }

    auto set_slot = [&](int agent, std::optional<int> msg) {
        if (!msg.has_value()) return;
        if (*msg < 0 || *msg >= m)
            throw std::out_of_range("build_observation: message index " + std::to_string(*msg) +
                                    " outside [0, " + std::to_string(m) + ")");
        obs.values[static_cast<size_t>(layout.msg_begin(agent)) + *msg] = 1.0;
    };
    switch (phase) {
        case Phase::speak_first:
            break;  // both slots stay zero
        case Phase::speak_second:
            set_slot(1, msg1_observed);
            set_slot(2, msg2_observed);
            break;
        case Phase::act:
            set_slot(1, msg1_observed);
            set_slot(2, msg2_observed);
            break;
    }

    if (layout.iterated) {
        const int base = layout.memory_begin();
        const int w = layout.memory_round_width();
        for (int back = 0; back < layout.memory_len; ++back) {
            if (memory == nullptr) break;
            const auto tuple = memory->recall(back);
            if (!tuple.has_value()) continue;
            const int off = base + back * w;
            obs.values[static_cast<size_t>(off) + tuple->a1] = 1.0;
            obs.values[static_cast<size_t>(off) + n + tuple->a2] = 1.0;
            obs.values[static_cast<size_t>(off) + 2 * n + tuple->m1] = 1.0;
            obs.values[static_cast<size_t>(off) + 2 * n + m + tuple->m2] = 1.0;
        }
    }
    return obs;
}

namespace detail {

inline void check_index(int value, int bound, const char* what) {
    if (value < 0 || value >= bound)
        throw std::runtime_error(std::string("env_step: policy emitted out-of-range ") + what +
                                 " " + std::to_string(value) + " (bound " + std::to_string(bound) + ")");
}

}  // namespace detail

// Each agent's act-phase view of the round's messages: its own slot carries
// the message it actually sent, the other slot carries the (possibly
// scrambled) copy delivered to it.
inline ObsVector act_view(const RoundRecord& rec, int role, const ObsLayout& layout,
                          const MemoryBuffer* memory = nullptr) {
    const std::optional<int> m1 = (role == 1) ? rec.m1 : rec.m1_observed;
    const std::optional<int> m2 = (role == 2) ? rec.m2 : rec.m2_observed;
    return build_observation(rec.payoffs, role, Phase::act, layout, m1, m2, memory);
}

// Plays one round. A policy is anything exposing
//   int sample_message(const ObsVector&, Rng&)
//   int sample_action(const ObsVector&, Rng&)
// Draw order on the rng: speaker coin, first message, [scramble redraw],
// second message, [scramble redraw], agent 1 action, agent 2 action.
// Scrambling acts on the channel: the receiving agent gets an independent
// uniform replacement, while the sender still sees its own true message at
// act time. The memory (when present) always stores the true tuples.
template <typename Policy1, typename Policy2>
RoundRecord env_step(Policy1& policy1, Policy2& policy2, const PayoffPair& payoffs, Rng& rng,
                     const GameConfig& config, MemoryBuffer* memory = nullptr) {
    const ObsLayout layout = ObsLayout::from(config);
    if (payoffs.n != config.n_actions)
        throw std::invalid_argument("env_step: payoffs do not match config.n_actions");
    const int m = config.n_messages;

    RoundRecord rec;
    rec.payoffs = payoffs;
    rec.first_speaker = rng.bernoulli_half() ? 1 : 2;

    auto speak = [&](int agent, Phase phase, std::optional<int> other_observed) {
        std::optional<int> slot1, slot2;
        if (other_observed.has_value()) {
            (agent == 1 ? slot2 : slot1) = other_observed;
        }
        const ObsVector obs = build_observation(payoffs, agent, phase, layout, slot1, slot2, memory);
        const int msg = (agent == 1) ? policy1.sample_message(obs, rng) : policy2.sample_message(obs, rng);
        detail::check_index(msg, m, "message");
        return msg;
    };

    const int first = rec.first_speaker;
    const int second = 3 - first;

    const int msg_first = speak(first, Phase::speak_first, std::nullopt);
    const int msg_first_obs = config.scramble ? rng.uniform_int(m) : msg_first;

    const int msg_second = speak(second, Phase::speak_second, msg_first_obs);
    const int msg_second_obs = config.scramble ? rng.uniform_int(m) : msg_second;

    rec.m1 = (first == 1) ? msg_first : msg_second;
    rec.m2 = (first == 1) ? msg_second : msg_first;
    rec.m1_observed = (first == 1) ? msg_first_obs : msg_second_obs;
    rec.m2_observed = (first == 1) ? msg_second_obs : msg_first_obs;

    const ObsVector act_obs1 = act_view(rec, 1, layout, memory);
    const ObsVector act_obs2 = act_view(rec, 2, layout, memory);
    rec.a1 = policy1.sample_action(act_obs1, rng);
    detail::check_index(rec.a1, config.n_actions, "action");
    rec.a2 = policy2.sample_action(act_obs2, rng);
    detail::check_index(rec.a2, config.n_actions, "action");

    rec.r1 = payoffs.reward1(rec.a1, rec.a2);
    rec.r2 = payoffs.reward2(rec.a1, rec.a2);

    if (memory != nullptr) memory->push({rec.a1, rec.a2, rec.m1, rec.m2});
    return rec;
}

// --- JSONL serialization -----------------------------------------------

namespace detail {

inline void append_g9(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    out += buf;
}

inline void append_matrix(std::string& out, const std::vector<double>& m, int n) {
    out += '[';
    for (int i = 0; i < n; ++i) {
        if (i) out += ',';
        out += '[';
        for (int j = 0; j < n; ++j) {
            if (j) out += ',';
            append_g9(out, m[static_cast<size_t>(i) * n + j]);
        }
        out += ']';
    }
    out += ']';
}

}  // namespace detail

// One record per line; floats carry 9 significant digits.
inline std::string to_jsonl(const RoundRecord& rec) {
    std::string s;
    s.reserve(256);
    s += "{\"payoffs\":{\"n\":";
    s += std::to_string(rec.payoffs.n);
    s += ",\"r1\":";
    detail::append_matrix(s, rec.payoffs.r1, rec.payoffs.n);
    s += ",\"r2\":";
    detail::append_matrix(s, rec.payoffs.r2, rec.payoffs.n);
    s += "},\"first_speaker\":";
    s += std::to_string(rec.first_speaker);
    s += ",\"m1\":" + std::to_string(rec.m1);
    s += ",\"m2\":" + std::to_string(rec.m2);
    s += ",\"m1_observed\":" + std::to_string(rec.m1_observed);
    s += ",\"m2_observed\":" + std::to_string(rec.m2_observed);
    s += ",\"a1\":" + std::to_string(rec.a1);
    s += ",\"a2\":" + std::to_string(rec.a2);
    s += ",\"r1\":";
    detail::append_g9(s, rec.r1);
    s += ",\"r2\":";
    detail::append_g9(s, rec.r2);
    s += ",\"episode\":" + std::to_string(rec.episode);
    s += ",\"seed\":" + std::to_string(rec.seed);
    s += "}";
    return s;
}

}  // namespace mcglab

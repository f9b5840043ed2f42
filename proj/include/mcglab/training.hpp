#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcglab/env.hpp"
#include "mcglab/metrics.hpp"
#include "mcglab/payoffs.hpp"
#include "mcglab/policy.hpp"
#include "mcglab/rng.hpp"

namespace mcglab {

enum class Algo { reinforce, a2c };
enum class Ablation { none, scrambled_c, separate_c_net, no_c_training, random_c };

inline const char* to_string(Algo a) { return a == Algo::reinforce ? "reinforce" : "a2c"; }
inline const char* to_string(Ablation a) {
    switch (a) {
        case Ablation::none: return "none";
        case Ablation::scrambled_c: return "scrambled_c";
        case Ablation::separate_c_net: return "separate_c_net";
        case Ablation::no_c_training: return "no_c_training";
        case Ablation::random_c: return "random_c";
    }
    return "?";
}

struct LearnConfig {
    double lambda_c = 0.1;
    double lambda_ent = 0.01;
    double lambda_v = 0.1;
    double lr = 0.005;
    int batch_size = 64;
    double gamma = 0.0;  // 0.9 when iterated
    int n_step = 5;      // iterated only
    long long episodes = 250000;
    Algo algo = Algo::reinforce;
    Ablation ablation = Ablation::none;

    void validate() const {
        if (lambda_c < 0 || lambda_ent < 0 || lambda_v < 0)
            throw std::invalid_argument("LearnConfig: lambda coefficients must be >= 0");
        if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("LearnConfig: gamma must be in [0, 1)");
        if (batch_size < 1) throw std::invalid_argument("LearnConfig: batch_size must be >= 1");
        if (n_step < 1) throw std::invalid_argument("LearnConfig: n_step must be >= 1");
        if (episodes < 1) throw std::invalid_argument("LearnConfig: episodes must be >= 1");
        if (lr <= 0) throw std::invalid_argument("LearnConfig: lr must be > 0");
    }
};

// Rounds per iterated game; the non-iterated game is a single round.
constexpr int kIteratedEpisodeRounds = 20;
// Training-log aggregation granularity, in rounds.
constexpr long long kWindowRounds = 1000;

// Loss contributions of one agent for one round. Entropy terms are stored
// negated (the objective rewards entropy), so the scalar objective is
//   j_pol_a + lambda_c*j_pol_c + lambda_ent*(j_ent_a + j_ent_c) + lambda_v*j_v.
struct RoundLossTerms {
    double j_pol_a = 0.0;
    double j_pol_c = 0.0;
    double j_ent_a = 0.0;
    double j_ent_c = 0.0;
    double j_v = 0.0;

    double total(const LearnConfig& cfg) const {
        return j_pol_a + cfg.lambda_c * j_pol_c + cfg.lambda_ent * (j_ent_a + j_ent_c) +
               cfg.lambda_v * j_v;
    }
};

// Everything one agent recorded at one forward pass.
struct PhaseOutputs {
    FwdCache cache;
    int sampled = -1;
    double log_prob = 0.0;
    double entropy = 0.0;
};

struct RoundGradSeeds {
    HeadGrads msg_phase;
    HeadGrads act_phase;
};

namespace detail {

// d(-log softmax(z)[k]) / dz = p - e_k, scaled by `weight`.
inline void add_pg_seed(std::vector<double>& seed, const std::vector<double>& probs, int k,
                        double weight) {
    seed.resize(probs.size(), 0.0);
    for (size_t i = 0; i < probs.size(); ++i) seed[i] += weight * probs[i];
    seed[static_cast<size_t>(k)] -= weight;
}

// d(-H(softmax(z))) / dz_k = p_k (log p_k + H), scaled by `weight`.
inline void add_neg_entropy_seed(std::vector<double>& seed, const std::vector<double>& probs,
                                 double entropy, double weight) {
    seed.resize(probs.size(), 0.0);
    for (size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] > 0.0) seed[i] += weight * probs[i] * (std::log(probs[i]) + entropy);
    }
}

}  // namespace detail

// Loss terms and upstream head gradients for one agent's round. `ret` is the
// sampled return (the raw reward when gamma = 0, the n-step return under
// A2C). Baselines are treated as constants in the policy terms: no gradient
// reaches the value head from them. When `train_comm` is false the comm terms
// are zero and the message phase produces no gradient.
inline std::pair<RoundLossTerms, RoundGradSeeds> round_loss(const PhaseOutputs& msg_phase,
                                                            const PhaseOutputs& act_phase,
                                                            double ret, const LearnConfig& cfg,
                                                            bool train_comm) {
    RoundLossTerms terms;
    RoundGradSeeds seeds;

    const std::vector<double> pa = softmax(act_phase.cache.action_logits);
    const double v_act = act_phase.cache.value;
    const double adv_a = ret - v_act;

    terms.j_pol_a = -act_phase.log_prob * adv_a;
    terms.j_ent_a = -act_phase.entropy;
    terms.j_v = adv_a * adv_a;

    detail::add_pg_seed(seeds.act_phase.d_action_logits, pa, act_phase.sampled, adv_a);
    detail::add_neg_entropy_seed(seeds.act_phase.d_action_logits, pa, act_phase.entropy,
                                 cfg.lambda_ent);
    seeds.act_phase.d_value = cfg.lambda_v * 2.0 * (v_act - ret);

    if (train_comm) {
        const std::vector<double> pc = softmax(msg_phase.cache.comm_logits);
        const double adv_c = ret - msg_phase.cache.value;
        terms.j_pol_c = -msg_phase.log_prob * adv_c;
        terms.j_ent_c = -msg_phase.entropy;
        detail::add_pg_seed(seeds.msg_phase.d_comm_logits, pc, msg_phase.sampled,
                            cfg.lambda_c * adv_c);
        detail::add_neg_entropy_seed(seeds.msg_phase.d_comm_logits, pc, msg_phase.entropy,
                                     cfg.lambda_ent);
    }
    return {terms, seeds};
}

// n-step bootstrapped returns over one trajectory:
//   G_t = sum_{k<n} gamma^k r_{t+k} + gamma^n V_{t+n},
// truncated at the trajectory end (no bootstrap past the last step).
inline std::vector<double> n_step_return(const std::vector<double>& rewards,
                                         const std::vector<double>& bootstrap_values, int n,
                                         double gamma) {
    if (n < 1) throw std::invalid_argument("n_step_return: n must be >= 1");
    const int len = static_cast<int>(rewards.size());
    if (len < 1) throw std::invalid_argument("n_step_return: empty trajectory");
    if (bootstrap_values.size() != rewards.size())
        throw std::invalid_argument("n_step_return: rewards and values differ in length");
    std::vector<double> out(static_cast<size_t>(len));
    for (int t = 0; t < len; ++t) {
        double g = 0.0;
        double disc = 1.0;
        const int last = std::min(t + n, len);
        for (int k = t; k < last; ++k) {
            g += disc * rewards[static_cast<size_t>(k)];
            disc *= gamma;
        }
        if (t + n < len) g += disc * bootstrap_values[static_cast<size_t>(t + n)];
        out[static_cast<size_t>(t)] = g;
    }
    return out;
}

// --- Agents ------------------------------------------------------------------

// Frozen policy that plays by sampling. Used for evaluation and metric
// collection.
struct SamplingAgent {
    const PolicyParams* params = nullptr;
    bool force_uniform_message = false;
    FwdCache scratch;

    int sample_message(const ObsVector& obs, Rng& rng) {
        if (force_uniform_message) return rng.uniform_int(params->n_messages);
        forward_cached(*params, obs.values, scratch);
        return sample_categorical(scratch.comm_logits, rng).index;
    }
    int sample_action(const ObsVector& obs, Rng& rng) {
        forward_cached(*params, obs.values, scratch);
        return sample_categorical(scratch.action_logits, rng).index;
    }
};

namespace detail {

// Learning-side agent: plays rounds through env_step while taping the
// forward passes it will need for the gradient computation.
class LearnerAgent {
public:
    struct RoundTape {
        PhaseOutputs msg, act;
        bool has_msg = false;
        double reward = 0.0;
    };

    LearnerAgent(PolicyParams params, const LearnConfig& cfg, bool train_comm,
                 bool force_uniform_message)
        : params_(std::move(params)),
          adam_(AdamState::for_params(params_)),
          grads_(make_zero_grads(params_)),
          cfg_(cfg),
          train_comm_(train_comm),
          force_uniform_(force_uniform_message) {}

    int sample_message(const ObsVector& obs, Rng& rng) {
        RoundTape& tape = current();
        if (force_uniform_) {
            tape.has_msg = false;
            return rng.uniform_int(params_.n_messages);
        }
        forward_cached(params_, obs.values, tape.msg.cache);
        const CategoricalDraw draw = sample_categorical(tape.msg.cache.comm_logits, rng);
        tape.msg.sampled = draw.index;
        tape.msg.log_prob = draw.log_prob;
        tape.msg.entropy = draw.entropy;
        tape.has_msg = true;
        return draw.index;
    }

    int sample_action(const ObsVector& obs, Rng& rng) {
        RoundTape& tape = current();
        forward_cached(params_, obs.values, tape.act.cache);
        const CategoricalDraw draw = sample_categorical(tape.act.cache.action_logits, rng);
        tape.act.sampled = draw.index;
        tape.act.log_prob = draw.log_prob;
        tape.act.entropy = draw.entropy;
        return draw.index;
    }

    void record_reward(double r) {
        current().reward = r;
        round_open_ = false;
    }

    // Computes losses and gradient contributions for the taped episode.
    // Returns per-round (loss total, advantage at act phase) for diagnostics.
    struct EpisodeStats {
        std::vector<double> losses;
        std::vector<double> act_advantages;
    };
    EpisodeStats close_episode(const LearnConfig& cfg) {
        EpisodeStats stats;
        const int len = static_cast<int>(tape_.size());
        std::vector<double> rewards(static_cast<size_t>(len));
        std::vector<double> values(static_cast<size_t>(len));
        for (int t = 0; t < len; ++t) {
            rewards[static_cast<size_t>(t)] = tape_[static_cast<size_t>(t)].reward;
            values[static_cast<size_t>(t)] = tape_[static_cast<size_t>(t)].act.cache.value;
        }
        const std::vector<double> returns =
            (cfg.algo == Algo::a2c) ? n_step_return(rewards, values, cfg.n_step, cfg.gamma)
                                    : rewards;  // gamma = 0: the return is the round's reward
        for (int t = 0; t < len; ++t) {
            RoundTape& tape = tape_[static_cast<size_t>(t)];
            const bool comm = train_comm_ && tape.has_msg;
            auto [terms, seeds] = round_loss(tape.msg, tape.act, returns[static_cast<size_t>(t)], cfg, comm);
            const double loss = terms.total(cfg);
            if (!std::isfinite(loss))
                throw std::runtime_error("train: non-finite loss in window " +
                                         std::to_string(rounds_seen_ / kWindowRounds));
            stats.losses.push_back(loss);
            stats.act_advantages.push_back(returns[static_cast<size_t>(t)] - tape.act.cache.value);
            backward_cached(params_, tape.act.cache, seeds.act_phase, grads_);
            if (comm) backward_cached(params_, tape.msg.cache, seeds.msg_phase, grads_);
            rounds_in_batch_ += 1;
            rounds_seen_ += 1;
            if (rounds_in_batch_ == cfg.batch_size) step();
        }
        tape_.clear();
        return stats;
    }

    // Flush a trailing partial batch at the end of training.
    void finish() {
        if (rounds_in_batch_ > 0) step();
    }

    const PolicyParams& params() const { return params_; }
    PolicyParams& params() { return params_; }
    long long optimizer_steps() const { return optimizer_steps_; }

private:
    RoundTape& current() {
        if (!round_open_) {
            tape_.emplace_back();
            round_open_ = true;
        }
        return tape_.back();
    }

    void step() {
        const double scale = 1.0 / static_cast<double>(rounds_in_batch_);
        for (const auto& t : tensor_refs(grads_.arch)) {
            auto& g = grads_.*(t.member);
            for (double& x : g) x *= scale;
        }
        adam_update(params_, grads_, adam_, cfg_.lr);
        zero_grads(grads_);
        rounds_in_batch_ = 0;
        optimizer_steps_ += 1;
    }

    PolicyParams params_;
    AdamState adam_;
    ParamGrads grads_;
    LearnConfig cfg_;
    bool train_comm_;
    bool force_uniform_;
    std::vector<RoundTape> tape_;
    bool round_open_ = false;
    int rounds_in_batch_ = 0;
    long long rounds_seen_ = 0;
    long long optimizer_steps_ = 0;
};

struct WindowAccumulator {
    CooccurrenceMatrix co1, co2;
    std::vector<long long> msg1, msg2;
    double reward_sum1 = 0, reward_sum2 = 0;
    double reward_sq1 = 0, reward_sq2 = 0;
    double adv_sum1 = 0, adv_sum2 = 0;
    double adv_sq1 = 0, adv_sq2 = 0;
    long long adv_rounds = 0;
    long long rounds = 0;

    WindowAccumulator(int n_messages, int n_actions)
        : co1(n_messages, n_actions),
          co2(n_messages, n_actions),
          msg1(static_cast<size_t>(n_messages), 0),
          msg2(static_cast<size_t>(n_messages), 0) {}

    void add(const RoundRecord& rec) {
        co1.add(rec.m1, rec.a1);
        co2.add(rec.m2, rec.a2);
        msg1[static_cast<size_t>(rec.m1)] += 1;
        msg2[static_cast<size_t>(rec.m2)] += 1;
        reward_sum1 += rec.r1;
        reward_sum2 += rec.r2;
        reward_sq1 += rec.r1 * rec.r1;
        reward_sq2 += rec.r2 * rec.r2;
        rounds += 1;
    }
    void add_advantages(double adv1, double adv2) {
        adv_sum1 += adv1;
        adv_sum2 += adv2;
        adv_sq1 += adv1 * adv1;
        adv_sq2 += adv2 * adv2;
        adv_rounds += 1;
    }
};

inline double marginal_entropy(const std::vector<long long>& counts, long long total) {
    if (total <= 0) return 0.0;
    double h = 0.0;
    for (long long c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log(p);
    }
    return h;
}

}  // namespace detail

struct WindowStats {
    long long window_start = 0;
    double reward1 = 0, reward2 = 0;
    double sc1 = 0, sc2 = 0;
    double ent1 = 0, ent2 = 0;
    // Diagnostics, not part of the CSV schema:
    double adv_var1 = 0, adv_var2 = 0;
    double reward_var1 = 0, reward_var2 = 0;
};

// (message, action) co-occurrences pooled over the final rounds of
// training; the across-round pooling is the training-tail estimate of the
// signaling metrics.
struct TailStats {
    long long rounds = 0;
    CooccurrenceMatrix co1, co2;
};

struct TrainLog {
    std::vector<WindowStats> windows;
    TailStats tail;
    long long optimizer_steps1 = 0;
    long long optimizer_steps2 = 0;
};

// How many closing rounds of training feed TailStats.
constexpr long long kTailRounds = 10000;

enum class PairProtocol { standard, truthful_signaler };

struct TrainedPair {
    PolicyParams agent1, agent2;
    GameConfig game;    // effective config (ablation wiring applied)
    LearnConfig learn;
    uint64_t seed = 0;
    PairProtocol protocol = PairProtocol::standard;
};

// Applies the ablation's environment wiring.
inline GameConfig effective_game_config(GameConfig game, const LearnConfig& learn) {
    if (learn.ablation == Ablation::scrambled_c) game.scramble = true;
    return game;
}

inline std::function<PayoffPair()> make_payoff_sampler(const GameConfig& game, Rng& rng) {
    if (game.payoff_mode == PayoffMode::fixed) {
        PayoffPair fixed = fixed_payoffs(game.fixed_game);
        return [fixed]() { return fixed; };
    }
    const int n = game.n_actions;
    const double mean = game.payoff_mean;
    const double var = game.payoff_variance;
    return [&rng, n, mean, var]() { return sample_random_payoffs(rng, n, mean, var); };
}

namespace detail {

template <typename Agent1, typename Agent2>
RoundRecord truthful_step(Agent1& agent1, Agent2& agent2, const PayoffPair& payoffs, Rng& rng,
                          const GameConfig& config) {
    const ObsLayout layout = ObsLayout::from(config);
    RoundRecord rec;
    rec.payoffs = payoffs;
    rec.first_speaker = 1;

    // Agent 1 acts first on a message-free observation; its action index is
    // delivered verbatim as its message.
    const ObsVector obs1 = build_observation(payoffs, 1, Phase::speak_first, layout);
    rec.a1 = agent1.sample_action(obs1, rng);
    check_index(rec.a1, config.n_actions, "action");
    rec.m1 = rec.a1;
    rec.m1_observed = rec.m1;

    const ObsVector msg_obs2 =
        build_observation(payoffs, 2, Phase::speak_second, layout, rec.m1_observed, std::nullopt);
    rec.m2 = agent2.sample_message(msg_obs2, rng);
    check_index(rec.m2, config.n_messages, "message");
    rec.m2_observed = rec.m2;

    const ObsVector act_obs2 =
        build_observation(payoffs, 2, Phase::act, layout, rec.m1_observed, rec.m2_observed);
    rec.a2 = agent2.sample_action(act_obs2, rng);
    check_index(rec.a2, config.n_actions, "action");

    rec.r1 = payoffs.reward1(rec.a1, rec.a2);
    rec.r2 = payoffs.reward2(rec.a1, rec.a2);
    return rec;
}

struct TrainLoopResult {
    PolicyParams agent1, agent2;
    TrainLog log;
};

inline TrainLoopResult run_training(const GameConfig& game_in, const LearnConfig& learn,
                                    uint64_t seed, PairProtocol protocol) {
    game_in.validate();
    learn.validate();
    const GameConfig game = effective_game_config(game_in, learn);
    if (protocol == PairProtocol::truthful_signaler) {
        if (game.n_actions > game.n_messages)
            throw std::invalid_argument(
                "train_truthful_signaler: n_actions must not exceed n_messages");
        if (game.iterated || game.scramble)
            throw std::invalid_argument(
                "train_truthful_signaler: only the plain non-iterated channel is supported");
    }

    const ObsLayout layout = ObsLayout::from(game);
    const int hidden = hidden_width_for(game.n_actions);
    const ArchTag arch =
        (learn.ablation == Ablation::separate_c_net) ? ArchTag::separate_comm : ArchTag::shared;
    const bool train_comm =
        learn.ablation != Ablation::no_c_training && learn.ablation != Ablation::random_c;
    const bool force_uniform = learn.ablation == Ablation::random_c;

    Rng env_rng = make_stream(seed, "env");
    Rng init1 = make_stream(seed, "agent1-init");
    Rng init2 = make_stream(seed, "agent2-init");

    LearnerAgent agent1(init_policy(layout.size(), hidden, game.n_actions, game.n_messages, arch, init1),
                        learn, train_comm && protocol == PairProtocol::standard, force_uniform);
    LearnerAgent agent2(init_policy(layout.size(), hidden, game.n_actions, game.n_messages, arch, init2),
                        learn, train_comm, force_uniform);

    auto sampler = make_payoff_sampler(game, env_rng);
    const int episode_rounds = game.iterated ? kIteratedEpisodeRounds : 1;

    TrainLog log;
    log.tail.co1 = CooccurrenceMatrix(game.n_messages, game.n_actions);
    log.tail.co2 = CooccurrenceMatrix(game.n_messages, game.n_actions);
    const long long tail_from = std::max<long long>(0, learn.episodes - kTailRounds);
    WindowAccumulator window(game.n_messages, game.n_actions);
    long long window_start = 0;

    auto flush_window = [&](long long next_start) {
        if (window.rounds == 0) return;
        const double n = static_cast<double>(window.rounds);
        WindowStats w;
        w.window_start = window_start;
        w.reward1 = window.reward_sum1 / n;
        w.reward2 = window.reward_sum2 / n;
        w.sc1 = mutual_information(window.co1);
        w.sc2 = mutual_information(window.co2);
        w.ent1 = marginal_entropy(window.msg1, window.rounds);
        w.ent2 = marginal_entropy(window.msg2, window.rounds);
        w.reward_var1 = window.reward_sq1 / n - w.reward1 * w.reward1;
        w.reward_var2 = window.reward_sq2 / n - w.reward2 * w.reward2;
        if (window.adv_rounds > 0) {
            const double an = static_cast<double>(window.adv_rounds);
            const double am1 = window.adv_sum1 / an;
            const double am2 = window.adv_sum2 / an;
            w.adv_var1 = window.adv_sq1 / an - am1 * am1;
            w.adv_var2 = window.adv_sq2 / an - am2 * am2;
        }
        log.windows.push_back(w);
        window = WindowAccumulator(game.n_messages, game.n_actions);
        window_start = next_start;
    };

    long long round_index = 0;
    while (round_index < learn.episodes) {
        const int rounds_this_episode =
            static_cast<int>(std::min<long long>(episode_rounds, learn.episodes - round_index));
        MemoryBuffer memory(game.memory_len);
        for (int t = 0; t < rounds_this_episode; ++t) {
            const PayoffPair payoffs = sampler();
            RoundRecord rec;
            if (protocol == PairProtocol::truthful_signaler) {
                rec = truthful_step(agent1, agent2, payoffs, env_rng, game);
            } else {
                rec = env_step(agent1, agent2, payoffs, env_rng, game,
                               game.iterated ? &memory : nullptr);
            }
            agent1.record_reward(rec.r1);
            agent2.record_reward(rec.r2);

            if (round_index + t >= (window_start + kWindowRounds)) flush_window(window_start + kWindowRounds);
            window.add(rec);
            if (round_index + t >= tail_from) {
                log.tail.co1.add(rec.m1, rec.a1);
                log.tail.co2.add(rec.m2, rec.a2);
                log.tail.rounds += 1;
            }
        }
        const auto stats1 = agent1.close_episode(learn);
        const auto stats2 = agent2.close_episode(learn);
        for (size_t t = 0; t < stats1.act_advantages.size(); ++t)
            window.add_advantages(stats1.act_advantages[t], stats2.act_advantages[t]);
        round_index += rounds_this_episode;
    }
    agent1.finish();
    agent2.finish();
    flush_window(round_index);

    TrainLoopResult result{agent1.params(), agent2.params(), std::move(log)};
    result.log.optimizer_steps1 = agent1.optimizer_steps();
    result.log.optimizer_steps2 = agent2.optimizer_steps();
    return result;
}

}  // namespace detail

// Trains both agents with simultaneous batched updates. Deterministic in
// (game, learn, seed).
inline std::pair<TrainedPair, TrainLog> train(const GameConfig& game, const LearnConfig& learn,
                                              uint64_t seed) {
    auto res = detail::run_training(game, learn, seed, PairProtocol::standard);
    TrainedPair pair{std::move(res.agent1), std::move(res.agent2),
                     effective_game_config(game, learn), learn, seed, PairProtocol::standard};
    return {std::move(pair), std::move(res.log)};
}

// Agent 1 acts first and its sampled action is delivered as its message;
// agent 2 trains normally on observations containing that message.
inline std::pair<TrainedPair, TrainLog> train_truthful_signaler(const GameConfig& game,
                                                                const LearnConfig& learn,
                                                                uint64_t seed) {
    auto res = detail::run_training(game, learn, seed, PairProtocol::truthful_signaler);
    TrainedPair pair{std::move(res.agent1), std::move(res.agent2),
                     effective_game_config(game, learn), learn, seed,
                     PairProtocol::truthful_signaler};
    return {std::move(pair), std::move(res.log)};
}

// Plays `n_games` fresh evaluation games with the frozen pair (stochastic
// sampling, ablation wiring preserved). One game is one round when
// non-iterated, kIteratedEpisodeRounds rounds otherwise.
inline std::vector<RoundRecord> evaluate_pair(const TrainedPair& pair, int n_games,
                                              uint64_t master_seed) {
    Rng rng = make_stream(master_seed, "eval");
    const GameConfig& game = pair.game;
    const bool force_uniform = pair.learn.ablation == Ablation::random_c;
    SamplingAgent agent1{&pair.agent1, force_uniform};
    SamplingAgent agent2{&pair.agent2, force_uniform};
    auto sampler = make_payoff_sampler(game, rng);
    const int episode_rounds = game.iterated ? kIteratedEpisodeRounds : 1;

    std::vector<RoundRecord> records;
    records.reserve(static_cast<size_t>(n_games) * episode_rounds);
    for (int g = 0; g < n_games; ++g) {
        MemoryBuffer memory(game.memory_len);
        for (int t = 0; t < episode_rounds; ++t) {
            const PayoffPair payoffs = sampler();
            RoundRecord rec;
            if (pair.protocol == PairProtocol::truthful_signaler) {
                rec = detail::truthful_step(agent1, agent2, payoffs, rng, game);
            } else {
                rec = env_step(agent1, agent2, payoffs, rng, game,
                               game.iterated ? &memory : nullptr);
            }
            rec.episode = g;
            rec.seed = master_seed;
            records.push_back(rec);
        }
    }
    return records;
}

}  // namespace mcglab

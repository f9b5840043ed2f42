#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mcglab/metrics.hpp"
#include "mcglab/training.hpp"
#include "oracles.hpp"

using namespace mcglab;

namespace {

PhaseOutputs make_phase(const PolicyParams& p, const std::vector<double>& obs, bool comm_head,
                        int sampled) {
    PhaseOutputs out;
    forward_cached(p, obs, out.cache);
    const std::vector<double> probs =
        softmax(comm_head ? out.cache.comm_logits : out.cache.action_logits);
    out.sampled = sampled;
    out.log_prob = std::log(probs[static_cast<size_t>(sampled)]);
    out.entropy = entropy_nats(probs);
    return out;
}

std::vector<double> random_vec(int n, Rng& rng) {
    std::vector<double> v(static_cast<size_t>(n));
    for (double& x : v) x = rng.gaussian(0.0, 1.0);
    return v;
}

GameConfig random2x2() {
    GameConfig g;
    g.n_actions = 2;
    g.n_messages = 4;
    return g;
}

LearnConfig quick_learn(long long episodes) {
    LearnConfig l;
    l.episodes = episodes;
    return l;
}

}  // namespace

TEST_CASE("round_loss zero-advantage identities") {
    Rng init(3);
    PolicyParams p = init_policy(6, 8, 2, 4, ArchTag::shared, init);
    Rng rng(4);
    const std::vector<double> obs_msg = random_vec(6, rng);
    const std::vector<double> obs_act = random_vec(6, rng);
    const PhaseOutputs msg = make_phase(p, obs_msg, true, 1);
    const PhaseOutputs act = make_phase(p, obs_act, false, 0);

    LearnConfig cfg;
    const double ret = act.cache.value;  // advantage exactly zero
    auto [terms, seeds] = round_loss(msg, act, ret, cfg, true);
    CHECK(terms.j_pol_a == 0.0);
    CHECK(terms.j_v == 0.0);
    CHECK(terms.j_ent_a == -act.entropy);
    CHECK(seeds.act_phase.d_value == 0.0);
}

TEST_CASE("composite loss gradient matches finite differences through the whole network") {
    Rng init(7);
    Rng rng(8);
    LearnConfig cfg;
    int instances = 0;
    double worst = 0.0;
    for (int trial = 0; trial < 6; ++trial) {
        const ArchTag arch = trial % 2 == 0 ? ArchTag::shared : ArchTag::separate_comm;
        PolicyParams p = init_policy(5, 7, 2, 4, arch, init);
        const std::vector<double> obs_msg = random_vec(5, rng);
        const std::vector<double> obs_act = random_vec(5, rng);
        const int action = rng.uniform_int(2);
        const int msg = rng.uniform_int(4);
        const double ret = rng.gaussian(0.0, 2.0);

        const PhaseOutputs msg_out = make_phase(p, obs_msg, true, msg);
        const PhaseOutputs act_out = make_phase(p, obs_act, false, action);
        auto [terms, seeds] = round_loss(msg_out, act_out, ret, cfg, true);
        CHECK(terms.total(cfg) ==
              doctest::Approx(oracles::composite_surrogate_loss(
                                  p, obs_msg, obs_act, msg, action, ret, cfg,
                                  ret - act_out.cache.value, ret - msg_out.cache.value, true))
                  .epsilon(1e-12));

        ParamGrads analytic = make_zero_grads(p);
        backward_cached(p, act_out.cache, seeds.act_phase, analytic);
        backward_cached(p, msg_out.cache, seeds.msg_phase, analytic);

        const double frozen_adv_a = ret - act_out.cache.value;
        const double frozen_adv_c = ret - msg_out.cache.value;
        for (const auto& t : tensor_refs(p.arch)) {
            auto& tensor = p.*(t.member);
            const auto& grad = analytic.*(t.member);
            for (size_t i = 0; i < tensor.size(); ++i) {
                const double fd = oracles::central_diff(
                    [&] {
                        return oracles::composite_surrogate_loss(p, obs_msg, obs_act, msg, action,
                                                                 ret, cfg, frozen_adv_a,
                                                                 frozen_adv_c, true);
                    },
                    tensor[i], 1e-5);
                const double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-6});
                worst = std::max(worst, std::abs(fd - grad[i]) / denom);
                ++instances;
            }
        }
    }
    CHECK(instances > 0);
    CHECK(worst < 1e-4);
}

TEST_CASE("n-step returns") {
    SUBCASE("gamma zero collapses to the per-round reward") {
        const std::vector<double> r = {1.5, -2.0, 0.25};
        const std::vector<double> v = {9.0, 9.0, 9.0};
        CHECK(n_step_return(r, v, 5, 0.0) == r);
    }
    SUBCASE("terminal five-step sum") {
        const std::vector<double> r = {1, 1, 1, 1, 1};
        const std::vector<double> v = {100, 100, 100, 100, 100};
        const std::vector<double> g = n_step_return(r, v, 5, 0.9);
        CHECK(g[0] == doctest::Approx(4.0951).epsilon(1e-12));
        CHECK(g[4] == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("one-step bootstraps on the next value") {
        const std::vector<double> r = {1.0, 2.0, 3.0};
        const std::vector<double> v = {10.0, 20.0, 30.0};
        const std::vector<double> g = n_step_return(r, v, 1, 0.9);
        CHECK(g[0] == doctest::Approx(1.0 + 0.9 * 20.0));
        CHECK(g[1] == doctest::Approx(2.0 + 0.9 * 30.0));
        CHECK(g[2] == doctest::Approx(3.0));  // no value past the end
    }
}

TEST_CASE("training is deterministic in configs and seed") {
    const GameConfig game = random2x2();
    const LearnConfig learn = quick_learn(3000);
    auto [pair_a, log_a] = train(game, learn, 17);
    auto [pair_b, log_b] = train(game, learn, 17);
    REQUIRE(log_a.windows.size() == log_b.windows.size());
    for (size_t i = 0; i < log_a.windows.size(); ++i) {
        CHECK(log_a.windows[i].reward1 == log_b.windows[i].reward1);
        CHECK(log_a.windows[i].sc1 == log_b.windows[i].sc1);
        CHECK(log_a.windows[i].ent2 == log_b.windows[i].ent2);
    }
    for (const auto& t : tensor_refs(pair_a.agent1.arch))
        CHECK(pair_a.agent1.*(t.member) == pair_b.agent1.*(t.member));
}

TEST_CASE("optimizer steps count matches ceil(episodes / batch)") {
    const GameConfig game = random2x2();
    LearnConfig learn = quick_learn(1000);
    learn.batch_size = 64;
    auto [pair, log] = train(game, learn, 5);
    CHECK(log.optimizer_steps1 == (1000 + 63) / 64);
    CHECK(log.optimizer_steps2 == (1000 + 63) / 64);

    LearnConfig exact = quick_learn(640);
    auto [pair2, log2] = train(game, exact, 5);
    CHECK(log2.optimizer_steps1 == 10);
}

TEST_CASE("no_c_training keeps the comm head bit-identical to initialization") {
    const GameConfig game = random2x2();
    LearnConfig learn = quick_learn(2000);
    learn.ablation = Ablation::no_c_training;
    const uint64_t seed = 23;
    auto [pair, log] = train(game, learn, seed);

    const ObsLayout layout = ObsLayout::from(game);
    Rng init1 = make_stream(seed, "agent1-init");
    const PolicyParams fresh =
        init_policy(layout.size(), hidden_width_for(2), 2, 4, ArchTag::shared, init1);
    CHECK(pair.agent1.wc == fresh.wc);
    CHECK(pair.agent1.bc == fresh.bc);
    // and the trunk did train
    CHECK(pair.agent1.w1 != fresh.w1);
}

TEST_CASE("scrambled_c evaluation severs sent from observed messages") {
    const GameConfig game = random2x2();
    LearnConfig learn = quick_learn(500);
    learn.ablation = Ablation::scrambled_c;
    auto [pair, log] = train(game, learn, 31);
    CHECK(pair.game.scramble);

    const std::vector<RoundRecord> records = evaluate_pair(pair, 8000, 31);
    CooccurrenceMatrix sent_vs_observed(4, 4);
    for (const RoundRecord& r : records) sent_vs_observed.add(r.m1, r.m1_observed);
    CHECK(mutual_information(sent_vs_observed) < 0.01);
}

TEST_CASE("random_c forces uniform messages with no comm training") {
    const GameConfig game = random2x2();
    LearnConfig learn = quick_learn(2000);
    learn.ablation = Ablation::random_c;
    const uint64_t seed = 37;
    auto [pair, log] = train(game, learn, seed);

    const ObsLayout layout = ObsLayout::from(game);
    Rng init2 = make_stream(seed, "agent2-init");
    (void)make_stream(seed, "agent1-init");
    const PolicyParams fresh =
        init_policy(layout.size(), hidden_width_for(2), 2, 4, ArchTag::shared, init2);
    CHECK(pair.agent2.wc == fresh.wc);  // comm head untouched

    const std::vector<RoundRecord> records = evaluate_pair(pair, 6000, seed);
    auto [h1, h2] = message_entropy(records, 4);
    CHECK(h1 == doctest::Approx(std::log(4.0)).epsilon(0.01));
    CHECK(h2 == doctest::Approx(std::log(4.0)).epsilon(0.01));
}

TEST_CASE("truthful signaler wiring") {
    const GameConfig game = random2x2();
    const LearnConfig learn = quick_learn(1000);
    auto [pair, log] = train_truthful_signaler(game, learn, 41);
    CHECK(pair.protocol == PairProtocol::truthful_signaler);

    const std::vector<RoundRecord> records = evaluate_pair(pair, 500, 41);
    for (const RoundRecord& r : records) {
        CHECK(r.m1 == r.a1);
        CHECK(r.first_speaker == 1);
    }

    GameConfig narrow = game;
    narrow.n_messages = 1;
    CHECK_THROWS_AS(train_truthful_signaler(narrow, learn, 1), std::invalid_argument);
}

TEST_CASE("a learned baseline reduces advantage variance below raw reward variance") {
    const GameConfig game = random2x2();
    const LearnConfig learn = quick_learn(30000);
    auto [pair, log] = train(game, learn, 43);
    REQUIRE(log.windows.size() >= 10);
    double adv = 0.0, raw = 0.0;
    for (size_t i = log.windows.size() - 10; i < log.windows.size(); ++i) {
        adv += 0.5 * (log.windows[i].adv_var1 + log.windows[i].adv_var2);
        raw += 0.5 * (log.windows[i].reward_var1 + log.windows[i].reward_var2);
    }
    CHECK(adv / 10.0 < raw / 10.0);
}

TEST_CASE("iterated a2c smoke run") {
    GameConfig game = random2x2();
    game.iterated = true;
    game.memory_len = 5;
    LearnConfig learn = quick_learn(2000);
    learn.algo = Algo::a2c;
    learn.gamma = 0.9;
    learn.n_step = 5;
    auto [pair, log] = train(game, learn, 47);
    CHECK(log.optimizer_steps1 == (2000 + 63) / 64);
    CHECK(pair.agent1.input_dim == ObsLayout::from(game).size());

    const std::vector<RoundRecord> records = evaluate_pair(pair, 10, 47);
    CHECK(records.size() == 10 * kIteratedEpisodeRounds);

    // Determinism holds for the iterated path too.
    auto [pair2, log2] = train(game, learn, 47);
    CHECK(pair.agent2.w1 == pair2.agent2.w1);
}

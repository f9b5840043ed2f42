#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mcglab/policy.hpp"
#include "mcglab/serialize.hpp"
#include "oracles.hpp"

using namespace mcglab;

namespace {

std::vector<double> random_obs(int dim, Rng& rng) {
    std::vector<double> x(static_cast<size_t>(dim));
    for (double& v : x) v = rng.gaussian(0.0, 1.0);
    return x;
}

ObsVector wrap_obs(std::vector<double> values) {
    ObsVector obs;
    obs.values = std::move(values);
    return obs;
}

// Scalar readout L = ga . action_logits + gc . comm_logits + gv * value, the
// exact linear functional whose parameter gradient `backward` claims to
// compute.
double readout(const PolicyParams& p, const std::vector<double>& obs, const HeadGrads& hg) {
    FwdCache cache;
    forward_cached(p, obs, cache);
    double L = hg.d_value * cache.value;
    for (size_t i = 0; i < hg.d_action_logits.size(); ++i)
        L += hg.d_action_logits[i] * cache.action_logits[i];
    for (size_t i = 0; i < hg.d_comm_logits.size(); ++i)
        L += hg.d_comm_logits[i] * cache.comm_logits[i];
    return L;
}

double max_relative_grad_error(PolicyParams& p, const std::vector<double>& obs,
                               const HeadGrads& hg) {
    const ParamGrads analytic = backward(p, wrap_obs(obs), hg);
    double worst = 0.0;
    for (const auto& t : tensor_refs(p.arch)) {
        auto& params_tensor = p.*(t.member);
        const auto& grads_tensor = analytic.*(t.member);
        for (size_t i = 0; i < params_tensor.size(); ++i) {
            const double fd = oracles::central_diff([&] { return readout(p, obs, hg); },
                                                    params_tensor[i], 1e-5);
            const double an = grads_tensor[i];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
            worst = std::max(worst, std::abs(fd - an) / denom);
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("zero network produces uniform heads and zero value") {
    PolicyParams p;
    p.input_dim = 6;
    p.hidden = 8;
    p.n_actions = 2;
    p.n_messages = 4;
    resize_tensors(p);
    Rng rng(1);
    const NetOutputs out = forward(p, wrap_obs(random_obs(6, rng)));
    CHECK(out.value == 0.0);
    const std::vector<double> pa = softmax(out.action_logits);
    for (double x : pa) CHECK(x == doctest::Approx(0.5));
    const std::vector<double> pc = softmax(out.comm_logits);
    for (double x : pc) CHECK(x == doctest::Approx(0.25));
}

TEST_CASE("forward is deterministic and rejects bad widths") {
    Rng init(5);
    PolicyParams p = init_policy(10, 12, 2, 4, ArchTag::shared, init);
    Rng rng(2);
    const std::vector<double> obs = random_obs(10, rng);
    const NetOutputs a = forward(p, wrap_obs(obs));
    const NetOutputs b = forward(p, wrap_obs(obs));
    CHECK(a.action_logits == b.action_logits);
    CHECK(a.comm_logits == b.comm_logits);
    CHECK(a.value == b.value);
    CHECK(a.hidden == b.hidden);

    CHECK_THROWS_WITH_AS(forward(p, wrap_obs(random_obs(9, rng))),
                         doctest::Contains("input"), std::invalid_argument);
}

TEST_CASE("input gradients of each logit match finite differences") {
    Rng init(7);
    PolicyParams p = init_policy(8, 10, 3, 5, ArchTag::shared, init);
    Rng rng(3);
    std::vector<double> obs = random_obs(8, rng);

    for (int head = 0; head < 2; ++head) {
        const int width = head == 0 ? p.n_actions : p.n_messages;
        for (int k = 0; k < width; ++k) {
            HeadGrads hg;
            if (head == 0) {
                hg.d_action_logits.assign(static_cast<size_t>(p.n_actions), 0.0);
                hg.d_action_logits[static_cast<size_t>(k)] = 1.0;
            } else {
                hg.d_comm_logits.assign(static_cast<size_t>(p.n_messages), 0.0);
                hg.d_comm_logits[static_cast<size_t>(k)] = 1.0;
            }
            std::vector<double> obs_grad;
            backward(p, wrap_obs(obs), hg, &obs_grad);
            for (size_t j = 0; j < obs.size(); ++j) {
                const double fd = oracles::central_diff([&] { return readout(p, obs, hg); },
                                                        obs[j], 1e-5);
                const double denom = std::max({std::abs(fd), std::abs(obs_grad[j]), 1e-6});
                CHECK(std::abs(fd - obs_grad[j]) / denom < 1e-4);
            }
        }
    }
}

TEST_CASE("parameter gradients match finite differences") {
    Rng init(11);
    Rng rng(13);
    SUBCASE("shared architecture") {
        PolicyParams p = init_policy(7, 9, 2, 4, ArchTag::shared, init);
        HeadGrads hg;
        hg.d_action_logits = {0.7, -1.2};
        hg.d_comm_logits = {0.3, -0.4, 1.1, 0.2};
        hg.d_value = -0.9;
        CHECK(max_relative_grad_error(p, random_obs(7, rng), hg) < 1e-4);
    }
    SUBCASE("separate comm architecture") {
        PolicyParams p = init_policy(7, 9, 2, 4, ArchTag::separate_comm, init);
        HeadGrads hg;
        hg.d_action_logits = {-0.5, 0.8};
        hg.d_comm_logits = {1.0, -0.2, 0.4, -1.3};
        hg.d_value = 0.6;
        CHECK(max_relative_grad_error(p, random_obs(7, rng), hg) < 1e-4);
    }
}

TEST_CASE("zero head gradients give zero parameter gradients") {
    Rng init(17);
    PolicyParams p = init_policy(5, 6, 2, 4, ArchTag::shared, init);
    Rng rng(19);
    const ParamGrads g = backward(p, wrap_obs(random_obs(5, rng)), HeadGrads{});
    for (const auto& t : tensor_refs(p.arch))
        for (double x : g.*(t.member)) CHECK(x == 0.0);
}

TEST_CASE("separate comm trunk isolates communication gradients") {
    Rng init(23);
    PolicyParams p = init_policy(6, 8, 2, 4, ArchTag::separate_comm, init);
    Rng rng(29);
    HeadGrads hg;
    hg.d_comm_logits = {0.5, -0.5, 1.0, -1.0};
    const ParamGrads g = backward(p, wrap_obs(random_obs(6, rng)), hg);
    for (double x : g.w1) CHECK(x == 0.0);
    for (double x : g.b1) CHECK(x == 0.0);
    for (double x : g.w2) CHECK(x == 0.0);
    for (double x : g.b2) CHECK(x == 0.0);
    for (double x : g.wa) CHECK(x == 0.0);
    for (double x : g.ba) CHECK(x == 0.0);
    for (double x : g.wv) CHECK(x == 0.0);
    CHECK(g.bv[0] == 0.0);
    double comm_norm = 0.0;
    for (double x : g.cw1) comm_norm += x * x;
    for (double x : g.wc) comm_norm += x * x;
    CHECK(comm_norm > 0.0);
}

TEST_CASE("categorical sampling") {
    Rng rng(31);
    SUBCASE("uniform logits have entropy ln 4") {
        const CategoricalDraw d = sample_categorical({0, 0, 0, 0}, rng);
        CHECK(d.entropy == doctest::Approx(std::log(4.0)).epsilon(1e-12));
        CHECK(d.log_prob == doctest::Approx(std::log(0.25)).epsilon(1e-12));
    }
    SUBCASE("a 20-logit gap is effectively deterministic") {
        int zeros = 0;
        for (int i = 0; i < 10000; ++i)
            if (sample_categorical({10, -10}, rng).index == 0) ++zeros;
        CHECK(zeros > 9990);
    }
    SUBCASE("empirical frequencies match softmax") {
        const std::vector<double> logits = {0.3, -0.7, 1.1};
        const std::vector<double> target = softmax(logits);
        std::vector<int> counts(3, 0);
        const int draws = 100000;
        for (int i = 0; i < draws; ++i) counts[sample_categorical(logits, rng).index] += 1;
        for (int k = 0; k < 3; ++k)
            CHECK(std::abs(static_cast<double>(counts[k]) / draws - target[k]) < 0.01);
    }
    SUBCASE("NaN logits are a numeric error") {
        CHECK_THROWS_AS(sample_categorical({0.0, std::nan("")}, rng), std::runtime_error);
    }
}

TEST_CASE("softmax probabilities are normalized and entropy is bounded") {
    Rng rng(37);
    for (int trial = 0; trial < 200; ++trial) {
        const int k = 2 + rng.uniform_int(9);
        std::vector<double> logits(static_cast<size_t>(k));
        for (double& z : logits) z = rng.gaussian(0.0, 5.0);
        const std::vector<double> p = softmax(logits);
        double sum = 0.0;
        for (double x : p) sum += x;
        CHECK(std::abs(sum - 1.0) < 1e-12);
        const double h = entropy_nats(p);
        CHECK(h >= 0.0);
        CHECK(h <= std::log(static_cast<double>(k)) + 1e-12);
    }
}

TEST_CASE("adam") {
    Rng init(41);
    PolicyParams p = init_policy(4, 5, 2, 3, ArchTag::shared, init);
    AdamState state = AdamState::for_params(p);

    SUBCASE("zero gradient leaves parameters untouched") {
        const PolicyParams before = p;
        adam_update(p, make_zero_grads(p), state, 0.005);
        for (const auto& t : tensor_refs(p.arch)) CHECK(p.*(t.member) == before.*(t.member));
    }

    SUBCASE("first step moves each entry by about lr in the gradient's direction") {
        ParamGrads g = make_zero_grads(p);
        Rng rng(43);
        for (auto& x : g.w1) x = rng.gaussian(0.0, 1.0);
        const PolicyParams before = p;
        const double lr = 0.005;
        adam_update(p, g, state, lr);
        for (size_t i = 0; i < p.w1.size(); ++i) {
            const double gi = g.w1[i];
            if (std::abs(gi) < 1e-3) continue;  // eps matters for tiny gradients
            const double delta = p.w1[i] - before.w1[i];
            CHECK(delta == doctest::Approx(-lr * (gi > 0 ? 1.0 : -1.0)).epsilon(1e-4));
        }
    }

    SUBCASE("identical calls from identical states match exactly") {
        ParamGrads g = make_zero_grads(p);
        Rng rng(47);
        for (auto& x : g.w2) x = rng.gaussian(0.0, 1.0);
        PolicyParams p2 = p;
        AdamState s2 = AdamState::for_params(p2);
        adam_update(p, g, state, 0.005);
        adam_update(p2, g, s2, 0.005);
        for (const auto& t : tensor_refs(p.arch)) CHECK(p.*(t.member) == p2.*(t.member));
    }
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    Rng init(53);
    for (ArchTag arch : {ArchTag::shared, ArchTag::separate_comm}) {
        PolicyParams p = init_policy(16, 40, 2, 4, arch, init);
        const auto path = std::filesystem::temp_directory_path() /
                          ("mcglab_ckpt_" + std::string(to_string(arch)) + ".json");
        save_checkpoint(p, path);
        const PolicyParams q = load_checkpoint(path);
        CHECK(q.input_dim == p.input_dim);
        CHECK(q.hidden == p.hidden);
        CHECK(q.n_actions == p.n_actions);
        CHECK(q.n_messages == p.n_messages);
        CHECK(q.arch == p.arch);
        for (const auto& t : tensor_refs(p.arch)) CHECK(q.*(t.member) == p.*(t.member));
        std::filesystem::remove(path);
    }
}

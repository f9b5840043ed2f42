#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mcglab/probes.hpp"
#include "oracles.hpp"

using namespace mcglab;

namespace {

TrainedPair tiny_pair(uint64_t seed) {
    GameConfig game;
    game.n_actions = 2;
    game.n_messages = 4;
    game.payoff_variance = 9.0;
    LearnConfig learn;
    learn.episodes = 2000;
    auto [pair, log] = train(game, learn, seed);
    return pair;
}

ActivationMatrix matrix_from(const std::vector<std::vector<double>>& rows,
                             std::vector<int> actions) {
    ActivationMatrix m;
    m.rows = static_cast<int>(rows.size());
    m.cols = static_cast<int>(rows.front().size());
    for (const auto& r : rows) m.data.insert(m.data.end(), r.begin(), r.end());
    m.actions = std::move(actions);
    return m;
}

}  // namespace

TEST_CASE("probe dataset collection") {
    const TrainedPair pair = tiny_pair(3);
    const ObsLayout layout = ObsLayout::from(pair.game);

    SUBCASE("from_input features are full observations; width checks out") {
        const ProbeDataset ds =
            collect_probe_dataset(pair, 300, {ProbeSource::from_input, true}, 1, 7);
        CHECK(ds.feature_width == 2 * 4 + 2 * 4);
        CHECK(ds.inputs.size() == 300);
        CHECK(ds.train_idx.size() + ds.heldout_idx.size() == 300);
        CHECK(ds.heldout_idx.size() == 60);
    }

    SUBCASE("with_message = false zeroes exactly the opponent's slot") {
        const ProbeDataset ds =
            collect_probe_dataset(pair, 200, {ProbeSource::from_input, false}, 1, 7);
        const int begin = layout.msg_begin(2);
        for (const auto& x : ds.inputs)
            for (int j = 0; j < layout.m; ++j) CHECK(x[static_cast<size_t>(begin + j)] == 0.0);
        // own slot still carries a one-hot
        double own_mass = 0.0;
        for (const auto& x : ds.inputs)
            for (int j = 0; j < layout.m; ++j) own_mass += x[static_cast<size_t>(layout.msg_begin(1) + j)];
        CHECK(own_mass == doctest::Approx(200.0));
    }

    SUBCASE("labels reproduce the opponent's logged action frequencies") {
        const std::vector<RoundRecord> records = evaluate_pair(pair, 400, 7);
        const ProbeDataset ds =
            collect_probe_dataset(pair, 400, {ProbeSource::from_input, true}, 1, 7);
        std::vector<int> from_records(2, 0), from_labels(2, 0);
        for (const auto& r : records) from_records[static_cast<size_t>(r.a2)] += 1;
        for (int y : ds.labels) from_labels[static_cast<size_t>(y)] += 1;
        CHECK(from_records == from_labels);
    }

    SUBCASE("from_hidden features have the trunk width") {
        const ProbeDataset ds =
            collect_probe_dataset(pair, 150, {ProbeSource::from_hidden, true}, 2, 7);
        CHECK(ds.feature_width == 40);
    }

    SUBCASE("too few games is an error") {
        CHECK_THROWS_AS(collect_probe_dataset(pair, 1, {ProbeSource::from_input, true}, 1, 7),
                        std::invalid_argument);
    }
}

TEST_CASE("probe training behaviour") {
    Rng rng(11);
    SUBCASE("labels independent of features leave accuracy at chance") {
        ProbeDataset ds;
        ds.variant = {ProbeSource::from_hidden, true};
        ds.n_classes = 2;
        ds.feature_width = 6;
        for (int i = 0; i < 2000; ++i) {
            std::vector<double> x(6);
            for (double& v : x) v = rng.gaussian(0.0, 1.0);
            ds.inputs.push_back(x);
            ds.labels.push_back(rng.uniform_int(2));
        }
        for (int i = 0; i < 1600; ++i) ds.train_idx.push_back(i);
        for (int i = 1600; i < 2000; ++i) ds.heldout_idx.push_back(i);
        const ProbeCurve curve = train_probe(ds, ProbeKind::linear, 5);
        CHECK(std::abs(curve.points.back().accuracy - 0.5) < 0.05);
    }

    SUBCASE("a label embedded verbatim is learned nearly perfectly") {
        ProbeDataset ds;
        ds.variant = {ProbeSource::from_hidden, true};
        ds.n_classes = 2;
        ds.feature_width = 5;
        for (int i = 0; i < 1500; ++i) {
            const int y = rng.uniform_int(2);
            std::vector<double> x(5);
            for (double& v : x) v = rng.gaussian(0.0, 0.3);
            x[0] = y == 0 ? -1.0 : 1.0;
            ds.inputs.push_back(x);
            ds.labels.push_back(y);
        }
        for (int i = 0; i < 1200; ++i) ds.train_idx.push_back(i);
        for (int i = 1200; i < 1500; ++i) ds.heldout_idx.push_back(i);
        const ProbeCurve curve = train_probe(ds, ProbeKind::linear, 5);
        CHECK(curve.points.back().accuracy > 0.99);
    }

    SUBCASE("a single-class dataset reports accuracy 1.0 with a warning") {
        ProbeDataset ds;
        ds.variant = {ProbeSource::from_input, true};
        ds.n_classes = 2;
        ds.feature_width = 3;
        for (int i = 0; i < 100; ++i) {
            ds.inputs.push_back({1.0, 0.0, 0.0});
            ds.labels.push_back(1);
        }
        for (int i = 0; i < 80; ++i) ds.train_idx.push_back(i);
        for (int i = 80; i < 100; ++i) ds.heldout_idx.push_back(i);
        const ProbeCurve curve = train_probe(ds, ProbeKind::mlp, 5);
        CHECK(!curve.warnings.empty());
        CHECK(curve.points.back().accuracy == 1.0);
    }

    SUBCASE("probe kind must match the feature source") {
        ProbeDataset ds;
        ds.variant = {ProbeSource::from_input, true};
        CHECK_THROWS_AS(train_probe(ds, ProbeKind::linear, 5), std::invalid_argument);
    }
}

TEST_CASE("activation collection") {
    const TrainedPair pair = tiny_pair(13);
    const ActivationMatrix m = collect_activations(pair, 1, 100, 17);
    CHECK(m.rows == 100);
    CHECK(m.cols == 40);
    CHECK(m.actions.size() == 100);
    const ActivationMatrix m2 = collect_activations(pair, 1, 100, 17);
    CHECK(m.data == m2.data);  // same seed, same games, same rows
    CHECK_THROWS_AS(collect_activations(pair, 1, 100, 17, TrunkChoice::comm_trunk),
                    std::invalid_argument);
}

TEST_CASE("pca") {
    Rng rng(19);

    SUBCASE("rank-2 data yields a vanishing third component") {
        std::vector<std::vector<double>> rows;
        std::vector<int> actions;
        for (int i = 0; i < 200; ++i) {
            const double a = rng.gaussian(0.0, 2.0);
            const double b = rng.gaussian(0.0, 1.0);
            // 5-D points confined to a 2-D affine subspace
            rows.push_back({a + 1.0, b - 2.0, a + b, a - b, 0.5 * a});
            actions.push_back(0);
        }
        const PcaResult res = pca_project(matrix_from(rows, actions), 3);
        if (res.k == 3) {
            CHECK(res.explained_frac[2] < 1e-10);
        } else {
            CHECK(res.k == 2);
            CHECK(!res.warnings.empty());
        }
    }

    SUBCASE("isotropic cloud spreads variance evenly") {
        std::vector<std::vector<double>> rows;
        std::vector<int> actions;
        for (int i = 0; i < 4000; ++i) {
            std::vector<double> x(4);
            for (double& v : x) v = rng.gaussian(0.0, 1.0);
            rows.push_back(x);
            actions.push_back(0);
        }
        const PcaResult res = pca_project(matrix_from(rows, actions), 3);
        for (double f : res.explained_frac) {
            CHECK(f > 0.18);
            CHECK(f < 0.32);
        }
    }

    SUBCASE("explained variance matches a full eigendecomposition oracle") {
        std::vector<std::vector<double>> rows;
        std::vector<int> actions;
        const int d = 8;
        for (int i = 0; i < 300; ++i) {
            std::vector<double> x(d);
            double base = rng.gaussian(0.0, 3.0);
            for (int j = 0; j < d; ++j) x[j] = base * (j % 3 == 0 ? 1.0 : 0.2) + rng.gaussian(0.0, 0.5 + 0.1 * j);
            rows.push_back(x);
            actions.push_back(0);
        }
        const ActivationMatrix mat = matrix_from(rows, actions);
        const PcaResult res = pca_project(mat, 3);

        // Oracle: covariance + Jacobi eigenvalues.
        std::vector<double> mean(d, 0.0);
        for (const auto& r : rows)
            for (int j = 0; j < d; ++j) mean[j] += r[j] / rows.size();
        std::vector<double> cov(d * d, 0.0);
        for (const auto& r : rows)
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j)
                    cov[i * d + j] += (r[i] - mean[i]) * (r[j] - mean[j]) / (rows.size() - 1.0);
        double trace = 0.0;
        for (int i = 0; i < d; ++i) trace += cov[i * d + i];
        const std::vector<double> eig = oracles::jacobi_eigenvalues(cov, d);
        for (int c = 0; c < 3; ++c)
            CHECK(std::abs(res.explained_frac[c] - eig[c] / trace) < 1e-8);
    }

    SUBCASE("components are orthonormal with non-increasing variance and positive peak loading") {
        std::vector<std::vector<double>> rows;
        std::vector<int> actions;
        for (int i = 0; i < 500; ++i) {
            std::vector<double> x(6);
            for (int j = 0; j < 6; ++j) x[j] = rng.gaussian(0.0, 1.0 + j);
            rows.push_back(x);
            actions.push_back(i % 2);
        }
        const PcaResult res = pca_project(matrix_from(rows, actions), 4);
        for (int a = 0; a < res.k; ++a) {
            double norm = 0.0;
            for (int j = 0; j < 6; ++j) norm += res.components[a * 6 + j] * res.components[a * 6 + j];
            CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-8);
            for (int b = a + 1; b < res.k; ++b) {
                double dot = 0.0;
                for (int j = 0; j < 6; ++j) dot += res.components[a * 6 + j] * res.components[b * 6 + j];
                CHECK(std::abs(dot) < 1e-8);
            }
            int arg = 0;
            for (int j = 1; j < 6; ++j)
                if (std::abs(res.components[a * 6 + j]) > std::abs(res.components[a * 6 + arg])) arg = j;
            CHECK(res.components[a * 6 + arg] > 0.0);
        }
        for (int c = 1; c < res.k; ++c) CHECK(res.explained_frac[c] <= res.explained_frac[c - 1] + 1e-12);
        CHECK_THROWS_AS(pca_project(matrix_from(rows, actions), 501), std::invalid_argument);
    }

    SUBCASE("separation ratio is 1 for perfectly split clusters and small for mixed ones") {
        std::vector<std::vector<double>> rows;
        std::vector<int> actions;
        for (int i = 0; i < 400; ++i) {
            const int y = i % 2;
            rows.push_back({y == 0 ? -5.0 : 5.0, 0.0, 0.0});
            actions.push_back(y);
        }
        const PcaResult res = pca_project(matrix_from(rows, actions), 1);
        CHECK(action_class_separation(res, actions) == doctest::Approx(1.0).epsilon(1e-9));
    }
}

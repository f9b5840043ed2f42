#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcglab/metrics.hpp"
#include "mcglab/probes.hpp"
#include "mcglab/serialize.hpp"
#include "mcglab/training.hpp"

namespace mcglab {

// Configuration problems map to exit code 2 at the CLI.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline const std::vector<std::string>& known_metrics() {
    static const std::vector<std::string> names = {"reward", "sc", "ic", "entropy",
                                                   "ci",     "cic", "min"};
    return names;
}

struct ExperimentSpec {
    GameConfig game;
    LearnConfig learn;
    PairProtocol protocol = PairProtocol::standard;
    std::vector<uint64_t> seeds;
    int eval_games = 1000;
    std::vector<std::string> metrics = known_metrics();
    std::string output_dir;
    double cic_eps = 0.02;  // per-game CIC "no influence" threshold

    void validate() const {
        game.validate();
        learn.validate();
        if (seeds.empty()) throw ConfigError("spec: seeds must be nonempty");
        std::set<uint64_t> uniq(seeds.begin(), seeds.end());
        if (uniq.size() != seeds.size()) throw ConfigError("spec: duplicate seeds");
        if (!metrics.empty() && eval_games < 100)
            throw ConfigError("spec: eval_games must be >= 100 for metric reports");
        if (eval_games < 1) throw ConfigError("spec: eval_games must be >= 1");
        for (const auto& m : metrics)
            if (std::find(known_metrics().begin(), known_metrics().end(), m) ==
                known_metrics().end())
                throw ConfigError("spec: unknown metric '" + m + "'");
        if (output_dir.empty()) throw ConfigError("spec: output_dir is required");
    }
};

inline int default_messages_for(int n_actions) {
    switch (n_actions) {
        case 2: return 4;
        case 4: return 6;
        case 8: return 10;
        default:
            throw ConfigError("no default channel size for n_actions = " +
                              std::to_string(n_actions) + "; set n_messages explicitly");
    }
}

// --- Config text parsing -----------------------------------------------------
//
// Flat INI-style sections [game], [learn], [run]; # and ; start comments.
// Unknown keys are rejected with the offending line number. Unset keys take
// the standard experiment defaults.

namespace detail {

struct RawConfig {
    // section -> key -> (value, line number)
    std::map<std::string, std::map<std::string, std::pair<std::string, int>>> sections;
};

inline std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    size_t e = s.find_last_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, e - b + 1);
}

inline RawConfig parse_raw_config(const std::string& text) {
    RawConfig raw;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t comment = line.find_first_of("#;");
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section != "game" && section != "learn" && section != "run")
                throw ConfigError("line " + std::to_string(lineno) + ": unknown section [" +
                                  section + "]");
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        if (section.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        if (raw.sections[section].count(key))
            throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        raw.sections[section][key] = {value, lineno};
    }
    return raw;
}

struct KeyReader {
    std::map<std::string, std::pair<std::string, int>> entries;
    std::set<std::string> consumed;
    std::string section;

    std::optional<std::pair<std::string, int>> take(const std::string& key) {
        auto it = entries.find(key);
        if (it == entries.end()) return std::nullopt;
        consumed.insert(key);
        return it->second;
    }

    void finish() const {
        for (const auto& [key, value] : entries) {
            if (!consumed.count(key))
                throw ConfigError("line " + std::to_string(value.second) + ": unknown key '" + key +
                                  "' in [" + section + "]");
        }
    }
};

inline ConfigError type_error(const std::string& key, int line, const char* expected) {
    return ConfigError("line " + std::to_string(line) + ": key '" + key + "' expects " + expected);
}

inline double parse_double(const std::string& key, const std::pair<std::string, int>& v) {
    try {
        size_t pos = 0;
        double d = std::stod(v.first, &pos);
        if (pos != v.first.size()) throw std::invalid_argument("");
        return d;
    } catch (...) {
        throw type_error(key, v.second, "a number");
    }
}

inline long long parse_int(const std::string& key, const std::pair<std::string, int>& v) {
    try {
        size_t pos = 0;
        long long i = std::stoll(v.first, &pos);
        if (pos != v.first.size()) throw std::invalid_argument("");
        return i;
    } catch (...) {
        throw type_error(key, v.second, "an integer");
    }
}

inline bool parse_bool(const std::string& key, const std::pair<std::string, int>& v) {
    if (v.first == "true" || v.first == "1" || v.first == "yes") return true;
    if (v.first == "false" || v.first == "0" || v.first == "no") return false;
    throw type_error(key, v.second, "a boolean (true/false)");
}

inline std::vector<std::string> parse_list(const std::string& key,
                                           const std::pair<std::string, int>& v) {
    std::string body = v.first;
    if (!body.empty() && body.front() == '[') {
        if (body.back() != ']') throw type_error(key, v.second, "a [a, b, ...] list");
        body = body.substr(1, body.size() - 2);
    }
    std::vector<std::string> items;
    std::istringstream in(body);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) items.push_back(item);
    }
    return items;
}

}  // namespace detail

inline ExperimentSpec parse_config(const std::string& text) {
    detail::RawConfig raw = detail::parse_raw_config(text);
    ExperimentSpec spec;

    detail::KeyReader game{raw.sections["game"], {}, "game"};
    bool n_messages_set = false;
    if (auto v = game.take("n_actions")) spec.game.n_actions = static_cast<int>(detail::parse_int("n_actions", *v));
    if (auto v = game.take("n_messages")) {
        spec.game.n_messages = static_cast<int>(detail::parse_int("n_messages", *v));
        n_messages_set = true;
    }
    if (auto v = game.take("payoff_mode")) {
        if (v->first == "randomized")
            spec.game.payoff_mode = PayoffMode::randomized;
        else if (v->first == "fixed")
            spec.game.payoff_mode = PayoffMode::fixed;
        else
            throw detail::type_error("payoff_mode", v->second, "'randomized' or 'fixed'");
    }
    if (auto v = game.take("payoff_mean")) spec.game.payoff_mean = detail::parse_double("payoff_mean", *v);
    if (auto v = game.take("payoff_variance")) spec.game.payoff_variance = detail::parse_double("payoff_variance", *v);
    if (auto v = game.take("fixed_game")) spec.game.fixed_game = v->first;
    bool iterated_set = false;
    if (auto v = game.take("iterated")) {
        spec.game.iterated = detail::parse_bool("iterated", *v);
        iterated_set = true;
    }
    bool memory_set = false;
    if (auto v = game.take("memory_len")) {
        spec.game.memory_len = static_cast<int>(detail::parse_int("memory_len", *v));
        memory_set = true;
    }
    if (auto v = game.take("scramble")) spec.game.scramble = detail::parse_bool("scramble", *v);
    if (auto v = game.take("message_cost")) spec.game.message_cost = detail::parse_double("message_cost", *v);
    game.finish();

    if (!n_messages_set) spec.game.n_messages = default_messages_for(spec.game.n_actions);
    if (spec.game.iterated && !memory_set) spec.game.memory_len = 5;
    (void)iterated_set;

    detail::KeyReader learn{raw.sections["learn"], {}, "learn"};
    if (auto v = learn.take("lambda_c")) spec.learn.lambda_c = detail::parse_double("lambda_c", *v);
    if (auto v = learn.take("lambda_ent")) spec.learn.lambda_ent = detail::parse_double("lambda_ent", *v);
    if (auto v = learn.take("lambda_v")) spec.learn.lambda_v = detail::parse_double("lambda_v", *v);
    if (auto v = learn.take("lr")) spec.learn.lr = detail::parse_double("lr", *v);
    if (auto v = learn.take("batch_size")) spec.learn.batch_size = static_cast<int>(detail::parse_int("batch_size", *v));
    bool gamma_set = false;
    if (auto v = learn.take("gamma")) {
        spec.learn.gamma = detail::parse_double("gamma", *v);
        gamma_set = true;
    }
    if (auto v = learn.take("n_step")) spec.learn.n_step = static_cast<int>(detail::parse_int("n_step", *v));
    if (auto v = learn.take("episodes")) spec.learn.episodes = detail::parse_int("episodes", *v);
    bool algo_set = false;
    if (auto v = learn.take("algo")) {
        if (v->first == "reinforce")
            spec.learn.algo = Algo::reinforce;
        else if (v->first == "a2c")
            spec.learn.algo = Algo::a2c;
        else
            throw detail::type_error("algo", v->second, "'reinforce' or 'a2c'");
        algo_set = true;
    }
    if (auto v = learn.take("ablation")) {
        const std::string& a = v->first;
        if (a == "none") spec.learn.ablation = Ablation::none;
        else if (a == "scrambled_c") spec.learn.ablation = Ablation::scrambled_c;
        else if (a == "separate_c_net") spec.learn.ablation = Ablation::separate_c_net;
        else if (a == "no_c_training") spec.learn.ablation = Ablation::no_c_training;
        else if (a == "random_c") spec.learn.ablation = Ablation::random_c;
        else
            throw detail::type_error("ablation", v->second,
                                     "one of none/scrambled_c/separate_c_net/no_c_training/random_c");
    }
    learn.finish();

    if (spec.game.iterated) {
        if (!gamma_set) spec.learn.gamma = 0.9;
        if (!algo_set) spec.learn.algo = Algo::a2c;
    }

    detail::KeyReader run{raw.sections["run"], {}, "run"};
    if (auto v = run.take("seeds")) {
        spec.seeds.clear();
        for (const std::string& s : detail::parse_list("seeds", *v)) {
            try {
                spec.seeds.push_back(std::stoull(s));
            } catch (...) {
                throw detail::type_error("seeds", v->second, "a list of integers");
            }
        }
        std::set<uint64_t> uniq(spec.seeds.begin(), spec.seeds.end());
        if (uniq.size() != spec.seeds.size())
            throw ConfigError("line " + std::to_string(v->second) + ": duplicate seeds");
    }
    if (auto v = run.take("eval_games")) spec.eval_games = static_cast<int>(detail::parse_int("eval_games", *v));
    if (auto v = run.take("metrics")) {
        spec.metrics = detail::parse_list("metrics", *v);
        for (const auto& m : spec.metrics)
            if (std::find(known_metrics().begin(), known_metrics().end(), m) == known_metrics().end())
                throw ConfigError("line " + std::to_string(v->second) + ": unknown metric '" + m + "'");
    }
    if (auto v = run.take("output_dir")) spec.output_dir = v->first;
    if (auto v = run.take("cic_eps")) spec.cic_eps = detail::parse_double("cic_eps", *v);
    if (auto v = run.take("protocol")) {
        if (v->first == "standard")
            spec.protocol = PairProtocol::standard;
        else if (v->first == "truthful_signaler")
            spec.protocol = PairProtocol::truthful_signaler;
        else
            throw detail::type_error("protocol", v->second, "'standard' or 'truthful_signaler'");
    }
    run.finish();

    try {
        spec.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    return spec;
}

// --- Spec canonicalization and hashing ----------------------------------------

inline std::string canonical_spec_text(const ExperimentSpec& spec) {
    std::string s;
    s += "[game]\n";
    s += "n_actions = " + std::to_string(spec.game.n_actions) + "\n";
    s += "n_messages = " + std::to_string(spec.game.n_messages) + "\n";
    s += std::string("payoff_mode = ") +
         (spec.game.payoff_mode == PayoffMode::randomized ? "randomized" : "fixed") + "\n";
    if (spec.game.payoff_mode == PayoffMode::randomized) {
        s += "payoff_mean = " + fmt_g17(spec.game.payoff_mean) + "\n";
        s += "payoff_variance = " + fmt_g17(spec.game.payoff_variance) + "\n";
    } else {
        s += "fixed_game = " + spec.game.fixed_game + "\n";
    }
    s += std::string("iterated = ") + (spec.game.iterated ? "true" : "false") + "\n";
    if (spec.game.iterated) s += "memory_len = " + std::to_string(spec.game.memory_len) + "\n";
    s += std::string("scramble = ") + (spec.game.scramble ? "true" : "false") + "\n";
    s += "\n[learn]\n";
    s += "lambda_c = " + fmt_g17(spec.learn.lambda_c) + "\n";
    s += "lambda_ent = " + fmt_g17(spec.learn.lambda_ent) + "\n";
    s += "lambda_v = " + fmt_g17(spec.learn.lambda_v) + "\n";
    s += "lr = " + fmt_g17(spec.learn.lr) + "\n";
    s += "batch_size = " + std::to_string(spec.learn.batch_size) + "\n";
    s += "gamma = " + fmt_g17(spec.learn.gamma) + "\n";
    s += "n_step = " + std::to_string(spec.learn.n_step) + "\n";
    s += "episodes = " + std::to_string(spec.learn.episodes) + "\n";
    s += std::string("algo = ") + to_string(spec.learn.algo) + "\n";
    s += std::string("ablation = ") + to_string(spec.learn.ablation) + "\n";
    s += "\n[run]\n";
    s += std::string("protocol = ") +
         (spec.protocol == PairProtocol::standard ? "standard" : "truthful_signaler") + "\n";
    s += "eval_games = " + std::to_string(spec.eval_games) + "\n";
    s += "cic_eps = " + fmt_g17(spec.cic_eps) + "\n";
    s += "metrics = [";
    for (size_t i = 0; i < spec.metrics.size(); ++i) {
        if (i) s += ", ";
        s += spec.metrics[i];
    }
    s += "]\n";
    return s;
}

// Hash covers everything that affects per-seed results. The seed list and
// output_dir are excluded: seeds live in their own subdirectories, so a run
// interrupted after k seeds resumes cleanly.
inline uint64_t spec_hash(const ExperimentSpec& spec) {
    return detail::fnv1a(canonical_spec_text(spec));
}

// --- Per-seed runs and aggregation ---------------------------------------------

using MetricKey = std::pair<std::string, std::string>;  // (metric, agent) with agent 1/2/avg

struct Aggregate {
    double mean = 0.0;
    double std_err = 0.0;
    int n_seeds = 0;
};

struct ResultBundle {
    ExperimentSpec spec;
    uint64_t hash = 0;
    std::string cell_name;
    std::map<MetricKey, std::vector<double>> per_seed;  // values ordered as spec.seeds
    std::map<MetricKey, Aggregate> aggregate;
};

namespace detail {

inline Aggregate aggregate_values(const std::vector<double>& xs) {
    Aggregate a;
    a.n_seeds = static_cast<int>(xs.size());
    if (xs.empty()) return a;
    double sum = 0.0;
    for (double x : xs) sum += x;
    a.mean = sum / static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - a.mean) * (x - a.mean);
        const double var = ss / static_cast<double>(xs.size() - 1);
        a.std_err = std::sqrt(var / static_cast<double>(xs.size()));
    }
    return a;
}

inline std::string metrics_csv(const std::vector<std::pair<MetricKey, double>>& rows) {
    std::string out = "metric,agent,value\n";
    for (const auto& [key, value] : rows)
        out += key.first + "," + key.second + "," + fmt_g17(value) + "\n";
    return out;
}

inline std::vector<std::pair<MetricKey, double>> parse_metrics_csv(const std::string& text) {
    std::vector<std::pair<MetricKey, double>> rows;
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const size_t c1 = line.find(',');
        const size_t c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw std::runtime_error("metrics csv: malformed line '" + line + "'");
        rows.push_back({{line.substr(0, c1), line.substr(c1 + 1, c2 - c1 - 1)},
                        std::stod(line.substr(c2 + 1))});
    }
    return rows;
}

inline void push_metric(std::vector<std::pair<MetricKey, double>>& rows, const std::string& metric,
                        double v1, double v2) {
    rows.push_back({{metric, "1"}, v1});
    rows.push_back({{metric, "2"}, v2});
    rows.push_back({{metric, "avg"}, 0.5 * (v1 + v2)});
}

}  // namespace detail

// Trains, evaluates and measures one seed, writing everything into seed_dir.
// Returns the per-seed metric rows.
inline std::vector<std::pair<MetricKey, double>> run_seed(const ExperimentSpec& spec, uint64_t seed,
                                                          const std::filesystem::path& seed_dir) {
    std::filesystem::create_directories(seed_dir);
    auto [pair, log] = (spec.protocol == PairProtocol::truthful_signaler)
                           ? train_truthful_signaler(spec.game, spec.learn, seed)
                           : train(spec.game, spec.learn, seed);
    save_trainlog(log, seed_dir / "trainlog.csv");
    save_checkpoint(pair.agent1, seed_dir / "checkpoint_agent1.json");
    save_checkpoint(pair.agent2, seed_dir / "checkpoint_agent2.json");

    const std::vector<RoundRecord> records = evaluate_pair(pair, spec.eval_games, seed);
    save_records_jsonl(records, seed_dir / "records.jsonl");

    std::vector<std::pair<MetricKey, double>> rows;
    const int M = pair.game.n_messages;
    for (const std::string& metric : spec.metrics) {
        if (metric == "reward") {
            double s1 = 0, s2 = 0;
            for (const auto& r : records) {
                s1 += r.r1;
                s2 += r.r2;
            }
            detail::push_metric(rows, "reward", s1 / records.size(), s2 / records.size());
        } else if (metric == "sc") {
            auto [v1, v2] = speaker_consistency(records, M);
            detail::push_metric(rows, "sc", v1, v2);
        } else if (metric == "ic") {
            auto [v1, v2] = instantaneous_coordination(records, M);
            detail::push_metric(rows, "ic", v1, v2);
        } else if (metric == "entropy") {
            auto [v1, v2] = message_entropy(records, M);
            detail::push_metric(rows, "entropy", v1, v2);
        } else if (metric == "ci") {
            const auto ci = context_independence(
                records, ConceptExtractor::own_action(pair.game.n_actions), M);
            detail::push_metric(rows, "ci", ci.ci1, ci.ci2);
        } else if (metric == "cic") {
            // Direction: the row's agent is the speaker, the other the listener.
            Rng cic_rng = make_stream(seed, "cic");
            auto sampler = make_payoff_sampler(pair.game, cic_rng);
            CICReport rep1, rep2;
            if (spec.protocol == PairProtocol::truthful_signaler) {
                // Agent 1's "message" is its action, announced truthfully.
                const PolicyParams speaker_params = pair.agent1;
                const ObsLayout layout = ObsLayout::from(pair.game);
                CicSpeaker speaker{[speaker_params, layout](const PayoffPair& payoffs) {
                    const ObsVector obs =
                        build_observation(payoffs, 1, Phase::speak_first, layout);
                    const std::vector<double> pa =
                        softmax(forward(speaker_params, obs).action_logits);
                    std::vector<double> pm(static_cast<size_t>(layout.m), 0.0);
                    for (size_t a = 0; a < pa.size(); ++a) pm[a] = pa[a];
                    return pm;
                }};
                rep1 = causal_influence(make_cic_listener(pair.agent2, 2, pair.game), speaker,
                                        sampler, spec.eval_games);
                rep2 = CICReport{};  // agent 2's message reaches no one before actions
                rep2.per_game.assign(static_cast<size_t>(spec.eval_games), 0.0);
            } else {
                rep1 = causal_influence(make_cic_listener(pair.agent2, 2, pair.game),
                                        make_cic_speaker(pair.agent1, 1, pair.game), sampler,
                                        spec.eval_games);
                rep2 = causal_influence(make_cic_listener(pair.agent1, 1, pair.game),
                                        make_cic_speaker(pair.agent2, 2, pair.game), sampler,
                                        spec.eval_games);
            }
            detail::push_metric(rows, "cic", rep1.mean, rep2.mean);
            detail::push_metric(rows, "cic_frac_below", rep1.fraction_below(spec.cic_eps),
                                rep2.fraction_below(spec.cic_eps));
            std::string csv = "game_index,speaker_agent,value\n";
            for (size_t i = 0; i < rep1.per_game.size(); ++i)
                csv += std::to_string(i) + ",1," + fmt_g17(rep1.per_game[i]) + "\n";
            for (size_t i = 0; i < rep2.per_game.size(); ++i)
                csv += std::to_string(i) + ",2," + fmt_g17(rep2.per_game[i]) + "\n";
            write_text_file(seed_dir / "cic_per_game.csv", csv);
        } else if (metric == "min") {
            const ObsLayout layout = ObsLayout::from(pair.game);
            detail::push_metric(rows, "min", message_input_norm(pair.agent1, layout, 1),
                                message_input_norm(pair.agent2, layout, 2));
        }
    }
    write_text_file(seed_dir / "metrics.csv", detail::metrics_csv(rows));
    write_text_file(seed_dir / "DONE", "ok\n");
    return rows;
}

// Runs every seed (resuming seeds whose outputs already exist), then
// aggregates. Refuses to reuse a directory whose recorded spec differs.
inline ResultBundle run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    const std::filesystem::path out_dir(spec.output_dir);
    std::filesystem::create_directories(out_dir);

    const std::string canonical = canonical_spec_text(spec);
    const uint64_t hash = spec_hash(spec);
    const std::filesystem::path spec_path = out_dir / "spec.ini";
    if (std::filesystem::exists(spec_path)) {
        if (read_text_file(spec_path) != canonical)
            throw ConfigError("output dir " + spec.output_dir +
                              " holds results for a different spec; refusing to mix");
    } else {
        write_text_file(spec_path, canonical);
    }

    ResultBundle bundle;
    bundle.spec = spec;
    bundle.hash = hash;
    bundle.cell_name = out_dir.filename().string();

    for (uint64_t seed : spec.seeds) {
        const std::filesystem::path seed_dir = out_dir / ("seed_" + std::to_string(seed));
        std::vector<std::pair<MetricKey, double>> rows;
        if (std::filesystem::exists(seed_dir / "DONE") &&
            std::filesystem::exists(seed_dir / "metrics.csv")) {
            rows = detail::parse_metrics_csv(read_text_file(seed_dir / "metrics.csv"));
        } else {
            rows = run_seed(spec, seed, seed_dir);
        }
        for (const auto& [key, value] : rows) bundle.per_seed[key].push_back(value);
    }
    for (const auto& [key, values] : bundle.per_seed)
        bundle.aggregate[key] = detail::aggregate_values(values);

    std::string agg = "metric,agent,mean,std_err,n_seeds\n";
    for (const auto& [key, a] : bundle.aggregate)
        agg += key.first + "," + key.second + "," + fmt_g17(a.mean) + "," + fmt_g17(a.std_err) +
               "," + std::to_string(a.n_seeds) + "\n";
    write_text_file(out_dir / "metrics_aggregate.csv", agg);
    return bundle;
}

// Reconstructs a bundle from a completed run directory.
inline ResultBundle load_bundle(const std::filesystem::path& out_dir) {
    ResultBundle bundle;
    bundle.cell_name = out_dir.filename().string();
    const std::filesystem::path agg_path = out_dir / "metrics_aggregate.csv";
    std::istringstream in(read_text_file(agg_path));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string metric, agent, mean, se, n;
        std::getline(ls, metric, ',');
        std::getline(ls, agent, ',');
        std::getline(ls, mean, ',');
        std::getline(ls, se, ',');
        std::getline(ls, n, ',');
        bundle.aggregate[{metric, agent}] = {std::stod(mean), std::stod(se), std::stoi(n)};
    }
    return bundle;
}

// --- Grid ----------------------------------------------------------------------

struct GridCellResult {
    std::string cell_name;
    std::optional<ResultBundle> bundle;
    std::string error;  // set when the cell failed
};

inline std::string cell_name_for(int n_actions, Ablation ablation) {
    return "size" + std::to_string(n_actions) + "_" + to_string(ablation);
}

// Cartesian product over matrix sizes and ablations; all cells share the
// base spec's seed list so per-seed files align across cells. Cell failures
// are reported without aborting siblings.
inline std::vector<GridCellResult> run_grid(const ExperimentSpec& base,
                                            const std::vector<int>& sizes,
                                            const std::vector<Ablation>& ablations) {
    if (sizes.empty() || ablations.empty()) throw ConfigError("grid: axes must be nonempty");
    std::vector<GridCellResult> cells;
    for (int n : sizes) {
        for (Ablation ab : ablations) {
            GridCellResult cell;
            cell.cell_name = cell_name_for(n, ab);
            try {
                ExperimentSpec spec = base;
                spec.game.n_actions = n;
                spec.game.n_messages = default_messages_for(n);
                spec.learn.ablation = ab;
                spec.output_dir =
                    (std::filesystem::path(base.output_dir) / cell.cell_name).string();
                ResultBundle b = run_experiment(spec);
                b.cell_name = cell.cell_name;
                cell.bundle = std::move(b);
            } catch (const std::exception& e) {
                cell.error = e.what();
            }
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

// --- Reports --------------------------------------------------------------------

namespace detail {

inline const Aggregate* find_metric(const ResultBundle& b, const std::string& metric,
                                    const std::string& agent) {
    auto it = b.aggregate.find({metric, agent});
    return it == b.aggregate.end() ? nullptr : &it->second;
}

inline std::string svg_bar_chart(const std::string& title,
                                 const std::vector<std::pair<std::string, double>>& bars) {
    const int w = 120 * std::max<int>(1, static_cast<int>(bars.size())) + 80;
    const int h = 320;
    double maxv = 1e-12;
    for (const auto& [_, v] : bars) maxv = std::max(maxv, std::abs(v));
    std::string s = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) + "\" height=\"" +
         std::to_string(h) + "\">\n";
    s += "<text x=\"10\" y=\"20\" font-size=\"14\">" + title + "</text>\n";
    int x = 60;
    for (const auto& [label, v] : bars) {
        const int bar_h = static_cast<int>(220.0 * std::abs(v) / maxv);
        const int y = 260 - bar_h;
        s += "<rect x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y) + "\" width=\"80\" height=\"" +
             std::to_string(bar_h) + "\" fill=\"#4477aa\"/>\n";
        s += "<text x=\"" + std::to_string(x) + "\" y=\"280\" font-size=\"11\">" + label + "</text>\n";
        s += "<text x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y - 5) +
             "\" font-size=\"11\">" + fmt_g17(v) + "</text>\n";
        x += 120;
    }
    s += "</svg>\n";
    return s;
}

}  // namespace detail

// Writes CSV tables (and optionally SVG bar charts) summarizing a set of
// completed cells. Tables follow the standard layouts: per-ablation/size SC
// and reward, real-vs-random metric columns, CIC summaries, fixed-game rows.
inline std::vector<std::filesystem::path> emit_report(const std::vector<ResultBundle>& bundles,
                                                      const std::filesystem::path& report_dir,
                                                      bool svg = false) {
    if (bundles.empty()) throw ConfigError("report: no bundles");
    std::filesystem::create_directories(report_dir);
    std::vector<std::filesystem::path> written;

    // Schema check: all bundles must report the same metric set.
    std::set<std::string> schema;
    for (const auto& [key, _] : bundles.front().aggregate) schema.insert(key.first);
    for (const ResultBundle& b : bundles) {
        std::set<std::string> s;
        for (const auto& [key, _] : b.aggregate) s.insert(key.first);
        if (s != schema) {
            std::string diff = "report: metric schema mismatch in cell " + b.cell_name + " (";
            for (const auto& m : s)
                if (!schema.count(m)) diff += "+" + m + " ";
            for (const auto& m : schema)
                if (!s.count(m)) diff += "-" + m + " ";
            throw ConfigError(diff + ")");
        }
    }

    // One wide table: cell x metric (mean, 2se).
    {
        std::string csv = "cell,metric,agent,mean,two_se,n_seeds\n";
        for (const ResultBundle& b : bundles)
            for (const auto& [key, a] : b.aggregate)
                csv += b.cell_name + "," + key.first + "," + key.second + "," + fmt_g17(a.mean) +
                       "," + fmt_g17(2.0 * a.std_err) + "," + std::to_string(a.n_seeds) + "\n";
        const auto path = report_dir / "cells.csv";
        write_text_file(path, csv);
        written.push_back(path);
    }

    // Ablation-by-size table of SC and reward.
    if (schema.count("sc")) {
        std::string csv = "cell,sc_mean,sc_two_se,reward_mean,reward_two_se\n";
        for (const ResultBundle& b : bundles) {
            const Aggregate* sc = detail::find_metric(b, "sc", "avg");
            const Aggregate* rw = detail::find_metric(b, "reward", "avg");
            csv += b.cell_name + "," + (sc ? fmt_g17(sc->mean) : "") + "," +
                   (sc ? fmt_g17(2 * sc->std_err) : "") + "," + (rw ? fmt_g17(rw->mean) : "") +
                   "," + (rw ? fmt_g17(2 * rw->std_err) : "") + "\n";
        }
        const auto path = report_dir / "table_sc_reward.csv";
        write_text_file(path, csv);
        written.push_back(path);
    }

    // Real-c vs random-c columns per size (entropy/SC/CI table layout).
    {
        std::string csv = "size,metric,real_c_mean,real_c_2se,random_c_mean,random_c_2se\n";
        for (int n : {2, 4, 8}) {
            const ResultBundle* real = nullptr;
            const ResultBundle* rand = nullptr;
            for (const ResultBundle& b : bundles) {
                if (b.cell_name == cell_name_for(n, Ablation::none)) real = &b;
                if (b.cell_name == cell_name_for(n, Ablation::random_c)) rand = &b;
            }
            if (!real || !rand) continue;
            for (const std::string& metric : {"sc", "entropy", "ci"}) {
                const Aggregate* rm = detail::find_metric(*real, metric, "avg");
                const Aggregate* xm = detail::find_metric(*rand, metric, "avg");
                if (!rm || !xm) continue;
                csv += std::to_string(n) + "x" + std::to_string(n) + "," + metric + "," +
                       fmt_g17(rm->mean) + "," + fmt_g17(2 * rm->std_err) + "," +
                       fmt_g17(xm->mean) + "," + fmt_g17(2 * xm->std_err) + "\n";
            }
        }
        const auto path = report_dir / "table_real_vs_random.csv";
        write_text_file(path, csv);
        written.push_back(path);
    }

    // CIC summary with the fraction of games below the no-influence threshold.
    if (schema.count("cic")) {
        std::string csv = "cell,cic_mean,cic_two_se,frac_below_eps,frac_two_se\n";
        for (const ResultBundle& b : bundles) {
            const Aggregate* mean = detail::find_metric(b, "cic", "avg");
            const Aggregate* frac = detail::find_metric(b, "cic_frac_below", "avg");
            if (!mean || !frac) continue;
            csv += b.cell_name + "," + fmt_g17(mean->mean) + "," + fmt_g17(2 * mean->std_err) +
                   "," + fmt_g17(frac->mean) + "," + fmt_g17(2 * frac->std_err) + "\n";
        }
        const auto path = report_dir / "table_cic.csv";
        write_text_file(path, csv);
        written.push_back(path);
    }

    if (svg) {
        for (const std::string& metric : schema) {
            std::vector<std::pair<std::string, double>> bars;
            for (const ResultBundle& b : bundles) {
                const Aggregate* a = detail::find_metric(b, metric, "avg");
                if (a) bars.push_back({b.cell_name, a->mean});
            }
            if (bars.empty()) continue;
            const auto path = report_dir / ("bars_" + metric + ".svg");
            write_text_file(path, detail::svg_bar_chart(metric, bars));
            written.push_back(path);
        }
    }
    return written;
}

// --- Acceptance checking ----------------------------------------------------------

struct CriterionResult {
    std::string cell, metric, agent;
    double lo = 0, hi = 0;
    double observed = 0;
    bool pass = false;
};

struct CheckReport {
    std::vector<CriterionResult> results;
    bool all_pass = true;
};

// Criteria file: CSV rows `cell,metric,agent,lo,hi`; the cell's aggregate
// mean must land inside [lo, hi].
inline CheckReport check_acceptance(const std::vector<ResultBundle>& bundles,
                                    const std::string& criteria_text) {
    CheckReport report;
    std::istringstream in(criteria_text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string trimmed = detail::trim(line);
        if (trimmed.empty() || trimmed[0] == '#') continue;
        if (trimmed == "cell,metric,agent,lo,hi") continue;  // header
        std::istringstream ls(trimmed);
        std::string cell, metric, agent, lo_s, hi_s;
        if (!std::getline(ls, cell, ',') || !std::getline(ls, metric, ',') ||
            !std::getline(ls, agent, ',') || !std::getline(ls, lo_s, ',') ||
            !std::getline(ls, hi_s, ','))
            throw ConfigError("criteria line " + std::to_string(lineno) +
                              ": expected cell,metric,agent,lo,hi");
        CriterionResult c;
        c.cell = cell;
        c.metric = metric;
        c.agent = agent;
        try {
            c.lo = std::stod(lo_s);
            c.hi = std::stod(hi_s);
        } catch (...) {
            throw ConfigError("criteria line " + std::to_string(lineno) + ": malformed interval");
        }
        if (c.lo > c.hi)
            throw ConfigError("criteria line " + std::to_string(lineno) + ": empty interval [" +
                              lo_s + ", " + hi_s + "]");
        const ResultBundle* bundle = nullptr;
        for (const ResultBundle& b : bundles)
            if (b.cell_name == cell) bundle = &b;
        if (!bundle) throw ConfigError("criteria line " + std::to_string(lineno) +
                                       ": unknown cell '" + cell + "'");
        const Aggregate* a = detail::find_metric(*bundle, metric, agent);
        if (!a)
            throw ConfigError("criteria line " + std::to_string(lineno) + ": cell '" + cell +
                              "' has no metric " + metric + "/" + agent);
        c.observed = a->mean;
        c.pass = (c.observed >= c.lo && c.observed <= c.hi);
        report.all_pass = report.all_pass && c.pass;
        report.results.push_back(c);
    }
    return report;
}

inline std::string output_root() {
    const char* env = std::getenv("MCGLAB_OUTPUT_ROOT");
    return env != nullptr ? std::string(env) : std::string("runs");
}

}  // namespace mcglab

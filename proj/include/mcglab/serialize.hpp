#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcglab/env.hpp"
#include "mcglab/policy.hpp"
#include "mcglab/training.hpp"

namespace mcglab {

// %.17g: enough digits that text -> double recovers the exact value.
inline std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// --- Checkpoints -----------------------------------------------------------

// Flat layer-name -> value-array document with an architecture header.
// nlohmann emits shortest round-trip doubles, so save/load is bit-exact.
inline nlohmann::json checkpoint_json(const PolicyParams& p) {
    nlohmann::json j;
    j["arch"] = {{"input", p.input_dim},
                 {"hidden", p.hidden},
                 {"n_actions", p.n_actions},
                 {"n_messages", p.n_messages},
                 {"tag", to_string(p.arch)}};
    nlohmann::json params = nlohmann::json::object();
    for (const auto& t : tensor_refs(p.arch)) params[t.name] = p.*(t.member);
    j["params"] = std::move(params);
    return j;
}

inline void save_checkpoint(const PolicyParams& p, const std::filesystem::path& path) {
    write_text_file(path, checkpoint_json(p).dump());
}

inline PolicyParams checkpoint_from_json(const nlohmann::json& j) {
    PolicyParams p;
    const auto& arch = j.at("arch");
    p.input_dim = arch.at("input").get<int>();
    p.hidden = arch.at("hidden").get<int>();
    p.n_actions = arch.at("n_actions").get<int>();
    p.n_messages = arch.at("n_messages").get<int>();
    const std::string tag = arch.at("tag").get<std::string>();
    if (tag == "shared")
        p.arch = ArchTag::shared;
    else if (tag == "separate_comm")
        p.arch = ArchTag::separate_comm;
    else
        throw std::runtime_error("checkpoint: unknown architecture tag '" + tag + "'");
    resize_tensors(p);
    for (const auto& t : tensor_refs(p.arch)) {
        const auto values = j.at("params").at(t.name).get<std::vector<double>>();
        auto& dst = p.*(t.member);
        if (values.size() != dst.size())
            throw std::runtime_error(std::string("checkpoint: tensor ") + t.name +
                                     " has wrong size");
        dst = values;
    }
    return p;
}

inline PolicyParams load_checkpoint(const std::filesystem::path& path) {
    return checkpoint_from_json(nlohmann::json::parse(read_text_file(path)));
}

// --- RoundRecord JSONL -------------------------------------------------------

inline RoundRecord record_from_jsonl(const std::string& line) {
    const nlohmann::json j = nlohmann::json::parse(line);
    RoundRecord r;
    const auto& pj = j.at("payoffs");
    r.payoffs.n = pj.at("n").get<int>();
    auto read_matrix = [&](const nlohmann::json& mj) {
        std::vector<double> flat;
        flat.reserve(static_cast<size_t>(r.payoffs.n) * r.payoffs.n);
        for (const auto& row : mj)
            for (const auto& x : row) flat.push_back(x.get<double>());
        if (static_cast<int>(flat.size()) != r.payoffs.n * r.payoffs.n)
            throw std::runtime_error("record_from_jsonl: payoff matrix shape mismatch");
        return flat;
    };
    r.payoffs.r1 = read_matrix(pj.at("r1"));
    r.payoffs.r2 = read_matrix(pj.at("r2"));
    r.first_speaker = j.at("first_speaker").get<int>();
    r.m1 = j.at("m1").get<int>();
    r.m2 = j.at("m2").get<int>();
    r.m1_observed = j.at("m1_observed").get<int>();
    r.m2_observed = j.at("m2_observed").get<int>();
    r.a1 = j.at("a1").get<int>();
    r.a2 = j.at("a2").get<int>();
    r.r1 = j.at("r1").get<double>();
    r.r2 = j.at("r2").get<double>();
    r.episode = j.at("episode").get<long long>();
    r.seed = j.at("seed").get<unsigned long long>();
    return r;
}

inline void save_records_jsonl(const std::vector<RoundRecord>& records,
                               const std::filesystem::path& path) {
    std::string out;
    out.reserve(records.size() * 256);
    for (const RoundRecord& r : records) {
        out += to_jsonl(r);
        out += '\n';
    }
    write_text_file(path, out);
}

inline std::vector<RoundRecord> load_records_jsonl(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    std::vector<RoundRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) records.push_back(record_from_jsonl(line));
    }
    return records;
}

// --- Training log CSV --------------------------------------------------------

inline std::string trainlog_csv(const TrainLog& log) {
    std::string out = "window_start,reward1,reward2,sc1,sc2,ent1,ent2\n";
    for (const WindowStats& w : log.windows) {
        out += std::to_string(w.window_start);
        for (double v : {w.reward1, w.reward2, w.sc1, w.sc2, w.ent1, w.ent2}) {
            out += ',';
            out += fmt_g17(v);
        }
        out += '\n';
    }
    return out;
}

inline void save_trainlog(const TrainLog& log, const std::filesystem::path& path) {
    write_text_file(path, trainlog_csv(log));
}

}  // namespace mcglab

#pragma once

// Offline dataset representation and its on-disk format: JSON lines with a
// header object followed by one transition per line, plus a JSON sidecar of
// normalization statistics next to each saved file. Doubles survive a save/
// load round trip exactly (the JSON writer emits shortest round-trippable
// decimal forms).

#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "micro/common.hpp"
#include "micro/rng.hpp"
#include "micro/tensor.hpp"

namespace micro {

enum class Source { Offline, Model };

inline const char* source_name(Source s) { return s == Source::Offline ? "offline" : "model"; }

inline Source source_from(const std::string& name) {
    if (name == "offline") return Source::Offline;
    if (name == "model") return Source::Model;
    throw std::runtime_error("unknown transition source '" + name + "'");
}

struct Transition {
    Vec s;
    Vec a;
    double r = 0.0;
    Vec s2;
    bool done = false;
    Source src = Source::Offline;
};

/// Content hash of a transition over the raw IEEE-754 bytes of its numeric
/// fields; used for content-keyed holdout splits that are invariant to row
/// order and duplication.
inline uint64_t transition_hash(const Transition& t) {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const Vec& v) { h = fnv1a64(v.data(), v.size() * sizeof(double), h); };
    mix(t.s);
    mix(t.a);
    h = fnv1a64(&t.r, sizeof(double), h);
    mix(t.s2);
    const unsigned char d = t.done ? 1 : 0;
    h = fnv1a64(&d, 1, h);
    return h;
}

/// Per-dimension normalization with a standard deviation floor so constant
/// dimensions stay finite under division.
struct NormStats {
    Vec mean;
    Vec std;

    static constexpr double kStdFloor = 1e-6;

    static NormStats fit(const std::vector<Vec>& rows) {
        require_arg(!rows.empty(), "NormStats::fit: no rows");
        const size_t d = rows[0].size();
        NormStats st;
        st.mean.assign(d, 0.0);
        st.std.assign(d, 0.0);
        for (const Vec& r : rows) {
            require_arg(r.size() == d, "NormStats::fit: ragged rows");
            for (size_t j = 0; j < d; ++j) st.mean[j] += r[j];
        }
        for (double& m : st.mean) m /= static_cast<double>(rows.size());
        for (const Vec& r : rows)
            for (size_t j = 0; j < d; ++j) {
                const double c = r[j] - st.mean[j];
                st.std[j] += c * c;
            }
        for (double& v : st.std) v = std::max(std::sqrt(v / static_cast<double>(rows.size())), kStdFloor);
        return st;
    }

    Vec normalize(const Vec& x) const {
        require_arg(x.size() == mean.size(), "NormStats::normalize: dimension mismatch");
        Vec out(x.size());
        for (size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean[j]) / std[j];
        return out;
    }

    Vec denormalize(const Vec& z) const {
        require_arg(z.size() == mean.size(), "NormStats::denormalize: dimension mismatch");
        Vec out(z.size());
        for (size_t j = 0; j < z.size(); ++j) out[j] = z[j] * std[j] + mean[j];
        return out;
    }
};

struct Dataset {
    std::string env = "pendulum";
    std::string tier;
    uint64_t seed = 0;
    size_t obs_dim = 0;
    size_t act_dim = 0;
    std::vector<Transition> rows;

    NormStats obs_stats() const {
        std::vector<Vec> obs;
        obs.reserve(rows.size());
        for (const Transition& t : rows) obs.push_back(t.s);
        return NormStats::fit(obs);
    }
};

namespace detail {

inline nlohmann::json vec_to_json(const Vec& v) { return nlohmann::json(v); }

inline Vec vec_from_json(const nlohmann::json& j, size_t expect, const char* what) {
    require(j.is_array() && j.size() == expect,
            std::string("dataset: field '") + what + "' has wrong arity");
    Vec v;
    v.reserve(expect);
    for (const auto& x : j) v.push_back(x.get<double>());
    return v;
}

}  // namespace detail

/// Write the dataset as JSONL and its normalization sidecar (path + ".stats.json").
inline void save_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream out(path);
    require(out.good(), "save_dataset: cannot open " + path);
    nlohmann::json header = {{"env", ds.env},
                             {"tier", ds.tier},
                             {"seed", ds.seed},
                             {"obs_dim", ds.obs_dim},
                             {"act_dim", ds.act_dim}};
    out << header.dump() << "\n";
    for (const Transition& t : ds.rows) {
        require(t.s.size() == ds.obs_dim && t.s2.size() == ds.obs_dim && t.a.size() == ds.act_dim,
                "save_dataset: row dimensions disagree with header");
        nlohmann::json rec = {{"s", detail::vec_to_json(t.s)},   {"a", detail::vec_to_json(t.a)},
                              {"r", t.r},                        {"s2", detail::vec_to_json(t.s2)},
                              {"done", t.done},                  {"src", source_name(t.src)}};
        out << rec.dump() << "\n";
    }
    require(out.good(), "save_dataset: write failed for " + path);

    // sidecar statistics
    std::vector<Vec> obs, act;
    Vec rew;
    for (const Transition& t : ds.rows) {
        obs.push_back(t.s);
        act.push_back(t.a);
        rew.push_back(t.r);
    }
    nlohmann::json stats = {{"n", ds.rows.size()}};
    if (!ds.rows.empty()) {
        const NormStats so = NormStats::fit(obs);
        const NormStats sa = NormStats::fit(act);
        std::vector<Vec> rw;
        rw.reserve(rew.size());
        for (double r : rew) rw.push_back({r});
        const NormStats sr = NormStats::fit(rw);
        stats["obs_mean"] = so.mean;
        stats["obs_std"] = so.std;
        stats["act_mean"] = sa.mean;
        stats["act_std"] = sa.std;
        stats["r_mean"] = sr.mean[0];
        stats["r_std"] = sr.std[0];
    }
    std::ofstream sout(path + ".stats.json");
    require(sout.good(), "save_dataset: cannot open stats sidecar for " + path);
    sout << stats.dump(2) << "\n";
    require(sout.good(), "save_dataset: stats sidecar write failed for " + path);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "load_dataset: cannot open " + path);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "load_dataset: empty file " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_dataset: bad header in " + path + ": " + e.what());
    }
    require(header.contains("env") && header.contains("obs_dim") && header.contains("act_dim"),
            "load_dataset: header missing required fields in " + path);

    Dataset ds;
    ds.env = header.at("env").get<std::string>();
    ds.tier = header.value("tier", std::string{});
    ds.seed = header.value("seed", 0ULL);
    ds.obs_dim = header.at("obs_dim").get<size_t>();
    ds.act_dim = header.at("act_dim").get<size_t>();

    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("load_dataset: bad record at " + path + ":" +
                                     std::to_string(lineno) + ": " + e.what());
        }
        Transition t;
        t.s = detail::vec_from_json(rec.at("s"), ds.obs_dim, "s");
        t.a = detail::vec_from_json(rec.at("a"), ds.act_dim, "a");
        t.r = rec.at("r").get<double>();
        t.s2 = detail::vec_from_json(rec.at("s2"), ds.obs_dim, "s2");
        t.done = rec.at("done").get<bool>();
        t.src = source_from(rec.at("src").get<std::string>());
        require_finite(t.s, "dataset obs");
        require_finite(t.a, "dataset action");
        require_finite(t.r, "dataset reward");
        require_finite(t.s2, "dataset next obs");
        ds.rows.push_back(std::move(t));
    }
    return ds;
}

}  // namespace micro

#pragma once

// Flat key=value run configuration and run manifests.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "transcf/dataset.hpp"
#include "transcf/error.hpp"
#include "transcf/format.hpp"
#include "transcf/trainer.hpp"

namespace transcf {

inline constexpr const char* kVersion = "1.0.0";

/// Everything a run needs besides file paths. Randomness comes from three
/// seeds: train (initialization, sampling, shuffling), eval (candidate
/// negatives) and analysis (unobserved pairs of the translation diagnostic).
struct RunSettings {
    TrainConfig train;
    std::uint64_t eval_seed = 0;
    std::uint64_t analysis_seed = 0;
    std::vector<std::size_t> cutoffs{10, 20};
    std::size_t candidate_negatives = 99;
    std::size_t seeds = 1;

    RunSettings() { train.hyper.epochs = 200; }
};

/// Reads `key=value` lines; blank lines and lines starting with '#' are
/// skipped. Later keys override earlier ones.
inline std::map<std::string, std::string> read_key_values(std::istream& in) {
    std::map<std::string, std::string> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string_view::npos) throw ParseError(line_no, "expected key=value");
        out[std::string(trim(t.substr(0, eq)))] = std::string(trim(t.substr(eq + 1)));
    }
    return out;
}

inline std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FileError(path.string());
    return read_key_values(in);
}

namespace detail {

inline std::size_t to_count(const std::string& key, const std::string& v) {
    auto n = parse_int(v);
    if (!n || *n < 0) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return static_cast<std::size_t>(*n);
}

inline double to_real(const std::string& key, const std::string& v) {
    auto x = parse_double(v);
    if (!x) throw ConfigError(key + ": expected a number, got '" + v + "'");
    return *x;
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

inline std::vector<std::size_t> to_counts(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string part;
    while (std::getline(ss, part, ',')) out.push_back(to_count(key, std::string(trim(part))));
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
}

inline std::string join(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t k = 0; k < v.size(); ++k) out += (k ? "," : "") + std::to_string(v[k]);
    return out;
}

}  // namespace detail

/// Keys written by manifests that carry provenance rather than settings.
inline bool is_informational_key(const std::string& key) {
    for (const char* prefix : {"dataset.", "path.", "artifact.", "command"})
        if (key.rfind(prefix, 0) == 0) return true;
    return false;
}

inline void apply_setting(RunSettings& s, const std::string& key, const std::string& value) {
    using namespace detail;
    HyperParams& h = s.train.hyper;
    if (key == "variant") {
        auto v = parse_variant(value);
        if (!v) throw ConfigError("variant: unknown value '" + value + "'");
        s.train.variant = *v;
    } else if (key == "dim") h.dim = to_count(key, value);
    else if (key == "learning_rate") h.learning_rate = to_real(key, value);
    else if (key == "margin") h.margin = to_real(key, value);
    else if (key == "lambda_nbr") h.lambda_nbr = to_real(key, value);
    else if (key == "lambda_dist") h.lambda_dist = to_real(key, value);
    else if (key == "epochs") h.epochs = to_count(key, value);
    else if (key == "batch_size") h.batch_size = to_count(key, value);
    else if (key == "negatives_per_user") h.negatives_per_user = to_count(key, value);
    else if (key == "train_seed") h.seed = to_count(key, value);
    else if (key == "eval_seed") s.eval_seed = to_count(key, value);
    else if (key == "analysis_seed") s.analysis_seed = to_count(key, value);
    else if (key == "seeds") s.seeds = to_count(key, value);
    else if (key == "threads") s.train.threads = to_count(key, value);
    else if (key == "early_stop_patience") s.train.early_stop_patience = to_count(key, value);
    else if (key == "candidate_negatives") s.candidate_negatives = to_count(key, value);
    else if (key == "cutoffs") s.cutoffs = to_counts(key, value);
    else if (key == "projection_cadence") {
        if (value == "per_epoch") s.train.projection_cadence = ProjectionCadence::PerEpoch;
        else if (value == "per_batch") s.train.projection_cadence = ProjectionCadence::PerBatch;
        else throw ConfigError("projection_cadence: expected per_epoch or per_batch");
    } else if (key == "strict_paper_projection") {
        s.train.projection_mode = to_bool(key, value) ? ProjectionMode::StrictPaper : ProjectionMode::UnitBall;
    } else if (key == "stop_gradient_neighborhoods") {
        s.train.objective.stop_gradient_neighborhoods = to_bool(key, value);
    } else if (key == "skip_empty_neighborhoods") {
        s.train.objective.skip_empty_neighborhoods = to_bool(key, value);
    } else if (!is_informational_key(key)) {
        throw ConfigError("unknown configuration key '" + key + "'");
    }
}

inline void apply_settings(RunSettings& s, const std::map<std::string, std::string>& kv) {
    for (const auto& [k, v] : kv) apply_setting(s, k, v);
}

/// Validation during training uses the eval seed and candidate count.
inline TrainConfig resolved_train_config(const RunSettings& s) {
    TrainConfig cfg = s.train;
    cfg.validation.seed = s.eval_seed;
    cfg.validation.candidate_negatives = s.candidate_negatives;
    cfg.validation.cutoffs = {10};
    return cfg;
}

inline EvalConfig resolved_eval_config(const RunSettings& s) {
    EvalConfig cfg;
    cfg.candidate_negatives = s.candidate_negatives;
    cfg.cutoffs = s.cutoffs;
    cfg.seed = s.eval_seed;
    cfg.threads = s.train.threads;
    return cfg;
}

/// Settings as ordered key=value pairs; read back by apply_settings.
inline std::vector<std::pair<std::string, std::string>> settings_key_values(const RunSettings& s) {
    const HyperParams& h = s.train.hyper;
    return {
        {"variant", std::string(to_string(s.train.variant))},
        {"dim", std::to_string(h.dim)},
        {"learning_rate", format_real(h.learning_rate)},
        {"margin", format_real(h.margin)},
        {"lambda_nbr", format_real(h.lambda_nbr)},
        {"lambda_dist", format_real(h.lambda_dist)},
        {"epochs", std::to_string(h.epochs)},
        {"batch_size", std::to_string(h.batch_size)},
        {"negatives_per_user", std::to_string(h.negatives_per_user)},
        {"train_seed", std::to_string(h.seed)},
        {"eval_seed", std::to_string(s.eval_seed)},
        {"analysis_seed", std::to_string(s.analysis_seed)},
        {"seeds", std::to_string(s.seeds)},
        {"threads", std::to_string(s.train.threads)},
        {"early_stop_patience", std::to_string(s.train.early_stop_patience)},
        {"candidate_negatives", std::to_string(s.candidate_negatives)},
        {"cutoffs", detail::join(s.cutoffs)},
        {"projection_cadence", s.train.projection_cadence == ProjectionCadence::PerEpoch ? "per_epoch" : "per_batch"},
        {"strict_paper_projection", s.train.projection_mode == ProjectionMode::StrictPaper ? "true" : "false"},
        {"stop_gradient_neighborhoods", s.train.objective.stop_gradient_neighborhoods ? "true" : "false"},
        {"skip_empty_neighborhoods", s.train.objective.skip_empty_neighborhoods ? "true" : "false"},
    };
}

// ---------------------------------------------------------------------------
// Fingerprints and manifests

/// 64-bit FNV-1a.
class Fnv1a {
public:
    void update(std::string_view bytes) {
        for (unsigned char c : bytes) {
            hash_ ^= c;
            hash_ *= 0x100000001b3ULL;
        }
    }

    void update_file(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw FileError(path.string());
        char buf[1 << 16];
        while (in.read(buf, sizeof buf) || in.gcount() > 0) update({buf, static_cast<std::size_t>(in.gcount())});
    }

    std::uint64_t value() const noexcept { return hash_; }

    std::string hex() const {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_));
        return buf;
    }

private:
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

struct DatasetFingerprint {
    std::size_t users = 0;
    std::size_t items = 0;
    std::size_t train_interactions = 0;
    std::size_t validation = 0;
    std::size_t test = 0;
    std::string content_hash;
};

/// Counts plus a hash over the split files in a fixed order.
inline DatasetFingerprint fingerprint_split(const SplitDataset& split, const std::filesystem::path& dir) {
    DatasetFingerprint fp{split.train.user_count(), split.train.item_count(), split.train.interaction_count(),
                          split.validation.size(), split.test.size(), {}};
    Fnv1a h;
    for (const char* name : {"users.txt", "items.txt", "train.tsv", "validation.tsv", "test.tsv"}) {
        h.update(name);
        h.update_file(dir / name);
    }
    fp.content_hash = h.hex();
    return fp;
}

/// Provenance record of one command invocation. Its settings section is a
/// valid config file, so a run can be repeated with `--config manifest.txt`.
struct RunManifest {
    std::string command;
    std::vector<std::pair<std::string, std::string>> settings;
    std::vector<std::pair<std::string, std::string>> paths;
    std::optional<DatasetFingerprint> dataset;

    void write(std::ostream& out) const {
        out << "# transcf run manifest\n";
        out << "artifact.version=" << kVersion << '\n';
        out << "command=" << command << '\n';
        for (const auto& [k, v] : settings) out << k << '=' << v << '\n';
        for (const auto& [k, v] : paths) out << "path." << k << '=' << v << '\n';
        if (dataset) {
            out << "dataset.users=" << dataset->users << '\n'
                << "dataset.items=" << dataset->items << '\n'
                << "dataset.train_interactions=" << dataset->train_interactions << '\n'
                << "dataset.validation=" << dataset->validation << '\n'
                << "dataset.test=" << dataset->test << '\n'
                << "dataset.content_hash=" << dataset->content_hash << '\n';
        }
    }

    void write(const std::filesystem::path& path) const {
        std::ofstream out(path);
        if (!out) throw FileError(path.string(), "cannot write file");
        write(out);
    }
};

}  // namespace transcf

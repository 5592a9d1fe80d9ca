// transcf command-line interface: split, train, evaluate, analyze, export.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "transcf/transcf.hpp"

namespace fs = std::filesystem;
using namespace transcf;

namespace {

constexpr int kExitError = 1;
constexpr int kExitMissingFile = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitDimensionMismatch = 4;

constexpr const char* kEnvNote =
    "Every training flag can also be set through an environment variable named TRANSCF_ followed by the "
    "flag name in upper case with dashes replaced by underscores (e.g. TRANSCF_DIM, TRANSCF_LAMBDA_NBR). "
    "Precedence: command-line flag, then environment, then --config file, then built-in default.";

/// Flag name, config key, target string.
struct Override {
    std::string key;
    std::string value;
    CLI::Option* option = nullptr;
};

std::string env_name(const std::string& flag) {
    std::string out = "TRANSCF_";
    for (char c : flag) out += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

/// Training flags shared by train (and recorded in manifests).
class SettingFlags {
public:
    void attach(CLI::App* app) {
        add(app, "variant", "variant", "Model variant: transcf, transcf-dot, transcf-alt or cml")
            ->check(CLI::IsMember({"transcf", "transcf-dot", "transcf-alt", "cml"}));
        add(app, "dim", "dim", "Embedding dimension K");
        add(app, "lr", "learning_rate", "SGD learning rate");
        add(app, "margin", "margin", "Hinge margin");
        add(app, "lambda-nbr", "lambda_nbr", "Neighborhood regularizer weight");
        add(app, "lambda-dist", "lambda_dist", "Distance regularizer weight");
        add(app, "epochs", "epochs", "Maximum number of epochs");
        add(app, "batch-size", "batch_size", "Triples per mini-batch");
        add(app, "negatives-per-user", "negatives_per_user", "Sampled (positive, negative) pairs per user per epoch");
        add(app, "seeds", "seeds", "Repeat training with this many consecutive train seeds");
        add(app, "threads", "threads", "Worker threads (1 = deterministic)");
        add(app, "train-seed", "train_seed", "Seed for initialization, sampling and shuffling");
        add(app, "eval-seed", "eval_seed", "Seed for evaluation candidate sampling");
        add(app, "patience", "early_stop_patience", "Epochs without validation HR@10 gain before stopping");
        add(app, "projection-cadence", "projection_cadence", "per_epoch or per_batch");
        add_flag(app, "strict-paper-projection", "strict_paper_projection",
                 "Project with v / max(1, |v|^2) instead of v / |v|");
        add_flag(app, "stop-gradient-neighborhoods", "stop_gradient_neighborhoods",
                 "Do not backpropagate into neighborhood means");
    }

    void apply(RunSettings& s) const {
        for (const auto& o : overrides_)
            if (o->option->count() > 0) apply_setting(s, o->key, o->value);
        for (const auto& f : flags_)
            if (f->option->count() > 0) apply_setting(s, f->key, "true");
    }

private:
    CLI::Option* add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
        auto o = std::make_unique<Override>();
        o->key = key;
        o->option = app->add_option("--" + flag, o->value, help)->envname(env_name(flag));
        auto* opt = o->option;
        overrides_.push_back(std::move(o));
        return opt;
    }

    void add_flag(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
        auto f = std::make_unique<Override>();
        f->key = key;
        f->option = app->add_flag("--" + flag, help)->envname(env_name(flag));
        flags_.push_back(std::move(f));
    }

    std::vector<std::unique_ptr<Override>> overrides_;
    std::vector<std::unique_ptr<Override>> flags_;
};

void require_file(const fs::path& p) {
    if (!fs::exists(p)) throw FileError(p.string(), "no such file or directory");
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream out(p);
    if (!out) throw FileError(p.string(), "cannot write file");
    return out;
}

void write_json(const fs::path& p, const nlohmann::ordered_json& j) {
    auto out = open_out(p);
    out << j.dump(2) << '\n';
}

ModelState load_bound_checkpoint(const fs::path& path, const SplitDataset& split) {
    require_file(path);
    std::ifstream in(path);
    if (!in) throw FileError(path.string());
    return bind_checkpoint(read_checkpoint(in), split.train);
}

// ---------------------------------------------------------------------------

struct SplitArgs {
    std::string input;
    std::string output;
    std::size_t min_count = 5;
};

int run_split(const SplitArgs& a) {
    require_file(a.input);
    const InteractionDataset ds = load_interactions(fs::path(a.input), a.min_count);
    const SplitDataset split = leave_one_out_split(ds);
    write_split(split, a.output);

    RunManifest m;
    m.command = "split";
    m.settings = {{"dataset.min_count", std::to_string(a.min_count)}};
    m.paths = {{"input", a.input}, {"output", a.output}};
    m.dataset = fingerprint_split(split, a.output);
    m.write(fs::path(a.output) / "manifest.txt");

    std::cout << "users " << split.train.user_count() << ", items " << split.train.item_count()
              << ", interactions " << ds.interaction_count() << " (train " << split.train.interaction_count()
              << ", validation " << split.validation.size() << ", test " << split.test.size() << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string split;
    std::string config;
    std::string output;
    bool verbose = false;
};

nlohmann::ordered_json mean_std(const std::vector<double>& v) {
    double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    return {{"mean", mean}, {"std", sd}};
}

int run_train(const TrainArgs& a, const SettingFlags& flags) {
    require_file(a.split);
    RunSettings settings;
    if (!a.config.empty()) {
        require_file(a.config);
        apply_settings(settings, read_key_values(fs::path(a.config)));
    }
    flags.apply(settings);
    if (settings.seeds < 1) throw ConfigError("--seeds must be at least 1");

    const SplitDataset split = read_split(a.split);
    fs::create_directories(a.output);

    RunManifest manifest;
    manifest.command = "train";
    manifest.settings = settings_key_values(settings);
    manifest.paths = {{"split", a.split}, {"output", a.output}};
    if (!a.config.empty()) manifest.paths.emplace_back("config", a.config);
    manifest.dataset = fingerprint_split(split, a.split);
    manifest.write(fs::path(a.output) / "manifest.txt");

    const EvalConfig eval_cfg = resolved_eval_config(settings);
    nlohmann::ordered_json summary;
    summary["variant"] = to_string(settings.train.variant);
    summary["runs"] = nlohmann::ordered_json::array();
    std::map<std::string, std::vector<double>> per_metric;

    const std::uint64_t base_seed = settings.train.hyper.seed;
    for (std::size_t s = 0; s < settings.seeds; ++s) {
        RunSettings run = settings;
        run.train.hyper.seed = base_seed + s;
        const TrainConfig cfg = resolved_train_config(run);
        const fs::path dir = settings.seeds == 1 ? fs::path(a.output) : fs::path(a.output) / ("seed_" + std::to_string(s));
        fs::create_directories(dir);

        auto progress = [&](const EpochRecord& r, const ModelState&) {
            if (a.verbose)
                std::cerr << "seed " << run.train.hyper.seed << " epoch " << r.epoch << " objective "
                          << r.mean_batch_objective << " val HR@10 " << r.validation_hr10 << '\n';
        };
        const TrainResult result = train(split, cfg, progress);

        {
            auto out = open_out(dir / "checkpoint.txt");
            write_checkpoint(out, result.model, split.train,
                             {{"best_epoch", std::to_string(result.log.best_epoch)},
                              {"validation_hr10", format_real(result.log.best_validation_hr10)}});
        }
        {
            auto out = open_out(dir / "train_log.csv");
            write_train_log_csv(out, result.log);
        }
        {
            auto out = open_out(dir / "train_timing.csv");
            out << "epoch,seconds\n";
            for (const auto& r : result.log.epochs) out << r.epoch << ',' << format_real(r.seconds) << '\n';
        }

        const EvalReport test = evaluate(result.model, split, true, eval_cfg);
        nlohmann::ordered_json entry;
        entry["train_seed"] = run.train.hyper.seed;
        entry["best_epoch"] = result.log.best_epoch;
        entry["epochs_run"] = result.log.epochs.size();
        entry["validation_hr10"] = result.log.best_validation_hr10;
        entry["test"] = report_json(test);
        summary["runs"].push_back(entry);
        for (std::size_t k = 0; k < test.cutoffs.size(); ++k) {
            per_metric["HR@" + std::to_string(test.cutoffs[k])].push_back(test.hr[k]);
            per_metric["NDCG@" + std::to_string(test.cutoffs[k])].push_back(test.ndcg[k]);
        }
        std::cout << "seed " << run.train.hyper.seed << ": best epoch " << result.log.best_epoch
                  << ", validation HR@10 " << result.log.best_validation_hr10 << ", test "
                  << report_json(test).dump() << '\n';
    }
    nlohmann::ordered_json agg = nlohmann::ordered_json::object();
    for (std::size_t k = 0; k < settings.cutoffs.size(); ++k) {
        for (const char* m : {"HR@", "NDCG@"}) {
            const std::string key = m + std::to_string(settings.cutoffs[k]);
            agg[key] = mean_std(per_metric[key]);
        }
    }
    summary["test"] = agg;
    write_json(fs::path(a.output) / "summary.json", summary);
    return 0;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
    std::string checkpoint;
    std::string split;
    std::vector<std::size_t> cutoffs{10, 20};
    std::uint64_t seed = 0;
    std::size_t candidates = 99;
    std::size_t threads = 1;
    bool full_catalog = false;
    std::string which = "test";
    std::string output;
    std::string per_user;
};

int run_evaluate(const EvaluateArgs& a) {
    require_file(a.split);
    const SplitDataset split = read_split(a.split);
    const ModelState model = load_bound_checkpoint(a.checkpoint, split);
    std::vector<std::size_t> cutoffs = a.cutoffs;
    std::sort(cutoffs.begin(), cutoffs.end());
    const EvalConfig cfg{a.candidates, cutoffs, a.seed, a.full_catalog, a.threads};
    const EvalReport report = evaluate(model, split, a.which == "test", cfg);
    const auto j = report_json(report);
    if (a.output.empty()) {
        std::cout << j.dump(2) << '\n';
    } else {
        write_json(a.output, j);
    }
    if (!a.per_user.empty()) {
        auto out = open_out(a.per_user);
        write_per_user_csv(out, report, split.train);
    }
    return 0;
}

// ---------------------------------------------------------------------------

struct AnalyzeArgs {
    std::string checkpoint;
    std::string split;
    std::uint64_t seed = 0;
    std::string output;
    bool ratings = false;
    std::string labels;
    bool labels_from_ratings = false;
    std::string export_path;
    std::string export_kind = "translation";
};

/// `user<TAB>item<TAB>label` lines; unknown tokens are counted and skipped.
PairLabels read_labels(const fs::path& path, const InteractionDataset& ds, std::size_t& unknown) {
    require_file(path);
    std::ifstream in(path);
    PairLabels labels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto t = trim(line);
        if (t.empty()) continue;
        const auto a = t.find('\t');
        const auto b = a == std::string_view::npos ? a : t.find('\t', a + 1);
        if (b == std::string_view::npos) throw ParseError(line_no, "expected user<TAB>item<TAB>label");
        auto u = ds.users().find(t.substr(0, a));
        auto i = ds.items().find(t.substr(a + 1, b - a - 1));
        if (!u || !i) {
            ++unknown;
            continue;
        }
        labels[{*u, *i}] = std::string(t.substr(b + 1));
    }
    return labels;
}

int run_analyze(const AnalyzeArgs& a) {
    require_file(a.split);
    const SplitDataset split = read_split(a.split);
    const ModelState model = load_bound_checkpoint(a.checkpoint, split);

    nlohmann::ordered_json j;
    j["variant"] = to_string(model.variant);
    j["analysis_seed"] = a.seed;
    j["translation_check"] = diagnostic_json(translation_check(model, split.train, a.seed));
    if (a.ratings) j["rating_groups"] = rating_groups_json(rating_group_check(model, split.train));

    if (!a.export_path.empty()) {
        std::size_t unknown = 0;
        PairLabels labels;
        if (a.labels_from_ratings) labels = rating_labels(split.train);
        else if (!a.labels.empty()) labels = read_labels(a.labels, split.train, unknown);
        else throw ConfigError("--export needs --labels or --labels-from-ratings");
        const ExportKind kind = a.export_kind == "difference" ? ExportKind::EmbeddingDifference : ExportKind::Translation;
        auto out = open_out(a.export_path);
        const ExportSummary s = export_labeled_translations(model, split.train, labels, out, kind);
        j["export"] = {{"path", a.export_path}, {"kind", a.export_kind}, {"rows", s.rows},
                       {"skipped", s.skipped + unknown}};
    }

    if (a.output.empty()) {
        std::cout << j.dump(2) << '\n';
    } else {
        write_json(a.output, j);
    }
    return 0;
}

// ---------------------------------------------------------------------------

struct ExportArgs {
    std::string checkpoint;
    std::string output;
};

int run_export(const ExportArgs& a) {
    require_file(a.checkpoint);
    std::ifstream in(a.checkpoint);
    const Checkpoint cp = read_checkpoint(in);
    fs::create_directories(a.output);
    auto dump = [&](const char* name, const EmbeddingTable& table, const std::vector<std::string>& tokens) {
        Vocabulary v;
        for (const auto& t : tokens) v.add(t);
        auto out = open_out(fs::path(a.output) / name);
        write_embeddings(out, table, v);
    };
    dump("user_embeddings.tsv", cp.model.users, cp.user_tokens);
    dump("item_embeddings.tsv", cp.model.items, cp.item_tokens);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Translational collaborative metric learning for implicit feedback"};
    app.footer(kEnvNote);
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    SplitArgs split_args;
    auto* split = app.add_subcommand("split", "Filter an interaction log and write a leave-one-out split");
    split->add_option("input", split_args.input, "Interaction file (user, item[, rating][, order_key])")->required();
    split->add_option("output", split_args.output, "Output directory")->required();
    split->add_option("--min-count", split_args.min_count, "Drop users and items with fewer interactions")
        ->capture_default_str();

    TrainArgs train_args;
    SettingFlags flags;
    auto* train_cmd = app.add_subcommand("train", "Train a model on a split directory");
    train_cmd->add_option("split", train_args.split, "Split directory")->required();
    train_cmd->add_option("output", train_args.output, "Output directory")->required();
    train_cmd->add_option("--config", train_args.config, "key=value config file (a run manifest also works)");
    train_cmd->add_flag("-v,--verbose", train_args.verbose, "Print per-epoch progress to stderr");
    flags.attach(train_cmd);
    train_cmd->footer(kEnvNote);

    EvaluateArgs eval_args;
    auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint with the leave-one-out protocol");
    eval_cmd->add_option("checkpoint", eval_args.checkpoint, "Checkpoint file")->required();
    eval_cmd->add_option("split", eval_args.split, "Split directory")->required();
    eval_cmd->add_option("--cutoffs", eval_args.cutoffs, "Cutoffs N for HR@N and NDCG@N")->delimiter(',')
        ->capture_default_str();
    eval_cmd->add_option("--seed", eval_args.seed, "Candidate sampling seed")->capture_default_str();
    eval_cmd->add_option("--candidates", eval_args.candidates, "Sampled negatives per user")->capture_default_str();
    eval_cmd->add_option("--threads", eval_args.threads, "Worker threads")->capture_default_str();
    eval_cmd->add_flag("--full-catalog", eval_args.full_catalog, "Rank against every non-interacted item");
    eval_cmd->add_option("--which", eval_args.which, "Held-out set")->check(CLI::IsMember({"test", "validation"}));
    eval_cmd->add_option("-o,--output", eval_args.output, "JSON report path (default: stdout)");
    eval_cmd->add_option("--per-user", eval_args.per_user, "Per-user CSV path");

    AnalyzeArgs an_args;
    auto* an_cmd = app.add_subcommand("analyze", "Translation-vector diagnostics and labeled exports");
    an_cmd->add_option("checkpoint", an_args.checkpoint, "Checkpoint file")->required();
    an_cmd->add_option("split", an_args.split, "Split directory")->required();
    an_cmd->add_option("--seed", an_args.seed, "Seed for sampling unobserved pairs")->capture_default_str();
    an_cmd->add_option("-o,--output", an_args.output, "Diagnostic JSON path (default: stdout)");
    an_cmd->add_flag("--ratings", an_args.ratings, "Break the diagnostic down by rating");
    an_cmd->add_option("--labels", an_args.labels, "user<TAB>item<TAB>label file for --export");
    an_cmd->add_flag("--labels-from-ratings", an_args.labels_from_ratings, "Label exported pairs by rating");
    an_cmd->add_option("--export", an_args.export_path, "Write labeled vectors to this TSV");
    an_cmd->add_option("--export-kind", an_args.export_kind, "translation (r_ui) or difference (alpha_u - beta_i)")
        ->check(CLI::IsMember({"translation", "difference"}));

    ExportArgs ex_args;
    auto* ex_cmd = app.add_subcommand("export", "Write a checkpoint's embedding tables as TSV");
    ex_cmd->add_option("checkpoint", ex_args.checkpoint, "Checkpoint file")->required();
    ex_cmd->add_option("output", ex_args.output, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*split) return run_split(split_args);
        if (*train_cmd) return run_train(train_args, flags);
        if (*eval_cmd) return run_evaluate(eval_args);
        if (*an_cmd) return run_analyze(an_args);
        if (*ex_cmd) return run_export(ex_args);
    } catch (const FileError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitMissingFile;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitDiverged;
    } catch (const DimensionMismatchError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitDimensionMismatch;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitError;
    }
    return kExitError;
}

#pragma once

// Mini-batch SGD over sampled triples, checkpoint selection on validation
// HR@10, checkpoint files and grid search.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "transcf/dataset.hpp"
#include "transcf/embed.hpp"
#include "transcf/error.hpp"
#include "transcf/eval.hpp"
#include "transcf/format.hpp"
#include "transcf/model.hpp"

namespace transcf {

enum class ProjectionCadence { PerEpoch, PerBatch };

struct TrainConfig {
    /// hyper.epochs is the epoch budget.
    HyperParams hyper;
    Variant variant = Variant::TransCF;
    ProjectionCadence projection_cadence = ProjectionCadence::PerEpoch;
    ProjectionMode projection_mode = ProjectionMode::UnitBall;
    ObjectiveOptions objective;
    /// Stop after this many epochs without a validation HR@10 improvement.
    std::size_t early_stop_patience = 10;
    /// Candidate sampling for the per-epoch validation pass.
    EvalConfig validation{99, {10}, 0, false, 1};
    std::size_t threads = 1;

    void validate() const {
        if (hyper.batch_size < 1) throw ConfigError("batch_size must be at least 1");
        if (hyper.epochs < 1) throw ConfigError("epochs must be at least 1");
        if (hyper.dim < 1) throw ConfigError("dim must be at least 1");
        if (hyper.negatives_per_user < 1) throw ConfigError("negatives_per_user must be at least 1");
        if (!(hyper.learning_rate >= 0)) throw ConfigError("learning rate must be non-negative");
        if (!(hyper.margin >= 0)) throw ConfigError("margin must be non-negative");
        if (!(hyper.lambda_nbr >= 0) || !(hyper.lambda_dist >= 0))
            throw ConfigError("regularization coefficients must be non-negative");
        if (std::find(validation.cutoffs.begin(), validation.cutoffs.end(), 10) == validation.cutoffs.end())
            throw ConfigError("validation cutoffs must include 10");
    }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double mean_batch_objective = 0;
    double reg_nbr = 0;
    double reg_dist = 0;
    double validation_hr10 = 0;
    double seconds = 0;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_validation_hr10 = -std::numeric_limits<double>::infinity();
    std::size_t batch_steps = 0;
};

struct TrainResult {
    ModelState model;
    TrainLog log;
};

namespace detail {

inline bool rows_finite(const ModelState& m, const GradientAccumulator& acc) {
    for (UserId u : acc.touched_users())
        for (double x : m.users.row(u))
            if (!std::isfinite(x)) return false;
    for (ItemId i : acc.touched_items())
        for (double x : m.items.row(i))
            if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace detail

/// Called after each epoch's projection and validation with the current
/// (not the best) parameters.
using EpochCallback = std::function<void(const EpochRecord&, const ModelState&)>;

/// Trains a model on split.train and returns the parameters from the epoch
/// with the best validation HR@10 (first such epoch on ties).
inline TrainResult train(const SplitDataset& split, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
    cfg.validate();
    const InteractionDataset& ds = split.train;
    if (ds.empty()) throw EmptyDatasetError("train set is empty");

    std::mt19937_64 rng(cfg.hyper.seed);
    ModelState model = init_model(ds.user_count(), ds.item_count(), cfg.hyper, cfg.variant, rng);

    TrainResult result{model, {}};
    GradientAccumulator acc(ds.user_count(), ds.item_count(), cfg.hyper.dim);
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= cfg.hyper.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        SampleResult sample = sample_triples(ds, cfg.hyper.negatives_per_user, rng);
        std::shuffle(sample.triples.begin(), sample.triples.end(), rng);

        const std::span<const TrainTriple> all(sample.triples);
        const std::size_t bs = cfg.hyper.batch_size;
        double objective_sum = 0;
        std::size_t batches = 0;
        for (std::size_t lo = 0; lo < all.size(); lo += bs) {
            const auto batch = all.subspan(lo, std::min(bs, all.size() - lo));
            acc.clear();
            LossTerms loss;
            try {
                loss = accumulate_gradients(model, ds, batch, acc, cfg.objective, cfg.threads);
            } catch (const NumericStateError& e) {
                throw DivergenceError(epoch, batches, e.what());
            }
            if (!std::isfinite(loss.total)) throw DivergenceError(epoch, batches, "non-finite objective");
            acc.apply(model, cfg.hyper.learning_rate);
            if (!detail::rows_finite(model, acc)) throw DivergenceError(epoch, batches, "non-finite parameters");
            if (cfg.projection_cadence == ProjectionCadence::PerBatch) project_model(model, cfg.projection_mode);
            objective_sum += loss.total;
            ++batches;
            ++result.log.batch_steps;
        }
        if (cfg.projection_cadence == ProjectionCadence::PerEpoch) project_model(model, cfg.projection_mode);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.mean_batch_objective = batches ? objective_sum / static_cast<double>(batches) : 0.0;
        rec.reg_nbr = reg_nbr_value(model, ds, cfg.objective);
        rec.reg_dist = reg_dist_value(model, ds);
        if (!split.validation.empty()) {
            EvalConfig vcfg = cfg.validation;
            vcfg.threads = cfg.threads;
            rec.validation_hr10 = evaluate(model, split, false, vcfg).hr_at(10);
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec, model);

        if (rec.validation_hr10 > result.log.best_validation_hr10) {
            result.log.best_validation_hr10 = rec.validation_hr10;
            result.log.best_epoch = epoch;
            result.model = model;
            since_best = 0;
        } else if (++since_best >= cfg.early_stop_patience) {
            break;
        }
    }
    return result;
}

/// epoch,mean_batch_objective,reg_nbr,reg_dist,validation_hr10[,seconds]
///
/// Wall-clock time is opt-in so that the default output is reproducible.
inline void write_train_log_csv(std::ostream& out, const TrainLog& log, bool include_seconds = false) {
    out << "epoch,mean_batch_objective,reg_nbr,reg_dist,validation_hr10";
    if (include_seconds) out << ",seconds";
    out << '\n';
    for (const EpochRecord& r : log.epochs) {
        out << r.epoch << ',' << format_real(r.mean_batch_objective) << ',' << format_real(r.reg_nbr) << ','
            << format_real(r.reg_dist) << ',' << format_real(r.validation_hr10);
        if (include_seconds) out << ',' << format_real(r.seconds);
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
    ModelState model;
    std::vector<std::string> user_tokens;
    std::vector<std::string> item_tokens;
    /// Header keys that are not model settings (best_epoch, ...).
    std::map<std::string, std::string> extra;
};

inline void write_checkpoint(std::ostream& out, const ModelState& model, const InteractionDataset& ds,
                             const std::map<std::string, std::string>& extra = {}) {
    const HyperParams& h = model.hyper;
    out << "# transcf checkpoint\n"
        << "format=1\n"
        << "variant=" << to_string(model.variant) << '\n'
        << "dim=" << model.dim() << '\n'
        << "users=" << model.users.rows() << '\n'
        << "items=" << model.items.rows() << '\n'
        << "learning_rate=" << format_real(h.learning_rate) << '\n'
        << "margin=" << format_real(h.margin) << '\n'
        << "lambda_nbr=" << format_real(h.lambda_nbr) << '\n'
        << "lambda_dist=" << format_real(h.lambda_dist) << '\n'
        << "epochs=" << h.epochs << '\n'
        << "negatives_per_user=" << h.negatives_per_user << '\n'
        << "batch_size=" << h.batch_size << '\n'
        << "seed=" << h.seed << '\n';
    for (const auto& [k, v] : extra) out << k << '=' << v << '\n';
    out << "[users]\n";
    write_embeddings(out, model.users, ds.users());
    out << "[items]\n";
    write_embeddings(out, model.items, ds.items());
}

inline Checkpoint read_checkpoint(std::istream& in) {
    std::map<std::string, std::string> header;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        if (t == "[users]") break;
        const auto eq = t.find('=');
        if (eq == std::string_view::npos) throw ParseError(line_no, "checkpoint header line without '='");
        header[std::string(trim(t.substr(0, eq)))] = std::string(trim(t.substr(eq + 1)));
    }
    if (!in) throw ParseError(line_no, "checkpoint has no [users] section");

    auto take = [&](const std::string& key) -> std::string {
        auto it = header.find(key);
        if (it == header.end()) throw ParseError(line_no, "checkpoint header is missing '" + key + "'");
        std::string v = it->second;
        header.erase(it);
        return v;
    };
    auto take_uint = [&](const std::string& key) {
        auto v = parse_int(take(key));
        if (!v || *v < 0) throw ParseError(line_no, "checkpoint key '" + key + "' is not a count");
        return static_cast<std::size_t>(*v);
    };
    auto take_real = [&](const std::string& key) {
        auto v = parse_double(take(key));
        if (!v) throw ParseError(line_no, "checkpoint key '" + key + "' is not a number");
        return *v;
    };

    Checkpoint cp;
    take("format");
    const auto variant = parse_variant(take("variant"));
    if (!variant) throw ParseError(line_no, "unknown variant in checkpoint");
    cp.model.variant = *variant;
    HyperParams& h = cp.model.hyper;
    h.dim = take_uint("dim");
    const std::size_t n_users = take_uint("users");
    const std::size_t n_items = take_uint("items");
    h.learning_rate = take_real("learning_rate");
    h.margin = take_real("margin");
    h.lambda_nbr = take_real("lambda_nbr");
    h.lambda_dist = take_real("lambda_dist");
    h.epochs = take_uint("epochs");
    h.negatives_per_user = take_uint("negatives_per_user");
    h.batch_size = take_uint("batch_size");
    h.seed = static_cast<std::uint64_t>(take_uint("seed"));
    cp.extra = std::move(header);

    auto load = [&](std::size_t count, EmbeddingTable& table, std::vector<std::string>& tokens) {
        table = EmbeddingTable(count, h.dim);
        auto rows = read_embeddings(in, count, h.dim);
        for (std::size_t r = 0; r < count; ++r) {
            std::ranges::copy(rows[r].values, table.row(r).begin());
            tokens.push_back(std::move(rows[r].token));
        }
    };
    load(n_users, cp.model.users, cp.user_tokens);
    while (std::getline(in, line) && trim(line).empty()) {
    }
    if (trim(line) != "[items]") throw ParseError(line_no, "checkpoint has no [items] section");
    load(n_items, cp.model.items, cp.item_tokens);
    return cp;
}

/// Reorders checkpoint rows into the dataset's id space. Every dataset token
/// must be present in the checkpoint.
inline ModelState bind_checkpoint(const Checkpoint& cp, const InteractionDataset& ds) {
    if (cp.user_tokens.size() != ds.user_count() || cp.item_tokens.size() != ds.item_count())
        throw DimensionMismatchError("checkpoint has " + std::to_string(cp.user_tokens.size()) + " users / " +
                                     std::to_string(cp.item_tokens.size()) + " items, dataset has " +
                                     std::to_string(ds.user_count()) + " / " + std::to_string(ds.item_count()));
    ModelState m = cp.model;
    auto remap = [](const EmbeddingTable& src, const std::vector<std::string>& tokens, const Vocabulary& vocab,
                    EmbeddingTable& dst, const char* what) {
        for (std::size_t r = 0; r < tokens.size(); ++r) {
            auto id = vocab.find(tokens[r]);
            if (!id) throw DimensionMismatchError(std::string("checkpoint ") + what + " '" + tokens[r] +
                                                  "' is not in the dataset");
            std::ranges::copy(src.row(r), dst.row(*id).begin());
        }
    };
    remap(cp.model.users, cp.user_tokens, ds.users(), m.users, "user");
    remap(cp.model.items, cp.item_tokens, ds.items(), m.items, "item");
    return m;
}

// ---------------------------------------------------------------------------
// Grid search

struct GridSpec {
    std::vector<std::size_t> dims;
    std::vector<double> learning_rates;
    std::vector<double> margins;
    std::vector<double> lambda_nbrs;
    std::vector<double> lambda_dists;

    /// Search space used for the published experiments.
    static GridSpec full() {
        return {{8, 16, 32, 64, 128},
                {0.0005, 0.001, 0.005, 0.01, 0.05, 0.1},
                {0.0, 0.1, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0},
                {0.0, 0.001, 0.01, 0.1},
                {0.0, 0.001, 0.01, 0.1}};
    }

    std::size_t size() const {
        return dims.size() * learning_rates.size() * margins.size() * lambda_nbrs.size() * lambda_dists.size();
    }
};

struct GridCell {
    TrainConfig config;
    /// Best validation HR@10, or -inf if training failed.
    double score = -std::numeric_limits<double>::infinity();
    std::string error;
};

struct GridResult {
    std::vector<GridCell> cells;
    std::size_t best_index = 0;

    const TrainConfig& best() const { return cells.at(best_index).config; }
};

/// Cells are enumerated with dim outermost and lambda_dist innermost. The
/// winner is the first cell with the highest score.
inline GridResult grid_search(const SplitDataset& split, const TrainConfig& base, const GridSpec& grid,
                              std::size_t threads = 1) {
    if (grid.size() == 0) throw ConfigError("grid search needs at least one value per axis");
    GridResult result;
    for (std::size_t k : grid.dims)
        for (double lr : grid.learning_rates)
            for (double m : grid.margins)
                for (double ln : grid.lambda_nbrs)
                    for (double ld : grid.lambda_dists) {
                        GridCell cell;
                        cell.config = base;
                        cell.config.hyper.dim = k;
                        cell.config.hyper.learning_rate = lr;
                        cell.config.hyper.margin = m;
                        cell.config.hyper.lambda_nbr = ln;
                        cell.config.hyper.lambda_dist = ld;
                        result.cells.push_back(std::move(cell));
                    }

    auto run_cell = [&](GridCell& cell) {
        try {
            cell.score = train(split, cell.config).log.best_validation_hr10;
        } catch (const Error& e) {
            cell.score = -std::numeric_limits<double>::infinity();
            cell.error = e.what();
        }
    };

    threads = std::clamp<std::size_t>(threads, 1, result.cells.size());
    if (threads == 1) {
        for (auto& cell : result.cells) run_cell(cell);
    } else {
        std::size_t next = 0;
        std::mutex mu;
        std::vector<std::thread> workers;
        for (std::size_t w = 0; w < threads; ++w) {
            workers.emplace_back([&] {
                while (true) {
                    std::size_t k;
                    {
                        std::lock_guard lock(mu);
                        if (next >= result.cells.size()) return;
                        k = next++;
                    }
                    run_cell(result.cells[k]);
                }
            });
        }
        for (auto& t : workers) t.join();
    }

    for (std::size_t k = 1; k < result.cells.size(); ++k)
        if (result.cells[k].score > result.cells[result.best_index].score) result.best_index = k;
    return result;
}

}  // namespace transcf

#pragma once

// Leave-one-out top-N evaluation with sampled negative candidates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <ostream>
#include <random>
#include <span>
#include <thread>
#include <unordered_set>
#include <vector>

#include "transcf/dataset.hpp"
#include "transcf/embed.hpp"
#include "transcf/model.hpp"

#include <json.hpp>

namespace transcf {

struct EvalConfig {
    std::size_t candidate_negatives = 99;
    std::vector<std::size_t> cutoffs{10, 20};
    std::uint64_t seed = 0;
    /// Rank against every item the user has not interacted with.
    bool full_catalog = false;
    std::size_t threads = 1;
};

struct UserEval {
    UserId user = 0;
    ItemId target = 0;
    std::size_t rank = 0;
    std::size_t candidates = 0;
    /// Fewer negatives than requested were available.
    bool short_pool = false;
};

struct EvalReport {
    std::vector<std::size_t> cutoffs;
    std::vector<double> hr;
    std::vector<double> ndcg;
    std::vector<UserEval> users;

    double hr_at(std::size_t n) const { return hr.at(index_of(n)); }
    double ndcg_at(std::size_t n) const { return ndcg.at(index_of(n)); }

private:
    std::size_t index_of(std::size_t n) const {
        auto it = std::find(cutoffs.begin(), cutoffs.end(), n);
        if (it == cutoffs.end()) throw Error("cutoff " + std::to_string(n) + " was not evaluated");
        return static_cast<std::size_t>(it - cutoffs.begin());
    }
};

inline double hit_contribution(std::size_t rank, std::size_t cutoff) { return rank <= cutoff ? 1.0 : 0.0; }

/// Single relevant item, so the ideal DCG is 1.
inline double ndcg_contribution(std::size_t rank, std::size_t cutoff) {
    return rank <= cutoff ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

/// 1 + number of candidate scores strictly above the target's.
inline std::size_t rank_from_scores(double target, std::span<const double> candidates) {
    return 1 + static_cast<std::size_t>(
                   std::count_if(candidates.begin(), candidates.end(), [&](double s) { return s > target; }));
}

inline std::size_t rank_of(const ModelState& model, const InteractionDataset& ds, UserId u, ItemId target,
                           std::span<const ItemId> candidates) {
    const double t = score(model, ds, u, target);
    std::size_t rank = 1;
    for (ItemId c : candidates)
        if (score(model, ds, u, c) > t) ++rank;
    return rank;
}

/// Pairwise summation.
inline double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 8) {
        double s = 0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

/// Scores with neighborhood means computed once for all users and items.
/// Only valid while the parameters it was built from stay unchanged.
class ScoreCache {
public:
    ScoreCache(const ModelState& model, const InteractionDataset& ds) : model_(model), r_(model.dim()) {
        if (uses_neighborhoods(model.variant)) {
            user_nbr_ = EmbeddingTable(ds.user_count(), model.dim());
            item_nbr_ = EmbeddingTable(ds.item_count(), model.dim());
            for (UserId u = 0; u < ds.user_count(); ++u) neighborhood_user(model, ds, u, user_nbr_.row(u));
            for (ItemId i = 0; i < ds.item_count(); ++i) neighborhood_item(model, ds, i, item_nbr_.row(i));
        }
    }

    double operator()(UserId u, ItemId i) {
        const std::size_t k = r_.size();
        switch (model_.variant) {
            case Variant::TransCF:
            case Variant::TransCFDot: {
                auto mu = user_nbr_.row(u);
                auto mi = item_nbr_.row(i);
                for (std::size_t d = 0; d < k; ++d) r_[d] = mu[d] * mi[d];
                break;
            }
            case Variant::TransCFAlt: {
                auto a = model_.users.row(u);
                auto b = model_.items.row(i);
                for (std::size_t d = 0; d < k; ++d) r_[d] = a[d] * b[d];
                break;
            }
            case Variant::CML:
                std::ranges::fill(r_, 0.0);
                break;
        }
        return score_with(model_, u, i, r_);
    }

private:
    const ModelState& model_;
    EmbeddingTable user_nbr_;
    EmbeddingTable item_nbr_;
    std::vector<double> r_;
};

/// Candidate negatives for one user: uniform without replacement over items
/// absent from every split of that user. The draw depends only on (seed, u).
inline std::vector<ItemId> sample_candidates(const SplitDataset& split, UserId u, std::size_t count,
                                             std::uint64_t seed, bool full_catalog) {
    const std::size_t n_items = split.train.item_count();
    std::size_t known = split.train.items_of(u).size();
    if (auto it = split.validation.find(u); it != split.validation.end() && !split.train.contains(u, it->second.item))
        ++known;
    if (auto it = split.test.find(u); it != split.test.end() && !split.train.contains(u, it->second.item)) {
        auto v = split.validation.find(u);
        if (v == split.validation.end() || v->second.item != it->second.item) ++known;
    }
    const std::size_t available = n_items - std::min(known, n_items);

    std::vector<ItemId> out;
    if (full_catalog || available <= count || count * 3 >= available) {
        std::vector<ItemId> pool;
        pool.reserve(available);
        for (ItemId j = 0; j < n_items; ++j)
            if (!split.known(u, j)) pool.push_back(j);
        if (full_catalog || pool.size() <= count) return pool;
        std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), u};
        std::mt19937_64 rng(sq);
        for (std::size_t k = 0; k < count; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
            std::swap(pool[k], pool[pick(rng)]);
        }
        pool.resize(count);
        return pool;
    }
    std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), u};
    std::mt19937_64 rng(sq);
    std::uniform_int_distribution<ItemId> pick(0, static_cast<ItemId>(n_items - 1));
    std::unordered_set<ItemId> chosen;
    out.reserve(count);
    while (out.size() < count) {
        const ItemId j = pick(rng);
        if (split.known(u, j) || !chosen.insert(j).second) continue;
        out.push_back(j);
    }
    return out;
}

/// Ranks each user's held-out item (validation or test) among sampled
/// candidates and aggregates HR@N and NDCG@N.
inline EvalReport evaluate(const ModelState& model, const SplitDataset& split, bool use_test, const EvalConfig& cfg) {
    if (cfg.candidate_negatives == 0) throw ConfigError("candidate_negatives must be at least 1");
    if (!std::is_sorted(cfg.cutoffs.begin(), cfg.cutoffs.end())) throw ConfigError("cutoffs must be ascending");
    if (model.users.rows() != split.train.user_count() || model.items.rows() != split.train.item_count())
        throw DimensionMismatchError("model tables do not match the dataset");

    const auto& held = split.held_out(use_test);
    EvalReport report;
    report.cutoffs = cfg.cutoffs;
    report.users.reserve(held.size());
    for (const auto& [u, rec] : held) report.users.push_back(UserEval{u, rec.item, 0, 0, false});

    const ScoreCache shared(model, split.train);
    auto run = [&](std::size_t lo, std::size_t hi) {
        ScoreCache cache = shared;
        std::vector<double> scores;
        for (std::size_t k = lo; k < hi; ++k) {
            UserEval& ue = report.users[k];
            const auto cand = sample_candidates(split, ue.user, cfg.candidate_negatives, cfg.seed, cfg.full_catalog);
            scores.resize(cand.size());
            for (std::size_t c = 0; c < cand.size(); ++c) scores[c] = cache(ue.user, cand[c]);
            ue.rank = rank_from_scores(cache(ue.user, ue.target), scores);
            ue.candidates = cand.size();
            ue.short_pool = !cfg.full_catalog && cand.size() < cfg.candidate_negatives;
        }
    };

    const std::size_t n = report.users.size();
    const std::size_t threads = std::clamp<std::size_t>(cfg.threads, 1, std::max<std::size_t>(n, 1));
    if (threads == 1) {
        run(0, n);
    } else {
        std::vector<std::thread> workers;
        std::vector<std::exception_ptr> errors(threads);
        const std::size_t chunk = (n + threads - 1) / threads;
        for (std::size_t w = 0; w < threads; ++w) {
            workers.emplace_back([&, w] {
                try {
                    run(std::min(n, w * chunk), std::min(n, (w + 1) * chunk));
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& t : workers) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    std::vector<double> contrib(n);
    for (std::size_t cutoff : cfg.cutoffs) {
        double hr = 0, ndcg = 0;
        if (n > 0) {
            for (std::size_t k = 0; k < n; ++k) contrib[k] = hit_contribution(report.users[k].rank, cutoff);
            hr = pairwise_sum(contrib) / static_cast<double>(n);
            for (std::size_t k = 0; k < n; ++k) contrib[k] = ndcg_contribution(report.users[k].rank, cutoff);
            ndcg = pairwise_sum(contrib) / static_cast<double>(n);
        }
        report.hr.push_back(hr);
        report.ndcg.push_back(ndcg);
    }
    return report;
}

/// {"HR": {"10": ..., "20": ...}, "NDCG": {...}}
inline nlohmann::ordered_json report_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["HR"] = nlohmann::ordered_json::object();
    j["NDCG"] = nlohmann::ordered_json::object();
    for (std::size_t k = 0; k < report.cutoffs.size(); ++k) {
        const std::string key = std::to_string(report.cutoffs[k]);
        j["HR"][key] = report.hr[k];
        j["NDCG"][key] = report.ndcg[k];
    }
    return j;
}

inline void write_per_user_csv(std::ostream& out, const EvalReport& report, const InteractionDataset& ds) {
    out << "user,item,rank,candidates,short_pool";
    for (std::size_t c : report.cutoffs) out << ",hr@" << c << ",ndcg@" << c;
    out << '\n';
    for (const UserEval& ue : report.users) {
        out << ds.users().token(ue.user) << ',' << ds.items().token(ue.target) << ',' << ue.rank << ','
            << ue.candidates << ',' << (ue.short_pool ? 1 : 0);
        for (std::size_t c : report.cutoffs)
            out << ',' << hit_contribution(ue.rank, c) << ',' << format_real(ndcg_contribution(ue.rank, c));
        out << '\n';
    }
}

}  // namespace transcf

#pragma once

// Translation vectors, scores, loss terms and their analytic gradients.
//
// Objective of one mini-batch B of (u, i, j) triples:
//
//   J_B = sum_B [margin - s(u,i) + s(u,j)]_+
//       + lambda_nbr  * ( sum_{u in U_B} |alpha_u - alpha_u^nbr|^2
//                       + sum_{e in I_B} |beta_e - beta_e^nbr|^2 )
//       + lambda_dist * sum_{(u,i) in P_B} |alpha_u + r_ui - beta_i|^2
//
// U_B, I_B and P_B are the distinct users, items (positive and negative) and
// positive pairs of the batch. Neighborhood means are functions of the
// parameters, so gradients flow into every neighbor unless
// stop_gradient_neighborhoods is set.

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "transcf/dataset.hpp"
#include "transcf/embed.hpp"
#include "transcf/error.hpp"

namespace transcf {

struct ObjectiveOptions {
    /// Treat neighborhood means as constants when differentiating.
    bool stop_gradient_neighborhoods = false;
    /// Leave entities without neighbors out of the neighborhood regularizer
    /// instead of pulling them toward the origin.
    bool skip_empty_neighborhoods = false;
};

struct ScoreBreakdown {
    double score = 0;
    std::vector<double> translation;
    /// alpha_u + r_ui - beta_i
    std::vector<double> residual;
};

struct LossTerms {
    double hinge = 0;
    double reg_nbr = 0;
    double reg_dist = 0;
    double total = 0;
};

inline double squared_norm(std::span<const double> v) {
    double s = 0;
    for (double x : v) s += x * x;
    return s;
}

// ---------------------------------------------------------------------------
// Translation and score

/// Writes r_ui into out. `user_nbr` and `item_nbr` are scratch buffers of
/// length K used for the neighborhood variants.
inline void translation_into(const ModelState& model, const InteractionDataset& ds, UserId u, ItemId i,
                             std::span<double> out, std::span<double> user_nbr, std::span<double> item_nbr) {
    switch (model.variant) {
        case Variant::TransCF:
        case Variant::TransCFDot:
            neighborhood_user(model, ds, u, user_nbr);
            neighborhood_item(model, ds, i, item_nbr);
            for (std::size_t d = 0; d < out.size(); ++d) out[d] = user_nbr[d] * item_nbr[d];
            break;
        case Variant::TransCFAlt: {
            auto a = model.users.row(u);
            auto b = model.items.row(i);
            for (std::size_t d = 0; d < out.size(); ++d) out[d] = a[d] * b[d];
            break;
        }
        case Variant::CML:
            std::fill(out.begin(), out.end(), 0.0);
            break;
    }
}

inline std::vector<double> translation(const ModelState& model, const InteractionDataset& ds, UserId u, ItemId i) {
    const std::size_t k = model.dim();
    std::vector<double> out(k), a(k), b(k);
    translation_into(model, ds, u, i, out, a, b);
    return out;
}

/// Score from a precomputed translation.
inline double score_with(const ModelState& model, UserId u, ItemId i, std::span<const double> r) {
    auto a = model.users.row(u);
    auto b = model.items.row(i);
    double s = 0;
    if (is_metric(model.variant)) {
        for (std::size_t d = 0; d < r.size(); ++d) {
            const double e = a[d] + r[d] - b[d];
            s += e * e;
        }
        return -s;
    }
    for (std::size_t d = 0; d < r.size(); ++d) s += (a[d] + r[d]) * b[d];
    return s;
}

/// |alpha_u + r - beta_i|^2, regardless of the scoring form.
inline double translated_distance(const ModelState& model, UserId u, ItemId i, std::span<const double> r) {
    auto a = model.users.row(u);
    auto b = model.items.row(i);
    double s = 0;
    for (std::size_t d = 0; d < r.size(); ++d) {
        const double e = a[d] + r[d] - b[d];
        s += e * e;
    }
    return s;
}

inline ScoreBreakdown score_breakdown(const ModelState& model, const InteractionDataset& ds, UserId u, ItemId i) {
    ScoreBreakdown out;
    out.translation = translation(model, ds, u, i);
    out.residual.resize(model.dim());
    auto a = model.users.row(u);
    auto b = model.items.row(i);
    for (std::size_t d = 0; d < model.dim(); ++d) out.residual[d] = a[d] + out.translation[d] - b[d];
    out.score = score_with(model, u, i, out.translation);
    return out;
}

inline double score(const ModelState& model, const InteractionDataset& ds, UserId u, ItemId i) {
    return score_with(model, u, i, translation(model, ds, u, i));
}

inline double hinge(double margin, double pos_score, double neg_score) {
    return std::max(0.0, margin - pos_score + neg_score);
}

inline double hinge_term(const ModelState& model, const InteractionDataset& ds, const TrainTriple& t) {
    return hinge(model.hyper.margin, score(model, ds, t.user, t.positive), score(model, ds, t.user, t.negative));
}

// ---------------------------------------------------------------------------
// Regularizers over the whole train set

inline double reg_nbr_value(const ModelState& model, const InteractionDataset& ds,
                            const ObjectiveOptions& opts = {}) {
    std::vector<double> m(model.dim());
    double total = 0;
    for (UserId u = 0; u < ds.user_count(); ++u) {
        if (opts.skip_empty_neighborhoods && ds.items_of(u).empty()) continue;
        neighborhood_user(model, ds, u, m);
        auto a = model.users.row(u);
        for (std::size_t d = 0; d < m.size(); ++d) total += (a[d] - m[d]) * (a[d] - m[d]);
    }
    for (ItemId i = 0; i < ds.item_count(); ++i) {
        if (opts.skip_empty_neighborhoods && ds.users_of(i).empty()) continue;
        neighborhood_item(model, ds, i, m);
        auto b = model.items.row(i);
        for (std::size_t d = 0; d < m.size(); ++d) total += (b[d] - m[d]) * (b[d] - m[d]);
    }
    return total;
}

inline double reg_dist_value(const ModelState& model, const InteractionDataset& ds) {
    const std::size_t k = model.dim();
    std::vector<double> r(k), a(k), b(k);
    double total = 0;
    for (const Record& rec : ds.records()) {
        translation_into(model, ds, rec.user, rec.item, r, a, b);
        total += translated_distance(model, rec.user, rec.item, r);
    }
    return total;
}

// ---------------------------------------------------------------------------
// Batch objective

struct BatchEntities {
    std::vector<UserId> users;
    std::vector<ItemId> items;
    std::vector<std::pair<UserId, ItemId>> positive_pairs;
};

/// Distinct users, items and positive pairs of a batch, each sorted.
inline BatchEntities batch_entities(std::span<const TrainTriple> batch) {
    BatchEntities out;
    for (const auto& t : batch) {
        out.users.push_back(t.user);
        out.items.push_back(t.positive);
        out.items.push_back(t.negative);
        out.positive_pairs.emplace_back(t.user, t.positive);
    }
    auto uniq = [](auto& v) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
    };
    uniq(out.users);
    uniq(out.items);
    uniq(out.positive_pairs);
    return out;
}

inline LossTerms objective(const ModelState& model, const InteractionDataset& ds, std::span<const TrainTriple> batch,
                           const ObjectiveOptions& opts = {}) {
    if (batch.empty()) throw Error("objective of an empty batch");
    LossTerms out;
    for (const auto& t : batch) out.hinge += hinge_term(model, ds, t);

    const BatchEntities ent = batch_entities(batch);
    std::vector<double> m(model.dim());
    for (UserId u : ent.users) {
        if (opts.skip_empty_neighborhoods && ds.items_of(u).empty()) continue;
        neighborhood_user(model, ds, u, m);
        auto a = model.users.row(u);
        for (std::size_t d = 0; d < m.size(); ++d) out.reg_nbr += (a[d] - m[d]) * (a[d] - m[d]);
    }
    for (ItemId i : ent.items) {
        if (opts.skip_empty_neighborhoods && ds.users_of(i).empty()) continue;
        neighborhood_item(model, ds, i, m);
        auto b = model.items.row(i);
        for (std::size_t d = 0; d < m.size(); ++d) out.reg_nbr += (b[d] - m[d]) * (b[d] - m[d]);
    }
    for (auto [u, i] : ent.positive_pairs)
        out.reg_dist += translated_distance(model, u, i, translation(model, ds, u, i));

    out.total = out.hinge + model.hyper.lambda_nbr * out.reg_nbr + model.hyper.lambda_dist * out.reg_dist;
    return out;
}

// ---------------------------------------------------------------------------
// Gradients

/// Sparse-touch gradient buffer with the same shape as the model tables.
class GradientAccumulator {
public:
    GradientAccumulator() = default;
    GradientAccumulator(std::size_t n_users, std::size_t n_items, std::size_t dim)
        : users_(n_users, dim), items_(n_items, dim), user_mark_(n_users, 0), item_mark_(n_items, 0) {}

    std::span<double> user(UserId u) {
        if (!user_mark_[u]) {
            user_mark_[u] = 1;
            touched_users_.push_back(u);
        }
        return users_.row(u);
    }

    std::span<double> item(ItemId i) {
        if (!item_mark_[i]) {
            item_mark_[i] = 1;
            touched_items_.push_back(i);
        }
        return items_.row(i);
    }

    const EmbeddingTable& users() const noexcept { return users_; }
    const EmbeddingTable& items() const noexcept { return items_; }
    const std::vector<UserId>& touched_users() const noexcept { return touched_users_; }
    const std::vector<ItemId>& touched_items() const noexcept { return touched_items_; }

    void clear() {
        for (UserId u : touched_users_) {
            std::ranges::fill(users_.row(u), 0.0);
            user_mark_[u] = 0;
        }
        for (ItemId i : touched_items_) {
            std::ranges::fill(items_.row(i), 0.0);
            item_mark_[i] = 0;
        }
        touched_users_.clear();
        touched_items_.clear();
    }

    void add(const GradientAccumulator& other) {
        for (UserId u : other.touched_users_) {
            auto dst = user(u);
            auto src = other.users_.row(u);
            for (std::size_t d = 0; d < dst.size(); ++d) dst[d] += src[d];
        }
        for (ItemId i : other.touched_items_) {
            auto dst = item(i);
            auto src = other.items_.row(i);
            for (std::size_t d = 0; d < dst.size(); ++d) dst[d] += src[d];
        }
    }

    /// theta <- theta - lr * grad over the touched rows.
    void apply(ModelState& model, double lr) const {
        for (UserId u : touched_users_) {
            auto dst = model.users.row(u);
            auto src = users_.row(u);
            for (std::size_t d = 0; d < dst.size(); ++d) dst[d] -= lr * src[d];
        }
        for (ItemId i : touched_items_) {
            auto dst = model.items.row(i);
            auto src = items_.row(i);
            for (std::size_t d = 0; d < dst.size(); ++d) dst[d] -= lr * src[d];
        }
    }

private:
    EmbeddingTable users_;
    EmbeddingTable items_;
    std::vector<unsigned char> user_mark_;
    std::vector<unsigned char> item_mark_;
    std::vector<UserId> touched_users_;
    std::vector<ItemId> touched_items_;
};

namespace detail {

/// Evaluates and differentiates the batch objective against fixed
/// parameters. Neighborhood means are memoized for the lifetime of the pass
/// only, since the parameters do not move inside it.
class GradientPass {
public:
    GradientPass(const ModelState& model, const InteractionDataset& ds, const ObjectiveOptions& opts,
                 GradientAccumulator& acc)
        : model_(model), ds_(ds), opts_(opts), acc_(acc), k_(model.dim()),
          r_(k_), gx_(k_), gb_(k_), gr_(k_), tmp_(k_) {}

    /// Hinge term of one triple plus its gradient; returns the term.
    double triple(const TrainTriple& t) {
        const double s_pos = pair_score(t.user, t.positive);
        const double s_neg = pair_score(t.user, t.negative);
        const double h = hinge(model_.hyper.margin, s_pos, s_neg);
        if (!std::isfinite(s_pos) || !std::isfinite(s_neg) || !std::isfinite(h))
            throw NumericStateError(describe(t) + ": non-finite hinge term");
        // zero subgradient at the kink
        if (h > 0) {
            pair_gradient(t.user, t.positive, -1.0, 0.0);
            pair_gradient(t.user, t.negative, 1.0, 0.0);
            check_finite(t);
        }
        return h;
    }

    double user_nbr_reg(UserId u, double lambda) {
        const auto& nbrs = ds_.items_of(u);
        if (opts_.skip_empty_neighborhoods && nbrs.empty()) return 0;
        auto m = user_nbr(u);
        auto a = model_.users.row(u);
        double value = 0;
        for (std::size_t d = 0; d < k_; ++d) {
            tmp_[d] = a[d] - m[d];
            value += tmp_[d] * tmp_[d];
        }
        if (lambda == 0) return value;
        auto ga = acc_.user(u);
        for (std::size_t d = 0; d < k_; ++d) ga[d] += 2 * lambda * tmp_[d];
        if (!opts_.stop_gradient_neighborhoods && !nbrs.empty()) {
            const double w = -2 * lambda / static_cast<double>(nbrs.size());
            for (ItemId k : nbrs) {
                auto g = acc_.item(k);
                for (std::size_t d = 0; d < k_; ++d) g[d] += w * tmp_[d];
            }
        }
        return value;
    }

    double item_nbr_reg(ItemId i, double lambda) {
        const auto& nbrs = ds_.users_of(i);
        if (opts_.skip_empty_neighborhoods && nbrs.empty()) return 0;
        auto m = item_nbr(i);
        auto b = model_.items.row(i);
        double value = 0;
        for (std::size_t d = 0; d < k_; ++d) {
            tmp_[d] = b[d] - m[d];
            value += tmp_[d] * tmp_[d];
        }
        if (lambda == 0) return value;
        auto gb = acc_.item(i);
        for (std::size_t d = 0; d < k_; ++d) gb[d] += 2 * lambda * tmp_[d];
        if (!opts_.stop_gradient_neighborhoods && !nbrs.empty()) {
            const double w = -2 * lambda / static_cast<double>(nbrs.size());
            for (UserId k : nbrs) {
                auto g = acc_.user(k);
                for (std::size_t d = 0; d < k_; ++d) g[d] += w * tmp_[d];
            }
        }
        return value;
    }

    double dist_reg(UserId u, ItemId i, double lambda) {
        fill_translation(u, i);
        const double value = translated_distance(model_, u, i, r_);
        if (lambda != 0) pair_gradient(u, i, 0.0, lambda);
        return value;
    }

private:
    std::span<const double> user_nbr(UserId u) {
        auto [it, inserted] = user_nbr_.try_emplace(u);
        if (inserted) {
            it->second.resize(k_);
            neighborhood_user(model_, ds_, u, it->second);
        }
        return it->second;
    }

    std::span<const double> item_nbr(ItemId i) {
        auto [it, inserted] = item_nbr_.try_emplace(i);
        if (inserted) {
            it->second.resize(k_);
            neighborhood_item(model_, ds_, i, it->second);
        }
        return it->second;
    }

    void fill_translation(UserId u, ItemId i) {
        switch (model_.variant) {
            case Variant::TransCF:
            case Variant::TransCFDot: {
                auto mu = user_nbr(u);
                auto mi = item_nbr(i);
                for (std::size_t d = 0; d < k_; ++d) r_[d] = mu[d] * mi[d];
                break;
            }
            case Variant::TransCFAlt: {
                auto a = model_.users.row(u);
                auto b = model_.items.row(i);
                for (std::size_t d = 0; d < k_; ++d) r_[d] = a[d] * b[d];
                break;
            }
            case Variant::CML:
                std::ranges::fill(r_, 0.0);
                break;
        }
    }

    double pair_score(UserId u, ItemId i) {
        fill_translation(u, i);
        return score_with(model_, u, i, r_);
    }

    // Adds the gradient of c_score * s(u,i) + c_dist * |alpha_u + r_ui - beta_i|^2.
    void pair_gradient(UserId u, ItemId i, double c_score, double c_dist) {
        fill_translation(u, i);
        auto a = model_.users.row(u);
        auto b = model_.items.row(i);
        if (is_metric(model_.variant)) {
            const double c = 2 * (c_dist - c_score);
            for (std::size_t d = 0; d < k_; ++d) {
                const double e = a[d] + r_[d] - b[d];
                gx_[d] = c * e;
                gb_[d] = -c * e;
            }
        } else {
            for (std::size_t d = 0; d < k_; ++d) {
                const double x = a[d] + r_[d];
                const double e = x - b[d];
                gx_[d] = c_score * b[d] + 2 * c_dist * e;
                gb_[d] = c_score * x - 2 * c_dist * e;
            }
        }
        auto ga = acc_.user(u);
        auto gi = acc_.item(i);
        for (std::size_t d = 0; d < k_; ++d) {
            ga[d] += gx_[d];
            gi[d] += gb_[d];
        }
        // dJ/dr = dJ/dx
        switch (model_.variant) {
            case Variant::TransCF:
            case Variant::TransCFDot:
                if (!opts_.stop_gradient_neighborhoods) backprop_neighborhoods(u, i);
                break;
            case Variant::TransCFAlt: {
                auto ga2 = acc_.user(u);
                auto gi2 = acc_.item(i);
                for (std::size_t d = 0; d < k_; ++d) {
                    ga2[d] += gx_[d] * b[d];
                    gi2[d] += gx_[d] * a[d];
                }
                break;
            }
            case Variant::CML:
                break;
        }
    }

    // r = mean_{k in N_u} beta_k (.) mean_{k in N_i} alpha_k
    void backprop_neighborhoods(UserId u, ItemId i) {
        const auto& items_of_u = ds_.items_of(u);
        const auto& users_of_i = ds_.users_of(i);
        if (items_of_u.empty() || users_of_i.empty()) return;  // r == 0 identically
        auto mu = user_nbr(u);
        auto mi = item_nbr(i);
        const double wu = 1.0 / static_cast<double>(items_of_u.size());
        for (std::size_t d = 0; d < k_; ++d) gr_[d] = gx_[d] * mi[d] * wu;
        for (ItemId k : items_of_u) {
            auto g = acc_.item(k);
            for (std::size_t d = 0; d < k_; ++d) g[d] += gr_[d];
        }
        const double wi = 1.0 / static_cast<double>(users_of_i.size());
        for (std::size_t d = 0; d < k_; ++d) gr_[d] = gx_[d] * mu[d] * wi;
        for (UserId k : users_of_i) {
            auto g = acc_.user(k);
            for (std::size_t d = 0; d < k_; ++d) g[d] += gr_[d];
        }
    }

    void check_finite(const TrainTriple& t) const {
        for (std::size_t d = 0; d < k_; ++d)
            if (!std::isfinite(gx_[d]) || !std::isfinite(gb_[d]))
                throw NumericStateError(describe(t) + ": non-finite gradient");
    }

    static std::string describe(const TrainTriple& t) {
        return "triple (user " + std::to_string(t.user) + ", positive " + std::to_string(t.positive) +
               ", negative " + std::to_string(t.negative) + ")";
    }

    const ModelState& model_;
    const InteractionDataset& ds_;
    const ObjectiveOptions& opts_;
    GradientAccumulator& acc_;
    std::size_t k_;
    std::vector<double> r_, gx_, gb_, gr_, tmp_;
    std::unordered_map<UserId, std::vector<double>> user_nbr_;
    std::unordered_map<ItemId, std::vector<double>> item_nbr_;
};

}  // namespace detail

/// Accumulates dJ_B/dTheta into acc (which must be clear) and returns the
/// loss terms of the batch. With threads > 1 the hinge part is split across
/// workers with private buffers that are summed in worker order, so results
/// are reproducible for a fixed thread count.
inline LossTerms accumulate_gradients(const ModelState& model, const InteractionDataset& ds,
                                      std::span<const TrainTriple> batch, GradientAccumulator& acc,
                                      const ObjectiveOptions& opts = {}, std::size_t threads = 1) {
    if (batch.empty()) throw Error("gradient of an empty batch");
    LossTerms out;
    threads = std::clamp<std::size_t>(threads, 1, batch.size());
    if (threads == 1) {
        detail::GradientPass pass(model, ds, opts, acc);
        for (const auto& t : batch) out.hinge += pass.triple(t);
    } else {
        std::vector<GradientAccumulator> parts;
        parts.reserve(threads);
        for (std::size_t w = 0; w < threads; ++w) parts.emplace_back(ds.user_count(), ds.item_count(), model.dim());
        std::vector<double> hinge_parts(threads, 0.0);
        std::vector<std::exception_ptr> errors(threads);
        std::vector<std::thread> workers;
        const std::size_t chunk = (batch.size() + threads - 1) / threads;
        for (std::size_t w = 0; w < threads; ++w) {
            workers.emplace_back([&, w] {
                try {
                    detail::GradientPass pass(model, ds, opts, parts[w]);
                    const std::size_t lo = std::min(batch.size(), w * chunk);
                    const std::size_t hi = std::min(batch.size(), lo + chunk);
                    for (std::size_t k = lo; k < hi; ++k) hinge_parts[w] += pass.triple(batch[k]);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& th : workers) th.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
        for (std::size_t w = 0; w < threads; ++w) {
            out.hinge += hinge_parts[w];
            acc.add(parts[w]);
        }
    }

    const BatchEntities ent = batch_entities(batch);
    detail::GradientPass pass(model, ds, opts, acc);
    const double ln = model.hyper.lambda_nbr;
    const double ld = model.hyper.lambda_dist;
    for (UserId u : ent.users) out.reg_nbr += pass.user_nbr_reg(u, ln);
    for (ItemId i : ent.items) out.reg_nbr += pass.item_nbr_reg(i, ln);
    for (auto [u, i] : ent.positive_pairs) out.reg_dist += pass.dist_reg(u, i, ld);
    out.total = out.hinge + ln * out.reg_nbr + ld * out.reg_dist;
    return out;
}

struct BatchGradient {
    GradientAccumulator grad;
    LossTerms loss;
};

inline BatchGradient gradients(const ModelState& model, const InteractionDataset& ds,
                               std::span<const TrainTriple> batch, const ObjectiveOptions& opts = {},
                               std::size_t threads = 1) {
    BatchGradient out{GradientAccumulator(ds.user_count(), ds.item_count(), model.dim()), {}};
    out.loss = accumulate_gradients(model, ds, batch, out.grad, opts, threads);
    return out;
}

}  // namespace transcf

#pragma once

// Diagnostics on learned translation vectors and labeled vector export.

#include <algorithm>
#include <cstdint>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "transcf/dataset.hpp"
#include "transcf/embed.hpp"
#include "transcf/error.hpp"
#include "transcf/format.hpp"
#include "transcf/model.hpp"

#include <json.hpp>

namespace transcf {

/// Squared distances from beta_i to alpha_u before and after translation.
struct TranslationEffect {
    double untranslated = 0;
    double translated = 0;

    /// The translation moved the user strictly closer to the item.
    bool closer() const noexcept { return untranslated > translated; }
};

inline TranslationEffect translation_effect(const ModelState& model, const InteractionDataset& ds, UserId u,
                                            ItemId i) {
    TranslationEffect out;
    auto a = model.users.row(u);
    auto b = model.items.row(i);
    for (std::size_t d = 0; d < model.dim(); ++d) out.untranslated += (a[d] - b[d]) * (a[d] - b[d]);
    out.translated = is_metric(model.variant) ? -score(model, ds, u, i)
                                              : translated_distance(model, u, i, translation(model, ds, u, i));
    return out;
}

struct TranslationDiagnostic {
    double observed_pct = 0;
    double unobserved_pct = 0;
    std::size_t observed_pairs = 0;
    std::size_t observed_closer = 0;
    std::size_t unobserved_pairs = 0;
    std::size_t unobserved_closer = 0;
};

namespace detail {

inline void require_translation(const ModelState& model) {
    if (model.variant == Variant::CML)
        throw UnsupportedVariantError("translation diagnostics need a translating variant; cml has r = 0");
}

inline double percent(std::size_t part, std::size_t whole) {
    return whole ? 100.0 * static_cast<double>(part) / static_cast<double>(whole) : 0.0;
}

}  // namespace detail

/// Share of observed train pairs, and of an equal number of sampled
/// unobserved pairs per user, whose translation moves the user closer to the
/// item. Unobserved items are drawn without replacement when the pool allows.
inline TranslationDiagnostic translation_check(const ModelState& model, const InteractionDataset& ds,
                                               std::uint64_t seed) {
    detail::require_translation(model);
    TranslationDiagnostic out;
    std::mt19937_64 rng(seed);
    std::vector<ItemId> pool;
    for (UserId u = 0; u < ds.user_count(); ++u) {
        const auto& observed = ds.items_of(u);
        for (ItemId i : observed) {
            ++out.observed_pairs;
            if (translation_effect(model, ds, u, i).closer()) ++out.observed_closer;
        }
        pool.clear();
        for (ItemId j = 0; j < ds.item_count(); ++j)
            if (!std::binary_search(observed.begin(), observed.end(), j)) pool.push_back(j);
        const std::size_t take = std::min(observed.size(), pool.size());
        for (std::size_t k = 0; k < take; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
            std::swap(pool[k], pool[pick(rng)]);
            ++out.unobserved_pairs;
            if (translation_effect(model, ds, u, pool[k]).closer()) ++out.unobserved_closer;
        }
    }
    out.observed_pct = detail::percent(out.observed_closer, out.observed_pairs);
    out.unobserved_pct = detail::percent(out.unobserved_closer, out.unobserved_pairs);
    return out;
}

struct RatingGroup {
    double rating = 0;
    std::size_t pairs = 0;
    std::size_t closer = 0;
    double closer_pct = 0;
    /// Share of all rated observed pairs.
    double share_pct = 0;
};

/// Translation diagnostic over observed pairs, grouped by rating value.
/// Unrated records are left out.
inline std::vector<RatingGroup> rating_group_check(const ModelState& model, const InteractionDataset& ds) {
    detail::require_translation(model);
    if (!ds.has_ratings()) throw UnsupportedDatasetError("dataset carries no ratings");
    std::map<double, RatingGroup> groups;
    std::size_t rated = 0;
    for (const Record& r : ds.records()) {
        if (!r.rating) continue;
        ++rated;
        RatingGroup& g = groups[*r.rating];
        g.rating = *r.rating;
        ++g.pairs;
        if (translation_effect(model, ds, r.user, r.item).closer()) ++g.closer;
    }
    std::vector<RatingGroup> out;
    for (auto& [rating, g] : groups) {
        g.closer_pct = detail::percent(g.closer, g.pairs);
        g.share_pct = detail::percent(g.pairs, rated);
        out.push_back(g);
    }
    return out;
}

enum class ExportKind {
    /// r_ui as the model builds it.
    Translation,
    /// alpha_u - beta_i, the stand-in translation for models without one.
    EmbeddingDifference,
};

using PairLabels = std::map<std::pair<UserId, ItemId>, std::string>;

struct ExportSummary {
    std::size_t rows = 0;
    std::size_t skipped = 0;
};

/// Writes a `label<TAB>v1..vK` header, then one row per labeled observed
/// pair in (user, item) order. Labels on unobserved pairs are skipped.
inline ExportSummary export_labeled_translations(const ModelState& model, const InteractionDataset& ds,
                                                 const PairLabels& labels, std::ostream& out,
                                                 ExportKind kind = ExportKind::Translation) {
    ExportSummary summary;
    out << "label";
    for (std::size_t d = 1; d <= model.dim(); ++d) out << "\tv" << d;
    out << '\n';
    std::vector<double> v(model.dim());
    for (const auto& [pair, label] : labels) {
        const auto [u, i] = pair;
        if (u >= ds.user_count() || i >= ds.item_count() || !ds.contains(u, i)) {
            ++summary.skipped;
            continue;
        }
        if (kind == ExportKind::Translation) {
            v = translation(model, ds, u, i);
        } else {
            auto a = model.users.row(u);
            auto b = model.items.row(i);
            for (std::size_t d = 0; d < v.size(); ++d) v[d] = a[d] - b[d];
        }
        out << label;
        for (double x : v) out << '\t' << format_real(x);
        out << '\n';
        ++summary.rows;
    }
    return summary;
}

/// Labels every rated observed pair with its rating.
inline PairLabels rating_labels(const InteractionDataset& ds) {
    PairLabels labels;
    for (const Record& r : ds.records())
        if (r.rating) labels[{r.user, r.item}] = format_real(*r.rating);
    return labels;
}

inline nlohmann::ordered_json diagnostic_json(const TranslationDiagnostic& d) {
    return {{"observed_pct", d.observed_pct},
            {"unobserved_pct", d.unobserved_pct},
            {"observed_pairs", d.observed_pairs},
            {"observed_closer", d.observed_closer},
            {"unobserved_pairs", d.unobserved_pairs},
            {"unobserved_closer", d.unobserved_closer}};
}

inline nlohmann::ordered_json rating_groups_json(const std::vector<RatingGroup>& groups) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& g : groups)
        arr.push_back({{"rating", g.rating},
                       {"pairs", g.pairs},
                       {"closer", g.closer},
                       {"closer_pct", g.closer_pct},
                       {"share_pct", g.share_pct}});
    return arr;
}

}  // namespace transcf

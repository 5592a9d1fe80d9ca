#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "test_support.hpp"
#include "transcf/analysis.hpp"

using namespace transcf;
using namespace transcf::testing;

namespace {

InteractionDataset rated_dataset(std::uint64_t seed, std::size_t users = 15, std::size_t items = 20) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.3);
    std::uniform_int_distribution<int> stars(1, 5);
    std::ostringstream text;
    for (std::size_t u = 0; u < users; ++u)
        for (std::size_t i = 0; i < items; ++i)
            if (coin(rng)) text << 'u' << u << "\ti" << i << '\t' << stars(rng) << '\n';
    std::istringstream in(text.str());
    return load_interactions(in, 1);
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(TranslationEffect, HandExample) {
    // one user, one item: alpha^nbr = beta_0, beta^nbr = alpha_0
    const auto ds = dataset_from_pairs(1, 1, {{0, 0}});
    ModelState m{EmbeddingTable(1, 2), EmbeddingTable(1, 2), Variant::TransCF, {}};
    m.users.row(0)[0] = 0.5;
    m.items.row(0)[0] = 1.0;
    const auto e = translation_effect(m, ds, 0, 0);
    EXPECT_DOUBLE_EQ(e.untranslated, 0.25);
    EXPECT_DOUBLE_EQ(e.translated, 0.0);
    EXPECT_TRUE(e.closer());
}

TEST(TranslationCheck, ZeroTranslationNeverCloser) {
    // zero item table makes every user neighborhood mean zero, so r = 0
    std::mt19937_64 rng(1);
    const auto ds = random_dataset(10, 15, 3, 1, rng);
    auto m = random_model(ds, 4, Variant::TransCF, rng);
    m.items.fill(0.0);
    const auto d = translation_check(m, ds, 0);
    EXPECT_EQ(d.observed_pct, 0.0);
    EXPECT_EQ(d.unobserved_pct, 0.0);
    EXPECT_EQ(d.observed_pairs, ds.interaction_count());
}

TEST(TranslationCheck, CmlUnsupported) {
    std::mt19937_64 rng(2);
    const auto ds = random_dataset(5, 6, 2, 1, rng);
    const auto m = random_model(ds, 3, Variant::CML, rng);
    EXPECT_THROW(translation_check(m, ds, 0), UnsupportedVariantError);
}

TEST(TranslationCheck, CountsMatchRecomputation) {
    std::mt19937_64 rng(3);
    const auto ds = random_dataset(12, 25, 3, 1, rng);
    const auto m = random_model(ds, 5, Variant::TransCF, rng);
    const auto d = translation_check(m, ds, 9);
    std::size_t closer = 0;
    for (const Record& r : ds.records()) {
        const auto a = oracle::row(m.users, r.user), b = oracle::row(m.items, r.item);
        double plain = 0;
        for (std::size_t k = 0; k < a.size(); ++k) plain += (a[k] - b[k]) * (a[k] - b[k]);
        if (plain > oracle::distance(m, ds, r.user, r.item)) ++closer;
    }
    EXPECT_EQ(d.observed_closer, closer);
    EXPECT_EQ(d.unobserved_pairs, d.observed_pairs);
    EXPECT_NEAR(d.observed_pct, 100.0 * closer / ds.interaction_count(), 1e-12);
    // same seed, same sample
    EXPECT_EQ(translation_check(m, ds, 9).unobserved_closer, d.unobserved_closer);
}

TEST(RatingGroups, MatchFilterAndShareSumsTo100) {
    const auto ds = rated_dataset(4);
    std::mt19937_64 rng(4);
    const auto m = random_model(ds, 4, Variant::TransCF, rng);
    const auto groups = rating_group_check(m, ds);
    double share = 0;
    std::size_t pairs = 0;
    for (const auto& g : groups) {
        std::size_t n = 0, closer = 0;
        for (const Record& r : ds.records()) {
            if (!r.rating || *r.rating != g.rating) continue;
            ++n;
            if (translation_effect(m, ds, r.user, r.item).closer()) ++closer;
        }
        EXPECT_EQ(g.pairs, n);
        EXPECT_EQ(g.closer, closer);
        share += g.share_pct;
        pairs += g.pairs;
    }
    EXPECT_NEAR(share, 100.0, 1e-9);
    EXPECT_EQ(pairs, ds.interaction_count());
}

TEST(RatingGroups, UnratedDatasetUnsupported) {
    std::mt19937_64 rng(5);
    const auto ds = random_dataset(5, 6, 2, 1, rng);
    const auto m = random_model(ds, 3, Variant::TransCF, rng);
    EXPECT_THROW(rating_group_check(m, ds), UnsupportedDatasetError);
}

TEST(Export, NoLabelsWritesHeaderOnly) {
    std::mt19937_64 rng(6);
    const auto ds = random_dataset(5, 6, 2, 1, rng);
    const auto m = random_model(ds, 3, Variant::TransCF, rng);
    std::ostringstream out;
    const auto s = export_labeled_translations(m, ds, {}, out);
    EXPECT_EQ(s.rows, 0u);
    EXPECT_EQ(out.str(), "label\tv1\tv2\tv3\n");
}

TEST(Export, RowsCarryLabelAndRecomputedVector) {
    std::mt19937_64 rng(7);
    const auto ds = random_dataset(6, 8, 3, 1, rng);
    const auto m = random_model(ds, 4, Variant::TransCF, rng);
    PairLabels labels;
    for (UserId u = 0; u < 3; ++u) labels[{u, ds.items_of(u).front()}] = "L" + std::to_string(u);
    // an unobserved pair is skipped
    for (ItemId j = 0; j < ds.item_count(); ++j)
        if (!ds.contains(0, j)) {
            labels[{0, j}] = "bad";
            break;
        }
    std::ostringstream out;
    const auto s = export_labeled_translations(m, ds, labels, out);
    EXPECT_EQ(s.rows, 3u);
    EXPECT_EQ(s.skipped, 1u);
    EXPECT_EQ(count_lines(out.str()), 4u);

    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    for (UserId u = 0; u < 3; ++u) {
        std::getline(in, line);
        std::istringstream fields(line);
        std::string label;
        std::getline(fields, label, '\t');
        EXPECT_EQ(label, "L" + std::to_string(u));
        const auto want = oracle::translation(m, ds, u, ds.items_of(u).front());
        std::string cell;
        std::size_t cols = 0;
        while (std::getline(fields, cell, '\t')) {
            EXPECT_NEAR(*parse_double(cell), want[cols], 1e-15);
            ++cols;
        }
        EXPECT_EQ(cols, 4u);
    }
}

TEST(Export, EmbeddingDifferenceForCml) {
    const auto ds = dataset_from_pairs(1, 1, {{0, 0}});
    ModelState m{EmbeddingTable(1, 2), EmbeddingTable(1, 2), Variant::CML, {}};
    m.users.row(0)[0] = 0.75;
    m.items.row(0)[1] = 0.25;
    std::ostringstream out;
    export_labeled_translations(m, ds, {{{0, 0}, "x"}}, out, ExportKind::EmbeddingDifference);
    EXPECT_EQ(out.str(), "label\tv1\tv2\nx\t0.75\t-0.25\n");
}

TEST(Export, RatingLabelsCoverRatedPairs) {
    const auto ds = rated_dataset(8);
    const auto labels = rating_labels(ds);
    EXPECT_EQ(labels.size(), ds.interaction_count());
}

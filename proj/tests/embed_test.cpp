#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "test_support.hpp"
#include "transcf/embed.hpp"

using namespace transcf;
using namespace transcf::testing;

namespace {

ModelState two_dim_model(const InteractionDataset& ds) {
    ModelState m{EmbeddingTable(ds.user_count(), 2), EmbeddingTable(ds.item_count(), 2), Variant::TransCF, {}};
    m.hyper.dim = 2;
    return m;
}

}  // namespace

TEST(Neighborhood, TwoPointMean) {
    const auto ds = dataset_from_pairs(1, 2, {{0, 0}, {0, 1}});
    auto m = two_dim_model(ds);
    m.items.row(0)[0] = 1;
    m.items.row(1)[1] = 1;
    const auto n = neighborhood_user(m, ds, 0);
    EXPECT_DOUBLE_EQ(n[0], 0.5);
    EXPECT_DOUBLE_EQ(n[1], 0.5);
}

TEST(Neighborhood, SingletonItemMean) {
    const auto ds = dataset_from_pairs(2, 1, {{1, 0}});
    auto m = two_dim_model(ds);
    m.users.row(1)[0] = 0.3;
    m.users.row(1)[1] = -0.4;
    m.users.row(0)[0] = 9;  // not a neighbor
    const auto n = neighborhood_item(m, ds, 0);
    EXPECT_DOUBLE_EQ(n[0], 0.3);
    EXPECT_DOUBLE_EQ(n[1], -0.4);
}

TEST(Neighborhood, EmptyIsZero) {
    const auto ds = dataset_from_pairs(2, 2, {{0, 0}});
    std::mt19937_64 rng(1);
    const auto m = random_model(ds, 4, Variant::TransCF, rng);
    for (double x : neighborhood_user(m, ds, 1)) EXPECT_EQ(x, 0.0);
    for (double x : neighborhood_item(m, ds, 1)) EXPECT_EQ(x, 0.0);
}

TEST(Neighborhood, MatchesSummationOracle) {
    std::mt19937_64 rng(17);
    // one user with 20 items, K = 8
    std::vector<std::pair<UserId, ItemId>> pairs;
    for (ItemId i = 0; i < 20; ++i) pairs.emplace_back(0, i);
    for (UserId u = 1; u < 6; ++u) pairs.emplace_back(u, 3);
    const auto ds = dataset_from_pairs(6, 25, pairs);
    const auto m = random_model(ds, 8, Variant::TransCF, rng, 1.0);
    const auto got = neighborhood_user(m, ds, 0);
    const auto want = oracle::user_nbr(m, ds, 0);
    for (std::size_t d = 0; d < 8; ++d) EXPECT_NEAR(got[d], want[d], 1e-12);
    const auto got_i = neighborhood_item(m, ds, 3);
    const auto want_i = oracle::item_nbr(m, ds, 3);
    for (std::size_t d = 0; d < 8; ++d) EXPECT_NEAR(got_i[d], want_i[d], 1e-12);
}

TEST(Neighborhood, LinearInItemTable) {
    std::mt19937_64 rng(23);
    const auto ds = random_dataset(10, 15, 2, 1, rng);
    auto m = random_model(ds, 6, Variant::TransCF, rng);
    const double c = -2.5;
    auto scaled = m;
    for (double& x : scaled.items.data()) x *= c;
    for (UserId u = 0; u < ds.user_count(); ++u) {
        const auto a = neighborhood_user(m, ds, u);
        const auto b = neighborhood_user(scaled, ds, u);
        for (std::size_t d = 0; d < a.size(); ++d) EXPECT_NEAR(b[d], c * a[d], 1e-12);
    }
}

TEST(Projection, ThreeFourFive) {
    EmbeddingTable t(2, 2);
    t.row(0)[0] = 3;
    t.row(0)[1] = 4;
    t.row(1)[0] = 0.1;
    t.row(1)[1] = 0.2;
    EXPECT_EQ(project_unit_ball(t), 1u);
    EXPECT_DOUBLE_EQ(t.row(0)[0], 0.6);
    EXPECT_DOUBLE_EQ(t.row(0)[1], 0.8);
    EXPECT_EQ(t.row(1)[0], 0.1);
    EXPECT_EQ(t.row(1)[1], 0.2);
}

TEST(Projection, StrictPaperModeDividesBySquaredNorm) {
    EmbeddingTable t(1, 2);
    t.row(0)[0] = 3;
    t.row(0)[1] = 4;
    project_unit_ball(t, ProjectionMode::StrictPaper);
    EXPECT_DOUBLE_EQ(t.row(0)[0], 3.0 / 25.0);
    EXPECT_DOUBLE_EQ(t.row(0)[1], 4.0 / 25.0);
}

TEST(Projection, RejectsNonFinite) {
    EmbeddingTable t(1, 2);
    t.row(0)[1] = std::nan("");
    EXPECT_THROW(project_unit_ball(t), NumericStateError);
}

TEST(Projection, PropertiesOnRandomTables) {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> dist(-3, 3);
    for (int trial = 0; trial < 50; ++trial) {
        EmbeddingTable t(20, 7);
        for (double& x : t.data()) x = dist(rng);
        const EmbeddingTable original = t;
        project_unit_ball(t);
        EmbeddingTable twice = t;
        project_unit_ball(twice);
        for (std::size_t r = 0; r < t.rows(); ++r) {
            EXPECT_LE(squared_norm(t.row(r)), 1.0 + 1e-9);
            double dot = 0, na = 0, nb = 0;
            for (std::size_t d = 0; d < 7; ++d) {
                dot += t.row(r)[d] * original.row(r)[d];
                na += t.row(r)[d] * t.row(r)[d];
                nb += original.row(r)[d] * original.row(r)[d];
                EXPECT_NEAR(twice.row(r)[d], t.row(r)[d], 1e-15);
            }
            EXPECT_NEAR(dot / std::sqrt(na * nb), 1.0, 1e-12);
        }
    }
}

TEST(InitModel, RowsInsideBallAndSeeded) {
    HyperParams h;
    h.dim = 16;
    h.seed = 4;
    std::mt19937_64 a(4), b(4);
    const auto m1 = init_model(30, 40, h, Variant::TransCF, a);
    const auto m2 = init_model(30, 40, h, Variant::TransCF, b);
    EXPECT_EQ(m1, m2);
    const double bound = 1.0 / 4.0;
    for (double x : m1.users.data()) EXPECT_LE(std::abs(x), bound);
    for (std::size_t r = 0; r < 30; ++r) EXPECT_LE(squared_norm(m1.users.row(r)), 1.0);
}

TEST(EmbeddingExport, SeventeenDigitRoundTrip) {
    std::mt19937_64 rng(9);
    const auto ds = random_dataset(5, 6, 1, 1, rng);
    const auto m = random_model(ds, 3, Variant::CML, rng);
    std::stringstream ss;
    write_embeddings(ss, m.users, ds.users());
    const auto rows = read_embeddings(ss, 5, 3);
    for (std::size_t r = 0; r < 5; ++r) {
        EXPECT_EQ(rows[r].token, ds.users().token(static_cast<UserId>(r)));
        for (std::size_t d = 0; d < 3; ++d) EXPECT_EQ(rows[r].values[d], m.users.row(r)[d]);
    }
}

TEST(EmbeddingExport, RowShapeChecked) {
    std::istringstream in("u0\t0.1\t0.2\n");
    EXPECT_THROW(read_embeddings(in, 1, 3), ParseError);
}

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "test_support.hpp"
#include "transcf/dataset.hpp"

using namespace transcf;
using namespace transcf::testing;

namespace {

InteractionDataset load(const std::string& text, std::size_t min_count) {
    std::istringstream in(text);
    return load_interactions(in, min_count);
}

}  // namespace

TEST(LoadInteractions, SingleUserClearsThresholdOnlyWhenItemsDoToo) {
    const std::string text = "a\ti1\na\ti2\na\ti3\na\ti4\na\ti5\n";
    EXPECT_THROW(load(text, 5), EmptyDatasetError);

    std::istringstream in(text);
    const auto ds = build_dataset(parse_interactions(in), FilterOptions{5, 1});
    EXPECT_EQ(ds.user_count(), 1u);
    EXPECT_EQ(ds.item_count(), 5u);
    EXPECT_EQ(ds.interaction_count(), 5u);
}

TEST(LoadInteractions, DuplicatePairsCollapse) {
    const auto ds = load("u1,i1,3\nu1,i1,5\n", 1);
    EXPECT_EQ(ds.interaction_count(), 1u);
    ASSERT_EQ(ds.items_of(0).size(), 1u);
    ASSERT_TRUE(ds.records()[0].rating);
    EXPECT_EQ(*ds.records()[0].rating, 5.0);
}

TEST(LoadInteractions, HeaderDetectedByNonNumericThirdField) {
    const auto ds = load("user,item,rating\nu1,i1,4\nu2,i1,2\n", 1);
    EXPECT_EQ(ds.user_count(), 2u);
    EXPECT_FALSE(ds.users().find("user"));
    EXPECT_TRUE(ds.has_ratings());
}

TEST(LoadInteractions, MalformedLineNamesLineNumber) {
    try {
        load("u1\ti1\nu2\n", 1);
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    EXPECT_THROW(load("u0\ti0\t1\nu1\ti1\tx\t1\n", 1), ParseError);
    EXPECT_THROW(load("u1\ti1\t3\tnotint\n", 1), ParseError);
    EXPECT_THROW(load("u1\t\t3\n", 1), ParseError);
}

TEST(LoadInteractions, MissingFile) {
    EXPECT_THROW(load_interactions(std::filesystem::path("/nonexistent/file.tsv"), 1), FileError);
}

TEST(LoadInteractions, IterativeFilteringReachesFixpoint) {
    // users a,b have 2 items each; item x is shared. With min_count 2 item y
    // (only a) and z (only b) drop, which pushes a and b below threshold.
    const auto text = "a,x\na,y\nb,x\nb,z\nc,p\nc,q\nd,p\nd,q\n";
    const auto ds = load(text, 2);
    EXPECT_EQ(ds.user_count(), 2u);
    EXPECT_EQ(ds.item_count(), 2u);
    EXPECT_EQ(ds.users().token(0), "c");
    for (UserId u = 0; u < ds.user_count(); ++u) EXPECT_GE(ds.items_of(u).size(), 2u);
    for (ItemId i = 0; i < ds.item_count(); ++i) EXPECT_GE(ds.users_of(i).size(), 2u);
}

TEST(LoadInteractions, IdsFollowFirstAppearance) {
    const auto ds = load("b,y\na,x\nb,x\n", 1);
    EXPECT_EQ(ds.users().token(0), "b");
    EXPECT_EQ(ds.items().token(0), "y");
    EXPECT_EQ(ds.items().token(1), "x");
}

TEST(InteractionDataset, TransposeConsistency) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const auto ds = random_dataset(12, 17, 1, 0, rng, 0.3);
        std::set<std::pair<UserId, ItemId>> from_users, from_items;
        std::size_t sum_u = 0, sum_i = 0;
        for (UserId u = 0; u < ds.user_count(); ++u) {
            sum_u += ds.items_of(u).size();
            for (ItemId i : ds.items_of(u)) from_users.emplace(u, i);
        }
        for (ItemId i = 0; i < ds.item_count(); ++i) {
            sum_i += ds.users_of(i).size();
            for (UserId u : ds.users_of(i)) from_items.emplace(u, i);
        }
        EXPECT_EQ(from_users, from_items);
        EXPECT_EQ(sum_u, ds.interaction_count());
        EXPECT_EQ(sum_i, ds.interaction_count());
    }
}

TEST(LeaveOneOutSplit, HoldsOutLastTwoByOrder) {
    // order keys deliberately out of file order
    const auto ds = load("u,i3,,30\nu,i1,,10\nu,i4,,40\nu,i2,,20\n", 1);
    const auto split = leave_one_out_split(ds);
    const UserId u = 0;
    EXPECT_EQ(ds.items().token(split.test.at(u).item), "i4");
    EXPECT_EQ(ds.items().token(split.validation.at(u).item), "i3");
    std::set<std::string> train;
    for (ItemId i : split.train.items_of(u)) train.insert(ds.items().token(i));
    EXPECT_EQ(train, (std::set<std::string>{"i1", "i2"}));
}

TEST(LeaveOneOutSplit, FilePositionOrdersWhenNoTimestamp) {
    const auto ds = load("u,a\nu,b\nu,c\n", 1);
    const auto split = leave_one_out_split(ds);
    EXPECT_EQ(ds.items().token(split.test.at(0).item), "c");
    EXPECT_EQ(ds.items().token(split.validation.at(0).item), "b");
}

TEST(LeaveOneOutSplit, SmallUsersStayInTrain) {
    const auto ds = load("u,a\nu,b\nv,a\nv,b\nv,c\n", 1);
    const auto split = leave_one_out_split(ds);
    const UserId u = *ds.users().find("u");
    EXPECT_FALSE(split.test.count(u));
    EXPECT_FALSE(split.validation.count(u));
    EXPECT_EQ(split.train.items_of(u).size(), 2u);
}

TEST(LeaveOneOutSplit, RandomDatasetsAreSound) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 25; ++trial) {
        const auto ds = random_dataset(30, 20, 1, 0, rng, 0.12);
        const auto split = leave_one_out_split(ds);

        std::size_t eligible = 0;
        for (UserId u = 0; u < ds.user_count(); ++u)
            if (ds.items_of(u).size() >= 3) ++eligible;
        EXPECT_EQ(split.test.size(), eligible);
        EXPECT_EQ(split.validation.size(), eligible);
        EXPECT_EQ(split.train.interaction_count() + split.test.size() + split.validation.size(),
                  ds.interaction_count());

        for (const auto& [u, rec] : split.test) {
            EXPECT_FALSE(split.train.contains(u, rec.item));
            EXPECT_NE(rec.item, split.validation.at(u).item);
            EXPECT_FALSE(split.train.contains(u, split.validation.at(u).item));
        }
    }
}

TEST(SampleTriples, CountsAndValidity) {
    std::mt19937_64 rng(3);
    const auto ds = random_dataset(10, 30, 2, 0, rng, 0.2);
    std::mt19937_64 srng(42);
    const auto res = sample_triples(ds, 100, srng);
    EXPECT_EQ(res.triples.size(), 1000u);
    EXPECT_EQ(res.skipped_users, 0u);
    for (const auto& t : res.triples) {
        EXPECT_TRUE(ds.contains(t.user, t.positive));
        EXPECT_FALSE(ds.contains(t.user, t.negative));
    }
}

TEST(SampleTriples, UserCoveringCatalogIsSkipped) {
    const auto ds = dataset_from_pairs(2, 3, {{0, 0}, {0, 1}, {0, 2}, {1, 0}});
    std::mt19937_64 rng(1);
    const auto res = sample_triples(ds, 10, rng);
    EXPECT_EQ(res.skipped_users, 1u);
    EXPECT_EQ(res.triples.size(), 10u);
    for (const auto& t : res.triples) EXPECT_EQ(t.user, 1u);
}

TEST(SampleTriples, DeterministicForSeed) {
    std::mt19937_64 rng(5);
    const auto ds = random_dataset(8, 12, 2, 0, rng, 0.3);
    std::mt19937_64 a(99), b(99), c(100);
    const auto ra = sample_triples(ds, 50, a), rb = sample_triples(ds, 50, b), rc = sample_triples(ds, 50, c);
    EXPECT_EQ(ra.triples, rb.triples);
    EXPECT_NE(ra.triples, rc.triples);
}

TEST(SampleTriples, DenseUserNegativesStillValid) {
    // user 0 holds 8 of 10 items, exercising the complement path
    std::vector<std::pair<UserId, ItemId>> pairs;
    for (ItemId i = 0; i < 8; ++i) pairs.emplace_back(0, i);
    pairs.emplace_back(1, 9);
    const auto ds = dataset_from_pairs(2, 10, pairs);
    std::mt19937_64 rng(8);
    const auto res = sample_triples(ds, 500, rng);
    std::set<ItemId> negs;
    for (const auto& t : res.triples)
        if (t.user == 0) negs.insert(t.negative);
    EXPECT_EQ(negs, (std::set<ItemId>{8, 9}));
}

TEST(SampleTriples, NegativesUniformChiSquare) {
    // one user with 5 of 25 items; 20 admissible negatives
    std::vector<std::pair<UserId, ItemId>> pairs;
    for (ItemId i = 0; i < 5; ++i) pairs.emplace_back(0, i);
    const auto ds = dataset_from_pairs(1, 25, pairs);
    std::mt19937_64 rng(2024);
    const std::size_t draws = 100000;
    const auto res = sample_triples(ds, draws, rng);
    std::vector<std::size_t> tally(25, 0);
    for (const auto& t : res.triples) ++tally[t.negative];
    const double expected = static_cast<double>(draws) / 20.0;
    const double p = 1.0 / 20.0;
    const double sigma = std::sqrt(static_cast<double>(draws) * p * (1 - p));
    double chi2 = 0;
    for (ItemId j = 0; j < 25; ++j) {
        if (j < 5) {
            EXPECT_EQ(tally[j], 0u);
            continue;
        }
        const double diff = static_cast<double>(tally[j]) - expected;
        EXPECT_LT(std::abs(diff), 3 * sigma) << "item " << j;
        chi2 += diff * diff / expected;
    }
    // 19 degrees of freedom; 99.9th percentile is 43.8
    EXPECT_LT(chi2, 43.8);
}

TEST(SplitFiles, RoundTrip) {
    std::mt19937_64 rng(13);
    const auto ds = random_dataset(15, 20, 3, 1, rng, 0.2);
    const auto split = leave_one_out_split(ds);
    const auto dir = std::filesystem::temp_directory_path() / "transcf_split_roundtrip";
    std::filesystem::remove_all(dir);
    write_split(split, dir);
    const auto back = read_split(dir);
    EXPECT_EQ(back.train.users(), split.train.users());
    EXPECT_EQ(back.train.items(), split.train.items());
    for (UserId u = 0; u < split.train.user_count(); ++u) EXPECT_EQ(back.train.items_of(u), split.train.items_of(u));
    ASSERT_EQ(back.test.size(), split.test.size());
    for (const auto& [u, r] : split.test) EXPECT_EQ(back.test.at(u).item, r.item);
    for (const auto& [u, r] : split.validation) EXPECT_EQ(back.validation.at(u).item, r.item);
    std::filesystem::remove_all(dir);
}

#pragma once

// Interaction ingestion, neighbor indexes, leave-one-out splitting and
// training-triple sampling.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "transcf/error.hpp"
#include "transcf/format.hpp"

namespace transcf {

using UserId = std::uint32_t;
using ItemId = std::uint32_t;

/// One parsed line of an interaction log, before ids are assigned.
struct Interaction {
    std::string user;
    std::string item;
    std::optional<double> rating;
    std::int64_t order_key = 0;
    bool explicit_order = false;
};

/// A deduplicated interaction in dense-id space.
struct Record {
    UserId user = 0;
    ItemId item = 0;
    std::optional<double> rating;
    std::int64_t order_key = 0;
    /// Position of the first occurrence in the input; breaks order_key ties.
    std::uint64_t seq = 0;
};

/// Bidirectional token <-> dense id map. Ids follow insertion order.
class Vocabulary {
public:
    std::uint32_t add(const std::string& token) {
        auto [it, inserted] = index_.try_emplace(token, static_cast<std::uint32_t>(tokens_.size()));
        if (inserted) tokens_.push_back(token);
        return it->second;
    }

    std::optional<std::uint32_t> find(std::string_view token) const {
        auto it = index_.find(std::string(token));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    const std::string& token(std::uint32_t id) const { return tokens_.at(id); }
    std::size_t size() const noexcept { return tokens_.size(); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::uint32_t> index_;
};

/// Bipartite implicit-feedback graph with both adjacency directions.
///
/// items_of(u) is N_u^I and users_of(i) is N_i^U; both are sorted and
/// duplicate-free, and each is the transpose of the other.
class InteractionDataset {
public:
    InteractionDataset() = default;

    /// Builds the indexes. Duplicate (user, item) pairs collapse into one
    /// record that keeps the first sequence position and the last rating and
    /// order key.
    static InteractionDataset from_records(Vocabulary users, Vocabulary items, std::vector<Record> records) {
        InteractionDataset ds;
        ds.users_ = std::move(users);
        ds.items_ = std::move(items);

        std::unordered_map<std::uint64_t, std::size_t> seen;
        seen.reserve(records.size());
        for (const Record& r : records) {
            if (r.user >= ds.users_.size() || r.item >= ds.items_.size())
                throw Error("record references an id outside the vocabulary");
            const std::uint64_t key = (static_cast<std::uint64_t>(r.user) << 32) | r.item;
            auto [it, inserted] = seen.try_emplace(key, ds.records_.size());
            if (inserted) {
                ds.records_.push_back(r);
            } else {
                Record& kept = ds.records_[it->second];
                kept.rating = r.rating;
                kept.order_key = r.order_key;
            }
        }
        std::sort(ds.records_.begin(), ds.records_.end(), [](const Record& a, const Record& b) {
            if (a.user != b.user) return a.user < b.user;
            if (a.order_key != b.order_key) return a.order_key < b.order_key;
            return a.seq < b.seq;
        });

        ds.user_items_.assign(ds.users_.size(), {});
        ds.item_users_.assign(ds.items_.size(), {});
        for (const Record& r : ds.records_) {
            ds.user_items_[r.user].push_back(r.item);
            ds.item_users_[r.item].push_back(r.user);
            if (r.rating) ds.has_ratings_ = true;
        }
        for (auto& v : ds.user_items_) std::sort(v.begin(), v.end());
        // item_users_ is filled in ascending user order already
        return ds;
    }

    std::size_t user_count() const noexcept { return users_.size(); }
    std::size_t item_count() const noexcept { return items_.size(); }
    std::size_t interaction_count() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }

    const std::vector<ItemId>& items_of(UserId u) const { return user_items_.at(u); }
    const std::vector<UserId>& users_of(ItemId i) const { return item_users_.at(i); }

    bool contains(UserId u, ItemId i) const {
        const auto& v = user_items_.at(u);
        return std::binary_search(v.begin(), v.end(), i);
    }

    /// Records grouped by user, each group in ascending (order_key, seq).
    const std::vector<Record>& records() const noexcept { return records_; }
    const Vocabulary& users() const noexcept { return users_; }
    const Vocabulary& items() const noexcept { return items_; }
    bool has_ratings() const noexcept { return has_ratings_; }

private:
    Vocabulary users_;
    Vocabulary items_;
    std::vector<Record> records_;
    std::vector<std::vector<ItemId>> user_items_;
    std::vector<std::vector<UserId>> item_users_;
    bool has_ratings_ = false;
};

/// Train set plus per-user held-out validation and test interactions.
struct SplitDataset {
    InteractionDataset train;
    std::map<UserId, Record> validation;
    std::map<UserId, Record> test;

    const std::map<UserId, Record>& held_out(bool use_test) const { return use_test ? test : validation; }

    /// Every item the user is known to have interacted with, in any split.
    bool known(UserId u, ItemId i) const {
        if (train.contains(u, i)) return true;
        if (auto it = validation.find(u); it != validation.end() && it->second.item == i) return true;
        if (auto it = test.find(u); it != test.end() && it->second.item == i) return true;
        return false;
    }
};

struct TrainTriple {
    UserId user = 0;
    ItemId positive = 0;
    ItemId negative = 0;

    friend bool operator==(const TrainTriple&, const TrainTriple&) = default;
};

struct SampleResult {
    std::vector<TrainTriple> triples;
    /// Users with no train items or no possible negatives.
    std::size_t skipped_users = 0;
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
    const char sep = line.find('\t') != std::string_view::npos ? '\t' : ',';
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    for (auto& f : fields) f = trim(f);
    return fields;
}

}  // namespace detail

/// Parses `user<sep>item[<sep>rating][<sep>order_key]` lines. The separator is
/// a tab when the line contains one, a comma otherwise. A first line whose
/// third field is present and non-numeric is treated as a header. Blank lines
/// are ignored. Records without an order key get their 0-based record index.
inline std::vector<Interaction> parse_interactions(std::istream& in) {
    std::vector<Interaction> out;
    std::string raw;
    std::size_t line_no = 0;
    std::int64_t position = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line = trim(raw);
        if (line.empty()) continue;
        const auto fields = detail::split_fields(line);
        if (line_no == 1 && fields.size() >= 3 && !fields[2].empty() && !parse_double(fields[2])) continue;
        if (fields.size() < 2 || fields.size() > 4)
            throw ParseError(line_no, "expected 2 to 4 fields, found " + std::to_string(fields.size()));
        if (fields[0].empty() || fields[1].empty()) throw ParseError(line_no, "empty user or item token");

        Interaction rec;
        rec.user = std::string(fields[0]);
        rec.item = std::string(fields[1]);
        if (fields.size() >= 3 && !fields[2].empty()) {
            auto rating = parse_double(fields[2]);
            if (!rating) throw ParseError(line_no, "rating is not a number: '" + std::string(fields[2]) + "'");
            rec.rating = *rating;
        }
        rec.order_key = position;
        if (fields.size() == 4) {
            auto key = parse_int(fields[3]);
            if (!key) throw ParseError(line_no, "order key is not an integer: '" + std::string(fields[3]) + "'");
            rec.order_key = *key;
            rec.explicit_order = true;
        }
        out.push_back(std::move(rec));
        ++position;
    }
    return out;
}

struct FilterOptions {
    std::size_t min_user_count = 5;
    std::size_t min_item_count = 5;
};

/// Deduplicates, filters users and items below the thresholds until a
/// fixpoint, and assigns dense ids in first-appearance order.
inline InteractionDataset build_dataset(const std::vector<Interaction>& rows, FilterOptions filter) {
    Vocabulary raw_users, raw_items;
    std::vector<Record> raw;
    raw.reserve(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const Interaction& row = rows[k];
        raw.push_back(Record{raw_users.add(row.user), raw_items.add(row.item), row.rating, row.order_key, k});
    }
    // collapse duplicates first so thresholds count distinct pairs
    InteractionDataset dedup = InteractionDataset::from_records(raw_users, raw_items, std::move(raw));

    std::vector<bool> user_alive(dedup.user_count(), true), item_alive(dedup.item_count(), true);
    std::vector<std::size_t> user_deg(dedup.user_count()), item_deg(dedup.item_count());
    for (bool changed = true; changed;) {
        changed = false;
        std::fill(user_deg.begin(), user_deg.end(), 0);
        std::fill(item_deg.begin(), item_deg.end(), 0);
        for (const Record& r : dedup.records()) {
            if (user_alive[r.user] && item_alive[r.item]) {
                ++user_deg[r.user];
                ++item_deg[r.item];
            }
        }
        for (std::size_t u = 0; u < user_deg.size(); ++u) {
            if (user_alive[u] && user_deg[u] < filter.min_user_count) {
                user_alive[u] = false;
                changed = true;
            }
        }
        for (std::size_t i = 0; i < item_deg.size(); ++i) {
            if (item_alive[i] && item_deg[i] < filter.min_item_count) {
                item_alive[i] = false;
                changed = true;
            }
        }
    }

    std::vector<Record> survivors;
    for (const Record& r : dedup.records())
        if (user_alive[r.user] && item_alive[r.item]) survivors.push_back(r);
    if (survivors.empty()) throw EmptyDatasetError("no interactions left after min-count filtering");

    std::sort(survivors.begin(), survivors.end(), [](const Record& a, const Record& b) { return a.seq < b.seq; });
    Vocabulary users, items;
    for (Record& r : survivors) {
        r.user = users.add(dedup.users().token(r.user));
        r.item = items.add(dedup.items().token(r.item));
    }
    return InteractionDataset::from_records(std::move(users), std::move(items), std::move(survivors));
}

inline InteractionDataset load_interactions(std::istream& in, std::size_t min_count) {
    return build_dataset(parse_interactions(in), FilterOptions{min_count, min_count});
}

inline InteractionDataset load_interactions(const std::filesystem::path& path, std::size_t min_count) {
    std::ifstream in(path);
    if (!in) throw FileError(path.string());
    return load_interactions(in, min_count);
}

/// Holds out each user's last interaction for test and the one before it
/// for validation. Users with fewer than three interactions stay entirely in
/// train. Ids and vocabularies are shared with the input.
inline SplitDataset leave_one_out_split(const InteractionDataset& ds) {
    if (ds.empty()) throw EmptyDatasetError("cannot split an empty dataset");
    SplitDataset split;
    std::vector<Record> train;
    train.reserve(ds.interaction_count());
    const auto& recs = ds.records();
    for (std::size_t begin = 0; begin < recs.size();) {
        std::size_t end = begin;
        while (end < recs.size() && recs[end].user == recs[begin].user) ++end;
        const std::size_t n = end - begin;
        if (n >= 3) {
            split.test.emplace(recs[begin].user, recs[end - 1]);
            split.validation.emplace(recs[begin].user, recs[end - 2]);
            train.insert(train.end(), recs.begin() + static_cast<std::ptrdiff_t>(begin),
                         recs.begin() + static_cast<std::ptrdiff_t>(end - 2));
        } else {
            train.insert(train.end(), recs.begin() + static_cast<std::ptrdiff_t>(begin),
                         recs.begin() + static_cast<std::ptrdiff_t>(end));
        }
        begin = end;
    }
    split.train = InteractionDataset::from_records(ds.users(), ds.items(), std::move(train));
    return split;
}

/// Draws per_user (user, positive, negative) triples for every user, with
/// positives uniform over the user's train items and negatives uniform over
/// the remaining catalog, both with replacement.
template <class Rng>
SampleResult sample_triples(const InteractionDataset& ds, std::size_t per_user, Rng& rng) {
    SampleResult result;
    result.triples.reserve(ds.user_count() * per_user);
    const std::size_t n_items = ds.item_count();
    std::vector<ItemId> complement;
    for (UserId u = 0; u < ds.user_count(); ++u) {
        const auto& pos = ds.items_of(u);
        if (pos.empty() || pos.size() >= n_items) {
            ++result.skipped_users;
            continue;
        }
        std::uniform_int_distribution<std::size_t> pick_pos(0, pos.size() - 1);
        // rejection sampling is cheap unless the user covers most of the catalog
        const bool dense = pos.size() * 2 > n_items;
        if (dense) {
            complement.clear();
            for (ItemId j = 0; j < n_items; ++j)
                if (!std::binary_search(pos.begin(), pos.end(), j)) complement.push_back(j);
        }
        std::uniform_int_distribution<std::size_t> pick_any(0, n_items - 1);
        std::uniform_int_distribution<std::size_t> pick_neg(0, dense ? complement.size() - 1 : 0);
        for (std::size_t s = 0; s < per_user; ++s) {
            const ItemId i = pos[pick_pos(rng)];
            ItemId j;
            if (dense) {
                j = complement[pick_neg(rng)];
            } else {
                do {
                    j = static_cast<ItemId>(pick_any(rng));
                } while (std::binary_search(pos.begin(), pos.end(), j));
            }
            result.triples.push_back({u, i, j});
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Split files

inline void write_records(std::ostream& out, const InteractionDataset& ds, const std::vector<Record>& recs) {
    for (const Record& r : recs) {
        out << ds.users().token(r.user) << '\t' << ds.items().token(r.item) << '\t';
        if (r.rating) out << format_real(*r.rating);
        out << '\t' << r.order_key << '\n';
    }
}

inline std::vector<Record> held_out_records(const std::map<UserId, Record>& m) {
    std::vector<Record> out;
    out.reserve(m.size());
    for (const auto& [u, r] : m) out.push_back(r);
    return out;
}

inline void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
    std::ofstream out(path);
    if (!out) throw FileError(path.string(), "cannot write file");
    for (const auto& l : lines) out << l << '\n';
}

/// Writes train.tsv, validation.tsv, test.tsv and the users.txt / items.txt
/// id orderings into dir.
inline void write_split(const SplitDataset& split, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const InteractionDataset& ds = split.train;
    auto write = [&](const char* name, const std::vector<Record>& recs) {
        std::ofstream out(dir / name);
        if (!out) throw FileError((dir / name).string(), "cannot write file");
        write_records(out, ds, recs);
    };
    write("train.tsv", ds.records());
    write("validation.tsv", held_out_records(split.validation));
    write("test.tsv", held_out_records(split.test));
    write_lines(dir / "users.txt", ds.users().tokens());
    write_lines(dir / "items.txt", ds.items().tokens());
}

namespace detail {

inline Vocabulary read_vocabulary(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FileError(path.string());
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
        auto t = trim(line);
        if (!t.empty()) v.add(std::string(t));
    }
    return v;
}

inline std::vector<Record> read_split_file(const std::filesystem::path& path, const Vocabulary& users,
                                           const Vocabulary& items, std::uint64_t& seq) {
    std::ifstream in(path);
    if (!in) throw FileError(path.string());
    std::vector<Record> out;
    std::size_t line_no = 0;
    for (const Interaction& row : parse_interactions(in)) {
        ++line_no;
        auto u = users.find(row.user);
        auto i = items.find(row.item);
        if (!u || !i) throw ParseError(line_no, path.filename().string() + ": unknown token");
        out.push_back(Record{*u, *i, row.rating, row.order_key, seq++});
    }
    return out;
}

}  // namespace detail

/// Reads a directory produced by write_split.
inline SplitDataset read_split(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw FileError(dir.string(), "not a directory");
    Vocabulary users = detail::read_vocabulary(dir / "users.txt");
    Vocabulary items = detail::read_vocabulary(dir / "items.txt");
    std::uint64_t seq = 0;
    auto train = detail::read_split_file(dir / "train.tsv", users, items, seq);
    auto val = detail::read_split_file(dir / "validation.tsv", users, items, seq);
    auto test = detail::read_split_file(dir / "test.tsv", users, items, seq);
    if (train.empty()) throw EmptyDatasetError("train split is empty: " + (dir / "train.tsv").string());

    SplitDataset split;
    split.train = InteractionDataset::from_records(users, items, std::move(train));
    for (const Record& r : val) split.validation.emplace(r.user, r);
    for (const Record& r : test) split.test.emplace(r.user, r);
    return split;
}

}  // namespace transcf

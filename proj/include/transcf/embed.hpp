#pragma once

// Embedding tables, model parameters, neighborhood means and the
// unit-ball projection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "transcf/dataset.hpp"
#include "transcf/error.hpp"
#include "transcf/format.hpp"

namespace transcf {

/// Dense row-major entity_count x dim matrix of reals.
class EmbeddingTable {
public:
    EmbeddingTable() = default;
    EmbeddingTable(std::size_t rows, std::size_t dim) : rows_(rows), dim_(dim), data_(rows * dim, 0.0) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t dim() const noexcept { return dim_; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * dim_, dim_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * dim_, dim_}; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t dim_ = 0;
    std::vector<double> data_;
};

enum class Variant { TransCF, TransCFDot, TransCFAlt, CML };

inline std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::TransCF: return "transcf";
        case Variant::TransCFDot: return "transcf-dot";
        case Variant::TransCFAlt: return "transcf-alt";
        case Variant::CML: return "cml";
    }
    return "?";
}

inline std::optional<Variant> parse_variant(std::string_view s) {
    for (Variant v : {Variant::TransCF, Variant::TransCFDot, Variant::TransCFAlt, Variant::CML})
        if (to_string(v) == s) return v;
    return std::nullopt;
}

/// Every variant except the dot-product ablation scores by negative
/// squared distance.
constexpr bool is_metric(Variant v) noexcept { return v != Variant::TransCFDot; }

/// Whether the translation is built from neighborhood means.
constexpr bool uses_neighborhoods(Variant v) noexcept {
    return v == Variant::TransCF || v == Variant::TransCFDot;
}

struct HyperParams {
    std::size_t dim = 32;
    double learning_rate = 0.01;
    double margin = 0.5;
    double lambda_nbr = 0.0;
    double lambda_dist = 0.0;
    std::size_t epochs = 200;
    std::size_t negatives_per_user = 100;
    std::size_t batch_size = 1000;
    std::uint64_t seed = 0;

    friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

/// Parameters Theta = {alpha_u, beta_i} with the settings they were trained under.
struct ModelState {
    EmbeddingTable users;
    EmbeddingTable items;
    Variant variant = Variant::TransCF;
    HyperParams hyper;

    std::size_t dim() const noexcept { return users.dim(); }

    friend bool operator==(const ModelState&, const ModelState&) = default;
};

enum class ProjectionMode {
    /// v / |v| whenever |v|^2 > 1.
    UnitBall,
    /// v / max(1, |v|^2), the literal formula; shrinks long rows below norm 1.
    StrictPaper,
};

/// Rescales rows whose squared norm exceeds 1. Returns the number of rows changed.
inline std::size_t project_unit_ball(EmbeddingTable& table, ProjectionMode mode = ProjectionMode::UnitBall) {
    if (!table.all_finite()) throw NumericStateError("non-finite entry in embedding table before projection");
    std::size_t changed = 0;
    for (std::size_t r = 0; r < table.rows(); ++r) {
        auto v = table.row(r);
        double n2 = 0;
        for (double x : v) n2 += x * x;
        if (n2 <= 1.0) continue;
        const double scale = mode == ProjectionMode::UnitBall ? 1.0 / std::sqrt(n2) : 1.0 / n2;
        for (double& x : v) x *= scale;
        ++changed;
    }
    return changed;
}

inline void project_model(ModelState& model, ProjectionMode mode = ProjectionMode::UnitBall) {
    project_unit_ball(model.users, mode);
    project_unit_ball(model.items, mode);
}

/// Rows drawn uniformly from [-1/sqrt(K), 1/sqrt(K)], then projected.
template <class Rng>
ModelState init_model(std::size_t n_users, std::size_t n_items, const HyperParams& hyper, Variant variant,
                      Rng& rng) {
    if (hyper.dim == 0) throw ConfigError("embedding dimension must be positive");
    ModelState m{EmbeddingTable(n_users, hyper.dim), EmbeddingTable(n_items, hyper.dim), variant, hyper};
    const double bound = 1.0 / std::sqrt(static_cast<double>(hyper.dim));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& x : m.users.data()) x = dist(rng);
    for (double& x : m.items.data()) x = dist(rng);
    project_model(m);
    return m;
}

inline ModelState init_model(const InteractionDataset& ds, const HyperParams& hyper, Variant variant) {
    std::mt19937_64 rng(hyper.seed);
    return init_model(ds.user_count(), ds.item_count(), hyper, variant, rng);
}

namespace detail {

template <class Ids>
void mean_rows(const EmbeddingTable& table, const Ids& ids, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    if (ids.empty()) return;
    for (auto k : ids) {
        auto v = table.row(k);
        for (std::size_t d = 0; d < out.size(); ++d) out[d] += v[d];
    }
    const double inv = 1.0 / static_cast<double>(ids.size());
    for (double& x : out) x *= inv;
}

}  // namespace detail

/// alpha_u^nbr: mean item embedding over N_u^I, zero when u has no items.
inline void neighborhood_user(const ModelState& model, const InteractionDataset& ds, UserId u,
                              std::span<double> out) {
    detail::mean_rows(model.items, ds.items_of(u), out);
}

inline std::vector<double> neighborhood_user(const ModelState& model, const InteractionDataset& ds, UserId u) {
    std::vector<double> out(model.dim());
    neighborhood_user(model, ds, u, out);
    return out;
}

/// beta_i^nbr: mean user embedding over N_i^U, zero when i has no users.
inline void neighborhood_item(const ModelState& model, const InteractionDataset& ds, ItemId i,
                              std::span<double> out) {
    detail::mean_rows(model.users, ds.users_of(i), out);
}

inline std::vector<double> neighborhood_item(const ModelState& model, const InteractionDataset& ds, ItemId i) {
    std::vector<double> out(model.dim());
    neighborhood_item(model, ds, i, out);
    return out;
}

// ---------------------------------------------------------------------------
// Text export: token<TAB>v1<TAB>...<TAB>vK, 17 significant digits.

inline void write_embeddings(std::ostream& out, const EmbeddingTable& table, const Vocabulary& vocab) {
    for (std::size_t r = 0; r < table.rows(); ++r) {
        out << vocab.token(static_cast<std::uint32_t>(r));
        for (double x : table.row(r)) out << '\t' << format_real(x);
        out << '\n';
    }
}

struct EmbeddingRow {
    std::string token;
    std::vector<double> values;
};

/// Reads `count` rows of the export format. Each row must have dim values.
inline std::vector<EmbeddingRow> read_embeddings(std::istream& in, std::size_t count, std::size_t dim) {
    std::vector<EmbeddingRow> rows;
    rows.reserve(count);
    std::string line;
    std::size_t line_no = 0;
    while (rows.size() < count && std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        EmbeddingRow row;
        std::size_t start = 0;
        std::size_t field = 0;
        while (true) {
            const auto pos = line.find('\t', start);
            std::string_view f(line.data() + start, (pos == std::string::npos ? line.size() : pos) - start);
            if (field == 0) {
                row.token = std::string(f);
            } else {
                auto v = parse_double(f);
                if (!v) throw ParseError(line_no, "embedding value is not a number");
                row.values.push_back(*v);
            }
            ++field;
            if (pos == std::string::npos) break;
            start = pos + 1;
        }
        if (row.values.size() != dim)
            throw ParseError(line_no, "expected " + std::to_string(dim) + " values, found " +
                                          std::to_string(row.values.size()));
        rows.push_back(std::move(row));
    }
    if (rows.size() != count)
        throw ParseError(line_no, "expected " + std::to_string(count) + " embedding rows, found " +
                                      std::to_string(rows.size()));
    return rows;
}

}  // namespace transcf

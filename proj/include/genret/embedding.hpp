#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "genret/catalog.hpp"
#include "genret/error.hpp"
#include "genret/jsonl.hpp"
#include "genret/text.hpp"

namespace genret {

using Embedding = std::vector<double>;

/// ad_id -> embedding, all rows sharing one dimension. Iteration is in
/// ascending ad_id order.
class EmbeddingTable {
public:
    explicit EmbeddingTable(std::size_t dimension = 0) : dimension_(dimension) {}

    /// Inserts or replaces a row. Returns true when an existing row was replaced.
    bool set(const std::string& ad_id, Embedding values) {
        if (values.size() != dimension_)
            throw DimensionError("embedding for '" + ad_id + "' has " + std::to_string(values.size()) +
                                 " values, expected " + std::to_string(dimension_));
        auto [it, inserted] = entries_.insert_or_assign(ad_id, std::move(values));
        return !inserted;
    }

    [[nodiscard]] std::size_t dimension() const noexcept { return dimension_; }
    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
    [[nodiscard]] bool empty() const noexcept { return entries_.empty(); }
    [[nodiscard]] bool contains(const std::string& ad_id) const { return entries_.contains(ad_id); }

    [[nodiscard]] const Embedding& at(const std::string& ad_id) const {
        auto it = entries_.find(ad_id);
        if (it == entries_.end()) throw Error("no embedding for ad '" + ad_id + "'");
        return it->second;
    }

    [[nodiscard]] const std::map<std::string, Embedding>& entries() const noexcept { return entries_; }

private:
    std::size_t dimension_;
    std::map<std::string, Embedding> entries_;
};

inline double dot(const Embedding& a, const Embedding& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const Embedding& a) { return std::sqrt(dot(a, a)); }

inline double cosine(const Embedding& a, const Embedding& b) {
    const double na = norm(a), nb = norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

/// Feature-hashed bag of whitespace tokens and character 3-grams over the
/// ASCII-lowercased text. Each feature string ("w:" + token or "g:" + gram) is
/// hashed with FNV-1a over "<seed>|<feature>"; the low bits pick the slot
/// (h mod dimension) and the top bit picks the sign.
inline Embedding embed_hashed(std::string_view input, std::size_t dimension, std::int64_t seed) {
    if (dimension < 8) throw DimensionError("embedding dimension must be at least 8");
    const std::string lowered = text::to_lower_ascii(input);
    const std::string prefix = std::to_string(seed) + "|";
    Embedding v(dimension, 0.0);
    std::size_t features = 0;
    auto add = [&](std::string_view kind, std::string_view feat) {
        std::uint64_t h = text::fnv1a64(prefix);
        h = text::fnv1a64(kind, h);
        h = text::fnv1a64(feat, h);
        v[h % dimension] += (h >> 63) ? -1.0 : 1.0;
        ++features;
    };
    for (const auto& tok : text::split_whitespace(lowered)) add("w:", tok);
    for (std::size_t i = 0; i + 3 <= lowered.size(); ++i) add("g:", std::string_view(lowered).substr(i, 3));
    if (features == 0) throw Error("cannot embed text with zero grams");
    const double n = norm(v);
    if (n == 0.0) throw Error("hashed features cancel to a zero vector");
    for (auto& x : v) x /= n;
    return v;
}

inline EmbeddingTable embed_catalog(const Catalog& catalog, std::size_t dimension, std::int64_t seed) {
    EmbeddingTable table(dimension);
    for (const auto& ad : catalog) table.set(ad.ad_id, embed_hashed(render_description(ad), dimension, seed));
    return table;
}

struct LoadedEmbeddings {
    EmbeddingTable table;
    std::size_t duplicate_rows = 0;  ///< rows that overwrote an earlier row (last writer wins)
};

/// Reads "ad_id<TAB>v1 v2 ... vd" rows.
inline LoadedEmbeddings load_embeddings(const std::filesystem::path& path, std::size_t dimension) {
    LoadedEmbeddings out{EmbeddingTable(dimension), 0};
    auto in = io::open_in(path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos) throw ParseError("missing tab separator", lineno);
        std::string id = line.substr(0, tab);
        Embedding values;
        std::istringstream ss(line.substr(tab + 1));
        std::string tok;
        while (ss >> tok) {
            try {
                std::size_t used = 0;
                values.push_back(std::stod(tok, &used));
                if (used != tok.size()) throw std::invalid_argument(tok);
            } catch (const std::exception&) {
                throw ParseError("bad number '" + tok + "'", lineno);
            }
        }
        if (values.size() != dimension)
            throw DimensionError("row " + std::to_string(lineno) + ": expected " + std::to_string(dimension) +
                                 " values, found " + std::to_string(values.size()));
        if (out.table.set(id, std::move(values))) ++out.duplicate_rows;
    }
    return out;
}

inline void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
    auto out = io::open_out(path);
    out.precision(17);
    for (const auto& [id, v] : table.entries()) {
        out << id << '\t';
        for (std::size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << v[i];
        out << '\n';
    }
}

/// Category-coherence of embeddings: for the first `samples_per_category` ads
/// of every first_category (ascending ad_id), retrieve the k most cosine-similar
/// other catalog ads (ties by ascending ad_id) and average the fraction that
/// share the sampled ad's category.
inline double category_retrieval_accuracy(const EmbeddingTable& table, const Catalog& catalog,
                                          std::size_t samples_per_category, std::size_t k) {
    if (k == 0 || samples_per_category == 0) throw Error("k and samples_per_category must be positive");
    if (catalog.size() < k + 1) throw Error("insufficient corpus: need at least k+1 ads");

    std::vector<const Ad*> pool;
    for (const auto& ad : catalog) pool.push_back(&ad);
    std::sort(pool.begin(), pool.end(), [](const Ad* a, const Ad* b) { return a->ad_id < b->ad_id; });

    std::map<std::string, std::vector<const Ad*>> by_cat;
    for (const Ad* ad : pool) by_cat[ad->first_category].push_back(ad);

    double total = 0.0;
    std::size_t samples = 0;
    std::vector<std::pair<double, const Ad*>> scored;
    for (const auto& [cat, members] : by_cat) {
        const std::size_t take = std::min(samples_per_category, members.size());
        for (std::size_t s = 0; s < take; ++s) {
            const Ad* query = members[s];
            const Embedding& q = table.at(query->ad_id);
            scored.clear();
            for (const Ad* other : pool) {
                if (other == query) continue;
                scored.emplace_back(cosine(q, table.at(other->ad_id)), other);
            }
            std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                              [](const auto& a, const auto& b) {
                                  if (a.first != b.first) return a.first > b.first;
                                  return a.second->ad_id < b.second->ad_id;
                              });
            std::size_t same = 0;
            for (std::size_t i = 0; i < k; ++i) same += scored[i].second->first_category == cat;
            total += static_cast<double>(same) / static_cast<double>(k);
            ++samples;
        }
    }
    return total / static_cast<double>(samples);
}

}  // namespace genret

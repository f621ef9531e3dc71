#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "genret/error.hpp"
#include "genret/jsonl.hpp"

namespace genret {

struct Ad {
    std::string ad_id;
    std::string name;
    std::string product_type;
    std::string first_category;
    std::string second_category;
    std::vector<std::pair<std::string, std::string>> attributes;
    double ecpm = 0.0;  ///< expected cost per mille

    bool operator==(const Ad&) const = default;
};

/// Ordered, immutable-after-load set of ads with a first-category index.
class Catalog {
public:
    Catalog() = default;

    explicit Catalog(std::vector<Ad> ads) {
        for (auto& ad : ads) add(std::move(ad));
    }

    /// Throws DuplicateIdError when the id is already present.
    void add(Ad ad) {
        if (ad.name.empty()) throw Error("ad '" + ad.ad_id + "' has an empty name");
        if (!(ad.ecpm >= 0.0)) throw Error("ad '" + ad.ad_id + "' has negative ecpm");
        if (by_id_.contains(ad.ad_id)) throw DuplicateIdError(ad.ad_id);
        by_id_.emplace(ad.ad_id, ads_.size());
        category_index_[ad.first_category].push_back(ad.ad_id);
        ads_.push_back(std::move(ad));
    }

    [[nodiscard]] std::size_t size() const noexcept { return ads_.size(); }
    [[nodiscard]] bool empty() const noexcept { return ads_.empty(); }
    [[nodiscard]] const std::vector<Ad>& ads() const noexcept { return ads_; }
    [[nodiscard]] auto begin() const { return ads_.begin(); }
    [[nodiscard]] auto end() const { return ads_.end(); }

    [[nodiscard]] const Ad* find(const std::string& ad_id) const {
        auto it = by_id_.find(ad_id);
        return it == by_id_.end() ? nullptr : &ads_[it->second];
    }

    [[nodiscard]] const Ad& at(const std::string& ad_id) const {
        if (const Ad* ad = find(ad_id)) return *ad;
        throw Error("unknown ad '" + ad_id + "'");
    }

    /// first_category -> ad ids in catalog order
    [[nodiscard]] const std::map<std::string, std::vector<std::string>>& category_index() const noexcept {
        return category_index_;
    }

    [[nodiscard]] std::unordered_map<std::string, std::string> categories() const {
        std::unordered_map<std::string, std::string> out;
        for (const auto& ad : ads_) out.emplace(ad.ad_id, ad.first_category);
        return out;
    }

private:
    std::vector<Ad> ads_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::map<std::string, std::vector<std::string>> category_index_;
};

inline io::json to_json(const Ad& ad) {
    io::json attrs = io::json::array();
    for (const auto& [k, v] : ad.attributes) attrs.push_back({k, v});
    return {{"ad_id", ad.ad_id},
            {"name", ad.name},
            {"product_type", ad.product_type},
            {"first_category", ad.first_category},
            {"second_category", ad.second_category},
            {"attributes", attrs},
            {"ecpm", ad.ecpm}};
}

inline Ad ad_from_json(const io::json& j) {
    Ad ad;
    ad.ad_id = j.at("ad_id").get<std::string>();
    ad.name = j.at("name").get<std::string>();
    ad.product_type = j.value("product_type", "");
    ad.first_category = j.value("first_category", "");
    ad.second_category = j.value("second_category", "");
    if (j.contains("attributes")) {
        for (const auto& kv : j.at("attributes")) {
            if (!kv.is_array() || kv.size() != 2) throw Error("attribute must be a [key, value] pair");
            ad.attributes.emplace_back(kv[0].get<std::string>(), kv[1].get<std::string>());
        }
    }
    ad.ecpm = j.value("ecpm", 0.0);
    return ad;
}

/// Reads the catalog JSONL format. Duplicate ids and malformed lines are
/// rejected; errors carry the offending line number.
inline Catalog load_catalog(const std::filesystem::path& path) {
    Catalog catalog;
    io::for_each_jsonl(path, [&](const io::json& rec, std::size_t line) {
        Ad ad;
        try {
            ad = ad_from_json(rec);
        } catch (const Error& e) {
            throw ParseError(e.what(), line);
        }
        try {
            catalog.add(std::move(ad));
        } catch (const DuplicateIdError&) {
            throw;
        } catch (const Error& e) {
            throw ParseError(e.what(), line);
        }
    });
    return catalog;
}

inline void save_catalog(const Catalog& catalog, const std::filesystem::path& path) {
    std::vector<io::json> recs;
    recs.reserve(catalog.size());
    for (const auto& ad : catalog) recs.push_back(to_json(ad));
    io::write_jsonl(path, recs);
}

/// Fills the ad into the textual feature-mapping template used for embedding
/// and for the explicit alignment corpus.
inline std::string render_description(const Ad& ad) {
    std::string attrs;
    for (std::size_t i = 0; i < ad.attributes.size(); ++i) {
        if (i) attrs += ", ";
        attrs += ad.attributes[i].first + "_" + ad.attributes[i].second;
    }
    return "The name of the ad is " + ad.name + "; The product type is " + ad.product_type +
           "; The first-level category is " + ad.first_category + "; The second-level category is " +
           ad.second_category + "; The attributes include: " + attrs + ".";
}

}  // namespace genret

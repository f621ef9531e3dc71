#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "genret/catalog.hpp"
#include "genret/embedding.hpp"
#include "genret/error.hpp"
#include "genret/jsonl.hpp"
#include "genret/prompting.hpp"
#include "genret/random.hpp"
#include "genret/serving.hpp"

namespace genret {

struct SyntheticSpec {
    std::size_t num_categories = 6;
    std::size_t ads_per_category = 12;
    std::size_t num_users = 120;
    std::size_t events_per_user = 16;
    double content_ratio = 0.4;      ///< share of content-domain events
    double negative_ratio = 0.08;    ///< share of negative-feedback events
    double affinity = 0.85;          ///< chance an event stays in the user's home category
    double favourite_ratio = 0.7;    ///< chance an ad event hits one of the user's favourites
    std::size_t favourites = 3;
    double ecpm_mean = 5.0;
    double ecpm_sd = 2.0;
    std::size_t trace_ticks = 100;
    std::size_t trace_requests_per_tick = 10;
    std::uint64_t seed = 0;

    void validate() const {
        if (!num_categories || !ads_per_category || !num_users || !events_per_user)
            throw ConfigError("synthetic sizes must be positive");
        if (events_per_user < 2) throw ConfigError("need at least two events per user");
        for (double p : {content_ratio, negative_ratio, affinity, favourite_ratio})
            if (p < 0.0 || p > 1.0) throw ConfigError("synthetic ratios must lie in [0, 1]");
        if (content_ratio >= 1.0) throw ConfigError("content_ratio must leave room for ad events");
        if (ecpm_sd < 0.0) throw ConfigError("ecpm_sd must be non-negative");
    }
};

struct TruthRecord {
    std::string user_id;
    std::string ad_id;
};

struct SyntheticData {
    Catalog catalog;
    std::map<std::string, UserRecord> users;  ///< events exclude the held-out ad event
    std::vector<TruthRecord> truth;
    std::map<std::string, std::vector<std::string>> ltr_labels;
    std::vector<Request> trace;
};

namespace detail {

inline const std::vector<std::string>& category_pool() {
    static const std::vector<std::string> pool{"automobile", "travel",  "education", "finance", "gaming",
                                               "beauty",     "food",    "fitness",   "housing", "pets",
                                               "fashion",    "music",   "insurance", "health",  "outdoor",
                                               "books"};
    return pool;
}

inline std::string category_name(std::size_t c) {
    const auto& pool = category_pool();
    if (c < pool.size()) return pool[c];
    return pool[c % pool.size()] + std::to_string(c / pool.size());
}

inline std::string zero_pad(std::size_t v, int width) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%0*zu", width, v);
    return buf;
}

/// Box-Muller on the project's own uniform source, so streams match across
/// standard libraries.
inline double normal(Rng& rng) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * uniform01(rng));
}

template <class T>
const T& pick(Rng& rng, const std::vector<T>& v) {
    return v[uniform_index(rng, v.size())];
}

}  // namespace detail

/// Ads of one category share the category word, product type and attribute
/// keys; users stick to a home category and a few favourite ads.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    SyntheticData out;
    static const std::vector<std::string> series{"plus", "pro", "max", "lite", "prime", "go", "one", "neo"};
    static const std::vector<std::string> brands{"Acme", "Nova", "Orion", "Vela", "Lumen", "Apex", "Terra", "Kite"};

    Rng ad_rng = make_rng(spec.seed, "synthetic/catalog");
    std::vector<std::vector<std::string>> by_cat(spec.num_categories);
    for (std::size_t c = 0; c < spec.num_categories; ++c) {
        const std::string cat = detail::category_name(c);
        for (std::size_t i = 0; i < spec.ads_per_category; ++i) {
            Ad ad;
            ad.ad_id = "ad" + detail::zero_pad(c * spec.ads_per_category + i, 5);
            const std::string brand = detail::pick(ad_rng, brands);
            const std::string line = series[i % series.size()];
            ad.name = brand + " " + cat + " " + line + " " + std::to_string(i + 1);
            ad.product_type = cat + " products";
            ad.first_category = cat;
            ad.second_category = cat + " " + line;
            ad.attributes = {{cat + " brand", brand}, {cat + " series", brand + " " + line}};
            ad.ecpm = std::max(0.1, std::round((spec.ecpm_mean + spec.ecpm_sd * detail::normal(ad_rng)) * 100.0) / 100.0);
            by_cat[c].push_back(ad.ad_id);
            out.catalog.add(std::move(ad));
        }
    }

    static const std::vector<std::string> genders{"male", "female"};
    static const std::vector<std::string> residences{"Haidian, Beijing", "Pudong, Shanghai", "Tianhe, Guangzhou",
                                                     "Nanshan, Shenzhen", "Wuhou, Chengdu"};
    static const std::vector<std::string> degrees{"high school", "bachelor", "master", "doctor"};
    static const std::vector<std::string> jobs{"Internet industry", "education industry", "finance industry",
                                               "manufacturing industry", "retail industry"};
    static const std::vector<std::string> spending{"low", "medium", "high"};
    static const std::vector<std::string> content_kinds{"play short video", "search", "watch live stream"};
    static const std::vector<std::string> ad_kinds{"click on ad", "conversion ad"};

    Rng user_rng = make_rng(spec.seed, "synthetic/users");
    const std::size_t width = std::to_string(spec.num_users).size();
    for (std::size_t u = 0; u < spec.num_users; ++u) {
        UserProfile p;
        p.user_id = "u" + detail::zero_pad(u, static_cast<int>(std::max<std::size_t>(width, 4)));
        p.age = 18 + static_cast<int>(uniform_index(user_rng, 45));
        p.gender = detail::pick(user_rng, genders);
        p.residence = detail::pick(user_rng, residences);
        p.education_level = detail::pick(user_rng, degrees);
        p.occupation = detail::pick(user_rng, jobs);
        p.consumption_level = detail::pick(user_rng, spending);
        p.arpu = std::round(std::exp(1.0 + 0.8 * detail::normal(user_rng)) * 100.0) / 100.0;

        const std::size_t home = uniform_index(user_rng, spec.num_categories);
        std::vector<std::string> favs = by_cat[home];
        for (std::size_t i = favs.size(); i > 1; --i) std::swap(favs[i - 1], favs[uniform_index(user_rng, i)]);
        favs.resize(std::min(spec.favourites, favs.size()));

        std::vector<BehaviorEvent> events;
        int day = 85;
        std::size_t fav_cursor = uniform_index(user_rng, favs.size());
        for (std::size_t e = 0; e < spec.events_per_user; ++e) {
            BehaviorEvent ev;
            ev.days_ago = day;
            day = std::max(0, day - 1 - static_cast<int>(uniform_index(user_rng, 9)));
            const bool last = e + 1 == spec.events_per_user;
            const std::size_t cat = uniform01(user_rng) < spec.affinity ? home : uniform_index(user_rng, spec.num_categories);
            const std::string cat_name = detail::category_name(cat);
            ev.category = cat_name;
            if (!last && uniform01(user_rng) < spec.content_ratio) {
                ev.domain = Domain::content;
                ev.event_type = detail::pick(user_rng, content_kinds);
                ev.title = cat_name + " " + detail::pick(user_rng, series) + " review";
            } else {
                ev.domain = Domain::ad;
                ev.event_type = detail::pick(user_rng, ad_kinds);
                if (cat == home && uniform01(user_rng) < spec.favourite_ratio) {
                    // favourites come round in a fixed cycle
                    ev.ad_id = favs[fav_cursor];
                    fav_cursor = (fav_cursor + 1) % favs.size();
                } else {
                    ev.ad_id = detail::pick(user_rng, by_cat[cat]);
                }
            }
            if (!last && uniform01(user_rng) < spec.negative_ratio) {
                ev.positive = false;
                ev.event_type = ev.domain == Domain::ad ? "close ad" : "skip video";
            }
            events.push_back(std::move(ev));
        }
        // the newest event is always a positive ad event: it becomes the held-out truth
        out.truth.push_back({p.user_id, events.back().ad_id});
        events.pop_back();

        std::vector<std::string> labels = favs;
        const std::string extra = detail::pick(user_rng, by_cat[home]);
        if (std::find(labels.begin(), labels.end(), extra) == labels.end()) labels.push_back(extra);
        out.ltr_labels[p.user_id] = labels;

        const std::string id = p.user_id;
        out.users.emplace(id, UserRecord{std::move(p), std::move(events)});
    }

    Rng trace_rng = make_rng(spec.seed, "synthetic/trace");
    std::vector<std::string> ids;
    for (const auto& [id, rec] : out.users) ids.push_back(id);
    for (std::size_t t = 0; t < spec.trace_ticks; ++t)
        for (std::size_t r = 0; r < spec.trace_requests_per_tick; ++r)
            out.trace.push_back({detail::pick(trace_rng, ids), static_cast<Tick>(t), std::nullopt});
    return out;
}

/// Writes catalog.jsonl, profiles.jsonl, events.jsonl, truth.jsonl,
/// ltr.jsonl and trace.jsonl under `dir`.
inline void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_catalog(data.catalog, dir / "catalog.jsonl");
    std::vector<io::json> profiles, events, truth, ltr, trace;
    for (const auto& [id, rec] : data.users) {
        profiles.push_back(to_json(rec.profile));
        for (const auto& e : rec.events) events.push_back(event_to_json(id, e));
    }
    for (const auto& t : data.truth) truth.push_back({{"user_id", t.user_id}, {"ad_id", t.ad_id}});
    for (const auto& [id, labels] : data.ltr_labels) ltr.push_back({{"user_id", id}, {"labels", labels}});
    for (const auto& r : data.trace) trace.push_back({{"tick", r.arrival_tick}, {"user_id", r.user_id}});
    io::write_jsonl(dir / "profiles.jsonl", profiles);
    io::write_jsonl(dir / "events.jsonl", events);
    io::write_jsonl(dir / "truth.jsonl", truth);
    io::write_jsonl(dir / "ltr.jsonl", ltr);
    io::write_jsonl(dir / "trace.jsonl", trace);
}

inline std::vector<TruthRecord> load_truth(const std::filesystem::path& path) {
    std::vector<TruthRecord> out;
    io::for_each_jsonl(path, [&](const io::json& r, std::size_t) {
        out.push_back({r.at("user_id").get<std::string>(), r.at("ad_id").get<std::string>()});
    });
    return out;
}

inline std::map<std::string, std::vector<std::string>> load_ltr(const std::filesystem::path& path) {
    std::map<std::string, std::vector<std::string>> out;
    io::for_each_jsonl(path, [&](const io::json& r, std::size_t) {
        out[r.at("user_id").get<std::string>()] = r.at("labels").get<std::vector<std::string>>();
    });
    return out;
}

/// Well-separated Gaussian clusters: cluster k is centred on a random unit
/// direction scaled by `separation`, members add N(0, spread^2) noise.
inline EmbeddingTable gaussian_clusters(std::size_t clusters, std::size_t per_cluster, std::size_t dim,
                                        double separation, double spread, std::uint64_t seed) {
    if (!clusters || !per_cluster || !dim) throw ConfigError("cluster sizes must be positive");
    Rng rng = make_rng(seed, "synthetic/clusters");
    EmbeddingTable table(dim);
    for (std::size_t k = 0; k < clusters; ++k) {
        Embedding centre(dim);
        double n = 0.0;
        for (auto& x : centre) {
            x = detail::normal(rng);
            n += x * x;
        }
        for (auto& x : centre) x *= separation / std::sqrt(n);
        for (std::size_t i = 0; i < per_cluster; ++i) {
            Embedding v(dim);
            for (std::size_t d = 0; d < dim; ++d) v[d] = centre[d] + spread * detail::normal(rng);
            table.set("c" + std::to_string(k) + "_" + detail::zero_pad(i, 4), std::move(v));
        }
    }
    return table;
}

}  // namespace genret

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "genret/error.hpp"
#include "genret/jsonl.hpp"

namespace genret {

struct EvalRecord {
    std::string user_id;
    std::vector<std::string> retrieved;  ///< ranked, no duplicates
    std::string truth;
    std::optional<std::set<std::string>> ltr_labels;
};

namespace detail {

inline void require_records(const std::vector<EvalRecord>& records, std::size_t k) {
    if (records.empty()) throw MetricError("metric undefined over zero records");
    if (k == 0) throw MetricError("k must be at least 1");
}

/// 1-based rank of the truth within the first k entries, 0 when absent.
inline std::size_t truth_rank(const EvalRecord& r, std::size_t k) {
    const std::size_t n = std::min(k, r.retrieved.size());
    for (std::size_t i = 0; i < n; ++i)
        if (r.retrieved[i] == r.truth) return i + 1;
    return 0;
}

}  // namespace detail

inline double hit_ratio(const std::vector<EvalRecord>& records, std::size_t k) {
    detail::require_records(records, k);
    double hits = 0.0;
    for (const auto& r : records) hits += detail::truth_rank(r, k) ? 1.0 : 0.0;
    return hits / static_cast<double>(records.size());
}

/// Single relevant item per user, so the ideal DCG is 1.
inline double ndcg(const std::vector<EvalRecord>& records, std::size_t k) {
    detail::require_records(records, k);
    double s = 0.0;
    for (const auto& r : records)
        if (const auto rank = detail::truth_rank(r, k)) s += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
    return s / static_cast<double>(records.size());
}

/// 2|A n B| / (|A| + |B|); two empty lists count as identical.
inline double dice(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    if (a.empty() && b.empty()) return 1.0;
    const std::unordered_set<std::string> sa(a.begin(), a.end());
    const std::unordered_set<std::string> sb(b.begin(), b.end());
    std::size_t common = 0;
    for (const auto& x : sa) common += sb.count(x);
    return 2.0 * static_cast<double>(common) / static_cast<double>(sa.size() + sb.size());
}

struct Diversity {
    double concentration = 0.0;  ///< mean share of the most frequent category
    double abundance = 0.0;      ///< mean number of distinct categories
    std::optional<double> score; ///< unset for k = 1
};

/// score = ((1 - concentration) + (abundance - 1) / (k - 1)) / 2
inline Diversity diversity(const std::vector<EvalRecord>& records, std::size_t k,
                           const std::unordered_map<std::string, std::string>& categories) {
    detail::require_records(records, k);
    Diversity d;
    for (const auto& r : records) {
        std::map<std::string, std::size_t> counts;
        const std::size_t n = std::min(k, r.retrieved.size());
        for (std::size_t i = 0; i < n; ++i) {
            auto it = categories.find(r.retrieved[i]);
            if (it == categories.end()) throw MetricError("no category for ad '" + r.retrieved[i] + "'");
            ++counts[it->second];
        }
        std::size_t top = 0;
        for (const auto& [c, n_c] : counts) top = std::max(top, n_c);
        d.concentration += static_cast<double>(top) / static_cast<double>(k);
        d.abundance += static_cast<double>(counts.size());
    }
    d.concentration /= static_cast<double>(records.size());
    d.abundance /= static_cast<double>(records.size());
    if (k > 1) d.score = ((1.0 - d.concentration) + (d.abundance - 1.0) / static_cast<double>(k - 1)) / 2.0;
    return d;
}

struct LtrRecall {
    double value = 0.0;
    std::size_t users = 0;     ///< users contributing to the mean
    std::size_t excluded = 0;  ///< users without labels
};

inline LtrRecall ltrr(const std::vector<EvalRecord>& records, std::size_t k) {
    detail::require_records(records, k);
    LtrRecall out;
    for (const auto& r : records) {
        if (!r.ltr_labels || r.ltr_labels->empty()) {
            ++out.excluded;
            continue;
        }
        const std::size_t n = std::min(k, r.retrieved.size());
        std::size_t found = 0;
        for (std::size_t i = 0; i < n; ++i) found += r.ltr_labels->count(r.retrieved[i]);
        out.value += static_cast<double>(found) / static_cast<double>(r.ltr_labels->size());
        ++out.users;
    }
    if (out.users == 0) throw MetricError("no user has LTR labels");
    out.value /= static_cast<double>(out.users);
    return out;
}

struct TruncationSubject {
    std::string user_id;
    std::size_t ad_events = 0;  ///< used for quartile grouping
};

struct TruncationCurve {
    std::vector<double> mean;                 ///< mean Dice per drop, over all users
    std::vector<std::vector<double>> groups;  ///< [quartile][drop], quartile 0 has the fewest ad events
    std::vector<std::size_t> group_sizes;
};

/// `retrieve(i, drop)` returns the list for subject i with its `drop`
/// earliest events removed. Each point is Dice against the untruncated list.
inline TruncationCurve truncation_study(
    const std::vector<TruncationSubject>& subjects, std::size_t max_drop,
    const std::function<std::vector<std::string>(std::size_t, std::size_t)>& retrieve) {
    TruncationCurve c;
    c.mean.assign(max_drop + 1, 0.0);
    c.groups.assign(4, std::vector<double>(max_drop + 1, 0.0));
    c.group_sizes.assign(4, 0);
    if (subjects.empty()) return c;

    std::vector<std::size_t> order(subjects.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return subjects[a].ad_events < subjects[b].ad_events; });
    std::vector<std::size_t> group(subjects.size());
    for (std::size_t r = 0; r < order.size(); ++r) group[order[r]] = r * 4 / order.size();

    for (std::size_t i = 0; i < subjects.size(); ++i) {
        const auto base = retrieve(i, 0);
        ++c.group_sizes[group[i]];
        for (std::size_t l = 0; l <= max_drop; ++l) {
            const double d = l == 0 ? 1.0 : dice(base, retrieve(i, l));
            c.mean[l] += d;
            c.groups[group[i]][l] += d;
        }
    }
    for (auto& x : c.mean) x /= static_cast<double>(subjects.size());
    for (std::size_t g = 0; g < 4; ++g)
        if (c.group_sizes[g])
            for (auto& x : c.groups[g]) x /= static_cast<double>(c.group_sizes[g]);
    return c;
}

inline io::json to_json(const TruncationCurve& c) {
    return {{"mean", c.mean}, {"groups", c.groups}, {"group_sizes", c.group_sizes}};
}

/// Report over the standard cut-offs: hr@{1,4,8}, ndcg@{4,8}, ltrr@{4,8}
/// plus diversity at the largest k.
inline io::json evaluation_report(const std::vector<EvalRecord>& records, const std::vector<std::size_t>& ks,
                                  const std::unordered_map<std::string, std::string>& categories) {
    io::json rep;
    rep["users"] = records.size();
    io::json hr = io::json::object(), nd = io::json::object(), lt = io::json::object();
    const bool any_labels = std::any_of(records.begin(), records.end(),
                                        [](const EvalRecord& r) { return r.ltr_labels && !r.ltr_labels->empty(); });
    for (auto k : ks) {
        hr[std::to_string(k)] = hit_ratio(records, k);
        nd[std::to_string(k)] = ndcg(records, k);
        if (any_labels) lt[std::to_string(k)] = ltrr(records, k).value;
    }
    rep["hr"] = hr;
    rep["ndcg"] = nd;
    rep["ltrr"] = lt;
    const std::size_t kmax = ks.empty() ? 1 : *std::max_element(ks.begin(), ks.end());
    const Diversity d = diversity(records, kmax, categories);
    rep["diversity"] = {{"k", kmax}, {"concentration", d.concentration}, {"abundance", d.abundance}};
    rep["diversity"]["score"] = d.score ? io::json(*d.score) : io::json(nullptr);
    return rep;
}

}  // namespace genret

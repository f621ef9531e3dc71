#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "genret/catalog.hpp"
#include "genret/error.hpp"
#include "genret/jsonl.hpp"
#include "genret/random.hpp"
#include "genret/semantic_id.hpp"
#include "genret/text.hpp"

namespace genret {

struct UserProfile {
    std::string user_id;
    int age = 0;
    std::string gender;
    std::string residence;
    std::string education_level;
    std::string occupation;
    std::string consumption_level;
    double arpu = 0.0;  ///< average revenue per user, drives serving priority
};

enum class Domain { ad, content };

struct BehaviorEvent {
    int days_ago = 0;
    std::string event_type;  ///< rendered verbatim, e.g. "click on ad"
    Domain domain = Domain::content;
    std::string title;       ///< content title, or the ad's name once resolved
    std::string ad_id;       ///< ad-domain events only
    std::optional<SemanticId> sid;
    std::string category;    ///< first-level category (ad events: from the catalog)
    bool positive = true;
};

/// (category, interaction count), descending by count.
struct InterestSummary {
    std::vector<std::pair<std::string, std::size_t>> entries;
};

struct UserRecord {
    UserProfile profile;
    std::vector<BehaviorEvent> events;  ///< chronological, oldest first
};

/// How ad events appear inside a behavior sequence.
enum class AdRendering {
    sid,    ///< main task: semantic-id tokens
    title,  ///< implicit alignment: the ad's name
};

inline constexpr std::size_t kDefaultTokenBudget = 2096;
inline constexpr int kDefaultWindowDays = 90;
inline constexpr int kNumTemplates = 3;
inline constexpr std::string_view kTaskInstruction =
    "The following is an instruction describing a task. Please give a response to complete this request appropriately.";
inline constexpr std::string_view kNextAdQuestion = "what ad will the user be interested in next time?";

/// Summary over every event, positive or negative, by first-level category;
/// ties broken by category name. Events without a category are skipped.
inline InterestSummary summarize_interests(const std::vector<BehaviorEvent>& events, std::size_t top_n = 5) {
    std::map<std::string, std::size_t> counts;
    for (const auto& e : events)
        if (!e.category.empty()) ++counts[e.category];
    InterestSummary s;
    s.entries.assign(counts.begin(), counts.end());
    std::stable_sort(s.entries.begin(), s.entries.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    if (s.entries.size() > top_n) s.entries.resize(top_n);
    return s;
}

/// Profile clauses in canonical order.
inline std::vector<std::string> profile_clauses(const UserProfile& p) {
    return {std::to_string(p.age) + "-year-old " + p.gender, "resident in " + p.residence,
            "with a " + p.education_level + "'s degree", "working in " + p.occupation,
            "with a " + p.consumption_level + " consumption level"};
}

inline std::string render_profile(const std::vector<std::string>& clauses) { return text::join(clauses, ", ") + "."; }

inline std::string render_summary(const InterestSummary& s) {
    std::string out = "The categories that have been frequently interacted recently are (format: category^interaction times):";
    for (const auto& [cat, n] : s.entries) out += " " + cat + "^" + std::to_string(n) + " times;";
    return out;
}

inline std::string render_event(const BehaviorEvent& e, AdRendering mode) {
    std::string subject;
    if (e.domain == Domain::ad && mode == AdRendering::sid) {
        if (!e.sid) throw CorpusError("ad event for '" + e.ad_id + "' has no semantic id");
        subject = render_sid(*e.sid);
    } else {
        subject = e.title;
    }
    return std::to_string(e.days_ago) + " days ago^" + e.event_type + "^" + subject;
}

inline std::string render_behaviors(const std::vector<BehaviorEvent>& events, AdRendering mode) {
    std::vector<std::string> items;
    for (const auto& e : events) items.push_back(render_event(e, mode));
    std::string out = "The most recent interaction behavior sequence details (format: time^behavior type^title) are";
    if (!items.empty()) out += " " + text::join(items, "; ");
    return out + ".";
}

struct PromptOptions {
    int template_id = 0;
    std::size_t token_budget = kDefaultTokenBudget;
    AdRendering rendering = AdRendering::sid;
    /// Profile clause order; empty means canonical order.
    std::vector<std::size_t> profile_order;
};

namespace detail {

inline std::string assemble(int template_id, const std::string& profile, const std::string& summary,
                            const std::string& behaviors) {
    const std::string header(kTaskInstruction);
    switch (template_id) {
        case 0:
            return header + "\n" + profile + "\n" + summary + "\n" + behaviors + "\n" + std::string(kNextAdQuestion);
        case 1:
            return header + "\n[Instruction]: Assuming you are an ad recommender system, the user is " + profile + " " +
                   summary + " " + behaviors + " Given all this, " + std::string(kNextAdQuestion);
        case 2:
            return header + "\n" + behaviors + "\n" + summary + "\nUser profile: " + profile +
                   "\nAs an ad recommender system, decide " + std::string(kNextAdQuestion);
        default:
            throw ConfigError("unknown prompt template " + std::to_string(template_id));
    }
}

}  // namespace detail

/// Renders one prompt. `events` must be oldest-first and already restricted
/// to what the prompt may show. When the budget is exceeded the oldest
/// events are dropped until the prompt fits.
inline std::string build_prompt(const UserProfile& profile, const InterestSummary& summary,
                                const std::vector<BehaviorEvent>& events, const PromptOptions& options) {
    auto clauses = profile_clauses(profile);
    if (!options.profile_order.empty()) {
        if (options.profile_order.size() != clauses.size()) throw ConfigError("profile order must permute all clauses");
        std::vector<std::string> reordered;
        for (auto i : options.profile_order) reordered.push_back(clauses.at(i));
        clauses = std::move(reordered);
    }
    const std::string prof = render_profile(clauses);
    const std::string summ = render_summary(summary);

    const std::string skeleton = detail::assemble(options.template_id, prof, summ, render_behaviors({}, options.rendering));
    if (text::count_tokens(skeleton) > options.token_budget)
        throw BudgetError("token budget " + std::to_string(options.token_budget) +
                          " cannot hold the instruction and profile");

    std::size_t first = 0;
    while (true) {
        const std::vector<BehaviorEvent> kept(events.begin() + static_cast<std::ptrdiff_t>(first), events.end());
        std::string prompt = detail::assemble(options.template_id, prof, summ, render_behaviors(kept, options.rendering));
        if (text::count_tokens(prompt) <= options.token_budget) return prompt;
        ++first;
    }
}

/// Only positive events inside the window make it into behavior sequences.
inline std::vector<BehaviorEvent> behavior_sequence(const std::vector<BehaviorEvent>& events,
                                                    int window_days = kDefaultWindowDays) {
    std::vector<BehaviorEvent> out;
    for (const auto& e : events)
        if (e.positive && e.days_ago <= window_days) out.push_back(e);
    return out;
}

struct PromptSample {
    std::string user_id;
    std::string prompt;
    SemanticId response;
    std::string response_ad_id;
    int template_id = 0;
    std::size_t response_index = 0;  ///< position of the target event in the behavior sequence
    std::size_t history_size = 0;    ///< events before the target (before budget truncation)
};

struct AugmentOptions {
    bool reuse = true;              ///< one sample per positive ad event
    std::vector<int> templates{0};  ///< cross product over these templates
    bool reorder = false;           ///< seeded shuffle of the profile clauses
    std::uint64_t seed = 0;
    std::size_t token_budget = kDefaultTokenBudget;
    AdRendering rendering = AdRendering::sid;
};

/// Turns one behavior sequence into <prompt, response> samples. With reuse the
/// sequence is split at every positive ad event, latest first, each sample
/// seeing only the events before its target; without reuse only the last ad
/// event is a target.
inline std::vector<PromptSample> augment(const UserProfile& profile, const InterestSummary& summary,
                                         const std::vector<BehaviorEvent>& sequence, const AugmentOptions& options) {
    std::vector<std::size_t> targets;
    for (std::size_t i = sequence.size(); i-- > 0;) {
        const auto& e = sequence[i];
        if (e.domain == Domain::ad && e.positive) {
            targets.push_back(i);
            if (!options.reuse) break;
        }
    }
    std::vector<PromptSample> out;
    Rng rng = make_rng(options.seed, "prompt/reorder/" + profile.user_id);
    for (std::size_t target : targets) {
        const auto& t = sequence[target];
        if (!t.sid) throw CorpusError("ad '" + t.ad_id + "' has no semantic id");
        const std::vector<BehaviorEvent> history(sequence.begin(), sequence.begin() + static_cast<std::ptrdiff_t>(target));
        for (int tmpl : options.templates) {
            PromptOptions po;
            po.template_id = tmpl;
            po.token_budget = options.token_budget;
            po.rendering = options.rendering;
            if (options.reorder) {
                po.profile_order = {0, 1, 2, 3, 4};
                for (std::size_t i = po.profile_order.size(); i > 1; --i)
                    std::swap(po.profile_order[i - 1], po.profile_order[uniform_index(rng, i)]);
            }
            out.push_back({profile.user_id, build_prompt(profile, summary, history, po), *t.sid, t.ad_id, tmpl, target,
                           history.size()});
        }
    }
    return out;
}

/// Fills semantic ids and names (as titles) of ad events from the catalog.
inline void resolve_ad_events(std::vector<BehaviorEvent>& events, const Catalog& catalog,
                              const std::map<std::string, SemanticId>& sids) {
    for (auto& e : events) {
        if (e.domain != Domain::ad) continue;
        const Ad* ad = catalog.find(e.ad_id);
        if (!ad) throw CorpusError("event references unknown ad '" + e.ad_id + "'");
        auto it = sids.find(e.ad_id);
        if (it == sids.end()) throw CorpusError("ad '" + e.ad_id + "' has no semantic id");
        e.sid = it->second;
        e.title = ad->name;
        if (e.category.empty()) e.category = ad->first_category;
    }
}

/// The prompt used at retrieval time: the user's full windowed positive
/// sequence, main-task rendering.
inline std::string inference_prompt(const UserRecord& user, const Catalog& catalog,
                                    const std::map<std::string, SemanticId>& sids, const PromptOptions& options = {}) {
    auto events = user.events;
    resolve_ad_events(events, catalog, sids);
    return build_prompt(user.profile, summarize_interests(events), behavior_sequence(events), options);
}

inline UserProfile profile_from_json(const io::json& j) {
    UserProfile p;
    p.user_id = j.at("user_id").get<std::string>();
    p.age = j.value("age", 0);
    if (p.age < 0 || p.age > 120) throw Error("age out of range for user '" + p.user_id + "'");
    p.gender = j.value("gender", "");
    p.residence = j.value("residence", "");
    p.education_level = j.value("education_level", "");
    p.occupation = j.value("occupation", "");
    p.consumption_level = j.value("consumption_level", "");
    p.arpu = j.value("arpu", 0.0);
    return p;
}

inline io::json to_json(const UserProfile& p) {
    return {{"user_id", p.user_id},     {"age", p.age},
            {"gender", p.gender},       {"residence", p.residence},
            {"education_level", p.education_level}, {"occupation", p.occupation},
            {"consumption_level", p.consumption_level}, {"arpu", p.arpu}};
}

inline io::json event_to_json(const std::string& user_id, const BehaviorEvent& e) {
    io::json j = {{"user_id", user_id},
                  {"days_ago", e.days_ago},
                  {"event_type", e.event_type},
                  {"domain", e.domain == Domain::ad ? "ad" : "content"},
                  {"positive", e.positive}};
    if (e.domain == Domain::ad) j["ad_id"] = e.ad_id;
    else j["title"] = e.title;
    if (!e.category.empty()) j["category"] = e.category;
    return j;
}

inline BehaviorEvent event_from_json(const io::json& j) {
    BehaviorEvent e;
    e.days_ago = j.at("days_ago").get<int>();
    if (e.days_ago < 0) throw Error("days_ago must be non-negative");
    e.event_type = j.at("event_type").get<std::string>();
    const auto domain = j.at("domain").get<std::string>();
    if (domain == "ad") {
        e.domain = Domain::ad;
        e.ad_id = j.at("ad_id").get<std::string>();
    } else if (domain == "content") {
        e.domain = Domain::content;
        e.title = j.at("title").get<std::string>();
    } else {
        throw Error("unknown domain '" + domain + "'");
    }
    e.category = j.value("category", "");
    e.positive = j.value("positive", true);
    return e;
}

/// Loads profiles and events into per-user records, keyed by user_id. Events
/// keep file order, which must be chronological per user.
inline std::map<std::string, UserRecord> load_users(const std::filesystem::path& profiles,
                                                    const std::filesystem::path& events) {
    std::map<std::string, UserRecord> users;
    io::for_each_jsonl(profiles, [&](const io::json& rec, std::size_t line) {
        UserProfile p = profile_from_json(rec);
        const std::string id = p.user_id;
        if (!users.emplace(id, UserRecord{std::move(p), {}}).second) throw ParseError("duplicate user '" + id + "'", line);
    });
    io::for_each_jsonl(events, [&](const io::json& rec, std::size_t line) {
        const auto id = rec.at("user_id").get<std::string>();
        auto it = users.find(id);
        if (it == users.end()) throw ParseError("event for unknown user '" + id + "'", line);
        it->second.events.push_back(event_from_json(rec));
    });
    return users;
}

}  // namespace genret

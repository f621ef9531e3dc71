#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "genret/catalog.hpp"
#include "genret/error.hpp"
#include "genret/jsonl.hpp"
#include "genret/neural_scorer.hpp"
#include "genret/prompting.hpp"
#include "genret/random.hpp"
#include "genret/scorer.hpp"
#include "genret/semantic_id.hpp"

namespace genret {

enum class Stage { explicit_alignment, implicit_alignment, main };

inline std::string stage_name(Stage s) {
    switch (s) {
        case Stage::explicit_alignment: return "ex";
        case Stage::implicit_alignment: return "im";
        case Stage::main: return "main";
    }
    return "?";
}

inline Stage parse_stage(const std::string& s) {
    if (s == "ex" || s == "explicit") return Stage::explicit_alignment;
    if (s == "im" || s == "implicit") return Stage::implicit_alignment;
    if (s == "main") return Stage::main;
    throw ConfigError("unknown stage '" + s + "' (expected ex, im or main)");
}

struct CorpusPair {
    std::string prompt;
    SemanticId response;
    Stage stage = Stage::main;
    std::string user_id;  ///< empty for explicit pairs
    std::string ad_id;
};

inline std::string explicit_prompt(const Ad& ad) {
    return "Given the ad's detailed description \"" + render_description(ad) + "\", what is the corresponding ad?";
}

namespace detail {

inline const SemanticId& sid_for(const std::map<std::string, SemanticId>& sids, const std::string& ad_id) {
    auto it = sids.find(ad_id);
    if (it == sids.end()) throw CorpusError("ad '" + ad_id + "' has no semantic id");
    return it->second;
}

}  // namespace detail

/// Builds the pairs of one stage. Behavior-based stages render each user's
/// windowed positive sequence through `augment`; the implicit stage shows ad
/// names where the main stage shows semantic ids.
inline std::vector<CorpusPair> build_training_corpus(const Catalog& catalog,
                                                     const std::map<std::string, SemanticId>& sids,
                                                     const std::map<std::string, UserRecord>& users, Stage stage,
                                                     AugmentOptions options = {}) {
    std::vector<CorpusPair> out;
    if (stage == Stage::explicit_alignment) {
        for (const auto& ad : catalog) out.push_back({explicit_prompt(ad), detail::sid_for(sids, ad.ad_id), stage, "", ad.ad_id});
        return out;
    }
    options.rendering = stage == Stage::main ? AdRendering::sid : AdRendering::title;
    for (const auto& [uid, rec] : users) {
        auto events = rec.events;
        resolve_ad_events(events, catalog, sids);
        const InterestSummary summary = summarize_interests(events);
        for (auto& s : augment(rec.profile, summary, behavior_sequence(events), options))
            out.push_back({std::move(s.prompt), std::move(s.response), stage, uid, std::move(s.response_ad_id)});
    }
    return out;
}

inline std::vector<TrainingExample> to_examples(const std::vector<CorpusPair>& pairs) {
    std::vector<TrainingExample> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back({ScorerContext::from_prompt(p.prompt), p.response});
    return out;
}

inline void save_corpus(const std::vector<CorpusPair>& pairs, const std::filesystem::path& path) {
    std::vector<io::json> recs;
    for (const auto& p : pairs)
        recs.push_back({{"prompt", p.prompt}, {"response", render_sid(p.response)}, {"stage", stage_name(p.stage)},
                        {"user_id", p.user_id}, {"ad_id", p.ad_id}});
    io::write_jsonl(path, recs);
}

inline std::vector<CorpusPair> load_corpus(const std::filesystem::path& path) {
    std::vector<CorpusPair> out;
    io::for_each_jsonl(path, [&](const io::json& r, std::size_t) {
        out.push_back({r.at("prompt").get<std::string>(), parse_sid(r.at("response").get<std::string>()),
                       parse_stage(r.at("stage").get<std::string>()), r.value("user_id", ""), r.value("ad_id", "")});
    });
    return out;
}

struct StagePlan {
    std::vector<Stage> order{Stage::explicit_alignment, Stage::implicit_alignment, Stage::main};
    bool mix = false;                    ///< one shuffled pass over the union instead of ordered stages
    std::size_t epochs_per_stage = 10;   ///< neural scorer only
    std::map<Stage, double> weights;     ///< n-gram count weight per stage, default 1
};

inline StagePlan parse_stage_plan(const std::string& spec) {
    StagePlan plan;
    plan.order.clear();
    std::string body = spec;
    if (body.starts_with("mix:")) {
        plan.mix = true;
        body = body.substr(4);
    }
    for (const auto& s : text::split(body, ',')) {
        if (s.empty()) continue;
        const Stage st = parse_stage(std::string(text::trim(s)));
        if (std::find(plan.order.begin(), plan.order.end(), st) != plan.order.end())
            throw ConfigError("stage '" + stage_name(st) + "' listed twice");
        plan.order.push_back(st);
    }
    if (plan.order.empty()) throw ConfigError("no training stages given");
    return plan;
}

struct StageLogEntry {
    std::string stage;  ///< stage name, or "mix"
    std::size_t pairs = 0;
    std::vector<double> epoch_loss;  ///< neural scorer only
};

using Corpora = std::map<Stage, std::vector<CorpusPair>>;

namespace detail {

inline std::vector<CorpusPair> mixed_union(const StagePlan& plan, const Corpora& corpora, std::uint64_t seed) {
    std::vector<CorpusPair> all;
    for (Stage s : plan.order)
        if (auto it = corpora.find(s); it != corpora.end()) all.insert(all.end(), it->second.begin(), it->second.end());
    Rng rng = make_rng(seed, "corpus/mix");
    for (std::size_t i = all.size(); i > 1; --i) std::swap(all[i - 1], all[uniform_index(rng, i)]);
    return all;
}

}  // namespace detail

/// Stages are consumed strictly in plan order; stages absent from the plan
/// are never touched.
inline std::vector<StageLogEntry> train_staged(NgramScorer& scorer, const Corpora& corpora, const StagePlan& plan) {
    std::vector<StageLogEntry> log;
    for (Stage s : plan.order) {
        auto it = corpora.find(s);
        const std::size_t n = it == corpora.end() ? 0 : it->second.size();
        const double w = plan.weights.contains(s) ? plan.weights.at(s) : 1.0;
        if (it != corpora.end()) scorer.fit(to_examples(it->second), w);
        log.push_back({plan.mix ? "mix:" + stage_name(s) : stage_name(s), n, {}});
    }
    return log;
}

inline std::vector<StageLogEntry> train_staged(NeuralScorer& scorer, const Corpora& corpora, const StagePlan& plan) {
    std::vector<StageLogEntry> log;
    if (plan.mix) {
        const auto all = detail::mixed_union(plan, corpora, scorer.config().seed);
        log.push_back({"mix", all.size(), scorer.fit(to_examples(all), plan.epochs_per_stage, "mix")});
        return log;
    }
    for (Stage s : plan.order) {
        auto it = corpora.find(s);
        if (it == corpora.end()) {
            log.push_back({stage_name(s), 0, {}});
            continue;
        }
        log.push_back({stage_name(s), it->second.size(),
                       scorer.fit(to_examples(it->second), plan.epochs_per_stage, stage_name(s))});
    }
    return log;
}

inline io::json to_json(const std::vector<StageLogEntry>& log) {
    io::json j = io::json::array();
    for (const auto& e : log) j.push_back({{"stage", e.stage}, {"pairs", e.pairs}, {"epoch_loss", e.epoch_loss}});
    return j;
}

// Scorer snapshots -----------------------------------------------------------

inline constexpr int kScorerSnapshotVersion = 1;

using AnyScorer = std::variant<NgramScorer, NeuralScorer>;

inline const NextTokenScorer& as_scorer(const AnyScorer& s) {
    return std::visit([](const auto& x) -> const NextTokenScorer& { return x; }, s);
}

inline void save_scorer(const AnyScorer& scorer, const std::filesystem::path& path) {
    const bool neural = std::holds_alternative<NeuralScorer>(scorer);
    const auto& base = as_scorer(scorer);
    io::json j = {{"format", "genret-scorer"},
                  {"version", kScorerSnapshotVersion},
                  {"kind", neural ? "neural" : "ngram"},
                  {"level_sizes", base.vocabulary().level_sizes()}};
    j["model"] = std::visit([](const auto& x) { return x.to_json(); }, scorer);
    io::write_json(path, j);
}

inline AnyScorer load_scorer(const std::filesystem::path& path) {
    const io::json j = io::read_json(path);
    if (j.value("format", "") != "genret-scorer") throw ParseError("not a scorer snapshot: " + path.string());
    if (j.value("version", 0) != kScorerSnapshotVersion)
        throw ParseError("unsupported scorer snapshot version " + std::to_string(j.value("version", 0)));
    Vocabulary vocab(j.at("level_sizes").get<std::vector<std::uint32_t>>());
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "ngram") return NgramScorer::from_json(std::move(vocab), j.at("model"));
    if (kind == "neural") return NeuralScorer::from_json(std::move(vocab), j.at("model"));
    throw ParseError("unknown scorer kind '" + kind + "'");
}

}  // namespace genret

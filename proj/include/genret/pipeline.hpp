#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "genret/catalog.hpp"
#include "genret/corpus.hpp"
#include "genret/decoder.hpp"
#include "genret/dpo.hpp"
#include "genret/embedding.hpp"
#include "genret/error.hpp"
#include "genret/jsonl.hpp"
#include "genret/metrics.hpp"
#include "genret/neural_scorer.hpp"
#include "genret/prompting.hpp"
#include "genret/rqvae.hpp"
#include "genret/scorer.hpp"
#include "genret/synthetic.hpp"
#include "genret/trie.hpp"

namespace genret {

/// Hex SHA-256 of a file's bytes.
inline std::string sha256_file(const std::filesystem::path& path) {
    auto in = io::open_in(path);
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        EVP_MD_CTX_free(ctx);
        throw Error("sha256 init failed");
    }
    char buf[1 << 15];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::string hex;
    char b[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(b, sizeof b, "%02x", md[i]);
        hex += b;
    }
    return hex;
}

struct DpoSettings {
    bool enabled = false;
    double beta = 0.1;
    DpoVariant variant = DpoVariant::log_ratio;
    double learning_rate = 1e-2;
    std::size_t steps = 20;
    std::size_t neighbours = 2;  ///< same-category catalog ads added to each user's candidates
    std::size_t max_users = 50;
};

struct PipelineConfig {
    std::filesystem::path data_dir;  ///< catalog.jsonl, profiles.jsonl, events.jsonl, truth.jsonl, ltr.jsonl
    std::filesystem::path out_dir;
    std::size_t embed_dim = 64;
    std::string embed_source = "hashed";  ///< or "file"
    std::filesystem::path embeddings_file;
    RqVaeConfig rqvae{.num_levels = 3, .codebook_size = 16};
    std::string scorer = "ngram";  ///< or "neural"
    NgramConfig ngram;
    NeuralConfig neural;
    StagePlan stages;
    AugmentOptions augment;
    DpoSettings dpo;
    DecodeOptions decode;
    std::vector<std::size_t> ks{1, 4, 8};
    std::size_t truncation_max_drop = 4;
    std::size_t truncation_users = 40;
    std::uint64_t seed = 0;
};

inline PipelineConfig pipeline_config_from_json(const io::json& j, PipelineConfig c = {}) {
    if (j.contains("data_dir")) c.data_dir = j.at("data_dir").get<std::string>();
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    c.seed = j.value("seed", c.seed);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.embed_source = j.value("embed_source", c.embed_source);
    if (j.contains("embeddings_file")) c.embeddings_file = j.at("embeddings_file").get<std::string>();
    if (j.contains("rqvae")) c.rqvae = rqvae_config_from_json(j.at("rqvae"), c.rqvae);
    c.scorer = j.value("scorer", c.scorer);
    if (j.contains("ngram")) {
        const auto& n = j.at("ngram");
        c.ngram.smoothing_alpha = n.value("smoothing_alpha", c.ngram.smoothing_alpha);
        if (n.contains("weights")) c.ngram.weights = n.at("weights").get<std::array<double, 4>>();
    }
    if (j.contains("neural")) {
        const auto& n = j.at("neural");
        c.neural.embed_dim = n.value("embed_dim", c.neural.embed_dim);
        c.neural.hidden_dim = n.value("hidden_dim", c.neural.hidden_dim);
        c.neural.word_buckets = n.value("word_buckets", c.neural.word_buckets);
        c.neural.learning_rate = n.value("learning_rate", c.neural.learning_rate);
        c.neural.batch_size = n.value("batch_size", c.neural.batch_size);
    }
    if (j.contains("stages")) c.stages = parse_stage_plan(j.at("stages").get<std::string>());
    c.stages.epochs_per_stage = j.value("epochs_per_stage", c.stages.epochs_per_stage);
    if (j.contains("strategies")) {
        c.augment.reuse = false;
        c.augment.reorder = false;
        for (const auto& s : j.at("strategies")) {
            const auto name = s.get<std::string>();
            if (name == "reuse") c.augment.reuse = true;
            else if (name == "reorder") c.augment.reorder = true;
            else if (name == "templates") c.augment.templates = {0, 1, 2};
            else throw ConfigError("unknown augmentation strategy '" + name + "'");
        }
    }
    c.augment.token_budget = j.value("token_budget", c.augment.token_budget);
    if (j.contains("dpo")) {
        const auto& d = j.at("dpo");
        c.dpo.enabled = d.value("enabled", c.dpo.enabled);
        c.dpo.beta = d.value("beta", c.dpo.beta);
        if (d.contains("variant")) c.dpo.variant = parse_dpo_variant(d.at("variant").get<std::string>());
        c.dpo.learning_rate = d.value("learning_rate", c.dpo.learning_rate);
        c.dpo.steps = d.value("steps", c.dpo.steps);
        c.dpo.neighbours = d.value("neighbours", c.dpo.neighbours);
        c.dpo.max_users = d.value("max_users", c.dpo.max_users);
    }
    c.decode.beam_width = j.value("beam_width", c.decode.beam_width);
    c.decode.renormalize = j.value("renormalize", c.decode.renormalize);
    if (j.contains("k")) c.ks = j.at("k").get<std::vector<std::size_t>>();
    c.truncation_max_drop = j.value("truncation_max_drop", c.truncation_max_drop);
    c.truncation_users = j.value("truncation_users", c.truncation_users);
    return c;
}

/// Seeds of every stochastic component derive from the root seed.
inline void propagate_seed(PipelineConfig& c) {
    c.rqvae.seed = substream_seed(c.seed, "rqvae");
    c.neural.seed = substream_seed(c.seed, "neural-scorer");
    c.augment.seed = substream_seed(c.seed, "augment");
}

struct ManifestEntry {
    std::string stage;
    std::string path;  ///< relative to the output directory, or "input/<name>"
    std::string sha256;
};

struct PipelineResult {
    std::vector<std::string> stages;
    std::vector<ManifestEntry> manifest;
    io::json report;
};

/// Error raised by a pipeline stage; what() carries "<stage>: <cause>".
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& cause) : Error(stage + ": " + cause), stage_(std::move(stage)) {}
    [[nodiscard]] const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

/// Decoded list for one user, with the `drop` earliest sequence events removed.
inline RetrievalList retrieval_list_for_user(const NextTokenScorer& scorer, const Trie& trie, const UserRecord& user,
                                             const Catalog& catalog, const SidAssignments& sids,
                                             const DecodeOptions& decode_options, std::size_t drop = 0) {
    auto events = user.events;
    resolve_ad_events(events, catalog, sids);
    auto seq = behavior_sequence(events);
    seq.erase(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(std::min(drop, seq.size())));
    const std::string prompt = build_prompt(user.profile, summarize_interests(events), seq, PromptOptions{});
    return decode(scorer, ScorerContext::from_prompt(prompt), trie, decode_options);
}

inline std::vector<std::string> retrieve_for_user(const NextTokenScorer& scorer, const Trie& trie,
                                                  const UserRecord& user, const Catalog& catalog,
                                                  const SidAssignments& sids, const DecodeOptions& decode_options,
                                                  std::size_t drop = 0) {
    return retrieval_list_for_user(scorer, trie, user, catalog, sids, decode_options, drop).ad_ids();
}

/// One (user_id, ad_id, score, rank) row per retrieved ad, rank starting at 1.
inline void append_result_rows(std::vector<io::json>& rows, const std::string& user_id, const RetrievalList& list) {
    for (std::size_t i = 0; i < list.entries.size(); ++i)
        rows.push_back({{"user_id", user_id},
                        {"ad_id", list.entries[i].ad_id},
                        {"score", list.entries[i].score},
                        {"rank", i + 1}});
}

/// Reads result rows back into ranked lists. Rows are grouped by user and
/// ordered by rank; a user with no rows simply does not appear.
inline std::map<std::string, std::vector<std::string>> load_results(const std::filesystem::path& path) {
    std::map<std::string, std::vector<std::pair<std::size_t, std::string>>> ranked;
    io::for_each_jsonl(path, [&](const io::json& r, std::size_t) {
        ranked[r.at("user_id").get<std::string>()].emplace_back(r.at("rank").get<std::size_t>(),
                                                                r.at("ad_id").get<std::string>());
    });
    std::map<std::string, std::vector<std::string>> out;
    for (auto& [uid, v] : ranked) {
        std::sort(v.begin(), v.end());
        for (auto& [rank, ad] : v) out[uid].push_back(std::move(ad));
    }
    return out;
}

/// Preference triplets from each user's positive ads plus same-category
/// catalog neighbours of the user's latest ad.
inline std::vector<PreferenceTriplet> source_triplets(const std::map<std::string, UserRecord>& users,
                                                      const Catalog& catalog, const SidAssignments& sids,
                                                      const DpoSettings& settings) {
    std::vector<PreferenceTriplet> out;
    std::size_t taken = 0;
    for (const auto& [uid, user] : users) {
        if (taken++ >= settings.max_users) break;
        std::vector<std::string> ads;
        for (const auto& e : user.events)
            if (e.domain == Domain::ad && e.positive && std::find(ads.begin(), ads.end(), e.ad_id) == ads.end())
                ads.push_back(e.ad_id);
        if (ads.empty()) continue;
        const auto& members = catalog.category_index().at(catalog.at(ads.back()).first_category);
        std::size_t added = 0;
        for (const auto& m : members) {
            if (added >= settings.neighbours) break;
            if (std::find(ads.begin(), ads.end(), m) != ads.end()) continue;
            ads.push_back(m);
            ++added;
        }
        std::vector<PreferenceCandidate> cands;
        for (const auto& a : ads) cands.push_back({sids.at(a), catalog.at(a).ecpm});
        const std::string prompt = inference_prompt(user, catalog, sids);
        auto t = build_preference_triplets(uid, prompt, cands);
        out.insert(out.end(), t.begin(), t.end());
    }
    return out;
}

/// embed -> index -> build-trie -> build-corpus -> train -> (dpo) -> generate -> eval.
/// Every file consumed by a later stage is hashed into manifest.json.
inline PipelineResult run_pipeline(PipelineConfig config) {
    propagate_seed(config);
    namespace fs = std::filesystem;
    const fs::path out = config.out_dir;
    fs::create_directories(out);
    PipelineResult result;

    auto record = [&](const std::string& stage, const fs::path& file, const std::string& label) {
        result.manifest.push_back({stage, label, sha256_file(file)});
    };
    auto stage = [&](const std::string& name, const std::function<void()>& body) {
        try {
            body();
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(name, e.what());
        }
        result.stages.push_back(name);
    };

    const fs::path data = config.data_dir;
    Catalog catalog;
    std::map<std::string, UserRecord> users;
    std::vector<TruthRecord> truth;
    std::map<std::string, std::vector<std::string>> ltr;
    stage("load", [&] {
        catalog = load_catalog(data / "catalog.jsonl");
        users = load_users(data / "profiles.jsonl", data / "events.jsonl");
        truth = load_truth(data / "truth.jsonl");
        if (fs::exists(data / "ltr.jsonl")) ltr = load_ltr(data / "ltr.jsonl");
        for (const char* f : {"catalog.jsonl", "profiles.jsonl", "events.jsonl", "truth.jsonl", "ltr.jsonl"})
            if (fs::exists(data / f)) record("load", data / f, std::string("input/") + f);
    });

    EmbeddingTable embeddings;
    stage("embed", [&] {
        if (config.embed_source == "file") {
            embeddings = load_embeddings(config.embeddings_file, config.embed_dim).table;
        } else if (config.embed_source == "hashed") {
            embeddings = embed_catalog(catalog, config.embed_dim, static_cast<std::int64_t>(config.seed));
        } else {
            throw ConfigError("unknown embed source '" + config.embed_source + "'");
        }
        save_embeddings(embeddings, out / "embeddings.tsv");
        record("embed", out / "embeddings.tsv", "embeddings.tsv");
    });

    SidAssignments sids;
    io::json index_report;
    stage("index", [&] {
        RqVaeTrainingReport rep;
        const RqVaeModel model = train_rqvae(config.rqvae, embeddings, &rep);
        sids = assign_sids(model, embeddings);
        save_rqvae(model, out / "rqvae.json");
        save_sids(sids, out / "sids.jsonl");
        record("index", out / "rqvae.json", "rqvae.json");
        record("index", out / "sids.jsonl", "sids.jsonl");
        const auto m = codebook_metrics(sids, config.rqvae.codebook_size);
        index_report = {{"initial_loss", rep.initial_loss},
                        {"final_loss", rep.final_loss},
                        {"collision_rate", m.collision_rate},
                        {"max_collision", m.max_collision},
                        {"usage_per_level", m.usage_per_level}};
    });

    Trie trie;
    stage("build-trie", [&] {
        trie = Trie::build(sids);
        trie.save(out / "trie.txt");
        record("build-trie", out / "trie.txt", "trie.txt");
    });

    Corpora corpora;
    stage("build-corpus", [&] {
        std::vector<CorpusPair> all;
        for (Stage s : config.stages.order) {
            corpora[s] = build_training_corpus(catalog, sids, users, s, config.augment);
            all.insert(all.end(), corpora[s].begin(), corpora[s].end());
        }
        save_corpus(all, out / "corpus.jsonl");
        record("build-corpus", out / "corpus.jsonl", "corpus.jsonl");
    });

    const Vocabulary vocab = Vocabulary::covering(
        [&] {
            std::vector<SemanticId> v;
            for (const auto& [id, sid] : sids) v.push_back(sid);
            return v;
        }());
    std::unique_ptr<AnyScorer> scorer;
    stage("train", [&] {
        std::vector<StageLogEntry> log;
        if (config.scorer == "ngram") {
            NgramScorer s(vocab, config.ngram);
            log = train_staged(s, corpora, config.stages);
            scorer = std::make_unique<AnyScorer>(std::move(s));
        } else if (config.scorer == "neural") {
            NeuralScorer s = NeuralScorer::initialized(vocab, config.neural);
            log = train_staged(s, corpora, config.stages);
            scorer = std::make_unique<AnyScorer>(std::move(s));
        } else {
            throw ConfigError("unknown scorer '" + config.scorer + "'");
        }
        save_scorer(*scorer, out / "scorer.json");
        io::write_json(out / "stage_log.json", to_json(log));
        record("train", out / "scorer.json", "scorer.json");
        record("train", out / "stage_log.json", "stage_log.json");
    });

    io::json dpo_report;
    if (config.dpo.enabled) {
        stage("dpo", [&] {
            auto* policy = std::get_if<NeuralScorer>(scorer.get());
            if (!policy) throw ConfigError("dpo requires the neural scorer");
            const NeuralScorer reference = *policy;
            const auto triplets = source_triplets(users, catalog, sids, config.dpo);
            save_triplets(triplets, out / "triplets.jsonl");
            const auto rep = dpo_update(*policy, reference, triplets, config.dpo.beta, config.dpo.variant,
                                        config.dpo.learning_rate, config.dpo.steps);
            save_scorer(*scorer, out / "scorer_dpo.json");
            record("dpo", out / "triplets.jsonl", "triplets.jsonl");
            record("dpo", out / "scorer_dpo.json", "scorer_dpo.json");
            dpo_report = {{"triplets", triplets.size()},
                          {"margin_before", rep.margin_before},
                          {"margin_after", rep.margin_after}};
        });
    }

    std::vector<EvalRecord> records;
    DecodeOptions dec = config.decode;
    dec.beam_width = std::max(dec.beam_width, config.ks.empty() ? 1 : *std::max_element(config.ks.begin(), config.ks.end()));
    stage("generate", [&] {
        const NextTokenScorer& s = as_scorer(*scorer);
        std::vector<io::json> rows;
        for (const auto& t : truth) {
            auto it = users.find(t.user_id);
            if (it == users.end()) throw CorpusError("truth for unknown user '" + t.user_id + "'");
            const auto list = retrieval_list_for_user(s, trie, it->second, catalog, sids, dec);
            EvalRecord r{t.user_id, list.ad_ids(), t.ad_id, std::nullopt};
            if (auto l = ltr.find(t.user_id); l != ltr.end())
                r.ltr_labels = std::set<std::string>(l->second.begin(), l->second.end());
            append_result_rows(rows, t.user_id, list);
            records.push_back(std::move(r));
        }
        io::write_jsonl(out / "results.jsonl", rows);
        record("generate", out / "results.jsonl", "results.jsonl");
    });

    stage("eval", [&] {
        const NextTokenScorer& s = as_scorer(*scorer);
        io::json rep = evaluation_report(records, config.ks, catalog.categories());
        std::vector<TruncationSubject> subjects;
        std::vector<const UserRecord*> subject_users;
        for (const auto& t : truth) {
            if (subjects.size() >= config.truncation_users) break;
            const auto& u = users.at(t.user_id);
            std::size_t ad_events = 0;
            for (const auto& e : u.events) ad_events += e.domain == Domain::ad && e.positive;
            subjects.push_back({t.user_id, ad_events});
            subject_users.push_back(&u);
        }
        const auto curve = truncation_study(subjects, config.truncation_max_drop, [&](std::size_t i, std::size_t drop) {
            return retrieve_for_user(s, trie, *subject_users[i], catalog, sids, dec, drop);
        });
        rep["truncation_curve"] = to_json(curve);
        rep["index"] = index_report;
        if (config.dpo.enabled) rep["dpo"] = dpo_report;
        io::write_json(out / "report.json", rep);
        record("eval", out / "report.json", "report.json");
        result.report = rep;
    });

    io::json manifest = {{"stages", result.stages}, {"files", io::json::array()}};
    for (const auto& m : result.manifest)
        manifest["files"].push_back({{"stage", m.stage}, {"path", m.path}, {"sha256", m.sha256}});
    io::write_json(out / "manifest.json", manifest);
    return result;
}

}  // namespace genret

// Command-line front end: one subcommand per pipeline stage.

#include <CLI11.hpp>

#include <chrono>
#include <iostream>
#include <set>

#include "genret/genret.hpp"

namespace fs = std::filesystem;
using namespace genret;

namespace {

bool g_verbose = false;

void log_info(const std::string& msg, const io::json& extra = io::json::object()) {
    if (!g_verbose) return;
    io::json j = extra;
    j["level"] = "info";
    j["msg"] = msg;
    std::cerr << j.dump() << '\n';
}

std::vector<std::size_t> parse_ks(const std::string& s) {
    std::vector<std::size_t> out;
    for (const auto& part : text::split(s, ',')) {
        const auto t = text::trim(part);
        if (t.empty()) continue;
        out.push_back(static_cast<std::size_t>(std::stoul(std::string(t))));
    }
    if (out.empty()) throw ConfigError("empty k list");
    return out;
}

AugmentOptions parse_strategies(const std::string& s, std::uint64_t seed) {
    AugmentOptions a;
    a.seed = substream_seed(seed, "augment");
    a.reuse = false;
    for (const auto& part : text::split(s, ',')) {
        const std::string name(text::trim(part));
        if (name.empty()) continue;
        if (name == "reuse") a.reuse = true;
        else if (name == "templates") a.templates = {0, 1, 2};
        else if (name == "reorder") a.reorder = true;
        else throw ConfigError("unknown strategy '" + name + "'");
    }
    return a;
}

std::vector<SemanticId> sid_values(const SidAssignments& sids) {
    std::vector<SemanticId> v;
    for (const auto& [id, sid] : sids) v.push_back(sid);
    return v;
}

std::string error_kind(const std::exception& e) {
    if (dynamic_cast<const StageError*>(&e)) return "stage";
    if (dynamic_cast<const ParseError*>(&e)) return "parse";
    if (dynamic_cast<const ConfigError*>(&e)) return "config";
    if (dynamic_cast<const DimensionError*>(&e)) return "dimension";
    if (dynamic_cast<const CorpusError*>(&e)) return "corpus";
    if (dynamic_cast<const BudgetError*>(&e)) return "budget";
    if (dynamic_cast<const TrainingDivergedError*>(&e)) return "training-diverged";
    if (dynamic_cast<const MetricError*>(&e)) return "metric";
    if (dynamic_cast<const Error*>(&e)) return "error";
    return "internal";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Generative ad retrieval toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    app.add_flag("-v,--verbose", g_verbose, "Structured progress logging to stderr");
    std::uint64_t seed = 0;
    app.add_option("--seed", seed, "Root seed")->capture_default_str();

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Write a synthetic catalog, users, events, truth, LTR labels and trace");
    SyntheticSpec spec;
    fs::path gen_out;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--categories", spec.num_categories)->capture_default_str();
    gen->add_option("--ads-per-category", spec.ads_per_category)->capture_default_str();
    gen->add_option("--users", spec.num_users)->capture_default_str();
    gen->add_option("--events-per-user", spec.events_per_user)->capture_default_str();
    gen->add_option("--content-ratio", spec.content_ratio)->capture_default_str();
    gen->add_option("--trace-ticks", spec.trace_ticks)->capture_default_str();
    gen->add_option("--trace-rate", spec.trace_requests_per_tick, "Requests per tick")->capture_default_str();

    // embed
    auto* embed = app.add_subcommand("embed", "Embed catalog ads into a TSV table");
    fs::path embed_catalog_path, embed_out, embed_file;
    std::size_t embed_dim = 64;
    std::string embed_source = "hashed";
    embed->add_option("--catalog", embed_catalog_path)->required();
    embed->add_option("--out", embed_out)->required();
    embed->add_option("--dim", embed_dim)->capture_default_str();
    embed->add_option("--embed-source", embed_source)->check(CLI::IsMember({"hashed", "file"}))->capture_default_str();
    embed->add_option("--file", embed_file, "Precomputed TSV when --embed-source file");

    // index
    auto* index = app.add_subcommand("index", "Train the residual quantizer and assign semantic ids");
    fs::path index_emb, index_out;
    std::size_t index_dim = 64;
    RqVaeConfig rq{.num_levels = 3, .codebook_size = 16};
    index->add_option("--embeddings", index_emb)->required();
    index->add_option("--dim", index_dim)->capture_default_str();
    index->add_option("--out-dir", index_out)->required();
    index->add_option("--levels", rq.num_levels)->capture_default_str();
    index->add_option("--codebook-size", rq.codebook_size)->capture_default_str();
    index->add_option("--latent-dim", rq.latent_dim)->capture_default_str();
    index->add_option("--hidden-dim", rq.hidden_dim)->capture_default_str();
    index->add_option("--epochs", rq.epochs)->capture_default_str();
    index->add_option("--lr", rq.learning_rate)->capture_default_str();
    index->add_option("--commitment", rq.commitment_weight)->capture_default_str();

    // build-trie
    auto* btrie = app.add_subcommand("build-trie", "Build the prefix tree over semantic ids");
    fs::path trie_sids, trie_out;
    btrie->add_option("--sids", trie_sids)->required();
    btrie->add_option("--out", trie_out)->required();

    // build-corpus
    auto* bcorpus = app.add_subcommand("build-corpus", "Render training pairs for the alignment and main stages");
    fs::path bc_catalog, bc_sids, bc_events, bc_profiles, bc_out;
    std::string bc_stages = "ex,im,main", bc_strategies = "reuse";
    std::size_t bc_budget = kDefaultTokenBudget;
    bcorpus->add_option("--catalog", bc_catalog)->required();
    bcorpus->add_option("--sids", bc_sids)->required();
    bcorpus->add_option("--events", bc_events)->required();
    bcorpus->add_option("--profiles", bc_profiles)->required();
    bcorpus->add_option("--stages", bc_stages)->capture_default_str();
    bcorpus->add_option("--strategies", bc_strategies, "Subset of reuse,templates,reorder")->capture_default_str();
    bcorpus->add_option("--token-budget", bc_budget)->capture_default_str();
    bcorpus->add_option("--out", bc_out)->required();

    // train
    auto* train = app.add_subcommand("train", "Train a next-token scorer on a corpus");
    fs::path tr_corpus, tr_sids, tr_out, tr_log;
    std::string tr_kind = "ngram", tr_stages = "ex,im,main";
    std::size_t tr_epochs = 10;
    NgramConfig tr_ngram;
    NeuralConfig tr_neural;
    train->add_option("--corpus", tr_corpus)->required();
    train->add_option("--sids", tr_sids)->required();
    train->add_option("--scorer", tr_kind)->check(CLI::IsMember({"ngram", "neural"}))->capture_default_str();
    train->add_option("--stages", tr_stages, "Stage order; prefix with mix: for a shuffled union")->capture_default_str();
    train->add_option("--epochs-per-stage", tr_epochs)->capture_default_str();
    train->add_option("--alpha", tr_ngram.smoothing_alpha)->capture_default_str();
    train->add_option("--hidden-dim", tr_neural.hidden_dim)->capture_default_str();
    train->add_option("--embed-dim", tr_neural.embed_dim)->capture_default_str();
    train->add_option("--lr", tr_neural.learning_rate)->capture_default_str();
    train->add_option("--out", tr_out)->required();
    train->add_option("--stage-log", tr_log);

    // dpo
    auto* dpo = app.add_subcommand("dpo", "Preference-align a neural scorer against a frozen copy of itself");
    fs::path dpo_scorer, dpo_triplets, dpo_out, dpo_data, dpo_sids;
    double dpo_beta = 0.1, dpo_lr = 1e-2;
    std::size_t dpo_steps = 20;
    std::string dpo_variant = "log-ratio";
    dpo->add_option("--scorer", dpo_scorer)->required();
    dpo->add_option("--triplets", dpo_triplets)->required();
    dpo->add_option("--data", dpo_data, "Build triplets from this data directory first");
    dpo->add_option("--sids", dpo_sids, "Semantic ids, needed with --data");
    dpo->add_option("--beta", dpo_beta)->capture_default_str();
    dpo->add_option("--variant", dpo_variant)->check(CLI::IsMember({"paper-ratio", "log-ratio"}))->capture_default_str();
    dpo->add_option("--lr", dpo_lr)->capture_default_str();
    dpo->add_option("--steps", dpo_steps)->capture_default_str();
    dpo->add_option("--out", dpo_out)->required();

    // generate
    auto* generate = app.add_subcommand("generate", "Decode retrieval lists for held-out users");
    fs::path g_scorer, g_trie, g_data, g_sids, g_out;
    DecodeOptions g_decode;
    std::vector<std::string> g_users;
    generate->add_option("--user", g_users, "Only these users (repeatable); default every user in truth.jsonl");
    generate->add_option("--scorer", g_scorer)->required();
    generate->add_option("--trie", g_trie)->required();
    generate->add_option("--data", g_data, "Directory with catalog, profiles, events and truth")->required();
    generate->add_option("--sids", g_sids)->required();
    generate->add_option("--beam", g_decode.beam_width)->capture_default_str();
    generate->add_flag("--renormalize", g_decode.renormalize);
    generate->add_option("--out", g_out)->required();

    // eval
    auto* eval = app.add_subcommand("eval", "Score retrieval lists against held-out truth");
    fs::path e_results, e_truth, e_catalog, e_ltr, e_out;
    std::string e_ks = "1,4,8";
    eval->add_option("--results", e_results)->required();
    eval->add_option("--truth", e_truth)->required();
    eval->add_option("--catalog", e_catalog)->required();
    eval->add_option("--ltr", e_ltr);
    eval->add_option("--k", e_ks)->capture_default_str();
    eval->add_option("--out", e_out);

    // simulate
    auto* sim = app.add_subcommand("simulate", "Replay a request trace through the serving simulator");
    fs::path s_trace, s_data, s_sids, s_trie, s_scorer, s_out;
    ServingConfig s_cfg;
    sim->add_option("--trace", s_trace)->required();
    sim->add_option("--data", s_data)->required();
    sim->add_option("--sids", s_sids)->required();
    sim->add_option("--trie", s_trie)->required();
    sim->add_option("--scorer", s_scorer)->required();
    sim->add_option("--budget", s_cfg.budget_per_tick)->capture_default_str();
    sim->add_option("--workers", s_cfg.num_workers)->capture_default_str();
    sim->add_option("--ticks", s_cfg.ticks)->capture_default_str();
    sim->add_option("--beam", s_cfg.decode.beam_width)->capture_default_str();
    sim->add_flag("--warm", s_cfg.warm_start, "Precompute every user before the first tick");
    sim->add_flag("--concurrent", s_cfg.concurrent, "Decode admitted triggers on worker threads");
    sim->add_option("--out", s_out);

    // pipeline
    auto* pipe = app.add_subcommand("pipeline", "Run every stage end to end and write a hashed manifest");
    fs::path p_config, p_data, p_out;
    std::string p_scorer;
    bool p_dpo = false;
    pipe->add_option("--config", p_config, "JSON config file");
    pipe->add_option("--data", p_data);
    pipe->add_option("--out", p_out);
    pipe->add_option("--scorer", p_scorer)->check(CLI::IsMember({"ngram", "neural"}));
    pipe->add_flag("--dpo", p_dpo);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        const auto t0 = std::chrono::steady_clock::now();
        if (*gen) {
            spec.seed = seed;
            const auto data = generate_synthetic(spec);
            write_synthetic(data, gen_out);
            log_info("gen-data", {{"ads", data.catalog.size()}, {"users", data.users.size()}});
        } else if (*embed) {
            EmbeddingTable table;
            if (embed_source == "file") {
                auto loaded = load_embeddings(embed_file, embed_dim);
                if (loaded.duplicate_rows) log_info("duplicate embedding rows", {{"count", loaded.duplicate_rows}});
                table = std::move(loaded.table);
            } else {
                table = embed_catalog(load_catalog(embed_catalog_path), embed_dim, static_cast<std::int64_t>(seed));
            }
            save_embeddings(table, embed_out);
            log_info("embed", {{"rows", table.size()}});
        } else if (*index) {
            rq.seed = substream_seed(seed, "rqvae");
            const auto table = load_embeddings(index_emb, index_dim).table;
            RqVaeTrainingReport rep;
            const auto model = train_rqvae(rq, table, &rep);
            const auto sids = assign_sids(model, table);
            save_rqvae(model, index_out / "rqvae.json");
            save_sids(sids, index_out / "sids.jsonl");
            const auto m = codebook_metrics(sids, rq.codebook_size);
            const io::json summary = {{"initial_loss", rep.initial_loss}, {"final_loss", rep.final_loss},
                                      {"collision_rate", m.collision_rate}, {"max_collision", m.max_collision},
                                      {"usage_per_level", m.usage_per_level}};
            std::cout << summary.dump(2) << '\n';
        } else if (*btrie) {
            const Trie trie = Trie::build(load_sids(trie_sids));
            trie.save(trie_out);
            log_info("build-trie", {{"ads", trie.ad_count()}, {"nodes", trie.node_count()}});
        } else if (*bcorpus) {
            const auto catalog = load_catalog(bc_catalog);
            const auto sids = load_sids(bc_sids);
            const auto users = load_users(bc_profiles, bc_events);
            AugmentOptions aug = parse_strategies(bc_strategies, seed);
            aug.token_budget = bc_budget;
            std::vector<CorpusPair> all;
            for (Stage s : parse_stage_plan(bc_stages).order) {
                auto part = build_training_corpus(catalog, sids, users, s, aug);
                log_info("corpus stage", {{"stage", stage_name(s)}, {"pairs", part.size()}});
                all.insert(all.end(), part.begin(), part.end());
            }
            save_corpus(all, bc_out);
        } else if (*train) {
            const auto pairs = load_corpus(tr_corpus);
            Corpora corpora;
            for (const auto& p : pairs) corpora[p.stage].push_back(p);
            StagePlan plan = parse_stage_plan(tr_stages);
            plan.epochs_per_stage = tr_epochs;
            const Vocabulary vocab = Vocabulary::covering(sid_values(load_sids(tr_sids)));
            std::vector<StageLogEntry> log;
            if (tr_kind == "ngram") {
                NgramScorer s(vocab, tr_ngram);
                log = train_staged(s, corpora, plan);
                save_scorer(AnyScorer(std::move(s)), tr_out);
            } else {
                tr_neural.seed = substream_seed(seed, "neural-scorer");
                NeuralScorer s = NeuralScorer::initialized(vocab, tr_neural);
                log = train_staged(s, corpora, plan);
                save_scorer(AnyScorer(std::move(s)), tr_out);
            }
            if (!tr_log.empty()) io::write_json(tr_log, to_json(log));
            log_info("train", {{"stages", to_json(log)}});
        } else if (*dpo) {
            AnyScorer loaded = load_scorer(dpo_scorer);
            auto* policy = std::get_if<NeuralScorer>(&loaded);
            if (!policy) throw ConfigError("dpo requires a neural scorer snapshot");
            if (!dpo_data.empty()) {
                if (dpo_sids.empty()) throw ConfigError("--data needs --sids");
                const auto catalog = load_catalog(dpo_data / "catalog.jsonl");
                const auto users = load_users(dpo_data / "profiles.jsonl", dpo_data / "events.jsonl");
                save_triplets(source_triplets(users, catalog, load_sids(dpo_sids), DpoSettings{}), dpo_triplets);
            }
            const auto triplets = load_triplets(dpo_triplets);
            const NeuralScorer reference = *policy;
            const auto rep = dpo_update(*policy, reference, triplets, dpo_beta, parse_dpo_variant(dpo_variant), dpo_lr,
                                        dpo_steps);
            save_scorer(loaded, dpo_out);
            std::cout << io::json{{"triplets", triplets.size()},
                                  {"margin_before", rep.margin_before},
                                  {"margin_after", rep.margin_after},
                                  {"loss", rep.loss}}
                             .dump(2)
                      << '\n';
        } else if (*generate) {
            const AnyScorer scorer = load_scorer(g_scorer);
            const Trie trie = Trie::load(g_trie);
            const auto catalog = load_catalog(g_data / "catalog.jsonl");
            const auto users = load_users(g_data / "profiles.jsonl", g_data / "events.jsonl");
            const auto sids = load_sids(g_sids);
            if (g_users.empty())
                for (const auto& t : load_truth(g_data / "truth.jsonl")) g_users.push_back(t.user_id);
            std::vector<io::json> rows;
            for (const auto& uid : g_users) {
                auto it = users.find(uid);
                if (it == users.end()) throw CorpusError("unknown user '" + uid + "'");
                append_result_rows(rows, uid,
                                   retrieval_list_for_user(as_scorer(scorer), trie, it->second, catalog, sids, g_decode));
            }
            io::write_jsonl(g_out, rows);
            log_info("generate", {{"users", g_users.size()}, {"rows", rows.size()}});
        } else if (*eval) {
            const auto catalog = load_catalog(e_catalog);
            const auto retrieved = load_results(e_results);
            std::map<std::string, std::vector<std::string>> ltr;
            if (!e_ltr.empty()) ltr = load_ltr(e_ltr);
            std::vector<EvalRecord> records;
            for (const auto& t : load_truth(e_truth)) {
                auto it = retrieved.find(t.user_id);
                EvalRecord r{t.user_id, it == retrieved.end() ? std::vector<std::string>{} : it->second, t.ad_id,
                             std::nullopt};
                if (auto l = ltr.find(t.user_id); l != ltr.end())
                    r.ltr_labels = std::set<std::string>(l->second.begin(), l->second.end());
                records.push_back(std::move(r));
            }
            const auto rep = evaluation_report(records, parse_ks(e_ks), catalog.categories());
            if (!e_out.empty()) io::write_json(e_out, rep);
            std::cout << rep.dump(2) << '\n';
        } else if (*sim) {
            auto catalog = std::make_shared<const Catalog>(load_catalog(s_data / "catalog.jsonl"));
            auto users = load_users(s_data / "profiles.jsonl", s_data / "events.jsonl");
            auto sids = std::make_shared<const SidAssignments>(load_sids(s_sids));
            auto trie = std::make_shared<const Trie>(Trie::load(s_trie));
            auto any = std::make_shared<const AnyScorer>(load_scorer(s_scorer));
            std::shared_ptr<const NextTokenScorer> scorer(any, &as_scorer(*any));
            std::map<std::string, double> arpu;
            std::vector<std::string> ids;
            for (const auto& [id, u] : users) {
                arpu[id] = u.profile.arpu;
                ids.push_back(id);
            }
            ServingSystem system(scorer, trie, catalog, sids, AdmissionPolicy(arpu, s_cfg.budget_per_tick, 25), s_cfg);
            for (auto& [id, u] : users) system.store().put_user(std::move(u));
            const auto report = run_simulation(system, load_trace(s_trace), s_cfg, ids);
            if (!s_out.empty()) io::write_json(s_out, to_json(report));
            std::cout << to_json(report).dump(2) << '\n';
        } else if (*pipe) {
            PipelineConfig cfg;
            if (!p_config.empty()) cfg = pipeline_config_from_json(io::read_json(p_config));
            if (!p_data.empty()) cfg.data_dir = p_data;
            if (!p_out.empty()) cfg.out_dir = p_out;
            if (!p_scorer.empty()) cfg.scorer = p_scorer;
            if (p_dpo) cfg.dpo.enabled = true;
            if (app.get_option("--seed")->count()) cfg.seed = seed;
            if (cfg.data_dir.empty() || cfg.out_dir.empty()) throw ConfigError("pipeline needs data_dir and out_dir");
            const auto result = run_pipeline(cfg);
            log_info("pipeline", {{"stages", result.stages}});
            std::cout << result.report.dump(2) << '\n';
        }
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        log_info("done", {{"elapsed_ms", ms}});
        return 0;
    } catch (const std::exception& e) {
        io::json err = {{"error", {{"kind", error_kind(e)}, {"message", e.what()}}}};
        if (const auto* se = dynamic_cast<const StageError*>(&e)) err["error"]["stage"] = se->stage();
        std::cerr << err.dump() << '\n';
        return 1;
    }
}

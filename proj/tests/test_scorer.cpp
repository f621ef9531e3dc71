#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "test_support.hpp"

using namespace genret;
using genret::testing::rel_err;
using genret::testing::sid;
using genret::testing::temp_dir;
using genret::testing::tk;

namespace {

ScorerContext oracle_context() {
    ScorerContext c;
    c.words = {"travel", "tour", "bali"};
    c.history = {tk(0, 1), tk(1, 0)};
    c.instruction = true;
    return c;
}

// tests/oracles/forward_oracle.py, "scorer"
NeuralScorer oracle_scorer() {
    NeuralScorer s(Vocabulary({3, 2}), NeuralConfig{.embed_dim = 4, .hidden_dim = 5, .word_buckets = 7});
    for (std::size_t i = 0; i < s.params().size(); ++i) s.params()[i] = 0.3 * std::cos(0.11 * static_cast<double>(i) + 0.2);
    return s;
}

ScorerContext random_context(Rng& rng, const Vocabulary& v) {
    ScorerContext c;
    static const std::vector<std::string> pool{"travel", "ad", "click", "emotion", "beijing", "male", "car"};
    for (std::size_t i = 0, n = uniform_index(rng, 6); i < n; ++i) c.words.push_back(pool[uniform_index(rng, pool.size())]);
    for (std::size_t i = 0, n = uniform_index(rng, 4); i < n; ++i) {
        const auto l = static_cast<std::uint32_t>(uniform_index(rng, v.levels()));
        c.history.push_back(tk(l, static_cast<std::uint32_t>(uniform_index(rng, v.level_sizes()[l]))));
    }
    c.instruction = uniform01(rng) < 0.5;
    c.top_category = pool[uniform_index(rng, pool.size())];
    c.last_level1 = static_cast<int>(uniform_index(rng, 3)) - 1;
    return c;
}

std::vector<Token> random_prefix(Rng& rng, const Vocabulary& v) {
    std::vector<Token> p;
    for (std::size_t l = 0, n = uniform_index(rng, v.levels() + 1); l < n; ++l)
        p.push_back(tk(static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(uniform_index(rng, v.level_sizes()[l]))));
    return p;
}

SemanticId random_sid(Rng& rng, const Vocabulary& v) {
    std::vector<std::uint32_t> c;
    for (auto k : v.level_sizes()) c.push_back(static_cast<std::uint32_t>(uniform_index(rng, k)));
    return SemanticId{c};
}

}  // namespace

TEST(Vocabulary, DenseIdsAfterReservedBlock) {
    const Vocabulary v({13, 8, 23});
    EXPECT_EQ(v.size(), 3u + 13 + 8 + 23);
    EXPECT_EQ(v.id(tk(0, 0)), 3u);
    EXPECT_EQ(v.id(tk(1, 0)), 16u);
    EXPECT_EQ(v.id(tk(2, 22)), v.size() - 1);
    for (std::uint32_t id = 3; id < v.size(); ++id) EXPECT_EQ(v.id(v.token(id)), id);
    EXPECT_FALSE(v.is_sid_token(Vocabulary::kInstruction));
}

TEST(SemanticIdText, RenderParseRoundTrip) {
    const SemanticId s = sid({51, 10, 67, 93, 0});
    EXPECT_EQ(render_sid(s), "<a_51, b_10, c_67, d_93, e_0>");
    EXPECT_EQ(parse_sid("<a_51, b_10, c_67, d_93, e_0>"), s);
    EXPECT_THROW(parse_sid("<b_1, a_2>"), ParseError);
    EXPECT_THROW(parse_sid("a_1"), ParseError);
}

TEST(ScorerContext, ParsedFromPrompt) {
    const std::string prompt =
        "The following is an instruction describing a task. Assuming you are an ad recommender system.\n"
        "A 22-year-old male, resident in Haidian.\n"
        "The categories that have been frequently interacted recently are (format: category^interaction times): "
        "emotion^115 times; travel^3 times;\n"
        "... 31 days ago^click on ad^<a_51, b_10, c_67>; 2 days ago^click on ad^<a_4, b_1, c_0>.";
    const auto c = ScorerContext::from_prompt(prompt);
    EXPECT_TRUE(c.instruction);
    EXPECT_EQ(c.age_band, 2);
    EXPECT_EQ(c.gender, "male");
    EXPECT_EQ(c.top_category, "emotion");
    EXPECT_EQ(c.last_level1, 4);
    EXPECT_EQ(c.history, (std::vector<Token>{tk(0, 51), tk(1, 10), tk(2, 67), tk(0, 4), tk(1, 1), tk(2, 0)}));
    EXPECT_NE(std::find(c.words.begin(), c.words.end(), "haidian"), c.words.end());
    EXPECT_EQ(std::find(c.words.begin(), c.words.end(), "^"), c.words.end());

    const auto bare = ScorerContext::from_prompt("no instruction here");
    EXPECT_FALSE(bare.instruction);
    EXPECT_EQ(bare.age_band, -1);
    EXPECT_TRUE(bare.history.empty());
}

TEST(NgramScorer, UntrainedIsUniform) {
    const NgramScorer s(Vocabulary({4, 3, 5}));
    const auto d = s.prob_dist(ScorerContext{}, std::vector<Token>{tk(0, 2)});
    for (double p : d) EXPECT_NEAR(p, 1.0 / static_cast<double>(s.vocabulary().size()), 1e-15);
}

TEST(NgramScorer, CountsDominateAsSmoothingVanishes) {
    const auto target = sid({2, 1, 4});
    ScorerContext ctx;
    ctx.top_category = "travel";
    double previous = 0.0;
    for (double alpha : {1.0, 1e-2, 1e-4, 1e-8}) {
        NgramScorer s(Vocabulary({4, 3, 5}), NgramConfig{.smoothing_alpha = alpha});
        for (int i = 0; i < 20; ++i) s.observe(ctx, target);
        const double p = sequence_probability(s, ctx, target);
        EXPECT_GT(p, previous);
        previous = p;
    }
    EXPECT_GT(previous, 1.0 - 1e-6);
}

TEST(NgramScorer, InvalidConfig) {
    EXPECT_THROW(NgramScorer(Vocabulary({2}), NgramConfig{.smoothing_alpha = 0.0}), ConfigError);
    EXPECT_THROW(NgramScorer(Vocabulary({2}), NgramConfig{.weights = {0, 0, 0, 0}}), ConfigError);
    EXPECT_THROW(NgramScorer(Vocabulary({2}), NgramConfig{.weights = {-1, 1, 1, 1}}), ConfigError);
}

TEST(NgramScorer, SnapshotRoundTrip) {
    const Vocabulary v({4, 3, 5});
    NgramScorer s(v);
    Rng rng = make_rng(1, "test/ngram-snap");
    for (int i = 0; i < 30; ++i) s.observe(random_context(rng, v), random_sid(rng, v), 0.5 + uniform01(rng));
    const NgramScorer back = NgramScorer::from_json(v, s.to_json());
    EXPECT_EQ(back, s);
    for (int i = 0; i < 20; ++i) {
        const auto c = random_context(rng, v);
        const auto p = random_prefix(rng, v);
        EXPECT_EQ(back.prob_dist(c, p), s.prob_dist(c, p));
    }
}

TEST(NeuralScorer, MatchesScriptedOracle) {
    const auto s = oracle_scorer();
    const std::vector<double> empty{0.1174846952131138, 0.11920071968941678, 0.12115211932251965, 0.12332538052607138,
                                    0.12570422869858638, 0.12826937789496043, 0.13099831788449334, 0.13386516077083824};
    const std::vector<double> after_a2{0.12330224485180824, 0.12325618415170161, 0.12347884073292618,
                                       0.12396896746827038, 0.1247237739779452,  0.12573884177640215,
                                       0.12700799744037825, 0.12852314960056793};
    const auto d0 = s.prob_dist(oracle_context(), std::vector<Token>{});
    const auto d1 = s.prob_dist(oracle_context(), std::vector<Token>{tk(0, 2)});
    ASSERT_EQ(d0.size(), 8u);
    for (std::size_t i = 0; i < 8; ++i) {
        EXPECT_NEAR(d0[i], empty[i], 1e-9) << i;
        EXPECT_NEAR(d1[i], after_a2[i], 1e-9) << i;
    }
}

TEST(NeuralScorer, CrossEntropyGradientMatchesFiniteDifferences) {
    const Vocabulary v({3, 4, 2});
    NeuralScorer s = NeuralScorer::initialized(v, NeuralConfig{.embed_dim = 4, .hidden_dim = 6, .word_buckets = 5, .seed = 3});
    Rng rng = make_rng(2, "test/neural-fd");
    double worst = 0.0;
    for (int trial = 0; trial < 3; ++trial) {
        const auto ctx = random_context(rng, v);
        const auto target = random_sid(rng, v);
        std::vector<double> grad(s.params().size(), 0.0);
        s.sequence_log_prob(ctx, target, &grad);
        const double h = 1e-5;
        for (std::size_t i = 0; i < grad.size(); ++i) {
            const double keep = s.params()[i];
            s.params()[i] = keep + h;
            const double up = s.sequence_log_prob(ctx, target);
            s.params()[i] = keep - h;
            const double down = s.sequence_log_prob(ctx, target);
            s.params()[i] = keep;
            worst = std::max(worst, rel_err(grad[i], (up - down) / (2 * h), 1e-4));
        }
    }
    EXPECT_LT(worst, 1e-4);
}

TEST(NeuralScorer, FitLowersLossAndIsDeterministic) {
    const Vocabulary v({4, 4});
    Rng rng = make_rng(4, "test/neural-fit");
    std::vector<TrainingExample> data;
    for (int i = 0; i < 24; ++i) data.push_back({random_context(rng, v), random_sid(rng, v)});
    const NeuralConfig cfg{.embed_dim = 8, .hidden_dim = 16, .word_buckets = 32, .seed = 5};
    NeuralScorer a = NeuralScorer::initialized(v, cfg), b = NeuralScorer::initialized(v, cfg);
    const double before = a.mean_nll(data);
    const auto hist = a.fit(data, 30, "main");
    b.fit(data, 30, "main");
    EXPECT_EQ(hist.size(), 30u);
    EXPECT_LT(a.mean_nll(data), before);
    EXPECT_EQ(a.params(), b.params());
    EXPECT_TRUE(a.fit({}, 5, "main").empty());
}

TEST(ScorerProperty, DistributionContractAndFactorization) {
    Rng rng = make_rng(6, "test/contract");
    const Vocabulary v({5, 3, 4});
    NgramScorer ngram(v);
    for (int i = 0; i < 40; ++i) ngram.observe(random_context(rng, v), random_sid(rng, v));
    const NeuralScorer neural = NeuralScorer::initialized(v, NeuralConfig{.embed_dim = 6, .hidden_dim = 8, .word_buckets = 16, .seed = 1});
    const std::vector<const NextTokenScorer*> scorers{&ngram, &neural};
    for (const auto* s : scorers) {
        for (int i = 0; i < 200; ++i) {
            const auto c = random_context(rng, v);
            const auto p = random_prefix(rng, v);
            const auto d = s->prob_dist(c, p);
            ASSERT_EQ(d.size(), v.size());
            for (double x : d) ASSERT_GE(x, 0.0);
            EXPECT_NEAR(std::accumulate(d.begin(), d.end(), 0.0), 1.0, 1e-9);
            EXPECT_EQ(d, s->prob_dist(c, p));
        }
        for (int i = 0; i < 30; ++i) {
            const auto c = random_context(rng, v);
            const auto target = random_sid(rng, v);
            double product = 1.0;
            std::vector<Token> prefix;
            for (const auto& t : target.tokens()) {
                product *= s->prob_dist(c, prefix)[v.id(t)];
                prefix.push_back(t);
            }
            EXPECT_NEAR(sequence_probability(*s, c, target), product, 1e-15);
        }
    }
    for (int i = 0; i < 30; ++i) {
        const auto c = random_context(rng, v);
        const auto t = random_sid(rng, v);
        EXPECT_NEAR(std::exp(neural.sequence_log_prob(c, t)), sequence_probability(neural, c, t), 1e-12);
    }
}

TEST(NeuralScorer, SnapshotRoundTrip) {
    const Vocabulary v({3, 2});
    const auto s = NeuralScorer::initialized(v, NeuralConfig{.embed_dim = 4, .hidden_dim = 5, .word_buckets = 7, .seed = 9});
    const auto back = NeuralScorer::from_json(v, s.to_json());
    EXPECT_EQ(back.params(), s.params());
    EXPECT_EQ(back.prob_dist(oracle_context(), std::vector<Token>{}), s.prob_dist(oracle_context(), std::vector<Token>{}));
}

TEST(ScorerSnapshot, FileRoundTripForBothKinds) {
    const auto dir = temp_dir("scorer_snapshot");
    const Vocabulary v({3, 2});
    NgramScorer ngram(v);
    ngram.observe(oracle_context(), sid({1, 1}));
    save_scorer(AnyScorer{ngram}, dir / "n.json");
    const auto n = load_scorer(dir / "n.json");
    ASSERT_TRUE(std::holds_alternative<NgramScorer>(n));
    EXPECT_EQ(std::get<NgramScorer>(n), ngram);

    const auto neural = oracle_scorer();
    save_scorer(AnyScorer{neural}, dir / "m.json");
    const auto m = load_scorer(dir / "m.json");
    ASSERT_TRUE(std::holds_alternative<NeuralScorer>(m));
    EXPECT_EQ(std::get<NeuralScorer>(m).params(), neural.params());
    EXPECT_EQ(as_scorer(m).vocabulary(), v);
}

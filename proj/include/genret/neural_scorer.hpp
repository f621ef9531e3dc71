#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "genret/error.hpp"
#include "genret/jsonl.hpp"
#include "genret/optim.hpp"
#include "genret/random.hpp"
#include "genret/scorer.hpp"
#include "genret/text.hpp"

namespace genret {

struct NeuralConfig {
    std::size_t embed_dim = 32;
    std::size_t hidden_dim = 64;
    std::size_t word_buckets = 2048;
    double learning_rate = 1e-2;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
};

/// Small feed-forward next-token model:
///   context = mean of word-bucket embeddings, history-token embeddings and
///             (when present) the instruction-token embedding
///   prefix  = sum of the prefix tokens' embeddings
///   hidden  = tanh(Wh [context; prefix; one-hot(level)] + bh)
///   probs   = softmax(Wo hidden + bo) over the whole vocabulary
/// All parameters live in one flat vector; token and word embeddings are
/// columns of embed_dim x n matrices.
class NeuralScorer : public NextTokenScorer {
public:
    using Mat = Eigen::MatrixXd;
    using Vec = Eigen::VectorXd;
    using MatMap = Eigen::Map<Eigen::MatrixXd>;
    using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;

    NeuralScorer(Vocabulary vocab, NeuralConfig config) : vocab_(std::move(vocab)), config_(config) {
        if (vocab_.levels() == 0) throw ConfigError("neural scorer needs at least one token level");
        if (config_.embed_dim == 0 || config_.hidden_dim == 0 || config_.word_buckets == 0)
            throw ConfigError("neural scorer sizes must be positive");
        const std::size_t e = config_.embed_dim, h = config_.hidden_dim, v = vocab_.size();
        std::size_t off = 0;
        auto place = [&](std::size_t n) {
            const std::size_t o = off;
            off += n;
            return o;
        };
        tok_emb_ = place(e * v);
        word_emb_ = place(e * config_.word_buckets);
        wh_ = place(h * input_dim());
        bh_ = place(h);
        wo_ = place(v * h);
        bo_ = place(v);
        params_.assign(off, 0.0);
    }

    /// Seeded uniform(-a, a) initialisation; embeddings use a = 0.1.
    static NeuralScorer initialized(Vocabulary vocab, NeuralConfig config) {
        NeuralScorer s(std::move(vocab), config);
        Rng rng = make_rng(config.seed, "neural-scorer/init");
        auto fill = [&](MatMap m, double a) {
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = (2.0 * uniform01(rng) - 1.0) * a;
        };
        fill(s.tok_emb(), 0.1);
        fill(s.word_emb(), 0.1);
        fill(s.wh(), std::sqrt(6.0 / static_cast<double>(s.wh().rows() + s.wh().cols())));
        fill(s.wo(), std::sqrt(6.0 / static_cast<double>(s.wo().rows() + s.wo().cols())));
        return s;
    }

    [[nodiscard]] const Vocabulary& vocabulary() const override { return vocab_; }
    [[nodiscard]] const NeuralConfig& config() const noexcept { return config_; }
    [[nodiscard]] std::vector<double>& params() noexcept { return params_; }
    [[nodiscard]] const std::vector<double>& params() const noexcept { return params_; }
    [[nodiscard]] std::size_t input_dim() const noexcept { return 2 * config_.embed_dim + vocab_.levels(); }

    MatMap tok_emb() { return block(tok_emb_, config_.embed_dim, vocab_.size()); }
    MatMap word_emb() { return block(word_emb_, config_.embed_dim, config_.word_buckets); }
    MatMap wh() { return block(wh_, config_.hidden_dim, input_dim()); }
    MatMap bh() { return block(bh_, config_.hidden_dim, 1); }
    MatMap wo() { return block(wo_, vocab_.size(), config_.hidden_dim); }
    MatMap bo() { return block(bo_, vocab_.size(), 1); }
    [[nodiscard]] ConstMatMap tok_emb() const { return cblock(tok_emb_, config_.embed_dim, vocab_.size()); }
    [[nodiscard]] ConstMatMap word_emb() const { return cblock(word_emb_, config_.embed_dim, config_.word_buckets); }
    [[nodiscard]] ConstMatMap wh() const { return cblock(wh_, config_.hidden_dim, input_dim()); }
    [[nodiscard]] ConstMatMap bh() const { return cblock(bh_, config_.hidden_dim, 1); }
    [[nodiscard]] ConstMatMap wo() const { return cblock(wo_, vocab_.size(), config_.hidden_dim); }
    [[nodiscard]] ConstMatMap bo() const { return cblock(bo_, vocab_.size(), 1); }

    /// Word-bucket index for a context word.
    [[nodiscard]] std::size_t word_bucket(const std::string& w) const {
        return static_cast<std::size_t>(text::fnv1a64(w) % config_.word_buckets);
    }

    /// Columns of the embedding matrices pooled for a context: (is_word, index).
    struct Pooled {
        std::vector<std::size_t> words;
        std::vector<std::uint32_t> tokens;
        Vec mean;
    };

    [[nodiscard]] Pooled pool(const ScorerContext& ctx) const {
        Pooled p;
        for (const auto& w : ctx.words) p.words.push_back(word_bucket(w));
        for (const auto& t : ctx.history) p.tokens.push_back(vocab_.id(t));
        if (ctx.instruction) p.tokens.push_back(Vocabulary::kInstruction);
        p.mean = Vec::Zero(static_cast<Eigen::Index>(config_.embed_dim));
        for (auto w : p.words) p.mean += word_emb().col(static_cast<Eigen::Index>(w));
        for (auto t : p.tokens) p.mean += tok_emb().col(t);
        const std::size_t n = p.words.size() + p.tokens.size();
        if (n) p.mean /= static_cast<double>(n);
        return p;
    }

    struct Step {
        Vec input, hidden, probs;
    };

    [[nodiscard]] Step forward(const Vec& pooled, std::span<const Token> prefix) const {
        const auto e = static_cast<Eigen::Index>(config_.embed_dim);
        Step s;
        s.input = Vec::Zero(static_cast<Eigen::Index>(input_dim()));
        s.input.head(e) = pooled;
        for (const auto& t : prefix) s.input.segment(e, e) += tok_emb().col(vocab_.id(t));
        const std::size_t level = std::min(prefix.size(), vocab_.levels() - 1);
        s.input(2 * e + static_cast<Eigen::Index>(level)) = 1.0;
        s.hidden = (wh() * s.input + bh()).array().tanh();
        Vec logits = wo() * s.hidden + bo();
        logits.array() -= logits.maxCoeff();
        s.probs = logits.array().exp();
        s.probs /= s.probs.sum();
        return s;
    }

    [[nodiscard]] std::vector<double> prob_dist(const ScorerContext& ctx, std::span<const Token> prefix) const override {
        const Step s = forward(pool(ctx).mean, prefix);
        return {s.probs.data(), s.probs.data() + s.probs.size()};
    }

    /// log P(target | ctx) summed over the id's steps; when `grad` is non-null,
    /// adds `scale` * d(log P)/d(params) into it.
    double sequence_log_prob(const ScorerContext& ctx, const SemanticId& target, std::vector<double>* grad = nullptr,
                             double scale = 1.0) const {
        const Pooled pooled = pool(ctx);
        const auto toks = target.tokens();
        const auto e = static_cast<Eigen::Index>(config_.embed_dim);
        double logp = 0.0;
        Vec g_pooled = Vec::Zero(e);
        for (std::size_t l = 0; l < toks.size(); ++l) {
            const std::span<const Token> prefix(toks.data(), l);
            const Step s = forward(pooled.mean, prefix);
            const std::uint32_t id = vocab_.id(toks[l]);
            logp += std::log(s.probs(id));
            if (!grad) continue;
            Vec g_logits = -s.probs;
            g_logits(id) += 1.0;
            g_logits *= scale;
            gblock(*grad, wo_, vocab_.size(), config_.hidden_dim).noalias() += g_logits * s.hidden.transpose();
            gblock(*grad, bo_, vocab_.size(), 1) += g_logits;
            const Vec g_pre = (wo().transpose() * g_logits).cwiseProduct((1.0 - s.hidden.array().square()).matrix());
            gblock(*grad, wh_, config_.hidden_dim, input_dim()).noalias() += g_pre * s.input.transpose();
            gblock(*grad, bh_, config_.hidden_dim, 1) += g_pre;
            const Vec g_in = wh().transpose() * g_pre;
            g_pooled += g_in.head(e);
            auto g_tok = gblock(*grad, tok_emb_, config_.embed_dim, vocab_.size());
            for (const auto& t : prefix) g_tok.col(vocab_.id(t)) += g_in.segment(e, e);
        }
        if (grad) {
            const std::size_t n = pooled.words.size() + pooled.tokens.size();
            if (n) {
                g_pooled /= static_cast<double>(n);
                auto g_word = gblock(*grad, word_emb_, config_.embed_dim, config_.word_buckets);
                auto g_tok = gblock(*grad, tok_emb_, config_.embed_dim, vocab_.size());
                for (auto w : pooled.words) g_word.col(static_cast<Eigen::Index>(w)) += g_pooled;
                for (auto t : pooled.tokens) g_tok.col(t) += g_pooled;
            }
        }
        return logp;
    }

    /// Mean cross-entropy (negative sequence log-likelihood) over examples.
    [[nodiscard]] double mean_nll(const std::vector<TrainingExample>& examples) const {
        if (examples.empty()) return 0.0;
        double s = 0.0;
        for (const auto& ex : examples) s -= sequence_log_prob(ex.context, ex.target);
        return s / static_cast<double>(examples.size());
    }

    /// Mini-batch Adam on the mean cross-entropy. Shuffling is seeded by
    /// (config.seed, stream). Returns the mean training loss of each epoch.
    std::vector<double> fit(const std::vector<TrainingExample>& examples, std::size_t epochs, const std::string& stream) {
        std::vector<double> history;
        if (examples.empty() || epochs == 0) return history;
        Adam opt(params_.size(), config_.learning_rate);
        Rng rng = make_rng(config_.seed, "neural-scorer/shuffle/" + stream);
        std::vector<std::size_t> order(examples.size());
        std::iota(order.begin(), order.end(), 0);
        std::vector<double> grad(params_.size());
        const std::size_t batch = std::max<std::size_t>(1, config_.batch_size);
        for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
            for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
            double total = 0.0;
            for (std::size_t start = 0; start < order.size(); start += batch) {
                const std::size_t stop = std::min(start + batch, order.size());
                std::fill(grad.begin(), grad.end(), 0.0);
                const double scale = 1.0 / static_cast<double>(stop - start);
                for (std::size_t i = start; i < stop; ++i) {
                    const auto& ex = examples[order[i]];
                    // descend on -log p: accumulate -grad(log p)
                    total -= sequence_log_prob(ex.context, ex.target, &grad, -scale);
                }
                opt.step(params_, grad);
            }
            total /= static_cast<double>(examples.size());
            if (!std::isfinite(total)) throw TrainingDivergedError("neural scorer training", epoch);
            history.push_back(total);
        }
        return history;
    }

    [[nodiscard]] io::json to_json() const {
        return {{"embed_dim", config_.embed_dim},     {"hidden_dim", config_.hidden_dim},
                {"word_buckets", config_.word_buckets}, {"learning_rate", config_.learning_rate},
                {"batch_size", config_.batch_size},   {"seed", config_.seed},
                {"params", params_}};
    }

    static NeuralScorer from_json(Vocabulary vocab, const io::json& j) {
        NeuralConfig c;
        c.embed_dim = j.at("embed_dim").get<std::size_t>();
        c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
        c.word_buckets = j.at("word_buckets").get<std::size_t>();
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.seed = j.value("seed", c.seed);
        NeuralScorer s(std::move(vocab), c);
        auto p = j.at("params").get<std::vector<double>>();
        if (p.size() != s.params_.size()) throw ParseError("neural scorer snapshot parameter count mismatch");
        s.params_ = std::move(p);
        return s;
    }

private:
    MatMap block(std::size_t off, std::size_t r, std::size_t c) {
        return MatMap(params_.data() + off, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    }
    [[nodiscard]] ConstMatMap cblock(std::size_t off, std::size_t r, std::size_t c) const {
        return ConstMatMap(params_.data() + off, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    }
    static MatMap gblock(std::vector<double>& g, std::size_t off, std::size_t r, std::size_t c) {
        return MatMap(g.data() + off, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    }

    Vocabulary vocab_;
    NeuralConfig config_;
    std::size_t tok_emb_ = 0, word_emb_ = 0, wh_ = 0, bh_ = 0, wo_ = 0, bo_ = 0;
    std::vector<double> params_;
};

}  // namespace genret

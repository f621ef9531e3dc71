#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "genret/error.hpp"
#include "genret/jsonl.hpp"
#include "genret/semantic_id.hpp"
#include "genret/text.hpp"

namespace genret {

/// What a scorer conditions on, recovered from a rendered prompt: the prompt's
/// words, the semantic-id tokens of its ad history, whether the task
/// instruction (the reserved learnable token) is present, and a compact
/// feature view used for count bucketing.
struct ScorerContext {
    std::vector<std::string> words;
    std::vector<Token> history;
    bool instruction = false;
    int age_band = -1;
    std::string gender;
    std::string top_category;
    int last_level1 = -1;

    /// (instruction, age band, gender, top-1 interest category, last ad's level-1 code)
    [[nodiscard]] std::string bucket() const {
        return std::string(instruction ? "i1" : "i0") + "|a" + std::to_string(age_band) + "|g" + gender + "|c" +
               top_category + "|l" + std::to_string(last_level1);
    }

    static ScorerContext from_prompt(std::string_view prompt);
};

inline constexpr std::string_view kTaskHeader = "The following is an instruction describing a task.";

namespace detail {

inline std::string read_until(std::string_view s, std::size_t from, std::string_view stops) {
    std::size_t end = s.find_first_of(stops, from);
    if (end == std::string_view::npos) end = s.size();
    return std::string(text::trim(s.substr(from, end - from)));
}

}  // namespace detail

inline ScorerContext ScorerContext::from_prompt(std::string_view prompt) {
    ScorerContext ctx;
    ctx.instruction = prompt.find(kTaskHeader) != std::string_view::npos;

    std::string rest;
    rest.reserve(prompt.size());
    std::optional<SemanticId> last;
    for (std::size_t i = 0; i < prompt.size();) {
        if (prompt[i] == '<') {
            const std::size_t close = prompt.find('>', i);
            if (close != std::string_view::npos) {
                try {
                    SemanticId sid = parse_sid(prompt.substr(i, close - i + 1));
                    for (const auto& t : sid.tokens()) ctx.history.push_back(t);
                    last = std::move(sid);
                    rest.push_back(' ');
                    i = close + 1;
                    continue;
                } catch (const ParseError&) {
                }
            }
        }
        rest.push_back(prompt[i++]);
    }
    if (last && last->size() > 0) ctx.last_level1 = static_cast<int>(last->codes[0]);

    for (auto& tok : text::tokenize(text::to_lower_ascii(rest))) {
        const bool wordish = std::any_of(tok.begin(), tok.end(), [](char c) {
            return std::isalnum(static_cast<unsigned char>(c)) || static_cast<unsigned char>(c) >= 0x80;
        });
        if (wordish) ctx.words.push_back(std::move(tok));
    }

    if (auto p = prompt.find("-year-old"); p != std::string_view::npos) {
        std::size_t b = p;
        while (b > 0 && std::isdigit(static_cast<unsigned char>(prompt[b - 1]))) --b;
        if (b < p) ctx.age_band = std::stoi(std::string(prompt.substr(b, p - b))) / 10;
        std::size_t g = p + 9;
        while (g < prompt.size() && prompt[g] == ' ') ++g;
        ctx.gender = text::to_lower_ascii(detail::read_until(prompt, g, " ,.\n"));
    }
    static constexpr std::string_view kSummary = "category^interaction times):";
    static constexpr std::string_view kFirstCat = "The first-level category is ";
    if (auto p = prompt.find(kSummary); p != std::string_view::npos) {
        ctx.top_category = detail::read_until(prompt, p + kSummary.size(), "^\n");
    } else if (auto q = prompt.find(kFirstCat); q != std::string_view::npos) {
        ctx.top_category = detail::read_until(prompt, q + kFirstCat.size(), ";\n");
    }
    return ctx;
}

/// P(next token | context, prefix) over the whole vocabulary. Implementations
/// must be deterministic; the real scorers also return non-negative values
/// summing to one. The decoder itself only requires finite, non-negative values.
class NextTokenScorer {
public:
    virtual ~NextTokenScorer() = default;
    [[nodiscard]] virtual const Vocabulary& vocabulary() const = 0;
    [[nodiscard]] virtual std::vector<double> prob_dist(const ScorerContext& context,
                                                        std::span<const Token> prefix) const = 0;
};

/// Probability of a whole id as the product of its per-step conditionals.
inline double sequence_probability(const NextTokenScorer& scorer, const ScorerContext& ctx, const SemanticId& sid) {
    const auto toks = sid.tokens();
    double p = 1.0;
    for (std::size_t l = 0; l < toks.size(); ++l) {
        const auto dist = scorer.prob_dist(ctx, std::span<const Token>(toks.data(), l));
        p *= dist[scorer.vocabulary().id(toks[l])];
    }
    return p;
}

/// A <context, target id> training pair.
struct TrainingExample {
    ScorerContext context;
    SemanticId target;
};

struct NgramConfig {
    double smoothing_alpha = 0.1;
    /// level-only, last-token, (category, last level-1 code, prefix), (full bucket, prefix)
    std::array<double, 4> weights{0.1, 0.2, 0.3, 0.4};
};

/// Interpolated additive-smoothing count model. Order o contributes
/// (count + alpha) / (total + alpha * |V|) under its own key.
class NgramScorer : public NextTokenScorer {
public:
    static constexpr std::size_t kOrders = 4;

    NgramScorer(Vocabulary vocab, NgramConfig config = {}) : vocab_(std::move(vocab)), config_(config) {
        if (!(config_.smoothing_alpha > 0.0)) throw ConfigError("smoothing_alpha must be positive");
        double s = 0.0;
        for (double w : config_.weights) {
            if (w < 0.0) throw ConfigError("interpolation weights must be non-negative");
            s += w;
        }
        if (!(s > 0.0)) throw ConfigError("interpolation weights must not all be zero");
    }

    [[nodiscard]] const Vocabulary& vocabulary() const override { return vocab_; }
    [[nodiscard]] const NgramConfig& config() const noexcept { return config_; }

    void observe(const ScorerContext& ctx, const SemanticId& target, double weight = 1.0) {
        const auto toks = target.tokens();
        for (std::size_t l = 0; l < toks.size(); ++l) {
            const auto keys = keys_for(ctx, std::span<const Token>(toks.data(), l));
            const std::uint32_t id = vocab_.id(toks[l]);
            for (std::size_t o = 0; o < kOrders; ++o) {
                auto& table = tables_[o][keys[o]];
                table.counts[id] += weight;
                table.total += weight;
            }
        }
    }

    void fit(const std::vector<TrainingExample>& examples, double weight = 1.0) {
        for (const auto& ex : examples) observe(ex.context, ex.target, weight);
    }

    [[nodiscard]] std::vector<double> prob_dist(const ScorerContext& ctx, std::span<const Token> prefix) const override {
        const double a = config_.smoothing_alpha;
        const double v = static_cast<double>(vocab_.size());
        double wsum = 0.0;
        for (double w : config_.weights) wsum += w;
        std::vector<double> out(vocab_.size(), 0.0);
        const auto keys = keys_for(ctx, prefix);
        for (std::size_t o = 0; o < kOrders; ++o) {
            const double w = config_.weights[o] / wsum;
            if (w == 0.0) continue;
            const auto it = tables_[o].find(keys[o]);
            const double total = it == tables_[o].end() ? 0.0 : it->second.total;
            const double denom = total + a * v;
            for (auto& x : out) x += w * a / denom;
            if (it != tables_[o].end())
                for (const auto& [id, c] : it->second.counts) out[id] += w * c / denom;
        }
        return out;
    }

    /// Total observed weight across all keys of one order.
    [[nodiscard]] double total_count(std::size_t order) const {
        double s = 0.0;
        for (const auto& [k, t] : tables_.at(order)) s += t.total;
        return s;
    }

    bool operator==(const NgramScorer& o) const {
        return vocab_ == o.vocab_ && tables_ == o.tables_;
    }

    [[nodiscard]] io::json to_json() const {
        io::json orders = io::json::array();
        for (const auto& table : tables_) {
            io::json entries = io::json::object();
            for (const auto& [key, t] : table) {
                io::json counts = io::json::array();
                for (const auto& [id, c] : t.counts) counts.push_back({id, c});
                entries[key] = {{"total", t.total}, {"counts", counts}};
            }
            orders.push_back(entries);
        }
        return {{"smoothing_alpha", config_.smoothing_alpha}, {"weights", config_.weights}, {"orders", orders}};
    }

    static NgramScorer from_json(Vocabulary vocab, const io::json& j) {
        NgramConfig cfg;
        cfg.smoothing_alpha = j.at("smoothing_alpha").get<double>();
        cfg.weights = j.at("weights").get<std::array<double, 4>>();
        NgramScorer s(std::move(vocab), cfg);
        const auto& orders = j.at("orders");
        if (orders.size() != kOrders) throw ParseError("n-gram snapshot must hold " + std::to_string(kOrders) + " orders");
        for (std::size_t o = 0; o < kOrders; ++o) {
            for (const auto& [key, entry] : orders[o].items()) {
                auto& t = s.tables_[o][key];
                for (const auto& pair : entry.at("counts")) {
                    const auto id = pair[0].get<std::uint32_t>();
                    if (id >= s.vocab_.size()) throw ParseError("n-gram snapshot token id out of range");
                    t.counts[id] += pair[1].get<double>();
                }
                // stored rather than re-summed so reloaded probabilities are bit-identical
                t.total = entry.at("total").get<double>();
            }
        }
        return s;
    }

private:
    struct Table {
        std::map<std::uint32_t, double> counts;
        double total = 0.0;
        bool operator==(const Table&) const = default;
    };

    [[nodiscard]] std::array<std::string, kOrders> keys_for(const ScorerContext& ctx, std::span<const Token> prefix) const {
        std::string pre;
        for (const auto& t : prefix) pre += std::to_string(vocab_.id(t)) + ",";
        const std::string level = "L" + std::to_string(prefix.size());
        const std::string last = prefix.empty() ? "-" : std::to_string(vocab_.id(prefix.back()));
        return {level,
                level + "|" + last,
                level + "|c" + ctx.top_category + "|l" + std::to_string(ctx.last_level1) + "|" + pre,
                level + "|" + ctx.bucket() + "|" + pre};
    }

    Vocabulary vocab_;
    NgramConfig config_;
    std::array<std::map<std::string, Table>, kOrders> tables_;
};

}  // namespace genret

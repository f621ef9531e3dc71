#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "genret/error.hpp"
#include "genret/jsonl.hpp"
#include "genret/neural_scorer.hpp"
#include "genret/semantic_id.hpp"

namespace genret {

/// <user, high-value ad, low-value ad>
struct PreferenceTriplet {
    std::string user_id;
    std::string prompt;
    ScorerContext context;
    SemanticId high;
    SemanticId low;
};

struct PreferenceCandidate {
    SemanticId sid;
    double ecpm = 0.0;
};

/// One triplet per unordered candidate pair with strictly different ECPM,
/// pairs enumerated as (i, j), i < j, in candidate order.
inline std::vector<PreferenceTriplet> build_preference_triplets(const std::string& user_id, const std::string& prompt,
                                                                const std::vector<PreferenceCandidate>& candidates) {
    std::vector<PreferenceTriplet> out;
    const ScorerContext ctx = ScorerContext::from_prompt(prompt);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        for (std::size_t j = i + 1; j < candidates.size(); ++j) {
            const auto& a = candidates[i];
            const auto& b = candidates[j];
            if (a.ecpm == b.ecpm) continue;
            const bool a_high = a.ecpm > b.ecpm;
            out.push_back({user_id, prompt, ctx, a_high ? a.sid : b.sid, a_high ? b.sid : a.sid});
        }
    }
    return out;
}

enum class DpoVariant {
    paper_ratio,  ///< beta * (pi/pi_ref)(high) - beta * (pi/pi_ref)(low), ratios taken on probabilities
    log_ratio,    ///< beta * (log-ratio(high) - log-ratio(low)), standard DPO
};

inline DpoVariant parse_dpo_variant(const std::string& s) {
    if (s == "paper-ratio") return DpoVariant::paper_ratio;
    if (s == "log-ratio") return DpoVariant::log_ratio;
    throw ConfigError("unknown dpo variant '" + s + "' (expected paper-ratio or log-ratio)");
}

/// Argument of the sigmoid, computed from sequence log-probabilities.
inline double dpo_argument(DpoVariant v, double beta, double policy_high, double ref_high, double policy_low,
                           double ref_low) {
    if (v == DpoVariant::log_ratio) return beta * ((policy_high - ref_high) - (policy_low - ref_low));
    return beta * (std::exp(policy_high - ref_high) - std::exp(policy_low - ref_low));
}

/// -log(sigmoid(x)), stable for large |x|.
inline double neg_log_sigmoid(double x) { return x > 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

struct DpoLoss {
    double loss = 0.0;
    double argument = 0.0;
    double margin = 0.0;  ///< log pi(high) - log pi(low) under the policy
};

/// Loss of one triplet. When `grad` is non-null, adds `scale` * d(loss)/d(policy params).
inline DpoLoss dpo_loss(const NeuralScorer& policy, const NeuralScorer& reference, const PreferenceTriplet& t,
                        double beta, DpoVariant variant, std::vector<double>* grad = nullptr, double scale = 1.0) {
    if (!(policy.vocabulary() == reference.vocabulary())) throw ConfigError("policy and reference vocabularies differ");
    const double ref_h = reference.sequence_log_prob(t.context, t.high);
    const double ref_l = reference.sequence_log_prob(t.context, t.low);
    if (!std::isfinite(ref_h) || !std::isfinite(ref_l)) throw Error("degenerate reference: zero sequence probability");
    const double pol_h = policy.sequence_log_prob(t.context, t.high);
    const double pol_l = policy.sequence_log_prob(t.context, t.low);

    DpoLoss out;
    out.argument = dpo_argument(variant, beta, pol_h, ref_h, pol_l, ref_l);
    out.loss = neg_log_sigmoid(out.argument);
    out.margin = pol_h - pol_l;
    if (grad) {
        // d loss / d argument = -sigmoid(-argument)
        const double d_arg = -sigmoid(-out.argument) * scale;
        double w_h = beta, w_l = beta;
        if (variant == DpoVariant::paper_ratio) {
            w_h *= std::exp(pol_h - ref_h);
            w_l *= std::exp(pol_l - ref_l);
        }
        policy.sequence_log_prob(t.context, t.high, grad, d_arg * w_h);
        policy.sequence_log_prob(t.context, t.low, grad, -d_arg * w_l);
    }
    return out;
}

struct DpoReport {
    std::vector<double> loss;    ///< mean loss before each step
    double margin_before = 0.0;  ///< mean policy margin over the batch
    double margin_after = 0.0;
};

inline double mean_margin(const NeuralScorer& policy, const std::vector<PreferenceTriplet>& triplets) {
    if (triplets.empty()) return 0.0;
    double s = 0.0;
    for (const auto& t : triplets)
        s += policy.sequence_log_prob(t.context, t.high) - policy.sequence_log_prob(t.context, t.low);
    return s / static_cast<double>(triplets.size());
}

/// Plain gradient descent on the mean DPO loss; the reference stays frozen.
inline DpoReport dpo_update(NeuralScorer& policy, const NeuralScorer& reference,
                            const std::vector<PreferenceTriplet>& triplets, double beta, DpoVariant variant,
                            double learning_rate, std::size_t steps) {
    DpoReport rep;
    if (triplets.empty()) return rep;
    rep.margin_before = mean_margin(policy, triplets);
    std::vector<double> grad(policy.params().size());
    const double scale = 1.0 / static_cast<double>(triplets.size());
    for (std::size_t step = 0; step < steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double total = 0.0;
        for (const auto& t : triplets) total += dpo_loss(policy, reference, t, beta, variant, &grad, scale).loss;
        total *= scale;
        if (!std::isfinite(total)) throw TrainingDivergedError("dpo", step);
        rep.loss.push_back(total);
        auto& p = policy.params();
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= learning_rate * grad[i];
    }
    rep.margin_after = mean_margin(policy, triplets);
    return rep;
}

inline void save_triplets(const std::vector<PreferenceTriplet>& triplets, const std::filesystem::path& path) {
    std::vector<io::json> recs;
    for (const auto& t : triplets)
        recs.push_back({{"user_id", t.user_id},
                        {"prompt", t.prompt},
                        {"high", render_tokens(t.high)},
                        {"low", render_tokens(t.low)}});
    io::write_jsonl(path, recs);
}

inline std::vector<PreferenceTriplet> load_triplets(const std::filesystem::path& path) {
    std::vector<PreferenceTriplet> out;
    auto sid_of = [](const io::json& arr) {
        std::vector<Token> toks;
        for (const auto& t : arr) toks.push_back(parse_token(t.get<std::string>()));
        return sid_from_tokens(toks);
    };
    io::for_each_jsonl(path, [&](const io::json& rec, std::size_t) {
        PreferenceTriplet t;
        t.user_id = rec.at("user_id").get<std::string>();
        t.prompt = rec.at("prompt").get<std::string>();
        t.context = ScorerContext::from_prompt(t.prompt);
        t.high = sid_of(rec.at("high"));
        t.low = sid_of(rec.at("low"));
        out.push_back(std::move(t));
    });
    return out;
}

}  // namespace genret

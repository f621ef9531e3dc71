#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "genret/error.hpp"
#include "genret/scorer.hpp"
#include "genret/semantic_id.hpp"
#include "genret/trie.hpp"

namespace genret {

struct BeamCandidate {
    std::vector<Token> tokens;
    double score = 1.0;      ///< product of per-step probabilities
    double log_score = 0.0;  ///< sum of per-step log-probabilities, used for ranking
};

struct RetrievalEntry {
    std::string ad_id;
    SemanticId sid;
    double score = 0.0;
};

struct RetrievalList {
    std::vector<RetrievalEntry> entries;
    std::size_t beam_width = 0;

    [[nodiscard]] std::vector<std::string> ad_ids() const {
        std::vector<std::string> out;
        for (const auto& e : entries) out.push_back(e.ad_id);
        return out;
    }
};

struct DecodeOptions {
    std::size_t beam_width = 8;
    /// Rescale the valid children's probabilities to sum to one at every step.
    bool renormalize = false;
};

namespace detail {

/// Higher log-score first; exact ties by lexicographic token order.
inline bool beam_before(const BeamCandidate& a, const BeamCandidate& b) {
    if (a.log_score != b.log_score) return a.log_score > b.log_score;
    return a.tokens < b.tokens;
}

/// Expands one candidate over its trie-valid children.
inline void expand(const NextTokenScorer& scorer, const ScorerContext& ctx, const Trie& trie,
                   const BeamCandidate& cand, bool renormalize, std::vector<BeamCandidate>& out) {
    const auto children = trie.valid_children(cand.tokens);
    if (children.empty()) return;
    const auto dist = scorer.prob_dist(ctx, cand.tokens);
    const auto& vocab = scorer.vocabulary();
    std::vector<double> probs;
    probs.reserve(children.size());
    double mass = 0.0;
    for (const auto& tok : children) {
        const std::uint32_t id = vocab.id(tok);
        const double p = id < dist.size() ? dist[id] : 0.0;
        if (!std::isfinite(p) || p < 0.0)
            throw ScorerContractError("scorer returned invalid probability " + std::to_string(p) + " for " +
                                      render_token(tok));
        probs.push_back(p);
        mass += p;
    }
    for (std::size_t i = 0; i < children.size(); ++i) {
        double p = probs[i];
        if (renormalize) p = mass > 0.0 ? p / mass : 1.0 / static_cast<double>(children.size());
        BeamCandidate next{cand.tokens, cand.score * p, cand.log_score + std::log(p)};
        next.tokens.push_back(children[i]);
        out.push_back(std::move(next));
    }
}

inline RetrievalList resolve(const Trie& trie, const std::vector<BeamCandidate>& finals, std::size_t beam_width) {
    RetrievalList list;
    list.beam_width = beam_width;
    for (const auto& c : finals) {
        SemanticId sid = sid_from_tokens(c.tokens);
        auto ad = trie.lookup_ad(sid);
        if (!ad) throw Error("decoded path " + render_sid(sid) + " has no ad marker");
        list.entries.push_back({*ad, std::move(sid), c.score});
    }
    return list;
}

}  // namespace detail

/// Trie-constrained beam search. Layer by layer, every surviving candidate is
/// expanded over exactly its valid children, scored by the running product of
/// scorer probabilities, and the top `beam_width` are kept.
inline RetrievalList decode(const NextTokenScorer& scorer, const ScorerContext& ctx, const Trie& trie,
                            const DecodeOptions& options) {
    if (options.beam_width == 0) throw ConfigError("beam width must be at least 1");
    if (trie.empty()) throw EmptyInventoryError();
    std::vector<BeamCandidate> beam{BeamCandidate{}};
    for (std::size_t layer = 0; layer < trie.depth(); ++layer) {
        std::vector<BeamCandidate> next;
        for (const auto& cand : beam) detail::expand(scorer, ctx, trie, cand, options.renormalize, next);
        const std::size_t keep = std::min(options.beam_width, next.size());
        std::partial_sort(next.begin(), next.begin() + static_cast<std::ptrdiff_t>(keep), next.end(),
                          detail::beam_before);
        next.resize(keep);
        beam = std::move(next);
    }
    return detail::resolve(trie, beam, options.beam_width);
}

/// Scores every complete path in the trie; the full ranking, no pruning.
inline RetrievalList decode_exhaustive(const NextTokenScorer& scorer, const ScorerContext& ctx, const Trie& trie,
                                       bool renormalize = false) {
    if (trie.empty()) throw EmptyInventoryError();
    std::vector<BeamCandidate> frontier{BeamCandidate{}};
    for (std::size_t layer = 0; layer < trie.depth(); ++layer) {
        std::vector<BeamCandidate> next;
        for (const auto& cand : frontier) detail::expand(scorer, ctx, trie, cand, renormalize, next);
        frontier = std::move(next);
    }
    std::sort(frontier.begin(), frontier.end(), detail::beam_before);
    return detail::resolve(trie, frontier, frontier.size());
}

}  // namespace genret

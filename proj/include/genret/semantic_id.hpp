#pragma once

#include <compare>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "genret/error.hpp"
#include "genret/text.hpp"

namespace genret {

/// One level-tagged code. Level 0 renders with prefix "a_", level 1 with "b_", ...
struct Token {
    std::uint32_t level = 0;
    std::uint32_t code = 0;

    auto operator<=>(const Token&) const = default;
};

inline std::string level_prefix(std::uint32_t level) {
    if (level >= 26) throw Error("semantic id levels beyond 'z' are not representable");
    return std::string(1, static_cast<char>('a' + level)) + "_";
}

inline std::string render_token(Token t) { return level_prefix(t.level) + std::to_string(t.code); }

/// Parses "b_28" into {1, 28}.
inline Token parse_token(std::string_view s) {
    s = text::trim(s);
    if (s.size() < 3 || s[1] != '_' || s[0] < 'a' || s[0] > 'z') throw ParseError("bad token '" + std::string(s) + "'");
    Token t{static_cast<std::uint32_t>(s[0] - 'a'), 0};
    std::uint64_t v = 0;
    for (char c : s.substr(2)) {
        if (c < '0' || c > '9') throw ParseError("bad token '" + std::string(s) + "'");
        v = v * 10 + static_cast<std::uint64_t>(c - '0');
        if (v > UINT32_MAX) throw ParseError("token code overflow in '" + std::string(s) + "'");
    }
    t.code = static_cast<std::uint32_t>(v);
    return t;
}

/// Ordered codes identifying one ad: M quantization levels followed by the
/// disambiguation code.
struct SemanticId {
    std::vector<std::uint32_t> codes;

    [[nodiscard]] std::size_t size() const noexcept { return codes.size(); }
    [[nodiscard]] Token token(std::size_t level) const {
        return {static_cast<std::uint32_t>(level), codes.at(level)};
    }
    [[nodiscard]] std::vector<Token> tokens() const {
        std::vector<Token> out;
        out.reserve(codes.size());
        for (std::size_t l = 0; l < codes.size(); ++l) out.push_back(token(l));
        return out;
    }

    auto operator<=>(const SemanticId&) const = default;
};

inline SemanticId sid_from_tokens(const std::vector<Token>& tokens) {
    SemanticId sid;
    for (std::size_t l = 0; l < tokens.size(); ++l) {
        if (tokens[l].level != l) throw ParseError("token " + render_token(tokens[l]) + " out of level order");
        sid.codes.push_back(tokens[l].code);
    }
    return sid;
}

inline std::vector<std::string> render_tokens(const SemanticId& sid) {
    std::vector<std::string> out;
    for (const auto& t : sid.tokens()) out.push_back(render_token(t));
    return out;
}

/// "<a_122, b_28, c_35, d_15, e_0>"
inline std::string render_sid(const SemanticId& sid) {
    return "<" + text::join(render_tokens(sid), ", ") + ">";
}

inline SemanticId parse_sid(std::string_view s) {
    s = text::trim(s);
    if (s.size() < 2 || s.front() != '<' || s.back() != '>') throw ParseError("semantic id must be wrapped in <...>");
    std::vector<Token> tokens;
    for (const auto& part : text::split(s.substr(1, s.size() - 2), ',')) tokens.push_back(parse_token(part));
    return sid_from_tokens(tokens);
}

/// Dense token ids. Ids 0..2 are reserved (instruction marker, separator,
/// unknown); level blocks follow in level order.
class Vocabulary {
public:
    static constexpr std::uint32_t kInstruction = 0;
    static constexpr std::uint32_t kSeparator = 1;
    static constexpr std::uint32_t kUnknown = 2;
    static constexpr std::uint32_t kReserved = 3;

    Vocabulary() = default;

    explicit Vocabulary(std::vector<std::uint32_t> level_sizes) : level_sizes_(std::move(level_sizes)) {
        offsets_.resize(level_sizes_.size());
        std::uint32_t off = kReserved;
        for (std::size_t l = 0; l < level_sizes_.size(); ++l) {
            offsets_[l] = off;
            off += level_sizes_[l];
        }
        size_ = off;
    }

    /// Smallest vocabulary covering every code of every given id.
    template <typename Range>
    static Vocabulary covering(const Range& sids) {
        std::vector<std::uint32_t> sizes;
        for (const auto& sid : sids) {
            const SemanticId& s = sid;
            if (sizes.size() < s.size()) sizes.resize(s.size(), 0);
            for (std::size_t l = 0; l < s.size(); ++l) sizes[l] = std::max(sizes[l], s.codes[l] + 1);
        }
        return Vocabulary(std::move(sizes));
    }

    [[nodiscard]] std::size_t size() const noexcept { return size_; }
    [[nodiscard]] std::size_t levels() const noexcept { return level_sizes_.size(); }
    [[nodiscard]] const std::vector<std::uint32_t>& level_sizes() const noexcept { return level_sizes_; }

    [[nodiscard]] std::uint32_t id(Token t) const noexcept {
        if (t.level >= level_sizes_.size() || t.code >= level_sizes_[t.level]) return kUnknown;
        return offsets_[t.level] + t.code;
    }

    [[nodiscard]] bool is_sid_token(std::uint32_t id) const noexcept { return id >= kReserved && id < size_; }

    [[nodiscard]] Token token(std::uint32_t id) const {
        if (!is_sid_token(id)) throw Error("id " + std::to_string(id) + " is not a semantic-id token");
        std::size_t l = level_sizes_.size() - 1;
        while (offsets_[l] > id || level_sizes_[l] == 0) --l;
        return {static_cast<std::uint32_t>(l), id - offsets_[l]};
    }

    bool operator==(const Vocabulary& o) const { return level_sizes_ == o.level_sizes_; }

private:
    std::vector<std::uint32_t> level_sizes_;
    std::vector<std::uint32_t> offsets_;
    std::uint32_t size_ = kReserved;
};

}  // namespace genret

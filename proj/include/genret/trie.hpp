#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "genret/error.hpp"
#include "genret/jsonl.hpp"
#include "genret/semantic_id.hpp"

namespace genret {

/// Prefix tree over semantic ids. Nodes live in one pool; children are kept
/// sorted by code, so enumeration order is ascending code index.
class Trie {
public:
    struct Node {
        std::vector<std::pair<Token, std::uint32_t>> children;
        std::optional<std::string> end_of_ad;
    };

    Trie() : nodes_(1) {}

    /// Inserts every id, in ascending ad_id order. All ids must share one
    /// length. Re-inserting an identical sequence leaves the trie unchanged;
    /// the first ad to claim a sequence keeps its end marker.
    static Trie build(const std::map<std::string, SemanticId>& sids) {
        Trie t;
        for (const auto& [id, sid] : sids) t.insert(id, sid);
        return t;
    }

    void insert(const std::string& ad_id, const SemanticId& sid) {
        if (sid.size() == 0) throw Error("cannot insert an empty semantic id");
        if (depth_ == 0) depth_ = sid.size();
        if (sid.size() != depth_)
            throw Error("ragged semantic ids: '" + ad_id + "' has length " + std::to_string(sid.size()) +
                        ", trie depth is " + std::to_string(depth_));
        std::uint32_t cur = 0;
        for (std::size_t l = 0; l < sid.size(); ++l) {
            const Token tok = sid.token(l);
            auto& kids = nodes_[cur].children;
            auto it = std::lower_bound(kids.begin(), kids.end(), tok,
                                       [](const auto& child, const Token& t) { return child.first < t; });
            if (it == kids.end() || it->first != tok) {
                const auto fresh = static_cast<std::uint32_t>(nodes_.size());
                kids.insert(it, {tok, fresh});  // may reallocate kids; don't touch `it` afterwards
                nodes_.emplace_back();
                cur = fresh;
            } else {
                cur = it->second;
            }
        }
        if (!nodes_[cur].end_of_ad) {
            nodes_[cur].end_of_ad = ad_id;
            ++ad_count_;
        }
    }

    [[nodiscard]] std::size_t depth() const noexcept { return depth_; }
    [[nodiscard]] std::size_t ad_count() const noexcept { return ad_count_; }
    [[nodiscard]] std::size_t node_count() const noexcept { return nodes_.size(); }
    [[nodiscard]] bool empty() const noexcept { return ad_count_ == 0; }
    [[nodiscard]] const Node& root() const noexcept { return nodes_[0]; }
    [[nodiscard]] const Node& node(std::uint32_t i) const { return nodes_.at(i); }

    /// Node reached by walking `prefix` from the root.
    [[nodiscard]] std::optional<std::uint32_t> find(std::span<const Token> prefix) const {
        std::uint32_t cur = 0;
        for (const Token& tok : prefix) {
            const auto& kids = nodes_[cur].children;
            auto it = std::lower_bound(kids.begin(), kids.end(), tok,
                                       [](const auto& child, const Token& t) { return child.first < t; });
            if (it == kids.end() || it->first != tok) return std::nullopt;
            cur = it->second;
        }
        return cur;
    }

    /// Tokens that may follow `prefix`; empty when the prefix is absent or complete.
    [[nodiscard]] std::vector<Token> valid_children(std::span<const Token> prefix) const {
        std::vector<Token> out;
        if (auto n = find(prefix))
            for (const auto& [tok, idx] : nodes_[*n].children) out.push_back(tok);
        return out;
    }

    [[nodiscard]] std::optional<std::string> lookup_ad(const SemanticId& sid) const {
        const auto toks = sid.tokens();
        if (auto n = find(toks)) return nodes_[*n].end_of_ad;
        return std::nullopt;
    }

    [[nodiscard]] bool contains(const SemanticId& sid) const { return lookup_ad(sid).has_value(); }

    /// Every (ad_id, sid) path that ends at a marker, in ascending token order.
    [[nodiscard]] std::vector<std::pair<std::string, SemanticId>> paths() const {
        std::vector<std::pair<std::string, SemanticId>> out;
        std::vector<std::uint32_t> codes;
        walk(0, codes, out);
        return out;
    }

    /// Preorder listing, one node per line: "<token> <child-count>[ <ad_id>]".
    /// The root is written as "^".
    void write(std::ostream& out) const {
        out << "genret-trie 1 " << depth_ << ' ' << ad_count_ << '\n';
        write_node(out, 0, "^");
    }

    static Trie read(std::istream& in) {
        std::vector<std::string> lines;
        for (std::string line; std::getline(in, line);)
            if (!text::trim(line).empty()) lines.push_back(std::move(line));
        if (lines.empty()) throw ParseError("empty trie snapshot");
        std::istringstream hs(lines[0]);
        std::string magic;
        int version = 0;
        Trie t;
        if (!(hs >> magic >> version >> t.depth_ >> t.ad_count_) || magic != "genret-trie" || version != 1)
            throw ParseError("not a trie snapshot", 1);
        std::size_t next = 1;
        read_node(lines, next, t, 0, true);
        if (next != lines.size()) throw ParseError("trailing lines in trie snapshot", next + 1);
        std::size_t markers = 0;
        for (const auto& nd : t.nodes_) markers += nd.end_of_ad.has_value();
        if (markers != t.ad_count_) throw ParseError("trie snapshot marker count mismatch");
        return t;
    }

    void save(const std::filesystem::path& path) const {
        auto out = io::open_out(path);
        write(out);
    }

    static Trie load(const std::filesystem::path& path) {
        auto in = io::open_in(path);
        return read(in);
    }

    bool operator==(const Trie& o) const { return paths() == o.paths() && depth_ == o.depth_; }

private:
    void walk(std::uint32_t n, std::vector<std::uint32_t>& codes,
              std::vector<std::pair<std::string, SemanticId>>& out) const {
        if (nodes_[n].end_of_ad) out.emplace_back(*nodes_[n].end_of_ad, SemanticId{codes});
        for (const auto& [tok, child] : nodes_[n].children) {
            codes.push_back(tok.code);
            walk(child, codes, out);
            codes.pop_back();
        }
    }

    void write_node(std::ostream& out, std::uint32_t n, const std::string& label) const {
        out << label << ' ' << nodes_[n].children.size();
        if (nodes_[n].end_of_ad) out << ' ' << *nodes_[n].end_of_ad;
        out << '\n';
        for (const auto& [tok, child] : nodes_[n].children) write_node(out, child, render_token(tok));
    }

    static void read_node(const std::vector<std::string>& lines, std::size_t& next, Trie& t, std::uint32_t n,
                          bool is_root) {
        if (next >= lines.size()) throw ParseError("truncated trie snapshot", next + 1);
        std::istringstream ss(lines[next]);
        const std::size_t lineno = ++next;
        std::string label, ad;
        std::size_t kids = 0;
        if (!(ss >> label >> kids)) throw ParseError("bad trie node line", lineno);
        if (ss >> ad) t.nodes_[n].end_of_ad = ad;
        if (is_root != (label == "^")) throw ParseError("misplaced root marker", lineno);
        for (std::size_t i = 0; i < kids; ++i) {
            if (next >= lines.size()) throw ParseError("truncated trie snapshot", next + 1);
            std::istringstream cs(lines[next]);
            std::string tok_label;
            cs >> tok_label;
            const Token tok = parse_token(tok_label);
            const auto fresh = static_cast<std::uint32_t>(t.nodes_.size());
            t.nodes_[n].children.emplace_back(tok, fresh);
            t.nodes_.emplace_back();
            read_node(lines, next, t, fresh, false);
        }
    }

    std::vector<Node> nodes_;
    std::size_t depth_ = 0;
    std::size_t ad_count_ = 0;
};

}  // namespace genret

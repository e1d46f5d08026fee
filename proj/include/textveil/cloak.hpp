#pragma once

// HTML-level invisibility. A small lenient parser over the supported subset
// (well-formed elements, inline style attributes, text nodes, comments; no
// script execution, no external CSS) with byte-identical re-serialization of
// untouched input. On top of it: the two extractor models,
//   visible_text  - what a reader sees: hidden elements, delimited insert
//                   runs, and catalog codepoints are gone;
//   crawler_text  - what a naive scraper keeps: hidden DOM text and catalog
//                   codepoints retained;
// the aggressive stripper strip_guard, and protect_html which plans and
// applies a guard per eligible text node.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "textveil/optimize.hpp"
#include "textveil/perturb.hpp"

namespace textveil {

struct HtmlNode {
    enum class Kind { Document, Element, Text, Comment, Raw, Misc };
    Kind kind = Kind::Document;
    std::string tag;       // elements only, lowercased
    std::string raw_open;  // verbatim open tag bytes
    std::string raw_close; // verbatim close tag bytes, empty if implicit
    std::string text;      // Text/Comment/Raw/Misc verbatim bytes
    std::vector<int> children;
};

namespace htmldetail {

inline bool is_void_element(std::string_view tag) {
    static const std::set<std::string, std::less<>> kVoid{
        "area", "base", "br", "col", "embed", "hr", "img", "input",
        "link", "meta", "param", "source", "track", "wbr"};
    return kVoid.count(tag) > 0;
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = (char)std::tolower((unsigned char)c);
    return out;
}

inline std::string decode_entities(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    size_t i = 0;
    while (i < s.size()) {
        if (s[i] != '&') {
            out.push_back(s[i++]);
            continue;
        }
        size_t semi = s.find(';', i + 1);
        if (semi == std::string_view::npos || semi - i > 32) {
            out.push_back(s[i++]);
            continue;
        }
        std::string_view body = s.substr(i + 1, semi - i - 1);
        bool handled = true;
        if (!body.empty() && body[0] == '#') {
            char32_t cp = 0;
            bool ok = body.size() > 1;
            if (body.size() > 2 && (body[1] == 'x' || body[1] == 'X')) {
                for (size_t k = 2; k < body.size() && ok; ++k) {
                    char c = body[k];
                    if (c >= '0' && c <= '9') cp = cp * 16 + (char32_t)(c - '0');
                    else if (c >= 'a' && c <= 'f') cp = cp * 16 + (char32_t)(c - 'a' + 10);
                    else if (c >= 'A' && c <= 'F') cp = cp * 16 + (char32_t)(c - 'A' + 10);
                    else ok = false;
                }
            } else {
                for (size_t k = 1; k < body.size() && ok; ++k) {
                    char c = body[k];
                    if (c >= '0' && c <= '9') cp = cp * 10 + (char32_t)(c - '0');
                    else ok = false;
                }
            }
            if (ok && cp > 0 && cp <= 0x10FFFF) append_utf8(out, cp);
            else handled = false;
        } else if (body == "amp") out.push_back('&');
        else if (body == "lt") out.push_back('<');
        else if (body == "gt") out.push_back('>');
        else if (body == "quot") out.push_back('"');
        else if (body == "apos") out.push_back('\'');
        else if (body == "nbsp") append_utf8(out, U' ');
        else handled = false;
        if (handled) {
            i = semi + 1;
        } else {
            out.push_back(s[i++]);
        }
    }
    return out;
}

// Value of an attribute inside a verbatim open tag, or nullopt.
inline std::optional<std::string> attr_value(std::string_view raw_open, std::string_view name) {
    // skip "<tagname"
    size_t i = 1;
    while (i < raw_open.size() && !std::isspace((unsigned char)raw_open[i]) &&
           raw_open[i] != '>' && raw_open[i] != '/')
        ++i;
    while (i < raw_open.size()) {
        while (i < raw_open.size() && (std::isspace((unsigned char)raw_open[i]) ||
                                       raw_open[i] == '/'))
            ++i;
        if (i >= raw_open.size() || raw_open[i] == '>') break;
        size_t ns = i;
        while (i < raw_open.size() && !std::isspace((unsigned char)raw_open[i]) &&
               raw_open[i] != '=' && raw_open[i] != '>' && raw_open[i] != '/')
            ++i;
        std::string aname = to_lower(raw_open.substr(ns, i - ns));
        while (i < raw_open.size() && std::isspace((unsigned char)raw_open[i])) ++i;
        std::string value;
        if (i < raw_open.size() && raw_open[i] == '=') {
            ++i;
            while (i < raw_open.size() && std::isspace((unsigned char)raw_open[i])) ++i;
            if (i < raw_open.size() && (raw_open[i] == '"' || raw_open[i] == '\'')) {
                char q = raw_open[i++];
                size_t vs = i;
                while (i < raw_open.size() && raw_open[i] != q) ++i;
                value = std::string(raw_open.substr(vs, i - vs));
                if (i < raw_open.size()) ++i;
            } else {
                size_t vs = i;
                while (i < raw_open.size() && !std::isspace((unsigned char)raw_open[i]) &&
                       raw_open[i] != '>')
                    ++i;
                value = std::string(raw_open.substr(vs, i - vs));
            }
        }
        if (aname == to_lower(name)) return value;
    }
    return std::nullopt;
}

inline std::string trim(std::string_view s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace((unsigned char)s[a])) ++a;
    while (b > a && std::isspace((unsigned char)s[b - 1])) --b;
    return std::string(s.substr(a, b - a));
}

// Inline-style hiding rules: display:none, font-size 0, or absolute
// positioning moved far off-screen.
inline bool style_hides(std::string_view style) {
    bool absolute = false, offscreen = false;
    size_t i = 0;
    while (i <= style.size()) {
        size_t j = style.find(';', i);
        if (j == std::string_view::npos) j = style.size();
        std::string_view decl = style.substr(i, j - i);
        size_t c = decl.find(':');
        if (c != std::string_view::npos) {
            std::string prop = to_lower(trim(decl.substr(0, c)));
            std::string value = to_lower(trim(decl.substr(c + 1)));
            if (prop == "display" && value == "none") return true;
            if (prop == "font-size") {
                char* end = nullptr;
                double v = std::strtod(value.c_str(), &end);
                if (end != value.c_str() && v == 0.0) return true;
            }
            if (prop == "position" && value == "absolute") absolute = true;
            if (prop == "left" || prop == "top") {
                char* end = nullptr;
                double v = std::strtod(value.c_str(), &end);
                if (end != value.c_str() && v <= -999.0) offscreen = true;
            }
        }
        i = j + 1;
    }
    return absolute && offscreen;
}

} // namespace htmldetail

struct HtmlDoc {
    std::vector<HtmlNode> nodes; // nodes[0] is the document root

    static HtmlDoc parse(std::string_view html) {
        HtmlDoc doc;
        doc.nodes.push_back(HtmlNode{}); // root
        std::vector<int> stack{0};
        auto add_node = [&](HtmlNode&& n) {
            int idx = (int)doc.nodes.size();
            doc.nodes.push_back(std::move(n));
            doc.nodes[(size_t)stack.back()].children.push_back(idx);
            return idx;
        };

        size_t i = 0;
        std::string pending_text;
        auto flush_text = [&]() {
            if (pending_text.empty()) return;
            HtmlNode t;
            t.kind = HtmlNode::Kind::Text;
            t.text = std::move(pending_text);
            pending_text.clear();
            add_node(std::move(t));
        };

        while (i < html.size()) {
            if (html[i] != '<') {
                pending_text.push_back(html[i++]);
                continue;
            }
            if (html.compare(i, 4, "<!--") == 0) {
                size_t end = html.find("-->", i + 4);
                if (end == std::string_view::npos)
                    throw HtmlParseError("unterminated comment", i);
                flush_text();
                HtmlNode c;
                c.kind = HtmlNode::Kind::Comment;
                c.text = std::string(html.substr(i, end + 3 - i));
                add_node(std::move(c));
                i = end + 3;
                continue;
            }
            if (i + 1 < html.size() && (html[i + 1] == '!' || html[i + 1] == '?')) {
                size_t end = html.find('>', i);
                if (end == std::string_view::npos)
                    throw HtmlParseError("unterminated declaration", i);
                flush_text();
                HtmlNode mnode;
                mnode.kind = HtmlNode::Kind::Misc;
                mnode.text = std::string(html.substr(i, end + 1 - i));
                add_node(std::move(mnode));
                i = end + 1;
                continue;
            }
            bool closing = i + 1 < html.size() && html[i + 1] == '/';
            size_t name_start = i + (closing ? 2 : 1);
            if (name_start >= html.size() || !std::isalpha((unsigned char)html[name_start])) {
                pending_text.push_back(html[i++]); // stray '<'
                continue;
            }
            // scan to '>' honoring quoted attribute values
            size_t j = name_start;
            char quote = 0;
            while (j < html.size()) {
                char c = html[j];
                if (quote) {
                    if (c == quote) quote = 0;
                } else if (c == '"' || c == '\'') {
                    quote = c;
                } else if (c == '>') {
                    break;
                }
                ++j;
            }
            if (j >= html.size()) throw HtmlParseError("unterminated tag", i);
            std::string raw(html.substr(i, j + 1 - i));
            size_t ne = name_start;
            while (ne < html.size() &&
                   (std::isalnum((unsigned char)html[ne]) || html[ne] == '-' || html[ne] == ':'))
                ++ne;
            std::string tag = htmldetail::to_lower(html.substr(name_start, ne - name_start));
            flush_text();

            if (closing) {
                int match = -1;
                for (size_t s = stack.size(); s-- > 1;) {
                    if (doc.nodes[(size_t)stack[s]].tag == tag) {
                        match = (int)s;
                        break;
                    }
                }
                if (match < 0) {
                    HtmlNode stray;
                    stray.kind = HtmlNode::Kind::Misc;
                    stray.text = raw;
                    add_node(std::move(stray));
                } else {
                    doc.nodes[(size_t)stack[(size_t)match]].raw_close = raw;
                    stack.resize((size_t)match);
                }
                i = j + 1;
                continue;
            }

            bool self_close = raw.size() >= 2 && raw[raw.size() - 2] == '/';
            HtmlNode e;
            e.kind = HtmlNode::Kind::Element;
            e.tag = tag;
            e.raw_open = raw;
            int idx = add_node(std::move(e));
            i = j + 1;
            if (self_close || htmldetail::is_void_element(tag)) continue;

            if (tag == "script" || tag == "style") {
                std::string probe = "</" + tag;
                size_t end = i, n = html.size();
                bool found = false;
                for (; end + probe.size() <= n; ++end) {
                    bool eq = true;
                    for (size_t k = 0; k < probe.size() && eq; ++k)
                        eq = std::tolower((unsigned char)html[end + k]) ==
                             (unsigned char)probe[k];
                    if (eq) {
                        found = true;
                        break;
                    }
                }
                if (!found) throw HtmlParseError("unterminated " + tag + " element", i);
                if (end > i) {
                    HtmlNode rawnode;
                    rawnode.kind = HtmlNode::Kind::Raw;
                    rawnode.text = std::string(html.substr(i, end - i));
                    int ridx = (int)doc.nodes.size();
                    doc.nodes.push_back(std::move(rawnode));
                    doc.nodes[(size_t)idx].children.push_back(ridx);
                }
                size_t close_end = html.find('>', end);
                if (close_end == std::string_view::npos)
                    throw HtmlParseError("unterminated closing tag", end);
                doc.nodes[(size_t)idx].raw_close =
                    std::string(html.substr(end, close_end + 1 - end));
                i = close_end + 1;
                continue;
            }
            stack.push_back(idx);
        }
        flush_text();
        return doc;
    }

    void serialize_node(int idx, std::string& out) const {
        const HtmlNode& n = nodes[(size_t)idx];
        switch (n.kind) {
            case HtmlNode::Kind::Document:
                for (int c : n.children) serialize_node(c, out);
                break;
            case HtmlNode::Kind::Element:
                out += n.raw_open;
                for (int c : n.children) serialize_node(c, out);
                out += n.raw_close;
                break;
            default: out += n.text; break;
        }
    }

    std::string serialize() const {
        std::string out;
        serialize_node(0, out);
        return out;
    }

    // Addresses of text nodes in document order. Indices are stable: nodes
    // are never erased, only re-parented.
    std::vector<int> text_nodes() const {
        std::vector<int> out;
        collect_text(0, out);
        return out;
    }

private:
    void collect_text(int idx, std::vector<int>& out) const {
        const HtmlNode& n = nodes[(size_t)idx];
        if (n.kind == HtmlNode::Kind::Text) {
            out.push_back(idx);
            return;
        }
        for (int c : n.children) collect_text(c, out);
    }
};

namespace htmldetail {

inline bool element_hidden(const HtmlNode& n) {
    auto style = attr_value(n.raw_open, "style");
    return style && style_hides(*style);
}

inline void extract_text(const HtmlDoc& doc, int idx, bool include_hidden, std::string& out) {
    const HtmlNode& n = doc.nodes[(size_t)idx];
    switch (n.kind) {
        case HtmlNode::Kind::Document:
            for (int c : n.children) extract_text(doc, c, include_hidden, out);
            break;
        case HtmlNode::Kind::Element:
            if (n.tag == "script" || n.tag == "style") return;
            if (!include_hidden && element_hidden(n)) return;
            for (int c : n.children) extract_text(doc, c, include_hidden, out);
            break;
        case HtmlNode::Kind::Text: out += decode_entities(n.text); break;
        default: break; // comments, raw blocks, declarations carry no text
    }
}

} // namespace htmldetail

// Reader model: hidden elements skipped, delimited insert runs and catalog
// codepoints removed.
inline std::string visible_text(const HtmlDoc& doc,
                                const InvisibleCatalog& catalog = default_catalog()) {
    std::string raw;
    htmldetail::extract_text(doc, 0, /*include_hidden=*/false, raw);
    return u32_to_utf8(remove_guard_marks(utf8_to_u32(raw), catalog));
}

inline std::string visible_text(std::string_view html,
                                const InvisibleCatalog& catalog = default_catalog()) {
    return visible_text(HtmlDoc::parse(html), catalog);
}

// Scraper model: hidden DOM text included, catalog codepoints retained.
inline std::string crawler_text(const HtmlDoc& doc) {
    std::string raw;
    htmldetail::extract_text(doc, 0, /*include_hidden=*/true, raw);
    return raw;
}

inline std::string crawler_text(std::string_view html) {
    return crawler_text(HtmlDoc::parse(html));
}

// Aggressive stripper: removes every guard artifact while preserving the
// original content. For markup input this is the visible-text hiding rule;
// for plain text, delimited-run and catalog removal. Never throws on
// malformed markup; such input is treated as plain text.
inline std::string strip_guard(const std::string& input,
                               const InvisibleCatalog& catalog = default_catalog()) {
    if (input.find('<') != std::string::npos) {
        try {
            HtmlDoc doc = HtmlDoc::parse(input);
            bool has_markup = false;
            for (const auto& n : doc.nodes)
                if (n.kind == HtmlNode::Kind::Element || n.kind == HtmlNode::Kind::Comment ||
                    n.kind == HtmlNode::Kind::Misc) {
                    has_markup = true;
                    break;
                }
            if (has_markup) return visible_text(doc, catalog);
        } catch (const HtmlParseError&) {
            // fall through to plain-text stripping
        }
    }
    return u32_to_utf8(remove_guard_marks(utf8_to_u32(input), catalog));
}

// Chars-mode injection into plain text. Split characters must come from the
// catalog (validated by apply_plan).
inline std::string inject_chars(const std::string& text, const TokenSeq& seq,
                                const PerturbationPlan& plan, const Vocabulary& vocab,
                                const InvisibleCatalog& catalog = default_catalog()) {
    return apply_plan(text, seq, plan, InvisibleMode::Chars, vocab, catalog).guarded_plain_text;
}

// Rewrites one text node: insert edits become hidden spans, split edits fall
// back to in-text catalog characters. The original node is re-parented away;
// all other addresses stay valid.
inline void inject_style(HtmlDoc& doc, int addr, const TokenSeq& seq,
                         const PerturbationPlan& plan, InvisibleMode mode,
                         const Vocabulary& vocab,
                         const InvisibleCatalog& catalog = default_catalog()) {
    if (addr < 0 || (size_t)addr >= doc.nodes.size() ||
        doc.nodes[(size_t)addr].kind != HtmlNode::Kind::Text)
        throw InvalidInputError("inject_style: address " + std::to_string(addr) +
                                " is not a text node");
    if (mode == InvisibleMode::Chars)
        throw InvalidInputError("inject_style: expects a style mode");
    if (plan.empty()) return;
    detail::validate_plan(plan, seq, vocab, catalog);

    std::u32string text32 = utf8_to_u32(doc.nodes[(size_t)addr].text);
    std::vector<detail::Segment> segs = detail::plan_segments(text32, seq, plan, vocab);

    std::vector<int> replacement;
    std::string pending; // verbatim original bytes plus inline split chars
    auto flush_pending = [&]() {
        if (pending.empty()) return;
        HtmlNode t;
        t.kind = HtmlNode::Kind::Text;
        t.text = std::move(pending);
        pending.clear();
        doc.nodes.push_back(std::move(t));
        replacement.push_back((int)doc.nodes.size() - 1);
    };
    for (const auto& seg : segs) {
        if (seg.inserted && seg.hidden_run) {
            flush_pending();
            HtmlNode span;
            span.kind = HtmlNode::Kind::Element;
            span.tag = "span";
            span.raw_open = detail::span_open(mode);
            span.raw_close = "</span>";
            doc.nodes.push_back(std::move(span));
            int span_idx = (int)doc.nodes.size() - 1;
            HtmlNode t;
            t.kind = HtmlNode::Kind::Text;
            t.text = detail::html_escape(u32_to_utf8(seg.content));
            doc.nodes.push_back(std::move(t));
            doc.nodes[(size_t)span_idx].children.push_back((int)doc.nodes.size() - 1);
            replacement.push_back(span_idx);
        } else if (seg.inserted) {
            pending += u32_to_utf8(seg.content); // catalog codepoint, no escaping needed
        } else {
            pending += u32_to_utf8(seg.content);
        }
    }
    flush_pending();

    for (auto& n : doc.nodes) {
        auto it = std::find(n.children.begin(), n.children.end(), addr);
        if (it != n.children.end()) {
            it = n.children.erase(it);
            n.children.insert(it, replacement.begin(), replacement.end());
            break;
        }
    }
}

struct NodeGuard {
    int addr = -1;
    PerturbationPlan plan;
    BudgetReport budget;
};

struct ProtectedHtml {
    HtmlDoc doc;
    std::vector<NodeGuard> nodes;
};

// Protects every eligible text node (>= cfg.min_tokens tokens) of a parsed
// document. Per-node RNG streams derive from cfg.seed, the document id and
// the node address, so a document protects identically in isolation or in a
// batch.
inline ProtectedHtml protect_html(const HtmlDoc& input, const GuardConfig& cfg,
                                  const Vocabulary& vocab, const NGramModel* proxy,
                                  const std::string& doc_id = "",
                                  const InvisibleCatalog& catalog = default_catalog()) {
    cfg.validate();
    ProtectedHtml out;
    out.doc = input;
    for (int addr : out.doc.text_nodes()) {
        const std::string& text = out.doc.nodes[(size_t)addr].text;
        TokenSeq seq;
        try {
            seq = encode(vocab, text);
        } catch (const UnknownCharError& e) {
            throw UnknownCharError("node " + std::to_string(addr) + ": " + e.what(), e.codepoint,
                                   e.offset);
        }
        if ((int)seq.size() < cfg.min_tokens) continue;

        GuardConfig node_cfg = cfg;
        node_cfg.seed = derive_stream(cfg.seed, doc_id + "#" + std::to_string(addr));
        PerturbationPlan plan = plan_for(node_cfg, seq, vocab, proxy, catalog);

        NodeGuard guard;
        guard.addr = addr;
        guard.plan = plan;
        std::vector<int32_t> view = plan_token_view(vocab, seq, plan, text);
        guard.budget = verify_constraints(vocab, seq.ids, view, cfg.b, &plan, catalog);

        if (!plan.empty()) {
            if (cfg.invisible_mode == InvisibleMode::Chars) {
                // verbatim original chunks, escaped inserted fills
                std::u32string text32 = utf8_to_u32(text);
                std::vector<detail::Segment> segs =
                    detail::plan_segments(text32, seq, plan, vocab);
                std::string replaced;
                for (const auto& seg : segs) {
                    std::string bytes = u32_to_utf8(seg.content);
                    replaced += seg.hidden_run ? detail::html_escape(bytes) : bytes;
                }
                out.doc.nodes[(size_t)addr].text = std::move(replaced);
            } else {
                inject_style(out.doc, addr, seq, plan, cfg.invisible_mode, vocab, catalog);
            }
        }
        out.nodes.push_back(std::move(guard));
    }
    return out;
}

} // namespace textveil

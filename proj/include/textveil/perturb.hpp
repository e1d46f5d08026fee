#pragma once

// Perturbation planning and application. A plan is an ordered list of edits:
// InsertTokens places hidden filler tokens at a gap between tokens,
// SplitToken drives an invisible character into a token's interior. Budget
// is counted in insertion events: tokens for insert strategies, characters
// for split strategies, m = floor(b * t).
//
// Rendering rules keep stripping unambiguous: inserted runs are wrapped in
// U+200B delimiter pairs, split characters are drawn from the catalog minus
// the delimiter, and filler tokens never include catalog characters. A
// stripper that removes delimited runs and leftover catalog codepoints
// recovers the original text exactly.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "textveil/catalog.hpp"
#include "textveil/error.hpp"
#include "textveil/rng.hpp"
#include "textveil/scorer.hpp"
#include "textveil/tokenizer.hpp"
#include "textveil/triggers.hpp"

namespace textveil {

enum class Strategy { NP, UDP, UNP, TP, TP_P, TP_OP, TP_OOV, TP_OOV_PP };
enum class InvisibleMode { Chars, StyleDisplayNone, StyleOffscreen, StyleFontZero };

inline std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::NP: return "np";
        case Strategy::UDP: return "udp";
        case Strategy::UNP: return "unp";
        case Strategy::TP: return "tp";
        case Strategy::TP_P: return "tp-p";
        case Strategy::TP_OP: return "tp-op";
        case Strategy::TP_OOV: return "tp-oov";
        case Strategy::TP_OOV_PP: return "tp-oov++";
    }
    return "np";
}

inline Strategy parse_strategy(std::string_view s) {
    if (s == "np") return Strategy::NP;
    if (s == "udp") return Strategy::UDP;
    if (s == "unp") return Strategy::UNP;
    if (s == "tp") return Strategy::TP;
    if (s == "tp-p") return Strategy::TP_P;
    if (s == "tp-op") return Strategy::TP_OP;
    if (s == "tp-oov") return Strategy::TP_OOV;
    if (s == "tp-oov++") return Strategy::TP_OOV_PP;
    throw ConfigError("unknown strategy '" + std::string(s) + "'");
}

inline std::string invisible_mode_name(InvisibleMode m) {
    switch (m) {
        case InvisibleMode::Chars: return "chars";
        case InvisibleMode::StyleDisplayNone: return "style-display-none";
        case InvisibleMode::StyleOffscreen: return "style-offscreen";
        case InvisibleMode::StyleFontZero: return "style-fontzero";
    }
    return "chars";
}

inline InvisibleMode parse_invisible_mode(std::string_view s) {
    if (s == "chars") return InvisibleMode::Chars;
    if (s == "style-display-none") return InvisibleMode::StyleDisplayNone;
    if (s == "style-offscreen") return InvisibleMode::StyleOffscreen;
    if (s == "style-fontzero") return InvisibleMode::StyleFontZero;
    throw ConfigError("unknown invisible mode '" + std::string(s) + "'");
}

struct GuardConfig {
    Strategy strategy = Strategy::TP_OOV;
    double b = 0.4;
    uint64_t seed = 0;
    InvisibleMode invisible_mode = InvisibleMode::Chars;
    int beta1 = -1;
    int beta2 = -1;
    int tau = 50;
    int batch_B = 32;
    int cand_k = 16;
    int min_tokens = 8; // protect_html eligibility threshold

    void validate() const {
        if (!(b > 0.0 && b <= 1.0)) throw ConfigError("guard: budget b must be in (0,1]");
        if (beta1 < -1 || beta1 > 1 || beta2 < -1 || beta2 > 1)
            throw ConfigError("guard: beta coefficients must be in {-1,0,1}");
        if (strategy == Strategy::TP_OP || strategy == Strategy::TP_OOV_PP) {
            if (tau < 1 || batch_B < 1 || cand_k < 1)
                throw ConfigError("guard: tau, batch_B, cand_k must be >= 1 for optimized strategies");
        }
        if (min_tokens < 1) throw ConfigError("guard: min_tokens must be >= 1");
    }
};

struct InsertEdit {
    int32_t pos = 0; // gap index in [0, t]
    std::vector<int32_t> token_ids;
};

struct SplitEdit {
    int32_t token_index = 0;
    int32_t char_offset = 0; // strictly interior: 0 < offset < token length
    char32_t invisible_char = kGuardDelimiter;
};

struct PerturbationPlan {
    std::vector<std::variant<InsertEdit, SplitEdit>> edits;
    int budget_spent = 0;
    Strategy strategy = Strategy::NP;
    std::vector<std::string> warnings; // in-memory diagnostics, not serialized

    bool empty() const { return edits.empty(); }

    nlohmann::json to_json() const {
        nlohmann::json ej = nlohmann::json::array();
        for (const auto& e : edits) {
            if (const auto* ins = std::get_if<InsertEdit>(&e)) {
                ej.push_back({{"kind", "insert"}, {"pos", ins->pos}, {"ids", ins->token_ids}});
            } else {
                const auto& sp = std::get<SplitEdit>(e);
                ej.push_back({{"kind", "split"},
                              {"tok", sp.token_index},
                              {"off", sp.char_offset},
                              {"char", format_codepoint(sp.invisible_char)}});
            }
        }
        return {{"edits", ej}, {"spent", budget_spent}};
    }

    static PerturbationPlan from_json(const nlohmann::json& j) {
        PerturbationPlan p;
        for (const auto& e : j.at("edits")) {
            std::string kind = e.at("kind").get<std::string>();
            if (kind == "insert") {
                InsertEdit ins;
                ins.pos = e.at("pos").get<int32_t>();
                ins.token_ids = e.at("ids").get<std::vector<int32_t>>();
                p.edits.emplace_back(std::move(ins));
            } else if (kind == "split") {
                SplitEdit sp;
                sp.token_index = e.at("tok").get<int32_t>();
                sp.char_offset = e.at("off").get<int32_t>();
                sp.invisible_char = parse_codepoint(e.at("char").get<std::string>());
                p.edits.emplace_back(sp);
            } else {
                throw InvalidInputError("plan: unknown edit kind '" + kind + "'");
            }
        }
        p.budget_spent = j.at("spent").get<int>();
        return p;
    }
};

struct GuardedText {
    std::string original_text;
    std::string guarded_plain_text; // what a crawler trains on
    std::string guarded_html;       // style modes only
    PerturbationPlan plan;
    Strategy strategy = Strategy::NP;
    // Codepoint ranges of inserted content in guarded_plain_text.
    std::vector<std::pair<int32_t, int32_t>> inserted_ranges;
};

struct BudgetReport {
    int edit_distance_tokens = 0;
    double ratio = 0.0;
    int insertion_events = 0;
    bool multiset_ok = true;
};

inline int budget(double b, int t) {
    if (!(b > 0.0 && b <= 1.0)) throw InvalidInputError("budget: b must be in (0,1]");
    if (t < 0) throw InvalidInputError("budget: t must be >= 0");
    return (int)((double)t * b + 1e-9);
}

namespace detail {

// Vocabulary ids usable as filler tokens: everything except the catalog
// single-character tokens, which must stay reserved for delimiters/splits.
inline std::vector<int32_t> fill_token_pool(const Vocabulary& vocab,
                                            const InvisibleCatalog& cat = default_catalog()) {
    std::vector<int32_t> pool;
    pool.reserve(vocab.size());
    for (int32_t i = 0; i < (int32_t)vocab.size(); ++i)
        if (!vocab.is_catalog_token(i, cat)) pool.push_back(i);
    if (pool.empty()) throw InvalidInputError("vocabulary has no usable filler tokens");
    return pool;
}

// floor(m/K) fills per slot, first (m mod K) slots get one extra.
inline std::vector<int> slot_fill_counts(int m, int k) {
    std::vector<int> counts((size_t)k, m / k);
    for (int i = 0; i < m % k; ++i) ++counts[(size_t)i];
    return counts;
}

inline PerturbationPlan uniform_insert_plan(Strategy strategy, const std::vector<int32_t>& gaps,
                                            int m, const Vocabulary& vocab, SplitMix64& rng) {
    PerturbationPlan plan;
    plan.strategy = strategy;
    std::vector<int32_t> pool = fill_token_pool(vocab);
    std::vector<int> counts = slot_fill_counts(m, (int)gaps.size());
    for (size_t s = 0; s < gaps.size(); ++s) {
        InsertEdit e;
        e.pos = gaps[s];
        for (int i = 0; i < counts[s]; ++i) e.token_ids.push_back(pool[rng.index(pool.size())]);
        plan.edits.emplace_back(std::move(e));
    }
    plan.budget_spent = m;
    return plan;
}

} // namespace detail

inline PerturbationPlan plan_udp(const GuardConfig& cfg, const TokenSeq& seq,
                                 const Vocabulary& vocab) {
    const int t = (int)seq.size();
    const int m = budget(cfg.b, t);
    PerturbationPlan plan;
    plan.strategy = Strategy::UDP;
    if (m < 1) {
        plan.warnings.push_back("budget yields no insertions (m=0); plan is a no-op");
        return plan;
    }
    if (t < 2) {
        plan.warnings.push_back("sequence too short to perturb (t<2); plan is a no-op");
        return plan;
    }
    const int k = std::min(m, t - 1);
    std::vector<int32_t> gaps;
    for (int j = 0; j < k; ++j) gaps.push_back((int32_t)(((int64_t)(j + 1) * t) / (k + 1)));
    SplitMix64 rng(cfg.seed);
    return detail::uniform_insert_plan(Strategy::UDP, gaps, m, vocab, rng);
}

inline PerturbationPlan plan_unp(const GuardConfig& cfg, const TokenSeq& seq,
                                 const Vocabulary& vocab) {
    const int t = (int)seq.size();
    const int m = budget(cfg.b, t);
    PerturbationPlan plan;
    plan.strategy = Strategy::UNP;
    if (m < 1) {
        plan.warnings.push_back("budget yields no insertions (m=0); plan is a no-op");
        return plan;
    }
    if (t < 2) {
        plan.warnings.push_back("sequence too short to perturb (t<2); plan is a no-op");
        return plan;
    }
    const int k = std::min(m, t - 1);
    SplitMix64 rng(cfg.seed);
    std::vector<size_t> picks = rng.sample_without_replacement((size_t)(t - 1), (size_t)k);
    std::vector<int32_t> gaps;
    for (size_t p : picks) gaps.push_back((int32_t)(p + 1)); // interior gaps {1..t-1}
    std::sort(gaps.begin(), gaps.end());
    return detail::uniform_insert_plan(Strategy::UNP, gaps, m, vocab, rng);
}

inline PerturbationPlan plan_tp(const GuardConfig& cfg, const TokenSeq& seq,
                                const Vocabulary& vocab, const ScoreVector& proxy_scores) {
    const int t = (int)seq.size();
    if (t > 0 && proxy_scores.size() != seq.size())
        throw InvalidInputError("plan_tp: proxy scores not aligned with sequence");
    const int m = budget(cfg.b, t);
    PerturbationPlan plan;
    plan.strategy = Strategy::TP;
    if (m < 1) {
        plan.warnings.push_back("budget yields no insertions (m=0); plan is a no-op");
        return plan;
    }
    const int k = std::min(m, t);
    TriggerSet triggers = identify_triggers(proxy_scores, k);
    std::vector<int32_t> gaps = triggers.indices; // slot immediately before each trigger
    SplitMix64 rng(cfg.seed);
    return detail::uniform_insert_plan(Strategy::TP, gaps, m, vocab, rng);
}

inline PerturbationPlan plan_tp_p(const GuardConfig& cfg, const TokenSeq& seq,
                                  const Vocabulary& vocab, const NGramModel& proxy) {
    const int t = (int)seq.size();
    const int m = budget(cfg.b, t);
    PerturbationPlan plan;
    plan.strategy = Strategy::TP_P;
    if (m < 1) {
        plan.warnings.push_back("budget yields no insertions (m=0); plan is a no-op");
        return plan;
    }
    ScoreVector scores = score_sequence(proxy, seq);
    const int k = std::min(m, t);
    TriggerSet triggers = identify_triggers(scores, k);
    std::vector<int32_t> order = severity_order(triggers);

    std::map<int32_t, std::vector<int32_t>> fills;
    auto prefix_for = [&](int32_t gap) {
        std::vector<int32_t> prefix;
        for (int32_t j = 0; j <= gap; ++j) {
            auto it = fills.find(j);
            if (it != fills.end())
                prefix.insert(prefix.end(), it->second.begin(), it->second.end());
            if (j < gap) prefix.push_back(seq.ids[(size_t)j]);
        }
        return prefix;
    };
    auto is_catalog = [&](int32_t v) { return vocab.is_catalog_token(v); };

    int remaining = m;
    while (remaining > 0) {
        for (int32_t gap : order) {
            if (remaining == 0) break;
            std::vector<int32_t> prefix = prefix_for(gap);
            int32_t tok = argmin_next_token_if(proxy, prefix, is_catalog);
            fills[gap].push_back(tok);
            --remaining;
        }
    }
    for (const auto& [gap, ids] : fills) {
        InsertEdit e;
        e.pos = gap;
        e.token_ids = ids;
        plan.edits.emplace_back(std::move(e));
    }
    plan.budget_spent = m;
    return plan;
}

inline PerturbationPlan plan_tp_oov(const GuardConfig& cfg, const TokenSeq& seq,
                                    const Vocabulary& vocab, const ScoreVector& proxy_scores,
                                    const InvisibleCatalog& catalog = default_catalog()) {
    (void)vocab;
    const int t = (int)seq.size();
    if (t > 0 && proxy_scores.size() != seq.size())
        throw InvalidInputError("plan_tp_oov: proxy scores not aligned with sequence");
    const int m = budget(cfg.b, t);
    PerturbationPlan plan;
    plan.strategy = Strategy::TP_OOV;
    if (m < 1) {
        plan.warnings.push_back("budget yields no insertions (m=0); plan is a no-op");
        return plan;
    }
    const int k = std::min(m, t);
    TriggerSet triggers = identify_triggers(proxy_scores, k);
    std::vector<int32_t> order = severity_order(triggers);

    std::vector<char32_t> split_chars = catalog.split_chars();
    if (split_chars.empty()) throw InvalidInputError("plan_tp_oov: catalog has no split characters");

    // Unused interior offsets per eligible trigger (token length >= 2).
    std::map<int32_t, std::vector<int32_t>> unused;
    for (int32_t idx : order) {
        int32_t len = seq.spans[(size_t)idx].second - seq.spans[(size_t)idx].first;
        if (len >= 2) {
            auto& v = unused[idx];
            for (int32_t o = 1; o < len; ++o) v.push_back(o);
        }
    }
    if (unused.empty()) {
        plan.warnings.push_back("no eligible trigger (all trigger tokens single-character)");
        return plan;
    }

    SplitMix64 rng(cfg.seed);
    int remaining = m;
    bool progressed = true;
    while (remaining > 0 && progressed) {
        progressed = false;
        for (int32_t idx : order) {
            if (remaining == 0) break;
            auto it = unused.find(idx);
            if (it == unused.end() || it->second.empty()) continue;
            size_t pick = rng.index(it->second.size());
            int32_t off = it->second[pick];
            it->second.erase(it->second.begin() + (long)pick);
            char32_t c = split_chars[rng.index(split_chars.size())];
            plan.edits.emplace_back(SplitEdit{idx, off, c});
            --remaining;
            progressed = true;
        }
    }
    plan.budget_spent = m - remaining;
    if (remaining > 0)
        plan.warnings.push_back("unspent budget: " + std::to_string(remaining) +
                                " insertion events had no interior offsets left");
    return plan;
}

namespace detail {

inline void validate_plan(const PerturbationPlan& plan, const TokenSeq& seq,
                          const Vocabulary& vocab, const InvisibleCatalog& catalog) {
    const int32_t t = (int32_t)seq.size();
    std::vector<std::pair<int32_t, int32_t>> seen_splits;
    for (const auto& e : plan.edits) {
        if (const auto* ins = std::get_if<InsertEdit>(&e)) {
            if (ins->pos < 0 || ins->pos > t)
                throw InvalidInputError("plan: insert position " + std::to_string(ins->pos) +
                                        " outside [0," + std::to_string(t) + "]");
            for (int32_t id : ins->token_ids)
                if (!vocab.valid_id(id))
                    throw InvalidIdError("plan: insert token id " + std::to_string(id) +
                                         " out of range");
        } else {
            const auto& sp = std::get<SplitEdit>(e);
            if (sp.token_index < 0 || sp.token_index >= t)
                throw InvalidInputError("plan: split token index out of range");
            int32_t len = seq.spans[(size_t)sp.token_index].second -
                          seq.spans[(size_t)sp.token_index].first;
            if (sp.char_offset <= 0 || sp.char_offset >= len)
                throw InvalidInputError("plan: split offset " + std::to_string(sp.char_offset) +
                                        " not interior to token of length " + std::to_string(len));
            if (!catalog.contains(sp.invisible_char))
                throw InvalidInputError("plan: split character " +
                                        format_codepoint(sp.invisible_char) +
                                        " is not in the invisible catalog");
            auto key = std::make_pair(sp.token_index, sp.char_offset);
            if (std::find(seen_splits.begin(), seen_splits.end(), key) != seen_splits.end())
                throw InvalidInputError("plan: duplicate split at token " +
                                        std::to_string(sp.token_index) + " offset " +
                                        std::to_string(sp.char_offset));
            seen_splits.push_back(key);
        }
    }
}

inline std::string html_escape(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else out.push_back(c);
    }
    return out;
}

inline const char* span_open(InvisibleMode mode) {
    switch (mode) {
        case InvisibleMode::StyleDisplayNone:
            return "<span style=\"display: none;\" aria-hidden=\"true\">";
        case InvisibleMode::StyleOffscreen:
            return "<span style=\"position: absolute; left: -9999px; font-size: 0;\" "
                   "aria-hidden=\"true\">";
        case InvisibleMode::StyleFontZero:
            return "<span style=\"font-size: 0;\" aria-hidden=\"true\">";
        default: return "";
    }
}

} // namespace detail

namespace detail {

// Guarded text as an ordered list of segments: original chunks stay
// verbatim, inserted content is either a delimiter-wrapped hidden run
// (insert edits) or a lone catalog codepoint (split edits).
struct Segment {
    bool inserted = false;
    bool hidden_run = false; // insert runs; rendered as hidden spans in style modes
    std::u32string content;
};

inline std::vector<Segment> plan_segments(const std::u32string& text32, const TokenSeq& seq,
                                          const PerturbationPlan& plan, const Vocabulary& vocab) {
    std::map<int32_t, std::vector<const InsertEdit*>> inserts;
    std::map<int32_t, std::vector<SplitEdit>> splits;
    for (const auto& e : plan.edits) {
        if (const auto* ins = std::get_if<InsertEdit>(&e)) {
            inserts[ins->pos].push_back(ins);
        } else {
            splits[std::get<SplitEdit>(e).token_index].push_back(std::get<SplitEdit>(e));
        }
    }
    for (auto& [tok, v] : splits)
        std::sort(v.begin(), v.end(),
                  [](const SplitEdit& a, const SplitEdit& b) { return a.char_offset < b.char_offset; });

    std::vector<Segment> segs;
    auto visible = [&](std::u32string chunk) {
        if (chunk.empty()) return;
        if (!segs.empty() && !segs.back().inserted) segs.back().content += chunk;
        else segs.push_back({false, false, std::move(chunk)});
    };

    const int32_t t = (int32_t)seq.size();
    for (int32_t g = 0; g <= t; ++g) {
        auto it = inserts.find(g);
        if (it != inserts.end()) {
            for (const InsertEdit* ins : it->second) {
                std::u32string run;
                run.push_back(kGuardDelimiter);
                run += utf8_to_u32(decode_ids(vocab, ins->token_ids));
                run.push_back(kGuardDelimiter);
                segs.push_back({true, true, std::move(run)});
            }
        }
        if (g == t) break;
        auto [s, e] = seq.spans[(size_t)g];
        auto st = splits.find(g);
        if (st == splits.end()) {
            visible(text32.substr((size_t)s, (size_t)(e - s)));
        } else {
            size_t next_split = 0;
            for (int32_t off = 0; off < e - s; ++off) {
                while (next_split < st->second.size() &&
                       st->second[next_split].char_offset == off) {
                    segs.push_back(
                        {true, false, std::u32string(1, st->second[next_split].invisible_char)});
                    ++next_split;
                }
                visible(std::u32string(1, text32[(size_t)(s + off)]));
            }
        }
    }
    return segs;
}

} // namespace detail

inline GuardedText apply_plan(const std::string& text, const TokenSeq& seq,
                              const PerturbationPlan& plan, InvisibleMode mode,
                              const Vocabulary& vocab,
                              const InvisibleCatalog& catalog = default_catalog()) {
    detail::validate_plan(plan, seq, vocab, catalog);
    std::u32string text32 = utf8_to_u32(text);
    std::vector<detail::Segment> segs = detail::plan_segments(text32, seq, plan, vocab);

    const bool style = mode != InvisibleMode::Chars;
    GuardedText out;
    out.original_text = text;
    out.plan = plan;
    out.strategy = plan.strategy;

    std::u32string plain;
    std::string html;
    for (const auto& seg : segs) {
        if (seg.inserted) {
            out.inserted_ranges.push_back(
                {(int32_t)plain.size(), (int32_t)(plain.size() + seg.content.size())});
            plain += seg.content;
            if (style) {
                if (seg.hidden_run) html += detail::span_open(mode);
                html += detail::html_escape(u32_to_utf8(seg.content));
                if (seg.hidden_run) html += "</span>";
            }
        } else {
            plain += seg.content;
            if (style) html += detail::html_escape(u32_to_utf8(seg.content));
        }
    }
    out.guarded_plain_text = u32_to_utf8(plain);
    if (style) out.guarded_html = html;
    return out;
}

// Token-level view of a plan: fill ids spliced in at their gaps, split
// tokens re-encoded locally. This is the sequence the edit-distance budget
// is reported against; the crawled tokenization may differ at fragment
// boundaries.
inline std::vector<int32_t> plan_token_view(const Vocabulary& vocab, const TokenSeq& seq,
                                            const PerturbationPlan& plan,
                                            const std::string& text) {
    std::u32string text32 = utf8_to_u32(text);
    std::map<int32_t, std::vector<const InsertEdit*>> inserts;
    std::map<int32_t, std::vector<SplitEdit>> splits;
    for (const auto& e : plan.edits) {
        if (const auto* ins = std::get_if<InsertEdit>(&e)) inserts[ins->pos].push_back(ins);
        else splits[std::get<SplitEdit>(e).token_index].push_back(std::get<SplitEdit>(e));
    }
    std::vector<int32_t> out;
    const int32_t t = (int32_t)seq.size();
    for (int32_t g = 0; g <= t; ++g) {
        auto it = inserts.find(g);
        if (it != inserts.end())
            for (const InsertEdit* ins : it->second)
                out.insert(out.end(), ins->token_ids.begin(), ins->token_ids.end());
        if (g == t) break;
        auto st = splits.find(g);
        if (st == splits.end()) {
            out.push_back(seq.ids[(size_t)g]);
        } else {
            std::sort(st->second.begin(), st->second.end(),
                      [](const SplitEdit& a, const SplitEdit& b) {
                          return a.char_offset < b.char_offset;
                      });
            auto [s, e] = seq.spans[(size_t)g];
            std::u32string frag;
            size_t next_split = 0;
            for (int32_t off = 0; off < e - s; ++off) {
                while (next_split < st->second.size() &&
                       st->second[next_split].char_offset == off) {
                    frag.push_back(st->second[next_split].invisible_char);
                    ++next_split;
                }
                frag.push_back(text32[(size_t)(s + off)]);
            }
            TokenSeq enc = encode(vocab, u32_to_utf8(frag));
            out.insert(out.end(), enc.ids.begin(), enc.ids.end());
        }
    }
    return out;
}

// Budget report: token edit distance ratio plus the character multiset
// check. Reporting only, never blocks.
inline BudgetReport verify_constraints(const Vocabulary& vocab,
                                       const std::vector<int32_t>& original_ids,
                                       const std::vector<int32_t>& guarded_ids, double b,
                                       const PerturbationPlan* plan = nullptr,
                                       const InvisibleCatalog& catalog = default_catalog()) {
    (void)b;
    BudgetReport r;
    r.edit_distance_tokens = token_edit_distance(original_ids, guarded_ids);
    r.ratio = original_ids.empty() ? 0.0
                                   : (double)r.edit_distance_tokens / (double)original_ids.size();
    r.insertion_events = plan ? plan->budget_spent
                              : std::max(0, (int)guarded_ids.size() - (int)original_ids.size());
    std::u32string orig = remove_catalog_chars(utf8_to_u32(decode_ids(vocab, original_ids)), catalog);
    std::u32string guard = remove_catalog_chars(utf8_to_u32(decode_ids(vocab, guarded_ids)), catalog);
    std::map<char32_t, long> have;
    for (char32_t c : guard) ++have[c];
    r.multiset_ok = true;
    for (char32_t c : orig) {
        if (--have[c] < 0) {
            r.multiset_ok = false;
            break;
        }
    }
    return r;
}

} // namespace textveil

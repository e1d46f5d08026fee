#pragma once

// Pitfall objective and the greedy coordinate search used by tp-op and
// tp-oov++. The n-gram scorer has no embedding gradients, so candidate
// proposal is a loss-query shortlist (half lowest-probability under the
// local context, half uniform random); the batch-then-adopt structure of
// the search is kept, with elitism: a batch winner is adopted only if it
// improves the incumbent, which makes the objective trace non-increasing.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "textveil/perturb.hpp"

namespace textveil {

// beta1 * mean_{i in I} NLL(x[i] | x[<i]) + beta2 * mean_{i in I, i+1 < n} NLL(x[i+1] | x[<i+1])
inline double pitfall_objective(const NGramModel& model, std::span<const int32_t> seq,
                                std::span<const int32_t> positions, int beta1, int beta2) {
    if (positions.empty()) throw InvalidInputError("pitfall_objective: empty position set");
    double term1 = 0.0, term2 = 0.0;
    size_t n2 = 0;
    for (int32_t i : positions) {
        if (i < 0 || (size_t)i >= seq.size())
            throw InvalidInputError("pitfall_objective: position out of range");
        term1 += -token_logprob(model, seq, (size_t)i);
        if ((size_t)(i + 1) < seq.size()) {
            term2 += -token_logprob(model, seq, (size_t)(i + 1));
            ++n2;
        }
    }
    term1 /= (double)positions.size();
    if (n2 > 0) term2 /= (double)n2;
    return (double)beta1 * term1 + (double)beta2 * term2;
}

// Candidate fill tokens at one position, ranked by the local change of the
// beta-weighted objective terms touching that position. skip(v) removes v
// from both the shortlist and the random top-up.
template <class Skip>
inline std::vector<int32_t> propose_candidates(const NGramModel& model,
                                               std::span<const int32_t> seq, int32_t pos,
                                               int cand_k, SplitMix64& rng, int beta1, int beta2,
                                               Skip&& skip) {
    if (cand_k < 1) throw InvalidInputError("propose_candidates: cand_k must be >= 1");
    std::vector<int32_t> ctx = detail::context_at(model, seq, (size_t)pos);
    auto obs = model.counts.find(ctx);

    std::vector<int32_t> allowed;
    allowed.reserve((size_t)model.vocab_size);
    for (int32_t v = 0; v < model.vocab_size; ++v)
        if (!skip(v)) allowed.push_back(v);
    size_t want = std::min((size_t)cand_k, allowed.size());

    // Bottom-ceil(k/2) by probability under the local context (count asc, id asc).
    std::vector<int32_t> shortlist;
    {
        std::vector<std::pair<double, int32_t>> ranked;
        ranked.reserve(allowed.size());
        for (int32_t v : allowed) {
            double c = 0.0;
            if (obs != model.counts.end()) {
                auto jt = obs->second.find(v);
                if (jt != obs->second.end()) c = jt->second;
            }
            ranked.emplace_back(c, v);
        }
        size_t low = std::min((size_t)((cand_k + 1) / 2), ranked.size());
        std::partial_sort(ranked.begin(), ranked.begin() + (long)low, ranked.end());
        for (size_t i = 0; i < low; ++i) shortlist.push_back(ranked[i].second);
    }
    // Uniform random top-up to the full candidate count.
    {
        std::vector<bool> in((size_t)model.vocab_size, false);
        for (int32_t v : shortlist) in[(size_t)v] = true;
        while (shortlist.size() < want) {
            int32_t v = allowed[rng.index(allowed.size())];
            if (in[(size_t)v]) continue;
            in[(size_t)v] = true;
            shortlist.push_back(v);
        }
    }

    // Rank by substituted local objective contribution.
    std::vector<int32_t> work(seq.begin(), seq.end());
    std::vector<std::pair<double, int32_t>> scored;
    scored.reserve(shortlist.size());
    for (int32_t v : shortlist) {
        work[(size_t)pos] = v;
        double s = (double)beta1 * -token_logprob(model, work, (size_t)pos);
        if ((size_t)(pos + 1) < work.size())
            s += (double)beta2 * -token_logprob(model, work, (size_t)(pos + 1));
        scored.emplace_back(s, v);
    }
    work[(size_t)pos] = seq[(size_t)pos];
    std::sort(scored.begin(), scored.end());
    std::vector<int32_t> out;
    out.reserve(scored.size());
    for (auto& [s, v] : scored) out.push_back(v);
    return out;
}

inline std::vector<int32_t> propose_candidates(const NGramModel& model,
                                               std::span<const int32_t> seq, int32_t pos,
                                               int cand_k, SplitMix64& rng, int beta1 = -1,
                                               int beta2 = -1) {
    return propose_candidates(model, seq, pos, cand_k, rng, beta1, beta2,
                              [](int32_t) { return false; });
}

using CandidateSource = std::function<std::vector<int32_t>(
    const NGramModel&, const std::vector<int32_t>&, int32_t pos, int cand_k, SplitMix64&)>;

struct GcgResult {
    std::vector<int32_t> fills;          // final tokens at the searched positions
    std::vector<double> objective_trace; // incumbent per iteration, trace[0] = initial
    double objective = 0.0;
};

inline GcgResult gcg_search(const NGramModel& model, std::vector<int32_t> seq,
                            const std::vector<int32_t>& positions,
                            const CandidateSource& candidates, int tau, int batch_B, int cand_k,
                            uint64_t seed, int beta1, int beta2) {
    if (tau < 0 || batch_B < 1 || cand_k < 1)
        throw InvalidInputError("gcg_search: tau must be >= 0, batch_B and cand_k >= 1");
    if (positions.empty()) throw InvalidInputError("gcg_search: empty position set");

    SplitMix64 rng(seed);
    GcgResult res;
    double incumbent = pitfall_objective(model, seq, positions, beta1, beta2);
    res.objective_trace.push_back(incumbent);

    for (int iter = 0; iter < tau; ++iter) {
        std::vector<std::vector<int32_t>> cand_sets;
        cand_sets.reserve(positions.size());
        for (int32_t pos : positions) cand_sets.push_back(candidates(model, seq, pos, cand_k, rng));

        int32_t best_pos = -1, best_tok = 0;
        double best_obj = 0.0;
        for (int b = 0; b < batch_B; ++b) {
            size_t pi = rng.index(positions.size());
            const auto& set = cand_sets[pi];
            if (set.empty()) continue;
            int32_t pos = positions[pi];
            int32_t tok = set[rng.index(set.size())];
            int32_t saved = seq[(size_t)pos];
            seq[(size_t)pos] = tok;
            double obj = pitfall_objective(model, seq, positions, beta1, beta2);
            seq[(size_t)pos] = saved;
            if (best_pos < 0 || obj < best_obj) {
                best_pos = pos;
                best_tok = tok;
                best_obj = obj;
            }
        }
        if (best_pos >= 0 && best_obj < incumbent) {
            seq[(size_t)best_pos] = best_tok;
            incumbent = best_obj;
        }
        res.objective_trace.push_back(incumbent);
    }
    res.fills.reserve(positions.size());
    for (int32_t pos : positions) res.fills.push_back(seq[(size_t)pos]);
    res.objective = incumbent;
    return res;
}

inline PerturbationPlan plan_tp_op(const GuardConfig& cfg, const TokenSeq& seq,
                                   const Vocabulary& vocab, const NGramModel& proxy) {
    const int t = (int)seq.size();
    const int m = budget(cfg.b, t);
    PerturbationPlan plan;
    plan.strategy = Strategy::TP_OP;
    if (m < 1) {
        plan.warnings.push_back("budget yields no insertions (m=0); plan is a no-op");
        return plan;
    }
    ScoreVector scores = score_sequence(proxy, seq);
    const int k = std::min(m, t);
    TriggerSet triggers = identify_triggers(scores, k);
    const std::vector<int32_t>& gaps = triggers.indices;
    std::vector<int> counts = detail::slot_fill_counts(m, (int)gaps.size());

    // Random fill initialization, then working sequence with fill positions.
    SplitMix64 rng(cfg.seed);
    std::vector<int32_t> pool = detail::fill_token_pool(vocab);
    std::vector<std::vector<int32_t>> fills(gaps.size());
    for (size_t s = 0; s < gaps.size(); ++s)
        for (int i = 0; i < counts[s]; ++i) fills[s].push_back(pool[rng.index(pool.size())]);

    std::vector<int32_t> work;
    std::vector<int32_t> positions;
    {
        size_t slot = 0;
        for (int32_t g = 0; g <= (int32_t)t; ++g) {
            if (slot < gaps.size() && gaps[slot] == g) {
                for (int32_t id : fills[slot]) {
                    positions.push_back((int32_t)work.size());
                    work.push_back(id);
                }
                ++slot;
            }
            if (g < (int32_t)t) work.push_back(seq.ids[(size_t)g]);
        }
    }

    auto is_catalog = [&vocab](int32_t v) { return vocab.is_catalog_token(v); };
    CandidateSource source = [&, is_catalog](const NGramModel& model,
                                             const std::vector<int32_t>& s, int32_t pos,
                                             int cand_k, SplitMix64& r) {
        return propose_candidates(model, s, pos, cand_k, r, cfg.beta1, cfg.beta2, is_catalog);
    };
    GcgResult res = gcg_search(proxy, work, positions, source, cfg.tau, cfg.batch_B, cfg.cand_k,
                               derive_stream(cfg.seed, "tp-op/search"), cfg.beta1, cfg.beta2);

    size_t cursor = 0;
    for (size_t s = 0; s < gaps.size(); ++s) {
        InsertEdit e;
        e.pos = gaps[s];
        for (size_t i = 0; i < fills[s].size(); ++i) e.token_ids.push_back(res.fills[cursor++]);
        plan.edits.emplace_back(std::move(e));
    }
    plan.budget_spent = m;
    return plan;
}

// Split-edit search: per trigger, exhaustively evaluate (interior offset x
// split character) on the re-encoded sequence and adopt the pair minimizing
// the pitfall objective over the trigger's fragment positions.
inline PerturbationPlan plan_tp_oov_pp(const GuardConfig& cfg, const TokenSeq& seq,
                                       const Vocabulary& vocab, const NGramModel& proxy,
                                       const InvisibleCatalog& catalog = default_catalog()) {
    const int t = (int)seq.size();
    const int m = budget(cfg.b, t);
    PerturbationPlan plan;
    plan.strategy = Strategy::TP_OOV_PP;
    if (m < 1) {
        plan.warnings.push_back("budget yields no insertions (m=0); plan is a no-op");
        return plan;
    }
    ScoreVector scores = score_sequence(proxy, seq);
    const int k = std::min(m, t);
    TriggerSet triggers = identify_triggers(scores, k);
    std::vector<int32_t> order = severity_order(triggers);
    std::vector<char32_t> split_chars = catalog.split_chars();

    std::u32string text32; // reconstruct source text from spans
    {
        // decode per token keeps split evaluation independent of the caller's
        // original string; spans of an encoder output reconstruct it exactly
        for (size_t i = 0; i < seq.size(); ++i) text32 += utf8_to_u32(vocab.tokens[seq.ids[i]]);
    }

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

    std::vector<SplitEdit> adopted;
    auto build_text = [&](const SplitEdit* extra) {
        // insertion coords in original codepoints: span_start + offset
        std::vector<std::pair<int32_t, char32_t>> points;
        for (const auto& sp : adopted)
            points.push_back({seq.spans[(size_t)sp.token_index].first + sp.char_offset,
                              sp.invisible_char});
        if (extra)
            points.push_back({seq.spans[(size_t)extra->token_index].first + extra->char_offset,
                              extra->invisible_char});
        std::stable_sort(points.begin(), points.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        std::u32string out;
        out.reserve(text32.size() + points.size());
        size_t next = 0;
        for (int32_t i = 0; i <= (int32_t)text32.size(); ++i) {
            while (next < points.size() && points[next].first == i) {
                out.push_back(points[next].second);
                ++next;
            }
            if (i < (int32_t)text32.size()) out.push_back(text32[(size_t)i]);
        }
        return out;
    };
    auto shifted_span = [&](int32_t tok_idx, const SplitEdit* extra) {
        auto [s, e] = seq.spans[(size_t)tok_idx];
        int32_t ds = 0, de = 0;
        auto bump = [&](int32_t coord) {
            if (coord <= s) ++ds;
            if (coord < e) ++de;
        };
        for (const auto& sp : adopted)
            bump(seq.spans[(size_t)sp.token_index].first + sp.char_offset);
        if (extra) bump(seq.spans[(size_t)extra->token_index].first + extra->char_offset);
        return std::make_pair(s + ds, e + de);
    };

    int remaining = m;
    bool progressed = true;
    while (remaining > 0 && progressed) {
        progressed = false;
        for (int32_t idx : order) {
            if (remaining == 0) break;
            auto it = unused.find(idx);
            if (it == unused.end() || it->second.empty()) continue;

            bool found = false;
            SplitEdit best_edit;
            double best_obj = 0.0;
            for (int32_t off : it->second) {
                for (char32_t c : split_chars) {
                    SplitEdit cand{idx, off, c};
                    std::u32string guarded = build_text(&cand);
                    TokenSeq enc = encode(vocab, u32_to_utf8(guarded));
                    auto [ns, ne] = shifted_span(idx, &cand);
                    std::vector<int32_t> frag_positions;
                    for (size_t p = 0; p < enc.size(); ++p)
                        if (enc.spans[p].first < ne && enc.spans[p].second > ns)
                            frag_positions.push_back((int32_t)p);
                    if (frag_positions.empty()) continue;
                    double obj = pitfall_objective(proxy, enc.ids, frag_positions, cfg.beta1,
                                                   cfg.beta2);
                    if (!found || obj < best_obj) {
                        best_edit = cand;
                        found = true;
                        best_obj = obj;
                    }
                }
            }
            if (!found) continue;
            adopted.push_back(best_edit);
            it->second.erase(std::remove(it->second.begin(), it->second.end(),
                                         best_edit.char_offset),
                             it->second.end());
            plan.edits.emplace_back(best_edit);
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

// Strategy dispatcher. Strategies that rank triggers or craft pitfalls need
// the proxy scorer; np/udp/unp do not.
inline PerturbationPlan plan_for(const GuardConfig& cfg, const TokenSeq& seq,
                                 const Vocabulary& vocab, const NGramModel* proxy,
                                 const InvisibleCatalog& catalog = default_catalog()) {
    cfg.validate();
    auto need_proxy = [&]() -> const NGramModel& {
        if (!proxy)
            throw ConfigError("strategy " + strategy_name(cfg.strategy) +
                              " requires a proxy scorer");
        return *proxy;
    };
    switch (cfg.strategy) {
        case Strategy::NP: {
            PerturbationPlan p;
            p.strategy = Strategy::NP;
            return p;
        }
        case Strategy::UDP: return plan_udp(cfg, seq, vocab);
        case Strategy::UNP: return plan_unp(cfg, seq, vocab);
        case Strategy::TP: return plan_tp(cfg, seq, vocab, score_sequence(need_proxy(), seq));
        case Strategy::TP_P: return plan_tp_p(cfg, seq, vocab, need_proxy());
        case Strategy::TP_OP: return plan_tp_op(cfg, seq, vocab, need_proxy());
        case Strategy::TP_OOV:
            return plan_tp_oov(cfg, seq, vocab, score_sequence(need_proxy(), seq), catalog);
        case Strategy::TP_OOV_PP: return plan_tp_oov_pp(cfg, seq, vocab, need_proxy(), catalog);
    }
    throw ConfigError("unhandled strategy");
}

} // namespace textveil

#pragma once

// Add-alpha smoothed n-gram scorer. One model type plays every role in the
// pipeline: proxy for trigger identification, trainable target, MIA
// reference, and the exclusion model for exposure calibration. Contexts are
// the previous (order-1) ids padded with a reserved begin-of-sequence id;
// probabilities are closed-form, so every downstream number has a hand
// oracle.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "textveil/error.hpp"
#include "textveil/tokenizer.hpp"

namespace textveil {

struct ScoreVector {
    std::vector<double> logprobs; // natural log, aligned to the scored sequence
    size_t size() const { return logprobs.size(); }
};

struct NGramModel {
    int order = 4;
    double alpha = 0.1;
    int32_t vocab_size = 0;
    // context (order-1 ids, BOS padded) -> token -> accumulated weight
    std::map<std::vector<int32_t>, std::map<int32_t, double>> counts;
    std::map<std::vector<int32_t>, double> context_totals;
    std::vector<std::pair<std::string, double>> train_weight_log;

    int32_t bos_id() const { return vocab_size; } // reserved, outside the text vocabulary

    double count_of(const std::vector<int32_t>& ctx, int32_t tok) const {
        auto it = counts.find(ctx);
        if (it == counts.end()) return 0.0;
        auto jt = it->second.find(tok);
        return jt == it->second.end() ? 0.0 : jt->second;
    }

    double total_of(const std::vector<int32_t>& ctx) const {
        auto it = context_totals.find(ctx);
        return it == context_totals.end() ? 0.0 : it->second;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["order"] = order;
        j["alpha"] = alpha;
        j["vocab_size"] = vocab_size;
        nlohmann::json cj = nlohmann::json::array();
        for (const auto& [ctx, obs] : counts) {
            nlohmann::json entry = nlohmann::json::array();
            entry.push_back(ctx);
            nlohmann::json toks = nlohmann::json::array();
            for (const auto& [tok, w] : obs) toks.push_back({tok, w});
            entry.push_back(toks);
            cj.push_back(entry);
        }
        j["counts"] = cj;
        nlohmann::json log = nlohmann::json::array();
        for (const auto& [tag, w] : train_weight_log) log.push_back({tag, w});
        j["train_log"] = log;
        return j;
    }

    static NGramModel from_json(const nlohmann::json& j) {
        NGramModel m;
        m.order = j.at("order").get<int>();
        m.alpha = j.at("alpha").get<double>();
        m.vocab_size = j.at("vocab_size").get<int32_t>();
        for (const auto& entry : j.at("counts")) {
            std::vector<int32_t> ctx = entry.at(0).get<std::vector<int32_t>>();
            auto& obs = m.counts[ctx];
            double total = 0.0;
            for (const auto& tc : entry.at(1)) {
                int32_t tok = tc.at(0).get<int32_t>();
                double w = tc.at(1).get<double>();
                obs[tok] = w;
                total += w;
            }
            m.context_totals[ctx] = total;
        }
        for (const auto& tw : j.at("train_log"))
            m.train_weight_log.emplace_back(tw.at(0).get<std::string>(), tw.at(1).get<double>());
        return m;
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open for write: " + path);
        f << to_json().dump() << "\n";
        if (!f) throw IoError("write failed: " + path);
    }

    static NGramModel load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open: " + path);
        nlohmann::json j;
        f >> j;
        return from_json(j);
    }
};

namespace detail {

inline std::vector<int32_t> context_at(const NGramModel& m, std::span<const int32_t> ids,
                                       size_t pos) {
    std::vector<int32_t> ctx;
    int n = m.order - 1;
    ctx.reserve((size_t)n);
    for (int k = n; k >= 1; --k) {
        long long idx = (long long)pos - k;
        ctx.push_back(idx < 0 ? m.bos_id() : ids[(size_t)idx]);
    }
    return ctx;
}

inline void add_sequence(NGramModel& m, std::span<const int32_t> ids, double weight) {
    for (size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] < 0 || ids[t] >= m.vocab_size)
            throw VocabMismatchError("fit: token id " + std::to_string(ids[t]) +
                                     " outside vocabulary of size " + std::to_string(m.vocab_size));
        std::vector<int32_t> ctx = context_at(m, ids, t);
        m.counts[ctx][ids[t]] += weight;
        m.context_totals[ctx] += weight;
    }
}

} // namespace detail

inline NGramModel fit(const std::vector<TokenSeq>& corpus, int order, int32_t vocab_size,
                      double alpha, double weight, std::string_view tag) {
    if (order < 1) throw InvalidInputError("fit: order must be >= 1");
    if (corpus.empty()) throw InvalidInputError("fit: empty corpus");
    if (weight <= 0) throw InvalidInputError("fit: weight must be positive");
    NGramModel m;
    m.order = order;
    m.alpha = alpha;
    m.vocab_size = vocab_size;
    for (const auto& seq : corpus) detail::add_sequence(m, seq.ids, weight);
    m.train_weight_log.emplace_back(std::string(tag), weight);
    return m;
}

inline NGramModel& continual_update(NGramModel& m, const std::vector<TokenSeq>& corpus,
                                    double weight, std::string_view tag) {
    if (weight <= 0) throw InvalidInputError("continual_update: weight must be positive");
    for (const auto& seq : corpus) detail::add_sequence(m, seq.ids, weight);
    m.train_weight_log.emplace_back(std::string(tag), weight);
    return m;
}

inline double token_logprob(const NGramModel& m, std::span<const int32_t> ids, size_t pos) {
    int32_t tok = ids[pos];
    if (tok < 0 || tok >= m.vocab_size)
        throw InvalidIdError("score: token id " + std::to_string(tok) + " out of range");
    std::vector<int32_t> ctx = detail::context_at(m, ids, pos);
    double c = m.count_of(ctx, tok);
    double total = m.total_of(ctx);
    return std::log((c + m.alpha) / (total + m.alpha * (double)m.vocab_size));
}

inline ScoreVector score_ids(const NGramModel& m, std::span<const int32_t> ids) {
    ScoreVector sv;
    sv.logprobs.reserve(ids.size());
    for (size_t t = 0; t < ids.size(); ++t) sv.logprobs.push_back(token_logprob(m, ids, t));
    return sv;
}

inline ScoreVector score_sequence(const NGramModel& m, const TokenSeq& seq) {
    return score_ids(m, seq.ids);
}

// Serves as both the Eq.-style training loss and the log-perplexity of a
// sequence.
inline double sequence_loss(const ScoreVector& scores) {
    if (scores.logprobs.empty()) throw InvalidInputError("sequence_loss: empty score vector");
    double sum = 0.0;
    for (double lp : scores.logprobs) sum += lp;
    return -sum / (double)scores.logprobs.size();
}

// Token minimizing P(v | prefix context); ties broken by smallest id.
// skip(v) == true removes v from consideration.
template <class Skip>
inline int32_t argmin_next_token_if(const NGramModel& m, std::span<const int32_t> prefix,
                                    Skip&& skip) {
    std::vector<int32_t> ctx;
    int n = m.order - 1;
    ctx.reserve((size_t)n);
    for (int k = n; k >= 1; --k) {
        long long idx = (long long)prefix.size() - k;
        ctx.push_back(idx < 0 ? m.bos_id() : prefix[(size_t)idx]);
    }
    auto it = m.counts.find(ctx);
    int32_t best = -1;
    double best_count = 0.0;
    for (int32_t v = 0; v < m.vocab_size; ++v) {
        if (skip(v)) continue;
        double c = 0.0;
        if (it != m.counts.end()) {
            auto jt = it->second.find(v);
            if (jt != it->second.end()) c = jt->second;
        }
        if (best < 0 || c < best_count) {
            best = v;
            best_count = c;
            if (c == 0.0 && it == m.counts.end()) break; // untrained context: id order decides
        }
    }
    if (best < 0) throw InvalidInputError("argmin_next_token: no candidate token");
    return best;
}

inline int32_t argmin_next_token(const NGramModel& m, std::span<const int32_t> prefix) {
    return argmin_next_token_if(m, prefix, [](int32_t) { return false; });
}

} // namespace textveil

#pragma once

// Threshold-based black-box membership signals and attack metrics. All
// signals are oriented so that larger means more member-like, keeping a
// single AUC convention downstream.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>
#include <zlib.h>

#include "textveil/error.hpp"
#include "textveil/rng.hpp"
#include "textveil/scorer.hpp"

namespace textveil {

inline const char* kCompressorId = "zlib compress2 level 9";

// Compressed byte length of a buffer under zlib at maximum compression.
inline size_t deflate_size(const std::string& bytes) {
    uLongf cap = compressBound((uLong)bytes.size());
    std::vector<Bytef> out(cap);
    int rc = compress2(out.data(), &cap, (const Bytef*)bytes.data(), (uLong)bytes.size(),
                       Z_BEST_COMPRESSION);
    if (rc != Z_OK) throw Error("deflate_size: compress2 failed with code " + std::to_string(rc));
    return (size_t)cap;
}

inline double signal_loss(const ScoreVector& scores) { return -sequence_loss(scores); }

inline double signal_loss_ref(const ScoreVector& target_scores, const ScoreVector& ref_scores) {
    if (target_scores.size() != ref_scores.size())
        throw InvalidInputError("signal_loss_ref: score vectors differ in length");
    return -(sequence_loss(target_scores) - sequence_loss(ref_scores));
}

inline double signal_mink(const ScoreVector& scores, double k_frac = 0.2) {
    if (scores.logprobs.empty()) throw InvalidInputError("signal_mink: empty score vector");
    if (!(k_frac > 0.0 && k_frac <= 1.0))
        throw InvalidInputError("signal_mink: k_frac must be in (0,1]");
    size_t m = (size_t)std::ceil(k_frac * (double)scores.size() - 1e-9);
    if (m == 0) m = 1;
    std::vector<double> v(scores.logprobs);
    std::nth_element(v.begin(), v.begin() + (long)(m - 1), v.end());
    double sum = std::accumulate(v.begin(), v.begin() + (long)m, 0.0);
    return sum / (double)m;
}

inline double signal_zlib(const ScoreVector& scores, const std::string& raw_text) {
    if (raw_text.empty()) throw InvalidInputError("signal_zlib: empty text");
    if (scores.logprobs.empty()) throw InvalidInputError("signal_zlib: empty score vector");
    double total_logprob = std::accumulate(scores.logprobs.begin(), scores.logprobs.end(), 0.0);
    double bits = 8.0 * (double)deflate_size(raw_text);
    return total_logprob / bits; // == -(sum NLL) / bits
}

// Mann-Whitney AUC: (wins + 0.5 * ties) / (|M| * |N|), computed via average
// ranks; exact for the modest sizes used here.
inline double auc(const std::vector<double>& members, const std::vector<double>& nonmembers) {
    if (members.empty() || nonmembers.empty())
        throw InvalidInputError("auc: both score sets must be non-empty");
    struct Entry {
        double score;
        bool member;
    };
    std::vector<Entry> all;
    all.reserve(members.size() + nonmembers.size());
    for (double s : members) all.push_back({s, true});
    for (double s : nonmembers) all.push_back({s, false});
    std::sort(all.begin(), all.end(),
              [](const Entry& a, const Entry& b) { return a.score < b.score; });
    double rank_sum_members = 0.0;
    size_t i = 0;
    while (i < all.size()) {
        size_t j = i;
        while (j < all.size() && all[j].score == all[i].score) ++j;
        double avg_rank = 0.5 * ((double)(i + 1) + (double)j); // ranks are 1-based
        for (size_t k = i; k < j; ++k)
            if (all[k].member) rank_sum_members += avg_rank;
        i = j;
    }
    double M = (double)members.size(), N = (double)nonmembers.size();
    double U = rank_sum_members - M * (M + 1.0) / 2.0;
    return U / (M * N);
}

// Largest-threshold rule: threshold just above the (k+1)-th largest
// non-member score where k = floor(fpr * N) false positives are allowed.
inline double tpr_at_fpr(const std::vector<double>& members,
                         const std::vector<double>& nonmembers, double fpr) {
    if (members.empty() || nonmembers.empty())
        throw InvalidInputError("tpr_at_fpr: both score sets must be non-empty");
    if (fpr < 0.0 || fpr > 1.0) throw InvalidInputError("tpr_at_fpr: fpr must be in [0,1]");
    size_t N = nonmembers.size();
    size_t k = (size_t)std::floor(fpr * (double)N + 1e-9);
    if (k >= N) return 1.0;
    std::vector<double> non(nonmembers);
    std::sort(non.begin(), non.end(), std::greater<double>());
    double bar = non[k]; // members must score strictly above this
    size_t tp = 0;
    for (double m : members)
        if (m > bar) ++tp;
    return (double)tp / (double)members.size();
}

// Step ROC through (0,0) and (1,1), thresholds swept over observed scores.
inline std::vector<std::pair<double, double>> roc_curve(const std::vector<double>& members,
                                                        const std::vector<double>& nonmembers) {
    if (members.empty() || nonmembers.empty())
        throw InvalidInputError("roc_curve: both score sets must be non-empty");
    std::vector<double> thresholds;
    thresholds.reserve(members.size() + nonmembers.size());
    thresholds.insert(thresholds.end(), members.begin(), members.end());
    thresholds.insert(thresholds.end(), nonmembers.begin(), nonmembers.end());
    std::sort(thresholds.begin(), thresholds.end(), std::greater<double>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    std::vector<double> ms(members), ns(nonmembers);
    std::sort(ms.begin(), ms.end(), std::greater<double>());
    std::sort(ns.begin(), ns.end(), std::greater<double>());
    std::vector<std::pair<double, double>> roc;
    roc.push_back({0.0, 0.0});
    size_t mi = 0, ni = 0;
    for (double th : thresholds) {
        while (mi < ms.size() && ms[mi] >= th) ++mi;
        while (ni < ns.size() && ns[ni] >= th) ++ni;
        roc.push_back({(double)ni / (double)ns.size(), (double)mi / (double)ms.size()});
    }
    if (roc.back() != std::make_pair(1.0, 1.0)) roc.push_back({1.0, 1.0});
    return roc;
}

inline double bootstrap_auc(const std::vector<double>& members,
                            const std::vector<double>& nonmembers, int iters, uint64_t seed) {
    if (iters < 1) throw InvalidInputError("bootstrap_auc: iters must be >= 1");
    if (members.empty() || nonmembers.empty())
        throw InvalidInputError("bootstrap_auc: both score sets must be non-empty");
    SplitMix64 rng(seed);
    double sum = 0.0;
    std::vector<double> m(members.size()), n(nonmembers.size());
    for (int it = 0; it < iters; ++it) {
        for (size_t i = 0; i < m.size(); ++i) m[i] = members[rng.index(members.size())];
        for (size_t i = 0; i < n.size(); ++i) n[i] = nonmembers[rng.index(nonmembers.size())];
        sum += auc(m, n);
    }
    return sum / (double)iters;
}

struct SignalRecord {
    std::string instance_id;
    std::string user_id;
    std::map<std::string, double> signals; // larger => more member-like
};

// Per user and signal, the mean over that user's chunk-level signals.
inline std::vector<SignalRecord> aggregate_user_level(const std::vector<SignalRecord>& records) {
    std::map<std::string, std::map<std::string, std::pair<double, int>>> acc;
    for (const auto& r : records) {
        if (r.user_id.empty())
            throw InvalidInputError("aggregate_user_level: record '" + r.instance_id +
                                    "' has no user id");
        for (const auto& [name, value] : r.signals) {
            auto& slot = acc[r.user_id][name];
            slot.first += value;
            slot.second += 1;
        }
    }
    std::vector<SignalRecord> out;
    out.reserve(acc.size());
    for (const auto& [user, sig] : acc) {
        SignalRecord r;
        r.instance_id = user;
        r.user_id = user;
        for (const auto& [name, sv] : sig) r.signals[name] = sv.first / (double)sv.second;
        out.push_back(std::move(r));
    }
    return out;
}

struct MiaResult {
    std::string signal;
    double auc = 0.0;
    std::map<double, double> tpr_at_fpr;
    std::vector<std::pair<double, double>> roc;
    double bootstrap_mean_auc = 0.0;
    int bootstrap_iters = 0;

    nlohmann::json to_json() const {
        nlohmann::json tj = nlohmann::json::object();
        for (const auto& [f, t] : tpr_at_fpr) {
            char key[32];
            std::snprintf(key, sizeof(key), "%g", f);
            tj[key] = t;
        }
        nlohmann::json rj = nlohmann::json::array();
        for (const auto& [f, t] : roc) rj.push_back({f, t});
        return {{"signal", signal},
                {"auc", auc},
                {"tpr_at_fpr", tj},
                {"roc", rj},
                {"bootstrap_mean_auc", bootstrap_mean_auc},
                {"bootstrap_iters", bootstrap_iters}};
    }
};

inline MiaResult evaluate_signal(const std::string& name, const std::vector<double>& members,
                                 const std::vector<double>& nonmembers,
                                 const std::vector<double>& fpr_grid, int bootstrap_iters,
                                 uint64_t seed) {
    MiaResult r;
    r.signal = name;
    r.auc = auc(members, nonmembers);
    for (double f : fpr_grid) r.tpr_at_fpr[f] = tpr_at_fpr(members, nonmembers, f);
    r.roc = roc_curve(members, nonmembers);
    r.bootstrap_iters = bootstrap_iters;
    r.bootstrap_mean_auc =
        bootstrap_iters > 0 ? bootstrap_auc(members, nonmembers, bootstrap_iters, seed) : r.auc;
    return r;
}

} // namespace textveil

#pragma once

// Memorization-trigger identification: the k positions with the lowest
// conditional log-probability under a proxy scorer.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "textveil/error.hpp"
#include "textveil/scorer.hpp"

namespace textveil {

struct TriggerSet {
    std::vector<int32_t> indices; // strictly increasing
    std::vector<double> severities; // proxy logprobs at indices (lower = more severe)
    int k = 0;
};

inline TriggerSet identify_triggers(const ScoreVector& scores, int k) {
    if (k < 1) throw InvalidInputError("identify_triggers: k must be >= 1");
    if (scores.logprobs.empty()) throw InvalidInputError("identify_triggers: empty score vector");
    const size_t n = scores.logprobs.size();
    std::vector<int32_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    // k smallest logprobs, ties broken by earliest position
    std::stable_sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
        if (scores.logprobs[a] != scores.logprobs[b])
            return scores.logprobs[a] < scores.logprobs[b];
        return a < b;
    });
    size_t take = std::min((size_t)k, n);
    std::vector<int32_t> picked(order.begin(), order.begin() + take);
    std::sort(picked.begin(), picked.end());
    TriggerSet out;
    out.k = k;
    out.indices = std::move(picked);
    out.severities.reserve(take);
    for (int32_t i : out.indices) out.severities.push_back(scores.logprobs[i]);
    return out;
}

// Trigger positions ordered most-severe first (lowest logprob, earliest
// position on ties). Fill strategies consume slots in this order.
inline std::vector<int32_t> severity_order(const TriggerSet& ts) {
    std::vector<size_t> order(ts.indices.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (ts.severities[a] != ts.severities[b]) return ts.severities[a] < ts.severities[b];
        return ts.indices[a] < ts.indices[b];
    });
    std::vector<int32_t> out;
    out.reserve(order.size());
    for (size_t i : order) out.push_back(ts.indices[i]);
    return out;
}

} // namespace textveil

#pragma once

// Subword vocabulary training (byte-pair merges over codepoints) and greedy
// longest-match encoding. Segmentation is greedy longest match rather than
// merge-rank replay: deterministic, and it preserves the property that an
// invisible character inserted inside any multi-character token fragments it
// into tokens with different ids. Catalog codepoints never participate in
// merges, so they are always standalone single-character tokens.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "textveil/catalog.hpp"
#include "textveil/error.hpp"
#include "textveil/unicode.hpp"

namespace textveil {

namespace detail {

struct U32Hash {
    using is_transparent = void;
    size_t operator()(std::u32string_view s) const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (char32_t c : s) {
            h ^= (uint64_t)c;
            h *= 0x100000001b3ull;
        }
        return (size_t)h;
    }
    size_t operator()(const std::u32string& s) const {
        return (*this)(std::u32string_view(s));
    }
};

struct U32Eq {
    using is_transparent = void;
    bool operator()(std::u32string_view a, std::u32string_view b) const { return a == b; }
};

} // namespace detail

struct Vocabulary {
    std::vector<std::string> tokens;    // id order, UTF-8
    std::vector<std::u32string> tokens32;
    std::unordered_map<std::u32string, int32_t, detail::U32Hash, detail::U32Eq> id_of;
    std::set<char32_t> base_alphabet;
    int32_t merge_count = 0;
    size_t max_token_len = 0; // codepoints

    size_t size() const { return tokens.size(); }

    int32_t id(std::u32string_view tok) const {
        auto it = id_of.find(tok);
        return it == id_of.end() ? -1 : it->second;
    }
    int32_t id(std::string_view tok) const { return id(utf8_to_u32(tok)); }

    bool valid_id(int32_t id) const { return id >= 0 && (size_t)id < tokens.size(); }

    // True for single-character tokens whose character is in the catalog.
    bool is_catalog_token(int32_t id, const InvisibleCatalog& cat = default_catalog()) const {
        return valid_id(id) && tokens32[id].size() == 1 && cat.contains(tokens32[id][0]);
    }

    std::vector<int32_t> catalog_token_ids(const InvisibleCatalog& cat = default_catalog()) const {
        std::vector<int32_t> out;
        for (int32_t i = 0; i < (int32_t)tokens.size(); ++i)
            if (is_catalog_token(i, cat)) out.push_back(i);
        return out;
    }

    void index() {
        tokens32.clear();
        id_of.clear();
        max_token_len = 0;
        for (int32_t i = 0; i < (int32_t)tokens.size(); ++i) {
            std::u32string t32 = utf8_to_u32(tokens[i]);
            if (id_of.count(t32))
                throw InvalidInputError("duplicate token in vocabulary: '" + tokens[i] + "'");
            id_of.emplace(t32, i);
            max_token_len = std::max(max_token_len, t32.size());
            tokens32.push_back(std::move(t32));
        }
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["tokens"] = tokens;
        j["merge_count"] = merge_count;
        std::vector<std::string> base;
        for (char32_t cp : base_alphabet) base.push_back(codepoint_to_utf8(cp));
        j["base_alphabet"] = base;
        return j;
    }

    static Vocabulary from_json(const nlohmann::json& j) {
        Vocabulary v;
        v.tokens = j.at("tokens").get<std::vector<std::string>>();
        v.merge_count = j.at("merge_count").get<int32_t>();
        for (const auto& s : j.at("base_alphabet")) {
            std::u32string u = utf8_to_u32(s.get<std::string>());
            if (u.size() != 1)
                throw InvalidInputError("base_alphabet entry is not a single character");
            v.base_alphabet.insert(u[0]);
        }
        v.index();
        return v;
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open for write: " + path);
        f << to_json().dump(2) << "\n";
        if (!f) throw IoError("write failed: " + path);
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open: " + path);
        nlohmann::json j;
        f >> j;
        return from_json(j);
    }
};

struct TokenSeq {
    std::vector<int32_t> ids;
    std::vector<std::pair<int32_t, int32_t>> spans; // half-open codepoint offsets

    size_t size() const { return ids.size(); }
    bool empty() const { return ids.empty(); }
};

inline Vocabulary train_bpe(const std::vector<std::string>& corpus, int num_merges,
                            const InvisibleCatalog& catalog = default_catalog()) {
    if (corpus.empty()) throw InvalidInputError("train_bpe: empty corpus");
    if (num_merges < 0) throw InvalidInputError("train_bpe: num_merges must be >= 0");

    std::set<char32_t> alphabet(catalog.codepoints.begin(), catalog.codepoints.end());
    std::vector<std::u32string> docs;
    docs.reserve(corpus.size());
    for (const auto& d : corpus) {
        std::u32string u = utf8_to_u32(d);
        for (char32_t cp : u) alphabet.insert(cp);
        docs.push_back(std::move(u));
    }

    Vocabulary vocab;
    vocab.base_alphabet = alphabet;
    for (char32_t cp : alphabet) vocab.tokens.push_back(codepoint_to_utf8(cp));
    vocab.index();

    std::vector<std::u32string> piece; // token strings by id, grows with merges
    piece.reserve(vocab.tokens.size() + (size_t)num_merges);
    for (const auto& t : vocab.tokens32) piece.push_back(t);

    std::vector<bool> mergeable(piece.size(), true);
    for (size_t i = 0; i < piece.size(); ++i)
        if (piece[i].size() == 1 && catalog.contains(piece[i][0])) mergeable[i] = false;

    // Documents as id sequences over the evolving vocabulary.
    std::vector<std::vector<int32_t>> seqs;
    seqs.reserve(docs.size());
    for (const auto& d : docs) {
        std::vector<int32_t> s;
        s.reserve(d.size());
        for (char32_t cp : d) s.push_back(vocab.id(std::u32string(1, cp)));
        seqs.push_back(std::move(s));
    }

    auto pair_key = [](int32_t a, int32_t b) {
        return ((uint64_t)(uint32_t)a << 32) | (uint32_t)b;
    };
    int merges_done = 0;
    std::unordered_map<uint64_t, int64_t> freq;
    freq.reserve(1 << 16);
    for (int step = 0; step < num_merges; ++step) {
        // Count adjacent pairs (overlapping occurrences included).
        freq.clear();
        for (const auto& s : seqs) {
            for (size_t i = 0; i + 1 < s.size(); ++i) {
                if (!mergeable[s[i]] || !mergeable[s[i + 1]]) continue;
                ++freq[pair_key(s[i], s[i + 1])];
            }
        }
        if (freq.empty()) break;

        // Most frequent pair; ties broken by lexicographic order of the
        // merged pair (left string, then right string). The comparison is
        // order-independent, so hash iteration order cannot leak in.
        std::pair<int32_t, int32_t> best{-1, -1};
        int64_t best_count = -1;
        for (const auto& [key, count] : freq) {
            std::pair<int32_t, int32_t> pr{(int32_t)(key >> 32), (int32_t)(uint32_t)key};
            if (count < best_count) continue;
            if (count > best_count) {
                best = pr;
                best_count = count;
                continue;
            }
            if (std::tie(piece[pr.first], piece[pr.second]) <
                std::tie(piece[best.first], piece[best.second]))
                best = pr;
        }

        std::u32string merged = piece[best.first] + piece[best.second];
        int32_t new_id;
        auto it = vocab.id_of.find(merged);
        if (it != vocab.id_of.end()) {
            // Same string reachable through two merge paths; reuse the id.
            new_id = it->second;
        } else {
            new_id = (int32_t)piece.size();
            piece.push_back(merged);
            mergeable.push_back(true);
            vocab.tokens.push_back(u32_to_utf8(merged));
            vocab.id_of.emplace(merged, new_id);
            vocab.tokens32.push_back(merged);
            vocab.max_token_len = std::max(vocab.max_token_len, merged.size());
        }

        for (auto& s : seqs) {
            size_t first = 0;
            for (; first + 1 < s.size(); ++first)
                if (s[first] == best.first && s[first + 1] == best.second) break;
            if (first + 1 >= s.size()) continue; // pair absent, sequence unchanged
            size_t w = first;
            for (size_t i = first; i < s.size();) {
                if (i + 1 < s.size() && s[i] == best.first && s[i + 1] == best.second) {
                    s[w++] = new_id;
                    i += 2;
                } else {
                    s[w++] = s[i++];
                }
            }
            s.resize(w);
        }
        ++merges_done;
    }
    vocab.merge_count = merges_done;
    return vocab;
}

inline TokenSeq encode(const Vocabulary& vocab, std::string_view text) {
    std::u32string u = utf8_to_u32(text);
    TokenSeq seq;
    size_t pos = 0;
    while (pos < u.size()) {
        size_t limit = std::min(vocab.max_token_len, u.size() - pos);
        int32_t match = -1;
        size_t match_len = 0;
        for (size_t len = limit; len >= 1; --len) {
            int32_t id = vocab.id(std::u32string_view(u).substr(pos, len));
            if (id >= 0) {
                match = id;
                match_len = len;
                break;
            }
        }
        if (match < 0)
            throw UnknownCharError("encode: character " + format_codepoint(u[pos]) +
                                       " at offset " + std::to_string(pos) +
                                       " is not in the vocabulary",
                                   u[pos], pos);
        seq.ids.push_back(match);
        seq.spans.push_back({(int32_t)pos, (int32_t)(pos + match_len)});
        pos += match_len;
    }
    return seq;
}

inline std::string decode_ids(const Vocabulary& vocab, const std::vector<int32_t>& ids) {
    std::string out;
    for (int32_t id : ids) {
        if (!vocab.valid_id(id))
            throw InvalidIdError("decode: token id " + std::to_string(id) + " out of range");
        out += vocab.tokens[id];
    }
    return out;
}

inline std::string decode(const Vocabulary& vocab, const TokenSeq& seq) {
    return decode_ids(vocab, seq.ids);
}

inline int token_edit_distance(const std::vector<int32_t>& a, const std::vector<int32_t>& b) {
    const size_t n = a.size(), m = b.size();
    std::vector<int> prev(m + 1), cur(m + 1);
    for (size_t j = 0; j <= m; ++j) prev[j] = (int)j;
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = (int)i;
        for (size_t j = 1; j <= m; ++j) {
            int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

inline int token_edit_distance(const TokenSeq& a, const TokenSeq& b) {
    return token_edit_distance(a.ids, b.ids);
}

} // namespace textveil

#pragma once

// Catalog of invisible characters usable as in-word splits and as the
// delimiters of hidden insert runs. All catalog codepoints are zero-width
// format characters; soft hyphen is deliberately absent (it renders at
// line breaks).

#include <algorithm>
#include <string>
#include <vector>

#include "textveil/unicode.hpp"

namespace textveil {

// U+200B pairs delimit inserted (hidden) token runs in plain-text renderings.
inline constexpr char32_t kGuardDelimiter = U'​';

struct InvisibleCatalog {
    std::vector<char32_t> codepoints{U'​', U'‌', U'‍', U'⁠', U'﻿'};

    bool contains(char32_t cp) const {
        return std::find(codepoints.begin(), codepoints.end(), cp) != codepoints.end();
    }

    // Split characters exclude the delimiter so a stripped text is
    // unambiguous: every U+200B in guarded output marks an insert run.
    std::vector<char32_t> split_chars() const {
        std::vector<char32_t> out;
        for (char32_t cp : codepoints)
            if (cp != kGuardDelimiter) out.push_back(cp);
        return out;
    }
};

inline const InvisibleCatalog& default_catalog() {
    static const InvisibleCatalog cat;
    return cat;
}

inline std::u32string remove_catalog_chars(std::u32string_view s,
                                           const InvisibleCatalog& cat = default_catalog()) {
    std::u32string out;
    out.reserve(s.size());
    for (char32_t cp : s)
        if (!cat.contains(cp)) out.push_back(cp);
    return out;
}

// Removes U+200B-delimited runs (inserted hidden content), then any leftover
// catalog codepoints (in-word splits, unpaired delimiters). This is the
// plain-text arm of both the reader model and the aggressive stripper.
inline std::u32string remove_guard_marks(std::u32string_view s,
                                         const InvisibleCatalog& cat = default_catalog()) {
    std::u32string out;
    out.reserve(s.size());
    size_t i = 0;
    while (i < s.size()) {
        if (s[i] == kGuardDelimiter) {
            size_t j = s.find(kGuardDelimiter, i + 1);
            if (j != std::u32string::npos) {
                i = j + 1; // drop the delimited run
                continue;
            }
            ++i; // unpaired mark, drop it alone
            continue;
        }
        if (!cat.contains(s[i])) out.push_back(s[i]);
        ++i;
    }
    return out;
}

} // namespace textveil

#pragma once

// UTF-8 <-> UTF-32 conversion. All character offsets in this codebase are
// codepoint offsets, not byte offsets.

#include <cstdint>
#include <string>
#include <string_view>

#include "textveil/error.hpp"

namespace textveil {

inline std::u32string utf8_to_u32(std::string_view s) {
    std::u32string out;
    out.reserve(s.size());
    size_t i = 0;
    while (i < s.size()) {
        unsigned char c = (unsigned char)s[i];
        char32_t cp = 0;
        size_t extra = 0;
        if (c < 0x80) {
            cp = c;
        } else if ((c >> 5) == 0x6) {
            cp = c & 0x1f;
            extra = 1;
        } else if ((c >> 4) == 0xe) {
            cp = c & 0x0f;
            extra = 2;
        } else if ((c >> 3) == 0x1e) {
            cp = c & 0x07;
            extra = 3;
        } else {
            throw InvalidInputError("invalid UTF-8 lead byte at offset " + std::to_string(i));
        }
        if (i + extra >= s.size())
            throw InvalidInputError("truncated UTF-8 sequence at offset " + std::to_string(i));
        for (size_t k = 1; k <= extra; ++k) {
            unsigned char cc = (unsigned char)s[i + k];
            if ((cc >> 6) != 0x2)
                throw InvalidInputError("invalid UTF-8 continuation at offset " + std::to_string(i + k));
            cp = (cp << 6) | (cc & 0x3f);
        }
        out.push_back(cp);
        i += extra + 1;
    }
    return out;
}

inline void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back((char)cp);
    } else if (cp < 0x800) {
        out.push_back((char)(0xc0 | (cp >> 6)));
        out.push_back((char)(0x80 | (cp & 0x3f)));
    } else if (cp < 0x10000) {
        out.push_back((char)(0xe0 | (cp >> 12)));
        out.push_back((char)(0x80 | ((cp >> 6) & 0x3f)));
        out.push_back((char)(0x80 | (cp & 0x3f)));
    } else {
        out.push_back((char)(0xf0 | (cp >> 18)));
        out.push_back((char)(0x80 | ((cp >> 12) & 0x3f)));
        out.push_back((char)(0x80 | ((cp >> 6) & 0x3f)));
        out.push_back((char)(0x80 | (cp & 0x3f)));
    }
}

inline std::string u32_to_utf8(std::u32string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char32_t cp : s) append_utf8(out, cp);
    return out;
}

inline std::string codepoint_to_utf8(char32_t cp) {
    std::string out;
    append_utf8(out, cp);
    return out;
}

// "U+200B" style formatting used in plan JSON and error messages.
inline std::string format_codepoint(char32_t cp) {
    static const char* hex = "0123456789ABCDEF";
    std::string digits;
    uint32_t v = (uint32_t)cp;
    do {
        digits.insert(digits.begin(), hex[v & 0xf]);
        v >>= 4;
    } while (v != 0);
    while (digits.size() < 4) digits.insert(digits.begin(), '0');
    return "U+" + digits;
}

inline char32_t parse_codepoint(std::string_view s) {
    if (s.size() < 3 || s[0] != 'U' || s[1] != '+')
        throw InvalidInputError("expected U+XXXX codepoint, got '" + std::string(s) + "'");
    uint32_t v = 0;
    for (size_t i = 2; i < s.size(); ++i) {
        char c = s[i];
        uint32_t d;
        if (c >= '0' && c <= '9') d = (uint32_t)(c - '0');
        else if (c >= 'a' && c <= 'f') d = (uint32_t)(c - 'a' + 10);
        else if (c >= 'A' && c <= 'F') d = (uint32_t)(c - 'A' + 10);
        else throw InvalidInputError("bad hex digit in codepoint '" + std::string(s) + "'");
        v = v * 16 + d;
    }
    return (char32_t)v;
}

} // namespace textveil

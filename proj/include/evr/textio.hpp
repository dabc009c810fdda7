#pragma once
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

#include "evr/errors.hpp"

namespace evr {

// Doubles print with %.17g so text round-trips are bit-exact.
inline std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Offset-tracking token reader for the line-oriented text formats. Throws
// ParseError carrying the byte offset where parsing stopped.
struct Cursor {
    const char* begin;
    const char* p;
    std::string ctx;

    explicit Cursor(const std::string& s, std::string context = "input")
        : begin(s.c_str()), p(begin), ctx(std::move(context)) {}

    std::size_t offset() const { return std::size_t(p - begin); }

    void skip_ws() {
        while (*p == ' ' || *p == '\n' || *p == '\t' || *p == '\r') ++p;
    }

    bool at_end() {
        skip_ws();
        return *p == '\0';
    }

    void expect(const char* word) {
        skip_ws();
        std::size_t n = std::strlen(word);
        if (std::strncmp(p, word, n) != 0)
            throw ParseError(ctx + ": expected '" + word + "'", offset());
        p += n;
    }

    bool peek(const char* word) {
        skip_ws();
        return std::strncmp(p, word, std::strlen(word)) == 0;
    }

    long long read_int(const char* what) {
        skip_ws();
        char* end = nullptr;
        long long v = std::strtoll(p, &end, 10);
        if (end == p) throw ParseError(ctx + ": expected integer for " + what, offset());
        p = end;
        return v;
    }

    unsigned long long read_u64(const char* what) {
        skip_ws();
        char* end = nullptr;
        unsigned long long v = std::strtoull(p, &end, 10);
        if (end == p || *p == '-')
            throw ParseError(ctx + ": expected unsigned integer for " + what, offset());
        p = end;
        return v;
    }

    double read_double(const char* what) {
        skip_ws();
        char* end = nullptr;
        double v = std::strtod(p, &end);
        if (end == p) throw ParseError(ctx + ": expected number for " + what, offset());
        p = end;
        return v;
    }

    std::string read_word(const char* what) {
        skip_ws();
        const char* s = p;
        while (*p && *p != ' ' && *p != '\n' && *p != '\t' && *p != '\r') ++p;
        if (p == s) throw ParseError(ctx + ": expected word for " + what, offset());
        return std::string(s, p);
    }
};

} // namespace evr

#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "pfxlm/tokenizer.hpp"

#ifndef PFXLM_TEST_DATA_DIR
#error "PFXLM_TEST_DATA_DIR must point at tests/data"
#endif

namespace pfxlm::testing {

inline std::filesystem::path data_path(const std::string& name) {
    return std::filesystem::path(PFXLM_TEST_DATA_DIR) / name;
}

/// Abstract sentences and generated conclusions used as tokenizer fixtures.
inline std::vector<std::string> excerpt_texts() {
    std::ifstream in(data_path("rct_excerpts.txt"));
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(line);
    }
    return out;
}

/// Byte strings of length 0..64; a third are biased towards ASCII text.
inline std::vector<std::string> random_byte_strings(std::mt19937_64& rng, std::size_t count) {
    std::uniform_int_distribution<int> len(0, 64), byte(0, 255), ascii(0x20, 0x7e), mode(0, 2);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < count; ++i) {
        const int n = len(rng);
        const bool text = mode(rng) == 0;
        std::string s;
        for (int k = 0; k < n; ++k) s.push_back(static_cast<char>(text ? ascii(rng) : byte(rng)));
        out.push_back(std::move(s));
    }
    return out;
}

/// Lenient UTF-8 walk: invalid bytes are skipped.
inline std::vector<char32_t> code_points(const std::string& s) {
    std::vector<char32_t> out;
    for (std::size_t i = 0; i < s.size();) {
        const auto b = static_cast<unsigned char>(s[i]);
        std::size_t n = b < 0x80 ? 1 : (b >> 5) == 6 ? 2 : (b >> 4) == 14 ? 3 : (b >> 3) == 30 ? 4 : 0;
        if (n == 0 || i + n > s.size()) {
            ++i;
            continue;
        }
        char32_t cp = n == 1 ? b : b & (0x7f >> n);
        bool ok = true;
        for (std::size_t k = 1; k < n; ++k) {
            const auto c = static_cast<unsigned char>(s[i + k]);
            if ((c >> 6) != 2) ok = false;
            cp = (cp << 6) | (c & 0x3f);
        }
        if (!ok) {
            ++i;
            continue;
        }
        out.push_back(cp);
        i += n;
    }
    return out;
}

/// True when no token in `ids` holds both a letter and a digit.
inline bool no_mixed_token(const Tokenizer& tok, const std::vector<TokenId>& ids) {
    for (TokenId id : ids) {
        bool letter = false, digit = false;
        for (char32_t cp : code_points(std::string(tok.vocabulary().token(id)))) {
            const auto c = categorize(cp);
            letter |= c == CharCategory::letter;
            digit |= c == CharCategory::digit;
        }
        if (letter && digit) return false;
    }
    return true;
}

/// Fresh directory under the system temp path, removed on destruction.
struct TempDir {
    std::filesystem::path path;

    TempDir() {
        static std::mt19937_64 rng(std::random_device{}());
        path = std::filesystem::temp_directory_path() / ("pfxlm-test-" + std::to_string(rng()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

}  // namespace pfxlm::testing

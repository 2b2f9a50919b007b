#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pfxlm/tensor.hpp"

namespace pfxlm {

/// A token is a raw byte string; byte-level BPE never needs anything else.
using Token = std::string;

enum class CharCategory { letter, digit, whitespace, other };

/// Category of one Unicode scalar value (letter = L*, digit = N*).
CharCategory categorize(char32_t code_point);

/// Splits text into pre-tokenization units: maximal runs of letters, digits,
/// other non-space characters, or whitespace. A single ASCII space directly in
/// front of a non-whitespace run joins that run. Invalid UTF-8 bytes count as
/// "other", one byte at a time. Concatenating the units gives back `text`.
std::vector<std::string_view> pretokenize(std::string_view text);

/// `\xNN` for control, non-ASCII and '#' bytes, `\t` and `\\` for tab and backslash.
std::string escape_token(std::string_view token);
/// Inverse of escape_token. Throws ParseError on a malformed escape.
std::string unescape_token(std::string_view escaped);

struct MergeRule {
    Token left;
    Token right;

    Token merged() const { return left + right; }
    friend bool operator==(const MergeRule&, const MergeRule&) = default;
};

/// Ordered merges; a merge's rank is its position.
class MergeTable {
public:
    MergeTable() = default;
    /// Throws VocabularyError on a duplicate pair.
    explicit MergeTable(std::vector<MergeRule> rules);

    std::size_t size() const noexcept { return rules_.size(); }
    bool empty() const noexcept { return rules_.empty(); }
    const MergeRule& operator[](std::size_t rank) const { return rules_[rank]; }
    auto begin() const { return rules_.begin(); }
    auto end() const { return rules_.end(); }

    std::optional<std::size_t> rank(std::string_view left, std::string_view right) const;

private:
    std::vector<MergeRule> rules_;
    std::unordered_map<std::string, std::size_t> ranks_;
};

/// Bijection between tokens and ids. Regular tokens take ids 0..n-1; the
/// end-of-text and separator specials follow at n and n+1.
class Vocabulary {
public:
    static constexpr std::string_view kEndOfText = "<|endoftext|>";
    static constexpr std::string_view kSeparator = "<|sep|>";

    Vocabulary();  // the 256 single bytes
    /// Throws VocabularyError on duplicates or a missing single byte.
    explicit Vocabulary(std::vector<Token> regular_tokens);

    std::size_t size() const noexcept { return regular_.size() + 2; }
    std::size_t regular_size() const noexcept { return regular_.size(); }

    TokenId end_of_text() const noexcept { return static_cast<TokenId>(regular_.size()); }
    TokenId separator() const noexcept { return static_cast<TokenId>(regular_.size() + 1); }
    bool is_special(TokenId id) const noexcept { return id == end_of_text() || id == separator(); }

    /// Id of a regular token.
    std::optional<TokenId> find(std::string_view token) const;
    /// Token text; specials render as their marker strings. Throws VocabularyError.
    std::string_view token(TokenId id) const;

    std::span<const Token> regular_tokens() const noexcept { return regular_; }

private:
    std::vector<Token> regular_;
    std::unordered_map<std::string, TokenId> ids_;
};

/// Byte-level BPE encoder/decoder. Immutable after construction.
class Tokenizer {
public:
    Tokenizer() : Tokenizer(Vocabulary{}, MergeTable{}) {}
    /// Throws VocabularyError when a merge refers to a token missing from the vocabulary.
    Tokenizer(Vocabulary vocabulary, MergeTable merges);

    std::vector<TokenId> encode(std::string_view text) const;
    /// Exact byte inverse of encode. Throws VocabularyError on an unknown id.
    std::string decode(std::span<const TokenId> ids) const;

    const Vocabulary& vocabulary() const noexcept { return vocab_; }
    const MergeTable& merges() const noexcept { return merges_; }
    std::size_t vocab_size() const noexcept { return vocab_.size(); }
    TokenId end_of_text() const noexcept { return vocab_.end_of_text(); }
    TokenId separator() const noexcept { return vocab_.separator(); }

    void write_vocabulary(std::ostream& out) const;
    void write_merges(std::ostream& out) const;
    void save(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path) const;

private:
    void encode_unit(std::string_view unit, std::vector<TokenId>& out) const;

    Vocabulary vocab_;
    MergeTable merges_;
};

/// Learns `num_merges` merges by repeatedly merging the most frequent adjacent
/// pair inside pre-tokenization units. Ties go to the lexicographically
/// smallest (left, right) pair. Stops early when no pair remains.
Tokenizer train_merges(std::span<const std::string> corpus, std::size_t num_merges);

Vocabulary read_vocabulary(std::istream& in);
MergeTable read_merges(std::istream& in);
Tokenizer read_tokenizer(std::istream& vocab, std::istream& merges);
/// Reads the vocab-file and merges-file formats; throws ParseError or VocabularyError.
Tokenizer load_vocabulary(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path);

}  // namespace pfxlm

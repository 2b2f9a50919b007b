#include "pfxlm/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <unordered_set>

#include <unicode/uchar.h>
#include <unicode/utf8.h>

namespace pfxlm {

namespace {

std::string pair_key(std::string_view left, std::string_view right) {
    // Length prefix keeps the key unambiguous for arbitrary bytes.
    std::string key = std::to_string(left.size());
    key.push_back(':');
    key.append(left);
    key.append(right);
    return key;
}

struct CodeUnit {
    std::size_t begin;
    std::size_t end;
    CharCategory category;
    bool is_space;  // exactly U+0020
};

std::vector<CodeUnit> scan(std::string_view text) {
    std::vector<CodeUnit> units;
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(text.data());
    const auto length = static_cast<std::int32_t>(text.size());
    std::int32_t i = 0;
    while (i < length) {
        const std::int32_t start = i;
        UChar32 c = 0;
        U8_NEXT(bytes, i, length, c);
        if (c < 0) {
            // Invalid sequence: consume exactly one byte as its own "other" unit.
            i = start + 1;
            units.push_back({static_cast<std::size_t>(start), static_cast<std::size_t>(i), CharCategory::other, false});
            continue;
        }
        units.push_back({static_cast<std::size_t>(start), static_cast<std::size_t>(i),
                         categorize(static_cast<char32_t>(c)), c == 0x20});
    }
    return units;
}

}  // namespace

CharCategory categorize(char32_t code_point) {
    const auto c = static_cast<UChar32>(code_point);
    if (u_isUWhiteSpace(c)) return CharCategory::whitespace;
    switch (u_charType(c)) {
        case U_UPPERCASE_LETTER:
        case U_LOWERCASE_LETTER:
        case U_TITLECASE_LETTER:
        case U_MODIFIER_LETTER:
        case U_OTHER_LETTER:
            return CharCategory::letter;
        case U_DECIMAL_DIGIT_NUMBER:
        case U_LETTER_NUMBER:
        case U_OTHER_NUMBER:
            return CharCategory::digit;
        default:
            return CharCategory::other;
    }
}

std::vector<std::string_view> pretokenize(std::string_view text) {
    const auto cps = scan(text);
    std::vector<std::string_view> out;
    auto emit = [&](std::size_t first, std::size_t last) {  // code point range [first, last)
        const std::size_t b = cps[first].begin;
        const std::size_t e = cps[last - 1].end;
        out.push_back(text.substr(b, e - b));
    };
    auto run_end = [&](std::size_t from, CharCategory cat) {
        std::size_t j = from;
        while (j < cps.size() && cps[j].category == cat) ++j;
        return j;
    };

    std::size_t i = 0;
    while (i < cps.size()) {
        const CharCategory cat = cps[i].category;
        const std::size_t j = run_end(i, cat);
        if (cat != CharCategory::whitespace) {
            emit(i, j);
            i = j;
            continue;
        }
        // Space exception: a trailing ASCII space moves onto the following run.
        if (j < cps.size() && cps[j - 1].is_space) {
            if (j - 1 > i) emit(i, j - 1);
            const std::size_t k = run_end(j, cps[j].category);
            emit(j - 1, k);
            i = k;
        } else {
            emit(i, j);
            i = j;
        }
    }
    return out;
}

std::string escape_token(std::string_view token) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(token.size());
    for (char ch : token) {
        const auto b = static_cast<unsigned char>(ch);
        if (b == '\\') {
            out += "\\\\";
        } else if (b == '\t') {
            out += "\\t";
        } else if (b < 0x20 || b >= 0x7f || b == '#') {
            out += "\\x";
            out.push_back(kHex[b >> 4]);
            out.push_back(kHex[b & 0xf]);
        } else {
            out.push_back(ch);
        }
    }
    return out;
}

std::string unescape_token(std::string_view escaped) {
    auto hex_value = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    std::string out;
    for (std::size_t i = 0; i < escaped.size(); ++i) {
        if (escaped[i] != '\\') {
            out.push_back(escaped[i]);
            continue;
        }
        if (i + 1 >= escaped.size()) throw ParseError("dangling backslash in token");
        const char kind = escaped[++i];
        if (kind == '\\') {
            out.push_back('\\');
        } else if (kind == 't') {
            out.push_back('\t');
        } else if (kind == 'x') {
            if (i + 2 >= escaped.size()) throw ParseError("truncated \\x escape");
            const int hi = hex_value(escaped[i + 1]);
            const int lo = hex_value(escaped[i + 2]);
            if (hi < 0 || lo < 0) throw ParseError("bad \\x escape");
            out.push_back(static_cast<char>(hi * 16 + lo));
            i += 2;
        } else {
            throw ParseError(std::string("unknown escape \\") + kind);
        }
    }
    return out;
}

MergeTable::MergeTable(std::vector<MergeRule> rules) : rules_(std::move(rules)) {
    for (std::size_t r = 0; r < rules_.size(); ++r) {
        if (rules_[r].left.empty() || rules_[r].right.empty()) throw VocabularyError("merge with an empty side");
        auto [it, inserted] = ranks_.emplace(pair_key(rules_[r].left, rules_[r].right), r);
        if (!inserted) {
            throw VocabularyError("duplicate merge (" + escape_token(rules_[r].left) + ", " +
                                  escape_token(rules_[r].right) + ")");
        }
    }
}

std::optional<std::size_t> MergeTable::rank(std::string_view left, std::string_view right) const {
    auto it = ranks_.find(pair_key(left, right));
    if (it == ranks_.end()) return std::nullopt;
    return it->second;
}

namespace {

std::vector<Token> single_bytes() {
    std::vector<Token> bytes;
    bytes.reserve(256);
    for (int b = 0; b < 256; ++b) bytes.emplace_back(1, static_cast<char>(b));
    return bytes;
}

}  // namespace

Vocabulary::Vocabulary() : Vocabulary(single_bytes()) {}

Vocabulary::Vocabulary(std::vector<Token> regular_tokens) : regular_(std::move(regular_tokens)) {
    if (regular_.size() >= static_cast<std::size_t>(std::numeric_limits<TokenId>::max() - 2)) {
        throw VocabularyError("vocabulary too large");
    }
    for (std::size_t id = 0; id < regular_.size(); ++id) {
        if (regular_[id].empty()) throw VocabularyError("empty token at id " + std::to_string(id));
        auto [it, inserted] = ids_.emplace(regular_[id], static_cast<TokenId>(id));
        if (!inserted) throw VocabularyError("duplicate token " + escape_token(regular_[id]));
    }
    for (int b = 0; b < 256; ++b) {
        if (!ids_.contains(std::string(1, static_cast<char>(b)))) {
            throw VocabularyError("vocabulary lacks single byte " + escape_token(std::string(1, static_cast<char>(b))));
        }
    }
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
}

std::string_view Vocabulary::token(TokenId id) const {
    if (id == end_of_text()) return kEndOfText;
    if (id == separator()) return kSeparator;
    if (id < 0 || static_cast<std::size_t>(id) >= regular_.size()) {
        throw VocabularyError("unknown token id " + std::to_string(id));
    }
    return regular_[static_cast<std::size_t>(id)];
}

Tokenizer::Tokenizer(Vocabulary vocabulary, MergeTable merges) : vocab_(std::move(vocabulary)), merges_(std::move(merges)) {
    for (const auto& rule : merges_) {
        if (!vocab_.find(rule.left) || !vocab_.find(rule.right)) {
            throw VocabularyError("merge (" + escape_token(rule.left) + ", " + escape_token(rule.right) +
                                  ") refers to an unknown token");
        }
        if (!vocab_.find(rule.merged())) {
            throw VocabularyError("merge result " + escape_token(rule.merged()) + " missing from vocabulary");
        }
    }
}

void Tokenizer::encode_unit(std::string_view unit, std::vector<TokenId>& out) const {
    std::vector<std::string> symbols;
    symbols.reserve(unit.size());
    for (char ch : unit) symbols.emplace_back(1, ch);

    while (symbols.size() > 1) {
        std::size_t best_rank = std::numeric_limits<std::size_t>::max();
        for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
            if (auto r = merges_.rank(symbols[i], symbols[i + 1]); r && *r < best_rank) best_rank = *r;
        }
        if (best_rank == std::numeric_limits<std::size_t>::max()) break;
        const MergeRule& rule = merges_[best_rank];
        std::vector<std::string> next;
        next.reserve(symbols.size());
        for (std::size_t i = 0; i < symbols.size(); ++i) {
            if (i + 1 < symbols.size() && symbols[i] == rule.left && symbols[i + 1] == rule.right) {
                next.push_back(rule.merged());
                ++i;
            } else {
                next.push_back(std::move(symbols[i]));
            }
        }
        symbols = std::move(next);
    }
    for (const auto& s : symbols) out.push_back(*vocab_.find(s));
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
    std::vector<TokenId> ids;
    for (auto unit : pretokenize(text)) encode_unit(unit, ids);
    return ids;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) out.append(vocab_.token(id));
    return out;
}

void Tokenizer::write_vocabulary(std::ostream& out) const {
    const auto tokens = vocab_.regular_tokens();
    for (std::size_t id = 0; id < tokens.size(); ++id) out << id << '\t' << escape_token(tokens[id]) << '\n';
}

void Tokenizer::write_merges(std::ostream& out) const {
    out << "# pfxlm merges: " << merges_.size() << '\n';
    for (const auto& rule : merges_) out << escape_token(rule.left) << '\t' << escape_token(rule.right) << '\n';
}

void Tokenizer::save(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path) const {
    std::ofstream vocab(vocab_path, std::ios::binary);
    std::ofstream merges(merges_path, std::ios::binary);
    if (!vocab || !merges) throw Error("cannot write tokenizer files");
    write_vocabulary(vocab);
    write_merges(merges);
    if (!vocab || !merges) throw Error("failed writing tokenizer files");
}

Tokenizer train_merges(std::span<const std::string> corpus, std::size_t num_merges) {
    // Unit frequencies; std::map keeps the iteration order deterministic.
    std::map<std::string, std::size_t> unit_counts;
    for (const auto& text : corpus) {
        for (auto unit : pretokenize(text)) ++unit_counts[std::string(unit)];
    }
    struct Word {
        std::vector<std::string> symbols;
        std::size_t count;
    };
    std::vector<Word> words;
    words.reserve(unit_counts.size());
    for (const auto& [unit, count] : unit_counts) {
        Word w{{}, count};
        for (char ch : unit) w.symbols.emplace_back(1, ch);
        words.push_back(std::move(w));
    }

    std::vector<Token> tokens = single_bytes();
    std::unordered_set<std::string> known(tokens.begin(), tokens.end());
    std::vector<MergeRule> rules;

    for (std::size_t step = 0; step < num_merges; ++step) {
        std::map<std::pair<std::string, std::string>, std::size_t> pair_counts;
        for (const auto& w : words) {
            for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) pair_counts[{w.symbols[i], w.symbols[i + 1]}] += w.count;
        }
        if (pair_counts.empty()) break;
        // std::map iterates in lexicographic pair order, so the first maximum wins ties.
        auto best = pair_counts.begin();
        for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it) {
            if (it->second > best->second) best = it;
        }
        MergeRule rule{best->first.first, best->first.second};
        const Token merged = rule.merged();
        for (auto& w : words) {
            std::vector<std::string> next;
            next.reserve(w.symbols.size());
            for (std::size_t i = 0; i < w.symbols.size(); ++i) {
                if (i + 1 < w.symbols.size() && w.symbols[i] == rule.left && w.symbols[i + 1] == rule.right) {
                    next.push_back(merged);
                    ++i;
                } else {
                    next.push_back(std::move(w.symbols[i]));
                }
            }
            w.symbols = std::move(next);
        }
        if (known.insert(merged).second) tokens.push_back(merged);
        rules.push_back(std::move(rule));
    }
    return Tokenizer(Vocabulary(std::move(tokens)), MergeTable(std::move(rules)));
}

namespace {

bool next_line(std::istream& in, std::string& line, std::size_t& number) {
    if (!std::getline(in, line)) return false;
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
}

}  // namespace

Vocabulary read_vocabulary(std::istream& in) {
    std::vector<std::optional<Token>> by_id;
    std::unordered_map<std::string, std::size_t> seen;
    std::string line;
    std::size_t number = 0;
    while (next_line(in, line, number)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw ParseError("vocab record without TAB", number);
        std::size_t id = 0;
        try {
            std::size_t used = 0;
            id = std::stoul(line.substr(0, tab), &used);
            if (used != tab) throw ParseError("bad token id", number);
        } catch (const std::logic_error&) {
            throw ParseError("bad token id", number);
        }
        Token token;
        try {
            token = unescape_token(std::string_view(line).substr(tab + 1));
        } catch (const ParseError& e) {
            throw ParseError(e.what(), number);
        }
        if (token.empty()) throw ParseError("empty token", number);
        if (id >= by_id.size()) by_id.resize(id + 1);
        if (by_id[id]) throw ParseError("duplicate id " + std::to_string(id), number);
        if (!seen.emplace(token, number).second) throw ParseError("duplicate token " + escape_token(token), number);
        by_id[id] = std::move(token);
    }
    std::vector<Token> tokens;
    tokens.reserve(by_id.size());
    for (std::size_t id = 0; id < by_id.size(); ++id) {
        if (!by_id[id]) throw ParseError("vocabulary ids are not contiguous: missing id " + std::to_string(id));
        tokens.push_back(std::move(*by_id[id]));
    }
    try {
        return Vocabulary(std::move(tokens));
    } catch (const VocabularyError& e) {
        throw ParseError(e.what());
    }
}

MergeTable read_merges(std::istream& in) {
    std::vector<MergeRule> rules;
    std::unordered_map<std::string, std::size_t> seen;
    std::string line;
    std::size_t number = 0;
    while (next_line(in, line, number)) {
        if (line.empty() || line.front() == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
            throw ParseError("merge line must hold exactly two TAB-separated tokens", number);
        }
        MergeRule rule;
        try {
            rule.left = unescape_token(std::string_view(line).substr(0, tab));
            rule.right = unescape_token(std::string_view(line).substr(tab + 1));
        } catch (const ParseError& e) {
            throw ParseError(e.what(), number);
        }
        if (rule.left.empty() || rule.right.empty()) throw ParseError("merge with an empty side", number);
        if (!seen.emplace(pair_key(rule.left, rule.right), number).second) {
            throw ParseError("duplicate merge (" + escape_token(rule.left) + ", " + escape_token(rule.right) + ")",
                             number);
        }
        rules.push_back(std::move(rule));
    }
    return MergeTable(std::move(rules));
}

Tokenizer read_tokenizer(std::istream& vocab, std::istream& merges) {
    Vocabulary v = read_vocabulary(vocab);
    MergeTable m = read_merges(merges);
    try {
        return Tokenizer(std::move(v), std::move(m));
    } catch (const VocabularyError& e) {
        throw ParseError(e.what());
    }
}

Tokenizer load_vocabulary(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path) {
    std::ifstream vocab(vocab_path, std::ios::binary);
    if (!vocab) throw ParseError("cannot open vocab file " + vocab_path.string());
    std::ifstream merges(merges_path, std::ios::binary);
    if (!merges) throw ParseError("cannot open merges file " + merges_path.string());
    return read_tokenizer(vocab, merges);
}

}  // namespace pfxlm

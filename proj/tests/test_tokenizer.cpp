#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "pfxlm/tokenizer.hpp"
#include "test_support.hpp"

using namespace pfxlm;

TEST_SUITE("tokenizer") {

TEST_CASE("pretokenize splits by category with the space exception") {
    const auto units = pretokenize("Dose 20mg,  twice!");
    const std::vector<std::string_view> expected{"Dose", " 20", "mg", ",", " ", " twice", "!"};
    CHECK(units == expected);

    CHECK(pretokenize("").empty());
    const std::vector<std::string_view> trailing{"a", "  "};
    CHECK(pretokenize("a  ") == trailing);
    const std::vector<std::string_view> tabbed{"a", "\t", "b"};
    CHECK(pretokenize("a\tb") == tabbed);
}

TEST_CASE("pretokenize handles multi-byte and invalid UTF-8") {
    const std::string text = "\xC3\xA9t\xC3\xA9 \xE2\x82\xAC" "5\xFF\xFE";
    std::string joined;
    for (auto u : pretokenize(text)) joined += u;
    CHECK(joined == text);
    const auto units = pretokenize(text);
    CHECK(units[0] == "\xC3\xA9t\xC3\xA9");
    CHECK(units.back() == "\xFF\xFE");
}

TEST_CASE("categorize") {
    CHECK(categorize(U'a') == CharCategory::letter);
    CHECK(categorize(U'é') == CharCategory::letter);
    CHECK(categorize(U'7') == CharCategory::digit);
    CHECK(categorize(U'٣') == CharCategory::digit);
    CHECK(categorize(U' ') == CharCategory::whitespace);
    CHECK(categorize(U'±') == CharCategory::other);
}

TEST_CASE("escape and unescape") {
    const std::string all_bytes = [] {
        std::string s;
        for (int b = 0; b < 256; ++b) s.push_back(static_cast<char>(b));
        return s;
    }();
    const auto escaped = escape_token(all_bytes);
    CHECK(escaped.find('\t') == std::string::npos);
    CHECK(escaped.find('\n') == std::string::npos);
    CHECK(escaped.find('#') == std::string::npos);
    CHECK(unescape_token(escaped) == all_bytes);
    CHECK(escape_token("a\tb\\c") == "a\\tb\\\\c");
    CHECK_THROWS_AS(unescape_token("\\x4"), ParseError);
    CHECK_THROWS_AS(unescape_token("abc\\"), ParseError);
    CHECK_THROWS_AS(unescape_token("\\q"), ParseError);
}

TEST_CASE("encode and decode basics") {
    const Tokenizer bytes;
    CHECK(bytes.encode("").empty());
    CHECK(bytes.decode(std::vector<TokenId>{}).empty());
    CHECK(bytes.vocab_size() == 258);
    CHECK(bytes.end_of_text() == 256);
    CHECK(bytes.separator() == 257);
    CHECK(bytes.encode("AB") == std::vector<TokenId>{65, 66});
    const std::vector<TokenId> bad{999};
    CHECK_THROWS_AS(bytes.decode(bad), VocabularyError);

    const std::string s = "Varenicline 0.5 mg \xC2\xB1 placebo";
    CHECK(bytes.decode(bytes.encode(s)) == s);
}

TEST_CASE("train_merges hand-run examples") {
    const std::vector<std::string> low{"low low lower"};
    const auto tok = train_merges(low, 2);
    REQUIRE(tok.merges().size() == 2);
    CHECK(tok.merges()[0] == MergeRule{"l", "o"});
    CHECK(tok.merges()[1] == MergeRule{"lo", "w"});
    CHECK(tok.encode("low").size() == 1);

    const std::vector<std::string> aaab{"aaab"};
    const auto one = train_merges(aaab, 1);
    REQUIRE(one.merges().size() == 1);
    CHECK(one.merges()[0] == MergeRule{"a", "a"});

    const auto none = train_merges(aaab, 0);
    CHECK(none.vocab_size() == 258);
    CHECK(none.merges().empty());
}

TEST_CASE("train_merges stops when no pair is left") {
    const std::vector<std::string> corpus{"ab"};
    const auto tok = train_merges(corpus, 50);
    CHECK(tok.merges().size() == 1);
    CHECK(tok.encode("ab").size() == 1);
}

TEST_CASE("trained tokenizer round-trips its corpus and keeps categories apart") {
    const auto texts = testing::excerpt_texts();
    const auto tok = train_merges(texts, 200);
    CHECK(tok.merges().size() == 200);
    for (const auto& t : texts) {
        const auto ids = tok.encode(t);
        CHECK(tok.decode(ids) == t);
        CHECK(testing::no_mixed_token(tok, ids));
    }
    const std::string mixed = "abc123 x9y 3rd A1c";
    CHECK(testing::no_mixed_token(tok, tok.encode(mixed)));
}

TEST_CASE("round-trip holds on random byte strings") {
    const auto tok = train_merges(testing::excerpt_texts(), 200);
    std::mt19937_64 rng(1234);
    for (const auto& s : testing::random_byte_strings(rng, 300)) {
        const auto ids = tok.encode(s);
        CHECK(tok.decode(ids) == s);
        CHECK(testing::no_mixed_token(tok, ids));
    }
}

TEST_CASE("encode is prefix stable at unit boundaries") {
    const auto tok = train_merges(testing::excerpt_texts(), 200);
    const std::vector<std::pair<std::string, std::string>> cases{
        {"craving responses", "to smoking"}, {"p =", "0.07"}, {"Both roxatidine", "and omeprazole"}};
    for (const auto& [a, b] : cases) {
        auto left = tok.encode(a);
        const auto right = tok.encode(" " + b);
        left.insert(left.end(), right.begin(), right.end());
        CHECK(tok.encode(a + " " + b) == left);
    }
}

TEST_CASE("vocabulary invariants") {
    CHECK(Vocabulary().size() == 258);
    std::vector<Token> missing;
    for (int b = 1; b < 256; ++b) missing.emplace_back(1, static_cast<char>(b));
    CHECK_THROWS_AS(Vocabulary{missing}, VocabularyError);

    const Vocabulary byte_vocab;
    const auto bytes = byte_vocab.regular_tokens();
    std::vector<Token> dup(bytes.begin(), bytes.end());
    dup.emplace_back("a");
    CHECK_THROWS_AS(Vocabulary{dup}, VocabularyError);

    const Vocabulary v;
    CHECK(v.is_special(v.end_of_text()));
    CHECK(v.is_special(v.separator()));
    CHECK(v.token(v.separator()) == Vocabulary::kSeparator);
    CHECK_THROWS_AS(v.token(258), VocabularyError);
}

TEST_CASE("save then load gives identical encodings") {
    const auto texts = testing::excerpt_texts();
    const auto tok = train_merges(texts, 150);
    testing::TempDir dir;
    tok.save(dir.path / "t.vocab", dir.path / "t.merges");
    const auto loaded = load_vocabulary(dir.path / "t.vocab", dir.path / "t.merges");
    CHECK(loaded.vocab_size() == tok.vocab_size());
    for (const auto& t : texts) CHECK(loaded.encode(t) == tok.encode(t));
}

TEST_CASE("vocab file with 256 bytes and one merge") {
    std::ostringstream vocab;
    for (int b = 0; b < 256; ++b) vocab << b << '\t' << escape_token(std::string(1, static_cast<char>(b))) << '\n';
    vocab << "256\tab\n";
    std::istringstream vin(vocab.str());
    std::istringstream min("# one merge\na\tb\n");
    const auto tok = read_tokenizer(vin, min);
    CHECK(tok.vocabulary().regular_size() == 257);
    CHECK(tok.vocab_size() == 259);
    CHECK(tok.encode("ab") == std::vector<TokenId>{256});
}

TEST_CASE("malformed tokenizer files") {
    std::ostringstream vocab;
    for (int b = 0; b < 256; ++b) vocab << b << '\t' << escape_token(std::string(1, static_cast<char>(b))) << '\n';
    const std::string base = vocab.str();

    SUBCASE("duplicate merge") {
        std::istringstream v(base + "256\tab\n"), m("a\tb\na\tb\n");
        CHECK_THROWS_AS(read_tokenizer(v, m), ParseError);
    }
    SUBCASE("merge referencing an unknown token") {
        std::istringstream v(base), m("a\tb\n");
        CHECK_THROWS_AS(read_tokenizer(v, m), ParseError);
    }
    SUBCASE("duplicate id") {
        std::istringstream v(base + "255\tzz\n"), m("");
        CHECK_THROWS_AS(read_tokenizer(v, m), ParseError);
    }
    SUBCASE("missing TAB") {
        std::istringstream v(base + "256 ab\n"), m("");
        try {
            read_tokenizer(v, m);
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            CHECK(e.line() == 257);
        }
    }
    SUBCASE("merge line with one token") {
        std::istringstream v(base), m("ab\n");
        CHECK_THROWS_AS(read_tokenizer(v, m), ParseError);
    }
}

}  // TEST_SUITE

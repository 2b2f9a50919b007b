#include <doctest.h>

#include <random>
#include <sstream>

#include "human_eval.hpp"
#include "pfxlm/errors.hpp"
#include "pfxlm/rouge.hpp"

using namespace pfxlm;

namespace {

// Longest common subsequence by enumerating every subsequence of the shorter side.
std::size_t brute_force_lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    const auto& shorter = a.size() <= b.size() ? a : b;
    const auto& longer = a.size() <= b.size() ? b : a;
    std::size_t best = 0;
    for (std::uint32_t bits = 0; bits < (1u << shorter.size()); ++bits) {
        std::size_t j = 0, len = 0;
        bool ok = true;
        for (std::size_t i = 0; i < shorter.size() && ok; ++i) {
            if (!(bits >> i & 1u)) continue;
            while (j < longer.size() && longer[j] != shorter[i]) ++j;
            if (j == longer.size()) ok = false;
            else {
                ++j;
                ++len;
            }
        }
        if (ok) best = std::max(best, len);
    }
    return best;
}

std::string random_sentence(std::mt19937_64& rng, std::size_t max_len) {
    static const std::vector<std::string> words{"the", "drug", "Reduced", "pain", "a", "b", "c", "of"};
    std::uniform_int_distribution<std::size_t> len(0, max_len), pick(0, words.size() - 1);
    std::string s;
    const auto n = len(rng);
    for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + words[pick(rng)];
    return s;
}

}  // namespace

TEST_SUITE("rouge") {

TEST_CASE("hand-computed ROUGE-N") {
    const auto r1 = rouge_n("the cat sat", "the cat sat down", 1);
    CHECK(r1.precision == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(r1.recall == doctest::Approx(0.75).epsilon(1e-4));
    CHECK(r1.f1 == doctest::Approx(0.857142857).epsilon(1e-4));
    const auto r2 = rouge_n("the cat sat", "the cat sat down", 2);
    CHECK(r2.precision == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(r2.recall == doctest::Approx(2.0 / 3.0).epsilon(1e-4));
    CHECK(r2.f1 == doctest::Approx(0.8).epsilon(1e-4));

    const auto same = rouge_n("Drug A works", "Drug A works", 2);
    CHECK(same.f1 == 1.0);
    const auto clipped = rouge_n("the the the", "the cat", 1);
    CHECK(clipped.precision == doctest::Approx(1.0 / 3.0));
    CHECK(clipped.recall == doctest::Approx(0.5));

    const auto empty = rouge_n("", "the cat", 1);
    CHECK(empty.f1 == 0.0);
    CHECK(rouge_n("one", "one", 2).f1 == 0.0);
    CHECK_THROWS_AS(rouge_n("a", "a", 3), UsageError);
}

TEST_CASE("hand-computed ROUGE-L") {
    const auto l = rouge_l("a c b", "a b c");
    CHECK(l.precision == doctest::Approx(2.0 / 3.0).epsilon(1e-4));
    CHECK(l.recall == doctest::Approx(2.0 / 3.0).epsilon(1e-4));
    CHECK(l.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-4));
    CHECK(rouge_l("x y", "x y").f1 == 1.0);
    CHECK(rouge_l("", "").f1 == 0.0);
}

TEST_CASE("LCS dynamic programme equals brute force") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 500; ++trial) {
        const auto a = rouge_tokens(random_sentence(rng, 10));
        const auto b = rouge_tokens(random_sentence(rng, 10));
        CHECK(lcs_length(a, b) == brute_force_lcs(a, b));
    }
}

TEST_CASE("symmetry, casing and the ROUGE-L bound") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        const auto c = random_sentence(rng, 10), r = random_sentence(rng, 10);
        for (int n : {1, 2}) {
            const auto ab = rouge_n(c, r, n), ba = rouge_n(r, c, n);
            CHECK(ab.precision == ba.recall);
            CHECK(ab.recall == ba.precision);
        }
        const auto lab = rouge_l(c, r), lba = rouge_l(r, c);
        CHECK(lab.precision == lba.recall);
        CHECK(lab.f1 <= rouge_n(c, r, 1).f1 + 1e-12);

        std::string upper = c;
        for (auto& ch : upper) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
        CHECK(rouge_l(upper, r).f1 == lab.f1);
        CHECK(rouge_n(upper, r, 2).f1 == rouge_n(c, r, 2).f1);
    }
}

TEST_CASE("score_run") {
    const std::vector<std::string> refs{"Smoking cues raise craving .", "Drug A works"};
    const std::vector<ScoredOutput> same{{refs[0], 0}, {refs[1], 0}};
    const auto perfect = score_run(same, refs);
    CHECK(perfect.rouge1 == doctest::Approx(100.0));
    CHECK(perfect.rouge2 == doctest::Approx(100.0));
    CHECK(perfect.rougeL == doctest::Approx(100.0));
    CHECK(perfect.count == 2);

    const std::vector<ScoredOutput> hinted{{"Smoking X", 1}};
    const std::vector<std::string> hinted_ref{"Smoking Y"};
    const auto stripped = score_run(hinted, hinted_ref);
    CHECK(stripped.rouge1 == 0.0);
    CHECK(stripped.rougeL == 0.0);

    CHECK(strip_words("  a  b c ", 1) == "b c");
    CHECK(strip_words("a", 3).empty());

    const std::vector<std::string> one_ref{"x"};
    CHECK_THROWS_AS(score_run(same, one_ref), UsageError);
}

TEST_CASE("annotation table fixture reproduces the accuracy column") {
    std::istringstream in(testing::annotation_csv());
    const auto records = read_annotations_csv(in);
    CHECK(records.size() == 200);
    const auto summary = aggregate_annotations(records);
    REQUIRE(summary.size() == 4);
    const std::vector<int> expected{36, 54, 64, 86};
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(summary[i].system == testing::annotation_table()[i].system);
        CHECK(summary[i].total == 50);
        std::size_t sum = 0;
        for (std::size_t k = 0; k < 5; ++k) {
            CHECK(summary[i].counts[k] == static_cast<std::size_t>(testing::annotation_table()[i].counts[k]));
            sum += summary[i].counts[k];
        }
        CHECK(sum == 50);
        CHECK(summary[i].accuracy_percent() == expected[i]);
        CHECK(summary[i].accuracy >= 0.0);
        CHECK(summary[i].accuracy <= 1.0);
    }
    const auto table = format_annotation_table(summary);
    CHECK(table.find("36%") != std::string::npos);
    CHECK(table.find("86%") != std::string::npos);
}

TEST_CASE("all-NA annotations give zero accuracy") {
    const std::vector<AnnotationRecord> records{{"s", "1", Verdict::na}, {"s", "2", Verdict::na}};
    const auto summary = aggregate_annotations(records);
    REQUIRE(summary.size() == 1);
    CHECK(summary[0].accuracy_percent() == 0);
    CHECK(aggregate_annotations({}).empty());
}

TEST_CASE("verdict names") {
    CHECK(parse_verdict("tp") == Verdict::tp);
    CHECK(parse_verdict("NA") == Verdict::na);
    CHECK_FALSE(parse_verdict("maybe").has_value());
    CHECK(verdict_name(Verdict::fn) == "FN");
}

TEST_CASE("ratings") {
    const std::vector<RatingRecord> two{{"s", "1", 3, 4, 3}, {"s", "2", 4, 4, 4}};
    const auto r = aggregate_ratings(two);
    REQUIRE(r.size() == 1);
    CHECK(r[0].correctness == doctest::Approx(3.5));
    CHECK(r[0].quality == doctest::Approx(4.0));
    CHECK(r[0].overall == doctest::Approx(3.5));

    const std::vector<RatingRecord> fives(7, RatingRecord{"t", "x", 5, 5, 5});
    CHECK(aggregate_ratings(fives)[0].overall == 5.0);

    std::istringstream in(testing::rating_csv());
    const auto fifty = aggregate_ratings(read_ratings_csv(in));
    REQUIRE(fifty.size() == 1);
    CHECK(fifty[0].total == 50);
    CHECK(fifty[0].correctness == doctest::Approx(3.42));
    CHECK(fifty[0].quality == doctest::Approx(3.66));
    CHECK(fifty[0].overall == doctest::Approx(3.52));
    CHECK(format_rating_table(fifty).find("3.42") != std::string::npos);
}

TEST_CASE("malformed CSV") {
    std::istringstream bad_verdict("system,example_id,verdict\nA,1,TP\nA,2,YES\n");
    try {
        read_annotations_csv(bad_verdict);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
    std::istringstream out_of_range("A,1,3,6,2\n");
    CHECK_THROWS_AS(read_ratings_csv(out_of_range), ParseError);
    std::istringstream short_row("A,1\n");
    CHECK_THROWS_AS(read_annotations_csv(short_row), ParseError);
}

TEST_CASE("rouge table layout") {
    const std::vector<std::pair<std::string, RunScores>> rows{{"run", {31.614, 11.875, 26.71, 3}}};
    const auto table = format_rouge_table(rows);
    CHECK(table.find("ROUGE-1") != std::string::npos);
    CHECK(table.find("31.61") != std::string::npos);
    CHECK(table.find("11.88") != std::string::npos);
}

}  // TEST_SUITE

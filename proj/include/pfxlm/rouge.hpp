#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pfxlm {

struct RougeScore {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
};

/// Lower-cased (ASCII) whitespace tokens.
std::vector<std::string> rouge_tokens(std::string_view text);

/// Clipped n-gram overlap for n in {1, 2}; all zeros when either side has no
/// n-grams. Throws UsageError for any other n.
RougeScore rouge_n(std::string_view candidate, std::string_view reference, int n);

/// Longest-common-subsequence precision, recall and F1 over rouge_tokens.
RougeScore rouge_l(std::string_view candidate, std::string_view reference);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

/// Drops the first `count` whitespace words and rejoins the rest with spaces.
std::string strip_words(std::string_view text, std::size_t count);

struct ScoredOutput {
    std::string text;
    std::size_t n_hints = 0;
};

/// Corpus means of per-example F1, times 100.
struct RunScores {
    double rouge1 = 0;
    double rouge2 = 0;
    double rougeL = 0;
    std::size_t count = 0;
};

/// Strips the first n_hints words from each candidate and its reference, then
/// averages the F1 scores. Throws UsageError when the lists differ in length.
RunScores score_run(std::span<const ScoredOutput> outputs, std::span<const std::string> references);

enum class Verdict { tp, tn, fp, fn, na };

std::string_view verdict_name(Verdict verdict);
/// Case-insensitive "TP", "TN", "FP", "FN" or "NA".
std::optional<Verdict> parse_verdict(std::string_view text);

struct AnnotationRecord {
    std::string system;
    std::string example_id;
    Verdict verdict = Verdict::na;
};

struct RatingRecord {
    std::string system;
    std::string example_id;
    int correctness = 1;
    int quality = 1;
    int overall = 1;
};

struct AnnotationSummary {
    std::string system;
    std::array<std::size_t, 5> counts{};  // indexed by Verdict
    std::size_t total = 0;
    double accuracy = 0;  // (TP + TN) / total

    std::size_t count(Verdict v) const { return counts[static_cast<std::size_t>(v)]; }
    /// Accuracy rounded to a whole percent.
    int accuracy_percent() const;
};

struct RatingSummary {
    std::string system;
    std::size_t total = 0;
    double correctness = 0;
    double quality = 0;
    double overall = 0;
};

/// One summary per system, in order of first appearance.
std::vector<AnnotationSummary> aggregate_annotations(std::span<const AnnotationRecord> records);
std::vector<RatingSummary> aggregate_ratings(std::span<const RatingRecord> records);

/// CSV `system,example_id,verdict`. A leading header row starting with
/// "system" is skipped. Throws ParseError with the line number.
std::vector<AnnotationRecord> read_annotations_csv(std::istream& in);
std::vector<AnnotationRecord> read_annotations_csv(const std::filesystem::path& path);

/// CSV `system,example_id,correctness,quality,overall`, ratings in 1..5.
std::vector<RatingRecord> read_ratings_csv(std::istream& in);
std::vector<RatingRecord> read_ratings_csv(const std::filesystem::path& path);

/// Plain-text tables: ROUGE columns, verdict counts with accuracy, Likert means.
std::string format_rouge_table(std::span<const std::pair<std::string, RunScores>> rows);
std::string format_annotation_table(std::span<const AnnotationSummary> rows);
std::string format_rating_table(std::span<const RatingSummary> rows);

}  // namespace pfxlm

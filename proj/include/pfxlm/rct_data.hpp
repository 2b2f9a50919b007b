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

/// Sentence labels of the PubMed RCT corpus.
enum class Section { background, objective, methods, results, conclusions };

inline constexpr std::array<Section, 5> kAllSections{Section::background, Section::objective, Section::methods,
                                                     Section::results, Section::conclusions};

/// Canonical upper-case name, e.g. "RESULTS".
std::string_view section_name(Section section);
/// Case-insensitive.
std::optional<Section> parse_section(std::string_view name);

/// Set of section labels.
class SectionSet {
public:
    SectionSet() = default;
    SectionSet(std::initializer_list<Section> sections);

    void insert(Section s) { bits_[static_cast<std::size_t>(s)] = true; }
    bool contains(Section s) const { return bits_[static_cast<std::size_t>(s)]; }
    bool empty() const;
    /// Members in canonical order.
    std::vector<Section> members() const;

    /// Comma-separated, case-insensitive ("background,objective,results").
    /// Throws UsageError on an unknown or empty list.
    static SectionSet parse(std::string_view list);

    friend bool operator==(const SectionSet&, const SectionSet&) = default;

private:
    std::array<bool, 5> bits_{};
};

/// BACKGROUND, OBJECTIVE and RESULTS.
SectionSet default_source_sections();

struct LabeledSentence {
    Section label;
    std::string text;
};

struct RctAbstract {
    std::string pmid;
    std::vector<LabeledSentence> sentences;
};

/// One conclusion-generation pair.
struct RctExample {
    std::string pmid;
    std::string source_text;
    std::string target_text;
    std::vector<Section> sections_used;
    std::size_t source_sentences = 0;
    std::size_t target_sentences = 0;
};

/// Streaming reader for the labeled-sentence layout:
///
///     ###<pmid>
///     <LABEL><TAB><sentence>
///     ...
///     <blank line>
///
/// Throws ParseError (with the line number) on a line without TAB, an unknown
/// label, a sentence outside a record, or a record with no sentences.
class CorpusReader {
public:
    explicit CorpusReader(std::istream& in) : in_(in) {}

    std::optional<RctAbstract> next();

private:
    std::istream& in_;
    std::size_t line_no_ = 0;
    std::optional<std::string> pending_pmid_;
    std::size_t pending_line_ = 0;
};

std::vector<RctAbstract> parse_corpus(std::istream& in);
std::vector<RctAbstract> parse_corpus(const std::filesystem::path& path);

/// Inverse of parse_corpus for well-formed input.
void write_corpus(std::ostream& out, std::span<const RctAbstract> abstracts);

/// Source = in-order sentences whose label is in `sections`, target = the
/// CONCLUSIONS sentences, each joined by single spaces. Returns nullopt when
/// either side would be empty. Throws UsageError if `sections` is empty or
/// contains CONCLUSIONS.
std::optional<RctExample> to_conclusion_task(const RctAbstract& abstract, const SectionSet& sections);

struct ConclusionTask {
    std::vector<RctExample> examples;
    std::size_t skipped_no_conclusion = 0;
    std::size_t skipped_no_source = 0;
};

ConclusionTask build_conclusion_task(std::span<const RctAbstract> abstracts, const SectionSet& sections);

struct CorpusStats {
    std::size_t count = 0;
    double mean_source_words = 0;
    double mean_source_sentences = 0;
    double mean_target_words = 0;
    double mean_target_sentences = 0;
};

/// Means are rounded to one decimal.
CorpusStats corpus_stats(std::span<const RctExample> examples);

/// Maximal runs of non-whitespace.
std::vector<std::string> split_words(std::string_view text);
std::size_t count_words(std::string_view text);
std::string join_words(std::span<const std::string> words);

/// JSON-lines with fields pmid, source, target, sections_used (plus sentence counts).
void write_examples_jsonl(std::ostream& out, std::span<const RctExample> examples);
std::vector<RctExample> read_examples_jsonl(std::istream& in);
std::vector<RctExample> read_examples_jsonl(const std::filesystem::path& path);

}  // namespace pfxlm

#include "pfxlm/rct_data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "pfxlm/errors.hpp"

namespace pfxlm {

namespace {

constexpr std::array<std::string_view, 5> kSectionNames{"BACKGROUND", "OBJECTIVE", "METHODS", "RESULTS",
                                                        "CONCLUSIONS"};

std::string upper(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::toupper(c); });
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

}  // namespace

std::string_view section_name(Section section) {
    return kSectionNames[static_cast<std::size_t>(section)];
}

std::optional<Section> parse_section(std::string_view name) {
    const std::string key = upper(trim(name));
    for (std::size_t i = 0; i < kSectionNames.size(); ++i) {
        if (key == kSectionNames[i]) return static_cast<Section>(i);
    }
    return std::nullopt;
}

SectionSet::SectionSet(std::initializer_list<Section> sections) {
    for (Section s : sections) insert(s);
}

bool SectionSet::empty() const {
    return std::none_of(bits_.begin(), bits_.end(), [](bool b) { return b; });
}

std::vector<Section> SectionSet::members() const {
    std::vector<Section> out;
    for (Section s : kAllSections) {
        if (contains(s)) out.push_back(s);
    }
    return out;
}

SectionSet SectionSet::parse(std::string_view list) {
    SectionSet set;
    std::size_t start = 0;
    while (start <= list.size()) {
        const auto comma = list.find(',', start);
        const auto item = list.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
        if (!trim(item).empty()) {
            auto section = parse_section(item);
            if (!section) throw UsageError("unknown section '" + std::string(trim(item)) + "'");
            set.insert(*section);
        }
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    if (set.empty()) throw UsageError("empty section list");
    return set;
}

SectionSet default_source_sections() {
    return {Section::background, Section::objective, Section::results};
}

std::optional<RctAbstract> CorpusReader::next() {
    std::optional<RctAbstract> current;
    std::size_t header_line = 0;
    if (pending_pmid_) {
        current = RctAbstract{std::move(*pending_pmid_), {}};
        header_line = pending_line_;
        pending_pmid_.reset();
    }
    std::string line;
    while (std::getline(in_, line)) {
        ++line_no_;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        if (line.rfind("###", 0) == 0) {
            std::string pmid(trim(std::string_view(line).substr(3)));
            if (current) {
                if (current->sentences.empty()) throw ParseError("record ###" + current->pmid + " has no sentences", header_line);
                pending_pmid_ = std::move(pmid);
                pending_line_ = line_no_;
                return current;
            }
            current = RctAbstract{std::move(pmid), {}};
            header_line = line_no_;
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw ParseError("sentence line without TAB", line_no_);
        if (!current) throw ParseError("sentence before the first ### record header", line_no_);
        auto label = parse_section(std::string_view(line).substr(0, tab));
        if (!label) throw ParseError("unknown label '" + line.substr(0, tab) + "'", line_no_);
        current->sentences.push_back({*label, line.substr(tab + 1)});
    }
    if (current && current->sentences.empty()) {
        throw ParseError("record ###" + current->pmid + " has no sentences", header_line);
    }
    return current;
}

std::vector<RctAbstract> parse_corpus(std::istream& in) {
    CorpusReader reader(in);
    std::vector<RctAbstract> out;
    while (auto abstract = reader.next()) out.push_back(std::move(*abstract));
    return out;
}

std::vector<RctAbstract> parse_corpus(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open corpus " + path.string());
    return parse_corpus(in);
}

void write_corpus(std::ostream& out, std::span<const RctAbstract> abstracts) {
    for (const auto& a : abstracts) {
        out << "###" << a.pmid << '\n';
        for (const auto& s : a.sentences) out << section_name(s.label) << '\t' << s.text << '\n';
        out << '\n';
    }
}

std::optional<RctExample> to_conclusion_task(const RctAbstract& abstract, const SectionSet& sections) {
    if (sections.empty()) throw UsageError("no source sections selected");
    if (sections.contains(Section::conclusions)) throw UsageError("CONCLUSIONS cannot be a source section");

    std::vector<std::string> source;
    std::vector<std::string> target;
    for (const auto& s : abstract.sentences) {
        if (s.label == Section::conclusions) {
            target.push_back(s.text);
        } else if (sections.contains(s.label)) {
            source.push_back(s.text);
        }
    }
    if (source.empty() || target.empty()) return std::nullopt;

    RctExample ex;
    ex.pmid = abstract.pmid;
    ex.source_text = join_words(source);
    ex.target_text = join_words(target);
    ex.sections_used = sections.members();
    ex.source_sentences = source.size();
    ex.target_sentences = target.size();
    if (trim(ex.source_text).empty() || trim(ex.target_text).empty()) return std::nullopt;
    return ex;
}

ConclusionTask build_conclusion_task(std::span<const RctAbstract> abstracts, const SectionSet& sections) {
    ConclusionTask task;
    for (const auto& a : abstracts) {
        if (auto ex = to_conclusion_task(a, sections)) {
            task.examples.push_back(std::move(*ex));
            continue;
        }
        const bool has_conclusion = std::any_of(a.sentences.begin(), a.sentences.end(),
                                                [](const LabeledSentence& s) { return s.label == Section::conclusions; });
        if (!has_conclusion) {
            ++task.skipped_no_conclusion;
        } else {
            ++task.skipped_no_source;
        }
    }
    return task;
}

CorpusStats corpus_stats(std::span<const RctExample> examples) {
    CorpusStats stats;
    stats.count = examples.size();
    if (examples.empty()) return stats;
    double src_words = 0, src_sents = 0, tgt_words = 0, tgt_sents = 0;
    for (const auto& ex : examples) {
        src_words += static_cast<double>(count_words(ex.source_text));
        tgt_words += static_cast<double>(count_words(ex.target_text));
        src_sents += static_cast<double>(ex.source_sentences);
        tgt_sents += static_cast<double>(ex.target_sentences);
    }
    const auto n = static_cast<double>(examples.size());
    auto one_decimal = [n](double total) { return std::round(total / n * 10.0) / 10.0; };
    stats.mean_source_words = one_decimal(src_words);
    stats.mean_source_sentences = one_decimal(src_sents);
    stats.mean_target_words = one_decimal(tgt_words);
    stats.mean_target_sentences = one_decimal(tgt_sents);
    return stats;
}

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        const std::size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i > start) words.emplace_back(text.substr(start, i - start));
    }
    return words;
}

std::size_t count_words(std::string_view text) {
    std::size_t n = 0;
    bool in_word = false;
    for (char c : text) {
        const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
        if (!space && !in_word) ++n;
        in_word = !space;
    }
    return n;
}

std::string join_words(std::span<const std::string> words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out.push_back(' ');
        out += words[i];
    }
    return out;
}

void write_examples_jsonl(std::ostream& out, std::span<const RctExample> examples) {
    for (const auto& ex : examples) {
        nlohmann::json sections = nlohmann::json::array();
        for (Section s : ex.sections_used) sections.push_back(std::string(section_name(s)));
        nlohmann::ordered_json line;
        line["pmid"] = ex.pmid;
        line["source"] = ex.source_text;
        line["target"] = ex.target_text;
        line["sections_used"] = sections;
        line["source_sentences"] = ex.source_sentences;
        line["target_sentences"] = ex.target_sentences;
        out << line.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
    }
}

std::vector<RctExample> read_examples_jsonl(std::istream& in) {
    std::vector<RctExample> out;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (trim(line).empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            RctExample ex;
            ex.pmid = j.at("pmid").get<std::string>();
            ex.source_text = j.at("source").get<std::string>();
            ex.target_text = j.at("target").get<std::string>();
            if (j.contains("sections_used")) {
                for (const auto& s : j.at("sections_used")) {
                    auto section = parse_section(s.get<std::string>());
                    if (!section) throw ParseError("unknown section in sections_used", number);
                    ex.sections_used.push_back(*section);
                }
            }
            ex.source_sentences = j.value("source_sentences", std::size_t{0});
            ex.target_sentences = j.value("target_sentences", std::size_t{0});
            out.push_back(std::move(ex));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("bad example record: ") + e.what(), number);
        }
    }
    return out;
}

std::vector<RctExample> read_examples_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    return read_examples_jsonl(in);
}

}  // namespace pfxlm

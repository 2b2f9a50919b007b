#include "pfxlm/rouge.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>

#include "pfxlm/errors.hpp"
#include "pfxlm/rct_data.hpp"

namespace pfxlm {

namespace {

RougeScore make_score(std::size_t overlap, std::size_t candidate_total, std::size_t reference_total) {
    RougeScore s;
    if (candidate_total == 0 || reference_total == 0) return s;
    s.precision = static_cast<double>(overlap) / static_cast<double>(candidate_total);
    s.recall = static_cast<double>(overlap) / static_cast<double>(reference_total);
    if (s.precision + s.recall > 0) s.f1 = 2 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}

std::map<std::vector<std::string>, std::size_t> ngram_counts(const std::vector<std::string>& tokens, int n) {
    std::map<std::vector<std::string>, std::size_t> counts;
    const auto width = static_cast<std::size_t>(n);
    for (std::size_t i = 0; i + width <= tokens.size(); ++i) {
        ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                          tokens.begin() + static_cast<std::ptrdiff_t>(i + width))];
    }
    return counts;
}

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_csv(std::string_view line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        fields.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? comma : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return fields;
}

// Calls fn(fields, line_number) for each data row.
template <typename Fn>
void for_each_csv_row(std::istream& in, std::size_t width, Fn fn) {
    std::string line;
    std::size_t number = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++number;
        if (trim(line).empty()) continue;
        auto fields = split_csv(line);
        if (first) {
            first = false;
            std::string head = fields[0];
            std::transform(head.begin(), head.end(), head.begin(), [](unsigned char c) { return std::tolower(c); });
            if (head == "system") continue;
        }
        if (fields.size() != width) {
            throw ParseError("expected " + std::to_string(width) + " fields, got " + std::to_string(fields.size()),
                             number);
        }
        fn(fields, number);
    }
}

std::string fixed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string pad(std::string s, std::size_t width, bool left = true) {
    if (s.size() >= width) return s;
    return left ? s + std::string(width - s.size(), ' ') : std::string(width - s.size(), ' ') + s;
}

template <typename Row, typename NameOf>
std::size_t name_width(std::span<const Row> rows, NameOf name_of) {
    std::size_t w = 6;
    for (const auto& r : rows) w = std::max(w, name_of(r).size());
    return w + 2;
}

}  // namespace

std::vector<std::string> rouge_tokens(std::string_view text) {
    auto words = split_words(text);
    for (auto& w : words) {
        std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) {
            return static_cast<char>(c < 0x80 ? std::tolower(c) : c);
        });
    }
    return words;
}

RougeScore rouge_n(std::string_view candidate, std::string_view reference, int n) {
    if (n != 1 && n != 2) throw UsageError("ROUGE-N supports n = 1 or 2, got " + std::to_string(n));
    const auto cand = ngram_counts(rouge_tokens(candidate), n);
    const auto ref = ngram_counts(rouge_tokens(reference), n);
    std::size_t cand_total = 0, ref_total = 0, overlap = 0;
    for (const auto& [gram, c] : cand) cand_total += c;
    for (const auto& [gram, c] : ref) {
        ref_total += c;
        if (auto it = cand.find(gram); it != cand.end()) overlap += std::min(c, it->second);
    }
    return make_score(overlap, cand_total, ref_total);
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

RougeScore rouge_l(std::string_view candidate, std::string_view reference) {
    const auto cand = rouge_tokens(candidate);
    const auto ref = rouge_tokens(reference);
    return make_score(lcs_length(cand, ref), cand.size(), ref.size());
}

std::string strip_words(std::string_view text, std::size_t count) {
    const auto words = split_words(text);
    if (count >= words.size()) return {};
    return join_words(std::span<const std::string>(words).subspan(count));
}

RunScores score_run(std::span<const ScoredOutput> outputs, std::span<const std::string> references) {
    if (outputs.size() != references.size()) {
        throw UsageError(std::to_string(outputs.size()) + " outputs but " + std::to_string(references.size()) +
                         " references");
    }
    RunScores scores;
    scores.count = outputs.size();
    if (outputs.empty()) return scores;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        const auto cand = strip_words(outputs[i].text, outputs[i].n_hints);
        const auto ref = strip_words(references[i], outputs[i].n_hints);
        scores.rouge1 += rouge_n(cand, ref, 1).f1;
        scores.rouge2 += rouge_n(cand, ref, 2).f1;
        scores.rougeL += rouge_l(cand, ref).f1;
    }
    const double scale = 100.0 / static_cast<double>(outputs.size());
    scores.rouge1 *= scale;
    scores.rouge2 *= scale;
    scores.rougeL *= scale;
    return scores;
}

std::string_view verdict_name(Verdict verdict) {
    static constexpr std::array<std::string_view, 5> names{"TP", "TN", "FP", "FN", "NA"};
    return names[static_cast<std::size_t>(verdict)];
}

std::optional<Verdict> parse_verdict(std::string_view text) {
    std::string key(trim(text));
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::toupper(c); });
    for (Verdict v : {Verdict::tp, Verdict::tn, Verdict::fp, Verdict::fn, Verdict::na}) {
        if (key == verdict_name(v)) return v;
    }
    return std::nullopt;
}

int AnnotationSummary::accuracy_percent() const {
    return static_cast<int>(std::lround(accuracy * 100.0));
}

std::vector<AnnotationSummary> aggregate_annotations(std::span<const AnnotationRecord> records) {
    std::vector<AnnotationSummary> out;
    std::map<std::string, std::size_t> slot;
    for (const auto& r : records) {
        auto [it, fresh] = slot.try_emplace(r.system, out.size());
        if (fresh) out.push_back(AnnotationSummary{r.system, {}, 0, 0});
        auto& s = out[it->second];
        ++s.counts[static_cast<std::size_t>(r.verdict)];
        ++s.total;
    }
    for (auto& s : out) {
        s.accuracy = static_cast<double>(s.count(Verdict::tp) + s.count(Verdict::tn)) / static_cast<double>(s.total);
    }
    return out;
}

std::vector<RatingSummary> aggregate_ratings(std::span<const RatingRecord> records) {
    std::vector<RatingSummary> out;
    std::map<std::string, std::size_t> slot;
    for (const auto& r : records) {
        auto [it, fresh] = slot.try_emplace(r.system, out.size());
        if (fresh) out.push_back(RatingSummary{r.system, 0, 0, 0, 0});
        auto& s = out[it->second];
        ++s.total;
        s.correctness += r.correctness;
        s.quality += r.quality;
        s.overall += r.overall;
    }
    for (auto& s : out) {
        const auto n = static_cast<double>(s.total);
        s.correctness /= n;
        s.quality /= n;
        s.overall /= n;
    }
    return out;
}

std::vector<AnnotationRecord> read_annotations_csv(std::istream& in) {
    std::vector<AnnotationRecord> out;
    for_each_csv_row(in, 3, [&](const std::vector<std::string>& f, std::size_t line) {
        auto verdict = parse_verdict(f[2]);
        if (!verdict) throw ParseError("unknown verdict '" + f[2] + "'", line);
        out.push_back({f[0], f[1], *verdict});
    });
    return out;
}

std::vector<AnnotationRecord> read_annotations_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    return read_annotations_csv(in);
}

std::vector<RatingRecord> read_ratings_csv(std::istream& in) {
    std::vector<RatingRecord> out;
    for_each_csv_row(in, 5, [&](const std::vector<std::string>& f, std::size_t line) {
        auto rating = [&](const std::string& text) {
            int v = 0;
            const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
            if (ec != std::errc{} || ptr != text.data() + text.size() || v < 1 || v > 5) {
                throw ParseError("rating must be an integer from 1 to 5, got '" + text + "'", line);
            }
            return v;
        };
        out.push_back({f[0], f[1], rating(f[2]), rating(f[3]), rating(f[4])});
    });
    return out;
}

std::vector<RatingRecord> read_ratings_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    return read_ratings_csv(in);
}

std::string format_rouge_table(std::span<const std::pair<std::string, RunScores>> rows) {
    const auto w = name_width(rows, [](const auto& r) -> const std::string& { return r.first; });
    std::ostringstream out;
    out << pad("System", w) << pad("ROUGE-1", 9, false) << pad("ROUGE-2", 9, false) << pad("ROUGE-L", 9, false)
        << '\n';
    for (const auto& [name, s] : rows) {
        out << pad(name, w) << pad(fixed2(s.rouge1), 9, false) << pad(fixed2(s.rouge2), 9, false)
            << pad(fixed2(s.rougeL), 9, false) << '\n';
    }
    return out.str();
}

std::string format_annotation_table(std::span<const AnnotationSummary> rows) {
    const auto w = name_width(rows, [](const auto& r) -> const std::string& { return r.system; });
    std::ostringstream out;
    out << pad("System", w);
    for (Verdict v : {Verdict::tp, Verdict::tn, Verdict::fp, Verdict::fn, Verdict::na}) {
        out << pad(std::string(verdict_name(v)), 5, false);
    }
    out << pad("Acc.", 7, false) << '\n';
    for (const auto& s : rows) {
        out << pad(s.system, w);
        for (Verdict v : {Verdict::tp, Verdict::tn, Verdict::fp, Verdict::fn, Verdict::na}) {
            out << pad(std::to_string(s.count(v)), 5, false);
        }
        out << pad(std::to_string(s.accuracy_percent()) + "%", 7, false) << '\n';
    }
    return out.str();
}

std::string format_rating_table(std::span<const RatingSummary> rows) {
    const auto w = name_width(rows, [](const auto& r) -> const std::string& { return r.system; });
    std::ostringstream out;
    out << pad("System", w) << pad("Correctness", 13, false) << pad("Quality", 9, false) << pad("Overall", 9, false)
        << '\n';
    for (const auto& s : rows) {
        out << pad(s.system, w) << pad(fixed2(s.correctness), 13, false) << pad(fixed2(s.quality), 9, false)
            << pad(fixed2(s.overall), 9, false) << '\n';
    }
    return out.str();
}

}  // namespace pfxlm

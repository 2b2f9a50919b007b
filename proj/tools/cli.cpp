#include "cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "pfxlm/decoder.hpp"
#include "pfxlm/errors.hpp"
#include "pfxlm/finetune.hpp"
#include "pfxlm/rct_data.hpp"
#include "pfxlm/rouge.hpp"
#include "pfxlm/tokenizer.hpp"
#include "pfxlm/weights_io.hpp"

#ifndef PFXLM_VERSION
#define PFXLM_VERSION "0.1.0"
#endif

namespace pfxlm::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct Manifest {
    explicit Manifest(std::string cmd, std::string config = {})
        : command(std::move(cmd)), config_path(std::move(config)) {}

    std::string command;
    std::string config_path;
    std::optional<std::uint64_t> seed;
    ordered_json inputs = ordered_json::object();
    ordered_json outputs = ordered_json::object();
    ordered_json details = ordered_json::object();
    std::string started_at = utc_now();

    void write(const fs::path& path) const {
        ordered_json j;
        j["command"] = command;
        j["config"] = config_path;
        j["seed"] = seed ? ordered_json(*seed) : ordered_json(nullptr);
        j["inputs"] = inputs;
        j["outputs"] = outputs;
        j["details"] = details;
        j["started_at"] = started_at;
        j["finished_at"] = utc_now();
        j["version"] = PFXLM_VERSION;
        std::ofstream out(path);
        if (!out) throw Error("cannot write manifest " + path.string());
        out << j.dump(2) << '\n';
    }
};

fs::path with_suffix(const fs::path& path, const std::string& suffix) {
    fs::path p = path;
    p += suffix;
    return p;
}

std::ofstream open_output(const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write " + path.string());
    return out;
}

void print_stats(std::ostream& out, const ConclusionTask& task) {
    const auto stats = corpus_stats(task.examples);
    out << "examples                " << stats.count << '\n'
        << "skipped (no conclusion) " << task.skipped_no_conclusion << '\n'
        << "skipped (no source)     " << task.skipped_no_source << '\n'
        << std::fixed << std::setprecision(1) << "mean source words       " << stats.mean_source_words << '\n'
        << "mean source sentences   " << stats.mean_source_sentences << '\n'
        << "mean target words       " << stats.mean_target_words << '\n'
        << "mean target sentences   " << stats.mean_target_sentences << '\n';
    out.unsetf(std::ios::floatfield);
}

int cmd_preprocess(const fs::path& corpus, const std::string& sections, const fs::path& out_path, std::ostream& out) {
    Manifest manifest{"preprocess"};
    const auto set = SectionSet::parse(sections);
    if (set.contains(Section::conclusions)) throw UsageError("CONCLUSIONS cannot be a source section");
    const auto abstracts = parse_corpus(corpus);
    const auto task = build_conclusion_task(abstracts, set);
    {
        auto file = open_output(out_path);
        write_examples_jsonl(file, task.examples);
    }
    print_stats(out, task);

    const auto stats = corpus_stats(task.examples);
    manifest.inputs["corpus"] = corpus.string();
    manifest.outputs["examples"] = out_path.string();
    std::vector<std::string> names;
    for (Section s : set.members()) names.emplace_back(section_name(s));
    manifest.details["sections"] = names;
    manifest.details["examples"] = stats.count;
    manifest.details["skipped_no_conclusion"] = task.skipped_no_conclusion;
    manifest.details["skipped_no_source"] = task.skipped_no_source;
    manifest.details["mean_source_words"] = stats.mean_source_words;
    manifest.details["mean_target_words"] = stats.mean_target_words;
    manifest.write(with_suffix(out_path, ".manifest.json"));
    return kSuccess;
}

int cmd_train_tokenizer(const fs::path& examples_path, std::size_t merges, const fs::path& prefix, std::ostream& out) {
    Manifest manifest{"train-tokenizer"};
    const auto examples = read_examples_jsonl(examples_path);
    std::vector<std::string> texts;
    texts.reserve(examples.size() * 2 + 1);
    for (const auto& ex : examples) {
        texts.push_back(ex.source_text);
        texts.push_back(ex.target_text);
    }
    texts.emplace_back(kConclusionPrompt);
    const auto tokenizer = train_merges(texts, merges);
    const auto vocab_path = with_suffix(prefix, ".vocab");
    const auto merges_path = with_suffix(prefix, ".merges");
    tokenizer.save(vocab_path, merges_path);
    out << "learned " << tokenizer.merges().size() << " merges, vocabulary size " << tokenizer.vocab_size() << '\n';

    manifest.inputs["examples"] = examples_path.string();
    manifest.outputs["vocab"] = vocab_path.string();
    manifest.outputs["merges"] = merges_path.string();
    manifest.details["requested_merges"] = merges;
    manifest.details["learned_merges"] = tokenizer.merges().size();
    manifest.write(with_suffix(prefix, ".manifest.json"));
    return kSuccess;
}

int cmd_finetune(const fs::path& config_path, std::optional<std::uint64_t> seed, std::ostream& out) {
    Manifest manifest{"finetune", config_path.string()};
    auto config = load_train_config(config_path);
    if (seed) config.seed = *seed;
    manifest.seed = config.seed;
    const auto report = run_finetune(config);
    out << "steps " << report.start_step << " -> " << report.end_step << ", examples " << report.examples_used
        << " (" << report.examples_dropped << " over the length limit), last loss " << report.last_loss << '\n';

    manifest.inputs["examples"] = config.examples_path.string();
    manifest.inputs["vocab"] = config.vocab_path.string();
    manifest.inputs["merges"] = config.merges_path.string();
    manifest.outputs["checkpoint"] = config.checkpoint_path.string();
    manifest.outputs["loss_log"] = config.loss_log_path.string();
    manifest.details["start_step"] = report.start_step;
    manifest.details["end_step"] = report.end_step;
    manifest.details["examples_used"] = report.examples_used;
    manifest.details["examples_dropped"] = report.examples_dropped;
    manifest.details["last_loss"] = report.last_loss;
    manifest.write(with_suffix(config.checkpoint_path, ".manifest.json"));
    return kSuccess;
}

struct GenerateOptions {
    fs::path config;
    fs::path checkpoint;
    fs::path examples;
    fs::path vocab;
    fs::path merges;
    fs::path out;
    std::size_t n_hints = 0;
    std::size_t max_new_tokens = 128;
};

int cmd_generate(GenerateOptions opt, std::ostream& out) {
    Manifest manifest{"generate", opt.config.string()};
    if (!opt.config.empty()) {
        const auto config = load_train_config(opt.config);
        manifest.seed = config.seed;
        if (opt.checkpoint.empty()) opt.checkpoint = config.checkpoint_path;
        if (opt.vocab.empty()) opt.vocab = config.vocab_path;
        if (opt.merges.empty()) opt.merges = config.merges_path;
    }
    if (opt.checkpoint.empty()) throw UsageError("--checkpoint (or --config) is required");
    if (opt.vocab.empty() || opt.merges.empty()) throw UsageError("--vocab and --merges (or --config) are required");

    const auto tokenizer = load_vocabulary(opt.vocab, opt.merges);
    const auto params = import_weights<float>(opt.checkpoint);
    if (static_cast<std::size_t>(params.config.vocab_size) != tokenizer.vocab_size()) {
        throw UsageError("checkpoint vocabulary size does not match the tokenizer");
    }
    const auto examples = read_examples_jsonl(opt.examples);
    const GenerationConfig gen{opt.n_hints, opt.max_new_tokens};

    std::vector<ordered_json> lines(examples.size());
    auto work = [&](std::size_t i) {
        const auto& ex = examples[i];
        const auto words = split_words(ex.target_text);
        if (words.size() < opt.n_hints) {
            throw ShortTargetError("example " + ex.pmid + " has fewer target words than hints");
        }
        const std::span<const std::string> hints = std::span<const std::string>(words).first(opt.n_hints);
        ordered_json j;
        j["pmid"] = ex.pmid;
        j["n_hints"] = opt.n_hints;
        try {
            const auto g = generate_greedy(params, ex.source_text, hints, gen, tokenizer);
            j["output"] = g.text;
            j["hint"] = g.hint_text;
            j["stopped_at_end_of_text"] = g.stopped_at_end_of_text;
        } catch (const LengthError& e) {
            j["output"] = "";
            j["hint"] = join_words(hints);
            j["error"] = e.what();
        }
        j["reference"] = ex.target_text;
        lines[i] = std::move(j);
    };

    const unsigned threads = std::min<unsigned>(worker_threads(), std::max<std::size_t>(1, examples.size()));
    std::vector<std::exception_ptr> failures(threads);
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < examples.size(); i += threads) work(i);
            } catch (...) {
                failures[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& f : failures) {
        if (f) std::rethrow_exception(f);
    }

    std::size_t failed = 0;
    {
        auto file = open_output(opt.out);
        for (const auto& j : lines) {
            if (j.contains("error")) ++failed;
            file << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
        }
    }
    out << "generated " << lines.size() << " conclusions";
    if (failed > 0) out << " (" << failed << " sources too long)";
    out << '\n';

    manifest.inputs["checkpoint"] = opt.checkpoint.string();
    manifest.inputs["examples"] = opt.examples.string();
    manifest.inputs["vocab"] = opt.vocab.string();
    manifest.inputs["merges"] = opt.merges.string();
    manifest.outputs["generations"] = opt.out.string();
    manifest.details["n_hints"] = opt.n_hints;
    manifest.details["max_new_tokens"] = opt.max_new_tokens;
    manifest.details["too_long"] = failed;
    manifest.write(with_suffix(opt.out, ".manifest.json"));
    return kSuccess;
}

std::vector<ordered_json> read_jsonl(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    std::vector<ordered_json> out;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(ordered_json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(e.what(), number);
        }
    }
    return out;
}

int cmd_score(const fs::path& outputs_path, const fs::path& references_path, const std::string& system,
              const fs::path& out_path, std::ostream& out) {
    Manifest manifest{"score"};
    std::vector<ScoredOutput> outputs;
    std::vector<std::string> embedded_refs;
    try {
        for (const auto& j : read_jsonl(outputs_path)) {
            outputs.push_back({j.at("output").get<std::string>(), j.value("n_hints", std::size_t{0})});
            if (j.contains("reference")) embedded_refs.push_back(j.at("reference").get<std::string>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad generation record: ") + e.what());
    }

    std::vector<std::string> references;
    if (!references_path.empty()) {
        for (const auto& ex : read_examples_jsonl(references_path)) references.push_back(ex.target_text);
        manifest.inputs["references"] = references_path.string();
    } else if (embedded_refs.size() == outputs.size()) {
        references = std::move(embedded_refs);
    } else {
        throw UsageError("--references is required when outputs carry no reference field");
    }

    const auto scores = score_run(outputs, references);
    const std::vector<std::pair<std::string, RunScores>> rows{{system, scores}};
    const auto table = format_rouge_table(rows);
    out << table;
    {
        auto file = open_output(out_path);
        file << table;
    }

    manifest.inputs["outputs"] = outputs_path.string();
    manifest.outputs["report"] = out_path.string();
    manifest.details["count"] = scores.count;
    manifest.details["rouge1"] = scores.rouge1;
    manifest.details["rouge2"] = scores.rouge2;
    manifest.details["rougeL"] = scores.rougeL;
    manifest.write(with_suffix(out_path, ".manifest.json"));
    return kSuccess;
}

int cmd_eval_aggregate(const fs::path& annotations, const fs::path& ratings, const fs::path& out_path,
                       std::ostream& out) {
    if (annotations.empty() && ratings.empty()) throw UsageError("give --annotations, --ratings or both");
    Manifest manifest{"eval-aggregate"};
    std::string report;
    if (!annotations.empty()) {
        const auto summary = aggregate_annotations(read_annotations_csv(annotations));
        report += format_annotation_table(summary);
        manifest.inputs["annotations"] = annotations.string();
        for (const auto& s : summary) manifest.details["accuracy_percent"][s.system] = s.accuracy_percent();
    }
    if (!ratings.empty()) {
        if (!report.empty()) report += '\n';
        report += format_rating_table(aggregate_ratings(read_ratings_csv(ratings)));
        manifest.inputs["ratings"] = ratings.string();
    }
    out << report;
    {
        auto file = open_output(out_path);
        file << report;
    }
    manifest.outputs["report"] = out_path.string();
    manifest.write(with_suffix(out_path, ".manifest.json"));
    return kSuccess;
}

}  // namespace

unsigned worker_threads() {
    if (const char* env = std::getenv("PFXLM_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Prefix-LM conclusion generation for RCT abstracts", "pfxlm"};
    app.require_subcommand(1);
    app.set_version_flag("--version", PFXLM_VERSION);

    fs::path corpus, out_path, config, checkpoint, examples, vocab, merges, outputs, references, annotations, ratings;
    std::string sections = "background,objective,results";
    std::string system = "model";
    std::size_t num_merges = 0, n_hints = 0, max_new_tokens = 128;

    auto* pre = app.add_subcommand("preprocess", "Turn a labeled-sentence corpus into source/conclusion pairs");
    pre->add_option("--corpus", corpus, "Corpus in the ###pmid / LABEL<TAB>sentence layout")->required();
    pre->add_option("--sections", sections, "Comma-separated source sections")->capture_default_str();
    pre->add_option("--out", out_path, "Output JSON-lines file")->required();

    auto* tok = app.add_subcommand("train-tokenizer", "Learn byte-pair merges from preprocessed examples");
    tok->add_option("--examples", examples, "Examples JSON-lines file")->required();
    tok->add_option("--merges", num_merges, "Number of merges to learn")->required();
    tok->add_option("--out", out_path, "Output prefix; writes <out>.vocab and <out>.merges")->required();

    auto* ft = app.add_subcommand("finetune", "Train or resume a model from a key=value config");
    ft->add_option("--config", config, "Training config")->required();
    std::optional<std::uint64_t> seed;
    ft->add_option("--seed", seed, "Override the config seed");

    auto* gen = app.add_subcommand("generate", "Greedy conclusion generation");
    gen->add_option("--config", config, "Training config supplying checkpoint and tokenizer paths");
    gen->add_option("--checkpoint", checkpoint, "Weights or checkpoint file");
    gen->add_option("--vocab", vocab, "Vocabulary file");
    gen->add_option("--merges", merges, "Merges file");
    gen->add_option("--examples", examples, "Examples JSON-lines file")->required();
    gen->add_option("--n-hints", n_hints, "Number of reference words forced as a prefix")->capture_default_str();
    gen->add_option("--max-new-tokens", max_new_tokens, "Generation budget")->capture_default_str();
    gen->add_option("--out", out_path, "Output JSON-lines file")->required();

    auto* score = app.add_subcommand("score", "ROUGE-1/2/L of generated conclusions");
    score->add_option("--outputs", outputs, "Generation JSON-lines file")->required();
    score->add_option("--references", references, "Examples JSON-lines file holding the references");
    score->add_option("--system", system, "Row label in the report")->capture_default_str();
    score->add_option("--out", out_path, "Report file")->required();

    auto* agg = app.add_subcommand("eval-aggregate", "Summarize human annotations and ratings");
    agg->add_option("--annotations", annotations, "CSV system,example_id,verdict");
    agg->add_option("--ratings", ratings, "CSV system,example_id,correctness,quality,overall");
    agg->add_option("--out", out_path, "Report file")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kSuccess;
    } catch (const CLI::CallForVersion&) {
        out << PFXLM_VERSION << '\n';
        return kSuccess;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kUsageError;
    }

    try {
        if (*pre) return cmd_preprocess(corpus, sections, out_path, out);
        if (*tok) return cmd_train_tokenizer(examples, num_merges, out_path, out);
        if (*ft) return cmd_finetune(config, seed, out);
        if (*gen) {
            return cmd_generate({config, checkpoint, examples, vocab, merges, out_path, n_hints, max_new_tokens}, out);
        }
        if (*score) return cmd_score(outputs, references, system, out_path, out);
        if (*agg) return cmd_eval_aggregate(annotations, ratings, out_path, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kUsageError;
    } catch (const ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kUsageError;
    } catch (const ImportError& e) {
        err << "error: " << e.what() << '\n';
        return kUsageError;
    } catch (const VocabularyError& e) {
        err << "error: " << e.what() << '\n';
        return kUsageError;
    } catch (const ShortTargetError& e) {
        err << "error: " << e.what() << '\n';
        return kUsageError;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return kInternalError;
    }
    return kInternalError;
}

}  // namespace pfxlm::cli

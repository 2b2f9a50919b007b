#include "pfxlm/finetune.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <istream>
#include <random>
#include <set>

#include "pfxlm/errors.hpp"

namespace pfxlm {

std::vector<TokenId> EncodedExample::sequence() const {
    std::vector<TokenId> seq;
    seq.reserve(size());
    seq.insert(seq.end(), source_ids.begin(), source_ids.end());
    seq.insert(seq.end(), forced_prefix_ids.begin(), forced_prefix_ids.end());
    seq.insert(seq.end(), target_ids.begin(), target_ids.end());
    return seq;
}

std::vector<bool> EncodedExample::loss_mask() const {
    std::vector<bool> mask(size(), false);
    std::fill(mask.begin() + static_cast<std::ptrdiff_t>(source_ids.size() + forced_prefix_ids.size()), mask.end(),
              true);
    return mask;
}

EncodedExample prepare_example(const RctExample& example, std::size_t n_hints, const Tokenizer& tokenizer) {
    const auto source_words = split_words(example.source_text);
    if (source_words.empty()) throw EmptySourceError("example " + example.pmid + " has an empty source");
    const auto target_words = split_words(example.target_text);
    if (target_words.size() < n_hints) {
        throw ShortTargetError("example " + example.pmid + " has " + std::to_string(target_words.size()) +
                               " target words, fewer than " + std::to_string(n_hints) + " hints");
    }

    std::string source = join_words(source_words);
    if (n_hints == 0) {
        source += ' ';
        source += kConclusionPrompt;
    }

    EncodedExample out;
    out.source_ids = tokenizer.encode(source);
    out.source_ids.push_back(tokenizer.separator());

    const std::span<const std::string> words(target_words);
    std::string remainder;
    if (n_hints > 0) {
        out.forced_prefix_ids = tokenizer.encode(join_words(words.first(n_hints)));
        if (n_hints < words.size()) remainder = " " + join_words(words.subspan(n_hints));
    } else {
        remainder = join_words(words);
    }
    out.target_ids = tokenizer.encode(remainder);
    out.target_ids.push_back(tokenizer.end_of_text());
    return out;
}

std::vector<EncodedExample> filter_long(std::vector<EncodedExample> examples, std::size_t max_len) {
    std::erase_if(examples, [max_len](const EncodedExample& e) { return e.size() >= max_len; });
    return examples;
}

template <typename Scalar>
OptimizerState<Scalar> OptimizerState<Scalar>::zeros(const ModelParams<Scalar>& params, SgdConfig config) {
    OptimizerState state{config, {}};
    for (const auto& named : params.named_parameters()) {
        state.velocity.push_back(Matrix<Scalar>::Zero(named.tensor.rows(), named.tensor.cols()));
    }
    return state;
}

template <typename Scalar>
void sgd_step(Matrix<Scalar>& param, const Matrix<Scalar>& grad, Matrix<Scalar>& velocity, const SgdConfig& config) {
    if (param.rows() != grad.rows() || param.cols() != grad.cols() || param.rows() != velocity.rows() ||
        param.cols() != velocity.cols()) {
        throw DimensionError("sgd_step operands differ in shape");
    }
    const auto lr = static_cast<Scalar>(config.lr);
    const auto mu = static_cast<Scalar>(config.momentum);
    const auto wd = static_cast<Scalar>(config.weight_decay);
    velocity = mu * velocity + grad + wd * param;
    param -= lr * velocity;
}

template <typename Scalar>
void sgd_update(const ModelParams<Scalar>& params, OptimizerState<Scalar>& state, Scalar grad_scale) {
    auto named = params.named_parameters();
    if (named.size() != state.velocity.size()) throw DimensionError("optimizer state does not match the model");
    for (std::size_t i = 0; i < named.size(); ++i) {
        auto& tensor = named[i].tensor;
        const Matrix<Scalar> g = grad_scale * tensor.grad();
        sgd_step<Scalar>(tensor.mutable_value(), g, state.velocity[i], state.config);
    }
}

template <typename Scalar>
Tensor<Scalar> example_loss(const ModelParams<Scalar>& params, const EncodedExample& example) {
    const auto seq = example.sequence();
    const auto T = static_cast<Index>(seq.size());
    if (T > params.config.max_positions) {
        throw LengthError("sequence of " + std::to_string(T) + " tokens exceeds max_positions " +
                          std::to_string(params.config.max_positions));
    }
    const auto m = static_cast<Index>(example.source_ids.size());
    const auto mask = build_prefix_mask(m, T - m);
    const auto logits = forward(params, std::span<const TokenId>(seq), mask);

    const auto in_loss = example.loss_mask();
    std::vector<TokenId> next(seq.size(), 0);
    std::vector<bool> use(seq.size(), false);
    for (std::size_t r = 0; r + 1 < seq.size(); ++r) {
        next[r] = seq[r + 1];
        use[r] = in_loss[r + 1];
    }
    return cross_entropy(logits, std::span<const TokenId>(next), use);
}

template <typename Scalar>
double training_step(const ModelParams<Scalar>& params, std::span<const EncodedExample> batch,
                     OptimizerState<Scalar>& state) {
    if (batch.empty()) throw UsageError("empty training batch");
    params.zero_grad();
    double total = 0;
    for (const auto& example : batch) {
        Tape<Scalar> tape;
        const auto loss = example_loss(params, example);
        total += static_cast<double>(loss.item());
        tape.backward(loss);
    }
    sgd_update(params, state, Scalar(1) / static_cast<Scalar>(batch.size()));
    return total / static_cast<double>(batch.size());
}

template <typename Scalar>
double evaluate_loss(const ModelParams<Scalar>& params, std::span<const EncodedExample> examples) {
    if (examples.empty()) return 0;
    double total = 0;
    for (const auto& example : examples) total += static_cast<double>(example_loss(params, example).item());
    return total / static_cast<double>(examples.size());
}

std::vector<std::size_t> batch_indices(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                                       std::uint64_t step) {
    if (dataset_size == 0 || batch_size == 0) throw UsageError("empty dataset or zero batch size");
    std::vector<std::size_t> out;
    out.reserve(batch_size);
    std::uint64_t cached_epoch = ~std::uint64_t{0};
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < batch_size; ++i) {
        const std::uint64_t position = step * batch_size + i;
        const std::uint64_t epoch = position / dataset_size;
        if (epoch != cached_epoch) {
            order.resize(dataset_size);
            for (std::size_t k = 0; k < dataset_size; ++k) order[k] = k;
            std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                              static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
            std::mt19937_64 rng(seq);
            for (std::size_t k = dataset_size; k > 1; --k) std::swap(order[k - 1], order[rng() % k]);
            cached_epoch = epoch;
        }
        out.push_back(order[position % dataset_size]);
    }
    return out;
}

template <typename Scalar>
TensorMap make_checkpoint(const ModelParams<Scalar>& params, const OptimizerState<Scalar>& state, std::uint64_t step) {
    TensorMap map = weights_to_map(params);
    map.meta["step"] = std::to_string(step);
    const auto named = params.named_parameters();
    for (std::size_t i = 0; i < named.size(); ++i) {
        const auto velocity = Tensor<Scalar>(named[i].tensor.shape(), state.velocity[i]);
        map.tensors.push_back(to_record("optimizer." + named[i].name + ".velocity", velocity));
    }
    return map;
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const TensorMap& map, const SgdConfig& config) {
    Checkpoint<Scalar> ck{params_from_map<Scalar>(map, config_from_meta(map.meta)), {config, {}}, 0};
    const auto step = map.meta.find("step");
    if (step == map.meta.end()) throw ImportError("checkpoint meta line lacks step");
    const auto& text = step->second;
    if (std::from_chars(text.data(), text.data() + text.size(), ck.step).ec != std::errc{}) {
        throw ImportError("bad checkpoint step '" + text + "'");
    }
    for (const auto& named : ck.params.named_parameters()) {
        const std::string name = "optimizer." + named.name + ".velocity";
        const TensorRecord* rec = map.find(name);
        if (rec == nullptr) throw ImportError("missing tensor " + name);
        if (rec->shape != named.tensor.shape()) throw ImportError("shape mismatch for tensor " + name);
        ck.state.velocity.push_back(record_values<Scalar>(*rec));
    }
    return ck;
}

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr != end) throw UsageError("bad value for " + key + ": '" + text + "'");
    return value;
}

}  // namespace

TrainConfig parse_train_config(std::istream& in) {
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto body = trim(line);
        if (body.empty() || body.front() == '#') continue;
        const auto eq = body.find('=');
        if (eq == std::string_view::npos) throw UsageError("config line " + std::to_string(number) + " lacks '='");
        kv[std::string(trim(body.substr(0, eq)))] = std::string(trim(body.substr(eq + 1)));
    }

    static const std::vector<std::string> required{
        "seed",  "n_hints",         "batch_size",       "steps",         "lr",         "momentum",   "weight_decay",
        "max_len", "checkpoint_path", "checkpoint_every", "examples_path", "vocab_path", "merges_path"};
    static const std::set<std::string> optional{"loss_log_path", "n_layers", "d_model", "n_heads",
                                                "d_ff",          "max_positions", "activation"};
    for (const auto& key : required) {
        if (!kv.contains(key)) throw UsageError("config is missing required key '" + key + "'");
    }
    for (const auto& [key, value] : kv) {
        if (!optional.contains(key) && std::find(required.begin(), required.end(), key) == required.end()) {
            throw UsageError("unknown config key '" + key + "'");
        }
    }

    TrainConfig c;
    c.seed = parse_number<std::uint64_t>("seed", kv["seed"]);
    c.n_hints = parse_number<std::size_t>("n_hints", kv["n_hints"]);
    c.batch_size = parse_number<std::size_t>("batch_size", kv["batch_size"]);
    c.steps = parse_number<std::uint64_t>("steps", kv["steps"]);
    c.sgd.lr = parse_number<double>("lr", kv["lr"]);
    c.sgd.momentum = parse_number<double>("momentum", kv["momentum"]);
    c.sgd.weight_decay = parse_number<double>("weight_decay", kv["weight_decay"]);
    c.max_len = parse_number<std::size_t>("max_len", kv["max_len"]);
    c.checkpoint_path = kv["checkpoint_path"];
    c.checkpoint_every = parse_number<std::uint64_t>("checkpoint_every", kv["checkpoint_every"]);
    c.examples_path = kv["examples_path"];
    c.vocab_path = kv["vocab_path"];
    c.merges_path = kv["merges_path"];
    if (kv.contains("loss_log_path")) {
        c.loss_log_path = kv["loss_log_path"];
    } else {
        c.loss_log_path = c.checkpoint_path;
        c.loss_log_path += ".loss.csv";
    }

    c.model.max_positions = 512;
    if (kv.contains("n_layers")) c.model.n_layers = parse_number<int>("n_layers", kv["n_layers"]);
    if (kv.contains("d_model")) c.model.d_model = parse_number<int>("d_model", kv["d_model"]);
    if (kv.contains("n_heads")) c.model.n_heads = parse_number<int>("n_heads", kv["n_heads"]);
    if (kv.contains("d_ff")) c.model.d_ff = parse_number<int>("d_ff", kv["d_ff"]);
    if (kv.contains("max_positions")) c.model.max_positions = parse_number<int>("max_positions", kv["max_positions"]);
    if (kv.contains("activation")) c.model.activation = parse_activation(kv["activation"]);

    if (c.batch_size == 0) throw UsageError("batch_size must be positive");
    if (c.max_len == 0) throw UsageError("max_len must be positive");
    c.model.validate_shape();
    if (static_cast<std::size_t>(c.model.max_positions) + 1 < c.max_len) {
        throw UsageError("max_positions must be at least max_len - 1");
    }
    return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config " + path.string());
    return parse_train_config(in);
}

FinetuneReport run_finetune(const TrainConfig& config) {
    const Tokenizer tokenizer = load_vocabulary(config.vocab_path, config.merges_path);
    ModelConfig model = config.model;
    model.vocab_size = static_cast<int>(tokenizer.vocab_size());
    model.validate();

    const auto raw = read_examples_jsonl(config.examples_path);
    std::vector<EncodedExample> encoded;
    encoded.reserve(raw.size());
    for (const auto& ex : raw) encoded.push_back(prepare_example(ex, config.n_hints, tokenizer));
    const std::size_t before = encoded.size();
    encoded = filter_long(std::move(encoded), config.max_len);

    FinetuneReport report;
    report.examples_used = encoded.size();
    report.examples_dropped = before - encoded.size();
    if (encoded.empty()) throw UsageError("no training examples left after the length filter");

    std::optional<Checkpoint<float>> state;
    if (std::filesystem::exists(config.checkpoint_path)) {
        auto loaded = load_checkpoint<float>(read_tensor_map(config.checkpoint_path), config.sgd);
        if (loaded.params.config != model) throw UsageError("checkpoint architecture differs from the config");
        state = std::move(loaded);
    } else {
        auto params = init_params<float>(model, config.seed);
        auto opt = OptimizerState<float>::zeros(params, config.sgd);
        state = Checkpoint<float>{std::move(params), std::move(opt), 0};
    }
    report.start_step = state->step;

    std::ofstream log(config.loss_log_path, state->step == 0 ? std::ios::trunc : std::ios::app);
    if (!log) throw Error("cannot write loss log " + config.loss_log_path.string());
    if (state->step == 0) log << "step,loss\n";
    log << std::setprecision(9);

    std::vector<EncodedExample> batch;
    while (state->step < config.steps) {
        batch.clear();
        for (std::size_t i : batch_indices(encoded.size(), config.batch_size, config.seed, state->step)) {
            batch.push_back(encoded[i]);
        }
        report.last_loss = training_step<float>(state->params, batch, state->state);
        ++state->step;
        log << state->step << ',' << report.last_loss << '\n';
        if (config.checkpoint_every > 0 && state->step % config.checkpoint_every == 0) {
            log.flush();
            write_tensor_map(config.checkpoint_path, make_checkpoint(state->params, state->state, state->step));
        }
    }
    write_tensor_map(config.checkpoint_path, make_checkpoint(state->params, state->state, state->step));
    report.end_step = state->step;
    return report;
}

#define PFXLM_INSTANTIATE_FINETUNE(S)                                                                          \
    template struct OptimizerState<S>;                                                                        \
    template void sgd_step<S>(Matrix<S>&, const Matrix<S>&, Matrix<S>&, const SgdConfig&);                    \
    template void sgd_update<S>(const ModelParams<S>&, OptimizerState<S>&, S);                                 \
    template Tensor<S> example_loss<S>(const ModelParams<S>&, const EncodedExample&);                          \
    template double training_step<S>(const ModelParams<S>&, std::span<const EncodedExample>, OptimizerState<S>&); \
    template double evaluate_loss<S>(const ModelParams<S>&, std::span<const EncodedExample>);                  \
    template TensorMap make_checkpoint<S>(const ModelParams<S>&, const OptimizerState<S>&, std::uint64_t);     \
    template Checkpoint<S> load_checkpoint<S>(const TensorMap&, const SgdConfig&);

PFXLM_INSTANTIATE_FINETUNE(float)
PFXLM_INSTANTIATE_FINETUNE(double)

#undef PFXLM_INSTANTIATE_FINETUNE

}  // namespace pfxlm

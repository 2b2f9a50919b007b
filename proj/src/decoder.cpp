#include "pfxlm/decoder.hpp"

#include "pfxlm/finetune.hpp"
#include "pfxlm/rct_data.hpp"

namespace pfxlm {

template <typename Scalar>
TokenId argmax_lowest(const Eigen::Ref<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>& row) {
    Index best = 0;
    for (Index j = 1; j < row.size(); ++j) {
        if (row(j) > row(best)) best = j;
    }
    return static_cast<TokenId>(best);
}

template <typename Scalar>
Generation generate_greedy(const ModelParams<Scalar>& params, std::string_view source_text,
                           std::span<const std::string> hint_words, const GenerationConfig& config,
                           const Tokenizer& tokenizer) {
    if (config.max_new_tokens == 0) throw UsageError("max_new_tokens must be at least 1");
    const auto words = split_words(source_text);
    if (words.empty()) throw EmptySourceError("empty source text");

    std::string source = join_words(words);
    if (hint_words.empty()) {
        source += ' ';
        source += kConclusionPrompt;
    }
    std::vector<TokenId> seq = tokenizer.encode(source);
    seq.push_back(tokenizer.separator());
    const auto m = static_cast<Index>(seq.size());

    Generation out;
    if (!hint_words.empty()) {
        out.hint_text = join_words(hint_words);
        out.tokens = tokenizer.encode(out.hint_text);
    }
    out.hint_token_count = out.tokens.size();
    seq.insert(seq.end(), out.tokens.begin(), out.tokens.end());

    const auto limit = static_cast<std::size_t>(params.config.max_positions);
    if (config.max_new_tokens >= limit || seq.size() >= limit - config.max_new_tokens) {
        throw LengthError("source and hint take " + std::to_string(seq.size()) + " positions; " +
                          std::to_string(config.max_new_tokens) + " new tokens do not fit in " +
                          std::to_string(limit));
    }

    for (std::size_t step = 0; step < config.max_new_tokens; ++step) {
        const auto T = static_cast<Index>(seq.size());
        const auto mask = build_prefix_mask(m, T - m);
        const auto logits = forward(params, std::span<const TokenId>(seq), mask);
        const TokenId next = argmax_lowest<Scalar>(logits.value().row(T - 1));
        if (next == tokenizer.end_of_text()) {
            out.stopped_at_end_of_text = true;
            break;
        }
        seq.push_back(next);
        out.tokens.push_back(next);
    }

    std::vector<TokenId> printable;
    printable.reserve(out.tokens.size());
    for (TokenId id : out.tokens) {
        if (!tokenizer.vocabulary().is_special(id)) printable.push_back(id);
    }
    out.text = tokenizer.decode(printable);
    return out;
}

#define PFXLM_INSTANTIATE_DECODER(S)                                                                        \
    template TokenId argmax_lowest<S>(const Eigen::Ref<const Eigen::Matrix<S, 1, Eigen::Dynamic>>&);       \
    template Generation generate_greedy<S>(const ModelParams<S>&, std::string_view, std::span<const std::string>, \
                                           const GenerationConfig&, const Tokenizer&);

PFXLM_INSTANTIATE_DECODER(float)
PFXLM_INSTANTIATE_DECODER(double)

#undef PFXLM_INSTANTIATE_DECODER

}  // namespace pfxlm

#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pfxlm/model.hpp"
#include "pfxlm/tokenizer.hpp"

namespace pfxlm {

struct GenerationConfig {
    std::size_t n_hints = 0;
    std::size_t max_new_tokens = 128;
};

struct Generation {
    /// Decoded target region: hint words followed by the generated continuation.
    std::string text;
    /// The hint prefix as it appears at the start of `text`.
    std::string hint_text;
    /// Forced prefix tokens followed by the generated tokens (end-of-text excluded).
    std::vector<TokenId> tokens;
    std::size_t hint_token_count = 0;
    bool stopped_at_end_of_text = false;
};

/// Greedy decoding under the prefix mask, conditioned on the source and the
/// forced hint prefix. The source is laid out as in prepare_example (the
/// conclusion prompt is appended when `hint_words` is empty). Argmax ties go to
/// the lowest token id. Stops at end-of-text or after max_new_tokens.
///
/// Throws EmptySourceError on a blank source, LengthError when source plus
/// prefix does not leave room for max_new_tokens within max_positions, and
/// UsageError when max_new_tokens is 0.
template <typename Scalar>
Generation generate_greedy(const ModelParams<Scalar>& params, std::string_view source_text,
                           std::span<const std::string> hint_words, const GenerationConfig& config,
                           const Tokenizer& tokenizer);

/// Index of the largest entry in `row`; the lowest index wins ties.
template <typename Scalar>
TokenId argmax_lowest(const Eigen::Ref<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>& row);

}  // namespace pfxlm

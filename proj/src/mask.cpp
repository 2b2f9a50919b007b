#include "pfxlm/mask.hpp"

#include <string>

namespace pfxlm {

AttentionMask::AttentionMask(VisibilityMatrix visible) : visible_(std::move(visible)) {
    if (visible_.rows() == 0 || visible_.rows() != visible_.cols()) {
        throw UsageError("attention mask must be square and non-empty");
    }
    for (Index i = 0; i < visible_.rows(); ++i) {
        if (!visible_(i, i)) throw UsageError("attention mask hides position " + std::to_string(i) + " from itself");
    }
}

AttentionMask build_causal_mask(Index length) {
    if (length < 1) throw UsageError("causal mask length must be at least 1");
    VisibilityMatrix visible(length, length);
    for (Index i = 0; i < length; ++i) {
        for (Index j = 0; j < length; ++j) visible(i, j) = j <= i;
    }
    return AttentionMask(std::move(visible));
}

AttentionMask build_prefix_mask(Index source_length, Index target_length) {
    if (source_length < 1) throw EmptySourceError("prefix mask needs at least one source position");
    if (target_length < 0) throw UsageError("negative target length");
    const Index total = source_length + target_length;
    VisibilityMatrix visible(total, total);
    for (Index i = 0; i < total; ++i) {
        for (Index j = 0; j < total; ++j) {
            // Keys in the source block are visible to everyone; target keys only causally.
            visible(i, j) = j < source_length || j <= i;
            if (i < source_length && j >= source_length) visible(i, j) = false;
        }
    }
    return AttentionMask(std::move(visible));
}

}  // namespace pfxlm

#pragma once

#include <limits>

#include "pfxlm/tensor.hpp"

namespace pfxlm {

using VisibilityMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Square attention mask M over T positions. Entry (i, j) is 0 when position i
/// may attend to position j and -inf otherwise. Every position sees itself.
class AttentionMask {
public:
    /// Throws UsageError if the matrix is not square, empty, or hides a diagonal entry.
    explicit AttentionMask(VisibilityMatrix visible);

    Index size() const noexcept { return visible_.rows(); }
    bool visible(Index row, Index col) const { return visible_(row, col); }
    const VisibilityMatrix& visibility() const noexcept { return visible_; }

    /// The additive form: 0 where visible, -inf where masked.
    template <typename Scalar>
    Matrix<Scalar> additive() const {
        return visible_.select(Matrix<Scalar>::Zero(size(), size()),
                               Matrix<Scalar>::Constant(size(), size(), -std::numeric_limits<Scalar>::infinity()));
    }

    friend bool operator==(const AttentionMask& a, const AttentionMask& b) {
        return a.size() == b.size() && (a.visible_ == b.visible_).all();
    }

private:
    VisibilityMatrix visible_;
};

/// M_ij = -inf for every j > i.
AttentionMask build_causal_mask(Index length);

/// Mask for `source_length` bidirectional source positions followed by
/// `target_length` causal target positions. Targets see every source position
/// and the targets up to themselves; sources never see targets.
/// Throws EmptySourceError when source_length is 0.
AttentionMask build_prefix_mask(Index source_length, Index target_length);

}  // namespace pfxlm

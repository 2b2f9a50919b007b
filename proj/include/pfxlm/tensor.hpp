#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "pfxlm/errors.hpp"

namespace pfxlm {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using TokenId = std::int32_t;

/// Dense row-major storage used for every tensor value and gradient.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
class Tape;

namespace detail {

// One value in the computation graph. Leaves are parameters or constants;
// interior nodes are produced by the ops in ops.hpp and recorded on a Tape.
template <typename Scalar>
struct Node {
    Shape shape;
    Matrix<Scalar> value;
    Matrix<Scalar> grad;  // empty until first written
    bool requires_grad = false;
    bool is_leaf = true;
    std::optional<std::uint64_t> tape_id;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    Matrix<Scalar>& grad_buffer() {
        if (grad.size() == 0) grad = Matrix<Scalar>::Zero(value.rows(), value.cols());
        return grad;
    }
};

}  // namespace detail

/// Storage extents for a logical shape: all leading extents fold into rows,
/// the last extent is the column count. Rank 0 is a 1x1 scalar.
std::pair<Index, Index> storage_extents(const Shape& shape);

/// Handle to a dense value that may participate in reverse-mode differentiation.
///
/// Copies share the underlying node, so a parameter held by a model and the
/// same parameter seen by an optimizer are one object. A tensor created while a
/// Tape is active and derived from a tensor that requires gradients is recorded
/// on that tape; everything else is a plain value.
template <typename Scalar>
class Tensor {
public:
    using Node = detail::Node<Scalar>;

    Tensor() = default;

    /// Constant with the given logical shape; `value` must hold product(shape) entries.
    Tensor(Shape shape, Matrix<Scalar> value, bool requires_grad = false);

    /// Constant 2-D tensor shaped like `value`.
    static Tensor constant(Matrix<Scalar> value);

    /// Trainable 2-D leaf with a zeroed gradient buffer.
    static Tensor parameter(Matrix<Scalar> value);

    /// Trainable rank-1 leaf of length value.size().
    static Tensor parameter_vector(Matrix<Scalar> value);

    static Tensor scalar(Scalar value);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const { return node().shape; }
    Index rank() const { return static_cast<Index>(shape().size()); }
    Index rows() const { return node().value.rows(); }
    Index cols() const { return node().value.cols(); }
    Index size() const { return node().value.size(); }

    const Matrix<Scalar>& value() const { return node().value; }

    /// Writable access for leaves only (parameter updates, weight import).
    Matrix<Scalar>& mutable_value();

    Scalar item() const;

    bool requires_grad() const { return node().requires_grad; }
    bool is_leaf() const { return node().is_leaf; }
    std::optional<std::uint64_t> tape_id() const { return node().tape_id; }

    bool has_grad() const { return node().grad.size() != 0; }
    /// Gradient buffer. Returns a zero matrix of the value's extents if none was written.
    const Matrix<Scalar>& grad() const;
    Matrix<Scalar>& mutable_grad() { return node().grad_buffer(); }
    void zero_grad();

    const std::shared_ptr<Node>& node_ptr() const noexcept { return node_; }
    static Tensor from_node(std::shared_ptr<Node> node);

private:
    Node& node() const;

    std::shared_ptr<Node> node_;
};

/// Ordered record of differentiable operations executed while it is active.
///
/// Constructing a tape makes it the active tape of the calling thread (per
/// scalar type); destruction restores the previously active one, so tapes must
/// be destroyed in reverse order of construction. Nodes are appended in
/// execution order, so each operation's inputs precede it.
template <typename Scalar>
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::uint64_t id() const noexcept { return id_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Reverse sweep from a scalar loss recorded on this tape. Gradients are
    /// summed into every reachable leaf; callers zero them between steps.
    /// A tape supports one backward pass.
    void backward(const Tensor<Scalar>& loss);

    static Tape* active() noexcept;

    void record(std::shared_ptr<detail::Node<Scalar>> node);

private:
    std::uint64_t id_;
    Tape* previous_;
    bool consumed_ = false;
    std::vector<std::shared_ptr<detail::Node<Scalar>>> nodes_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace pfxlm

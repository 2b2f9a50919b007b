#include "pfxlm/tensor.hpp"

#include <atomic>
#include <string>

namespace pfxlm {

std::pair<Index, Index> storage_extents(const Shape& shape) {
    if (shape.empty()) return {1, 1};
    Index rows = 1;
    for (std::size_t i = 0; i + 1 < shape.size(); ++i) {
        if (shape[i] <= 0) throw DimensionError("tensor extents must be positive");
        rows *= shape[i];
    }
    if (shape.back() <= 0) throw DimensionError("tensor extents must be positive");
    return {rows, shape.back()};
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Matrix<Scalar> value, bool requires_grad) {
    auto [rows, cols] = storage_extents(shape);
    if (value.size() != rows * cols) {
        throw DimensionError("tensor value holds " + std::to_string(value.size()) +
                             " entries, shape needs " + std::to_string(rows * cols));
    }
    if (value.rows() != rows) value = Eigen::Map<Matrix<Scalar>>(value.data(), rows, cols).eval();
    node_ = std::make_shared<Node>();
    node_->shape = std::move(shape);
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    if (requires_grad) node_->grad_buffer();
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::constant(Matrix<Scalar> value) {
    Shape shape{value.rows(), value.cols()};
    return Tensor(std::move(shape), std::move(value), false);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::parameter(Matrix<Scalar> value) {
    Shape shape{value.rows(), value.cols()};
    return Tensor(std::move(shape), std::move(value), true);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::parameter_vector(Matrix<Scalar> value) {
    Shape shape{value.size()};
    return Tensor(std::move(shape), std::move(value), true);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::scalar(Scalar value) {
    Matrix<Scalar> m(1, 1);
    m(0, 0) = value;
    return Tensor(Shape{}, std::move(m), false);
}

template <typename Scalar>
typename Tensor<Scalar>::Node& Tensor<Scalar>::node() const {
    if (!node_) throw UsageError("use of an undefined tensor");
    return *node_;
}

template <typename Scalar>
Matrix<Scalar>& Tensor<Scalar>::mutable_value() {
    if (!node().is_leaf) throw UsageError("only leaf tensors can be modified in place");
    return node_->value;
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
    if (size() != 1) throw DimensionError("item() on a tensor with " + std::to_string(size()) + " entries");
    return node().value(0, 0);
}

template <typename Scalar>
const Matrix<Scalar>& Tensor<Scalar>::grad() const {
    return node().grad_buffer();
}

template <typename Scalar>
void Tensor<Scalar>::zero_grad() {
    node().grad_buffer().setZero();
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_node(std::shared_ptr<Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

namespace {

std::atomic<std::uint64_t> next_tape_id{1};

template <typename Scalar>
thread_local Tape<Scalar>* current_tape = nullptr;

}  // namespace

template <typename Scalar>
Tape<Scalar>::Tape() : id_(next_tape_id.fetch_add(1)), previous_(current_tape<Scalar>) {
    current_tape<Scalar> = this;
}

template <typename Scalar>
Tape<Scalar>::~Tape() {
    if (current_tape<Scalar> == this) current_tape<Scalar> = previous_;
}

template <typename Scalar>
Tape<Scalar>* Tape<Scalar>::active() noexcept {
    return current_tape<Scalar>;
}

template <typename Scalar>
void Tape<Scalar>::record(std::shared_ptr<detail::Node<Scalar>> node) {
    if (consumed_) throw UsageError("recording on a tape that already ran backward");
    node->tape_id = id_;
    nodes_.push_back(std::move(node));
}

template <typename Scalar>
void Tape<Scalar>::backward(const Tensor<Scalar>& loss) {
    if (!loss.defined()) throw UsageError("backward on an undefined tensor");
    if (loss.size() != 1) throw UsageError("backward requires a scalar loss");
    if (loss.tape_id() != id_) throw UsageError("backward on a value that is not recorded on this tape");
    if (consumed_) throw UsageError("backward already ran on this tape");
    consumed_ = true;

    loss.node_ptr()->grad_buffer().setConstant(Scalar(1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        auto& node = **it;
        if (node.grad.size() == 0 || !node.backward) continue;
        node.backward(node);
    }
    nodes_.clear();
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace pfxlm

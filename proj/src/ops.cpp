#include "pfxlm/ops.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace pfxlm {

namespace {

template <typename Scalar>
using NodeT = detail::Node<Scalar>;

std::string extents(Index r, Index c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

// Wraps a freshly computed value into a tensor, recording it on the active
// tape when any input requires gradients.
template <typename Scalar>
Tensor<Scalar> make_result(const char* op, Shape shape, Matrix<Scalar> value, std::vector<const Tensor<Scalar>*> inputs,
                           std::function<void(NodeT<Scalar>&)> backward, bool require_finite = true) {
    if (require_finite && !value.allFinite()) {
        throw NumericError(std::string(op) + " produced a non-finite value");
    }
    auto node = std::make_shared<NodeT<Scalar>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->is_leaf = false;

    Tape<Scalar>* tape = Tape<Scalar>::active();
    bool needs_grad = false;
    for (const auto* in : inputs) needs_grad = needs_grad || in->requires_grad();
    if (tape != nullptr && needs_grad) {
        node->requires_grad = true;
        for (const auto* in : inputs) node->inputs.push_back(in->node_ptr());
        node->backward = std::move(backward);
        tape->record(node);
    }
    return Tensor<Scalar>::from_node(std::move(node));
}

template <typename Scalar>
bool wants(const NodeT<Scalar>& n) {
    return n.requires_grad;
}

template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar>
Eigen::Map<const RowVec<Scalar>> as_row(const Matrix<Scalar>& m) {
    return {m.data(), m.size()};
}

template <typename Scalar>
Eigen::Map<RowVec<Scalar>> as_row(Matrix<Scalar>& m) {
    return {m.data(), m.size()};
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul inner extents differ: " + extents(a.rows(), a.cols()) + " * " +
                             extents(b.rows(), b.cols()));
    }
    Matrix<Scalar> out(a.rows(), b.cols());
    out.noalias() = a.value() * b.value();
    return make_result<Scalar>("matmul", Shape{a.rows(), b.cols()}, std::move(out), {&a, &b}, [](NodeT<Scalar>& self) {
        auto& lhs = *self.inputs[0];
        auto& rhs = *self.inputs[1];
        if (wants(lhs)) lhs.grad_buffer().noalias() += self.grad * rhs.value.transpose();
        if (wants(rhs)) rhs.grad_buffer().noalias() += lhs.value.transpose() * self.grad;
    });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a) {
    Matrix<Scalar> out = a.value().transpose();
    return make_result<Scalar>("transpose", Shape{a.cols(), a.rows()}, std::move(out), {&a}, [](NodeT<Scalar>& self) {
        auto& in = *self.inputs[0];
        if (wants(in)) in.grad_buffer() += self.grad.transpose();
    });
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError("add extents differ: " + extents(a.rows(), a.cols()) + " + " +
                             extents(b.rows(), b.cols()));
    }
    Matrix<Scalar> out = a.value() + b.value();
    return make_result<Scalar>("add", a.shape(), std::move(out), {&a, &b}, [](NodeT<Scalar>& self) {
        for (auto& in : self.inputs) {
            if (wants(*in)) in->grad_buffer() += self.grad;
        }
    });
}

template <typename Scalar>
Tensor<Scalar> add_bias(const Tensor<Scalar>& x, const Tensor<Scalar>& bias) {
    if (bias.size() != x.cols()) {
        throw DimensionError("bias of length " + std::to_string(bias.size()) + " for " + std::to_string(x.cols()) +
                             " columns");
    }
    Matrix<Scalar> out = x.value();
    const auto row = as_row(bias.value());
    out.rowwise() += row;
    return make_result<Scalar>("add_bias", x.shape(), std::move(out), {&x, &bias}, [](NodeT<Scalar>& self) {
        auto& in = *self.inputs[0];
        auto& b = *self.inputs[1];
        if (wants(in)) in.grad_buffer() += self.grad;
        if (wants(b)) {
            as_row(b.grad_buffer()) += self.grad.colwise().sum();
        }
    });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError("mul extents differ: " + extents(a.rows(), a.cols()) + " .* " +
                             extents(b.rows(), b.cols()));
    }
    Matrix<Scalar> out = a.value().cwiseProduct(b.value());
    return make_result<Scalar>("mul", a.shape(), std::move(out), {&a, &b}, [](NodeT<Scalar>& self) {
        auto& lhs = *self.inputs[0];
        auto& rhs = *self.inputs[1];
        if (wants(lhs)) lhs.grad_buffer() += self.grad.cwiseProduct(rhs.value);
        if (wants(rhs)) rhs.grad_buffer() += self.grad.cwiseProduct(lhs.value);
    });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
    Matrix<Scalar> out = a.value() * factor;
    return make_result<Scalar>("scale", a.shape(), std::move(out), {&a}, [factor](NodeT<Scalar>& self) {
        auto& in = *self.inputs[0];
        if (wants(in)) in.grad_buffer() += self.grad * factor;
    });
}

template <typename Scalar>
Tensor<Scalar> add_mask(const Tensor<Scalar>& scores, const Matrix<Scalar>& mask) {
    if (scores.rows() != mask.rows() || scores.cols() != mask.cols()) {
        throw DimensionError("mask " + extents(mask.rows(), mask.cols()) + " for scores " +
                             extents(scores.rows(), scores.cols()));
    }
    if (!scores.value().allFinite()) throw NumericError("add_mask on non-finite scores");
    Matrix<Scalar> out = scores.value() + mask;
    return make_result<Scalar>(
        "add_mask", scores.shape(), std::move(out), {&scores},
        [](NodeT<Scalar>& self) {
            auto& in = *self.inputs[0];
            if (!wants(in)) return;
            // Masked entries feed a softmax that outputs exactly zero there, so the
            // incoming gradient is already zero at those positions.
            in.grad_buffer() += self.grad;
        },
        false);
}

template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& x) {
    const auto& in = x.value();
    if (in.array().isNaN().any()) throw NumericError("softmax input contains NaN");
    if ((in.array() == std::numeric_limits<Scalar>::infinity()).any()) {
        throw NumericError("softmax input contains +inf");
    }
    Matrix<Scalar> out(in.rows(), in.cols());
    for (Index r = 0; r < in.rows(); ++r) {
        const Scalar peak = in.row(r).maxCoeff();
        if (peak == -std::numeric_limits<Scalar>::infinity()) {
            throw DegenerateRowError("softmax row " + std::to_string(r) + " is entirely masked");
        }
        const auto masked = in.row(r).array() == -std::numeric_limits<Scalar>::infinity();
        out.row(r) = masked.select(Scalar(0), (in.row(r).array() - peak).exp()).matrix();
        out.row(r) /= out.row(r).sum();
    }
    return make_result<Scalar>("softmax_rows", x.shape(), std::move(out), {&x}, [](NodeT<Scalar>& self) {
        auto& src = *self.inputs[0];
        if (!wants(src)) return;
        const auto& y = self.value;
        Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = self.grad.cwiseProduct(y).rowwise().sum();
        Matrix<Scalar> dx = self.grad;
        dx.colwise() -= dots;
        src.grad_buffer() += y.cwiseProduct(dx);
    });
}

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          Scalar eps) {
    const Index d = x.cols();
    if (gamma.size() != d || beta.size() != d) throw DimensionError("layer_norm gamma/beta length must equal row width");
    if (!(eps > Scalar(0))) throw UsageError("layer_norm eps must be positive");

    const auto& in = x.value();
    Matrix<Scalar> normalized(in.rows(), d);
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(in.rows());
    for (Index r = 0; r < in.rows(); ++r) {
        const Scalar mean = in.row(r).mean();
        auto centered = (in.row(r).array() - mean);
        const Scalar var = centered.square().mean();
        inv_std(r) = Scalar(1) / std::sqrt(var + eps);
        normalized.row(r) = (centered * inv_std(r)).matrix();
    }
    const auto g = as_row(gamma.value());
    const auto b = as_row(beta.value());
    Matrix<Scalar> out = normalized.array().rowwise() * g.array();
    out.rowwise() += b;

    return make_result<Scalar>("layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
                               [normalized = std::move(normalized), inv_std = std::move(inv_std)](NodeT<Scalar>& self) {
                                   auto& src = *self.inputs[0];
                                   auto& gm = *self.inputs[1];
                                   auto& bt = *self.inputs[2];
                                   const Index width = self.grad.cols();
                                   if (wants(gm)) {
                                       as_row(gm.grad_buffer()) +=
                                           self.grad.cwiseProduct(normalized).colwise().sum();
                                   }
                                   if (wants(bt)) {
                                       as_row(bt.grad_buffer()) += self.grad.colwise().sum();
                                   }
                                   if (!wants(src)) return;
                                   const auto g = as_row(gm.value);
                                   Matrix<Scalar> dnorm = self.grad.array().rowwise() * g.array();
                                   auto& dx = src.grad_buffer();
                                   for (Index r = 0; r < dnorm.rows(); ++r) {
                                       const Scalar mean_d = dnorm.row(r).mean();
                                       const Scalar mean_dn = dnorm.row(r).dot(normalized.row(r)) / Scalar(width);
                                       dx.row(r).array() += inv_std(r) * (dnorm.row(r).array() - mean_d -
                                                                          normalized.row(r).array() * mean_dn);
                                   }
                               });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
    Matrix<Scalar> out = x.value().cwiseMax(Scalar(0));
    return make_result<Scalar>("relu", x.shape(), std::move(out), {&x}, [](NodeT<Scalar>& self) {
        auto& in = *self.inputs[0];
        if (wants(in)) in.grad_buffer().array() += (in.value.array() > Scalar(0)).select(self.grad.array(), Scalar(0));
    });
}

template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) {
    const Scalar c = std::sqrt(Scalar(2) / std::numbers::pi_v<Scalar>);
    const Scalar k = Scalar(0.044715);
    const auto v = x.value().array();
    Matrix<Scalar> out = (Scalar(0.5) * v * (Scalar(1) + (c * (v + k * v.cube())).tanh())).matrix();
    return make_result<Scalar>("gelu", x.shape(), std::move(out), {&x}, [c, k](NodeT<Scalar>& self) {
        auto& in = *self.inputs[0];
        if (!wants(in)) return;
        const auto u = in.value.array();
        const auto t = (c * (u + k * u.cube())).tanh().eval();
        const auto deriv =
            (Scalar(0.5) * (Scalar(1) + t) + Scalar(0.5) * u * (Scalar(1) - t.square()) * c * (Scalar(1) + Scalar(3) * k * u.square()))
                .eval();
        in.grad_buffer().array() += self.grad.array() * deriv;
    });
}

template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& table, std::span<const TokenId> ids) {
    if (ids.empty()) throw DimensionError("gather_rows with no ids");
    Matrix<Scalar> out(static_cast<Index>(ids.size()), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table.rows()) {
            throw DimensionError("row id " + std::to_string(ids[i]) + " outside table of " +
                                 std::to_string(table.rows()) + " rows");
        }
        out.row(static_cast<Index>(i)) = table.value().row(ids[i]);
    }
    std::vector<TokenId> rows(ids.begin(), ids.end());
    return make_result<Scalar>("gather_rows", Shape{out.rows(), out.cols()}, std::move(out), {&table},
                               [rows = std::move(rows)](NodeT<Scalar>& self) {
                                   auto& src = *self.inputs[0];
                                   if (!wants(src)) return;
                                   auto& g = src.grad_buffer();
                                   for (std::size_t i = 0; i < rows.size(); ++i) {
                                       g.row(rows[i]) += self.grad.row(static_cast<Index>(i));
                                   }
                               });
}

template <typename Scalar>
Tensor<Scalar> slice_cols(const Tensor<Scalar>& x, Index start, Index count) {
    if (start < 0 || count <= 0 || start + count > x.cols()) {
        throw DimensionError("column slice [" + std::to_string(start) + ", " + std::to_string(start + count) +
                             ") outside " + std::to_string(x.cols()) + " columns");
    }
    Matrix<Scalar> out = x.value().middleCols(start, count);
    return make_result<Scalar>("slice_cols", Shape{x.rows(), count}, std::move(out), {&x},
                               [start, count](NodeT<Scalar>& self) {
                                   auto& in = *self.inputs[0];
                                   if (wants(in)) in.grad_buffer().middleCols(start, count) += self.grad;
                               });
}

template <typename Scalar>
Tensor<Scalar> concat_cols(std::span<const Tensor<Scalar>> parts) {
    if (parts.empty()) throw DimensionError("concat_cols of nothing");
    const Index rows = parts.front().rows();
    Index cols = 0;
    std::vector<Index> widths;
    for (const auto& p : parts) {
        if (p.rows() != rows) throw DimensionError("concat_cols row counts differ");
        widths.push_back(p.cols());
        cols += p.cols();
    }
    Matrix<Scalar> out(rows, cols);
    Index at = 0;
    std::vector<const Tensor<Scalar>*> inputs;
    for (const auto& p : parts) {
        out.middleCols(at, p.cols()) = p.value();
        at += p.cols();
        inputs.push_back(&p);
    }
    return make_result<Scalar>("concat_cols", Shape{rows, cols}, std::move(out), std::move(inputs),
                               [widths = std::move(widths)](NodeT<Scalar>& self) {
                                   Index offset = 0;
                                   for (std::size_t i = 0; i < widths.size(); ++i) {
                                       auto& in = *self.inputs[i];
                                       if (wants(in)) in.grad_buffer() += self.grad.middleCols(offset, widths[i]);
                                       offset += widths[i];
                                   }
                               });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
    Matrix<Scalar> out(1, 1);
    out(0, 0) = x.value().sum();
    return make_result<Scalar>("sum", Shape{}, std::move(out), {&x}, [](NodeT<Scalar>& self) {
        auto& in = *self.inputs[0];
        if (wants(in)) in.grad_buffer().array() += self.grad(0, 0);
    });
}

template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, std::span<const TokenId> targets,
                             const std::vector<bool>& loss_mask) {
    const Index rows = logits.rows();
    const Index vocab = logits.cols();
    if (static_cast<Index>(targets.size()) != rows || static_cast<Index>(loss_mask.size()) != rows) {
        throw DimensionError("cross_entropy needs one target and one mask flag per logits row");
    }
    Index active = 0;
    for (Index r = 0; r < rows; ++r) {
        if (!loss_mask[static_cast<std::size_t>(r)]) continue;
        const TokenId t = targets[static_cast<std::size_t>(r)];
        if (t < 0 || t >= vocab) throw UsageError("target id " + std::to_string(t) + " outside vocabulary");
        ++active;
    }
    if (active == 0) throw EmptyLossError("cross_entropy with every position masked");

    // Row-wise probabilities of the unmasked rows are kept for the backward pass.
    Matrix<Scalar> probs = Matrix<Scalar>::Zero(rows, vocab);
    Scalar total = 0;
    for (Index r = 0; r < rows; ++r) {
        if (!loss_mask[static_cast<std::size_t>(r)]) continue;
        const auto row = logits.value().row(r);
        const Scalar peak = row.maxCoeff();
        probs.row(r) = (row.array() - peak).exp().matrix();
        const Scalar z = probs.row(r).sum();
        probs.row(r) /= z;
        total += (peak + std::log(z)) - row(targets[static_cast<std::size_t>(r)]);
    }
    const Scalar count = static_cast<Scalar>(active);
    Matrix<Scalar> out(1, 1);
    out(0, 0) = total / count;

    std::vector<TokenId> tgt(targets.begin(), targets.end());
    std::vector<bool> mask = loss_mask;
    return make_result<Scalar>(
        "cross_entropy", Shape{}, std::move(out), {&logits},
        [probs = std::move(probs), tgt = std::move(tgt), mask = std::move(mask), count](NodeT<Scalar>& self) {
            auto& in = *self.inputs[0];
            if (!wants(in)) return;
            const Scalar upstream = self.grad(0, 0) / count;
            auto& g = in.grad_buffer();
            for (Index r = 0; r < probs.rows(); ++r) {
                if (!mask[static_cast<std::size_t>(r)]) continue;
                g.row(r) += upstream * probs.row(r);
                g(r, tgt[static_cast<std::size_t>(r)]) -= upstream;
            }
        });
}

#define PFXLM_INSTANTIATE_OPS(S)                                                                    \
    template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                  \
    template Tensor<S> transpose(const Tensor<S>&);                                                 \
    template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                     \
    template Tensor<S> add_bias(const Tensor<S>&, const Tensor<S>&);                                \
    template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                     \
    template Tensor<S> scale(const Tensor<S>&, S);                                                  \
    template Tensor<S> add_mask(const Tensor<S>&, const Matrix<S>&);                                \
    template Tensor<S> softmax_rows(const Tensor<S>&);                                              \
    template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);         \
    template Tensor<S> relu(const Tensor<S>&);                                                      \
    template Tensor<S> gelu(const Tensor<S>&);                                                      \
    template Tensor<S> gather_rows(const Tensor<S>&, std::span<const TokenId>);                     \
    template Tensor<S> slice_cols(const Tensor<S>&, Index, Index);                                  \
    template Tensor<S> concat_cols(std::span<const Tensor<S>>);                                     \
    template Tensor<S> sum(const Tensor<S>&);                                                       \
    template Tensor<S> cross_entropy(const Tensor<S>&, std::span<const TokenId>, const std::vector<bool>&);

PFXLM_INSTANTIATE_OPS(float)
PFXLM_INSTANTIATE_OPS(double)

#undef PFXLM_INSTANTIATE_OPS

}  // namespace pfxlm

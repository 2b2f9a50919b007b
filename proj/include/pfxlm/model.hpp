#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pfxlm/mask.hpp"
#include "pfxlm/ops.hpp"
#include "pfxlm/tensor.hpp"

namespace pfxlm {

enum class Activation { relu, gelu };

std::string to_string(Activation activation);
/// Throws UsageError on anything but "relu" or "gelu".
Activation parse_activation(const std::string& name);

struct ModelConfig {
    int n_layers = 4;
    int d_model = 64;
    int n_heads = 4;
    int d_ff = 256;
    int vocab_size = 258;
    int max_positions = 256;
    Activation activation = Activation::relu;

    int d_k() const { return d_model / n_heads; }
    /// Architecture invariants only (positive extents, d_model divisible by
    /// n_heads). Enough to build and run a model.
    void validate_shape() const;
    /// validate_shape() plus vocab_size >= 258, so that every byte and both
    /// special tokens have an embedding row. Required wherever a tokenizer
    /// feeds the model. Throws UsageError.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Name and shape of one learnable tensor, in canonical order.
struct ParameterSpec {
    std::string name;
    Shape shape;
};

/// Every learnable tensor implied by a config; the order is the order used by
/// init_params, the weights file and the optimizer.
std::vector<ParameterSpec> parameter_specs(const ModelConfig& config);
std::uint64_t parameter_count(const ModelConfig& config);

template <typename Scalar>
struct BlockParams {
    Tensor<Scalar> ln1_gamma, ln1_beta;
    Tensor<Scalar> attn_qkv;  // d_model x 3*d_model, columns [W^Q | W^K | W^V], head i owns d_k columns of each
    Tensor<Scalar> attn_out;  // W^O, d_model x d_model
    Tensor<Scalar> ln2_gamma, ln2_beta;
    Tensor<Scalar> ffn_w1, ffn_b1;
    Tensor<Scalar> ffn_w2, ffn_b2;
};

template <typename Scalar>
struct NamedTensor {
    std::string name;
    Tensor<Scalar> tensor;
};

/// All weights of the decoder stack. The LM head reuses embed_token.
template <typename Scalar>
struct ModelParams {
    ModelConfig config;
    Tensor<Scalar> embed_token;  // vocab_size x d_model
    Tensor<Scalar> embed_pos;    // max_positions x d_model
    std::vector<BlockParams<Scalar>> blocks;
    Tensor<Scalar> final_ln_gamma, final_ln_beta;

    /// Handles in parameter_specs order; the tensors are shared, not copied.
    std::vector<NamedTensor<Scalar>> named_parameters() const;
    void zero_grad() const;
    /// Deep copy with fresh leaves.
    ModelParams clone() const;
};

/// Deterministic in `seed`: weights ~ N(0, 0.02), biases 0, layer-norm gamma 1 and beta 0.
template <typename Scalar>
ModelParams<Scalar> init_params(const ModelConfig& config, std::uint64_t seed);

/// Builds leaves from already-shaped values given in parameter_specs order.
/// Throws ImportError on a count or shape mismatch.
template <typename Scalar>
ModelParams<Scalar> params_from_values(const ModelConfig& config, std::vector<Matrix<Scalar>> values);

/// Token plus learned position embedding, one row per token.
template <typename Scalar>
Tensor<Scalar> embed(const ModelParams<Scalar>& params, std::span<const TokenId> tokens);

/// softmax(Q K^T / sqrt(d_k) + M) V.
template <typename Scalar>
Tensor<Scalar> masked_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                const AttentionMask& mask);

template <typename Scalar>
Tensor<Scalar> masked_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                const Matrix<Scalar>& additive_mask);

/// Concat(head_1..head_h) W^O where head_i attends over slice i of the fused projections.
template <typename Scalar>
Tensor<Scalar> multi_head_self_attention(const Tensor<Scalar>& x, const Matrix<Scalar>& additive_mask,
                                         const BlockParams<Scalar>& block, int n_heads);

/// act(x W_1 + b_1) W_2 + b_2, row by row.
template <typename Scalar>
Tensor<Scalar> ffn(const Tensor<Scalar>& x, const BlockParams<Scalar>& block, Activation activation);

/// Pre-LN block: H = MHA(LN(X)) + X; X' = FFN(LN(H)) + H.
template <typename Scalar>
Tensor<Scalar> block_forward(const Tensor<Scalar>& x, const Matrix<Scalar>& additive_mask,
                             const BlockParams<Scalar>& block, const ModelConfig& config);

/// Final hidden states (after the last layer norm), T x d_model.
template <typename Scalar>
Tensor<Scalar> hidden_states(const ModelParams<Scalar>& params, std::span<const TokenId> tokens,
                             const AttentionMask& mask);

/// Next-token logits, T x vocab_size. Row t scores the token following position t.
template <typename Scalar>
Tensor<Scalar> forward(const ModelParams<Scalar>& params, std::span<const TokenId> tokens, const AttentionMask& mask);

}  // namespace pfxlm

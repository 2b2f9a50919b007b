#include "pfxlm/model.hpp"

#include <cmath>
#include <random>

namespace pfxlm {

std::string to_string(Activation activation) {
    return activation == Activation::gelu ? "gelu" : "relu";
}

Activation parse_activation(const std::string& name) {
    if (name == "relu") return Activation::relu;
    if (name == "gelu") return Activation::gelu;
    throw UsageError("unknown activation '" + name + "'");
}

void ModelConfig::validate_shape() const {
    if (n_layers < 1) throw UsageError("n_layers must be at least 1");
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
        throw UsageError("d_model must be a positive multiple of n_heads");
    }
    if (d_ff < 1) throw UsageError("d_ff must be positive");
    if (max_positions < 1) throw UsageError("max_positions must be at least 1");
    if (vocab_size < 1) throw UsageError("vocab_size must be positive");
}

void ModelConfig::validate() const {
    validate_shape();
    if (vocab_size < 258) throw UsageError("vocab_size must cover 256 bytes and 2 special tokens");
}

std::vector<ParameterSpec> parameter_specs(const ModelConfig& c) {
    c.validate_shape();
    const Index d = c.d_model;
    std::vector<ParameterSpec> specs;
    specs.push_back({"embed_token", {c.vocab_size, d}});
    specs.push_back({"embed_pos", {c.max_positions, d}});
    for (int i = 0; i < c.n_layers; ++i) {
        const std::string p = "block" + std::to_string(i) + ".";
        specs.push_back({p + "ln1.weight", {d}});
        specs.push_back({p + "ln1.bias", {d}});
        specs.push_back({p + "attn_qkv.weight", {d, 3 * d}});
        specs.push_back({p + "attn_out.weight", {d, d}});
        specs.push_back({p + "ln2.weight", {d}});
        specs.push_back({p + "ln2.bias", {d}});
        specs.push_back({p + "ffn_w1.weight", {d, c.d_ff}});
        specs.push_back({p + "ffn_b1.bias", {c.d_ff}});
        specs.push_back({p + "ffn_w2.weight", {c.d_ff, d}});
        specs.push_back({p + "ffn_b2.bias", {d}});
    }
    specs.push_back({"final_ln.gamma", {d}});
    specs.push_back({"final_ln.beta", {d}});
    return specs;
}

std::uint64_t parameter_count(const ModelConfig& config) {
    std::uint64_t total = 0;
    for (const auto& spec : parameter_specs(config)) {
        std::uint64_t n = 1;
        for (Index e : spec.shape) n *= static_cast<std::uint64_t>(e);
        total += n;
    }
    return total;
}

namespace {

// Pointers to every tensor slot of `p` in parameter_specs order.
template <typename Params>
auto slots(Params& p) {
    std::vector<decltype(&p.embed_token)> out{&p.embed_token, &p.embed_pos};
    for (auto& b : p.blocks) {
        for (auto* t : {&b.ln1_gamma, &b.ln1_beta, &b.attn_qkv, &b.attn_out, &b.ln2_gamma, &b.ln2_beta, &b.ffn_w1,
                        &b.ffn_b1, &b.ffn_w2, &b.ffn_b2}) {
            out.push_back(t);
        }
    }
    out.push_back(&p.final_ln_gamma);
    out.push_back(&p.final_ln_beta);
    return out;
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

template <typename Scalar>
std::vector<NamedTensor<Scalar>> ModelParams<Scalar>::named_parameters() const {
    auto specs = parameter_specs(config);
    auto tensors = slots(*this);
    std::vector<NamedTensor<Scalar>> out;
    out.reserve(specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) out.push_back({specs[i].name, *tensors[i]});
    return out;
}

template <typename Scalar>
void ModelParams<Scalar>::zero_grad() const {
    for (auto& named : named_parameters()) named.tensor.zero_grad();
}

template <typename Scalar>
ModelParams<Scalar> ModelParams<Scalar>::clone() const {
    std::vector<Matrix<Scalar>> values;
    for (const auto& named : named_parameters()) values.push_back(named.tensor.value());
    return params_from_values<Scalar>(config, std::move(values));
}

template <typename Scalar>
ModelParams<Scalar> params_from_values(const ModelConfig& config, std::vector<Matrix<Scalar>> values) {
    const auto specs = parameter_specs(config);
    if (values.size() != specs.size()) {
        throw ImportError("expected " + std::to_string(specs.size()) + " tensors, got " + std::to_string(values.size()));
    }
    ModelParams<Scalar> p;
    p.config = config;
    p.blocks.resize(static_cast<std::size_t>(config.n_layers));
    auto targets = slots(p);
    for (std::size_t i = 0; i < specs.size(); ++i) {
        auto [rows, cols] = storage_extents(specs[i].shape);
        if (values[i].size() != rows * cols) {
            throw ImportError("tensor " + specs[i].name + " has " + std::to_string(values[i].size()) +
                              " values, expected " + std::to_string(rows * cols));
        }
        if (!values[i].allFinite()) throw ImportError("tensor " + specs[i].name + " holds non-finite values");
        *targets[i] = Tensor<Scalar>(specs[i].shape, std::move(values[i]), true);
    }
    return p;
}

template <typename Scalar>
ModelParams<Scalar> init_params(const ModelConfig& config, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.02);
    std::vector<Matrix<Scalar>> values;
    for (const auto& spec : parameter_specs(config)) {
        auto [rows, cols] = storage_extents(spec.shape);
        Matrix<Scalar> m(rows, cols);
        const bool is_gamma = ends_with(spec.name, "ln1.weight") || ends_with(spec.name, "ln2.weight") ||
                              spec.name == "final_ln.gamma";
        const bool is_zero = ends_with(spec.name, ".bias") || spec.name == "final_ln.beta";
        if (is_gamma) {
            m.setOnes();
        } else if (is_zero) {
            m.setZero();
        } else {
            for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(normal(rng));
        }
        values.push_back(std::move(m));
    }
    return params_from_values<Scalar>(config, std::move(values));
}

template <typename Scalar>
Tensor<Scalar> embed(const ModelParams<Scalar>& params, std::span<const TokenId> tokens) {
    const auto length = static_cast<Index>(tokens.size());
    if (length == 0) throw LengthError("cannot embed an empty sequence");
    if (length > params.config.max_positions) {
        throw LengthError("sequence of " + std::to_string(length) + " tokens exceeds max_positions " +
                          std::to_string(params.config.max_positions));
    }
    for (TokenId t : tokens) {
        if (t < 0 || t >= params.config.vocab_size) throw VocabularyError("token id " + std::to_string(t) + " out of range");
    }
    std::vector<TokenId> positions(tokens.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<TokenId>(i);
    return add(gather_rows(params.embed_token, tokens), gather_rows(params.embed_pos, std::span<const TokenId>(positions)));
}

template <typename Scalar>
Tensor<Scalar> masked_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                const Matrix<Scalar>& additive_mask) {
    if (q.cols() != k.cols() || k.rows() != v.rows()) throw DimensionError("attention Q/K/V extents disagree");
    const Scalar inv_sqrt_dk = Scalar(1) / std::sqrt(static_cast<Scalar>(q.cols()));
    auto scores = scale(matmul(q, transpose(k)), inv_sqrt_dk);
    return matmul(softmax_rows(add_mask(scores, additive_mask)), v);
}

template <typename Scalar>
Tensor<Scalar> masked_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                const AttentionMask& mask) {
    return masked_attention(q, k, v, mask.additive<Scalar>());
}

template <typename Scalar>
Tensor<Scalar> multi_head_self_attention(const Tensor<Scalar>& x, const Matrix<Scalar>& additive_mask,
                                         const BlockParams<Scalar>& block, int n_heads) {
    const Index d = x.cols();
    if (block.attn_qkv.rows() != d || block.attn_qkv.cols() != 3 * d) throw DimensionError("attn_qkv must be d x 3d");
    if (n_heads < 1 || d % n_heads != 0) throw DimensionError("d_model not divisible by n_heads");
    const Index dk = d / n_heads;
    auto qkv = matmul(x, block.attn_qkv);
    std::vector<Tensor<Scalar>> heads;
    heads.reserve(static_cast<std::size_t>(n_heads));
    for (Index h = 0; h < n_heads; ++h) {
        auto q = slice_cols(qkv, h * dk, dk);
        auto k = slice_cols(qkv, d + h * dk, dk);
        auto v = slice_cols(qkv, 2 * d + h * dk, dk);
        heads.push_back(masked_attention(q, k, v, additive_mask));
    }
    return matmul(concat_cols(std::span<const Tensor<Scalar>>(heads)), block.attn_out);
}

template <typename Scalar>
Tensor<Scalar> ffn(const Tensor<Scalar>& x, const BlockParams<Scalar>& block, Activation activation) {
    auto inner = add_bias(matmul(x, block.ffn_w1), block.ffn_b1);
    auto activated = activation == Activation::gelu ? gelu(inner) : relu(inner);
    return add_bias(matmul(activated, block.ffn_w2), block.ffn_b2);
}

template <typename Scalar>
Tensor<Scalar> block_forward(const Tensor<Scalar>& x, const Matrix<Scalar>& additive_mask,
                             const BlockParams<Scalar>& block, const ModelConfig& config) {
    auto h = add(multi_head_self_attention(layer_norm(x, block.ln1_gamma, block.ln1_beta), additive_mask, block,
                                           config.n_heads),
                 x);
    return add(ffn(layer_norm(h, block.ln2_gamma, block.ln2_beta), block, config.activation), h);
}

template <typename Scalar>
Tensor<Scalar> hidden_states(const ModelParams<Scalar>& params, std::span<const TokenId> tokens,
                             const AttentionMask& mask) {
    if (mask.size() != static_cast<Index>(tokens.size())) {
        throw DimensionError("mask of size " + std::to_string(mask.size()) + " for " + std::to_string(tokens.size()) +
                             " tokens");
    }
    const Matrix<Scalar> additive = mask.additive<Scalar>();
    auto x = embed(params, tokens);
    for (const auto& block : params.blocks) x = block_forward(x, additive, block, params.config);
    return layer_norm(x, params.final_ln_gamma, params.final_ln_beta);
}

template <typename Scalar>
Tensor<Scalar> forward(const ModelParams<Scalar>& params, std::span<const TokenId> tokens, const AttentionMask& mask) {
    return matmul(hidden_states(params, tokens, mask), transpose(params.embed_token));
}

#define PFXLM_INSTANTIATE_MODEL(S)                                                                                   \
    template struct ModelParams<S>;                                                                                  \
    template ModelParams<S> init_params<S>(const ModelConfig&, std::uint64_t);                                       \
    template ModelParams<S> params_from_values<S>(const ModelConfig&, std::vector<Matrix<S>>);                       \
    template Tensor<S> embed(const ModelParams<S>&, std::span<const TokenId>);                                       \
    template Tensor<S> masked_attention(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, const AttentionMask&); \
    template Tensor<S> masked_attention(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, const Matrix<S>&);     \
    template Tensor<S> multi_head_self_attention(const Tensor<S>&, const Matrix<S>&, const BlockParams<S>&, int);    \
    template Tensor<S> ffn(const Tensor<S>&, const BlockParams<S>&, Activation);                                     \
    template Tensor<S> block_forward(const Tensor<S>&, const Matrix<S>&, const BlockParams<S>&, const ModelConfig&); \
    template Tensor<S> hidden_states(const ModelParams<S>&, std::span<const TokenId>, const AttentionMask&);         \
    template Tensor<S> forward(const ModelParams<S>&, std::span<const TokenId>, const AttentionMask&);

PFXLM_INSTANTIATE_MODEL(float)
PFXLM_INSTANTIATE_MODEL(double)

#undef PFXLM_INSTANTIATE_MODEL

}  // namespace pfxlm

#include <doctest.h>

#include <chrono>
#include <cmath>
#include <limits>
#include <random>

#include "gradcheck.hpp"
#include "pfxlm/model.hpp"

using namespace pfxlm;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

ModelConfig tiny_config() {
    ModelConfig c;
    c.n_layers = 2;
    c.d_model = 8;
    c.n_heads = 2;
    c.d_ff = 16;
    c.vocab_size = 16;
    c.max_positions = 6;
    return c;
}

Matrix<double> mask_matrix(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix<double> m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
    Index r = 0;
    for (const auto& row : rows) {
        Index c = 0;
        for (double v : row) m(r, c++) = v;
        ++r;
    }
    return m;
}

bool same_bits(const Matrix<double>& a, const Matrix<double>& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

Tensor<double> constant(Matrix<double> m) { return Tensor<double>::constant(std::move(m)); }

// A block whose tensors are all random constants of the right shapes.
BlockParams<double> random_block(const ModelConfig& c, std::mt19937_64& rng) {
    using testing::random_matrix;
    auto vec = [&](Index n, double sd, double mean) {
        Matrix<double> m = random_matrix(1, n, rng, sd);
        m.array() += mean;
        return Tensor<double>::parameter_vector(std::move(m));
    };
    BlockParams<double> b;
    const Index d = c.d_model;
    b.ln1_gamma = vec(d, 0.1, 1.0);
    b.ln1_beta = vec(d, 0.1, 0.0);
    b.attn_qkv = Tensor<double>::parameter(random_matrix(d, 3 * d, rng, 0.3));
    b.attn_out = Tensor<double>::parameter(random_matrix(d, d, rng, 0.3));
    b.ln2_gamma = vec(d, 0.1, 1.0);
    b.ln2_beta = vec(d, 0.1, 0.0);
    b.ffn_w1 = Tensor<double>::parameter(random_matrix(d, c.d_ff, rng, 0.3));
    b.ffn_b1 = vec(c.d_ff, 0.1, 0.0);
    b.ffn_w2 = Tensor<double>::parameter(random_matrix(c.d_ff, d, rng, 0.3));
    b.ffn_b2 = vec(d, 0.1, 0.0);
    return b;
}

// Straight-line pre-LN block with plain loops, sharing no code with the library.
using Rows = std::vector<std::vector<double>>;

Rows to_rows(const Matrix<double>& m) {
    Rows out(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
    return out;
}

Rows reference_layer_norm(const Rows& x, const Matrix<double>& g, const Matrix<double>& b) {
    Rows out = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double mean = 0, var = 0;
        for (double v : x[i]) mean += v;
        mean /= x[i].size();
        for (double v : x[i]) var += (v - mean) * (v - mean);
        var /= x[i].size();
        for (std::size_t j = 0; j < x[i].size(); ++j)
            out[i][j] = (x[i][j] - mean) / std::sqrt(var + 1e-5) * g.data()[j] + b.data()[j];
    }
    return out;
}

Rows reference_matmul(const Rows& a, const Matrix<double>& w) {
    Rows out(a.size(), std::vector<double>(static_cast<std::size_t>(w.cols()), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (Index j = 0; j < w.cols(); ++j)
            for (std::size_t k = 0; k < a[i].size(); ++k) out[i][j] += a[i][k] * w(static_cast<Index>(k), j);
    return out;
}

Rows reference_block(const Rows& x, const std::vector<std::vector<bool>>& visible, const BlockParams<double>& b,
                     int heads) {
    const std::size_t t = x.size(), d = x[0].size(), dk = d / heads;
    const Rows ln1 = reference_layer_norm(x, b.ln1_gamma.value(), b.ln1_beta.value());
    const Rows qkv = reference_matmul(ln1, b.attn_qkv.value());
    Rows concat(t, std::vector<double>(d, 0.0));
    for (int h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < t; ++i) {
            std::vector<double> w(t, 0.0);
            double top = -kInf;
            for (std::size_t j = 0; j < t; ++j) {
                if (!visible[i][j]) continue;
                double s = 0;
                for (std::size_t k = 0; k < dk; ++k) s += qkv[i][h * dk + k] * qkv[j][d + h * dk + k];
                w[j] = s / std::sqrt(static_cast<double>(dk));
                top = std::max(top, w[j]);
            }
            double z = 0;
            for (std::size_t j = 0; j < t; ++j) {
                w[j] = visible[i][j] ? std::exp(w[j] - top) : 0.0;
                z += w[j];
            }
            for (std::size_t j = 0; j < t; ++j)
                for (std::size_t k = 0; k < dk; ++k) concat[i][h * dk + k] += w[j] / z * qkv[j][2 * d + h * dk + k];
        }
    }
    Rows hidden = reference_matmul(concat, b.attn_out.value());
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < d; ++j) hidden[i][j] += x[i][j];
    Rows inner = reference_matmul(reference_layer_norm(hidden, b.ln2_gamma.value(), b.ln2_beta.value()),
                                  b.ffn_w1.value());
    for (auto& row : inner)
        for (std::size_t j = 0; j < row.size(); ++j) row[j] = std::max(0.0, row[j] + b.ffn_b1.value().data()[j]);
    Rows out = reference_matmul(inner, b.ffn_w2.value());
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i][j] += b.ffn_b2.value().data()[j] + hidden[i][j];
    return out;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("causal mask") {
    CHECK(build_causal_mask(1).additive<double>() == mask_matrix({{0}}));
    CHECK(same_bits(build_causal_mask(3).additive<double>(),
                    mask_matrix({{0, -kInf, -kInf}, {0, 0, -kInf}, {0, 0, 0}})));
    const auto m = build_causal_mask(7);
    for (Index i = 0; i < 7; ++i) CHECK(m.visibility().row(i).count() == i + 1);
    CHECK_THROWS_AS(build_causal_mask(0), UsageError);
}

TEST_CASE("prefix mask") {
    CHECK(same_bits(build_prefix_mask(2, 2).additive<double>(),
                    mask_matrix({{0, 0, -kInf, -kInf}, {0, 0, -kInf, -kInf}, {0, 0, 0, -kInf}, {0, 0, 0, 0}})));
    CHECK(build_prefix_mask(3, 0).additive<double>() == Matrix<double>::Zero(3, 3));
    CHECK(same_bits(build_prefix_mask(1, 1).additive<double>(), mask_matrix({{0, -kInf}, {0, 0}})));
    CHECK_THROWS_AS(build_prefix_mask(0, 2), EmptySourceError);

    VisibilityMatrix hidden_diagonal = VisibilityMatrix::Constant(2, 2, true);
    hidden_diagonal(1, 1) = false;
    CHECK_THROWS_AS(AttentionMask{hidden_diagonal}, UsageError);
}

TEST_CASE("embed") {
    ModelConfig c = tiny_config();
    auto params = init_params<double>(c, 3);

    const std::vector<TokenId> seven{7};
    const auto one = embed(params, seven).value();
    CHECK(same_bits(one, params.embed_token.value().row(7) + params.embed_pos.value().row(0)));

    const std::vector<TokenId> twice{5, 5};
    const auto pair = embed(params, twice).value();
    CHECK((pair.row(1) - pair.row(0)).isApprox(params.embed_pos.value().row(1) - params.embed_pos.value().row(0),
                                               1e-12));

    params.embed_token.mutable_value().setZero();
    params.embed_pos.mutable_value().setZero();
    CHECK(embed(params, twice).value().isZero(0));

    const std::vector<TokenId> too_long(7, 1), bad_id{16}, empty;
    CHECK_THROWS_AS(embed(params, too_long), LengthError);
    CHECK_THROWS_AS(embed(params, bad_id), VocabularyError);
    CHECK_THROWS_AS(embed(params, empty), LengthError);
}

TEST_CASE("masked attention examples") {
    std::mt19937_64 rng(5);
    const auto v1 = constant(testing::random_matrix(1, 3, rng));
    const auto q1 = constant(testing::random_matrix(1, 3, rng));
    CHECK(same_bits(masked_attention(q1, q1, v1, build_causal_mask(1)).value(), v1.value()));

    const auto q = constant(testing::random_matrix(2, 3, rng));
    const auto k = constant(testing::random_matrix(2, 3, rng));
    const auto v = constant(testing::random_matrix(2, 3, rng));
    const auto out = masked_attention(q, k, v, build_causal_mask(2)).value();
    CHECK(same_bits(Matrix<double>(out.row(0)), Matrix<double>(v.value().row(0))));

    const auto zeros = constant(Matrix<double>::Zero(2, 3));
    const auto uniform = masked_attention(zeros, zeros, v, build_prefix_mask(2, 0)).value();
    const Matrix<double> mean = v.value().colwise().mean();
    CHECK(uniform.row(0).isApprox(mean, 1e-12));
    CHECK(uniform.row(1).isApprox(mean, 1e-12));

    Matrix<double> all_masked = Matrix<double>::Constant(2, 2, -kInf);
    all_masked(1, 1) = 0;
    CHECK_THROWS_AS(masked_attention(q, k, v, all_masked), DegenerateRowError);
}

TEST_CASE("attention weights sum to one and masked keys get exactly zero") {
    std::mt19937_64 rng(6);
    const Index t = 6;
    const auto mask = build_prefix_mask(3, 3);
    const auto q = constant(testing::random_matrix(t, 4, rng));
    const auto k = constant(testing::random_matrix(t, 4, rng));
    const auto eye = constant(Matrix<double>::Identity(t, t));
    const auto weights = masked_attention(q, k, eye, mask).value();
    for (Index i = 0; i < t; ++i) {
        CHECK(std::abs(weights.row(i).sum() - 1.0) < 1e-6);
        for (Index j = 0; j < t; ++j) {
            if (!mask.visible(i, j)) CHECK(weights(i, j) == 0.0);
        }
    }
}

TEST_CASE("multi-head attention") {
    ModelConfig c = tiny_config();
    std::mt19937_64 rng(7);

    SUBCASE("single head with identity projections returns the input") {
        BlockParams<double> b;
        Matrix<double> qkv(3, 9);
        qkv << Matrix<double>::Identity(3, 3), Matrix<double>::Identity(3, 3), Matrix<double>::Identity(3, 3);
        b.attn_qkv = constant(qkv);
        b.attn_out = constant(Matrix<double>::Identity(3, 3));
        const auto x = constant(testing::random_matrix(1, 3, rng));
        const Matrix<double> zero = Matrix<double>::Zero(1, 1);
        CHECK(same_bits(multi_head_self_attention(x, zero, b, 1).value(), x.value()));
    }

    SUBCASE("two heads equal the hand-assembled concat of single-head runs") {
        const auto b = random_block(c, rng);
        const Index d = c.d_model, dk = d / 2;
        const auto x = constant(testing::random_matrix(5, d, rng));
        const Matrix<double> mask = build_prefix_mask(2, 3).additive<double>();
        const Matrix<double> proj = x.value() * b.attn_qkv.value();
        Matrix<double> concat(5, d);
        for (Index h = 0; h < 2; ++h) {
            const auto q = constant(proj.middleCols(h * dk, dk));
            const auto k = constant(proj.middleCols(d + h * dk, dk));
            const auto v = constant(proj.middleCols(2 * d + h * dk, dk));
            concat.middleCols(h * dk, dk) = masked_attention(q, k, v, mask).value();
        }
        const Matrix<double> expected = concat * b.attn_out.value();
        const auto got = multi_head_self_attention(x, mask, b, 2).value();
        CHECK(got.isApprox(expected, 1e-12));
        CHECK(same_bits(got, multi_head_self_attention(x, mask, b, 2).value()));
    }
}

TEST_CASE("feed-forward network") {
    BlockParams<double> b;
    b.ffn_w1 = constant(mask_matrix({{-2, 3}}));
    b.ffn_b1 = Tensor<double>({2}, Matrix<double>::Zero(1, 2));
    b.ffn_w2 = constant(mask_matrix({{1}, {1}}));
    b.ffn_b2 = Tensor<double>({1}, Matrix<double>::Zero(1, 1));
    const auto one = constant(mask_matrix({{1}}));
    CHECK(ffn(one, b, Activation::relu).value()(0, 0) == 3.0);

    std::mt19937_64 rng(8);
    BlockParams<double> z;
    z.ffn_w1 = constant(Matrix<double>::Zero(4, 6));
    z.ffn_b1 = Tensor<double>({6}, Matrix<double>::Zero(1, 6));
    z.ffn_w2 = constant(Matrix<double>::Zero(6, 4));
    Matrix<double> c = testing::random_matrix(1, 4, rng);
    z.ffn_b2 = Tensor<double>({4}, c);
    const auto out = ffn(constant(testing::random_matrix(3, 4, rng)), z, Activation::relu).value();
    for (Index r = 0; r < 3; ++r) CHECK(same_bits(Matrix<double>(out.row(r)), c));

    const auto blk = random_block(tiny_config(), rng);
    const Matrix<double> x = testing::random_matrix(4, 8, rng);
    Matrix<double> permuted(4, 8);
    const std::vector<Index> order{2, 0, 3, 1};
    for (Index r = 0; r < 4; ++r) permuted.row(r) = x.row(order[r]);
    for (auto act : {Activation::relu, Activation::gelu}) {
        const auto a = ffn(constant(x), blk, act).value();
        const auto p = ffn(constant(permuted), blk, act).value();
        for (Index r = 0; r < 4; ++r) CHECK(p.row(r).isApprox(a.row(order[r]), 1e-12));
    }
}

TEST_CASE("block forward") {
    ModelConfig c = tiny_config();
    std::mt19937_64 rng(9);

    SUBCASE("zero sublayer weights pass the residual through") {
        auto b = random_block(c, rng);
        for (auto* t : {&b.attn_qkv, &b.attn_out, &b.ffn_w1, &b.ffn_w2, &b.ffn_b1}) t->mutable_value().setZero();
        const Matrix<double> x = testing::random_matrix(4, 8, rng);
        const auto out = block_forward(constant(x), build_causal_mask(4).additive<double>(), b, c).value();
        Matrix<double> expected = x;
        expected.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.ffn_b2.value().data(), 8);
        CHECK(out.isApprox(expected, 1e-12));
    }

    SUBCASE("matches a straight-line re-implementation") {
        const auto b = random_block(c, rng);
        for (Index t : {1, 3, 6}) {
            const Matrix<double> x = testing::random_matrix(t, 8, rng);
            const auto mask = build_prefix_mask(std::max<Index>(1, t / 2), t - std::max<Index>(1, t / 2));
            std::vector<std::vector<bool>> visible(t, std::vector<bool>(t));
            for (Index i = 0; i < t; ++i)
                for (Index j = 0; j < t; ++j) visible[i][j] = mask.visible(i, j);
            const auto out = block_forward(constant(x), mask.additive<double>(), b, c).value();
            CHECK(out.rows() == t);
            CHECK(out.cols() == 8);
            const Rows expected = reference_block(to_rows(x), visible, b, c.n_heads);
            double worst = 0;
            for (Index i = 0; i < t; ++i)
                for (Index j = 0; j < 8; ++j) worst = std::max(worst, std::abs(out(i, j) - expected[i][j]));
            CHECK(worst < 1e-12);
        }
    }
}

TEST_CASE("forward shape and determinism") {
    const auto params = init_params<double>(tiny_config(), 11);
    const std::vector<TokenId> tokens{1, 4, 9, 2, 15};
    const auto a = forward(params, tokens, build_causal_mask(5)).value();
    CHECK(a.rows() == 5);
    CHECK(a.cols() == 16);
    CHECK(same_bits(a, forward(params, tokens, build_causal_mask(5)).value()));
    CHECK_THROWS_AS(forward(params, tokens, build_causal_mask(4)), DimensionError);
}

TEST_CASE("causal invariance") {
    const auto params = init_params<double>(tiny_config(), 12);
    const std::vector<TokenId> base{3, 1, 4, 1, 5, 9};
    const auto ref = forward(params, base, build_causal_mask(6)).value();
    for (Index t = 0; t + 1 < 6; ++t) {
        auto changed = base;
        for (Index k = t + 1; k < 6; ++k) changed[k] = (changed[k] + 7) % 16;
        const auto out = forward(params, changed, build_causal_mask(6)).value();
        CHECK(same_bits(out.topRows(t + 1), ref.topRows(t + 1)));
        CHECK_FALSE(same_bits(out.row(t + 1), ref.row(t + 1)));
    }
}

TEST_CASE("prefix invariance") {
    const auto params = init_params<double>(tiny_config(), 13);
    const auto mask = build_prefix_mask(3, 3);
    const std::vector<TokenId> base{2, 7, 1, 8, 2, 8};
    const auto ref_hidden = hidden_states(params, base, mask).value();
    const auto ref_logits = forward(params, base, mask).value();

    auto target_changed = base;
    target_changed[3] = 11;
    target_changed[4] = 12;
    target_changed[5] = 13;
    CHECK(same_bits(hidden_states(params, target_changed, mask).value().topRows(3), ref_hidden.topRows(3)));

    for (Index j = 3; j < 6; ++j) {
        auto later = base;
        for (Index k = j + 1; k < 6; ++k) later[k] = (later[k] + 5) % 16;
        CHECK(same_bits(forward(params, later, mask).value().topRows(j + 1), ref_logits.topRows(j + 1)));
    }

    for (Index s = 0; s < 3; ++s) {
        auto source_changed = base;
        source_changed[s] = (source_changed[s] + 3) % 16;
        const auto out = forward(params, source_changed, mask).value();
        for (Index j = 3; j < 6; ++j) CHECK_FALSE(same_bits(out.row(j), ref_logits.row(j)));
    }
}

TEST_CASE("gradient check of the tiny model") {
    const auto start = std::chrono::steady_clock::now();
    auto params = init_params<double>(tiny_config(), 14);
    std::mt19937_64 rng(15);
    std::normal_distribution<double> noise(0.0, 0.3);
    for (auto& named : params.named_parameters()) {
        for (Index i = 0; i < named.tensor.size(); ++i) named.tensor.mutable_value().data()[i] += noise(rng);
    }
    const std::vector<TokenId> tokens{3, 9, 0, 12, 5, 7};
    const std::vector<TokenId> targets{9, 0, 12, 5, 7, 1};
    const std::vector<bool> use{false, false, true, true, true, true};
    const auto mask = build_prefix_mask(3, 3);
    std::vector<Tensor<double>> leaves;
    for (const auto& named : params.named_parameters()) leaves.push_back(named.tensor);
    const double err = testing::max_relative_error(
        leaves, [&] { return cross_entropy(forward(params, tokens, mask), targets, use); });
    CHECK(err < 1e-4);
    CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(60));
}

TEST_CASE("init_params") {
    ModelConfig c = tiny_config();
    const auto a = init_params<double>(c, 21);
    const auto b = init_params<double>(c, 21);
    const auto other = init_params<double>(c, 22);
    const auto na = a.named_parameters(), nb = b.named_parameters(), no = other.named_parameters();
    REQUIRE(na.size() == nb.size());
    bool any_differs = false;
    for (std::size_t i = 0; i < na.size(); ++i) {
        CHECK(na[i].name == nb[i].name);
        CHECK(same_bits(na[i].tensor.value(), nb[i].tensor.value()));
        any_differs |= !same_bits(na[i].tensor.value(), no[i].tensor.value());
    }
    CHECK(any_differs);
    for (const auto& block : a.blocks) {
        CHECK((block.ln1_gamma.value().array() == 1.0).all());
        CHECK((block.ln2_gamma.value().array() == 1.0).all());
        CHECK(block.ffn_b1.value().isZero(0));
    }
    CHECK((a.final_ln_gamma.value().array() == 1.0).all());
    const auto& w = a.embed_token.value();
    const double sd = std::sqrt((w.array() - w.mean()).square().mean());
    CHECK(sd == doctest::Approx(0.02).epsilon(0.25));
}

TEST_CASE("config validation") {
    ModelConfig c = tiny_config();
    CHECK_NOTHROW(c.validate_shape());
    CHECK_THROWS_AS(c.validate(), UsageError);
    c.vocab_size = 258;
    CHECK_NOTHROW(c.validate());
    c.n_heads = 3;
    CHECK_THROWS_AS(c.validate_shape(), UsageError);
    c = tiny_config();
    c.max_positions = 0;
    CHECK_THROWS_AS(c.validate_shape(), UsageError);
    CHECK(parse_activation("gelu") == Activation::gelu);
    CHECK_THROWS_AS(parse_activation("tanh"), UsageError);
}

TEST_CASE("parameter count at GPT-2 small scale") {
    ModelConfig c;
    c.n_layers = 12;
    c.d_model = 768;
    c.n_heads = 12;
    c.d_ff = 3072;
    c.vocab_size = 50257;
    c.max_positions = 1024;
    const std::uint64_t per_block = 2 * 768 + 768 * 2304 + 768 * 768 + 2 * 768 + 768 * 3072 + 3072 + 3072 * 768 + 768;
    const std::uint64_t expected = 50257ull * 768 + 1024 * 768 + 12 * per_block + 2 * 768;
    CHECK(expected == 124402944ull);
    CHECK(parameter_count(c) == expected);
    CHECK(std::abs(static_cast<double>(parameter_count(c)) - 117e6) / 117e6 < 0.07);
}

}  // TEST_SUITE

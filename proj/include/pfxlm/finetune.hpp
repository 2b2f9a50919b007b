#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pfxlm/model.hpp"
#include "pfxlm/rct_data.hpp"
#include "pfxlm/tokenizer.hpp"
#include "pfxlm/weights_io.hpp"

namespace pfxlm {

/// Appended to the source when no hint words are given.
inline constexpr std::string_view kConclusionPrompt = "In conclusion , ";

/// One training sequence: source region, forced hint prefix, then the target
/// that is actually predicted.
struct EncodedExample {
    std::vector<TokenId> source_ids;         // ends with the separator
    std::vector<TokenId> forced_prefix_ids;  // hint words, possibly empty
    std::vector<TokenId> target_ids;         // ends with end-of-text

    std::size_t size() const { return source_ids.size() + forced_prefix_ids.size() + target_ids.size(); }
    std::vector<TokenId> sequence() const;
    /// True exactly on the target_ids positions.
    std::vector<bool> loss_mask() const;
};

/// Splits the first `n_hints` words off the target. Throws ShortTargetError
/// when the target has fewer words, EmptySourceError on a blank source.
EncodedExample prepare_example(const RctExample& example, std::size_t n_hints, const Tokenizer& tokenizer);

/// Keeps examples whose encoded length is strictly below `max_len`, in order.
std::vector<EncodedExample> filter_long(std::vector<EncodedExample> examples, std::size_t max_len = 500);

struct SgdConfig {
    double lr = 0.001;
    double momentum = 0.9;
    double weight_decay = 0.0005;
};

template <typename Scalar>
struct OptimizerState {
    SgdConfig config;
    std::vector<Matrix<Scalar>> velocity;  // parameter_specs order

    static OptimizerState zeros(const ModelParams<Scalar>& params, SgdConfig config);
};

/// g' = g + weight_decay * p;  v = momentum * v + g';  p = p - lr * v.
template <typename Scalar>
void sgd_step(Matrix<Scalar>& param, const Matrix<Scalar>& grad, Matrix<Scalar>& velocity, const SgdConfig& config);

/// Applies sgd_step to every parameter using grad_scale * (its gradient).
template <typename Scalar>
void sgd_update(const ModelParams<Scalar>& params, OptimizerState<Scalar>& state, Scalar grad_scale = Scalar(1));

/// Prefix mask over the example, shifted next-token targets, loss on the
/// target region only. Records on the active tape if there is one.
template <typename Scalar>
Tensor<Scalar> example_loss(const ModelParams<Scalar>& params, const EncodedExample& example);

/// Zeroes gradients, accumulates the per-example gradients, takes one SGD step
/// on their mean and returns the mean loss. Throws UsageError on an empty
/// batch and LengthError when a sequence exceeds max_positions.
template <typename Scalar>
double training_step(const ModelParams<Scalar>& params, std::span<const EncodedExample> batch,
                     OptimizerState<Scalar>& state);

/// Mean loss without touching gradients.
template <typename Scalar>
double evaluate_loss(const ModelParams<Scalar>& params, std::span<const EncodedExample> examples);

/// Dataset indices used by training step `step` (0-based): a stream of
/// per-epoch shuffles, each seeded by (seed, epoch), cut into consecutive
/// batches. Depends only on its arguments, which makes resumption exact.
std::vector<std::size_t> batch_indices(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                                       std::uint64_t step);

/// Weights, one `optimizer.<name>.velocity` tensor per parameter, and the step
/// count in the meta line.
template <typename Scalar>
TensorMap make_checkpoint(const ModelParams<Scalar>& params, const OptimizerState<Scalar>& state, std::uint64_t step);

template <typename Scalar>
struct Checkpoint {
    ModelParams<Scalar> params;
    OptimizerState<Scalar> state;
    std::uint64_t step = 0;
};

/// Throws ImportError on a missing velocity or step entry.
template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const TensorMap& map, const SgdConfig& config);

/// key=value training configuration. Blank lines and lines starting with '#'
/// are ignored.
struct TrainConfig {
    std::uint64_t seed = 0;
    std::size_t n_hints = 0;
    std::size_t batch_size = 8;
    std::uint64_t steps = 0;
    SgdConfig sgd;
    std::size_t max_len = 500;
    std::filesystem::path checkpoint_path;
    std::uint64_t checkpoint_every = 0;  // 0: only at the end
    std::filesystem::path examples_path;
    std::filesystem::path vocab_path;
    std::filesystem::path merges_path;
    std::filesystem::path loss_log_path;  // defaults to <checkpoint>.loss.csv
    ModelConfig model;                    // vocab_size comes from the tokenizer
};

/// Throws UsageError naming the first missing required key or a bad value.
TrainConfig parse_train_config(std::istream& in);
TrainConfig load_train_config(const std::filesystem::path& path);

struct FinetuneReport {
    std::uint64_t start_step = 0;
    std::uint64_t end_step = 0;
    std::size_t examples_used = 0;
    std::size_t examples_dropped = 0;
    double last_loss = 0;
};

/// Reads examples and tokenizer, resumes from checkpoint_path when it exists,
/// trains in float32 up to `steps` total steps, writing checkpoints and
/// appending "step,loss" rows to the loss log.
FinetuneReport run_finetune(const TrainConfig& config);

}  // namespace pfxlm

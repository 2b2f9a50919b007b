#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pfxlm/model.hpp"

namespace pfxlm {

/// One named float32 tensor as stored on disk.
struct TensorRecord {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

/// Contents of a tensor-map file:
///
///     PFXLM1 <tensor-count>
///     meta<TAB>key=value key=value ...        (optional)
///     <name><TAB><rank><TAB><dims space-separated>
///     <product(dims) little-endian float32 values>
///     ...
struct TensorMap {
    std::map<std::string, std::string> meta;
    std::vector<TensorRecord> tensors;

    const TensorRecord* find(const std::string& name) const;
};

void write_tensor_map(std::ostream& out, const TensorMap& map);
/// Throws ImportError on a bad header, truncated payload or duplicate name.
TensorMap read_tensor_map(std::istream& in);

TensorMap read_tensor_map(const std::filesystem::path& path);
/// Writes to a sibling temporary file and renames it into place.
void write_tensor_map(const std::filesystem::path& path, const TensorMap& map);

/// Architecture keys written into the meta line (n_layers, d_model, ...).
void put_config(std::map<std::string, std::string>& meta, const ModelConfig& config);
/// Throws ImportError when a key is missing or malformed.
ModelConfig config_from_meta(const std::map<std::string, std::string>& meta);

template <typename Scalar>
TensorRecord to_record(const std::string& name, const Tensor<Scalar>& tensor);

template <typename Scalar>
Matrix<Scalar> record_values(const TensorRecord& record);

/// Model weights plus the architecture in the meta line.
template <typename Scalar>
TensorMap weights_to_map(const ModelParams<Scalar>& params);

/// Every tensor of parameter_specs(config) must be present with a matching
/// shape; extra tensors (optimizer state) are ignored. Throws ImportError.
template <typename Scalar>
ModelParams<Scalar> params_from_map(const TensorMap& map, const ModelConfig& config);

template <typename Scalar>
void export_weights(const ModelParams<Scalar>& params, const std::filesystem::path& path);

/// Reads the file and checks it against `config`.
template <typename Scalar>
ModelParams<Scalar> import_weights(const std::filesystem::path& path, const ModelConfig& config);

/// Reads the file, taking the architecture from its meta line.
template <typename Scalar>
ModelParams<Scalar> import_weights(const std::filesystem::path& path);

}  // namespace pfxlm

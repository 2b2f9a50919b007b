#include "pfxlm/weights_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace pfxlm {

namespace {

constexpr const char* kMagic = "PFXLM1";

std::uint32_t to_little_endian(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v & 0xff0000u) >> 8) | (v >> 24);
    }
}

std::uint64_t element_count(const Shape& shape) {
    std::uint64_t n = 1;
    for (Index e : shape) n *= static_cast<std::uint64_t>(e);
    return n;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) parts.push_back(cur);
    if (!s.empty() && s.back() == sep) parts.emplace_back();
    return parts;
}

long long parse_int(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(s, &used);
        if (used != s.size()) throw ImportError("bad " + what + " '" + s + "'");
        return v;
    } catch (const std::logic_error&) {
        throw ImportError("bad " + what + " '" + s + "'");
    }
}

}  // namespace

const TensorRecord* TensorMap::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

void write_tensor_map(std::ostream& out, const TensorMap& map) {
    out << kMagic << ' ' << map.tensors.size() << '\n';
    if (!map.meta.empty()) {
        out << "meta\t";
        bool first = true;
        for (const auto& [key, value] : map.meta) {
            if (!first) out << ' ';
            out << key << '=' << value;
            first = false;
        }
        out << '\n';
    }
    for (const auto& t : map.tensors) {
        if (element_count(t.shape) != t.data.size()) throw UsageError("tensor " + t.name + " data does not match shape");
        out << t.name << '\t' << t.shape.size() << '\t';
        for (std::size_t i = 0; i < t.shape.size(); ++i) out << (i ? " " : "") << t.shape[i];
        out << '\n';
        for (float f : t.data) {
            std::uint32_t bits = to_little_endian(std::bit_cast<std::uint32_t>(f));
            out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
        }
    }
    if (!out) throw Error("failed writing tensor map");
}

TensorMap read_tensor_map(std::istream& in) {
    TensorMap map;
    std::string line;
    if (!std::getline(in, line)) throw ImportError("empty tensor map");
    std::istringstream header(line);
    std::string magic;
    long long count = -1;
    header >> magic >> count;
    if (magic != kMagic || count < 0) throw ImportError("not a PFXLM1 tensor map");

    std::set<std::string> names;
    for (long long i = 0; i < count; ++i) {
        if (!std::getline(in, line)) throw ImportError("truncated tensor map: expected " + std::to_string(count) + " tensors");
        if (i == 0 && line.rfind("meta\t", 0) == 0) {
            std::istringstream pairs(line.substr(5));
            std::string kv;
            while (pairs >> kv) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) throw ImportError("bad meta entry '" + kv + "'");
                map.meta[kv.substr(0, eq)] = kv.substr(eq + 1);
            }
            if (!std::getline(in, line)) throw ImportError("truncated tensor map after meta line");
        }
        const auto fields = split(line, '\t');
        if (fields.size() != 3) throw ImportError("bad tensor header '" + line + "'");
        TensorRecord rec;
        rec.name = fields[0];
        const long long rank = parse_int(fields[1], "rank");
        if (rank < 0) throw ImportError("negative rank for " + rec.name);
        std::istringstream dims(fields[2]);
        std::string dim;
        while (dims >> dim) rec.shape.push_back(static_cast<Index>(parse_int(dim, "extent")));
        if (static_cast<long long>(rec.shape.size()) != rank) throw ImportError("rank/dims disagree for " + rec.name);
        for (Index e : rec.shape) {
            if (e <= 0) throw ImportError("non-positive extent for " + rec.name);
        }
        if (!names.insert(rec.name).second) throw ImportError("duplicate tensor " + rec.name);
        const auto n = element_count(rec.shape);
        rec.data.resize(n);
        for (std::uint64_t j = 0; j < n; ++j) {
            std::uint32_t bits = 0;
            if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) {
                throw ImportError("truncated payload for " + rec.name);
            }
            rec.data[j] = std::bit_cast<float>(to_little_endian(bits));
        }
        map.tensors.push_back(std::move(rec));
    }
    return map;
}

TensorMap read_tensor_map(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImportError("cannot open " + path.string());
    return read_tensor_map(in);
}

void write_tensor_map(const std::filesystem::path& path, const TensorMap& map) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        write_tensor_map(out, map);
    }
    std::filesystem::rename(tmp, path);
}

void put_config(std::map<std::string, std::string>& meta, const ModelConfig& c) {
    meta["n_layers"] = std::to_string(c.n_layers);
    meta["d_model"] = std::to_string(c.d_model);
    meta["n_heads"] = std::to_string(c.n_heads);
    meta["d_ff"] = std::to_string(c.d_ff);
    meta["vocab_size"] = std::to_string(c.vocab_size);
    meta["max_positions"] = std::to_string(c.max_positions);
    meta["activation"] = to_string(c.activation);
}

ModelConfig config_from_meta(const std::map<std::string, std::string>& meta) {
    auto get = [&](const char* key) -> const std::string& {
        auto it = meta.find(key);
        if (it == meta.end()) throw ImportError(std::string("meta line lacks ") + key);
        return it->second;
    };
    ModelConfig c;
    c.n_layers = static_cast<int>(parse_int(get("n_layers"), "n_layers"));
    c.d_model = static_cast<int>(parse_int(get("d_model"), "d_model"));
    c.n_heads = static_cast<int>(parse_int(get("n_heads"), "n_heads"));
    c.d_ff = static_cast<int>(parse_int(get("d_ff"), "d_ff"));
    c.vocab_size = static_cast<int>(parse_int(get("vocab_size"), "vocab_size"));
    c.max_positions = static_cast<int>(parse_int(get("max_positions"), "max_positions"));
    try {
        c.activation = parse_activation(get("activation"));
        c.validate();
    } catch (const UsageError& e) {
        throw ImportError(e.what());
    }
    return c;
}

template <typename Scalar>
TensorRecord to_record(const std::string& name, const Tensor<Scalar>& tensor) {
    TensorRecord rec{name, tensor.shape(), {}};
    rec.data.reserve(static_cast<std::size_t>(tensor.size()));
    const auto& v = tensor.value();
    for (Index i = 0; i < v.size(); ++i) rec.data.push_back(static_cast<float>(v.data()[i]));
    return rec;
}

template <typename Scalar>
Matrix<Scalar> record_values(const TensorRecord& record) {
    auto [rows, cols] = storage_extents(record.shape);
    Matrix<Scalar> m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(record.data[static_cast<std::size_t>(i)]);
    return m;
}

template <typename Scalar>
TensorMap weights_to_map(const ModelParams<Scalar>& params) {
    TensorMap map;
    put_config(map.meta, params.config);
    for (const auto& named : params.named_parameters()) map.tensors.push_back(to_record(named.name, named.tensor));
    return map;
}

template <typename Scalar>
ModelParams<Scalar> params_from_map(const TensorMap& map, const ModelConfig& config) {
    if (map.meta.contains("n_heads") && config_from_meta(map.meta) != config) {
        throw ImportError("file architecture does not match the requested config");
    }
    std::vector<Matrix<Scalar>> values;
    for (const auto& spec : parameter_specs(config)) {
        const TensorRecord* rec = map.find(spec.name);
        if (rec == nullptr) throw ImportError("missing tensor " + spec.name);
        if (rec->shape != spec.shape) throw ImportError("shape mismatch for tensor " + spec.name);
        values.push_back(record_values<Scalar>(*rec));
    }
    return params_from_values<Scalar>(config, std::move(values));
}

template <typename Scalar>
void export_weights(const ModelParams<Scalar>& params, const std::filesystem::path& path) {
    write_tensor_map(path, weights_to_map(params));
}

template <typename Scalar>
ModelParams<Scalar> import_weights(const std::filesystem::path& path, const ModelConfig& config) {
    return params_from_map<Scalar>(read_tensor_map(path), config);
}

template <typename Scalar>
ModelParams<Scalar> import_weights(const std::filesystem::path& path) {
    const auto map = read_tensor_map(path);
    return params_from_map<Scalar>(map, config_from_meta(map.meta));
}

#define PFXLM_INSTANTIATE_IO(S)                                                                   \
    template TensorRecord to_record(const std::string&, const Tensor<S>&);                        \
    template Matrix<S> record_values<S>(const TensorRecord&);                                     \
    template TensorMap weights_to_map(const ModelParams<S>&);                                     \
    template ModelParams<S> params_from_map<S>(const TensorMap&, const ModelConfig&);             \
    template void export_weights(const ModelParams<S>&, const std::filesystem::path&);            \
    template ModelParams<S> import_weights<S>(const std::filesystem::path&, const ModelConfig&);  \
    template ModelParams<S> import_weights<S>(const std::filesystem::path&);

PFXLM_INSTANTIATE_IO(float)
PFXLM_INSTANTIATE_IO(double)

#undef PFXLM_INSTANTIATE_IO

}  // namespace pfxlm

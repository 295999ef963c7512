#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mope/model.hpp"
#include "mope/sha256.hpp"

namespace mope {

using Json = nlohmann::json;

// Checkpoint container: 8-byte magic, little-endian u64 manifest length,
// JSON manifest (config, architecture, provenance, tensor index), then a
// raw payload of little-endian 64-bit floats. Offsets are relative to the
// payload start, contiguous and non-overlapping; save(load(x)) is
// byte-identical to x.
inline constexpr char kCheckpointMagic[8] = {'M', 'O', 'P', 'E', 'C', 'K', 'P', 'T'};
inline constexpr int kCheckpointVersion = 1;

inline Json config_to_json(const ModelConfig& cfg) {
    return Json{{"d", cfg.d},
                {"n_heads", cfg.n_heads},
                {"d_ff", cfg.d_ff},
                {"n_layers_v", cfg.n_layers_v},
                {"n_layers_t", cfg.n_layers_t},
                {"vocab_v", cfg.vocab_v},
                {"vocab_t", cfg.vocab_t},
                {"seq_v", cfg.seq_v},
                {"seq_t", cfg.seq_t},
                {"e", cfg.e},
                {"seed", cfg.seed}};
}

inline ModelConfig config_from_json(const Json& j) {
    ModelConfig cfg;
    cfg.d = j.at("d").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.d_ff = j.at("d_ff").get<int>();
    cfg.n_layers_v = j.at("n_layers_v").get<int>();
    cfg.n_layers_t = j.at("n_layers_t").get<int>();
    cfg.vocab_v = j.at("vocab_v").get<int>();
    cfg.vocab_t = j.at("vocab_t").get<int>();
    cfg.seq_v = j.at("seq_v").get<int>();
    cfg.seq_t = j.at("seq_t").get<int>();
    cfg.e = j.at("e").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
}

namespace detail {

inline Json encoder_arch_json(const EncoderWeights& enc) {
    Json layers = Json::array();
    for (const auto& lw : enc.layers)
        layers.push_back(Json{{"n_heads", lw.n_heads}, {"d_ff", lw.d_ff}, {"origin", lw.origin}});
    return Json{{"d", enc.d},       {"d_head", enc.d_head}, {"n_heads_full", enc.n_heads_full},
                {"vocab", enc.vocab}, {"seq", enc.seq},       {"e", enc.e},
                {"layers", layers}};
}

inline void push_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t read_u64_le(const char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}

inline void push_f64_le(std::string& out, double x) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, 8);
    push_u64_le(out, bits);
}

inline double read_f64_le(const char* p) {
    const std::uint64_t bits = read_u64_le(p);
    double x;
    std::memcpy(&x, &bits, 8);
    return x;
}

}  // namespace detail

// Canonical byte serialization (also the basis for model hashing).
inline std::string serialize_model(const DualEncoder& model, const Json& provenance = Json::object()) {
    const auto params = named_parameters(model);
    Json index = Json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : params) {
        const std::uint64_t len = static_cast<std::uint64_t>(t->numel()) * 8;
        index.push_back(Json{{"name", name}, {"shape", t->shape()}, {"offset", offset}, {"length", len}});
        offset += len;
    }
    Json manifest{{"format_version", kCheckpointVersion},
                  {"config", config_to_json(model.config)},
                  {"arch",
                   {{"vision", detail::encoder_arch_json(model.vision)},
                    {"text", detail::encoder_arch_json(model.text)}}},
                  {"provenance", provenance},
                  {"tensors", index}};
    const std::string manifest_str = manifest.dump();

    std::string out;
    out.reserve(16 + manifest_str.size() + offset);
    out.append(kCheckpointMagic, 8);
    detail::push_u64_le(out, manifest_str.size());
    out += manifest_str;
    for (const auto& [name, t] : params)
        for (std::size_t i = 0; i < t->numel(); ++i) detail::push_f64_le(out, (*t)[i]);
    return out;
}

inline std::string model_hash(const DualEncoder& model) {
    return Sha256::hex(serialize_model(model));
}

struct LoadedCheckpoint {
    DualEncoder model;
    Json provenance;
};

namespace detail {

inline LoadedCheckpoint deserialize_from_manifest(const Json& manifest, const std::string& bytes,
                                                  std::uint64_t manifest_len,
                                                  LoadedCheckpoint& out) {
    if (manifest.at("format_version").get<int>() != kCheckpointVersion)
        throw_error("format", "checkpoint: unsupported format version");
    out.model.config = config_from_json(manifest.at("config"));
    out.provenance = manifest.value("provenance", Json::object());

    // Rebuild encoder skeletons from the architecture record.
    const auto build_encoder = [&](const Json& a) {
        EncoderWeights enc;
        enc.d = a.at("d").get<int>();
        enc.d_head = a.at("d_head").get<int>();
        enc.n_heads_full = a.at("n_heads_full").get<int>();
        enc.vocab = a.at("vocab").get<int>();
        enc.seq = a.at("seq").get<int>();
        enc.e = a.at("e").get<int>();
        for (const auto& lj : a.at("layers")) {
            LayerWeights lw;
            lw.n_heads = lj.at("n_heads").get<int>();
            lw.d_ff = lj.at("d_ff").get<int>();
            lw.origin = lj.at("origin").get<int>();
            enc.layers.push_back(std::move(lw));
        }
        return enc;
    };
    out.model.vision = build_encoder(manifest.at("arch").at("vision"));
    out.model.text = build_encoder(manifest.at("arch").at("text"));

    const std::size_t payload_start = 16 + manifest_len;
    const std::size_t payload_len = bytes.size() - payload_start;

    auto params = named_parameters(out.model);
    const Json& index = manifest.at("tensors");
    if (index.size() != params.size())
        throw_error("format", "checkpoint: tensor index does not match architecture");
    std::uint64_t expected_offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Json& entry = index[i];
        const std::string name = entry.at("name").get<std::string>();
        if (name != params[i].first)
            throw_error("format", "checkpoint: unexpected tensor '" + name + "' (want '" +
                                      params[i].first + "')");
        const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
        const std::uint64_t length = entry.at("length").get<std::uint64_t>();
        if (offset != expected_offset)
            throw_error("format", "checkpoint: non-contiguous offset for tensor '" + name + "'");
        expected_offset = offset + length;
        std::size_t numel = 1;
        for (int d : shape) numel *= static_cast<std::size_t>(d);
        if (length != numel * 8)
            throw_error("format", "checkpoint: shape/payload mismatch for tensor '" + name + "'");
        if (offset + length > payload_len)
            throw_error("format", "checkpoint: payload truncated at tensor '" + name + "'");
        Tensor t(shape);
        const char* src = bytes.data() + payload_start + offset;
        for (std::size_t j = 0; j < numel; ++j) t[j] = detail::read_f64_le(src + j * 8);
        if (checked_mode()) t.check_finite();
        *params[i].second = std::move(t);
    }
    if (expected_offset != payload_len)
        throw_error("format", "checkpoint: payload length mismatch");
    return out;
}

}  // namespace detail


inline LoadedCheckpoint deserialize_model(const std::string& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
        throw_error("format", "checkpoint: bad magic");
    const std::uint64_t manifest_len = detail::read_u64_le(bytes.data() + 8);
    if (16 + manifest_len > bytes.size()) throw_error("format", "checkpoint: truncated manifest");
    Json manifest;
    try {
        manifest = Json::parse(bytes.substr(16, manifest_len));
    } catch (const std::exception& e) {
        throw_error("format", std::string("checkpoint: manifest parse failed: ") + e.what());
    }
    LoadedCheckpoint out;
    try {
        return detail::deserialize_from_manifest(manifest, bytes, manifest_len, out);
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        // Field access on a damaged manifest surfaces as a format error.
        throw_error("format", std::string("checkpoint: malformed manifest: ") + e.what());
    }
}


inline void save_checkpoint(const DualEncoder& model, const std::string& path,
                            const Json& provenance = Json::object()) {
    const std::string bytes = serialize_model(model, provenance);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw_error("io", "cannot open for writing: " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw_error("io", "write failed: " + path);
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw_error("io", "cannot open checkpoint: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_model(bytes);
}

}  // namespace mope

#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mogen/array.hpp"
#include "mogen/codec.hpp"
#include "mogen/corpus.hpp"
#include "mogen/errors.hpp"
#include "mogen/mformer.hpp"
#include "mogen/rformer.hpp"

namespace mogen {

// Versioned named-array container, little-endian throughout:
//   magic "MMK1" | u32 version
//   u32 n_config | { str key, str value } ...      (keys sorted)
//   u32 n_seeds  | { str name, u64 value } ...
//   u32 n_arrays | { str name, u32 rank, u32 dims[rank], f32 payload } ...
// Tied parameters appear once; tie records live in the config section.
struct Checkpoint {
    static constexpr uint32_t kVersion = 1;

    std::map<std::string, std::string> config;
    std::vector<std::pair<std::string, uint64_t>> seeds;
    std::vector<std::pair<std::string, Array>> arrays;

    void add_array(std::string name, Array a) { arrays.emplace_back(std::move(name), std::move(a)); }

    bool has_array(const std::string& name) const {
        for (const auto& [n, a] : arrays)
            if (n == name) return true;
        return false;
    }

    const Array& array(const std::string& name) const {
        for (const auto& [n, a] : arrays)
            if (n == name) return a;
        throw io_error("checkpoint has no array named '" + name + "'");
    }

    std::string config_at(const std::string& key) const {
        auto it = config.find(key);
        if (it == config.end()) throw io_error("checkpoint has no config key '" + key + "'");
        return it->second;
    }

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

namespace ckpt_detail {

inline void put_u32(std::FILE* f, uint32_t v) {
    uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                    static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
    std::fwrite(b, 1, 4, f);
}

inline void put_u64(std::FILE* f, uint64_t v) {
    put_u32(f, static_cast<uint32_t>(v));
    put_u32(f, static_cast<uint32_t>(v >> 32));
}

inline void put_str(std::FILE* f, const std::string& s) {
    put_u32(f, static_cast<uint32_t>(s.size()));
    std::fwrite(s.data(), 1, s.size(), f);
}

inline void put_f32(std::FILE* f, const float* data, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        uint32_t bits;
        std::memcpy(&bits, &data[i], sizeof(bits));
        put_u32(f, bits);
    }
}

struct Reader {
    std::FILE* f;
    std::string context;

    void fail(const std::string& what) const {
        throw io_error("checkpoint: " + what + (context.empty() ? "" : " (" + context + ")"));
    }

    uint32_t u32() {
        uint8_t b[4];
        if (std::fread(b, 1, 4, f) != 4) fail("truncated payload");
        return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
               (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    }

    uint64_t u64() {
        uint64_t lo = u32();
        uint64_t hi = u32();
        return lo | (hi << 32);
    }

    std::string str() {
        uint32_t len = u32();
        if (len > (1u << 24)) fail("implausible string length");
        std::string s(len, '\0');
        if (len > 0 && std::fread(s.data(), 1, len, f) != len) fail("truncated payload");
        return s;
    }
};

}  // namespace ckpt_detail

inline void Checkpoint::save(const std::string& path) const {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (f == nullptr) throw io_error("cannot open '" + path + "' for writing");
    using namespace ckpt_detail;
    std::fwrite("MMK1", 1, 4, f);
    put_u32(f, kVersion);
    put_u32(f, static_cast<uint32_t>(config.size()));
    for (const auto& [k, v] : config) {
        put_str(f, k);
        put_str(f, v);
    }
    put_u32(f, static_cast<uint32_t>(seeds.size()));
    for (const auto& [name, value] : seeds) {
        put_str(f, name);
        put_u64(f, value);
    }
    put_u32(f, static_cast<uint32_t>(arrays.size()));
    for (const auto& [name, a] : arrays) {
        put_str(f, name);
        put_u32(f, static_cast<uint32_t>(a.rank()));
        for (int d = 0; d < a.rank(); ++d) put_u32(f, static_cast<uint32_t>(a.dim(d)));
        put_f32(f, a.data(), a.numel());
    }
    std::fclose(f);
}

inline Checkpoint Checkpoint::load(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (f == nullptr) throw io_error("cannot open checkpoint '" + path + "'");
    struct Closer {
        std::FILE* f;
        ~Closer() { std::fclose(f); }
    } closer{f};

    ckpt_detail::Reader r{f, ""};
    char magic[4];
    if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, "MMK1", 4) != 0) {
        throw io_error("'" + path + "' is not a checkpoint container (bad magic)");
    }
    const uint32_t version = r.u32();
    if (version != kVersion) {
        throw io_error("checkpoint version " + std::to_string(version) + " is not supported");
    }
    Checkpoint c;
    const uint32_t n_config = r.u32();
    for (uint32_t i = 0; i < n_config; ++i) {
        std::string k = r.str();
        c.config[k] = r.str();
    }
    const uint32_t n_seeds = r.u32();
    for (uint32_t i = 0; i < n_seeds; ++i) {
        std::string name = r.str();
        c.seeds.emplace_back(name, r.u64());
    }
    const uint32_t n_arrays = r.u32();
    for (uint32_t i = 0; i < n_arrays; ++i) {
        std::string name = r.str();
        r.context = "array '" + name + "'";
        const uint32_t rank = r.u32();
        if (rank > 8) r.fail("implausible rank");
        std::vector<int> shape;
        size_t numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            uint32_t e = r.u32();
            if (e == 0 || e > (1u << 28)) r.fail("implausible extent");
            shape.push_back(static_cast<int>(e));
            numel *= e;
        }
        std::vector<float> data(numel);
        for (size_t j = 0; j < numel; ++j) {
            uint32_t bits = r.u32();
            float v;
            std::memcpy(&v, &bits, sizeof(v));
            data[j] = v;
        }
        r.context.clear();
        c.add_array(std::move(name), Array(std::move(shape), std::move(data)));
    }
    return c;
}

// ------------------------------------------------------------- model glue

template <typename Model>
void fill_params_from(Checkpoint& ck, Model& model) {
    model.visit_params([&](const std::string& name, Array& a) {
        const Array& src = ck.array(name);
        if (!src.same_shape(a)) {
            throw io_error("checkpoint array '" + name + "' has shape " + src.shape_string() +
                           ", model expects " + a.shape_string());
        }
        a = src;
    });
}

inline Checkpoint codec_to_checkpoint(CodecParams& p, uint64_t seed) {
    Checkpoint ck;
    ck.config["model"] = "codec";
    ck.config["codec.feature_dim"] = std::to_string(p.cfg.feature_dim);
    ck.config["codec.latent_dim"] = std::to_string(p.cfg.latent_dim);
    ck.config["codec.width1"] = std::to_string(p.cfg.width1);
    ck.config["codec.width2"] = std::to_string(p.cfg.width2);
    ck.config["codec.codebook_size"] = std::to_string(p.cfg.codebook_size);
    ck.config["codec.num_layers"] = std::to_string(p.cfg.num_layers);
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(p.cfg.dropout_q));
    ck.config["codec.dropout_q"] = buf;
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(p.cfg.beta));
    ck.config["codec.beta"] = buf;
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(p.cfg.ema_lambda));
    ck.config["codec.ema_lambda"] = buf;
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(p.cfg.reset_threshold));
    ck.config["codec.reset_threshold"] = buf;
    ck.config["codec.fps"] = std::to_string(p.cfg.fps);
    ck.seeds.emplace_back("train", seed);
    p.visit_params([&](const std::string& name, Array& a) { ck.add_array(name, a); });
    p.visit_buffers([&](const std::string& name, Array& a) { ck.add_array(name, a); });
    return ck;
}

inline CodecParams codec_from_checkpoint(Checkpoint& ck) {
    if (ck.config_at("model") != "codec") throw io_error("checkpoint is not a codec model");
    CodecConfig cfg;
    cfg.feature_dim = std::stoi(ck.config_at("codec.feature_dim"));
    cfg.latent_dim = std::stoi(ck.config_at("codec.latent_dim"));
    cfg.width1 = std::stoi(ck.config_at("codec.width1"));
    cfg.width2 = std::stoi(ck.config_at("codec.width2"));
    cfg.codebook_size = std::stoi(ck.config_at("codec.codebook_size"));
    cfg.num_layers = std::stoi(ck.config_at("codec.num_layers"));
    cfg.dropout_q = std::stof(ck.config_at("codec.dropout_q"));
    cfg.beta = std::stof(ck.config_at("codec.beta"));
    cfg.ema_lambda = std::stof(ck.config_at("codec.ema_lambda"));
    cfg.reset_threshold = std::stof(ck.config_at("codec.reset_threshold"));
    cfg.fps = std::stoi(ck.config_at("codec.fps"));
    Rng rng(0);
    CodecParams p = CodecParams::create(cfg, rng);
    fill_params_from(ck, p);
    p.visit_buffers([&](const std::string& name, Array& a) {
        const Array& src = ck.array(name);
        if (!src.same_shape(a)) {
            throw io_error("checkpoint array '" + name + "' has shape " + src.shape_string() +
                           ", model expects " + a.shape_string());
        }
        a = src;
    });
    return p;
}

inline std::string join_labels(const std::vector<std::string>& labels) {
    std::string out;
    for (size_t i = 0; i < labels.size(); ++i) out += (i ? "," : "") + labels[i];
    return out;
}

inline std::vector<std::string> split_labels(const std::string& joined) {
    std::vector<std::string> out;
    std::string item;
    std::stringstream ss(joined);
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

inline void put_former_dims(Checkpoint& ck, const std::string& prefix, const MformerDims& d) {
    ck.config[prefix + ".hidden"] = std::to_string(d.hidden);
    ck.config[prefix + ".layers"] = std::to_string(d.layers);
    ck.config[prefix + ".heads"] = std::to_string(d.heads);
    ck.config[prefix + ".max_len"] = std::to_string(d.max_len);
}

inline MformerDims get_former_dims(Checkpoint& ck, const std::string& prefix) {
    MformerDims d;
    d.hidden = std::stoi(ck.config_at(prefix + ".hidden"));
    d.layers = std::stoi(ck.config_at(prefix + ".layers"));
    d.heads = std::stoi(ck.config_at(prefix + ".heads"));
    d.max_len = std::stoi(ck.config_at(prefix + ".max_len"));
    return d;
}

inline Checkpoint mformer_to_checkpoint(MTransformerParams& p, const MformerDims& dims,
                                        const std::vector<std::string>& labels, uint64_t seed) {
    Checkpoint ck;
    ck.config["model"] = "mformer";
    ck.config["mformer.codebook_size"] = std::to_string(p.codebook_size);
    ck.config["labels"] = join_labels(labels);
    put_former_dims(ck, "mformer", dims);
    ck.seeds.emplace_back("train", seed);
    p.visit_params([&](const std::string& name, Array& a) { ck.add_array(name, a); });
    return ck;
}

inline MTransformerParams mformer_from_checkpoint(Checkpoint& ck,
                                                  std::vector<std::string>* labels_out = nullptr) {
    if (ck.config_at("model") != "mformer") throw io_error("checkpoint is not a masked model");
    std::vector<std::string> labels = split_labels(ck.config_at("labels"));
    MformerDims dims = get_former_dims(ck, "mformer");
    Rng rng(0);
    MTransformerParams p = MTransformerParams::create(
        std::stoi(ck.config_at("mformer.codebook_size")), static_cast<int>(labels.size()), dims,
        rng);
    fill_params_from(ck, p);
    if (labels_out != nullptr) *labels_out = std::move(labels);
    return p;
}

inline Checkpoint rformer_to_checkpoint(RTransformerParams& p, const MformerDims& dims,
                                        const std::vector<std::string>& labels, uint64_t seed) {
    Checkpoint ck;
    ck.config["model"] = "rformer";
    ck.config["rformer.codebook_size"] = std::to_string(p.codebook_size);
    ck.config["rformer.num_quant_layers"] = std::to_string(p.num_quant_layers);
    ck.config["labels"] = join_labels(labels);
    put_former_dims(ck, "rformer", dims);
    for (const auto& [k, v] : p.tie_records()) ck.config[k] = v;
    ck.seeds.emplace_back("train", seed);
    p.visit_params([&](const std::string& name, Array& a) { ck.add_array(name, a); });
    return ck;
}

inline RTransformerParams rformer_from_checkpoint(Checkpoint& ck) {
    if (ck.config_at("model") != "rformer") throw io_error("checkpoint is not a residual model");
    std::vector<std::string> labels = split_labels(ck.config_at("labels"));
    MformerDims dims = get_former_dims(ck, "rformer");
    Rng rng(0);
    RTransformerParams p = RTransformerParams::create(
        std::stoi(ck.config_at("rformer.codebook_size")),
        std::stoi(ck.config_at("rformer.num_quant_layers")), static_cast<int>(labels.size()),
        dims, rng);
    fill_params_from(ck, p);
    return p;
}

inline Checkpoint oracle_to_checkpoint(OracleParams& p, const std::vector<std::string>& labels,
                                       uint64_t seed) {
    Checkpoint ck;
    ck.config["model"] = "oracle";
    ck.config["oracle.feature_dim"] = std::to_string(p.feature_dim);
    ck.config["oracle.width"] = std::to_string(p.width);
    ck.config["labels"] = join_labels(labels);
    ck.seeds.emplace_back("train", seed);
    p.visit_params([&](const std::string& name, Array& a) { ck.add_array(name, a); });
    return ck;
}

inline OracleParams oracle_from_checkpoint(Checkpoint& ck) {
    if (ck.config_at("model") != "oracle") throw io_error("checkpoint is not an oracle model");
    std::vector<std::string> labels = split_labels(ck.config_at("labels"));
    Rng rng(0);
    OracleParams p = OracleParams::create(std::stoi(ck.config_at("oracle.feature_dim")),
                                          std::stoi(ck.config_at("oracle.width")),
                                          static_cast<int>(labels.size()), rng);
    fill_params_from(ck, p);
    return p;
}

}  // namespace mogen

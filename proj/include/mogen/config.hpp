#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mogen/errors.hpp"

namespace mogen {

// ----------------------------------------------------------- flat key=value

// Flat `section.key = value` text; '#' starts a comment; no nesting.
inline std::map<std::string, std::string> parse_flat_config(std::istream& in) {
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        const char* ws = " \t\r\n";
        size_t b = s.find_first_not_of(ws);
        if (b == std::string::npos) return std::string();
        size_t e = s.find_last_not_of(ws);
        return s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw config_error("line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw config_error("line " + std::to_string(lineno) + ": empty key");
        }
        kv[key] = value;
    }
    return kv;
}

inline std::map<std::string, std::string> parse_flat_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file '" + path + "'");
    return parse_flat_config(in);
}

// Typed reader over a parsed map that records which keys were consumed.
class ConfigReader {
public:
    explicit ConfigReader(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

    std::string get_string(const std::string& key, const std::string& fallback) {
        seen_.insert(key);
        auto it = kv_.find(key);
        return it == kv_.end() ? fallback : it->second;
    }

    int get_int(const std::string& key, int fallback) {
        seen_.insert(key);
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        try {
            size_t pos = 0;
            int v = std::stoi(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument(it->second);
            return v;
        } catch (const std::exception&) {
            throw config_error("key '" + key + "': '" + it->second + "' is not an integer");
        }
    }

    uint64_t get_u64(const std::string& key, uint64_t fallback) {
        seen_.insert(key);
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        try {
            size_t pos = 0;
            uint64_t v = std::stoull(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument(it->second);
            return v;
        } catch (const std::exception&) {
            throw config_error("key '" + key + "': '" + it->second + "' is not an integer");
        }
    }

    double get_double(const std::string& key, double fallback) {
        seen_.insert(key);
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        try {
            size_t pos = 0;
            double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument(it->second);
            return v;
        } catch (const std::exception&) {
            throw config_error("key '" + key + "': '" + it->second + "' is not a number");
        }
    }

    bool get_bool(const std::string& key, bool fallback) {
        seen_.insert(key);
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        if (it->second == "true" || it->second == "1" || it->second == "on") return true;
        if (it->second == "false" || it->second == "0" || it->second == "off") return false;
        throw config_error("key '" + key + "': '" + it->second + "' is not a boolean");
    }

    std::vector<std::string> get_list(const std::string& key,
                                      const std::vector<std::string>& fallback) {
        seen_.insert(key);
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        std::vector<std::string> out;
        std::stringstream ss(it->second);
        std::string item;
        while (std::getline(ss, item, ',')) {
            size_t b = item.find_first_not_of(" \t");
            size_t e = item.find_last_not_of(" \t");
            if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
        }
        if (out.empty()) throw config_error("key '" + key + "': empty list");
        return out;
    }

    void reject_unknown() const {
        for (const auto& [key, value] : kv_) {
            if (seen_.find(key) == seen_.end()) {
                throw config_error("unknown config key '" + key + "'");
            }
        }
    }

private:
    std::map<std::string, std::string> kv_;
    std::set<std::string> seen_;
};

// ----------------------------------------------------------- run config

struct MformerDims {
    int hidden = 128;
    int layers = 4;
    int heads = 4;
    int max_len = 64;
    int steps = 800;
    int batch = 16;
    float lr = 2e-4f;
    int warmup = 200;
    float null_cond_prob = 0.1f;
};

struct EngineDefaults {
    int iterations = 10;  // L
    float s_masked = 4.0f;
    float s_residual = 5.0f;
    float temperature = 1.0f;
    bool gumbel_anneal = false;
};

struct CorpusDefaults {
    int num_samples = 2000;
    int frames_min = 40;
    int frames_max = 64;
    double noise = 0.003;
    int fps = 20;
    double train_ratio = 0.8;
    double test_ratio = 0.15;
    double val_ratio = 0.05;
    std::vector<std::string> classes = {"walk",      "run",        "jump",   "wave",
                                        "turn-left", "turn-right", "crouch", "kick"};
};

struct CodecDims {
    int feature_dim = 48;
    int latent_dim = 128;
    int width1 = 48;
    int width2 = 64;
    int codebook_size = 128;
    int num_layers = 6;
    float dropout_q = 0.2f;
    float beta = 0.25f;
    float ema_lambda = 0.99f;
    float reset_threshold = 1.0f;
    int steps = 2500;
    int batch = 8;
    int window = 40;
    float lr = 1e-3f;
    float lr_min = 1e-4f;
    int warmup = 100;
};

struct OracleDims {
    int width = 48;
    int steps = 500;
    int batch = 16;
    float lr = 1e-3f;
    int warmup = 50;
};

// Everything a run needs; the paper preset swaps in the full-scale values
// (512-entry 512-dim codebooks, 384/6/6 transformers, 2000-step warm-up).
struct RunConfig {
    uint64_t seed = 0;
    int threads = 0;  // 0 = automatic, capped by MOMASK_LAB_THREADS
    std::string preset = "desk";

    std::string corpus_dir = "out/corpus";
    std::string codec_ckpt = "out/codec.mmk";
    std::string mformer_ckpt = "out/mformer.mmk";
    std::string rformer_ckpt = "out/rformer.mmk";
    std::string oracle_ckpt = "out/oracle.mmk";

    CorpusDefaults corpus;
    CodecDims codec;
    MformerDims mformer;
    MformerDims rformer;
    OracleDims oracle;
    EngineDefaults engine;

    static RunConfig from_map(const std::map<std::string, std::string>& kv);
    static RunConfig from_file(const std::string& path) {
        return from_map(parse_flat_config_file(path));
    }

    void validate() const;
    std::map<std::string, std::string> snapshot() const;
};

inline RunConfig RunConfig::from_map(const std::map<std::string, std::string>& kv) {
    ConfigReader r(kv);
    RunConfig c;
    c.preset = r.get_string("preset", "desk");
    if (c.preset == "paper") {
        c.codec.latent_dim = 512;
        c.codec.width1 = 256;
        c.codec.width2 = 384;
        c.codec.codebook_size = 512;
        c.codec.lr = 2e-4f;
        c.codec.lr_min = 0.0f;
        c.codec.warmup = 2000;
        c.mformer.hidden = 384;
        c.mformer.layers = 6;
        c.mformer.heads = 6;
        c.mformer.warmup = 2000;
        c.rformer.hidden = 384;
        c.rformer.layers = 6;
        c.rformer.heads = 6;
        c.rformer.warmup = 2000;
    } else if (c.preset != "desk") {
        throw config_error("preset must be 'desk' or 'paper', got '" + c.preset + "'");
    }

    c.seed = r.get_u64("run.seed", c.seed);
    c.threads = r.get_int("run.threads", c.threads);

    c.corpus_dir = r.get_string("paths.corpus", c.corpus_dir);
    c.codec_ckpt = r.get_string("paths.codec", c.codec_ckpt);
    c.mformer_ckpt = r.get_string("paths.mformer", c.mformer_ckpt);
    c.rformer_ckpt = r.get_string("paths.rformer", c.rformer_ckpt);
    c.oracle_ckpt = r.get_string("paths.oracle", c.oracle_ckpt);

    c.corpus.num_samples = r.get_int("corpus.num_samples", c.corpus.num_samples);
    c.corpus.frames_min = r.get_int("corpus.frames_min", c.corpus.frames_min);
    c.corpus.frames_max = r.get_int("corpus.frames_max", c.corpus.frames_max);
    c.corpus.noise = r.get_double("corpus.noise", c.corpus.noise);
    c.corpus.fps = r.get_int("corpus.fps", c.corpus.fps);
    c.corpus.train_ratio = r.get_double("corpus.train_ratio", c.corpus.train_ratio);
    c.corpus.test_ratio = r.get_double("corpus.test_ratio", c.corpus.test_ratio);
    c.corpus.val_ratio = r.get_double("corpus.val_ratio", c.corpus.val_ratio);
    c.corpus.classes = r.get_list("corpus.classes", c.corpus.classes);

    c.codec.feature_dim = r.get_int("codec.feature_dim", c.codec.feature_dim);
    c.codec.latent_dim = r.get_int("codec.latent_dim", c.codec.latent_dim);
    c.codec.width1 = r.get_int("codec.width1", c.codec.width1);
    c.codec.width2 = r.get_int("codec.width2", c.codec.width2);
    c.codec.codebook_size = r.get_int("codec.codebook_size", c.codec.codebook_size);
    c.codec.num_layers = r.get_int("codec.num_layers", c.codec.num_layers);
    c.codec.dropout_q = static_cast<float>(r.get_double("codec.dropout_q", c.codec.dropout_q));
    c.codec.beta = static_cast<float>(r.get_double("codec.beta", c.codec.beta));
    c.codec.ema_lambda = static_cast<float>(r.get_double("codec.ema_lambda", c.codec.ema_lambda));
    c.codec.reset_threshold =
        static_cast<float>(r.get_double("codec.reset_threshold", c.codec.reset_threshold));
    c.codec.steps = r.get_int("codec.steps", c.codec.steps);
    c.codec.batch = r.get_int("codec.batch", c.codec.batch);
    c.codec.window = r.get_int("codec.window", c.codec.window);
    c.codec.lr = static_cast<float>(r.get_double("codec.lr", c.codec.lr));
    c.codec.lr_min = static_cast<float>(r.get_double("codec.lr_min", c.codec.lr_min));
    c.codec.warmup = r.get_int("codec.warmup", c.codec.warmup);

    auto read_former = [&r](const std::string& section, MformerDims& m) {
        m.hidden = r.get_int(section + ".hidden", m.hidden);
        m.layers = r.get_int(section + ".layers", m.layers);
        m.heads = r.get_int(section + ".heads", m.heads);
        m.max_len = r.get_int(section + ".max_len", m.max_len);
        m.steps = r.get_int(section + ".steps", m.steps);
        m.batch = r.get_int(section + ".batch", m.batch);
        m.lr = static_cast<float>(r.get_double(section + ".lr", m.lr));
        m.warmup = r.get_int(section + ".warmup", m.warmup);
        m.null_cond_prob =
            static_cast<float>(r.get_double(section + ".null_cond_prob", m.null_cond_prob));
    };
    read_former("mformer", c.mformer);
    read_former("rformer", c.rformer);

    c.oracle.width = r.get_int("oracle.width", c.oracle.width);
    c.oracle.steps = r.get_int("oracle.steps", c.oracle.steps);
    c.oracle.batch = r.get_int("oracle.batch", c.oracle.batch);
    c.oracle.lr = static_cast<float>(r.get_double("oracle.lr", c.oracle.lr));
    c.oracle.warmup = r.get_int("oracle.warmup", c.oracle.warmup);

    c.engine.iterations = r.get_int("engine.iterations", c.engine.iterations);
    c.engine.s_masked = static_cast<float>(r.get_double("engine.s_masked", c.engine.s_masked));
    c.engine.s_residual =
        static_cast<float>(r.get_double("engine.s_residual", c.engine.s_residual));
    c.engine.temperature =
        static_cast<float>(r.get_double("engine.temperature", c.engine.temperature));
    c.engine.gumbel_anneal = r.get_bool("engine.gumbel_anneal", c.engine.gumbel_anneal);

    r.reject_unknown();
    c.validate();
    return c;
}

inline void RunConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v < 1) throw config_error(std::string(name) + " must be >= 1");
    };
    positive(corpus.num_samples, "corpus.num_samples");
    positive(corpus.frames_min, "corpus.frames_min");
    positive(corpus.fps, "corpus.fps");
    if (corpus.frames_max < corpus.frames_min) {
        throw config_error("corpus.frames_max must be >= corpus.frames_min");
    }
    if (corpus.classes.empty()) throw config_error("corpus.classes must not be empty");
    const double rsum = corpus.train_ratio + corpus.test_ratio + corpus.val_ratio;
    if (std::abs(rsum - 1.0) > 1e-6) {
        throw config_error("corpus split ratios must sum to 1");
    }
    if (corpus.noise < 0.0) throw config_error("corpus.noise must be >= 0");

    positive(codec.feature_dim, "codec.feature_dim");
    positive(codec.latent_dim, "codec.latent_dim");
    positive(codec.codebook_size, "codec.codebook_size");
    positive(codec.num_layers, "codec.num_layers");
    if (codec.feature_dim % 3 != 0) {
        throw config_error("codec.feature_dim must be a multiple of 3 (joint triples)");
    }
    if (!(codec.dropout_q >= 0.0f && codec.dropout_q <= 1.0f)) {
        throw config_error("codec.dropout_q must lie in [0,1]");
    }
    if (!(codec.ema_lambda > 0.0f && codec.ema_lambda < 1.0f)) {
        throw config_error("codec.ema_lambda must lie in (0,1)");
    }
    if (codec.window % 4 != 0) throw config_error("codec.window must be a multiple of 4");
    if (codec.window > corpus.frames_min) {
        throw config_error("codec.window must not exceed corpus.frames_min");
    }

    for (const MformerDims* m : {&mformer, &rformer}) {
        positive(m->hidden, "transformer hidden");
        positive(m->layers, "transformer layers");
        positive(m->heads, "transformer heads");
        if (m->hidden % m->heads != 0) {
            throw config_error("transformer heads must divide the hidden dimension");
        }
        if (!(m->null_cond_prob >= 0.0f && m->null_cond_prob <= 1.0f)) {
            throw config_error("null_cond_prob must lie in [0,1]");
        }
        if (m->max_len * 4 < corpus.frames_max) {
            throw config_error("transformer max_len too small for corpus.frames_max");
        }
    }

    if (engine.iterations < 1) throw config_error("engine.iterations must be >= 1");
    if (engine.s_masked < 0.0f || engine.s_residual < 0.0f) {
        throw config_error("guidance scales must be >= 0");
    }
    if (!(engine.temperature > 0.0f)) throw config_error("engine.temperature must be > 0");
}

inline std::map<std::string, std::string> RunConfig::snapshot() const {
    std::map<std::string, std::string> kv;
    auto put_int = [&kv](const std::string& k, int64_t v) { kv[k] = std::to_string(v); };
    auto put_f = [&kv](const std::string& k, double v) {
        char buf[48];
        std::snprintf(buf, sizeof(buf), "%.9g", v);
        kv[k] = buf;
    };
    kv["preset"] = preset;
    put_int("run.seed", static_cast<int64_t>(seed));
    put_int("run.threads", threads);
    kv["paths.corpus"] = corpus_dir;
    kv["paths.codec"] = codec_ckpt;
    kv["paths.mformer"] = mformer_ckpt;
    kv["paths.rformer"] = rformer_ckpt;
    kv["paths.oracle"] = oracle_ckpt;
    put_int("corpus.num_samples", corpus.num_samples);
    put_int("corpus.frames_min", corpus.frames_min);
    put_int("corpus.frames_max", corpus.frames_max);
    put_f("corpus.noise", corpus.noise);
    put_int("corpus.fps", corpus.fps);
    put_f("corpus.train_ratio", corpus.train_ratio);
    put_f("corpus.test_ratio", corpus.test_ratio);
    put_f("corpus.val_ratio", corpus.val_ratio);
    std::string cls;
    for (size_t i = 0; i < corpus.classes.size(); ++i) {
        cls += (i ? "," : "") + corpus.classes[i];
    }
    kv["corpus.classes"] = cls;
    put_int("codec.feature_dim", codec.feature_dim);
    put_int("codec.latent_dim", codec.latent_dim);
    put_int("codec.width1", codec.width1);
    put_int("codec.width2", codec.width2);
    put_int("codec.codebook_size", codec.codebook_size);
    put_int("codec.num_layers", codec.num_layers);
    put_f("codec.dropout_q", codec.dropout_q);
    put_f("codec.beta", codec.beta);
    put_f("codec.ema_lambda", codec.ema_lambda);
    put_f("codec.reset_threshold", codec.reset_threshold);
    put_int("codec.steps", codec.steps);
    put_int("codec.batch", codec.batch);
    put_int("codec.window", codec.window);
    put_f("codec.lr", codec.lr);
    put_f("codec.lr_min", codec.lr_min);
    put_int("codec.warmup", codec.warmup);
    auto put_former = [&](const std::string& s, const MformerDims& m) {
        put_int(s + ".hidden", m.hidden);
        put_int(s + ".layers", m.layers);
        put_int(s + ".heads", m.heads);
        put_int(s + ".max_len", m.max_len);
        put_int(s + ".steps", m.steps);
        put_int(s + ".batch", m.batch);
        put_f(s + ".lr", m.lr);
        put_int(s + ".warmup", m.warmup);
        put_f(s + ".null_cond_prob", m.null_cond_prob);
    };
    put_former("mformer", mformer);
    put_former("rformer", rformer);
    put_int("oracle.width", oracle.width);
    put_int("oracle.steps", oracle.steps);
    put_int("oracle.batch", oracle.batch);
    put_f("oracle.lr", oracle.lr);
    put_int("oracle.warmup", oracle.warmup);
    put_int("engine.iterations", engine.iterations);
    put_f("engine.s_masked", engine.s_masked);
    put_f("engine.s_residual", engine.s_residual);
    put_f("engine.temperature", engine.temperature);
    kv["engine.gumbel_anneal"] = engine.gumbel_anneal ? "true" : "false";
    return kv;
}

// FNV-1a over the canonical "key = value" lines; stable across runs.
inline std::string config_hash(const std::map<std::string, std::string>& kv) {
    uint64_t h = 0xcbf29ce484222325ull;
    auto feed = [&h](const std::string& s) {
        for (char ch : s) {
            h ^= static_cast<uint8_t>(ch);
            h *= 0x100000001b3ull;
        }
    };
    for (const auto& [k, v] : kv) {
        feed(k);
        feed("=");
        feed(v);
        feed("\n");
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline void write_flat_config(const std::string& path,
                              const std::map<std::string, std::string>& kv) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write config file '" + path + "'");
    for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
}

}  // namespace mogen

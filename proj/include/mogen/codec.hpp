#pragma once

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mogen/array.hpp"
#include "mogen/autodiff.hpp"
#include "mogen/errors.hpp"
#include "mogen/layers.hpp"
#include "mogen/optim.hpp"
#include "mogen/rng.hpp"
#include "mogen/rvq.hpp"

namespace mogen {

// ----------------------------------------------------------------- motion io

// A pose-feature sequence, frames x features, plus the capture rate.
struct Motion {
    Array frames;  // [N x D]
    int fps = 20;

    int num_frames() const { return frames.dim(0); }
    int feature_dim() const { return frames.dim(1); }
};

constexpr const char* kMotionHeaderTag = "#momask-motion";

// Plain text, one frame per row; %.9g keeps float32 round trips lossless.
inline void write_motion(const std::string& path, const Motion& motion) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (f == nullptr) throw io_error("cannot open '" + path + "' for writing");
    std::fprintf(f, "%s D=%d fps=%d\n", kMotionHeaderTag, motion.feature_dim(), motion.fps);
    const Array& fr = motion.frames;
    for (int r = 0; r < fr.dim(0); ++r) {
        for (int c = 0; c < fr.dim(1); ++c) {
            std::fprintf(f, c ? " %.9g" : "%.9g", static_cast<double>(fr.at(r, c)));
        }
        std::fputc('\n', f);
    }
    std::fclose(f);
}

inline Motion read_motion(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open motion file '" + path + "'");
    std::string header;
    std::getline(in, header);
    int d = 0, fps = 0;
    if (std::sscanf(header.c_str(), "#momask-motion D=%d fps=%d", &d, &fps) != 2 || d <= 0) {
        throw io_error("'" + path + "' is not a motion file (bad header)");
    }
    std::vector<float> values;
    double v;
    while (in >> v) values.push_back(static_cast<float>(v));
    if (values.empty() || values.size() % static_cast<size_t>(d) != 0) {
        throw io_error("'" + path + "' has a ragged frame table");
    }
    const int n = static_cast<int>(values.size() / static_cast<size_t>(d));
    Motion m;
    m.frames = Array({n, d}, std::move(values));
    m.fps = fps;
    return m;
}

// Tail padding by repetition of the last frame up to a multiple of `factor`.
inline Array pad_frames(const Array& frames, int factor) {
    const int n = frames.dim(0), d = frames.dim(1);
    const int padded = ((n + factor - 1) / factor) * factor;
    if (padded == n) return frames;
    Array out({padded, d});
    std::copy(frames.data(), frames.data() + frames.numel(), out.data());
    for (int r = n; r < padded; ++r)
        for (int c = 0; c < d; ++c) out.at(r, c) = frames.at(n - 1, c);
    return out;
}

// --------------------------------------------------------------- token stack

// The (V+1) x n grid of discrete motion tokens; row 0 is the base layer.
struct TokenStack {
    std::vector<std::vector<int>> rows;
    int n = 0;

    int num_layers() const { return static_cast<int>(rows.size()); }
};

// ----------------------------------------------------------------- codec

struct CodecConfig {
    int feature_dim = 48;   // D
    int latent_dim = 128;   // d
    int width1 = 48;        // channels after the first downsample
    int width2 = 64;        // channels after the second downsample
    int codebook_size = 128;
    int num_layers = 6;     // V+1
    float dropout_q = 0.2f;
    float beta = 0.25f;
    float ema_lambda = 0.99f;
    float reset_threshold = 1.0f;
    int fps = 20;
};

constexpr int kDownscale = 4;  // two stride-2 stages

// Encoder E, decoder D and the residual quantizer between them.
struct CodecParams {
    CodecConfig cfg;

    ConvLayer enc_stem, enc_down, enc_out;
    ResBlock enc_res1a, enc_res1b, enc_res2a, enc_res2b;

    ConvLayer dec_in, dec_up1, dec_up2, dec_out;
    ResBlock dec_res2a, dec_res2b, dec_res1a, dec_res1b;

    RvqStack rvq;

    struct B {
        ConvLayer::B enc_stem, enc_down, enc_out;
        ResBlock::B enc_res1a, enc_res1b, enc_res2a, enc_res2b;
        ConvLayer::B dec_in, dec_up1, dec_up2, dec_out;
        ResBlock::B dec_res2a, dec_res2b, dec_res1a, dec_res1b;
    };

    static CodecParams create(const CodecConfig& cfg, Rng& rng) {
        Rng init = rng.stream("codec.init");
        CodecParams p;
        p.cfg = cfg;
        p.enc_stem = ConvLayer::create(cfg.feature_dim, cfg.width1, 3, 2, 1, init);
        p.enc_res1a = ResBlock::create(cfg.width1, init);
        p.enc_res1b = ResBlock::create(cfg.width1, init);
        p.enc_down = ConvLayer::create(cfg.width1, cfg.width2, 3, 2, 1, init);
        p.enc_res2a = ResBlock::create(cfg.width2, init);
        p.enc_res2b = ResBlock::create(cfg.width2, init);
        p.enc_out = ConvLayer::create(cfg.width2, cfg.latent_dim, 3, 1, 1, init);

        p.dec_in = ConvLayer::create(cfg.latent_dim, cfg.width2, 3, 1, 1, init);
        p.dec_res2a = ResBlock::create(cfg.width2, init);
        p.dec_res2b = ResBlock::create(cfg.width2, init);
        p.dec_up1 = ConvLayer::create(cfg.width2, cfg.width1, 3, 1, 1, init);
        p.dec_res1a = ResBlock::create(cfg.width1, init);
        p.dec_res1b = ResBlock::create(cfg.width1, init);
        p.dec_up2 = ConvLayer::create(cfg.width1, cfg.width1, 3, 1, 1, init);
        p.dec_out = ConvLayer::create(cfg.width1, cfg.feature_dim, 3, 1, 1, init);

        p.rvq = RvqStack::create(cfg.num_layers, cfg.codebook_size, cfg.latent_dim,
                                 cfg.dropout_q, rng);
        return p;
    }

    B bind(Tape& t, Binding* bind) {
        B b{enc_stem.bind(t, bind, "codec.enc.stem"),
            enc_down.bind(t, bind, "codec.enc.down"),
            enc_out.bind(t, bind, "codec.enc.out"),
            enc_res1a.bind(t, bind, "codec.enc.res1a"),
            enc_res1b.bind(t, bind, "codec.enc.res1b"),
            enc_res2a.bind(t, bind, "codec.enc.res2a"),
            enc_res2b.bind(t, bind, "codec.enc.res2b"),
            dec_in.bind(t, bind, "codec.dec.in"),
            dec_up1.bind(t, bind, "codec.dec.up1"),
            dec_up2.bind(t, bind, "codec.dec.up2"),
            dec_out.bind(t, bind, "codec.dec.out"),
            dec_res2a.bind(t, bind, "codec.dec.res2a"),
            dec_res2b.bind(t, bind, "codec.dec.res2b"),
            dec_res1a.bind(t, bind, "codec.dec.res1a"),
            dec_res1b.bind(t, bind, "codec.dec.res1b")};
        return b;
    }

    template <typename F>
    void visit_params(F&& f) {
        enc_stem.visit("codec.enc.stem", f);
        enc_res1a.visit("codec.enc.res1a", f);
        enc_res1b.visit("codec.enc.res1b", f);
        enc_down.visit("codec.enc.down", f);
        enc_res2a.visit("codec.enc.res2a", f);
        enc_res2b.visit("codec.enc.res2b", f);
        enc_out.visit("codec.enc.out", f);
        dec_in.visit("codec.dec.in", f);
        dec_res2a.visit("codec.dec.res2a", f);
        dec_res2b.visit("codec.dec.res2b", f);
        dec_up1.visit("codec.dec.up1", f);
        dec_res1a.visit("codec.dec.res1a", f);
        dec_res1b.visit("codec.dec.res1b", f);
        dec_up2.visit("codec.dec.up2", f);
        dec_out.visit("codec.dec.out", f);
    }

    // Codebooks and their EMA statistics (not optimized by Adam).
    template <typename F>
    void visit_buffers(F&& f) {
        for (int v = 0; v < rvq.num_layers(); ++v) {
            const std::string prefix = "codec.rvq." + std::to_string(v);
            f(prefix + ".codes", rvq.layers[static_cast<size_t>(v)].codes);
            f(prefix + ".ema_count", rvq.layers[static_cast<size_t>(v)].ema_count);
            f(prefix + ".ema_sum", rvq.layers[static_cast<size_t>(v)].ema_sum);
        }
    }
};

// Encoder forward over a channel-major motion [D x T]; returns latents [n x d].
inline Var encode_latents(const CodecParams::B& b, Var motion_cm) {
    Var x = relu(apply_conv(b.enc_stem, motion_cm));
    x = apply_res(b.enc_res1a, x);
    x = apply_res(b.enc_res1b, x);
    x = relu(apply_conv(b.enc_down, x));
    x = apply_res(b.enc_res2a, x);
    x = apply_res(b.enc_res2b, x);
    x = apply_conv(b.enc_out, x);  // [d x n]
    return transpose(x);
}

// Decoder forward over latents [n x d]; returns channel-major frames [D x 4n].
inline Var decode_latents(const CodecParams::B& b, Var latents) {
    Var x = relu(apply_conv(b.dec_in, transpose(latents)));
    x = apply_res(b.dec_res2a, x);
    x = apply_res(b.dec_res2b, x);
    x = relu(apply_conv(b.dec_up1, upsample_nearest(x, 2)));
    x = apply_res(b.dec_res1a, x);
    x = apply_res(b.dec_res1b, x);
    x = relu(apply_conv(b.dec_up2, upsample_nearest(x, 2)));
    return apply_conv(b.dec_out, x);
}

inline void check_encode_input(const Array& frames, const CodecConfig& cfg) {
    ad::require_rank2(frames, "encode");
    if (frames.dim(1) != cfg.feature_dim) {
        throw shape_error("encode: feature dim " + std::to_string(frames.dim(1)) + " vs config " +
                          std::to_string(cfg.feature_dim));
    }
    if (frames.dim(0) < kDownscale) {
        throw domain_error("encode: motion has " + std::to_string(frames.dim(0)) +
                           " frames, need at least " + std::to_string(kDownscale));
    }
    if (frames.dim(0) % kDownscale != 0) {
        throw domain_error("encode: frame count " + std::to_string(frames.dim(0)) +
                           " is not a multiple of " + std::to_string(kDownscale) +
                           " (pad first)");
    }
}

// Motion -> latent sequence [n x d], n = N/4.
inline Array encode(const Array& frames, CodecParams& params) {
    check_encode_input(frames, params.cfg);
    Tape t;
    auto b = params.bind(t, nullptr);
    Var motion = t.constant(frames);
    Var latents = encode_latents(b, transpose(motion));
    return t.val(latents);
}

// Motion -> full token stack (all layers active). Pads to a multiple of 4.
inline TokenStack tokenize(const Array& frames, CodecParams& params) {
    Array padded = pad_frames(frames, kDownscale);
    Array latents = encode(padded, params);
    auto res = residual_quantize(latents, params.rvq, params.rvq.num_layers());
    TokenStack stack;
    stack.rows = std::move(res.token_rows);
    stack.n = latents.dim(0);
    return stack;
}

// Token stack -> motion frames [4n x D] using the first layers_used layers.
inline Motion detokenize(const TokenStack& stack, CodecParams& params, int layers_used) {
    if (layers_used < 1 || layers_used > params.rvq.num_layers() ||
        layers_used > stack.num_layers()) {
        throw domain_error("detokenize: layers_used " + std::to_string(layers_used) +
                           " outside [1, " + std::to_string(stack.num_layers()) + "]");
    }
    const int n = stack.n, d = params.rvq.dim();
    Array latents({n, d});
    for (int v = 0; v < layers_used; ++v) {
        const Codebook& book = params.rvq.layers[static_cast<size_t>(v)];
        const std::vector<int>& row = stack.rows[static_cast<size_t>(v)];
        if (static_cast<int>(row.size()) != n) {
            throw shape_error("detokenize: row " + std::to_string(v) + " has " +
                              std::to_string(row.size()) + " tokens, expected " +
                              std::to_string(n));
        }
        for (int i = 0; i < n; ++i) {
            const int id = row[static_cast<size_t>(i)];
            if (id < 0 || id >= book.size()) {
                throw token_error("detokenize: token " + std::to_string(id) + " at layer " +
                                  std::to_string(v) + " outside codebook of " +
                                  std::to_string(book.size()));
            }
            const float* code = book.codes.data() + static_cast<size_t>(id) * d;
            float* dst = latents.data() + static_cast<size_t>(i) * d;
            for (int c = 0; c < d; ++c) dst[c] += code[c];
        }
    }
    Tape t;
    auto b = params.bind(t, nullptr);
    Var out = decode_latents(b, t.constant(latents));
    Var frames = transpose(out);
    Motion m;
    m.frames = t.val(frames);
    m.fps = params.cfg.fps;
    return m;
}

// --------------------------------------------------------------- training

struct CodecTrainConfig {
    int steps = 2500;
    int batch = 8;
    int window = 40;  // training crop length in frames
    float lr = 1e-3f;
    float lr_min = 1e-4f;  // cosine decay target; 0 keeps the rate constant
    int warmup = 100;
    uint64_t seed = 0;
    int log_every = 50;
};

struct CodecTrainResult {
    CodecParams params;
    std::vector<TrainLogEntry> log;
};

// Frozen quantization snapshot used by the gradient-check oracle: reuses a
// fixed QuantizeResult instead of re-quantizing and replaces the
// straight-through node by latents + frozen offset, making the training
// forward a smooth function of the parameters. residuals[0] of each snapshot
// holds the base-point latents the offset is taken against.
struct FrozenQuant {
    std::vector<QuantizeResult> per_sample;
};

// One training forward pass over a batch of fixed-length crops. Returns the
// scalar loss var plus the plain L1 term value; fills `ema` with per-layer
// assignments unless frozen quantization is supplied.
inline std::pair<Var, float> codec_training_loss(
    Tape& tape, CodecParams::B& bound, const CodecConfig& cfg,
    const std::vector<Array>& crops, int active_layers, const RvqStack& rvq,
    std::vector<LayerBatch>* ema, const FrozenQuant* frozen = nullptr) {
    Var total = tape.constant_scalar(0.0f);
    double l1_value = 0.0;
    for (size_t s = 0; s < crops.size(); ++s) {
        const Array& frames = crops[s];
        Var target_cm = transpose(tape.constant(frames));
        Var latents = encode_latents(bound, target_cm);
        QuantizeResult local;
        const QuantizeResult* res;
        Var st;
        if (frozen != nullptr) {
            res = &frozen->per_sample[s];
            Array offset = res->code_sum() - res->residuals.front();
            st = add(latents, tape.constant(offset));
        } else {
            local = residual_quantize(tape.val(latents), rvq, active_layers);
            res = &local;
            st = straight_through(tape, latents, *res);
        }
        Var recon = transpose(decode_latents(bound, st));
        std::vector<float> ones(static_cast<size_t>(frames.dim(0)), 1.0f);
        Var l1 = masked_l1(recon, frames, ones);
        Var commit = commitment_loss(tape, latents, *res);
        total = add(total, add(l1, scale(commit, cfg.beta)));
        l1_value += tape.val(l1)[0];
        if (ema != nullptr && frozen == nullptr) collect_ema_batch(*res, *ema);
    }
    Var loss = scale(total, 1.0f / static_cast<float>(crops.size()));
    return {loss, static_cast<float>(l1_value / static_cast<double>(crops.size()))};
}

// Full RVQ-VAE training: L1 reconstruction + commitment under quantization
// dropout, Adam on the encoder/decoder, EMA updates on the codebooks.
inline CodecTrainResult train_rvqvae(const std::vector<Array>& motions, const CodecConfig& cfg,
                                     const CodecTrainConfig& train) {
    if (motions.empty()) throw config_error("train_rvqvae: empty corpus");
    for (const Array& m : motions) {
        if (m.dim(0) < train.window) {
            throw config_error("train_rvqvae: motion shorter than training window");
        }
    }
    Rng root(train.seed);
    Rng init_rng = root.stream("rvq.init");
    Rng batch_rng = root.stream("rvq.batch");
    Rng dropout_rng = root.stream("rvq.dropout");
    Rng reset_rng = root.stream("rvq.reset");

    CodecTrainResult out{CodecParams::create(cfg, init_rng), {}};
    CodecParams& params = out.params;

    std::vector<NamedParam> named;
    params.visit_params([&](const std::string& name, Array& a) { named.push_back({name, &a}); });
    Adam opt;

    for (int step = 1; step <= train.steps; ++step) {
        std::vector<Array> crops;
        crops.reserve(static_cast<size_t>(train.batch));
        for (int i = 0; i < train.batch; ++i) {
            const Array& m = motions[static_cast<size_t>(batch_rng.uniform_int(
                static_cast<int>(motions.size())))];
            const int start = batch_rng.uniform_int(m.dim(0) - train.window + 1);
            Array crop({train.window, m.dim(1)});
            std::copy(m.data() + static_cast<size_t>(start) * m.dim(1),
                      m.data() + static_cast<size_t>(start + train.window) * m.dim(1),
                      crop.data());
            crops.push_back(std::move(crop));
        }
        const int active = draw_dropout_layers(params.rvq, dropout_rng);

        Tape tape;
        Binding binding;
        auto bound = params.bind(tape, &binding);
        std::vector<LayerBatch> ema;
        auto [loss, l1] = codec_training_loss(tape, bound, cfg, crops, active, params.rvq, &ema);
        const float loss_value = tape.val(loss)[0];
        if (!std::isfinite(loss_value)) {
            throw numeric_error("train_rvqvae: loss diverged at step " + std::to_string(step));
        }
        tape.backward(loss);
        opt.step(named, tape, binding,
                 warmup_cosine_lr(train.lr, train.lr_min, step, train.warmup, train.steps));
        ema_update(params.rvq, ema, cfg.ema_lambda, cfg.reset_threshold, reset_rng);

        if (step % train.log_every == 0 || step == train.steps || step == 1) {
            out.log.push_back({step, loss_value, l1});
        }
    }
    return out;
}

// Mean absolute reconstruction error per feature over the original (unpadded)
// frames; the evaluation primitive behind the layer sweep.
inline double reconstruction_l1(const Array& frames, CodecParams& params, int layers_used) {
    TokenStack stack = tokenize(frames, params);
    Motion recon = detokenize(stack, params, layers_used);
    const int n = frames.dim(0), d = frames.dim(1);
    double acc = 0.0;
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c)
            acc += std::fabs(static_cast<double>(recon.frames.at(r, c)) - frames.at(r, c));
    return acc / (static_cast<double>(n) * d);
}

// Mean per-joint L2 error, treating consecutive feature triples as joints.
inline double reconstruction_mpjpe(const Array& frames, CodecParams& params, int layers_used) {
    TokenStack stack = tokenize(frames, params);
    Motion recon = detokenize(stack, params, layers_used);
    const int n = frames.dim(0), d = frames.dim(1);
    const int joints = d / 3;
    double acc = 0.0;
    for (int r = 0; r < n; ++r) {
        for (int j = 0; j < joints; ++j) {
            double sq = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double diff =
                    static_cast<double>(recon.frames.at(r, j * 3 + c)) - frames.at(r, j * 3 + c);
                sq += diff * diff;
            }
            acc += std::sqrt(sq);
        }
    }
    return acc / (static_cast<double>(n) * joints);
}

}  // namespace mogen

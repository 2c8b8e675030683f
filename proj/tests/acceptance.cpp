// Acceptance suite: trains the full desk-scale stack from scratch and checks
// every acceptance criterion, printing one PASS/FAIL line each. Exits
// non-zero if any criterion fails. argv[1] is the path to the mogen CLI
// binary (used by the determinism criterion).

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mogen/checkpoint.hpp"
#include "mogen/codec.hpp"
#include "mogen/config.hpp"
#include "mogen/corpus.hpp"
#include "mogen/engine.hpp"
#include "mogen/eval.hpp"
#include "mogen/mformer.hpp"
#include "mogen/rformer.hpp"
#include "oracles.hpp"

using namespace mogen;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(int criterion, bool pass, const std::string& detail) {
    std::printf("[%s] C%d %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ------------------------------------------------------------ trained stack

struct Artifacts {
    std::vector<Array> train_frames, test_frames;
    std::vector<int> train_labels, test_labels;
    int num_labels = 8;

    CodecParams codec;        // trained with q = 0.2
    CodecParams codec_nodrop; // trained with q = 0, same seed and budget
    MTransformerParams mparams;
    RTransformerParams rparams;
    OracleParams oracle;
    GuidanceConfig guidance;
    int iterations = 10;
};

Artifacts build_artifacts() {
    Artifacts a;
    auto t0 = Clock::now();

    CorpusManifest manifest;
    manifest.classes = {"walk", "run",        "jump",   "wave",
                        "turn-left", "turn-right", "crouch", "kick"};
    manifest.num_samples = 2000;
    manifest.frames_min = 40;
    manifest.frames_max = 64;
    manifest.noise = 0.025;
    manifest.seed = 0;
    Rng root(manifest.seed);
    for (int i = 0; i < manifest.num_samples; ++i) {
        Rng s = root.stream("m" + std::to_string(i));
        const int len = manifest.frames_min + (i % (manifest.frames_max - manifest.frames_min + 1));
        Motion m = synth_motion(find_class(manifest.classes[static_cast<size_t>(i % 8)]), len,
                                manifest.noise, manifest.fps, s);
        if (i < 1600) {
            a.train_frames.push_back(m.frames);
            a.train_labels.push_back(i % 8);
        } else {
            a.test_frames.push_back(m.frames);
            a.test_labels.push_back(i % 8);
        }
    }
    std::printf("# corpus built (%.0fs)\n", seconds_since(t0));
    std::fflush(stdout);

    CodecConfig cc;  // desk defaults: D=48, d=128, K=128, V+1=6, q=0.2
    CodecTrainConfig tc;
    tc.steps = 800;
    tc.batch = 8;
    tc.window = 40;
    tc.seed = 0;
    a.codec = train_rvqvae(a.train_frames, cc, tc).params;
    std::printf("# codec q=0.2 trained (%.0fs)\n", seconds_since(t0));
    std::fflush(stdout);

    CodecConfig cc0 = cc;
    cc0.dropout_q = 0.0f;
    a.codec_nodrop = train_rvqvae(a.train_frames, cc0, tc).params;
    std::printf("# codec q=0 trained (%.0fs)\n", seconds_since(t0));
    std::fflush(stdout);

    std::vector<TokenizedSample> mdata;
    std::vector<StackedSample> rdata;
    for (size_t i = 0; i < a.train_frames.size(); ++i) {
        TokenStack s = tokenize(a.train_frames[i], a.codec);
        Condition cond = Condition::label(a.train_labels[i]);
        mdata.push_back({s.rows[0], cond});
        rdata.push_back({std::move(s), cond});
    }

    MformerDims md;
    md.steps = 500;
    md.batch = 16;
    a.mparams = train_mformer(mdata, cc.codebook_size, a.num_labels, md, 0).params;
    std::printf("# masked transformer trained (%.0fs)\n", seconds_since(t0));
    std::fflush(stdout);

    MformerDims rd;
    rd.steps = 400;
    rd.batch = 16;
    a.rparams = train_rformer(rdata, cc.codebook_size, cc.num_layers, a.num_labels, rd, 0).params;
    std::printf("# residual transformer trained (%.0fs)\n", seconds_since(t0));
    std::fflush(stdout);

    OracleDims od;
    a.oracle = train_oracle(a.train_frames, a.train_labels, a.test_frames, a.test_labels,
                            a.num_labels, od, 0)
                   .params;
    std::printf("# oracle trained (%.0fs)\n", seconds_since(t0));
    std::fflush(stdout);
    return a;
}

// generation accuracy over labels x samples with a given iteration count
double generation_accuracy(Artifacts& a, int iterations, int per_label, bool base_only,
                           float s_masked, uint64_t seed) {
    GuidanceConfig g = a.guidance;
    g.s_masked = s_masked;
    int hits = 0, total = 0;
    for (int label = 0; label < a.num_labels; ++label) {
        for (int k = 0; k < per_label; ++k) {
            Rng rng = Rng(seed).stream("gen." + std::to_string(label) + "." + std::to_string(k));
            Motion m;
            if (base_only) {
                const int n = 16;
                DecodeState state = DecodeState::all_masked(n, a.mparams.mask_id());
                Rng decode_rng = rng.stream("decode");
                decode_base(state, Condition::label(label), a.mparams, iterations, g, decode_rng);
                TokenStack stack;
                stack.n = n;
                stack.rows.push_back(state.row);
                m = detokenize(stack, a.codec, 1);
            } else {
                m = generate(Condition::label(label), 64, a.codec, a.mparams, a.rparams,
                             iterations, g, rng);
            }
            hits += oracle_classify(m.frames, a.oracle) == label ? 1 : 0;
            ++total;
        }
    }
    return static_cast<double>(hits) / total;
}

// ------------------------------------------------------------ criteria

void criterion_1_telescoping(Artifacts& a) {
    auto t0 = Clock::now();
    Rng rng(101);
    double max_dev = 0.0;
    const int d = a.codec.rvq.dim();
    for (int trial = 0; trial < 1000; ++trial) {
        Array latents = oracles::random_array({8, d}, rng, -2.0, 2.0);
        const int active = 1 + (trial % a.codec.rvq.num_layers());
        QuantizeResult res = residual_quantize(latents, a.codec.rvq, active);
        // independent recomputation from the returned token ids
        Array r = latents;
        for (int v = 0; v < active; ++v) {
            const Codebook& book = a.codec.rvq.layers[static_cast<size_t>(v)];
            for (int i = 0; i < 8; ++i) {
                const int id = res.token_rows[static_cast<size_t>(v)][static_cast<size_t>(i)];
                const float* code = book.codes.data() + static_cast<size_t>(id) * d;
                for (int c = 0; c < d; ++c) r.at(i, c) = r.at(i, c) - code[c];
            }
        }
        max_dev = std::max(max_dev, max_abs_diff(r, res.residuals[static_cast<size_t>(active)]));
    }
    const double elapsed = seconds_since(t0);
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "telescoping: max |latents - sum(b) - r_A| = %g over 1000 sequences (%.1fs)",
                  max_dev, elapsed);
    report(1, max_dev == 0.0 && elapsed < 5.0, buf);
}

void criterion_2_schedule(Artifacts& a) {
    bool ok = true;
    for (int i = 0; i <= 1000; ++i) {
        const double tau = static_cast<double>(i) / 1000.0;
        const long double oracle = cosl(static_cast<long double>(M_PIl) * tau / 2.0L);
        if (std::fabs(gamma_schedule(tau) - static_cast<double>(oracle)) >= 1e-6) ok = false;
    }
    // decode mask-count trajectory for n=10, L=10 against the ceiling formula
    const int n = 10, L = 10;
    std::vector<int> observed;
    auto observer = [&](const DecodeState& s) {
        int masked = 0;
        for (int id : s.row) masked += id == a.mparams.mask_id() ? 1 : 0;
        observed.push_back(masked);
    };
    DecodeState state = DecodeState::all_masked(n, a.mparams.mask_id());
    Rng rng = Rng(202).stream("decode");
    decode_base(state, Condition::label(0), a.mparams, L, a.guidance, rng, observer);
    std::string traj;
    for (int l = 1; l <= L; ++l) {
        const int expect =
            static_cast<int>(std::ceil(gamma_schedule(static_cast<double>(l) / L) * n));
        if (observed[static_cast<size_t>(l - 1)] != expect) ok = false;
        traj += (l > 1 ? "," : "") + std::to_string(observed[static_cast<size_t>(l - 1)]);
    }
    report(2, ok, "schedule: gamma within 1e-6 on the 1001-point grid; decode trajectory [" +
                      traj + "] matches the ceiling formula");
}

void criterion_3_gradients(Artifacts&) {
    auto t0 = Clock::now();
    double worst_ops = 0.0;
    Rng rng(301);

    // --- every differentiable op on random inputs in [-1, 1]
    auto check = [&](const oracles::LossBuilder& f, std::vector<Array> inputs) {
        auto gc = oracles::check_gradients(f, inputs);
        worst_ops = std::max(worst_ops, gc.max_rel_err);
    };
    auto weighted = [](Tape& t, Var v, uint64_t seed) {
        Array w(t.val(v).shape());
        Rng r(seed);
        for (size_t i = 0; i < w.numel(); ++i) w[i] = static_cast<float>(r.uniform(-1, 1));
        return sum(mul(v, t.constant(w)));
    };
    check([&](Tape& t, const std::vector<Var>& in) { return weighted(t, add(in[0], in[1]), 1); },
          {oracles::random_array({3, 4}, rng), oracles::random_array({3, 4}, rng)});
    check([&](Tape& t, const std::vector<Var>& in) { return weighted(t, sub(in[0], in[1]), 2); },
          {oracles::random_array({3, 4}, rng), oracles::random_array({3, 4}, rng)});
    check([&](Tape& t, const std::vector<Var>& in) { return weighted(t, mul(in[0], in[1]), 3); },
          {oracles::random_array({3, 4}, rng), oracles::random_array({3, 4}, rng)});
    check([&](Tape& t, const std::vector<Var>& in) { return weighted(t, matmul(in[0], in[1]), 4); },
          {oracles::random_array({3, 4}, rng), oracles::random_array({4, 2}, rng)});
    check([&](Tape& t, const std::vector<Var>& in) { return weighted(t, softmax(in[0]), 5); },
          {oracles::random_array({3, 5}, rng)});
    check([&](Tape& t, const std::vector<Var>& in) { return weighted(t, gelu(in[0]), 6); },
          {oracles::random_array({3, 4}, rng)});
    check([&](Tape& t, const std::vector<Var>& in) {
              return weighted(t, layernorm(in[0], in[1], in[2]), 7);
          },
          {oracles::random_array({3, 6}, rng), oracles::random_array({6}, rng, 0.5, 1.5),
           oracles::random_array({6}, rng)});
    check([&](Tape& t, const std::vector<Var>& in) {
              return weighted(t, conv1d(in[0], in[1], in[2], 2, 1), 8);
          },
          {oracles::random_array({2, 8}, rng), oracles::random_array({3, 2, 3}, rng),
           oracles::random_array({3}, rng)});
    check([&](Tape& t, const std::vector<Var>& in) {
              return weighted(t, attention(in[0], in[1], in[2]), 9);
          },
          {oracles::random_array({4, 3}, rng), oracles::random_array({4, 3}, rng),
           oracles::random_array({4, 3}, rng)});
    check([&](Tape& t, const std::vector<Var>& in) {
              return weighted(t, upsample_nearest(in[0], 2), 10);
          },
          {oracles::random_array({3, 5}, rng)});
    check([&](Tape& t, const std::vector<Var>& in) {
              return weighted(t, embedding(in[0], {2, 0, 1}), 11);
          },
          {oracles::random_array({3, 4}, rng)});
    check([&](Tape& t, const std::vector<Var>& in) {
              return masked_cross_entropy(in[0], {1, 0, 2}, {1.0f, 0.0f, 1.0f});
          },
          {oracles::random_array({3, 4}, rng)});
    Rng trng(23);
    Array l1_target = oracles::random_array({3, 4}, trng);
    check([&](Tape& t, const std::vector<Var>& in) {
              return masked_l1(in[0], l1_target, {1.0f, 1.0f, 0.0f});
          },
          {oracles::random_array({3, 4}, rng)});

    // --- full quantizer training loss (reconstruction + commitment)
    double worst_rvq = 0.0;
    {
        CodecConfig cfg;
        cfg.feature_dim = 6;
        cfg.latent_dim = 4;
        cfg.width1 = 4;
        cfg.width2 = 4;
        cfg.codebook_size = 4;
        cfg.num_layers = 2;
        Rng init(3);
        CodecParams params = CodecParams::create(cfg, init);
        Rng drng(5);
        std::vector<Array> crops{oracles::random_array({8, cfg.feature_dim}, drng)};
        Array latents;
        {
            Tape t;
            auto b = params.bind(t, nullptr);
            latents = t.val(encode_latents(b, transpose(t.constant(crops[0]))));
        }
        FrozenQuant frozen;
        frozen.per_sample.push_back(residual_quantize(latents, params.rvq, cfg.num_layers));
        std::vector<NamedParam> named;
        params.visit_params([&](const std::string& n, Array& arr) { named.push_back({n, &arr}); });
        std::map<std::string, Array> bp;
        {
            Tape tape;
            Binding binding;
            auto bound = params.bind(tape, &binding);
            auto [loss, l1] = codec_training_loss(tape, bound, cfg, crops, cfg.num_layers,
                                                  params.rvq, nullptr);
            tape.backward(loss);
            for (const auto& [name, var] : binding.entries) bp[name] = tape.grad(var);
        }
        auto loss_fn = [&]() {
            Tape tape;
            auto bound = params.bind(tape, nullptr);
            auto [loss, l1] = codec_training_loss(tape, bound, cfg, crops, cfg.num_layers,
                                                  params.rvq, nullptr, &frozen);
            return static_cast<double>(tape.val(loss)[0]);
        };
        worst_rvq = oracles::fd_vs_backprop_named(loss_fn, named, bp).max_rel_err;
    }

    // --- masked transformer loss
    double worst_mask = 0.0;
    {
        MformerDims dims;
        dims.hidden = 8;
        dims.layers = 1;
        dims.heads = 2;
        dims.max_len = 8;
        Rng init(7);
        MTransformerParams q = MTransformerParams::create(5, 3, dims, init);
        std::vector<MaskedItem> items(2);
        items[0].corrupted = {q.mask_id(), 2, 1};
        items[0].targets = {3, 2, 1};
        items[0].weights = {1, 1, 0};
        items[0].cond = Condition::label(1);
        items[1].corrupted = {0, q.mask_id(), q.mask_id()};
        items[1].targets = {0, 4, 2};
        items[1].weights = {0, 1, 1};
        items[1].cond = Condition::null_cond();
        std::vector<NamedParam> named;
        q.visit_params([&](const std::string& n, Array& arr) { named.push_back({n, &arr}); });
        std::map<std::string, Array> bp;
        {
            Tape tape;
            Binding binding;
            auto bound = q.bind(tape, &binding);
            Var loss = mformer_loss_core(tape, bound, q, items);
            tape.backward(loss);
            for (const auto& [name, var] : binding.entries) bp[name] = tape.grad(var);
        }
        auto loss_fn = [&]() {
            Tape tape;
            auto bound = q.bind(tape, nullptr);
            return static_cast<double>(tape.val(mformer_loss_core(tape, bound, q, items))[0]);
        };
        worst_mask = oracles::fd_vs_backprop_named(loss_fn, named, bp).max_rel_err;
    }

    // --- residual transformer loss
    double worst_res = 0.0;
    {
        MformerDims dims;
        dims.hidden = 8;
        dims.layers = 1;
        dims.heads = 2;
        dims.max_len = 8;
        Rng init(9);
        RTransformerParams p = RTransformerParams::create(5, 3, 2, dims, init);
        TokenStack s1, s2;
        s1.n = 3;
        s1.rows = {{0, 1, 2}, {3, 4, 0}, {1, 1, 3}};
        s2.n = 3;
        s2.rows = {{4, 4, 1}, {0, 2, 2}, {3, 0, 1}};
        std::vector<RformerBatchItem> items{{&s1, Condition::label(1)},
                                            {&s2, Condition::null_cond()}};
        std::vector<NamedParam> named;
        p.visit_params([&](const std::string& n, Array& arr) { named.push_back({n, &arr}); });
        std::map<std::string, Array> bp;
        {
            Tape tape;
            Binding binding;
            auto bound = p.bind(tape, &binding);
            Var loss = rformer_loss_core(tape, bound, p, items, 2);
            tape.backward(loss);
            for (const auto& [name, var] : binding.entries) bp[name] = tape.grad(var);
        }
        auto loss_fn = [&]() {
            Tape tape;
            auto bound = p.bind(tape, nullptr);
            return static_cast<double>(tape.val(rformer_loss_core(tape, bound, p, items, 2))[0]);
        };
        worst_res = oracles::fd_vs_backprop_named(loss_fn, named, bp).max_rel_err;
    }

    const double elapsed = seconds_since(t0);
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "gradients: ops %.4f, quantizer loss %.4f, masked loss %.4f, residual loss "
                  "%.4f (all < 1e-2 relative; %.0fs)",
                  worst_ops, worst_rvq, worst_mask, worst_res, elapsed);
    report(3, worst_ops < 1e-2 && worst_rvq < 1e-2 && worst_mask < 1e-2 && worst_res < 1e-2 &&
                  elapsed < 120.0,
           buf);
}

void criterion_4_straight_through(Artifacts&) {
    CodecConfig cfg;
    cfg.feature_dim = 6;
    cfg.latent_dim = 4;
    cfg.width1 = 4;
    cfg.width2 = 4;
    cfg.codebook_size = 4;
    cfg.num_layers = 2;
    Rng init(11);
    CodecParams params = CodecParams::create(cfg, init);
    Rng drng(12);
    Array frames = oracles::random_array({8, cfg.feature_dim}, drng);

    Array latents;
    {
        Tape t;
        auto b = params.bind(t, nullptr);
        latents = t.val(encode_latents(b, transpose(t.constant(frames))));
    }
    QuantizeResult frozen = residual_quantize(latents, params.rvq, cfg.num_layers);
    Array offset = frozen.code_sum() - latents;
    Rng wrng(13);
    Array w = oracles::random_array({8, cfg.feature_dim}, wrng);

    // backprop through the real quantized path
    Array bp_grad;
    {
        Tape t;
        auto b = params.bind(t, nullptr);
        Var input = t.leaf(frames);
        Var lat = encode_latents(b, transpose(input));
        Var st = straight_through(t, lat, frozen);
        Var recon = transpose(decode_latents(b, st));
        Var loss = sum(mul(recon, t.constant(w)));
        t.backward(loss);
        bp_grad = t.grad(input);
    }

    // finite differences on the identity-composed surrogate
    auto surrogate = [&](Tape& t, const std::vector<Var>& in) {
        auto b = params.bind(t, nullptr);
        Var lat = encode_latents(b, transpose(in[0]));
        Var st = add(lat, t.constant(offset));
        Var recon = transpose(decode_latents(b, st));
        return sum(mul(recon, t.constant(w)));
    };
    double max_rel = 0.0;
    {
        std::vector<Array> inputs{frames};
        auto bp_of_surrogate = [&]() {
            Tape tape;
            std::vector<Var> vars{tape.leaf(frames, true)};
            Var loss = surrogate(tape, vars);
            tape.backward(loss);
            return tape.grad(vars[0]);
        }();
        // the surrogate's backprop must equal the quantized path's backprop
        if (max_abs_diff(bp_of_surrogate, bp_grad) > 1e-4) max_rel = 1.0;
        auto gc = oracles::check_gradients(surrogate, inputs, 1e-3, 5e-2);
        max_rel = std::max(max_rel, gc.max_rel_err);
    }
    const double grad_mass = sum_abs(bp_grad);
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "straight-through: encoder-input gradient mass %.3f (nonzero), FD relative "
                  "error %.4f",
                  grad_mass, max_rel);
    report(4, grad_mass > 0.0 && max_rel < 1e-2, buf);
}

void criterion_5_depth_trend(Artifacts& a) {
    const int layers = a.codec.rvq.num_layers();
    const size_t count = std::min<size_t>(a.test_frames.size(), 150);
    int violators = 0;
    double err1 = 0.0, err6 = 0.0;
    for (size_t i = 0; i < count; ++i) {
        std::vector<double> errs;
        TokenStack stack = tokenize(a.test_frames[i], a.codec);
        for (int k = 1; k <= layers; ++k) {
            Motion recon = detokenize(stack, a.codec, k);
            const Array& f = a.test_frames[i];
            double acc = 0.0;
            for (int r = 0; r < f.dim(0); ++r)
                for (int c = 0; c < f.dim(1); ++c)
                    acc += std::fabs(static_cast<double>(recon.frames.at(r, c)) - f.at(r, c));
            errs.push_back(acc / (static_cast<double>(f.dim(0)) * f.dim(1)));
        }
        bool violated = false;
        for (int k = 0; k + 1 < layers; ++k) {
            if (errs[static_cast<size_t>(k + 1)] > errs[static_cast<size_t>(k)] + 1e-9) {
                violated = true;
            }
        }
        violators += violated ? 1 : 0;
        err1 += errs.front();
        err6 += errs.back();
    }
    err1 /= static_cast<double>(count);
    err6 /= static_cast<double>(count);
    const double violation_rate = static_cast<double>(violators) / static_cast<double>(count);
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "depth trend: err(1)=%.4f err(6)=%.4f ratio=%.3f (<=0.6), per-sequence "
                  "violations %.1f%% (<5%%)",
                  err1, err6, err6 / err1, 100.0 * violation_rate);
    report(5, err6 <= 0.6 * err1 && violation_rate < 0.05, buf);
}

void criterion_6_dropout_trend(Artifacts& a) {
    const size_t count = std::min<size_t>(a.test_frames.size(), 150);
    double with_q = 0.0, without_q = 0.0;
    for (size_t i = 0; i < count; ++i) {
        with_q += reconstruction_l1(a.test_frames[i], a.codec, 1);
        without_q += reconstruction_l1(a.test_frames[i], a.codec_nodrop, 1);
    }
    with_q /= static_cast<double>(count);
    without_q /= static_cast<double>(count);
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "dropout trend: base-layer error %.4f with q=0.2 vs %.4f with q=0 "
                  "(same seed and budget)",
                  with_q, without_q);
    report(6, with_q < without_q, buf);
}

void criterion_7_cfg(Artifacts&) {
    Rng rng(701);
    Array c = oracles::random_array({4, 6}, rng, -3.0, 3.0);
    Array u = oracles::random_array({4, 6}, rng, -3.0, 3.0);
    bool ok = max_abs_diff(cfg_logits(c, u, 0.0f), c) == 0.0;
    ok = ok && max_abs_diff(cfg_logits(c, c, 4.0f), c) == 0.0;
    ok = ok && max_abs_diff(cfg_logits(c, c, 9.0f), c) == 0.0;
    Array c1 = Array::scalar(2.0f);
    Array u1 = Array::scalar(1.0f);
    ok = ok && cfg_logits(c1, u1, 4.0f)[0] == 6.0f;
    report(7, ok, "cfg algebra: s=0 identity, equal-logits fixed point, (s=4, 2, 1) -> 6");
}

void criterion_9_inpainting(Artifacts& a) {
    // decoder receptive field, measured by probing one latent position
    int margin = 0;
    {
        TokenStack probe_stack = tokenize(a.test_frames[0], a.codec);
        Motion base = detokenize(probe_stack, a.codec, probe_stack.num_layers());
        TokenStack changed = probe_stack;
        const int pos = probe_stack.n / 2;
        changed.rows[0][static_cast<size_t>(pos)] =
            (changed.rows[0][static_cast<size_t>(pos)] + 1) % a.codec.cfg.codebook_size;
        Motion moved = detokenize(changed, a.codec, changed.num_layers());
        int lo = base.num_frames(), hi = -1;
        for (int f = 0; f < base.num_frames(); ++f) {
            for (int c = 0; c < base.feature_dim(); ++c) {
                if (base.frames.at(f, c) != moved.frames.at(f, c)) {
                    lo = std::min(lo, f);
                    hi = std::max(hi, f);
                }
            }
        }
        margin = std::max(pos * 4 - lo, hi - (pos * 4 + 3));
    }

    Rng rng(901);
    int token_mismatches = 0;
    int flank_mismatches = 0;
    int specs_with_flanks = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const Array& ref = a.test_frames[static_cast<size_t>(
            rng.uniform_int(static_cast<int>(a.test_frames.size())))];
        const int n = (ref.dim(0) + 3) / 4;
        const int len = 2 + rng.uniform_int(3);             // 2..4 tokens
        const int start = rng.uniform_int(n - len);
        InpaintSpec spec;
        spec.reference_frames = ref;
        spec.ranges = {{start, start + len}};
        Rng gen_rng = Rng(902).stream("trial" + std::to_string(trial));
        InpaintResult r = inpaint_full(spec, Condition::label(trial % 8), a.codec, a.mparams,
                                       a.rparams, a.iterations, a.guidance, gen_rng);
        for (int v = 0; v < r.stack.num_layers(); ++v) {
            for (int i = 0; i < r.stack.n; ++i) {
                if (i >= start && i < start + len) continue;
                if (r.stack.rows[static_cast<size_t>(v)][static_cast<size_t>(i)] !=
                    r.reference.rows[static_cast<size_t>(v)][static_cast<size_t>(i)]) {
                    ++token_mismatches;
                }
            }
        }
        Motion ref_recon = detokenize(r.reference, a.codec, r.reference.num_layers());
        const int lo_influenced = start * 4 - margin;
        const int hi_influenced = (start + len) * 4 - 1 + margin;
        bool any_flank = false;
        for (int f = 0; f < ref.dim(0); ++f) {
            if (f >= lo_influenced && f <= hi_influenced) continue;
            any_flank = true;
            for (int c = 0; c < ref.dim(1); ++c) {
                if (r.motion.frames.at(f, c) != ref_recon.frames.at(f, c)) ++flank_mismatches;
            }
        }
        specs_with_flanks += any_flank ? 1 : 0;
    }
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "inpainting: 50 specs, %d token mismatches outside ranges, %d flank-frame "
                  "deviations outside the +-%d-frame receptive field (%d specs had flanks)",
                  token_mismatches, flank_mismatches, margin, specs_with_flanks);
    report(9, token_mismatches == 0 && flank_mismatches == 0 && specs_with_flanks >= 25, buf);
}

void criterion_10_cli_determinism(const std::string& cli) {
    const std::string work = "acceptance_cli";
    fs::remove_all(work);
    fs::create_directories(work);

    // tiny but complete pipeline configuration
    std::map<std::string, std::string> kv;
    kv["run.seed"] = "0";
    kv["corpus.num_samples"] = "64";
    kv["corpus.frames_min"] = "24";
    kv["corpus.frames_max"] = "32";
    kv["codec.latent_dim"] = "16";
    kv["codec.width1"] = "16";
    kv["codec.width2"] = "16";
    kv["codec.codebook_size"] = "16";
    kv["codec.num_layers"] = "3";
    kv["codec.steps"] = "30";
    kv["codec.batch"] = "4";
    kv["codec.window"] = "24";
    kv["mformer.hidden"] = "32";
    kv["mformer.layers"] = "2";
    kv["mformer.heads"] = "2";
    kv["mformer.steps"] = "30";
    kv["mformer.batch"] = "8";
    kv["rformer.hidden"] = "32";
    kv["rformer.layers"] = "2";
    kv["rformer.heads"] = "2";
    kv["rformer.steps"] = "30";
    kv["rformer.batch"] = "8";
    kv["oracle.steps"] = "60";
    kv["engine.iterations"] = "4";

    auto run_pipeline = [&](const std::string& dir) {
        std::map<std::string, std::string> cfg = kv;
        cfg["paths.corpus"] = dir + "/corpus";
        cfg["paths.codec"] = dir + "/codec.mmk";
        cfg["paths.mformer"] = dir + "/mformer.mmk";
        cfg["paths.rformer"] = dir + "/rformer.mmk";
        cfg["paths.oracle"] = dir + "/oracle.mmk";
        write_flat_config(dir + "/config.cfg", cfg);
        const std::string base =
            cli + " --config " + dir + "/config.cfg --out " + dir + " ";
        auto sh = [&](const std::string& cmd) {
            const std::string full = cmd + " >> " + dir + "/log.txt 2>&1";
            if (std::system(full.c_str()) != 0) {
                throw std::runtime_error("pipeline command failed: " + cmd);
            }
        };
        sh(base + "gen-corpus");
        sh(base + "train-rvq");
        sh(base + "train-masked");
        sh(base + "train-residual");
        sh(base + "generate --label walk --frames 32 --seed 7");
        sh(base + "eval-recon --layers 1..3");
        sh(base + "eval-gen --samples 2 --sweep-samples 1");
    };

    bool ok = true;
    std::string detail;
    try {
        fs::create_directories(work + "/a");
        fs::create_directories(work + "/b");
        run_pipeline(work + "/a");
        run_pipeline(work + "/b");
        // byte-compare everything except the configs (paths differ) and logs
        int compared = 0;
        for (const auto& entry : fs::recursive_directory_iterator(work + "/a")) {
            if (!entry.is_regular_file()) continue;
            const std::string rel = fs::relative(entry.path(), work + "/a").string();
            if (rel == "config.cfg" || rel == "log.txt") continue;
            const std::string other = work + "/b/" + rel;
            if (!fs::exists(other)) {
                ok = false;
                detail = "missing in second run: " + rel;
                break;
            }
            if (slurp(entry.path().string()) != slurp(other)) {
                ok = false;
                detail = "differs between runs: " + rel;
                break;
            }
            ++compared;
        }
        if (ok) detail = std::to_string(compared) + " files byte-identical across two runs";
    } catch (const std::exception& e) {
        ok = false;
        detail = e.what();
    }
    report(10, ok, "cli determinism: " + detail);
    if (ok) fs::remove_all(work);
}

void criterion_11_iteration_shape(Artifacts& a, double acc_l10) {
    auto t0 = Clock::now();
    const double acc_l20 = generation_accuracy(a, 20, 25, false, a.guidance.s_masked, 801);
    const double acc_l1 = generation_accuracy(a, 1, 25, false, a.guidance.s_masked, 801);
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "iteration shape: acc(L=10)=%.3f within 2 points of acc(L=20)=%.3f; "
                  "acc(L=1)=%.3f strictly worse (%.0fs)",
                  acc_l10, acc_l20, acc_l1, seconds_since(t0));
    report(11, std::fabs(acc_l10 - acc_l20) <= 0.02 + 1e-9 && acc_l1 < acc_l10, buf);
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: acceptance <path-to-mogen-cli>\n");
        return 2;
    }
    const std::string cli = argv[1];
    try {
        Artifacts a = build_artifacts();
        criterion_1_telescoping(a);
        criterion_2_schedule(a);
        criterion_3_gradients(a);
        criterion_4_straight_through(a);
        criterion_5_depth_trend(a);
        criterion_6_dropout_trend(a);
        criterion_7_cfg(a);
        const double acc_l10 =
            generation_accuracy(a, a.iterations, 25, false, a.guidance.s_masked, 801);
        {
            auto t0 = Clock::now();
            const double base =
                generation_accuracy(a, a.iterations, 25, true, a.guidance.s_masked, 801);
            char buf[160];
            std::snprintf(buf, sizeof(buf),
                          "generation: oracle accuracy %.3f (>=0.90) over 8x25; full stack >= "
                          "base-only (%.3f >= %.3f) (%.0fs)",
                          acc_l10, acc_l10, base, seconds_since(t0));
            report(8, acc_l10 >= 0.90 && acc_l10 >= base, buf);
        }
        criterion_9_inpainting(a);
        criterion_10_cli_determinism(cli);
        criterion_11_iteration_shape(a, acc_l10);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "acceptance suite aborted: %s\n", e.what());
        return 3;
    }
    if (g_failures > 0) {
        std::printf("%d criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("all acceptance criteria passed\n");
    return 0;
}

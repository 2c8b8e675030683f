// mogen: masked motion token modeling at desk scale.
//
// Subcommands: gen-corpus, train-rvq, train-masked, train-residual,
// generate, inpaint, eval-recon, eval-gen, inspect-ckpt.
// Exit codes: 0 success, 2 configuration error, 3 runtime error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mogen/checkpoint.hpp"
#include "mogen/codec.hpp"
#include "mogen/config.hpp"
#include "mogen/corpus.hpp"
#include "mogen/engine.hpp"
#include "mogen/eval.hpp"
#include "mogen/mformer.hpp"
#include "mogen/rformer.hpp"

namespace fs = std::filesystem;
using namespace mogen;

namespace {

constexpr const char* kVersion = "mogen 0.1.0";

struct GlobalArgs {
    std::string config_path;
    int64_t seed_override = -1;
    std::string out_dir = "out";
};

RunConfig load_config(const GlobalArgs& g) {
    RunConfig cfg = g.config_path.empty() ? RunConfig() : RunConfig::from_file(g.config_path);
    if (g.seed_override >= 0) cfg.seed = static_cast<uint64_t>(g.seed_override);
    return cfg;
}

void write_run_record(const GlobalArgs& g, const RunConfig& cfg, const std::string& command) {
    fs::create_directories(g.out_dir);
    nlohmann::json j;
    j["command"] = command;
    j["config_hash"] = config_hash(cfg.snapshot());
    j["seed"] = cfg.seed;
    j["version"] = kVersion;
    std::ofstream out(g.out_dir + "/run-" + command + ".json");
    if (!out) throw io_error("cannot write run record in '" + g.out_dir + "'");
    out << j.dump(2) << "\n";
}

std::vector<Array> split_frames(const Corpus& corpus, const std::vector<int>& idx) {
    std::vector<Array> frames;
    frames.reserve(idx.size());
    for (int i : idx) frames.push_back(corpus.load(i).frames);
    return frames;
}

std::vector<int> split_label_list(const Corpus& corpus, const std::vector<int>& idx) {
    std::vector<int> labels;
    labels.reserve(idx.size());
    for (int i : idx) labels.push_back(corpus.samples[static_cast<size_t>(i)].label);
    return labels;
}

int label_id_from(const std::vector<std::string>& labels, const std::string& name) {
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == name) return static_cast<int>(i);
    }
    throw config_error("unknown label '" + name + "'; checkpoint knows: " + join_labels(labels));
}

// "3..6,9..12" in latent-token coordinates.
std::vector<std::pair<int, int>> parse_ranges(const std::string& text) {
    std::vector<std::pair<int, int>> ranges;
    if (text.empty()) return ranges;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const size_t dots = item.find("..");
        if (dots == std::string::npos) {
            throw config_error("range '" + item + "' must look like start..end");
        }
        try {
            ranges.emplace_back(std::stoi(item.substr(0, dots)),
                                std::stoi(item.substr(dots + 2)));
        } catch (const std::exception&) {
            throw config_error("range '" + item + "' must look like start..end");
        }
    }
    return ranges;
}

std::vector<int> parse_layer_sweep(const std::string& text, int max_layers) {
    std::vector<int> layers;
    const size_t dots = text.find("..");
    try {
        if (dots != std::string::npos) {
            const int lo = std::stoi(text.substr(0, dots));
            const int hi = std::stoi(text.substr(dots + 2));
            for (int v = lo; v <= hi; ++v) layers.push_back(v);
        } else {
            std::stringstream ss(text);
            std::string item;
            while (std::getline(ss, item, ',')) layers.push_back(std::stoi(item));
        }
    } catch (const std::exception&) {
        throw config_error("layer sweep '" + text + "' must look like 1..6 or 1,3,6");
    }
    for (int v : layers) {
        if (v < 1 || v > max_layers) {
            throw config_error("layer sweep entry " + std::to_string(v) + " outside [1, " +
                               std::to_string(max_layers) + "]");
        }
    }
    if (layers.empty()) throw config_error("empty layer sweep");
    return layers;
}

void tokenize_corpus(CodecParams& codec, const Corpus& corpus, const std::vector<int>& idx,
                     std::vector<TokenizedSample>* base_rows,
                     std::vector<StackedSample>* stacks) {
    for (int i : idx) {
        Motion m = corpus.load(i);
        TokenStack s = tokenize(m.frames, codec);
        Condition cond = Condition::label(corpus.samples[static_cast<size_t>(i)].label);
        if (base_rows != nullptr) base_rows->push_back({s.rows[0], cond});
        if (stacks != nullptr) stacks->push_back({std::move(s), cond});
    }
}

OracleParams load_or_train_oracle(const RunConfig& cfg, const Corpus& corpus) {
    if (fs::exists(cfg.oracle_ckpt)) {
        Checkpoint ck = Checkpoint::load(cfg.oracle_ckpt);
        return oracle_from_checkpoint(ck);
    }
    std::vector<Array> train = split_frames(corpus, corpus.train_idx);
    std::vector<int> train_labels = split_label_list(corpus, corpus.train_idx);
    std::vector<Array> test = split_frames(corpus, corpus.test_idx);
    std::vector<int> test_labels = split_label_list(corpus, corpus.test_idx);
    OracleTrainResult r =
        train_oracle(train, train_labels, test, test_labels,
                     static_cast<int>(corpus.manifest.classes.size()), cfg.oracle, cfg.seed);
    std::fprintf(stdout, "oracle: train acc %.4f, held-out acc %.4f\n", r.train_accuracy,
                 r.heldout_accuracy);
    const fs::path parent = fs::path(cfg.oracle_ckpt).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    Checkpoint ck = oracle_to_checkpoint(r.params, corpus.manifest.classes, cfg.seed);
    ck.save(cfg.oracle_ckpt);
    return r.params;
}

// ------------------------------------------------------------- subcommands

int cmd_gen_corpus(const GlobalArgs& g) {
    RunConfig cfg = load_config(g);
    CorpusManifest manifest = CorpusManifest::from_config(cfg.corpus, cfg.seed);
    build_corpus(manifest, cfg.corpus_dir);
    write_run_record(g, cfg, "gen-corpus");
    for (const auto& [k, v] : manifest.to_map()) {
        std::fprintf(stdout, "%s = %s\n", k.c_str(), v.c_str());
    }
    std::fprintf(stdout, "corpus written to %s\n", cfg.corpus_dir.c_str());
    return 0;
}

int cmd_train_rvq(const GlobalArgs& g) {
    RunConfig cfg = load_config(g);
    Corpus corpus = load_corpus(cfg.corpus_dir);
    std::vector<Array> frames = split_frames(corpus, corpus.train_idx);

    CodecConfig cc;
    cc.feature_dim = cfg.codec.feature_dim;
    cc.latent_dim = cfg.codec.latent_dim;
    cc.width1 = cfg.codec.width1;
    cc.width2 = cfg.codec.width2;
    cc.codebook_size = cfg.codec.codebook_size;
    cc.num_layers = cfg.codec.num_layers;
    cc.dropout_q = cfg.codec.dropout_q;
    cc.beta = cfg.codec.beta;
    cc.ema_lambda = cfg.codec.ema_lambda;
    cc.reset_threshold = cfg.codec.reset_threshold;
    cc.fps = corpus.manifest.fps;

    CodecTrainConfig tc;
    tc.steps = cfg.codec.steps;
    tc.batch = cfg.codec.batch;
    tc.window = cfg.codec.window;
    tc.lr = cfg.codec.lr;
    tc.lr_min = cfg.codec.lr_min;
    tc.warmup = cfg.codec.warmup;
    tc.seed = cfg.seed;

    CodecTrainResult r = train_rvqvae(frames, cc, tc);
    fs::create_directories(g.out_dir);
    {
        std::FILE* f = std::fopen((g.out_dir + "/train_rvq_log.txt").c_str(), "wb");
        if (f == nullptr) throw io_error("cannot write training log");
        for (const TrainLogEntry& e : r.log) {
            std::fprintf(f, "step=%d loss=%.6f l1=%.6f\n", e.step, e.loss, e.recon_l1);
        }
        std::fclose(f);
    }
    const fs::path parent = fs::path(cfg.codec_ckpt).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    Checkpoint ck = codec_to_checkpoint(r.params, cfg.seed);
    ck.save(cfg.codec_ckpt);
    write_run_record(g, cfg, "train-rvq");
    std::fprintf(stdout, "codec trained: final loss %.6f, checkpoint %s\n", r.log.back().loss,
                 cfg.codec_ckpt.c_str());
    return 0;
}

int cmd_train_masked(const GlobalArgs& g) {
    RunConfig cfg = load_config(g);
    Corpus corpus = load_corpus(cfg.corpus_dir);
    Checkpoint cck = Checkpoint::load(cfg.codec_ckpt);
    CodecParams codec = codec_from_checkpoint(cck);

    std::vector<TokenizedSample> data;
    tokenize_corpus(codec, corpus, corpus.train_idx, &data, nullptr);
    MformerTrainResult r =
        train_mformer(data, codec.cfg.codebook_size,
                      static_cast<int>(corpus.manifest.classes.size()), cfg.mformer, cfg.seed);
    fs::create_directories(g.out_dir);
    {
        std::FILE* f = std::fopen((g.out_dir + "/train_masked_log.txt").c_str(), "wb");
        if (f == nullptr) throw io_error("cannot write training log");
        for (const TrainLogEntry& e : r.log) {
            std::fprintf(f, "step=%d loss=%.6f masked_acc=%.4f\n", e.step, e.loss, e.recon_l1);
        }
        std::fclose(f);
    }
    const fs::path parent = fs::path(cfg.mformer_ckpt).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    Checkpoint ck =
        mformer_to_checkpoint(r.params, cfg.mformer, corpus.manifest.classes, cfg.seed);
    ck.save(cfg.mformer_ckpt);
    write_run_record(g, cfg, "train-masked");
    std::fprintf(stdout, "masked transformer trained: final loss %.6f, checkpoint %s\n",
                 r.log.back().loss, cfg.mformer_ckpt.c_str());
    return 0;
}

int cmd_train_residual(const GlobalArgs& g) {
    RunConfig cfg = load_config(g);
    Corpus corpus = load_corpus(cfg.corpus_dir);
    Checkpoint cck = Checkpoint::load(cfg.codec_ckpt);
    CodecParams codec = codec_from_checkpoint(cck);

    std::vector<StackedSample> data;
    tokenize_corpus(codec, corpus, corpus.train_idx, nullptr, &data);
    RformerTrainResult r = train_rformer(data, codec.cfg.codebook_size, codec.cfg.num_layers,
                                         static_cast<int>(corpus.manifest.classes.size()),
                                         cfg.rformer, cfg.seed);
    fs::create_directories(g.out_dir);
    {
        std::FILE* f = std::fopen((g.out_dir + "/train_residual_log.txt").c_str(), "wb");
        if (f == nullptr) throw io_error("cannot write training log");
        for (const TrainLogEntry& e : r.log) {
            std::fprintf(f, "step=%d loss=%.6f acc=%.4f\n", e.step, e.loss, e.recon_l1);
        }
        std::fclose(f);
    }
    const fs::path parent = fs::path(cfg.rformer_ckpt).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    Checkpoint ck =
        rformer_to_checkpoint(r.params, cfg.rformer, corpus.manifest.classes, cfg.seed);
    ck.save(cfg.rformer_ckpt);
    write_run_record(g, cfg, "train-residual");
    std::fprintf(stdout, "residual transformer trained: final loss %.6f, checkpoint %s\n",
                 r.log.back().loss, cfg.rformer_ckpt.c_str());
    return 0;
}

int cmd_generate(const GlobalArgs& g, const std::string& label, int frames,
                 const std::string& mode) {
    RunConfig cfg = load_config(g);
    Checkpoint cck = Checkpoint::load(cfg.codec_ckpt);
    CodecParams codec = codec_from_checkpoint(cck);
    Checkpoint mck = Checkpoint::load(cfg.mformer_ckpt);
    std::vector<std::string> labels;
    MTransformerParams mparams = mformer_from_checkpoint(mck, &labels);
    Checkpoint rck = Checkpoint::load(cfg.rformer_ckpt);
    RTransformerParams rparams = rformer_from_checkpoint(rck);

    const int label_id = label_id_from(labels, label);
    GuidanceConfig guidance = GuidanceConfig::from(cfg.engine);
    ResidualMode rmode = mode == "sample" ? ResidualMode::kSample : ResidualMode::kGreedy;

    Rng rng = Rng(cfg.seed).stream("cli.generate");
    DecodeTrace trace;
    Motion m = generate(Condition::label(label_id), frames, codec, mparams, rparams,
                        cfg.engine.iterations, guidance, rng, &trace, rmode);
    fs::create_directories(g.out_dir);
    write_motion(g.out_dir + "/motion.txt", m);
    trace.write(g.out_dir + "/trace.txt");
    write_run_record(g, cfg, "generate");
    std::fprintf(stdout, "generated %d frames for '%s' into %s\n", m.num_frames(), label.c_str(),
                 g.out_dir.c_str());
    return 0;
}

int cmd_inpaint(const GlobalArgs& g, const std::string& ref_path, const std::string& label,
                const std::string& ranges_text, const std::string& mode) {
    RunConfig cfg = load_config(g);
    Checkpoint cck = Checkpoint::load(cfg.codec_ckpt);
    CodecParams codec = codec_from_checkpoint(cck);
    Checkpoint mck = Checkpoint::load(cfg.mformer_ckpt);
    std::vector<std::string> labels;
    MTransformerParams mparams = mformer_from_checkpoint(mck, &labels);
    Checkpoint rck = Checkpoint::load(cfg.rformer_ckpt);
    RTransformerParams rparams = rformer_from_checkpoint(rck);

    Motion reference = read_motion(ref_path);
    InpaintSpec spec;
    spec.reference_frames = reference.frames;
    spec.fps = reference.fps;
    spec.ranges = parse_ranges(ranges_text);

    const int label_id = label_id_from(labels, label);
    GuidanceConfig guidance = GuidanceConfig::from(cfg.engine);
    ResidualMode rmode = mode == "sample" ? ResidualMode::kSample : ResidualMode::kGreedy;

    Rng rng = Rng(cfg.seed).stream("cli.inpaint");
    DecodeTrace trace;
    Motion m = inpaint(spec, Condition::label(label_id), codec, mparams, rparams,
                       cfg.engine.iterations, guidance, rng, &trace, rmode);
    fs::create_directories(g.out_dir);
    write_motion(g.out_dir + "/motion.txt", m);
    trace.write(g.out_dir + "/trace.txt");
    write_run_record(g, cfg, "inpaint");
    std::fprintf(stdout, "inpainted %d frames into %s\n", m.num_frames(), g.out_dir.c_str());
    return 0;
}

int cmd_eval_recon(const GlobalArgs& g, const std::string& layers_text) {
    RunConfig cfg = load_config(g);
    Corpus corpus = load_corpus(cfg.corpus_dir);
    Checkpoint cck = Checkpoint::load(cfg.codec_ckpt);
    CodecParams codec = codec_from_checkpoint(cck);

    std::vector<Array> test = split_frames(corpus, corpus.test_idx);
    std::vector<int> sweep = parse_layer_sweep(layers_text, codec.cfg.num_layers);
    ReconReport report =
        eval_reconstruction(codec, test, sweep, eval_thread_cap(cfg.threads));
    fs::create_directories(g.out_dir);
    write_recon_report(report, g.out_dir + "/eval_recon.txt");
    write_run_record(g, cfg, "eval-recon");
    for (const ReconLayerRow& row : report.rows) {
        std::fprintf(stdout, "layers=%d l1=%.6f mpjpe=%.6f\n", row.layers_used, row.l1,
                     row.mpjpe);
    }
    return 0;
}

int cmd_eval_gen(const GlobalArgs& g, int samples, int sweep_samples) {
    RunConfig cfg = load_config(g);
    Corpus corpus = load_corpus(cfg.corpus_dir);
    Checkpoint cck = Checkpoint::load(cfg.codec_ckpt);
    CodecParams codec = codec_from_checkpoint(cck);
    Checkpoint mck = Checkpoint::load(cfg.mformer_ckpt);
    std::vector<std::string> labels;
    MTransformerParams mparams = mformer_from_checkpoint(mck, &labels);
    Checkpoint rck = Checkpoint::load(cfg.rformer_ckpt);
    RTransformerParams rparams = rformer_from_checkpoint(rck);
    OracleParams oracle = load_or_train_oracle(cfg, corpus);

    GuidanceConfig guidance = GuidanceConfig::from(cfg.engine);
    GenReport report = eval_generation(
        codec, mparams, rparams, oracle, static_cast<int>(labels.size()), samples,
        /*frames=*/64, cfg.engine.iterations, guidance, cfg.seed,
        {0.0f, 2.0f, 4.0f, 6.0f, 8.0f}, sweep_samples, eval_thread_cap(cfg.threads));
    fs::create_directories(g.out_dir);
    write_gen_report(report, labels, g.out_dir + "/eval_gen.txt");
    write_run_record(g, cfg, "eval-gen");
    std::fprintf(stdout, "overall=%.4f base_only=%.4f\n", report.overall, report.base_only);
    return 0;
}

int cmd_inspect(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    std::fprintf(stdout, "checkpoint %s (version %u)\n", path.c_str(), Checkpoint::kVersion);
    std::fprintf(stdout, "config:\n");
    for (const auto& [k, v] : ck.config) {
        std::fprintf(stdout, "  %s = %s\n", k.c_str(), v.c_str());
    }
    std::fprintf(stdout, "seeds:\n");
    for (const auto& [name, value] : ck.seeds) {
        std::fprintf(stdout, "  %s = %llu\n", name.c_str(),
                     static_cast<unsigned long long>(value));
    }
    std::fprintf(stdout, "arrays:\n");
    size_t total = 0;
    for (const auto& [name, a] : ck.arrays) {
        std::fprintf(stdout, "  %-40s %s\n", name.c_str(), a.shape_string().c_str());
        total += a.numel();
    }
    std::fprintf(stdout, "total parameters: %zu\n", total);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"masked motion token modeling at desk scale"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--config", g.config_path, "flat key=value config file");
    app.add_option("--seed", g.seed_override, "override run.seed");
    app.add_option("--out", g.out_dir, "output directory (default: out)");

    auto* gen_corpus = app.add_subcommand("gen-corpus", "write the synthetic motion corpus");

    auto* train_rvq = app.add_subcommand("train-rvq", "train the residual VQ-VAE codec");
    auto* train_masked =
        app.add_subcommand("train-masked", "train the masked transformer on base tokens");
    auto* train_residual =
        app.add_subcommand("train-residual", "train the residual transformer");

    std::string gen_label = "walk";
    int gen_frames = 64;
    std::string gen_mode = "greedy";
    auto* generate_cmd = app.add_subcommand("generate", "generate a motion from a label");
    generate_cmd->add_option("--label", gen_label, "condition label name")->required();
    generate_cmd->add_option("--frames", gen_frames, "target frame count")->required();
    generate_cmd->add_option("--mode", gen_mode, "residual decoding: greedy|sample")
        ->check(CLI::IsMember({"greedy", "sample"}));

    std::string inp_ref, inp_label = "walk", inp_ranges;
    std::string inp_mode = "greedy";
    auto* inpaint_cmd = app.add_subcommand("inpaint", "regenerate token ranges of a motion");
    inpaint_cmd->add_option("--ref", inp_ref, "reference motion file")->required();
    inpaint_cmd->add_option("--label", inp_label, "condition label name")->required();
    inpaint_cmd->add_option("--ranges", inp_ranges,
                            "latent-token edit ranges, e.g. 3..6,9..12");
    inpaint_cmd->add_option("--mode", inp_mode, "residual decoding: greedy|sample")
        ->check(CLI::IsMember({"greedy", "sample"}));

    std::string recon_layers = "1..6";
    auto* eval_recon_cmd =
        app.add_subcommand("eval-recon", "reconstruction error per layers_used");
    eval_recon_cmd->add_option("--layers", recon_layers, "sweep, e.g. 1..6 or 1,3,6");

    int gen_samples = 25, sweep_samples = 8;
    auto* eval_gen_cmd = app.add_subcommand("eval-gen", "oracle accuracy of generations");
    eval_gen_cmd->add_option("--samples", gen_samples, "generations per label");
    eval_gen_cmd->add_option("--sweep-samples", sweep_samples,
                             "generations per label per guidance scale");

    std::string inspect_path;
    auto* inspect_cmd = app.add_subcommand("inspect-ckpt", "describe a checkpoint container");
    inspect_cmd->add_option("path", inspect_path, "checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        if (gen_corpus->parsed()) return cmd_gen_corpus(g);
        if (train_rvq->parsed()) return cmd_train_rvq(g);
        if (train_masked->parsed()) return cmd_train_masked(g);
        if (train_residual->parsed()) return cmd_train_residual(g);
        if (generate_cmd->parsed()) return cmd_generate(g, gen_label, gen_frames, gen_mode);
        if (inpaint_cmd->parsed()) return cmd_inpaint(g, inp_ref, inp_label, inp_ranges, inp_mode);
        if (eval_recon_cmd->parsed()) return cmd_eval_recon(g, recon_layers);
        if (eval_gen_cmd->parsed()) return cmd_eval_gen(g, gen_samples, sweep_samples);
        if (inspect_cmd->parsed()) return cmd_inspect(inspect_path);
    } catch (const config_error& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 3;
    }
    return 2;
}

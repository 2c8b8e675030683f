#pragma once

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "mogen/codec.hpp"
#include "mogen/corpus.hpp"
#include "mogen/engine.hpp"

namespace mogen {

// Worker cap for read-only evaluation fan-out. MOMASK_LAB_THREADS, when set,
// bounds whatever the config requested; `requested` 0 means auto.
inline int eval_thread_cap(int requested) {
    int cap = requested > 0 ? requested
                            : static_cast<int>(std::thread::hardware_concurrency());
    if (cap < 1) cap = 1;
    if (const char* env = std::getenv("MOMASK_LAB_THREADS")) {
        try {
            int env_cap = std::stoi(env);
            if (env_cap >= 1 && env_cap < cap) cap = env_cap;
        } catch (const std::exception&) {
            throw config_error("MOMASK_LAB_THREADS is not an integer");
        }
    }
    return cap;
}

// Index-parallel map with deterministic result placement: every task writes
// its own slot, so the outcome is independent of scheduling.
template <typename F>
void parallel_for(int n, int threads, F&& task) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) task(i);
        return;
    }
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n) return;
            task(i);
        }
    };
    std::vector<std::thread> pool;
    const int count = std::min(threads, n);
    pool.reserve(static_cast<size_t>(count));
    for (int t = 0; t < count; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
}

// ------------------------------------------------------------ reconstruction

struct ReconLayerRow {
    int layers_used;
    double l1;
    double mpjpe;
};

struct CodebookUsageRow {
    int layer;
    double used_fraction;
    double perplexity;
};

struct ReconReport {
    std::vector<ReconLayerRow> rows;
    std::vector<CodebookUsageRow> usage;
};

// Per-layer mean reconstruction error over a held-out split plus codebook
// usage statistics measured on the same pass.
inline ReconReport eval_reconstruction(CodecParams& codec, const std::vector<Array>& motions,
                                       const std::vector<int>& layer_sweep, int threads = 1) {
    if (motions.empty()) throw config_error("eval_reconstruction: empty split");
    ReconReport report;

    const int num_layers = codec.rvq.num_layers();
    std::vector<std::vector<int64_t>> counts(static_cast<size_t>(num_layers));
    for (int v = 0; v < num_layers; ++v) {
        counts[static_cast<size_t>(v)].assign(
            static_cast<size_t>(codec.rvq.layers[static_cast<size_t>(v)].size()), 0);
    }
    std::vector<TokenStack> stacks(motions.size());
    parallel_for(static_cast<int>(motions.size()), threads, [&](int i) {
        stacks[static_cast<size_t>(i)] = tokenize(motions[static_cast<size_t>(i)], codec);
    });
    for (const TokenStack& s : stacks) {
        for (int v = 0; v < num_layers; ++v) {
            for (int id : s.rows[static_cast<size_t>(v)]) {
                counts[static_cast<size_t>(v)][static_cast<size_t>(id)]++;
            }
        }
    }
    for (int v = 0; v < num_layers; ++v) {
        const auto& cnt = counts[static_cast<size_t>(v)];
        int64_t total = 0;
        int used = 0;
        for (int64_t c : cnt) {
            total += c;
            used += c > 0 ? 1 : 0;
        }
        double entropy = 0.0;
        for (int64_t c : cnt) {
            if (c == 0) continue;
            const double p = static_cast<double>(c) / static_cast<double>(total);
            entropy -= p * std::log(p);
        }
        report.usage.push_back({v, static_cast<double>(used) / static_cast<double>(cnt.size()),
                                std::exp(entropy)});
    }

    for (int layers_used : layer_sweep) {
        std::vector<double> l1(motions.size()), mp(motions.size());
        parallel_for(static_cast<int>(motions.size()), threads, [&](int i) {
            l1[static_cast<size_t>(i)] =
                reconstruction_l1(motions[static_cast<size_t>(i)], codec, layers_used);
            mp[static_cast<size_t>(i)] =
                reconstruction_mpjpe(motions[static_cast<size_t>(i)], codec, layers_used);
        });
        double l1_sum = 0.0, mp_sum = 0.0;
        for (size_t i = 0; i < motions.size(); ++i) {
            l1_sum += l1[i];
            mp_sum += mp[i];
        }
        report.rows.push_back({layers_used, l1_sum / static_cast<double>(motions.size()),
                               mp_sum / static_cast<double>(motions.size())});
    }
    return report;
}

inline void write_recon_report(const ReconReport& r, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (f == nullptr) throw io_error("cannot write report '" + path + "'");
    for (const ReconLayerRow& row : r.rows) {
        std::fprintf(f, "layers=%d l1=%.6f mpjpe=%.6f\n", row.layers_used, row.l1, row.mpjpe);
    }
    for (const CodebookUsageRow& row : r.usage) {
        std::fprintf(f, "usage layer=%d used_frac=%.4f perplexity=%.3f\n", row.layer,
                     row.used_fraction, row.perplexity);
    }
    std::fclose(f);
}

// ------------------------------------------------------------ generation

struct GenLabelRow {
    int label;
    double accuracy;
};

struct CfgSweepRow {
    float scale;
    double accuracy;
};

struct GenReport {
    std::vector<GenLabelRow> per_label;
    double overall = 0.0;
    double base_only = 0.0;
    std::vector<CfgSweepRow> sweep;
    std::vector<DecodeTraceEntry> sample_trace;  // trace of the first generation
};

// Oracle label-accuracy of generated motions: per label, full stack vs
// base-only decoding, plus a guidance-scale sweep on a smaller budget.
inline GenReport eval_generation(CodecParams& codec, MTransformerParams& mparams,
                                 RTransformerParams& rparams, OracleParams& oracle,
                                 int num_labels, int samples_per_label, int frames,
                                 int iterations, const GuidanceConfig& guidance, uint64_t seed,
                                 const std::vector<float>& sweep_scales, int sweep_samples,
                                 int threads = 1) {
    if (samples_per_label < 1) throw config_error("eval_generation: need at least one sample");
    GenReport report;

    struct Task {
        int label;
        int sample;
    };
    std::vector<Task> tasks;
    for (int label = 0; label < num_labels; ++label) {
        for (int s = 0; s < samples_per_label; ++s) tasks.push_back({label, s});
    }

    // full stack
    std::vector<int> hits(tasks.size(), 0);
    std::vector<DecodeTrace> traces(tasks.size());
    parallel_for(static_cast<int>(tasks.size()), threads, [&](int i) {
        const Task& t = tasks[static_cast<size_t>(i)];
        Rng rng = Rng(seed).stream("gen." + std::to_string(t.label) + "." +
                                   std::to_string(t.sample));
        DecodeTrace trace;
        Motion m = generate(Condition::label(t.label), frames, codec, mparams, rparams,
                            iterations, guidance, rng, &trace);
        hits[static_cast<size_t>(i)] = oracle_classify(m.frames, oracle) == t.label ? 1 : 0;
        if (i == 0) traces[0] = std::move(trace);
    });
    int total_hits = 0;
    for (int label = 0; label < num_labels; ++label) {
        int label_hits = 0;
        for (size_t i = 0; i < tasks.size(); ++i) {
            if (tasks[i].label == label) label_hits += hits[i];
        }
        report.per_label.push_back(
            {label, static_cast<double>(label_hits) / samples_per_label});
        total_hits += label_hits;
    }
    report.overall = static_cast<double>(total_hits) / static_cast<double>(tasks.size());
    report.sample_trace = traces[0].entries;

    // base-only: decode the base layer, decode frames from it alone
    std::vector<int> base_hits(tasks.size(), 0);
    parallel_for(static_cast<int>(tasks.size()), threads, [&](int i) {
        const Task& t = tasks[static_cast<size_t>(i)];
        Rng rng = Rng(seed).stream("gen." + std::to_string(t.label) + "." +
                                   std::to_string(t.sample));
        const int n = (frames + kDownscale - 1) / kDownscale;
        DecodeState state = DecodeState::all_masked(n, mparams.mask_id());
        Rng decode_rng = rng.stream("decode");
        decode_base(state, Condition::label(t.label), mparams, iterations, guidance, decode_rng);
        TokenStack stack;
        stack.n = n;
        stack.rows.push_back(state.row);
        Motion m = detokenize(stack, codec, 1);
        if (m.num_frames() > frames) {
            Array trimmed({frames, m.feature_dim()});
            std::copy(m.frames.data(), m.frames.data() + trimmed.numel(), trimmed.data());
            m.frames = std::move(trimmed);
        }
        base_hits[static_cast<size_t>(i)] = oracle_classify(m.frames, oracle) == t.label ? 1 : 0;
    });
    int base_total = 0;
    for (int h : base_hits) base_total += h;
    report.base_only = static_cast<double>(base_total) / static_cast<double>(tasks.size());

    // guidance sweep at a reduced sample budget
    for (float s : sweep_scales) {
        GuidanceConfig g = guidance;
        g.s_masked = s;
        std::vector<Task> sweep_tasks;
        for (int label = 0; label < num_labels; ++label) {
            for (int k = 0; k < sweep_samples; ++k) sweep_tasks.push_back({label, k});
        }
        std::vector<int> shits(sweep_tasks.size(), 0);
        parallel_for(static_cast<int>(sweep_tasks.size()), threads, [&](int i) {
            const Task& t = sweep_tasks[static_cast<size_t>(i)];
            Rng rng = Rng(seed).stream("sweep." + std::to_string(t.label) + "." +
                                       std::to_string(t.sample));
            Motion m = generate(Condition::label(t.label), frames, codec, mparams, rparams,
                                iterations, g, rng);
            shits[static_cast<size_t>(i)] = oracle_classify(m.frames, oracle) == t.label ? 1 : 0;
        });
        int sh = 0;
        for (int h : shits) sh += h;
        report.sweep.push_back(
            {s, static_cast<double>(sh) / static_cast<double>(sweep_tasks.size())});
    }
    return report;
}

inline void write_gen_report(const GenReport& r, const std::vector<std::string>& labels,
                             const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (f == nullptr) throw io_error("cannot write report '" + path + "'");
    for (const GenLabelRow& row : r.per_label) {
        std::fprintf(f, "label=%s acc=%.4f\n",
                     labels[static_cast<size_t>(row.label)].c_str(), row.accuracy);
    }
    std::fprintf(f, "overall=%.4f\n", r.overall);
    std::fprintf(f, "base_only=%.4f\n", r.base_only);
    for (const CfgSweepRow& row : r.sweep) {
        std::fprintf(f, "cfg s=%.9g acc=%.4f\n", static_cast<double>(row.scale), row.accuracy);
    }
    for (const DecodeTraceEntry& e : r.sample_trace) {
        std::fprintf(f, "trace iter=%d masked=%d locked=%d mean_conf=%.9g\n", e.iter, e.masked,
                     e.locked, e.mean_conf);
    }
    std::fclose(f);
}

}  // namespace mogen

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mogen/codec.hpp"
#include "mogen/config.hpp"
#include "mogen/errors.hpp"
#include "mogen/layers.hpp"
#include "mogen/rng.hpp"

namespace mogen {

// Synthetic stand-in for a motion-capture corpus: 16 joints x 3 features,
// root as absolute xz-velocity plus height, 15 local joint offsets.
constexpr int kCorpusFeatureDim = 48;
constexpr int kNumJoints = 15;  // non-root joints

// Joint indices in the local block.
enum JointId {
    kSpineLo = 0, kSpineHi, kHead,
    kLSho, kLElb, kLWri,
    kRSho, kRElb, kRWri,
    kLHip, kLKnee, kLAnkle,
    kRHip, kRKnee, kRAnkle
};

inline const float* rest_pose() {
    // x, y, z per joint
    static const float rest[kNumJoints * 3] = {
        0.00f, 0.20f, 0.0f,   // spine_lo
        0.00f, 0.45f, 0.0f,   // spine_hi
        0.00f, 0.70f, 0.0f,   // head
        0.20f, 0.50f, 0.0f,   // l_sho
        0.25f, 0.25f, 0.0f,   // l_elb
        0.25f, 0.00f, 0.0f,   // l_wri
        -0.20f, 0.50f, 0.0f,  // r_sho
        -0.25f, 0.25f, 0.0f,  // r_elb
        -0.25f, 0.00f, 0.0f,  // r_wri
        0.10f, -0.05f, 0.0f,  // l_hip
        0.10f, -0.45f, 0.0f,  // l_knee
        0.10f, -0.85f, 0.0f,  // l_ankle
        -0.10f, -0.05f, 0.0f, // r_hip
        -0.10f, -0.45f, 0.0f, // r_knee
        -0.10f, -0.85f, 0.0f  // r_ankle
    };
    return rest;
}

// Per-class generator profile: base frequency, amplitudes per joint group,
// root velocity and height behavior.
struct MotionClass {
    std::string name;
    float freq;       // Hz
    float leg_amp;
    float arm_amp;
    float torso_amp;
    float root_vx;    // lateral velocity
    float root_vz;    // forward velocity
    float height;     // base root height
    float height_amp;
};

inline const std::vector<MotionClass>& builtin_classes() {
    static const std::vector<MotionClass> classes = {
        {"walk", 1.0f, 0.30f, 0.20f, 0.02f, 0.0f, 1.0f, 0.90f, 0.02f},
        {"run", 1.9f, 0.55f, 0.45f, 0.04f, 0.0f, 2.4f, 0.92f, 0.05f},
        {"jump", 0.8f, 0.25f, 0.35f, 0.03f, 0.0f, 0.3f, 0.85f, 0.45f},
        {"wave", 1.6f, 0.03f, 0.25f, 0.02f, 0.0f, 0.0f, 0.90f, 0.01f},
        {"turn-left", 1.1f, 0.20f, 0.15f, 0.10f, -0.9f, 0.4f, 0.90f, 0.02f},
        {"turn-right", 1.1f, 0.20f, 0.15f, 0.10f, 0.9f, 0.4f, 0.90f, 0.02f},
        {"crouch", 0.5f, 0.15f, 0.20f, 0.05f, 0.0f, 0.0f, 0.90f, 0.35f},
        {"kick", 1.3f, 0.70f, 0.10f, 0.03f, 0.0f, 0.15f, 0.90f, 0.02f},
    };
    return classes;
}

inline const MotionClass& find_class(const std::string& name) {
    for (const MotionClass& c : builtin_classes()) {
        if (c.name == name) return c;
    }
    throw config_error("unknown motion class '" + name + "'");
}

// At least two caption templates per class; <verb-phrase> realized per class.
inline const std::vector<std::string>& caption_templates(const std::string& cls) {
    static const std::map<std::string, std::vector<std::string>> table = {
        {"walk", {"a person walks forward", "someone is walking at a steady pace"}},
        {"run", {"a person runs forward quickly", "someone is running"}},
        {"jump", {"a person jumps up repeatedly", "someone is jumping in place"}},
        {"wave", {"a person waves with the right hand", "someone stands and waves"}},
        {"turn-left", {"a person turns to the left while stepping", "someone veers left"}},
        {"turn-right", {"a person turns to the right while stepping", "someone veers right"}},
        {"crouch", {"a person crouches down low", "someone squats down and rises"}},
        {"kick", {"a person kicks with the right leg", "someone performs repeated kicks"}},
    };
    auto it = table.find(cls);
    if (it != table.end()) return it->second;
    static std::map<std::string, std::vector<std::string>> fallback;
    auto fit = fallback.find(cls);
    if (fit == fallback.end()) {
        fit = fallback.emplace(cls, std::vector<std::string>{"a person does the " + cls + " motion",
                                                             "someone performs a " + cls}).first;
    }
    return fit->second;
}

// Deterministic synthesis of one motion: class-specific sinusoid and ramp
// compositions plus Gaussian noise, all drawn from the supplied stream.
// Joint groups jitter independently (amplitude and phase) so the latent
// manifold is far richer than any single codebook. jump, crouch and kick are
// single events at a random position inside the clip; gait classes and wave
// are periodic.
inline Motion synth_motion(const MotionClass& cls, int length, double noise, int fps, Rng& rng) {
    if (length < 1) throw domain_error("synth_motion: length must be >= 1");
    // per-sample jitters, fixed draw order
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    const double freq = cls.freq * rng.uniform(0.8, 1.25);
    const double vel = rng.uniform(0.7, 1.3);
    const double leg = cls.leg_amp * rng.uniform(0.6, 1.4);
    const double arm = cls.arm_amp * rng.uniform(0.6, 1.4);
    const double torso = cls.torso_amp * rng.uniform(0.6, 1.4);
    const double hamp = cls.height_amp * rng.uniform(0.7, 1.3);
    const double arm_phase = phase + rng.uniform(-0.6, 0.6);
    const double height_phase = phase + rng.uniform(-0.4, 0.4);
    const double event_center = rng.uniform(0.3, 0.7) * length;
    const double event_width = rng.uniform(0.35, 0.6) * fps;  // frames
    // fine motion texture: two independent oscillators whose continuous
    // phases, frequencies and amplitudes must be carried per latent
    // position - the material the deeper quantization layers exist for
    const double tex_amp = rng.uniform(0.06, 0.14);
    const double tex_freq = rng.uniform(1.5, 4.0);
    const double tex_phase = rng.uniform(0.0, 2.0 * M_PI);
    const double tex2_amp = rng.uniform(0.05, 0.12);
    const double tex2_freq = rng.uniform(1.0, 3.0);
    const double tex2_phase = rng.uniform(0.0, 2.0 * M_PI);
    // idiosyncratic drift: slow independent harmonics per joint group. Easy
    // for the autoencoder (low frequency) but far too high-dimensional for
    // one codebook, so base-layer quantization is genuinely lossy.
    constexpr int kDriftGroups = 6;
    constexpr int kDriftHarmonics = 2;
    double drift_a[kDriftGroups][kDriftHarmonics];
    double drift_f[kDriftGroups][kDriftHarmonics];
    double drift_p[kDriftGroups][kDriftHarmonics];
    for (int g = 0; g < kDriftGroups; ++g) {
        for (int k = 0; k < kDriftHarmonics; ++k) {
            drift_a[g][k] = rng.uniform(0.05, 0.15);
            drift_f[g][k] = rng.uniform(0.2, 1.2);
            drift_p[g][k] = rng.uniform(0.0, 2.0 * M_PI);
        }
    }
    // wander: bandlimited multi-harmonic meanders with large amplitude on a
    // few channels each; per-position entropy well beyond one codebook
    constexpr int kWanderStreams = 4;
    constexpr int kWanderHarmonics = 3;
    double wander_a[kWanderStreams][kWanderHarmonics];
    double wander_f[kWanderStreams][kWanderHarmonics];
    double wander_p[kWanderStreams][kWanderHarmonics];
    for (int g = 0; g < kWanderStreams; ++g) {
        const double scale = rng.uniform(0.15, 0.30);
        for (int k = 0; k < kWanderHarmonics; ++k) {
            wander_a[g][k] = scale / (1.0 + k);
            wander_f[g][k] = rng.uniform(0.15, 1.8);
            wander_p[g][k] = rng.uniform(0.0, 2.0 * M_PI);
        }
    }
    const double omega = 2.0 * M_PI * freq;

    Motion m;
    m.fps = fps;
    m.frames = Array({length, kCorpusFeatureDim});
    for (int t = 0; t < length; ++t) {
        const double sec = static_cast<double>(t) / fps;
        const double s = std::sin(omega * sec + phase);
        const double sa = std::sin(omega * sec + arm_phase);
        const double sh2 = std::sin(2.0 * (omega * sec + height_phase));
        float* row = m.frames.data() + static_cast<size_t>(t) * kCorpusFeatureDim;
        auto joint = [&row](int j) { return row + 3 + j * 3; };
        for (int j = 0; j < kNumJoints; ++j) {
            joint(j)[0] = rest_pose()[j * 3 + 0];
            joint(j)[1] = rest_pose()[j * 3 + 1];
            joint(j)[2] = rest_pose()[j * 3 + 2];
        }
        double vx = cls.root_vx * vel;
        double vz = cls.root_vz * vel;
        double h = cls.height;

        const double ev = std::exp(-0.5 * ((t - event_center) / event_width) *
                                   ((t - event_center) / event_width));
        if (cls.name == "jump") {
            // one jump event: lift, tuck, arms up; small idle sway elsewhere
            h = cls.height + hamp * ev;
            joint(kLAnkle)[1] += static_cast<float>(0.30 * ev);
            joint(kRAnkle)[1] += static_cast<float>(0.30 * ev);
            joint(kLKnee)[1] += static_cast<float>(0.20 * ev);
            joint(kRKnee)[1] += static_cast<float>(0.20 * ev);
            joint(kLWri)[1] += static_cast<float>(arm * ev);
            joint(kRWri)[1] += static_cast<float>(arm * ev);
            joint(kLWri)[2] += static_cast<float>(0.05 * sa);
            joint(kRWri)[2] -= static_cast<float>(0.05 * sa);
        } else if (cls.name == "wave") {
            joint(kRWri)[1] += 0.55f;
            joint(kRWri)[0] += static_cast<float>(arm * sa);
            joint(kRElb)[1] += 0.30f;
            joint(kRElb)[0] += static_cast<float>(0.5 * arm * sa);
            joint(kLAnkle)[2] += static_cast<float>(leg * s);
            joint(kRAnkle)[2] -= static_cast<float>(leg * s);
            h = cls.height + hamp * sh2;
        } else if (cls.name == "crouch") {
            // one deep dip: height drop, knees and hips fold, arms forward
            h = cls.height - hamp * ev;
            joint(kLKnee)[1] += static_cast<float>(0.18 * ev);
            joint(kRKnee)[1] += static_cast<float>(0.18 * ev);
            joint(kLHip)[1] += static_cast<float>(0.10 * ev);
            joint(kRHip)[1] += static_cast<float>(0.10 * ev);
            joint(kLWri)[2] += static_cast<float>(arm * ev);
            joint(kRWri)[2] += static_cast<float>(arm * ev);
            joint(kSpineHi)[2] += static_cast<float>(torso * ev);
            joint(kLWri)[0] += static_cast<float>(0.04 * sa);
            joint(kRWri)[0] -= static_cast<float>(0.04 * sa);
        } else if (cls.name == "kick") {
            // one right-leg kick with a counter swing of the arms
            joint(kRAnkle)[2] += static_cast<float>(leg * ev);
            joint(kRAnkle)[1] += static_cast<float>(0.3 * leg * ev);
            joint(kRKnee)[2] += static_cast<float>(0.55 * leg * ev);
            joint(kLWri)[2] += static_cast<float>(0.4 * arm * ev);
            joint(kRWri)[2] -= static_cast<float>(0.4 * arm * ev);
            joint(kLAnkle)[2] += static_cast<float>(0.08 * s);
            h = cls.height + 0.5 * hamp * sh2;
        } else {
            // gait family: walk, run, turn-left, turn-right (and any custom class)
            joint(kLAnkle)[2] += static_cast<float>(leg * s);
            joint(kRAnkle)[2] -= static_cast<float>(leg * s);
            joint(kLKnee)[2] += static_cast<float>(0.5 * leg * s);
            joint(kRKnee)[2] -= static_cast<float>(0.5 * leg * s);
            joint(kLWri)[2] -= static_cast<float>(arm * sa);
            joint(kRWri)[2] += static_cast<float>(arm * sa);
            joint(kLElb)[2] -= static_cast<float>(0.6 * arm * sa);
            joint(kRElb)[2] += static_cast<float>(0.6 * arm * sa);
            joint(kSpineHi)[0] += static_cast<float>(torso * sh2);
            h = cls.height + hamp * sh2;
            if (cls.name == "turn-left") {
                joint(kSpineHi)[0] += -0.10f;
                joint(kHead)[0] += -0.14f;
            } else if (cls.name == "turn-right") {
                joint(kSpineHi)[0] += 0.10f;
                joint(kHead)[0] += 0.14f;
            }
        }
        const double tex = tex_amp * std::sin(2.0 * M_PI * tex_freq * sec + tex_phase);
        joint(kLWri)[2] += static_cast<float>(tex);
        joint(kRWri)[2] += static_cast<float>(tex);
        joint(kLElb)[2] += static_cast<float>(0.6 * tex);
        joint(kRElb)[2] += static_cast<float>(0.6 * tex);
        joint(kLAnkle)[2] += static_cast<float>(0.8 * tex);
        joint(kRAnkle)[2] += static_cast<float>(0.8 * tex);
        joint(kLKnee)[2] += static_cast<float>(0.4 * tex);
        joint(kRKnee)[2] += static_cast<float>(0.4 * tex);
        joint(kLSho)[2] += static_cast<float>(0.7 * tex);
        joint(kRSho)[2] += static_cast<float>(0.7 * tex);
        joint(kSpineLo)[2] += static_cast<float>(0.5 * tex);
        joint(kSpineHi)[2] += static_cast<float>(0.5 * tex);
        joint(kHead)[0] += static_cast<float>(0.5 * tex);
        h += 0.3 * tex;

        const double tex2 = tex2_amp * std::sin(2.0 * M_PI * tex2_freq * sec + tex2_phase);
        joint(kLKnee)[1] += static_cast<float>(0.5 * tex2);
        joint(kRKnee)[1] -= static_cast<float>(0.5 * tex2);
        joint(kLHip)[1] += static_cast<float>(0.4 * tex2);
        joint(kRHip)[1] -= static_cast<float>(0.4 * tex2);
        joint(kLAnkle)[1] += static_cast<float>(0.6 * tex2);
        joint(kRAnkle)[1] -= static_cast<float>(0.6 * tex2);
        joint(kSpineHi)[0] += static_cast<float>(0.4 * tex2);
        h += 0.4 * tex2;

        double drift[kDriftGroups];
        for (int g = 0; g < kDriftGroups; ++g) {
            double v = 0.0;
            for (int k = 0; k < kDriftHarmonics; ++k) {
                v += drift_a[g][k] * std::sin(2.0 * M_PI * drift_f[g][k] * sec + drift_p[g][k]);
            }
            drift[g] = v;
        }
        joint(kLSho)[2] += static_cast<float>(0.6 * drift[0]);
        joint(kLElb)[2] += static_cast<float>(0.8 * drift[0]);
        joint(kLWri)[2] += static_cast<float>(drift[0]);
        joint(kRSho)[2] += static_cast<float>(0.6 * drift[1]);
        joint(kRElb)[2] += static_cast<float>(0.8 * drift[1]);
        joint(kRWri)[2] += static_cast<float>(drift[1]);
        joint(kLKnee)[1] += static_cast<float>(0.5 * drift[2]);
        joint(kRKnee)[1] += static_cast<float>(0.5 * drift[2]);
        joint(kLAnkle)[1] += static_cast<float>(0.7 * drift[2]);
        joint(kRAnkle)[1] += static_cast<float>(0.7 * drift[2]);
        joint(kSpineLo)[0] += static_cast<float>(0.5 * drift[3]);
        joint(kSpineHi)[0] += static_cast<float>(0.8 * drift[3]);
        joint(kHead)[0] += static_cast<float>(drift[3]);
        joint(kLHip)[1] += static_cast<float>(0.6 * drift[4]);
        joint(kRHip)[1] += static_cast<float>(0.6 * drift[4]);
        h += 0.5 * drift[4];
        joint(kLWri)[0] += static_cast<float>(0.8 * drift[5]);
        joint(kRWri)[0] += static_cast<float>(0.8 * drift[5]);

        double wander[kWanderStreams];
        for (int g = 0; g < kWanderStreams; ++g) {
            double v = 0.0;
            for (int k = 0; k < kWanderHarmonics; ++k) {
                v += wander_a[g][k] *
                     std::sin(2.0 * M_PI * wander_f[g][k] * sec + wander_p[g][k]);
            }
            wander[g] = v;
        }
        joint(kLWri)[1] += static_cast<float>(wander[0]);
        joint(kRWri)[1] += static_cast<float>(0.9 * wander[0]);
        joint(kLAnkle)[0] += static_cast<float>(0.8 * wander[1]);
        joint(kRAnkle)[0] += static_cast<float>(0.8 * wander[1]);
        joint(kHead)[2] += static_cast<float>(0.7 * wander[2]);
        joint(kSpineLo)[1] += static_cast<float>(0.6 * wander[2]);
        joint(kLElb)[0] += static_cast<float>(0.9 * wander[3]);
        joint(kRElb)[0] += static_cast<float>(0.9 * wander[3]);

        row[0] = static_cast<float>(vx);
        row[1] = static_cast<float>(vz);
        row[2] = static_cast<float>(h);
        if (noise > 0.0) {
            for (int c = 0; c < kCorpusFeatureDim; ++c) {
                row[c] += static_cast<float>(noise * rng.normal());
            }
        }
    }
    return m;
}

// ----------------------------------------------------------------- manifest

struct CorpusManifest {
    std::vector<std::string> classes;
    int num_samples = 2000;
    int frames_min = 40;
    int frames_max = 64;
    int feature_dim = kCorpusFeatureDim;
    int fps = 20;
    double noise = 0.003;
    double train_ratio = 0.8;
    double test_ratio = 0.15;
    double val_ratio = 0.05;
    uint64_t seed = 0;

    static CorpusManifest from_config(const CorpusDefaults& c, uint64_t seed) {
        CorpusManifest m;
        m.classes = c.classes;
        m.num_samples = c.num_samples;
        m.frames_min = c.frames_min;
        m.frames_max = c.frames_max;
        m.fps = c.fps;
        m.noise = c.noise;
        m.train_ratio = c.train_ratio;
        m.test_ratio = c.test_ratio;
        m.val_ratio = c.val_ratio;
        m.seed = seed;
        return m;
    }

    std::map<std::string, std::string> to_map() const {
        std::map<std::string, std::string> kv;
        std::string cls;
        for (size_t i = 0; i < classes.size(); ++i) cls += (i ? "," : "") + classes[i];
        kv["corpus.classes"] = cls;
        kv["corpus.num_samples"] = std::to_string(num_samples);
        kv["corpus.frames_min"] = std::to_string(frames_min);
        kv["corpus.frames_max"] = std::to_string(frames_max);
        kv["corpus.feature_dim"] = std::to_string(feature_dim);
        kv["corpus.fps"] = std::to_string(fps);
        char buf[48];
        std::snprintf(buf, sizeof(buf), "%.9g", noise);
        kv["corpus.noise"] = buf;
        std::snprintf(buf, sizeof(buf), "%.9g", train_ratio);
        kv["corpus.train_ratio"] = buf;
        std::snprintf(buf, sizeof(buf), "%.9g", test_ratio);
        kv["corpus.test_ratio"] = buf;
        std::snprintf(buf, sizeof(buf), "%.9g", val_ratio);
        kv["corpus.val_ratio"] = buf;
        kv["corpus.seed"] = std::to_string(seed);
        return kv;
    }

    static CorpusManifest from_map(const std::map<std::string, std::string>& kv) {
        ConfigReader r(kv);
        CorpusManifest m;
        m.classes = r.get_list("corpus.classes", m.classes);
        m.num_samples = r.get_int("corpus.num_samples", m.num_samples);
        m.frames_min = r.get_int("corpus.frames_min", m.frames_min);
        m.frames_max = r.get_int("corpus.frames_max", m.frames_max);
        m.feature_dim = r.get_int("corpus.feature_dim", m.feature_dim);
        m.fps = r.get_int("corpus.fps", m.fps);
        m.noise = r.get_double("corpus.noise", m.noise);
        m.train_ratio = r.get_double("corpus.train_ratio", m.train_ratio);
        m.test_ratio = r.get_double("corpus.test_ratio", m.test_ratio);
        m.val_ratio = r.get_double("corpus.val_ratio", m.val_ratio);
        m.seed = r.get_u64("corpus.seed", m.seed);
        return m;
    }

    int label_of(const std::string& cls) const {
        for (size_t i = 0; i < classes.size(); ++i) {
            if (classes[i] == cls) return static_cast<int>(i);
        }
        throw config_error("class '" + cls + "' not in manifest");
    }
};

// ----------------------------------------------------------------- corpus

struct CorpusSample {
    std::string id;
    int label = 0;
    std::string caption;
};

struct Corpus {
    std::string dir;
    CorpusManifest manifest;
    std::vector<CorpusSample> samples;
    std::vector<int> train_idx, test_idx, val_idx;

    Motion load(int idx) const {
        return read_motion(dir + "/motions/" + samples[static_cast<size_t>(idx)].id + ".txt");
    }
};

// Writes the dataset: manifest echo, one motion file per sample, a caption
// sidecar (id <TAB> label_id <TAB> caption) and the three split lists.
// A pure function of the manifest: same seed, byte-identical files.
inline void build_corpus(const CorpusManifest& manifest, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir + "/motions");
    Rng root(manifest.seed);

    write_flat_config(out_dir + "/manifest.cfg", manifest.to_map());

    std::ofstream sidecar(out_dir + "/captions.tsv");
    if (!sidecar) throw io_error("cannot write captions sidecar in '" + out_dir + "'");

    const int num_classes = static_cast<int>(manifest.classes.size());
    for (int i = 0; i < manifest.num_samples; ++i) {
        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "m%05d", i);
        const std::string id = idbuf;
        Rng sample_rng = root.stream("sample." + id);
        const int label = i % num_classes;
        const MotionClass& cls = find_class(manifest.classes[static_cast<size_t>(label)]);
        const int length =
            manifest.frames_min + sample_rng.uniform_int(manifest.frames_max -
                                                         manifest.frames_min + 1);
        Motion m = synth_motion(cls, length, manifest.noise, manifest.fps, sample_rng);
        write_motion(out_dir + "/motions/" + id + ".txt", m);

        const auto& templates = caption_templates(cls.name);
        const std::string& caption =
            templates[static_cast<size_t>(sample_rng.uniform_int(static_cast<int>(templates.size())))];
        sidecar << id << '\t' << label << '\t' << caption << '\n';
    }
    sidecar.close();

    // deterministic split membership
    std::vector<int> order(static_cast<size_t>(manifest.num_samples));
    for (int i = 0; i < manifest.num_samples; ++i) order[static_cast<size_t>(i)] = i;
    Rng split_rng = root.stream("split");
    split_rng.shuffle(order);
    const int n_train = static_cast<int>(std::lround(manifest.train_ratio * manifest.num_samples));
    const int n_test = static_cast<int>(std::lround(manifest.test_ratio * manifest.num_samples));
    auto write_split = [&](const std::string& name, int begin, int end) {
        std::ofstream f(out_dir + "/" + name);
        if (!f) throw io_error("cannot write split list '" + name + "'");
        std::vector<int> ids(order.begin() + begin, order.begin() + end);
        std::sort(ids.begin(), ids.end());
        for (int i : ids) {
            char idbuf[16];
            std::snprintf(idbuf, sizeof(idbuf), "m%05d", i);
            f << idbuf << '\n';
        }
    };
    write_split("train.txt", 0, n_train);
    write_split("test.txt", n_train, n_train + n_test);
    write_split("val.txt", n_train + n_test, manifest.num_samples);
}

inline Corpus load_corpus(const std::string& dir) {
    Corpus c;
    c.dir = dir;
    c.manifest = CorpusManifest::from_map(parse_flat_config_file(dir + "/manifest.cfg"));

    std::ifstream sidecar(dir + "/captions.tsv");
    if (!sidecar) throw io_error("cannot open captions sidecar in '" + dir + "'");
    std::string line;
    std::map<std::string, int> index_of;
    while (std::getline(sidecar, line)) {
        if (line.empty()) continue;
        size_t t1 = line.find('\t');
        size_t t2 = line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos) {
            throw io_error("malformed caption line: '" + line + "'");
        }
        CorpusSample s;
        s.id = line.substr(0, t1);
        s.label = std::stoi(line.substr(t1 + 1, t2 - t1 - 1));
        s.caption = line.substr(t2 + 1);
        if (s.label < 0 || s.label >= static_cast<int>(c.manifest.classes.size())) {
            throw io_error("caption label " + std::to_string(s.label) + " outside manifest");
        }
        index_of[s.id] = static_cast<int>(c.samples.size());
        c.samples.push_back(std::move(s));
    }

    auto read_split = [&](const std::string& name, std::vector<int>& out) {
        std::ifstream f(dir + "/" + name);
        if (!f) throw io_error("cannot open split list '" + name + "'");
        std::string id;
        while (std::getline(f, id)) {
            if (id.empty()) continue;
            auto it = index_of.find(id);
            if (it == index_of.end()) throw io_error("split id '" + id + "' not in sidecar");
            out.push_back(it->second);
        }
    };
    read_split("train.txt", c.train_idx);
    read_split("test.txt", c.test_idx);
    read_split("val.txt", c.val_idx);
    return c;
}

// ----------------------------------------------------------------- oracle

// Small convolutional sequence classifier used only to score motions.
struct OracleParams {
    int num_labels = 8;
    int feature_dim = kCorpusFeatureDim;
    int width = 48;
    ConvLayer c1, c2, c3;
    Dense head;

    struct B {
        ConvLayer::B c1, c2, c3;
        Dense::B head;
    };

    static OracleParams create(int feature_dim, int width, int num_labels, Rng& rng) {
        Rng init = rng.stream("oracle.init");
        OracleParams p;
        p.num_labels = num_labels;
        p.feature_dim = feature_dim;
        p.width = width;
        p.c1 = ConvLayer::create(feature_dim, width, 5, 2, 2, init);
        p.c2 = ConvLayer::create(width, width, 3, 2, 1, init);
        p.c3 = ConvLayer::create(width, width, 3, 1, 1, init);
        p.head = Dense::create(width, num_labels, init);
        return p;
    }

    B bind(Tape& t, Binding* bind) {
        return B{c1.bind(t, bind, "oracle.c1"), c2.bind(t, bind, "oracle.c2"),
                 c3.bind(t, bind, "oracle.c3"), head.bind(t, bind, "oracle.head")};
    }

    template <typename F>
    void visit_params(F&& f) {
        c1.visit("oracle.c1", f);
        c2.visit("oracle.c2", f);
        c3.visit("oracle.c3", f);
        head.visit("oracle.head", f);
    }
};

// Logits [1 x num_labels] for a channel-major motion [D x T].
inline Var oracle_logits(const OracleParams::B& b, Tape& t, Var motion_cm) {
    Var x = relu(apply_conv(b.c1, motion_cm));
    x = relu(apply_conv(b.c2, x));
    x = relu(apply_conv(b.c3, x));
    const int tlen = t.val(x).dim(1);
    Array pool({tlen, 1});
    pool.fill(1.0f / static_cast<float>(tlen));
    Var pooled = transpose(matmul(x, t.constant(pool)));  // [1 x width]
    return apply_dense(b.head, pooled);
}

inline int oracle_classify(const Array& frames, OracleParams& params) {
    Tape t;
    auto b = params.bind(t, nullptr);
    Var logits = oracle_logits(b, t, transpose(t.constant(frames)));
    const Array& lv = t.val(logits);
    int best = 0;
    for (int i = 1; i < static_cast<int>(lv.numel()); ++i) {
        if (lv[static_cast<size_t>(i)] > lv[static_cast<size_t>(best)]) best = i;
    }
    return best;
}

struct OracleTrainResult {
    OracleParams params;
    double train_accuracy = 0.0;
    double heldout_accuracy = 0.0;
};

inline double oracle_accuracy(OracleParams& params, const std::vector<Array>& frames,
                              const std::vector<int>& labels) {
    int hits = 0;
    for (size_t i = 0; i < frames.size(); ++i) {
        if (oracle_classify(frames[i], params) == labels[i]) ++hits;
    }
    return frames.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(frames.size());
}

// Trains the scoring classifier; refuses to return one below 95% held-out
// accuracy since the generation criteria would then measure the oracle.
inline OracleTrainResult train_oracle(const std::vector<Array>& train_frames,
                                      const std::vector<int>& train_labels,
                                      const std::vector<Array>& heldout_frames,
                                      const std::vector<int>& heldout_labels, int num_labels,
                                      const OracleDims& dims, uint64_t seed) {
    if (train_frames.empty()) throw config_error("train_oracle: empty training set");
    Rng root(seed);
    Rng init = root.stream("oracle");
    Rng batch_rng = root.stream("oracle.batch");

    OracleTrainResult out;
    out.params = OracleParams::create(kCorpusFeatureDim, dims.width, num_labels, init);
    std::vector<NamedParam> named;
    out.params.visit_params([&](const std::string& n, Array& a) { named.push_back({n, &a}); });
    Adam opt;

    for (int step = 1; step <= dims.steps; ++step) {
        Tape tape;
        Binding binding;
        auto bound = out.params.bind(tape, &binding);
        std::vector<Var> losses;
        for (int i = 0; i < dims.batch; ++i) {
            const int pick = batch_rng.uniform_int(static_cast<int>(train_frames.size()));
            Var logits = oracle_logits(bound, tape,
                                       transpose(tape.constant(train_frames[static_cast<size_t>(pick)])));
            losses.push_back(masked_cross_entropy(logits, {train_labels[static_cast<size_t>(pick)]},
                                                  {1.0f}));
        }
        Var total = losses.front();
        for (size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
        Var loss = scale(total, 1.0f / static_cast<float>(losses.size()));
        if (!std::isfinite(tape.val(loss)[0])) {
            throw numeric_error("train_oracle: loss diverged at step " + std::to_string(step));
        }
        tape.backward(loss);
        opt.step(named, tape, binding, warmup_lr(dims.lr, step, dims.warmup));
    }

    out.train_accuracy = oracle_accuracy(out.params, train_frames, train_labels);
    out.heldout_accuracy = oracle_accuracy(out.params, heldout_frames, heldout_labels);
    if (out.heldout_accuracy < 0.95) {
        throw config_error("oracle classifier reached only " +
                           std::to_string(out.heldout_accuracy) +
                           " held-out accuracy; corpus or classifier config is off");
    }
    return out;
}

}  // namespace mogen

#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "mogen/engine.hpp"
#include "oracles.hpp"

using namespace mogen;

namespace {

// Untrained toy stack: decode contracts (schedules, locks, determinism) are
// independent of training.
struct ToyStack {
    CodecParams codec;
    MTransformerParams mparams;
    RTransformerParams rparams;

    static ToyStack make(uint64_t seed = 3) {
        CodecConfig cc;
        cc.feature_dim = 6;
        cc.latent_dim = 8;
        cc.width1 = 8;
        cc.width2 = 8;
        cc.codebook_size = 16;
        cc.num_layers = 3;
        MformerDims dims;
        dims.hidden = 8;
        dims.layers = 1;
        dims.heads = 2;
        dims.max_len = 16;
        Rng rng(seed);
        ToyStack t{CodecParams::create(cc, rng),
                   MTransformerParams::create(cc.codebook_size, 4, dims, rng),
                   RTransformerParams::create(cc.codebook_size, cc.num_layers, 4, dims, rng)};
        return t;
    }
};

}  // namespace

TEST_CASE("cfg algebra") {
    Array c({2, 2}, {2, 0, 1, -1});
    Array u({2, 2}, {1, 0, 3, -2});

    // s=0 keeps the conditional logits
    CHECK(max_abs_diff(cfg_logits(c, u, 0.0f), c) == 0.0);

    // equal operands are a fixed point for any s
    CHECK(max_abs_diff(cfg_logits(c, c, 4.0f), c) == 0.0);
    CHECK(max_abs_diff(cfg_logits(c, c, 7.5f), c) == 0.0);

    // the arithmetic case: s=4, c=2, u=1 -> 5*2 - 4*1 = 6
    CHECK(cfg_logits(c, u, 4.0f)[0] == doctest::Approx(6.0));

    // affinity: cfg(a*c, a*u, s) == a * cfg(c, u, s)
    Array c2 = scaled(c, 2.5f);
    Array u2 = scaled(u, 2.5f);
    CHECK(max_abs_diff(cfg_logits(c2, u2, 4.0f), scaled(cfg_logits(c, u, 4.0f), 2.5f)) < 1e-5);

    Array bad({3}, {0, 0, 0});
    CHECK_THROWS_AS(cfg_logits(c, bad, 1.0f), shape_error);
}

TEST_CASE("decode_base follows the remask schedule and lock contract") {
    ToyStack toy = ToyStack::make();
    const int n = 10, L = 10;

    std::vector<int> mask_counts;
    std::vector<std::vector<int>> lock_snapshots;
    std::vector<std::vector<int>> row_snapshots;
    auto observer = [&](const DecodeState& s) {
        int masked = 0;
        std::vector<int> locked;
        for (int i = 0; i < n; ++i) {
            if (s.row[static_cast<size_t>(i)] == toy.mparams.mask_id()) ++masked;
            if (s.fixed[static_cast<size_t>(i)]) locked.push_back(i);
        }
        mask_counts.push_back(masked);
        lock_snapshots.push_back(std::move(locked));
        row_snapshots.push_back(s.row);
    };

    DecodeState state = DecodeState::all_masked(n, toy.mparams.mask_id());
    GuidanceConfig guidance;
    Rng rng = Rng(7).stream("decode");
    DecodeTrace trace =
        decode_base(state, Condition::label(1), toy.mparams, L, guidance, rng, observer);

    // the mask-count trajectory equals the ceiling-formula oracle
    REQUIRE(static_cast<int>(mask_counts.size()) == L);
    for (int l = 1; l <= L; ++l) {
        const int oracle =
            static_cast<int>(std::ceil(gamma_schedule(static_cast<double>(l) / L) * n));
        CHECK(mask_counts[static_cast<size_t>(l - 1)] == oracle);
        CHECK(trace.entries[static_cast<size_t>(l - 1)].masked == oracle);
    }
    CHECK(mask_counts.back() == 0);

    // the lock set grows monotonically and locked tokens never change
    for (size_t l = 1; l < lock_snapshots.size(); ++l) {
        for (int pos : lock_snapshots[l - 1]) {
            CHECK(std::find(lock_snapshots[l].begin(), lock_snapshots[l].end(), pos) !=
                  lock_snapshots[l].end());
            CHECK(row_snapshots[l][static_cast<size_t>(pos)] ==
                  row_snapshots[l - 1][static_cast<size_t>(pos)]);
        }
    }

    // final state: no masks, everything locked
    CHECK(state.free_count() == 0);
    for (int id : state.row) {
        CHECK(id >= 0);
        CHECK(id < 16);
    }

    // L=1: one parallel fill, nothing remasked
    DecodeState one = DecodeState::all_masked(n, toy.mparams.mask_id());
    Rng rng1 = Rng(8).stream("decode");
    DecodeTrace t1 = decode_base(one, Condition::label(0), toy.mparams, 1, guidance, rng1);
    REQUIRE(t1.entries.size() == 1);
    CHECK(t1.entries[0].masked == 0);
    CHECK(t1.entries[0].locked == n);
    CHECK(one.free_count() == 0);

    // determinism: same seed, same tokens; different seed, different tokens
    DecodeState s1 = DecodeState::all_masked(n, toy.mparams.mask_id());
    DecodeState s2 = DecodeState::all_masked(n, toy.mparams.mask_id());
    Rng ra = Rng(9).stream("decode");
    Rng rb = Rng(9).stream("decode");
    decode_base(s1, Condition::label(2), toy.mparams, 5, guidance, ra);
    decode_base(s2, Condition::label(2), toy.mparams, 5, guidance, rb);
    CHECK(s1.row == s2.row);
    DecodeState s3 = DecodeState::all_masked(n, toy.mparams.mask_id());
    Rng rc = Rng(10).stream("decode");
    decode_base(s3, Condition::label(2), toy.mparams, 5, guidance, rc);
    CHECK(s1.row != s3.row);

    // errors: no free positions / fixed mask id
    DecodeState all_fixed = DecodeState::all_masked(2, toy.mparams.mask_id());
    all_fixed.fixed = {1, 1};
    all_fixed.row = {0, 1};
    Rng rr(1);
    CHECK_THROWS_AS(decode_base(all_fixed, Condition::null_cond(), toy.mparams, 2, guidance, rr),
                    domain_error);
    DecodeState bad = DecodeState::all_masked(2, toy.mparams.mask_id());
    bad.fixed = {1, 0};
    CHECK_THROWS_AS(decode_base(bad, Condition::null_cond(), toy.mparams, 2, guidance, rr),
                    token_error);
}

TEST_CASE("fill_residuals is deterministic in greedy mode") {
    ToyStack toy = ToyStack::make();
    std::vector<int> base{1, 5, 2, 9, 0, 3};
    GuidanceConfig guidance;
    Rng r1(4), r2(4);
    TokenStack a = fill_residuals(base, Condition::label(0), toy.rparams, guidance,
                                  ResidualMode::kGreedy, r1);
    TokenStack b = fill_residuals(base, Condition::label(0), toy.rparams, guidance,
                                  ResidualMode::kGreedy, r2);
    REQUIRE(a.num_layers() == 3);
    CHECK(a.rows[0] == base);
    for (int v = 0; v < 3; ++v) CHECK(a.rows[static_cast<size_t>(v)] == b.rows[static_cast<size_t>(v)]);
    for (int v = 1; v < 3; ++v) {
        for (int id : a.rows[static_cast<size_t>(v)]) {
            CHECK(id >= 0);
            CHECK(id < 16);
        }
    }
}

TEST_CASE("generate returns the requested frame count") {
    ToyStack toy = ToyStack::make();
    GuidanceConfig guidance;
    for (int frames : {5, 16, 37, 64}) {
        Rng rng(11);
        DecodeTrace trace;
        Motion m = generate(Condition::label(1), frames, toy.codec, toy.mparams, toy.rparams, 4,
                            guidance, rng, &trace);
        CHECK(m.num_frames() == frames);
        CHECK(m.feature_dim() == 6);
        CHECK(!trace.entries.empty());
    }
    // exceeding the model's max_len raises
    Rng rng(12);
    CHECK_THROWS_AS(generate(Condition::label(0), 16 * 4 + 8, toy.codec, toy.mparams,
                             toy.rparams, 4, GuidanceConfig{}, rng),
                    domain_error);

    // seedwise diversity on the toy model
    int distinct = 0;
    for (int pair = 0; pair < 20; ++pair) {
        Rng ra(100 + pair), rb(200 + pair);
        DecodeState sa = DecodeState::all_masked(10, ToyStack::make().mparams.mask_id());
        DecodeState sb = DecodeState::all_masked(10, ToyStack::make().mparams.mask_id());
        ToyStack t2 = ToyStack::make();
        Rng da = ra.stream("decode"), db = rb.stream("decode");
        decode_base(sa, Condition::label(0), t2.mparams, 4, GuidanceConfig{}, da);
        decode_base(sb, Condition::label(0), t2.mparams, 4, GuidanceConfig{}, db);
        if (sa.row != sb.row) ++distinct;
    }
    CHECK(distinct >= 19);
}

TEST_CASE("decode trace file format") {
    DecodeTrace trace;
    trace.entries = {{1, 10, 0, -2.5}, {2, 8, 2, -1.25}};
    trace.write("engine_trace_test.txt");
    std::ifstream in("engine_trace_test.txt");
    std::string line1, line2;
    std::getline(in, line1);
    std::getline(in, line2);
    CHECK(line1 == "iter=1 masked=10 locked=0 mean_conf=-2.5");
    CHECK(line2 == "iter=2 masked=8 locked=2 mean_conf=-1.25");
    std::remove("engine_trace_test.txt");
}

TEST_CASE("inpaint token contracts on the toy stack") {
    ToyStack toy = ToyStack::make();
    toy.mparams.max_len = 48;
    toy.rparams.max_len = 48;
    {
        Rng pos_rng(31);
        toy.mparams.pos = EmbeddingTable::create(49, 8, pos_rng);
        toy.rparams.pos = EmbeddingTable::create(49, 8, pos_rng);
    }
    GuidanceConfig guidance;
    Rng data_rng(21);
    InpaintSpec spec;
    spec.reference_frames = oracles::random_array({160, 6}, data_rng);  // n = 40 latents
    spec.ranges = {{18, 21}};

    Rng rng(5);
    InpaintResult r = inpaint_full(spec, Condition::label(2), toy.codec, toy.mparams,
                                   toy.rparams, 4, guidance, rng);

    // tokens outside the ranges are the reference's, at every layer
    REQUIRE(r.stack.num_layers() == r.reference.num_layers());
    for (int v = 0; v < r.stack.num_layers(); ++v) {
        for (int i = 0; i < r.stack.n; ++i) {
            const bool inside = i >= 18 && i < 21;
            if (!inside) {
                CHECK(r.stack.rows[static_cast<size_t>(v)][static_cast<size_t>(i)] ==
                      r.reference.rows[static_cast<size_t>(v)][static_cast<size_t>(i)]);
            }
        }
    }
    CHECK(r.motion.num_frames() == 160);

    // empty ranges return the reference's codec reconstruction
    InpaintSpec empty = spec;
    empty.ranges.clear();
    Rng rng2(6);
    InpaintResult re = inpaint_full(empty, Condition::label(0), toy.codec, toy.mparams,
                                    toy.rparams, 4, guidance, rng2);
    Motion recon = detokenize(re.reference, toy.codec, re.reference.num_layers());
    CHECK(max_abs_diff(re.motion.frames, recon.frames) == 0.0);

    // a full-cover range behaves exactly like generate under the same stream
    InpaintSpec full = spec;
    full.ranges = {{0, 40}};
    Rng rng3(7);
    InpaintResult rf = inpaint_full(full, Condition::label(1), toy.codec, toy.mparams,
                                    toy.rparams, 4, guidance, rng3);
    Rng rng4(7);
    Motion direct = generate(Condition::label(1), 160, toy.codec, toy.mparams, toy.rparams, 4,
                             guidance, rng4);
    CHECK(max_abs_diff(rf.motion.frames, direct.frames) == 0.0);

    // invalid ranges
    InpaintSpec bad = spec;
    bad.ranges = {{-1, 2}};
    Rng rng5(8);
    CHECK_THROWS_AS(
        inpaint_full(bad, Condition::label(0), toy.codec, toy.mparams, toy.rparams, 4, guidance,
                     rng5),
        domain_error);
    bad.ranges = {{0, 4}, {3, 6}};
    CHECK_THROWS_AS(
        inpaint_full(bad, Condition::label(0), toy.codec, toy.mparams, toy.rparams, 4, guidance,
                     rng5),
        domain_error);

    // flank frames outside the decoder's receptive field match the
    // reference reconstruction bit-exactly
    Motion ref_recon = detokenize(r.reference, toy.codec, r.reference.num_layers());
    // probe the receptive field: perturb one latent token and see which
    // frames change
    int margin = 0;
    {
        TokenStack probe = r.reference;
        probe.rows[0][20] = (probe.rows[0][20] + 1) % 16;
        Motion changed = detokenize(probe, toy.codec, probe.num_layers());
        int lo = ref_recon.num_frames(), hi = -1;
        for (int f = 0; f < ref_recon.num_frames(); ++f) {
            for (int c = 0; c < 6; ++c) {
                if (changed.frames.at(f, c) != ref_recon.frames.at(f, c)) {
                    lo = std::min(lo, f);
                    hi = std::max(hi, f);
                }
            }
        }
        REQUIRE(hi >= lo);
        margin = std::max(20 * 4 - lo, hi - (20 * 4 + 3));
    }
    const int lo_influenced = 18 * 4 - margin;
    const int hi_influenced = 21 * 4 - 1 + margin;
    bool checked_some = false;
    for (int f = 0; f < 160; ++f) {
        if (f >= lo_influenced && f <= hi_influenced) continue;
        checked_some = true;
        for (int c = 0; c < 6; ++c) {
            CHECK(r.motion.frames.at(f, c) == ref_recon.frames.at(f, c));
        }
    }
    CHECK(checked_some);
}

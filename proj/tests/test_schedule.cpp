#include <cmath>
#include <vector>

#include "doctest.h"
#include "mogen/schedule.hpp"
#include "oracles.hpp"

using namespace mogen;

TEST_CASE("gamma matches the cosine oracle on a 1001-point grid") {
    for (int i = 0; i <= 1000; ++i) {
        const double tau = static_cast<double>(i) / 1000.0;
        const long double oracle = cosl(static_cast<long double>(M_PIl) * tau / 2.0L);
        CHECK(std::fabs(gamma_schedule(tau) - static_cast<double>(oracle)) < 1e-6);
    }
    CHECK(gamma_schedule(0.0) == doctest::Approx(1.0));
    CHECK(gamma_schedule(1.0) == 0.0);
    CHECK(gamma_schedule(0.5) == doctest::Approx(0.70710678).epsilon(1e-8));
    CHECK_THROWS_AS(gamma_schedule(-0.01), domain_error);
    CHECK_THROWS_AS(gamma_schedule(1.01), domain_error);
}

TEST_CASE("mask_count endpoints and monotonicity") {
    CHECK(mask_count(0.0, 10) == 10);
    CHECK(mask_count(1.0, 10) == 0);
    // gamma(tau)=0.33 at tau = 2*acos(0.33)/pi; ceil(3.3) = 4
    const double tau033 = 2.0 * std::acos(0.33) / M_PI;
    CHECK(mask_count(tau033, 10) == 4);

    for (int n : {1, 7, 10, 64}) {
        int prev = n + 1;
        for (int i = 0; i <= 200; ++i) {
            int c = mask_count(static_cast<double>(i) / 200.0, n);
            CHECK(c <= prev);
            CHECK(c >= 0);
            CHECK(c <= n);
            prev = c;
        }
        CHECK(mask_count(0.0, n) == n);
        CHECK(mask_count(1.0, n) == 0);
    }
    CHECK_THROWS_AS(mask_count(0.5, 0), domain_error);
}

TEST_CASE("remask schedule is non-increasing and ends at zero") {
    for (int n : {1, 5, 10, 16, 64}) {
        for (int L : {1, 3, 10, 20}) {
            auto counts = remask_schedule(n, L);
            REQUIRE(static_cast<int>(counts.size()) == L);
            for (size_t i = 0; i + 1 < counts.size(); ++i) CHECK(counts[i] >= counts[i + 1]);
            CHECK(counts.back() == 0);
            for (int l = 1; l <= L; ++l) {
                const int oracle = static_cast<int>(
                    std::ceil(gamma_schedule(static_cast<double>(l) / L) * n));
                CHECK(counts[static_cast<size_t>(l - 1)] == oracle);
            }
        }
    }
}

TEST_CASE("draw_training_mask statistics") {
    // n=1: the position is selected for every tau < 1
    {
        Rng rng(5);
        for (int i = 0; i < 2000; ++i) {
            auto [tau, plan] = draw_training_mask(1, rng);
            CHECK(plan.size() == 1);
            CHECK(plan.positions[0] == 0);
        }
    }

    // mean masked fraction ~ E[gamma] = 2/pi
    {
        Rng rng(6);
        const int n = 100, draws = 100000;
        double total = 0.0;
        for (int i = 0; i < draws; ++i) {
            auto [tau, plan] = draw_training_mask(n, rng);
            total += static_cast<double>(plan.size()) / n;
        }
        CHECK(std::fabs(total / draws - 2.0 / M_PI) < 0.01);
    }

    // action proportions converge to 80/10/10
    {
        Rng rng(7);
        int counts[3] = {0, 0, 0};
        int total = 0;
        while (total < 100000) {
            auto [tau, plan] = draw_training_mask(20, rng);
            for (MaskAction a : plan.actions) {
                counts[static_cast<int>(a)]++;
                ++total;
            }
        }
        CHECK(std::fabs(static_cast<double>(counts[0]) / total - 0.8) < 0.01);
        CHECK(std::fabs(static_cast<double>(counts[1]) / total - 0.1) < 0.01);
        CHECK(std::fabs(static_cast<double>(counts[2]) / total - 0.1) < 0.01);
    }

    // positions are unique
    {
        Rng rng(8);
        for (int i = 0; i < 200; ++i) {
            auto [tau, plan] = draw_training_mask(12, rng);
            std::vector<int> sorted = plan.positions;
            std::sort(sorted.begin(), sorted.end());
            CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
            CHECK(static_cast<int>(plan.size()) == mask_count(tau, 12));
        }
    }
}

TEST_CASE("apply_mask contract") {
    const int vocab = 16;
    std::vector<int> row{5, 7};

    // empty plan leaves the row unchanged with no supervision
    {
        Rng rng(1);
        MaskPlan empty;
        auto out = apply_mask(row, empty, vocab, rng);
        CHECK(out.tokens == row);
        CHECK(std::count(out.supervised.begin(), out.supervised.end(), 1) == 0);
    }

    // full plan of MASK_TOKEN actions turns every entry into the mask id
    {
        Rng rng(2);
        MaskPlan plan;
        plan.positions = {0, 1};
        plan.actions = {MaskAction::kMaskToken, MaskAction::kMaskToken};
        auto out = apply_mask(row, plan, vocab, rng);
        CHECK(out.tokens[0] == vocab);
        CHECK(out.tokens[1] == vocab);
        CHECK(out.supervised[0] == 1);
        CHECK(out.supervised[1] == 1);
    }

    // RANDOM_TOKEN draws uniformly from the codebook and never the mask id
    {
        Rng rng(3);
        MaskPlan plan;
        plan.positions = {1};
        plan.actions = {MaskAction::kRandomToken};
        std::vector<int> hist(vocab, 0);
        const int draws = 32000;
        for (int i = 0; i < draws; ++i) {
            auto out = apply_mask(row, plan, vocab, rng);
            CHECK(out.tokens[0] == 5);
            REQUIRE(out.tokens[1] >= 0);
            REQUIRE(out.tokens[1] < vocab);
            hist[static_cast<size_t>(out.tokens[1])]++;
        }
        const double p = 1.0 / vocab;
        const double sigma = std::sqrt(p * (1 - p) / draws);
        for (int v = 0; v < vocab; ++v) {
            CHECK(std::fabs(static_cast<double>(hist[static_cast<size_t>(v)]) / draws - p) <
                  4 * sigma);
        }
    }

    // KEEP positions stay put but are supervised
    {
        Rng rng(4);
        MaskPlan plan;
        plan.positions = {0};
        plan.actions = {MaskAction::kKeep};
        auto out = apply_mask(row, plan, vocab, rng);
        CHECK(out.tokens[0] == 5);
        CHECK(out.supervised[0] == 1);
        CHECK(out.supervised[1] == 0);
    }

    // a mask id that collides with the codebook is a configuration error
    {
        Rng rng(5);
        MaskPlan plan;
        CHECK_THROWS_AS(apply_mask(row, plan, vocab, rng, vocab - 1), config_error);
    }
}

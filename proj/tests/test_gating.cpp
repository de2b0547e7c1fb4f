#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <random>
#include <vector>

#include "pf/gating.hpp"
#include "pf/layout.hpp"

using namespace pf;

namespace {

TokenLayout two_image_layout() {
    // Text[0,2) Image1[2,4) Image2[4,6)
    return TokenLayout({{SegmentKind::Text, 0, 0, 2},
                        {SegmentKind::Image, 1, 2, 4},
                        {SegmentKind::Image, 2, 4, 6}});
}

TokenLayout oracle_layout() {
    // Text={0}, S_1={1}, S_2={2,3}
    return TokenLayout({{SegmentKind::Text, 0, 0, 1},
                        {SegmentKind::Image, 1, 1, 2},
                        {SegmentKind::Image, 2, 2, 4}});
}

// Independent route: softmax over log(baseline) + gate offsets.
std::vector<double> softmax_of_shifted_logits(const std::vector<double>& baseline,
                                              const TokenLayout& layout, const FocusSet& focus,
                                              double lambda) {
    std::vector<double> logits(baseline.size());
    for (std::size_t p = 0; p < baseline.size(); ++p) {
        const int j = layout.image_at(p);
        const double delta = (j != 0 && !focus.contains(j)) ? -lambda : 0.0;
        logits[p] = std::log(baseline[p]) + delta;
    }
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    double z = 0.0;
    std::vector<double> out(baseline.size());
    for (std::size_t p = 0; p < out.size(); ++p) {
        out[p] = std::exp(logits[p] - m);
        z += out[p];
    }
    for (double& v : out) v /= z;
    return out;
}

std::vector<double> random_row(std::mt19937_64& rng, std::size_t n) {
    std::vector<double> row(n);
    double total = 0.0;
    for (double& v : row) {
        v = 0.05 + static_cast<double>(rng() >> 11) * 0x1.0p-53;
        total += v;
    }
    for (double& v : row) v /= total;
    return row;
}

}  // namespace

TEST_CASE("build_gate marks non-focused image positions with -lambda") {
    const auto layout = two_image_layout();
    const GateVector gate = build_gate(layout, FocusSet{{1}}, GateConfig{2.0}, 6);
    CHECK(gate == GateVector{0, 0, 0, 0, -2.0, -2.0});
}

TEST_CASE("build_gate edge cases") {
    const auto layout = two_image_layout();

    SUBCASE("all images focused -> all zeros") {
        const GateVector gate = build_gate(layout, FocusSet{{1, 2}}, GateConfig{3.0}, 6);
        CHECK(gate == GateVector(6, 0.0));
    }
    SUBCASE("lambda 0 -> all zeros") {
        const GateVector gate = build_gate(layout, FocusSet{{2}}, GateConfig{0.0}, 6);
        CHECK(gate == GateVector(6, 0.0));
    }
    SUBCASE("generated positions past the layout stay zero") {
        const GateVector gate = build_gate(layout, FocusSet{{1}}, GateConfig{1.5}, 9);
        CHECK(gate.size() == 9);
        CHECK(gate[4] == -1.5);
        CHECK(gate[6] == 0.0);
        CHECK(gate[8] == 0.0);
    }
    SUBCASE("focus index out of range") {
        CHECK_THROWS_AS(build_gate(layout, FocusSet{{3}}, GateConfig{1.0}, 6),
                        std::out_of_range);
        CHECK_THROWS_AS(build_gate(layout, FocusSet{{0}}, GateConfig{1.0}, 6),
                        std::out_of_range);
    }
    SUBCASE("negative lambda rejected") {
        CHECK_THROWS_AS(build_gate(layout, FocusSet{{1}}, GateConfig{-0.5}, 6),
                        std::invalid_argument);
    }
}

TEST_CASE("gated_distribution_oracle reproduces the worked example") {
    const std::vector<double> baseline{0.4, 0.3, 0.2, 0.1};
    const auto layout = oracle_layout();
    const double lambda = std::log(2.0);

    const auto gated = gated_distribution_oracle(baseline, layout, FocusSet{{1}}, lambda);

    // Z = 1 - (1 - 1/2) * 0.3 = 0.85
    CHECK(gated[0] == doctest::Approx(0.47059).epsilon(1e-4));
    CHECK(gated[1] == doctest::Approx(0.35294).epsilon(1e-4));
    CHECK(gated[2] == doctest::Approx(0.11765).epsilon(1e-4));
    CHECK(gated[3] == doctest::Approx(0.05882).epsilon(1e-4));
    CHECK(gated[0] == doctest::Approx(0.4 / 0.85).epsilon(1e-12));

    const auto brute = softmax_of_shifted_logits(baseline, layout, FocusSet{{1}}, lambda);
    for (std::size_t p = 0; p < gated.size(); ++p)
        CHECK(std::abs(gated[p] - brute[p]) <= 1e-12);
}

TEST_CASE("oracle identity and limits") {
    const std::vector<double> baseline{0.4, 0.3, 0.2, 0.1};
    const auto layout = oracle_layout();

    SUBCASE("lambda 0 returns the input exactly") {
        const auto gated = gated_distribution_oracle(baseline, layout, FocusSet{{2}}, 0.0);
        CHECK(gated == baseline);
    }
    SUBCASE("large lambda kills non-focused mass and renormalizes") {
        const auto gated = gated_distribution_oracle(baseline, layout, FocusSet{{1}}, 50.0);
        CHECK(gated[0] == doctest::Approx(4.0 / 7.0).epsilon(1e-9));
        CHECK(gated[1] == doctest::Approx(3.0 / 7.0).epsilon(1e-9));
        CHECK(gated[2] <= 1e-9);
        CHECK(gated[3] <= 1e-9);
    }
    SUBCASE("unnormalized baseline rejected") {
        CHECK_THROWS_AS(
            gated_distribution_oracle(std::vector<double>{0.4, 0.4}, layout, FocusSet{{1}}, 1.0),
            std::invalid_argument);
    }
}

TEST_CASE("oracle equals brute-force softmax on random rows") {
    std::mt19937_64 rng(2024);
    const std::vector<double> lambdas{0.1, 0.5, 1.0, 2.0, 4.0};
    for (int iter = 0; iter < 300; ++iter) {
        const int n_images = 2 + static_cast<int>(rng() % 5);
        const std::size_t per_image = 1 + rng() % 3;
        const std::size_t text = 1 + rng() % 4;
        std::vector<Segment> segs;
        segs.push_back({SegmentKind::Text, 0, 0, text});
        std::size_t cursor = text;
        for (int j = 1; j <= n_images; ++j) {
            segs.push_back({SegmentKind::Image, j, cursor, cursor + per_image});
            cursor += per_image;
        }
        const TokenLayout layout(std::move(segs));
        const auto row = random_row(rng, layout.total_len());
        const FocusSet focus{{1 + static_cast<int>(rng() % n_images)}};
        const double lambda = lambdas[iter % lambdas.size()];

        const auto gated = gated_distribution_oracle(row, layout, focus, lambda);
        const auto brute = softmax_of_shifted_logits(row, layout, focus, lambda);
        for (std::size_t p = 0; p < row.size(); ++p)
            CHECK(std::abs(gated[p] - brute[p]) <= 1e-9);

        // pairwise ratio law: e^-lambda between suppressed and untouched
        for (std::size_t p = 0; p < row.size(); ++p) {
            const int jp = layout.image_at(p);
            if (jp == 0 || focus.contains(jp)) continue;
            for (std::size_t q = 0; q < row.size(); ++q) {
                const int jq = layout.image_at(q);
                if (jq != 0 && !focus.contains(jq)) continue;
                const double expected = std::exp(-lambda) * (row[p] / row[q]);
                CHECK(std::abs(gated[p] / gated[q] - expected) <= 1e-9 * (1.0 + expected));
            }
        }

        // softness: positive baseline stays positive
        for (std::size_t p = 0; p < row.size(); ++p) CHECK(gated[p] > 0.0);

        // normalization
        double total = 0.0;
        for (double v : gated) total += v;
        CHECK(std::abs(total - 1.0) <= 1e-9);
    }
}

TEST_CASE("monotone focusing in lambda") {
    std::mt19937_64 rng(77);
    const std::vector<double> grid{0.0, 0.5, 1.0, 2.0, 4.0};
    for (int iter = 0; iter < 100; ++iter) {
        const auto layout = two_image_layout();
        const auto row = random_row(rng, 6);
        const FocusSet focus{{1}};
        double prev = -1.0;
        double off_mass = 0.0;
        for (std::size_t p = 0; p < row.size(); ++p)
            if (layout.image_at(p) == 2) off_mass += row[p];
        for (double lambda : grid) {
            const auto gated = gated_distribution_oracle(row, layout, focus, lambda);
            const double focused = focus_mass(gated, layout, 1);
            if (prev >= 0.0) {
                CHECK(focused >= prev - 1e-12);
                if (off_mass > 1e-6) CHECK(focused > prev);
            }
            prev = focused;
        }
    }
}

TEST_CASE("focus_mass subset sums") {
    const auto layout = oracle_layout();
    const std::vector<double> row{0.4, 0.3, 0.2, 0.1};
    CHECK(focus_mass(row, layout, 2) == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(focus_mass(row, layout, 1) == doctest::Approx(0.3).epsilon(1e-12));

    const TokenLayout half(
        {{SegmentKind::Image, 1, 0, 3}, {SegmentKind::Text, 0, 3, 6}});
    const std::vector<double> uniform(6, 1.0 / 6.0);
    CHECK(focus_mass(uniform, half, 1) == doctest::Approx(0.5).epsilon(1e-12));

    // degenerate empty S_j
    const TokenLayout degenerate(
        {{SegmentKind::Image, 1, 0, 0}, {SegmentKind::Text, 0, 0, 4}});
    CHECK(focus_mass(row, degenerate, 1) == 0.0);

    CHECK_THROWS_AS(focus_mass(row, layout, 3), std::out_of_range);
    CHECK_THROWS_AS(focus_mass(row, layout, 0), std::out_of_range);
}

#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <random>
#include <vector>

#include "pf/gating.hpp"
#include "pf/model.hpp"

using namespace pf;

namespace {

TokenLayout prompt_layout_12() {
    // Text[0,4) Image1[4,8) Image2[8,12)
    return TokenLayout({{SegmentKind::Text, 0, 0, 4},
                        {SegmentKind::Image, 1, 4, 8},
                        {SegmentKind::Image, 2, 8, 12}});
}

std::vector<int> iota_tokens(int n, int vocab) {
    std::vector<int> t(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) t[static_cast<std::size_t>(i)] = i % vocab;
    return t;
}

}  // namespace

TEST_CASE("seeded init is deterministic") {
    const auto cfg = ModelConfig::make(2, 4, 16, 256, 64, 42);
    Model a(cfg), b(cfg);
    CHECK(a.first_weight() == b.first_weight());

    auto sa = prefill(a, iota_tokens(12, 256), prompt_layout_12());
    auto sb = prefill(b, iota_tokens(12, 256), prompt_layout_12());
    CHECK(sa.last_logits() == sb.last_logits());

    const auto ra = sa.decode_step(65);
    const auto rb = sb.decode_step(65);
    CHECK(sa.last_logits() == sb.last_logits());
    CHECK(ra.reduced_row == rb.reduced_row);

    Model c(ModelConfig::make(2, 4, 16, 256, 64, 43));
    CHECK(a.first_weight() != c.first_weight());
}

TEST_CASE("config validation") {
    SUBCASE("hidden_dim not divisible by heads") {
        ModelConfig cfg;
        cfg.num_layers = 2;
        cfg.num_heads = 5;
        cfg.head_dim = 13;
        cfg.hidden_dim = 64;
        cfg.vocab_size = 32;
        cfg.max_seq_len = 16;
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
        CHECK_THROWS_AS(Model{cfg}, std::invalid_argument);
    }
    SUBCASE("zero-size dimension") {
        auto cfg = ModelConfig::make(0, 1, 4, 8, 16, 0);
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
        cfg = ModelConfig::make(1, 1, 4, 0, 16, 0);
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    }
    SUBCASE("digest distinguishes configs") {
        CHECK(ModelConfig::make(1, 1, 4, 8, 16, 0).digest() !=
              ModelConfig::make(1, 1, 4, 8, 16, 1).digest());
    }
}

TEST_CASE("minimal model decodes to a vocab-length logit vector") {
    Model model(ModelConfig::make(1, 1, 4, 8, 16, 0));
    auto session = prefill(model, {3}, TokenLayout::text_only(1));
    CHECK(session.last_logits().size() == 8);
    session.decode_step(5);
    CHECK(session.last_logits().size() == 8);
}

TEST_CASE("prefill bookkeeping") {
    Model model(ModelConfig::make(2, 4, 16, 256, 64, 1));

    SUBCASE("session length and causal growth") {
        auto session = prefill(model, iota_tokens(12, 256), prompt_layout_12());
        CHECK(session.current_len() == 12);
        const auto rec = session.decode_step(7);
        CHECK(rec.attended_len == 13);
        CHECK(rec.reduced_row.size() == 13);  // no future positions exist in the row
        CHECK(session.current_len() == 13);
    }
    SUBCASE("token count must match the layout") {
        CHECK_THROWS_AS(prefill(model, iota_tokens(10, 256), prompt_layout_12()),
                        std::invalid_argument);
    }
    SUBCASE("sequence overflow") {
        Model tiny(ModelConfig::make(1, 1, 4, 300, 4, 0));
        CHECK_THROWS_AS(prefill(tiny, iota_tokens(5, 300), TokenLayout::text_only(5)),
                        std::invalid_argument);
        auto session = prefill(tiny, iota_tokens(4, 300), TokenLayout::text_only(4));
        CHECK_THROWS_AS(session.decode_step(1), std::invalid_argument);
    }
    SUBCASE("token id outside the vocab") {
        CHECK_THROWS_AS(prefill(model, {999, 1, 2}, TokenLayout::text_only(3)),
                        std::invalid_argument);
    }
}

TEST_CASE("attention rows are normalized distributions") {
    Model model(ModelConfig::make(3, 2, 8, 300, 64, 5));
    auto session = prefill(model, iota_tokens(12, 300), prompt_layout_12());
    for (int step = 0; step < 4; ++step) {
        const auto rec = session.decode_step(40 + step, nullptr, /*retain_raw=*/true);
        double reduced_total = 0.0;
        for (double v : rec.reduced_row) {
            CHECK(v >= 0.0);
            reduced_total += v;
        }
        CHECK(std::abs(reduced_total - 1.0) <= 1e-6);
        CHECK(rec.selected_layers == std::vector<int>{0, 1, 2});
        for (const auto& layer : rec.raw_rows)
            for (const auto& row : layer) {
                CHECK(row.size() == rec.attended_len);
                double total = 0.0;
                for (double v : row) total += v;
                CHECK(std::abs(total - 1.0) <= 1e-6);
            }
    }
}

TEST_CASE("absent gate and all-zero gate decode identically") {
    const auto cfg = ModelConfig::make(2, 4, 16, 300, 64, 11);
    Model model(cfg);
    auto a = prefill(model, iota_tokens(12, 300), prompt_layout_12());
    auto b = prefill(model, iota_tokens(12, 300), prompt_layout_12());

    const std::vector<double> zeros(13, 0.0);
    const auto ra = a.decode_step(70, nullptr, true);
    const auto rb = b.decode_step(70, &zeros, true);
    CHECK(a.last_logits() == b.last_logits());
    CHECK(ra.reduced_row == rb.reduced_row);
    CHECK(ra.raw_rows == rb.raw_rows);
}

TEST_CASE("gate length must match the attended length") {
    Model model(ModelConfig::make(1, 2, 8, 300, 64, 3));
    auto session = prefill(model, iota_tokens(12, 300), prompt_layout_12());
    const std::vector<double> wrong(12, 0.0);  // needs 13
    CHECK_THROWS_AS(session.decode_step(5, &wrong), std::invalid_argument);
}

// The closed form describes a single softmax with shifted logits, so it can
// only be compared where the gated and ungated runs share q/k state: every
// head of a one-layer model, and layer 0 of a deeper one. Deeper layers see
// different inputs once layer 0's output changes.
TEST_CASE("gated decode matches the closed-form oracle per head") {
    const auto layout = prompt_layout_12();
    const GateConfig gate_cfg{1.3};
    const FocusSet focus{{1}};  // suppress image 2
    const GateVector gate = build_gate(layout, focus, gate_cfg, 13);
    CHECK(gate[9] == -1.3);

    SUBCASE("single-layer model, all heads") {
        Model model(ModelConfig::make(1, 4, 16, 300, 64, 17));
        auto ungated = prefill(model, iota_tokens(12, 300), layout);
        auto gated = prefill(model, iota_tokens(12, 300), layout);
        const auto base_rec = ungated.decode_step(70, nullptr, true);
        const auto gated_rec = gated.decode_step(70, &gate, true);

        for (std::size_t l = 0; l < base_rec.raw_rows.size(); ++l)
            for (std::size_t h = 0; h < base_rec.raw_rows[l].size(); ++h) {
                const auto expected = gated_distribution_oracle(base_rec.raw_rows[l][h],
                                                                layout, focus, gate_cfg.lambda);
                const auto& actual = gated_rec.raw_rows[l][h];
                for (std::size_t p = 0; p < expected.size(); ++p)
                    CHECK(std::abs(expected[p] - actual[p]) <= 1e-9);
            }
        // the reduced row is also gated toward image 1
        CHECK(focus_mass(gated_rec.reduced_row, layout, 2) <
              focus_mass(base_rec.reduced_row, layout, 2));
    }
    SUBCASE("layer 0 of a deeper model") {
        Model model(ModelConfig::make(4, 4, 16, 300, 64, 17));
        auto ungated = prefill(model, iota_tokens(12, 300), layout);
        auto gated = prefill(model, iota_tokens(12, 300), layout);
        const auto base_rec = ungated.decode_step(70, nullptr, true);
        const auto gated_rec = gated.decode_step(70, &gate, true);
        REQUIRE(base_rec.selected_layers[0] == 0);
        for (std::size_t h = 0; h < base_rec.raw_rows[0].size(); ++h) {
            const auto expected = gated_distribution_oracle(base_rec.raw_rows[0][h], layout,
                                                            focus, gate_cfg.lambda);
            const auto& actual = gated_rec.raw_rows[0][h];
            for (std::size_t p = 0; p < expected.size(); ++p)
                CHECK(std::abs(expected[p] - actual[p]) <= 1e-9);
        }
    }
}

TEST_CASE("stepwise decode with KV cache matches full recomputation") {
    std::mt19937_64 rng(1234);
    for (int trial = 0; trial < 4; ++trial) {
        const auto cfg = ModelConfig::make(2, 2, 8, 300, 96, 100 + trial);
        Model model(cfg);

        const int prompt_len = 8 + static_cast<int>(rng() % 8);
        const int extra = 6;
        std::vector<int> tokens;
        for (int i = 0; i < prompt_len + extra; ++i)
            tokens.push_back(static_cast<int>(rng() % 256));

        const auto full = model.forward_full(tokens);

        auto session = prefill(
            model, std::vector<int>(tokens.begin(), tokens.begin() + prompt_len),
            TokenLayout::text_only(static_cast<std::size_t>(prompt_len)));
        double worst = 0.0;
        for (double v : session.last_logits()) (void)v;
        for (std::size_t i = 0; i < full[static_cast<std::size_t>(prompt_len - 1)].size(); ++i)
            worst = std::max(worst,
                             std::abs(session.last_logits()[i] -
                                      full[static_cast<std::size_t>(prompt_len - 1)][i]));
        for (int k = 0; k < extra; ++k) {
            session.decode_step(tokens[static_cast<std::size_t>(prompt_len + k)]);
            const auto& expect = full[static_cast<std::size_t>(prompt_len + k)];
            for (std::size_t i = 0; i < expect.size(); ++i)
                worst = std::max(worst, std::abs(session.last_logits()[i] - expect[i]));
        }
        CHECK(worst <= 1e-6);
    }
}

TEST_CASE("select_diagnostic_layers picks 0%, 50%, 100% depths") {
    CHECK(select_diagnostic_layers(32) == std::vector<int>{0, 15, 31});
    CHECK(select_diagnostic_layers(1) == std::vector<int>{0});
    CHECK(select_diagnostic_layers(2) == std::vector<int>{0, 1});
    CHECK(select_diagnostic_layers(3) == std::vector<int>{0, 1, 2});
    CHECK_THROWS_AS(select_diagnostic_layers(0), std::invalid_argument);
}

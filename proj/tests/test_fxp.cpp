#include "doctest.h"

#include <cmath>
#include <stdexcept>

#include "afnas/fxp.hpp"
#include "afnas/rng.hpp"

using namespace afnas;
using fxp::ClipMode;
using fxp::FxpFormat;

TEST_SUITE_BEGIN("fxp");

TEST_CASE("quantize hand-checked values") {
    CHECK(fxp::quantize(0.0, {8, 4}) == 0.0);
    CHECK(fxp::quantize(0.0, {32, 16}) == 0.0);
    CHECK(fxp::quantize(0.3, {8, 4}) == 0.3125);
    CHECK(fxp::quantize(-0.3, {8, 4}) == -0.3125);
    CHECK(fxp::quantize(100.0, {4, 0}) == 7.0);
    CHECK(fxp::quantize(-100.0, {4, 0}) == -8.0);
    // Half-away-from-zero at the .5 tie, both signs.
    CHECK(fxp::quantize(0.5 / 16.0, {8, 4}) == 1.0 / 16.0);
    CHECK(fxp::quantize(-0.5 / 16.0, {8, 4}) == -1.0 / 16.0);
}

TEST_CASE("clip bounds: literal vs max-code") {
    const FxpFormat f{8, 4};
    // literal: hi = 2^3 - 1 = 7; max code: 2^3 - 2^-4 = 7.9375
    CHECK(fxp::clip_hi(f, ClipMode::kLiteral) == 7.0);
    CHECK(fxp::clip_hi(f, ClipMode::kMaxCode) == 7.9375);
    CHECK(fxp::clip_lo(f) == -8.0);
    CHECK(fxp::quantize(7.5, f, ClipMode::kLiteral) == 7.0);
    CHECK(fxp::quantize(7.5, f, ClipMode::kMaxCode) == 7.5);
    CHECK(fxp::quantize(1e9, f, ClipMode::kMaxCode) == 7.9375);
}

TEST_CASE("quantize rejects non-finite input") {
    CHECK_THROWS_AS(fxp::quantize(std::nan(""), {16, 8}), std::domain_error);
    CHECK_THROWS_AS(fxp::quantize(INFINITY, {16, 8}), std::domain_error);
}

TEST_CASE("format validation") {
    CHECK_THROWS_AS(fxp::check_format({1, 0}), ContractError);
    CHECK_THROWS_AS(fxp::check_format({33, 8}), ContractError);
    CHECK_THROWS_AS(fxp::check_format({16, 16}), ContractError);
    CHECK_THROWS_AS(fxp::check_format({16, -1}), ContractError);
    CHECK_NOTHROW(fxp::check_format({2, 0}));
    CHECK_NOTHROW(fxp::check_format({32, 31}));
}

TEST_CASE("integer codes") {
    CHECK(fxp::to_code(0.3125, {8, 4}) == 5);
    CHECK(fxp::to_code(-1.0, {8, 4}) == -16);
    CHECK(fxp::from_code(0, {8, 4}) == 0.0);
    CHECK(fxp::from_code(0, {32, 16}) == 0.0);
    CHECK(fxp::from_code(5, {8, 4}) == 0.3125);
    CHECK_THROWS_AS(fxp::to_code(8.0, {8, 4}), std::out_of_range);
    CHECK_THROWS_AS(fxp::from_code(128, {8, 4}), std::out_of_range);
    CHECK_THROWS_AS(fxp::from_code(-129, {8, 4}), std::out_of_range);
}

TEST_CASE("ste_grad passes interior, kills saturation") {
    const FxpFormat f{16, 8};
    CHECK(fxp::ste_grad(3.5, 0.1, f) == 3.5);
    CHECK(fxp::ste_grad(3.5, 1e6, f) == 0.0);
    CHECK(fxp::ste_grad(3.5, -1e6, f) == 0.0);
    CHECK(fxp::ste_grad(0.0, 0.1, f) == 0.0);
    // Boundary is not strictly inside.
    CHECK(fxp::ste_grad(1.0, fxp::clip_hi(f), f) == 0.0);
    CHECK(fxp::ste_grad(1.0, fxp::clip_lo(f), f) == 0.0);
    // kMaxCode moves the boundary.
    CHECK(fxp::ste_grad(1.0, fxp::clip_hi(f), f, ClipMode::kMaxCode) == 1.0);
}

TEST_CASE("quantizer laws on random samples") {
    Rng rng(0xf1f1f1);
    for (int iter = 0; iter < 20000; ++iter) {
        const FxpFormat f = fxp::kSearchFormats[rng.uniform_index(fxp::kSearchFormats.size())];
        const double span = fxp::clip_hi(f) - fxp::clip_lo(f);
        const double x = rng.uniform(fxp::clip_lo(f) - 0.25 * span, fxp::clip_hi(f) + 0.25 * span);
        const double q = fxp::quantize(x, f);

        CHECK(fxp::quantize(q, f) == q);                     // idempotent
        CHECK(q >= fxp::clip_lo(f));                         // bounded
        CHECK(q <= fxp::clip_hi(f));
        if (x >= fxp::clip_lo(f) && x <= fxp::clip_hi(f))    // max error inside range
            CHECK(std::abs(q - x) <= std::ldexp(1.0, -f.precision_bits - 1));
        CHECK(fxp::from_code(fxp::to_code(q, f), f) == q);   // code round-trip

        const double y = rng.uniform(fxp::clip_lo(f) - 0.25 * span, fxp::clip_hi(f) + 0.25 * span);
        const auto [lo, hi] = std::minmax(x, y);
        CHECK(fxp::quantize(lo, f) <= fxp::quantize(hi, f)); // monotone
    }
}

TEST_CASE("grid spacing is exactly 2^-p") {
    for (const FxpFormat& f : fxp::kSearchFormats) {
        const double step = std::ldexp(1.0, -f.precision_bits);
        CHECK(fxp::quantize(step * 3, f) == step * 3);
        CHECK(fxp::quantize(step * 3 + step * 0.49, f) == step * 3);
        CHECK(fxp::quantize(step * 3 + step * 0.51, f) == step * 4);
    }
}

TEST_SUITE_END();

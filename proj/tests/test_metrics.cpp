#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "evr/metrics.hpp"
#include "evr/rng.hpp"

using namespace evr;

namespace {

// independent pixel-enumeration oracle over a bounded integer lattice
double iou_box_oracle(const BoxF& a, const BoxF& b) {
    const bool ea = a.area() <= 0, eb = b.area() <= 0;
    if (ea && eb) return 1.0;
    if (ea || eb) return 0.0;
    const double cell = 0.25; // boxes in the tests live on the quarter lattice
    long long inter = 0, uni = 0;
    for (double y = -20 + cell / 2; y < 120; y += cell)
        for (double x = -20 + cell / 2; x < 120; x += cell) {
            bool in_a = x > a.x0 && x < a.x1 && y > a.y0 && y < a.y1;
            bool in_b = x > b.x0 && x < b.x1 && y > b.y0 && y < b.y1;
            inter += in_a && in_b;
            uni += in_a || in_b;
        }
    return uni == 0 ? 1.0 : double(inter) / double(uni);
}

Mask random_mask(Rng& rng, int w, int h, double density) {
    Mask m{w, h};
    for (auto& v : m.on) v = rng.uniform() < density;
    return m;
}

} // namespace

TEST_CASE("box IoU fixed points") {
    CHECK(iou_box({0, 0, 2, 2}, {0, 0, 2, 2}) == 1.0);
    CHECK(iou_box({0, 0, 2, 2}, {1, 1, 3, 3}) == doctest::Approx(1.0 / 7).epsilon(1e-15));
    CHECK(iou_box({0, 0, 1, 1}, {2, 2, 3, 3}) == 0.0);
    CHECK(iou_box({0, 0, 1, 1}, {1, 0, 2, 1}) == 0.0); // edge contact has zero area
    // empty-box conventions
    CHECK(iou_box({5, 5, 5, 5}, {3, 3, 3, 9}) == 1.0); // both degenerate
    CHECK(iou_box({5, 5, 5, 5}, {0, 0, 4, 4}) == 0.0); // one degenerate
    CHECK(iou_box({2, 2, 1, 3}, {2, 2, 1, 3}) == 1.0); // inverted counts as empty
}

TEST_CASE("box IoU matches area enumeration on random lattice boxes") {
    Rng rng(17);
    for (int trial = 0; trial < 250; ++trial) {
        auto rb = [&]() {
            double x0 = rng.uniform_int(0, 150) * 0.5, y0 = rng.uniform_int(0, 150) * 0.5;
            double w = rng.uniform_int(0, 40) * 0.5, h = rng.uniform_int(0, 40) * 0.5;
            return BoxF{x0, y0, x0 + w, y0 + h};
        };
        BoxF a = rb(), b = rb();
        CHECK(iou_box(a, b) == doctest::Approx(iou_box_oracle(a, b)).epsilon(1e-12));
        CHECK(iou_box(a, b) == iou_box(b, a)); // symmetric
        CHECK(iou_box(a, a) == (a.area() > 0 ? 1.0 : 1.0));
    }
}

TEST_CASE("box IoU is continuous under small shifts") {
    double prev = 1.0;
    for (double dx = 0; dx <= 2.0; dx += 0.125) {
        double v = iou_box({0, 0, 2, 2}, {dx, 0, dx + 2, 2});
        CHECK(v <= prev + 1e-12); // sliding apart never increases overlap
        prev = v;
    }
    CHECK(prev == 0.0);
}

TEST_CASE("mask IoU counts set bits") {
    Mask a{4, 3}, b{4, 3};
    a.at(0, 0) = a.at(1, 1) = a.at(2, 2) = 1;
    b.at(1, 1) = b.at(2, 2) = b.at(2, 3) = 1;
    CHECK(iou_mask(a, b) == 0.5); // 2 common / 4 total
    CHECK(iou_mask(a, a) == 1.0);
    CHECK(iou_mask(Mask{4, 3}, Mask{4, 3}) == 1.0); // empty vs empty
    CHECK(iou_mask(Mask{4, 3}, b) == 0.0);
    Mask disjoint{4, 3};
    disjoint.at(0, 3) = 1;
    CHECK(iou_mask(a, disjoint) == 0.0);
    CHECK_THROWS_AS(iou_mask(a, Mask{3, 4}), ValidationError);
}

TEST_CASE("mask IoU matches pixel enumeration on random masks") {
    Rng rng(18);
    for (int trial = 0; trial < 200; ++trial) {
        int w = int(rng.uniform_int(1, 24)), h = int(rng.uniform_int(1, 24));
        Mask a = random_mask(rng, w, h, 0.35), b = random_mask(rng, w, h, 0.35);
        long long inter = 0, uni = 0;
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                inter += a.at(r, c) && b.at(r, c);
                uni += a.at(r, c) || b.at(r, c);
            }
        double want = uni == 0 ? 1.0 : double(inter) / double(uni);
        CHECK(iou_mask(a, b) == want);
    }
}

TEST_CASE("embed_mask drops the core mask at the pad offset") {
    Mask core{3, 2};
    core.at(0, 0) = core.at(1, 2) = 1;
    Mask padded = embed_mask(core, 2, 8, 7);
    CHECK(padded.count() == 2);
    CHECK(padded.at(2, 2) == 1);
    CHECK(padded.at(3, 4) == 1);
    CHECK_THROWS_AS(embed_mask(core, 3, 8, 7), ValidationError); // does not fit
}

TEST_CASE("occluded-region IoU fixed points") {
    // 6x6 canvas, amodal truth is a 4x4 block, lower half hidden
    Mask amodal{6, 6}, visible{6, 6};
    for (int r = 1; r <= 4; ++r)
        for (int c = 1; c <= 4; ++c) amodal.at(r, c) = 1;
    for (int r = 1; r <= 2; ++r)
        for (int c = 1; c <= 4; ++c) visible.at(r, c) = 1;

    // fully visible target: metric undefined
    CHECK(amask_occ_iou(amodal, amodal, amodal) == std::nullopt);
    // prediction equal to the truth: perfect on the hidden part
    CHECK(amask_occ_iou(amodal, amodal, visible) == 1.0);
    // prediction that only covers the visible part: zero on the hidden part
    CHECK(amask_occ_iou(visible, amodal, visible) == 0.0);
    CHECK_THROWS_AS(amask_occ_iou(amodal, amodal, Mask{4, 4}), ValidationError);
}

TEST_CASE("occluded-region IoU matches direct pixel enumeration") {
    Rng rng(19);
    int defined = 0;
    for (int trial = 0; trial < 200; ++trial) {
        int w = int(rng.uniform_int(2, 20)), h = int(rng.uniform_int(2, 20));
        Mask truth = random_mask(rng, w, h, 0.4);
        Mask pred = random_mask(rng, w, h, 0.4);
        Mask vis{w, h};
        for (std::size_t i = 0; i < vis.on.size(); ++i)
            vis.on[i] = truth.on[i] && rng.uniform() < 0.6;

        long long occ = 0, inter = 0, uni = 0;
        for (std::size_t i = 0; i < truth.on.size(); ++i) {
            bool o = truth.on[i] && !vis.on[i];
            occ += o;
            bool p = pred.on[i] && o, t = truth.on[i] && o;
            inter += p && t;
            uni += p || t;
        }
        auto got = amask_occ_iou(pred, truth, vis);
        if (occ == 0) {
            CHECK(got == std::nullopt);
        } else {
            ++defined;
            REQUIRE(got.has_value());
            CHECK(*got == (uni == 0 ? 1.0 : double(inter) / double(uni)));
        }
    }
    CHECK(defined > 100); // the sampler must actually exercise the defined branch
}

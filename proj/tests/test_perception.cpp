#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "common/tiny_world.hpp"
#include "evr/perception.hpp"

using namespace evr;
using Tape = nn::TapeT<float>;

namespace {

Frame object_frame() {
    static Frame f = render_frame(testing::one_box_scene(), {5.0, 1.0, 90.0}, Camera{});
    return f;
}

Frame empty_frame() {
    Scene s;
    s.bounds = {{0, 0}, {10, 10}};
    static Frame f = render_frame(s, {5.0, 1.0, 90.0}, Camera{});
    return f;
}

BoxF object_b0() { return visible_bbox(object_frame(), 1); }

} // namespace

TEST_CASE("zero deltas decode to the anchor") {
    BoxF anchor{10, 20, 50, 40};
    BoxF same = decode_box(anchor, {});
    CHECK(same.x0 == 10);
    CHECK(same.y0 == 20);
    CHECK(same.x1 == 50);
    CHECK(same.y1 == 40);
}

TEST_CASE("log-size deltas scale the box around its center") {
    BoxF anchor{10, 20, 50, 40};
    BoxDeltas d{0, 0, std::log(2.0), std::log(2.0)};
    BoxF out = decode_box(anchor, d);
    CHECK(out.cx() == doctest::Approx(anchor.cx()).epsilon(1e-12));
    CHECK(out.cy() == doctest::Approx(anchor.cy()).epsilon(1e-12));
    CHECK(out.w() == doctest::Approx(2 * anchor.w()).epsilon(1e-12));
    CHECK(out.h() == doctest::Approx(2 * anchor.h()).epsilon(1e-12));
}

TEST_CASE("encode then decode recovers the target box") {
    BoxF anchor{12, 8, 43, 30};
    BoxF target{20, 4, 71, 44};
    BoxDeltas d = encode_box(anchor, target);
    BoxF back = decode_box(anchor, d);
    CHECK(back.x0 == doctest::Approx(target.x0).epsilon(1e-10));
    CHECK(back.y0 == doctest::Approx(target.y0).epsilon(1e-10));
    CHECK(back.x1 == doctest::Approx(target.x1).epsilon(1e-10));
    CHECK(back.y1 == doctest::Approx(target.y1).epsilon(1e-10));
}

TEST_CASE("decode clamps runaway log sizes") {
    BoxF anchor{0, 0, 10, 10};
    BoxF wild = decode_box(anchor, {0, 0, 100.0, -100.0});
    CHECK(wild.w() == doctest::Approx(10 * std::exp(4.0)).epsilon(1e-12));
    CHECK(wild.h() == doctest::Approx(10 * std::exp(-4.0)).epsilon(1e-12));
    CHECK_THROWS_AS(encode_box(BoxF{5, 5, 5, 9}, anchor), ValidationError);
    CHECK_THROWS_AS(encode_box(anchor, BoxF{5, 5, 5, 9}), ValidationError);
    CHECK_THROWS_AS(decode_box(BoxF{5, 5, 5, 9}, {}), ValidationError);
}

TEST_CASE("canvas pixels map onto feature-cell centers") {
    // feature coordinate 0 sits at canvas pixel (stride-1)/2
    BoxF b = box_to_feature_coords(BoxF{7.5, 7.5, 23.5, 23.5}, 16);
    CHECK(b.x0 == 0.0);
    CHECK(b.y0 == 0.0);
    CHECK(b.x1 == 1.0);
    CHECK(b.y1 == 1.0);
    BoxF s = shift_box({1, 2, 3, 4}, 8, 8);
    CHECK(s.x0 == 9);
    CHECK(s.y1 == 12);
}

TEST_CASE("mask target sampling of an aligned rectangle is solid") {
    Mask amodal{40, 40};
    for (int r = 12; r <= 21; ++r)
        for (int c = 10; c <= 19; ++c) amodal.at(r, c) = 1;
    Mask grid = rasterize_mask_target(amodal, BoxF{10, 12, 19, 21});
    CHECK(grid.width == kMaskRes);
    CHECK(grid.count() == std::size_t(kMaskRes) * kMaskRes);
    // a box hanging past the mask border samples zeros outside
    Mask partial = rasterize_mask_target(amodal, BoxF{15, 16, 30, 32});
    CHECK(partial.count() > 0);
    CHECK(partial.count() < std::size_t(kMaskRes) * kMaskRes);
    CHECK_THROWS_AS(rasterize_mask_target(amodal, BoxF{5, 5, 5, 9}), ValidationError);
}

TEST_CASE("an all-half probability grid pastes to an empty mask") {
    std::vector<float> half(std::size_t(kMaskRes) * kMaskRes, 0.5f);
    Mask m = paste_mask_grid(half, kMaskRes, BoxF{5, 5, 20, 20}, 40, 40);
    CHECK(m.count() == 0); // ties resolve to off
}

TEST_CASE("a certain grid pastes to the pixel rectangle spanned by the box") {
    std::vector<float> sure(std::size_t(kMaskRes) * kMaskRes, 1.0f);
    Mask m = paste_mask_grid(sure, kMaskRes, BoxF{3.2, 4.1, 10.8, 12.9}, 30, 30);
    CHECK(m.count() == std::size_t(13 - 4 + 1) * (11 - 3 + 1));
    for (int r = 4; r <= 13; ++r)
        for (int c = 3; c <= 11; ++c) CHECK(m.at(r, c) == 1);
    // the paste clips to the canvas
    Mask clipped = paste_mask_grid(sure, kMaskRes, BoxF{-5, -5, 50, 50}, 30, 30);
    CHECK(clipped.count() == std::size_t(30) * 30);
    CHECK_THROWS_AS(paste_mask_grid({0.5f, 0.5f}, kMaskRes, BoxF{0, 0, 5, 5}, 30, 30),
                    ValidationError);
}

TEST_CASE("sampling a solid pixel-aligned rectangle and pasting it back is lossless") {
    Mask amodal{40, 40};
    for (int r = 8; r <= 23; ++r)
        for (int c = 6; c <= 29; ++c) amodal.at(r, c) = 1;
    BoxF box{6, 8, 29, 23};
    Mask grid = rasterize_mask_target(amodal, box);
    std::vector<float> probs(grid.on.begin(), grid.on.end());
    Mask back = paste_mask_grid(probs, kMaskRes, box, 40, 40);
    CHECK(back == amodal);
}

TEST_CASE("training targets are consistent with the stored truth") {
    const Dataset& ds = testing::small_dataset();
    REQUIRE(!ds.episodes.empty());
    const Episode& ep = ds.episodes.front();
    const Scene& scene = ds.scene_by_id(ep.scene_id);
    PerceptionTargets tgt = make_targets(ep, scene, ds.camera);

    CHECK(tgt.cls == int(scene.find_object(ep.target_id)->category));
    double pad = ds.camera.border_pad;
    CHECK(tgt.anchor.x0 == ep.b0.x0 + pad);
    CHECK(tgt.anchor.y1 == ep.b0.y1 + pad);
    BoxDeltas d = encode_box(tgt.anchor, ep.truth.amodal_box);
    CHECK(tgt.delta[0] == d.tx);
    CHECK(tgt.delta[1] == d.ty);
    CHECK(tgt.delta[2] == d.tw);
    CHECK(tgt.delta[3] == d.th);
    CHECK(tgt.mask == rasterize_mask_target(ep.truth.amodal_mask, ep.truth.amodal_box));
    // every step of an episode regresses the same spawn-frame targets, so the
    // target builder must not depend on anything but the episode itself
    PerceptionTargets again = make_targets(ep, scene, ds.camera);
    CHECK(again.cls == tgt.cls);
    CHECK(again.mask == tgt.mask);
    CHECK(again.delta == tgt.delta);
}

TEST_CASE("network initialization is seeded") {
    PerceptionNet a = PerceptionNet::init(7);
    PerceptionNet b = PerceptionNet::init(7);
    PerceptionNet c = PerceptionNet::init(8);
    REQUIRE(a.store.params.size() == b.store.params.size());
    bool any_diff = false;
    for (const auto& [name, e] : a.store.params) {
        CHECK(e.value == b.store.value(name));
        any_diff = any_diff || !(e.value == c.store.value(name));
    }
    CHECK(any_diff);
    CHECK(a.store.param_count() > 10000);
}

TEST_CASE("backbone features react to scene content deterministically") {
    PerceptionNet net = PerceptionNet::init(3);
    Camera cam;
    Frame a = object_frame(), b = empty_frame();

    Tape t1;
    PerceptionNet::Binder B1(t1, net.store, true);
    int fa = net.base(B1, frame_leaf(t1, a), false);
    const auto va = t1.val(fa);
    CHECK(va.shape == std::vector<int>{kFeatChannels, cam.height / kFeatStride,
                                       cam.width / kFeatStride});

    Tape t2;
    PerceptionNet::Binder B2(t2, net.store, true);
    CHECK(t2.val(net.base(B2, frame_leaf(t2, a), false)) == va); // deterministic

    Tape t3;
    PerceptionNet::Binder B3(t3, net.store, true);
    CHECK(t3.val(net.base(B3, frame_leaf(t3, b), false)) != va); // content-sensitive
}

TEST_CASE("head outputs have the advertised shapes and a valid class row") {
    PerceptionNet net = PerceptionNet::init(4);
    Tape t;
    PerceptionNet::Binder B(t, net.store, true);
    int x = net.base(B, frame_leaf(t, object_frame()), false);
    int h = net.fuse(B, -1, x);
    CHECK(t.val(h).shape == t.val(x).shape);
    auto ho = net.head(B, h, object_b0());
    CHECK(t.val(ho.logits).shape == std::vector<int>{8});
    CHECK(t.val(ho.deltas).shape == std::vector<int>{4});
    CHECK(t.val(ho.mask).shape == std::vector<int>{1, kMaskRes, kMaskRes});
    for (float p : t.val(ho.mask).data) {
        CHECK(p >= 0.f);
        CHECK(p <= 1.f);
    }
}

TEST_CASE("a perfect prediction scores (near) zero loss") {
    PerceptionNet net = PerceptionNet::init(5);
    const Dataset& ds = testing::small_dataset();
    const Episode& ep = ds.episodes.front();
    PerceptionTargets tgt = make_targets(ep, ds.scene_by_id(ep.scene_id), ds.camera);

    Tape t;
    PerceptionNet::Binder B(t, net.store, true);
    nn::TensorT<float> logits = nn::TensorT<float>::zeros({8});
    logits[std::size_t(tgt.cls)] = 50.f;
    nn::TensorT<float> deltas({4}, {float(tgt.delta[0]), float(tgt.delta[1]), float(tgt.delta[2]),
                                    float(tgt.delta[3])});
    nn::TensorT<float> mask = nn::TensorT<float>::zeros({1, kMaskRes, kMaskRes});
    for (std::size_t i = 0; i < tgt.mask.on.size(); ++i) mask[i] = float(tgt.mask.on[i]);
    PerceptionNet::HeadOut perfect{t.leaf(logits), t.leaf(deltas), t.leaf(mask)};
    float loss = t.val(net.step_loss(B, perfect, tgt))[0];
    CHECK(loss >= 0.f);
    CHECK(loss < 1e-6f);

    // and a wrong class with the same margin costs about the full margin
    nn::TensorT<float> bad = nn::TensorT<float>::zeros({8});
    bad[std::size_t((tgt.cls + 1) % 8)] = 50.f;
    PerceptionNet::HeadOut wrong{t.leaf(bad), t.leaf(deltas), t.leaf(mask)};
    CHECK(t.val(net.step_loss(B, wrong, tgt))[0] > 49.f);
}

TEST_CASE("the sequence loss over one step equals that step's own loss") {
    PerceptionNet net = PerceptionNet::init(6);
    const Dataset& ds = testing::small_dataset();
    const Episode& ep = ds.episodes.front();
    const Scene& scene = ds.scene_by_id(ep.scene_id);
    PerceptionTargets tgt = make_targets(ep, scene, ds.camera);
    Frame f0 = render_frame(scene, ep.spawn, ds.camera);
    OccupancyGrid grid = rasterize_occupancy(scene, ds.episode_config.grid_resolution,
                                             ds.episode_config.agent_radius);
    Pose p1 = step(ep.spawn, ep.shortest.front(), grid, ds.episode_config);
    Frame f1 = render_frame(scene, p1, ds.camera);

    Tape t;
    PerceptionNet::Binder B(t, net.store, true);
    std::vector<PerceptionNet::HeadOut> heads;
    int loss = perception_loss(B, net, {&f0, &f1}, ep.b0, tgt, false, false, &heads);
    REQUIRE(heads.size() == 1); // only t=1 contributes a term
    int direct = net.step_loss(B, heads[0], tgt);
    CHECK(t.val(loss)[0] == t.val(direct)[0]);

    // scalar recomputation from the raw head values
    const auto& lg = t.val(heads[0].logits);
    double m = lg[0];
    for (std::size_t i = 1; i < lg.numel(); ++i) m = std::max(m, double(lg[i]));
    double z = 0;
    for (std::size_t i = 0; i < lg.numel(); ++i) z += std::exp(double(lg[i]) - m);
    double ce = m + std::log(z) - lg[std::size_t(tgt.cls)];
    const auto& dv = t.val(heads[0].deltas);
    double sl = 0;
    for (int i = 0; i < 4; ++i) {
        double d = double(dv[std::size_t(i)]) - tgt.delta[std::size_t(i)];
        sl += std::abs(d) < 1 ? 0.5 * d * d : std::abs(d) - 0.5;
    }
    sl /= 4;
    const auto& mk = t.val(heads[0].mask);
    double bce = 0;
    for (std::size_t i = 0; i < mk.numel(); ++i) {
        double p = std::clamp(double(mk[i]), 1e-7, 1.0 - 1e-7);
        double y = tgt.mask.on[i];
        bce += -(y * std::log(p) + (1 - y) * std::log(1 - p));
    }
    bce /= double(mk.numel());
    CHECK(t.val(loss)[0] == doctest::Approx(ce + sl + bce).epsilon(2e-5));

    // passive mode scores the spawn frame only and rejects empty input
    Tape t2;
    PerceptionNet::Binder B2(t2, net.store, true);
    int pl = perception_loss(B2, net, {&f0}, ep.b0, tgt, false, true);
    CHECK(t2.val(pl).numel() == 1);
    CHECK_THROWS_AS(perception_loss(B2, net, {}, ep.b0, tgt, false, true), ValidationError);
    CHECK_THROWS_AS(perception_loss(B2, net, {&f0}, ep.b0, tgt, false, false), ValidationError);
}

TEST_CASE("step-0 predictions depend only on the first frame") {
    PerceptionNet net = PerceptionNet::init(9);
    Camera cam;
    Frame a = object_frame(), b = empty_frame();
    BoxF b0 = object_b0();
    auto ab = predict_sequence(net, {&a, &b}, b0, cam);
    auto aa = predict_sequence(net, {&a, &a}, b0, cam);
    REQUIRE(ab.size() == 2);
    REQUIRE(aa.size() == 2);
    CHECK(ab[0].cls == aa[0].cls);
    CHECK(ab[0].class_probs == aa[0].class_probs);
    CHECK(ab[0].box == aa[0].box);
    CHECK(ab[0].mask == aa[0].mask);
    CHECK(ab[1].mask_grid != aa[1].mask_grid); // the recurrent state saw different frames
}

TEST_CASE("recurrent state advances even on a frozen view") {
    PerceptionNet net = PerceptionNet::init(10);
    Camera cam;
    Frame a = object_frame();
    auto seq = predict_sequence(net, {&a, &a, &a}, object_b0(), cam);
    REQUIRE(seq.size() == 3);
    CHECK(seq[0].mask_grid != seq[1].mask_grid);
    for (const auto& p : seq) {
        CHECK(p.cls >= 0);
        CHECK(p.cls < 8);
        double sum = 0;
        int best = 0;
        for (int k = 0; k < 8; ++k) {
            sum += p.class_probs[std::size_t(k)];
            if (p.class_probs[std::size_t(k)] > p.class_probs[std::size_t(best)]) best = k;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
        CHECK(p.cls == best); // reported class is the argmax
        CHECK(p.mask.width == cam.padded_width());
        CHECK(p.mask.height == cam.padded_height());
    }
}

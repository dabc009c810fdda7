#include "evr/perception.hpp"

#include <cmath>

namespace evr {

BoxDeltas encode_box(const BoxF& anchor, const BoxF& target) {
    if (anchor.w() <= 0 || anchor.h() <= 0)
        throw ValidationError("encode_box: degenerate anchor (zero area)");
    if (target.w() <= 0 || target.h() <= 0)
        throw ValidationError("encode_box: degenerate target (zero area)");
    BoxDeltas d;
    d.tx = (target.cx() - anchor.cx()) / anchor.w();
    d.ty = (target.cy() - anchor.cy()) / anchor.h();
    d.tw = std::log(target.w() / anchor.w());
    d.th = std::log(target.h() / anchor.h());
    return d;
}

BoxF decode_box(const BoxF& anchor, const BoxDeltas& d) {
    if (anchor.w() <= 0 || anchor.h() <= 0)
        throw ValidationError("decode_box: degenerate anchor (zero area)");
    const double tw = std::clamp(d.tw, -kDecodeClamp, kDecodeClamp);
    const double th = std::clamp(d.th, -kDecodeClamp, kDecodeClamp);
    const double cx = anchor.cx() + d.tx * anchor.w();
    const double cy = anchor.cy() + d.ty * anchor.h();
    const double w = anchor.w() * std::exp(tw);
    const double h = anchor.h() * std::exp(th);
    return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

BoxF shift_box(const BoxF& b, double dx, double dy) {
    return {b.x0 + dx, b.y0 + dy, b.x1 + dx, b.y1 + dy};
}

BoxF box_to_feature_coords(const BoxF& canvas_box, int stride) {
    const double half = (stride - 1) / 2.0;
    return {(canvas_box.x0 - half) / stride, (canvas_box.y0 - half) / stride,
            (canvas_box.x1 - half) / stride, (canvas_box.y1 - half) / stride};
}

Mask rasterize_mask_target(const Mask& amodal, const BoxF& box, int res) {
    if (box.w() <= 0 || box.h() <= 0)
        throw ValidationError("rasterize_mask_target: degenerate box (zero area)");
    Mask out(res, res);
    for (int i = 0; i < res; ++i) {
        const double y = box.y0 + box.h() * (i + 0.5) / res;
        const int r = int(std::llround(y));
        for (int j = 0; j < res; ++j) {
            const double x = box.x0 + box.w() * (j + 0.5) / res;
            const int c = int(std::llround(x));
            if (r >= 0 && r < amodal.height && c >= 0 && c < amodal.width)
                out.at(i, j) = amodal.at(r, c);
        }
    }
    return out;
}

Mask paste_mask_grid(const std::vector<float>& probs, int res, const BoxF& box, int canvas_w,
                     int canvas_h) {
    if (int(probs.size()) != res * res)
        throw ValidationError("paste_mask_grid: grid size mismatch");
    Mask out(canvas_w, canvas_h);
    if (box.w() <= 0 || box.h() <= 0) return out;
    const int r0 = std::max(0, int(std::floor(box.y0)));
    const int r1 = std::min(canvas_h - 1, int(std::ceil(box.y1)));
    const int c0 = std::max(0, int(std::floor(box.x0)));
    const int c1 = std::min(canvas_w - 1, int(std::ceil(box.x1)));
    for (int r = r0; r <= r1; ++r) {
        const double v = (r - box.y0) / box.h() * res - 0.5;
        const int i0 = std::clamp(int(std::floor(v)), 0, res - 1);
        const int i1 = std::clamp(i0 + 1, 0, res - 1);
        const double wv = std::clamp(v - std::floor(v), 0.0, 1.0);
        for (int c = c0; c <= c1; ++c) {
            const double u = (c - box.x0) / box.w() * res - 0.5;
            const int j0 = std::clamp(int(std::floor(u)), 0, res - 1);
            const int j1 = std::clamp(j0 + 1, 0, res - 1);
            const double wu = std::clamp(u - std::floor(u), 0.0, 1.0);
            const double p = (1 - wv) * ((1 - wu) * probs[std::size_t(i0) * res + j0] +
                                         wu * probs[std::size_t(i0) * res + j1]) +
                             wv * ((1 - wu) * probs[std::size_t(i1) * res + j0] +
                                   wu * probs[std::size_t(i1) * res + j1]);
            out.at(r, c) = p > 0.5 ? 1 : 0;
        }
    }
    return out;
}

PerceptionTargets make_targets(const Episode& ep, const Scene& scene, const Camera& camera) {
    const ObjectInstance* obj = scene.find_object(ep.target_id);
    if (!obj) throw ValidationError("make_targets: episode target not in scene");
    PerceptionTargets t;
    t.cls = int(obj->category);
    t.anchor = shift_box(ep.b0, camera.border_pad, camera.border_pad);
    const BoxDeltas d = encode_box(t.anchor, ep.truth.amodal_box);
    t.delta = {d.tx, d.ty, d.tw, d.th};
    t.mask = rasterize_mask_target(ep.truth.amodal_mask, ep.truth.amodal_box);
    return t;
}

template <class T>
int frame_leaf(nn::TapeT<T>& tape, const Frame& f) {
    const std::vector<float> rgb = frame_to_rgb(f);
    nn::TensorT<T> t = nn::TensorT<T>::zeros({3, f.height, f.width});
    for (std::size_t i = 0; i < rgb.size(); ++i) t[i] = T(rgb[i]);
    return tape.leaf(std::move(t));
}

namespace {

template <class T>
void kaiming_fill(nn::TensorT<T>& t, int fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / fan_in);
    for (auto& v : t.data) v = T(rng.uniform(-bound, bound));
}

template <class T>
void declare_conv(nn::ParamStoreT<T>& s, const std::string& name, int k, int c, int kh, int kw,
                  Rng& rng) {
    kaiming_fill(s.declare(name + ".w", {k, c, kh, kw}), c * kh * kw, rng);
    s.declare(name + ".b", {k});
}

template <class T>
void declare_linear(nn::ParamStoreT<T>& s, const std::string& name, int out, int in, Rng& rng) {
    kaiming_fill(s.declare(name + ".w", {out, in}), in, rng);
    s.declare(name + ".b", {out});
}

template <class T>
void declare_bn(nn::ParamStoreT<T>& s, const std::string& name, int c) {
    auto& g = s.declare(name + ".g", {c});
    std::fill(g.data.begin(), g.data.end(), T(1));
    s.declare(name + ".b", {c});
    s.buffer(name + ".rm", {c});
    auto& rv = s.buffer(name + ".rv", {c});
    std::fill(rv.data.begin(), rv.data.end(), T(1));
}

} // namespace

template <class T>
PerceptionNetT<T> PerceptionNetT<T>::init(std::uint64_t seed) {
    PerceptionNetT<T> net;
    Rng rng(mix_seed(seed, 0x70657263)); // "perc"
    auto& s = net.store;
    const int chans[5] = {3, 16, 32, 64, kFeatChannels};
    for (int k = 1; k <= 4; ++k) {
        declare_conv(s, "base.c" + std::to_string(k), chans[k], chans[k - 1], 3, 3, rng);
        declare_bn(s, "base.bn" + std::to_string(k), chans[k]);
    }
    const int fc = kFeatChannels;
    for (const char* gate : {"wz", "wr", "wh"}) {
        kaiming_fill(s.declare(std::string("fuse.") + gate, {fc, 2 * fc, 3, 3}), 2 * fc * 9, rng);
        s.declare(std::string("fuse.b") + std::string(1, gate[1]), {fc});
    }
    declare_linear(s, "head.fc", 256, fc * kRoiP * kRoiP, rng);
    declare_linear(s, "head.cls", kNumCategories, 256, rng);
    declare_linear(s, "head.box", 4, 256, rng);
    declare_conv(s, "head.m1", 32, fc, 3, 3, rng);
    declare_conv(s, "head.m2", 16, 32, 3, 3, rng);
    declare_conv(s, "head.m3", 1, 16, 3, 3, rng);
    return net;
}

template <class T>
int PerceptionNetT<T>::base(Binder& B, int rgb, bool train) {
    auto& tape = B.tape();
    int x = rgb;
    for (int k = 1; k <= 4; ++k) {
        const std::string c = "base.c" + std::to_string(k);
        const std::string bn = "base.bn" + std::to_string(k);
        x = nn::conv2d(tape, x, B(c + ".w"), B(c + ".b"), 1, 1);
        x = nn::batchnorm2d(tape, x, B(bn + ".g"), B(bn + ".b"), &B.store(), bn, train);
        x = nn::relu(tape, x);
        x = nn::maxpool2x2(tape, x);
    }
    return x;
}

template <class T>
int PerceptionNetT<T>::fuse(Binder& B, int h_prev, int x_t) {
    auto& tape = B.tape();
    if (h_prev < 0) {
        const auto& xs = tape.val(x_t).shape;
        h_prev = tape.leaf(nn::TensorT<T>::zeros(xs));
    }
    nn::GruWeights<T> w{B("fuse.wz"), B("fuse.bz"), B("fuse.wr"), B("fuse.br"),
                        B("fuse.wh"), B("fuse.bh")};
    return nn::conv_gru_cell(tape, x_t, h_prev, w);
}

template <class T>
typename PerceptionNetT<T>::HeadOut PerceptionNetT<T>::head(Binder& B, int fused,
                                                            const BoxF& b0_core) {
    auto& tape = B.tape();
    if (b0_core.w() <= 0 || b0_core.h() <= 0)
        throw ValidationError("head: degenerate b0 (zero area)");
    const BoxF fbox = box_to_feature_coords(b0_core);
    int roi = nn::roi_bilinear(tape, fused, fbox, kRoiP);
    int flat = nn::reshape(tape, roi, {kFeatChannels * kRoiP * kRoiP});
    int trunk = nn::relu(tape, nn::linear(tape, flat, B("head.fc.w"), B("head.fc.b")));
    HeadOut out;
    out.logits = nn::linear(tape, trunk, B("head.cls.w"), B("head.cls.b"));
    out.deltas = nn::linear(tape, trunk, B("head.box.w"), B("head.box.b"));
    int m = nn::relu(tape, nn::conv2d(tape, roi, B("head.m1.w"), B("head.m1.b"), 1, 1));
    m = nn::resize_bilinear(tape, m, kMaskRes / 2, kMaskRes / 2);
    m = nn::relu(tape, nn::conv2d(tape, m, B("head.m2.w"), B("head.m2.b"), 1, 1));
    m = nn::resize_bilinear(tape, m, kMaskRes, kMaskRes);
    m = nn::conv2d(tape, m, B("head.m3.w"), B("head.m3.b"), 1, 1);
    out.mask = nn::sigmoid(tape, m);
    return out;
}

template <class T>
int PerceptionNetT<T>::step_loss(Binder& B, const HeadOut& h, const PerceptionTargets& tgt) {
    auto& tape = B.tape();
    int ce = nn::cross_entropy(tape, h.logits, tgt.cls);
    nn::TensorT<T> d4({4}, {T(tgt.delta[0]), T(tgt.delta[1]), T(tgt.delta[2]), T(tgt.delta[3])});
    int sl = nn::smooth_l1(tape, h.deltas, std::move(d4));
    nn::TensorT<T> m = nn::TensorT<T>::zeros({1, kMaskRes, kMaskRes});
    for (std::size_t i = 0; i < tgt.mask.on.size(); ++i) m[i] = T(tgt.mask.on[i]);
    int bce = nn::binary_cross_entropy(tape, h.mask, std::move(m));
    return nn::add(tape, nn::add(tape, ce, sl), bce);
}

template <class T>
int perception_loss(nn_detail::Binder<T>& B, PerceptionNetT<T>& net,
                    const std::vector<const Frame*>& frames, const BoxF& b0_core,
                    const PerceptionTargets& tgt, bool train, bool passive,
                    std::vector<typename PerceptionNetT<T>::HeadOut>* heads_out) {
    auto& tape = B.tape();
    if (frames.empty()) throw ValidationError("perception_loss: no frames");
    if (!passive && frames.size() < 2)
        throw ValidationError("perception_loss: active loss needs at least one step after t=0");

    int h = -1;
    if (passive) {
        int x = net.base(B, frame_leaf(tape, *frames[0]), train);
        h = net.fuse(B, h, x);
        auto ho = net.head(B, h, b0_core);
        if (heads_out) heads_out->push_back(ho);
        return net.step_loss(B, ho, tgt);
    }

    int total = -1;
    const int n = int(frames.size()) - 1;
    for (int t = 0; t <= n; ++t) {
        int x = net.base(B, frame_leaf(tape, *frames[std::size_t(t)]), train);
        h = net.fuse(B, h, x);
        if (t == 0) continue;
        auto ho = net.head(B, h, b0_core);
        if (heads_out) heads_out->push_back(ho);
        int l = net.step_loss(B, ho, tgt);
        total = total < 0 ? l : nn::add(tape, total, l);
    }
    return nn::affine(tape, total, 1.0 / n, 0.0);
}

std::vector<StepPrediction> predict_sequence(PerceptionNet& net,
                                             const std::vector<const Frame*>& frames,
                                             const BoxF& b0_core, const Camera& camera) {
    std::vector<StepPrediction> out;
    const BoxF anchor = shift_box(b0_core, camera.border_pad, camera.border_pad);
    nn::TensorT<float> h_val;
    // one tape per step keeps peak memory at a single frame's graph
    for (std::size_t t = 0; t < frames.size(); ++t) {
        nn::TapeT<float> tape;
        PerceptionNet::Binder B(tape, net.store, /*frozen=*/true);
        int x = net.base(B, frame_leaf(tape, *frames[t]), false);
        int h = t == 0 ? net.fuse(B, -1, x) : net.fuse(B, tape.leaf(h_val), x);
        auto ho = net.head(B, h, b0_core);
        h_val = tape.val(h);

        StepPrediction p;
        const auto& logits = tape.val(ho.logits);
        double m = logits[0];
        for (std::size_t i = 1; i < logits.numel(); ++i) m = std::max(m, double(logits[i]));
        double z = 0;
        for (std::size_t i = 0; i < logits.numel(); ++i) z += std::exp(double(logits[i]) - m);
        int best = 0;
        for (std::size_t i = 0; i < logits.numel(); ++i) {
            p.class_probs[i] = std::exp(double(logits[i]) - m) / z;
            if (logits[i] > logits[std::size_t(best)]) best = int(i);
        }
        p.cls = best;
        const auto& dv = tape.val(ho.deltas);
        BoxDeltas d{double(dv[0]), double(dv[1]), double(dv[2]), double(dv[3])};
        p.box = decode_box(anchor, d);
        const auto& mg = tape.val(ho.mask);
        p.mask_grid.assign(mg.data.begin(), mg.data.end());
        p.mask = paste_mask_grid(p.mask_grid, kMaskRes, p.box, camera.padded_width(),
                                 camera.padded_height());
        out.push_back(std::move(p));
    }
    return out;
}

template int frame_leaf<float>(nn::TapeT<float>&, const Frame&);
template int frame_leaf<double>(nn::TapeT<double>&, const Frame&);
template struct PerceptionNetT<float>;
template struct PerceptionNetT<double>;
template int perception_loss<float>(nn_detail::Binder<float>&, PerceptionNetT<float>&,
                                    const std::vector<const Frame*>&, const BoxF&,
                                    const PerceptionTargets&, bool, bool,
                                    std::vector<PerceptionNetT<float>::HeadOut>*);
template int perception_loss<double>(nn_detail::Binder<double>&, PerceptionNetT<double>&,
                                     const std::vector<const Frame*>&, const BoxF&,
                                     const PerceptionTargets&, bool, bool,
                                     std::vector<PerceptionNetT<double>::HeadOut>*);

} // namespace evr

#include "evr/policy.hpp"

#include <cmath>

namespace evr {

double recognition_reward(const StepPrediction& pred, int true_cls, const BoxF& true_box,
                          const Mask& true_mask, const RewardWeights& w) {
    const double acc = pred.cls == true_cls ? 1.0 : 0.0;
    return w.lambda_c * acc + w.lambda_b * iou_box(pred.box, true_box) +
           w.lambda_m * iou_mask(pred.mask, true_mask);
}

std::vector<double> shaped_rewards(const std::vector<double>& r) {
    if (r.size() < 2) throw ValidationError("shaped_rewards: need r_0 and at least one step");
    std::vector<double> out(r.size() - 1);
    for (std::size_t t = 1; t < r.size(); ++t) out[t - 1] = r[t] - r[t - 1];
    return out;
}

std::vector<double> returns_from(const std::vector<double>& shaped) {
    std::vector<double> g(shaped.size());
    double acc = 0;
    for (std::size_t i = shaped.size(); i-- > 0;) {
        acc += shaped[i];
        g[i] = acc;
    }
    return g;
}

template <class T>
int observation_leaf(nn::TapeT<T>& tape, const BoxF& b0_core, const Frame& first,
                     const Frame& current) {
    if (first.width != current.width || first.height != current.height)
        throw ValidationError("observation_leaf: frame dimensions differ");
    const int H = first.height, W = first.width;
    nn::TensorT<T> obs = nn::TensorT<T>::zeros({7, H, W});
    const int c0 = std::clamp(int(std::lround(b0_core.x0)), 0, W - 1);
    const int c1 = std::clamp(int(std::lround(b0_core.x1)), 0, W - 1);
    const int r0 = std::clamp(int(std::lround(b0_core.y0)), 0, H - 1);
    const int r1 = std::clamp(int(std::lround(b0_core.y1)), 0, H - 1);
    for (int r = r0; r <= r1; ++r)
        for (int c = c0; c <= c1; ++c) obs.at3(0, r, c) = T(1);
    const std::vector<float> rgb0 = frame_to_rgb(first);
    const std::vector<float> rgbt = frame_to_rgb(current);
    const std::size_t plane = std::size_t(H) * W;
    for (std::size_t i = 0; i < 3 * plane; ++i) {
        obs[plane + i] = T(rgb0[i]);
        obs[4 * plane + i] = T(rgbt[i]);
    }
    return tape.leaf(std::move(obs));
}

namespace {

template <class T>
void kaiming_fill(nn::TensorT<T>& t, int fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / fan_in);
    for (auto& v : t.data) v = T(rng.uniform(-bound, bound));
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
PolicyNetT<T> PolicyNetT<T>::init(std::uint64_t seed) {
    PolicyNetT<T> net;
    Rng rng(mix_seed(seed, 0x706f6c69)); // "poli"
    auto& s = net.store;
    const int chans[5] = {7, 16, 32, 32, 32};
    for (int k = 1; k <= 4; ++k) {
        const std::string c = "img.c" + std::to_string(k);
        kaiming_fill(s.declare(c + ".w", {chans[k], chans[k - 1], 5, 5}), chans[k - 1] * 25, rng);
        s.declare(c + ".b", {chans[k]});
        declare_bn(s, "img.bn" + std::to_string(k), chans[k]);
    }
    auto& emb = s.declare("act.emb", {kNumActions + 1, kActionEmbedDim});
    for (auto& v : emb.data) v = T(rng.uniform(-0.1, 0.1));
    const int zdim = 32 * 2 * 2; // conv stack output, flattened
    const int in = zdim + kActionEmbedDim + kPolicyHidden;
    for (const char* gate : {"wz", "wr", "wh"}) {
        kaiming_fill(s.declare(std::string("act.") + gate, {kPolicyHidden, in}), in, rng);
        s.declare(std::string("act.b") + std::string(1, gate[1]), {kPolicyHidden});
    }
    kaiming_fill(s.declare("act.out.w", {kNumActions, kPolicyHidden}), kPolicyHidden, rng);
    s.declare("act.out.b", {kNumActions});
    return net;
}

template <class T>
int PolicyNetT<T>::encode_image(Binder& B, int obs, bool train) {
    auto& tape = B.tape();
    int x = nn::resize_bilinear(tape, obs, kPolicyImgH, kPolicyImgW);
    for (int k = 1; k <= 4; ++k) {
        const std::string c = "img.c" + std::to_string(k);
        const std::string bn = "img.bn" + std::to_string(k);
        x = nn::conv2d(tape, x, B(c + ".w"), B(c + ".b"), 1, 2);
        x = nn::batchnorm2d(tape, x, B(bn + ".g"), B(bn + ".b"), &B.store(), bn, train);
        x = nn::relu(tape, x);
        x = nn::maxpool2x2(tape, x);
    }
    return nn::reshape(tape, x, {32 * 2 * 2});
}

template <class T>
typename PolicyNetT<T>::ActOut PolicyNetT<T>::act(Binder& B, int z_img, int h_prev,
                                                  int last_action) {
    auto& tape = B.tape();
    if (last_action < 0 || last_action > kStartToken)
        throw ValidationError("act: last_action out of range");
    if (h_prev < 0) h_prev = tape.leaf(nn::TensorT<T>::zeros({kPolicyHidden}));
    int z_act = nn::embedding_row(tape, B("act.emb"), last_action);
    int inp = nn::concat_vec(tape, z_img, z_act);
    nn::GruWeights<T> w{B("act.wz"), B("act.bz"), B("act.wr"), B("act.br"), B("act.wh"),
                        B("act.bh")};
    ActOut out;
    out.hidden = nn::gru_cell(tape, inp, h_prev, w);
    out.logits = nn::linear(tape, out.hidden, B("act.out.w"), B("act.out.b"));
    out.probs = nn::softmax_vec(tape, out.logits);
    return out;
}

template int observation_leaf<float>(nn::TapeT<float>&, const BoxF&, const Frame&, const Frame&);
template int observation_leaf<double>(nn::TapeT<double>&, const BoxF&, const Frame&, const Frame&);
template struct PolicyNetT<float>;
template struct PolicyNetT<double>;

} // namespace evr

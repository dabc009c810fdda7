#pragma once
#include <array>
#include <map>
#include <string>
#include <vector>

#include "evr/episodes.hpp"
#include "evr/nn/ops.hpp"
#include "evr/render.hpp"
#include "evr/rng.hpp"

namespace evr {

inline constexpr int kFeatChannels = 64; // f_base output channels
inline constexpr int kFeatStride = 16;   // f_base spatial downsampling
inline constexpr int kRoiP = 7;          // RoI crop resolution
inline constexpr int kMaskRes = 28;      // mask grid resolution
inline constexpr double kDecodeClamp = 4.0; // |tw|,|th| clamp at decode time

struct BoxDeltas {
    double tx = 0, ty = 0, tw = 0, th = 0;
};

// Standard box-delta encoding: center offsets scaled by anchor size,
// log size ratios. Both boxes in the same (padded-canvas) coordinates.
BoxDeltas encode_box(const BoxF& anchor, const BoxF& target);
BoxF decode_box(const BoxF& anchor, const BoxDeltas& d);

BoxF shift_box(const BoxF& b, double dx, double dy);

// Pixel (row r, col c) of the canvas maps to feature coordinate
// (r - (stride-1)/2) / stride: integer feature coordinates sit on the
// centers of stride x stride input patches.
BoxF box_to_feature_coords(const BoxF& canvas_box, int stride = kFeatStride);

// Ground-truth mask grid: the amodal mask sampled at res x res points spread
// over the amodal box (nearest neighbor).
Mask rasterize_mask_target(const Mask& amodal, const BoxF& box, int res = kMaskRes);

// Inverse of the rasterizer's sampling: bilinearly resample the probability
// grid over the decoded box and threshold at > 0.5 (ties off). Pixels outside
// the box are off.
Mask paste_mask_grid(const std::vector<float>& probs, int res, const BoxF& box, int canvas_w,
                     int canvas_h);

struct PerceptionTargets {
    int cls = 0;                     // category code
    std::array<double, 4> delta{};   // encoded amodal-box regression target
    Mask mask;                       // kMaskRes x kMaskRes grid
    BoxF anchor;                     // b0 in padded coordinates
};

PerceptionTargets make_targets(const Episode& ep, const Scene& scene, const Camera& camera);

// Decoded per-step output.
struct StepPrediction {
    int cls = 0;
    std::array<double, 8> class_probs{};
    BoxF box;  // padded coordinates
    Mask mask; // padded canvas
    std::vector<float> mask_grid; // raw kMaskRes^2 probabilities
};

namespace nn_detail {

// Creates each named parameter as a tape leaf at most once per tape.
template <class T>
class Binder {
public:
    Binder(nn::TapeT<T>& tape, nn::ParamStoreT<T>& store, bool frozen)
        : tape_(&tape), store_(&store), frozen_(frozen) {}
    int operator()(const std::string& name) {
        auto it = cache_.find(name);
        if (it != cache_.end()) return it->second;
        int id = frozen_ ? tape_->leaf(store_->value(name), false) : tape_->param(*store_, name);
        cache_.emplace(name, id);
        return id;
    }
    nn::TapeT<T>& tape() { return *tape_; }
    nn::ParamStoreT<T>& store() { return *store_; }
    bool frozen() const { return frozen_; }

private:
    nn::TapeT<T>* tape_;
    nn::ParamStoreT<T>* store_;
    bool frozen_;
    std::map<std::string, int> cache_;
};

} // namespace nn_detail

// f_base (4 conv blocks) + f_fuse (conv-GRU) + f_head (class / box / mask).
template <class T>
struct PerceptionNetT {
    nn::ParamStoreT<T> store;

    static PerceptionNetT init(std::uint64_t seed);

    using Binder = nn_detail::Binder<T>;

    // (3, H, W) category-colored raster -> (64, H/16, W/16)
    int base(Binder& B, int rgb, bool train);
    // conv-GRU step; h_prev < 0 means zero initial state
    int fuse(Binder& B, int h_prev, int x_t);

    struct HeadOut {
        int logits; // (8)
        int deltas; // (4)
        int mask;   // (1, kMaskRes, kMaskRes) probabilities
    };
    HeadOut head(Binder& B, int fused, const BoxF& b0_core);

    // Combined class + box + mask loss term for a single step.
    int step_loss(Binder& B, const HeadOut& h, const PerceptionTargets& tgt);
};

using PerceptionNet = PerceptionNetT<float>;

// Build the recognition graph over a frame sequence. Frames are the rendered
// observations I_0..I_n; every step predicts the same first-frame targets.
// When passive is true the loss is the single t=0 term; otherwise it is the
// mean of the t=1..n terms (n >= 1 required).
template <class T>
int perception_loss(nn_detail::Binder<T>& B, PerceptionNetT<T>& net,
                    const std::vector<const Frame*>& frames, const BoxF& b0_core,
                    const PerceptionTargets& tgt, bool train, bool passive,
                    std::vector<typename PerceptionNetT<T>::HeadOut>* heads_out = nullptr);

// Decoded predictions at every step t = 0..n (inference mode, frozen stats).
std::vector<StepPrediction> predict_sequence(PerceptionNet& net,
                                             const std::vector<const Frame*>& frames,
                                             const BoxF& b0_core, const Camera& camera);

// Frame raster as a (3, H, W) tensor leaf.
template <class T>
int frame_leaf(nn::TapeT<T>& tape, const Frame& f);

} // namespace evr

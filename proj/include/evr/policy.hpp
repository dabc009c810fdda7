#pragma once
#include <vector>

#include "evr/episodes.hpp"
#include "evr/metrics.hpp"
#include "evr/nn/ops.hpp"
#include "evr/perception.hpp"

namespace evr {

inline constexpr int kPolicyImgH = 32, kPolicyImgW = 40;
inline constexpr int kActionEmbedDim = 16;
inline constexpr int kPolicyHidden = 128;
inline constexpr int kStartToken = kNumActions; // embedding row for "no action yet"

struct RewardWeights {
    double lambda_c = 0.1, lambda_b = 10.0, lambda_m = 20.0;
};

// r_t = lambda_c * [class correct] + lambda_b * box IoU + lambda_m * mask IoU.
double recognition_reward(const StepPrediction& pred, int true_cls, const BoxF& true_box,
                          const Mask& true_mask, const RewardWeights& w = {});

// R_t = r_t - r_{t-1} for t = 1..T; sum telescopes to r_T - r_0.
std::vector<double> shaped_rewards(const std::vector<double>& r);

// Undiscounted suffix sums G_t = sum_{k>=t} R_k.
std::vector<double> returns_from(const std::vector<double>& shaped);

// Running mean of episode returns, used as the REINFORCE baseline. The
// estimate in effect *before* an episode's update is what that episode
// subtracts.
struct ReturnBaseline {
    double decay = 0.9;
    double mean = 0;
    bool seeded = false;
    double value() const { return seeded ? mean : 0.0; }
    void update(double g) {
        mean = seeded ? decay * mean + (1 - decay) * g : g;
        seeded = true;
    }
};

// pi_imgEnc + pi_actEnc + pi_act.
template <class T>
struct PolicyNetT {
    nn::ParamStoreT<T> store;

    static PolicyNetT init(std::uint64_t seed);

    using Binder = nn_detail::Binder<T>;

    // (7, kPolicyImgH, kPolicyImgW + conv stack) -> flat image code of 128
    int encode_image(Binder& B, int obs, bool train);

    struct ActOut {
        int logits; // (6)
        int probs;  // (6) softmax
        int hidden; // (128)
    };
    // h_prev < 0 means the zero initial state; last_action in 0..5 or
    // kStartToken at t = 0.
    ActOut act(Binder& B, int z_img, int h_prev, int last_action);
};

using PolicyNet = PolicyNetT<float>;

// Observation raster: channel 0 is the b0 box filled on the core canvas,
// channels 1-3 the category-colored first frame, channels 4-6 the current
// frame. All constants, so it enters the tape as one leaf.
template <class T>
int observation_leaf(nn::TapeT<T>& tape, const BoxF& b0_core, const Frame& first,
                     const Frame& current);

} // namespace evr

#pragma once
#include <optional>

#include "evr/geometry.hpp"
#include "evr/render.hpp"

namespace evr {

// Boxes are [x0, y0, x1, y1] with continuous-coordinate arithmetic
// (width = x1 - x0). Two empty boxes count as a perfect match.
double iou_box(const BoxF& a, const BoxF& b);

// Intersection over union of set bits; two empty masks count as a perfect
// match. Shapes must agree.
double iou_mask(const Mask& a, const Mask& b);

// Place a core-resolution mask into the padded canvas at the given border
// offset.
Mask embed_mask(const Mask& core, int pad, int padded_w, int padded_h);

// IoU restricted to the occluded part of the target: the ground-truth amodal
// mask minus the visible mask (both in padded coordinates). Empty occluded
// region means the metric is undefined.
std::optional<double> amask_occ_iou(const Mask& pred_amodal, const Mask& truth_amodal,
                                    const Mask& visible_padded);

} // namespace evr

#include "evr/metrics.hpp"

#include <algorithm>

#include "evr/errors.hpp"

namespace evr {

double iou_box(const BoxF& a, const BoxF& b) {
    const bool ea = a.area() <= 0.0, eb = b.area() <= 0.0;
    if (ea && eb) return 1.0;
    if (ea || eb) return 0.0;
    const double ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
    const double ix1 = std::min(a.x1, b.x1), iy1 = std::min(a.y1, b.y1);
    const double iw = ix1 - ix0, ih = iy1 - iy0;
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    return inter / (a.area() + b.area() - inter);
}

double iou_mask(const Mask& a, const Mask& b) {
    if (a.width != b.width || a.height != b.height)
        throw ValidationError("iou_mask: shape mismatch " + std::to_string(a.width) + "x" +
                              std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                              std::to_string(b.height));
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.on.size(); ++i) {
        bool va = a.on[i] != 0, vb = b.on[i] != 0;
        inter += std::size_t(va && vb);
        uni += std::size_t(va || vb);
    }
    if (uni == 0) return 1.0;
    return double(inter) / double(uni);
}

Mask embed_mask(const Mask& core, int pad, int padded_w, int padded_h) {
    if (core.width + 2 * pad > padded_w || core.height + 2 * pad > padded_h)
        throw ValidationError("embed_mask: core mask does not fit in padded canvas");
    Mask out;
    out.width = padded_w;
    out.height = padded_h;
    out.on.assign(std::size_t(padded_w) * padded_h, 0);
    for (int r = 0; r < core.height; ++r)
        for (int c = 0; c < core.width; ++c)
            out.on[std::size_t(r + pad) * padded_w + std::size_t(c + pad)] = core.at(r, c);
    return out;
}

std::optional<double> amask_occ_iou(const Mask& pred_amodal, const Mask& truth_amodal,
                                    const Mask& visible_padded) {
    if (truth_amodal.width != visible_padded.width || truth_amodal.height != visible_padded.height)
        throw ValidationError("amask_occ_iou: visible mask must be in padded coordinates");
    Mask occ = truth_amodal;
    for (std::size_t i = 0; i < occ.on.size(); ++i)
        occ.on[i] = occ.on[i] && !visible_padded.on[i];
    if (occ.count() == 0) return std::nullopt;
    Mask pred_occ = pred_amodal;
    Mask truth_occ = truth_amodal;
    for (std::size_t i = 0; i < occ.on.size(); ++i) {
        pred_occ.on[i] = pred_occ.on[i] && occ.on[i];
        truth_occ.on[i] = truth_occ.on[i] && occ.on[i];
    }
    return iou_mask(pred_occ, truth_occ);
}

} // namespace evr

#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "evr/errors.hpp"
#include "evr/view.hpp"
#include "evr/world.hpp"

namespace evr {

// Boolean raster. Row-major, row 0 at the top of the image.
struct Mask {
    int width = 0, height = 0;
    std::vector<std::uint8_t> on;
    Mask() = default;
    Mask(int w, int h) : width(w), height(h), on(std::size_t(w) * h, 0) {}
    std::uint8_t& at(int r, int c) { return on[std::size_t(r) * width + c]; }
    std::uint8_t at(int r, int c) const { return on[std::size_t(r) * width + c]; }
    std::size_t count() const;
    bool operator==(const Mask&) const = default;
};

std::string mask_to_rle(const Mask& m);
Mask mask_from_rle(const std::string& text); // throws ParseError

// One rendered observation on the core canvas.
// instance_id: 0 = background, >0 = object id, <0 = wall. category: -1
// background, 0..7 object class, 8 wall. depth: meters along the view ray,
// far clip where nothing is hit.
struct Frame {
    int width = 0, height = 0;
    std::vector<std::int32_t> instance_id;
    std::vector<std::int16_t> category;
    std::vector<float> depth;
    Frame() = default;
    Frame(int w, int h)
        : width(w), height(h),
          instance_id(std::size_t(w) * h, 0),
          category(std::size_t(w) * h, -1),
          depth(std::size_t(w) * h, 0.f) {}
    std::size_t idx(int r, int c) const { return std::size_t(r) * width + c; }
    bool operator==(const Frame&) const = default;
};

// Fixed color per category (plus wall and background) so the networks see a
// category-colored raster instead of photorealistic RGB.
std::array<float, 3> category_color(int category);
// 3 x height x width, channel-major, values in [0,1].
std::vector<float> frame_to_rgb(const Frame& f);

struct AmodalTruth {
    Mask amodal_mask;  // padded canvas
    BoxF amodal_box;   // padded-canvas pixel coords, inclusive indices
    Mask visible_mask; // core canvas
    double visibility = 0;
    bool operator==(const AmodalTruth&) const = default;
};

Frame render_frame(const Scene& scene, const Pose& pose, const Camera& camera);

// Target rendered alone on the padded canvas; visibility from the full frame.
AmodalTruth render_amodal(const Scene& scene, const Pose& pose, const Camera& camera,
                          int target_id);

// Tight box over the target's visible pixels, [min_c, min_r, max_c, max_r].
// Throws ValidationError when the target has no visible pixel.
BoxF visible_bbox(const Frame& frame, int target_id);

// Same for any mask; requires >= 1 set pixel.
BoxF mask_bbox(const Mask& m);

void write_ppm(const std::string& path, const Frame& f);
void write_pgm_depth(const std::string& path, const Frame& f);
void save_mask(const std::string& path, const Mask& m);
Mask load_mask(const std::string& path);

} // namespace evr

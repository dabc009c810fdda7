#include "evr/render.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace evr {

std::size_t Mask::count() const {
    std::size_t n = 0;
    for (auto v : on) n += (v != 0);
    return n;
}

namespace {

struct Prim {
    OrientedBox box;
    double height;
    std::int32_t instance_id;
    std::int16_t category;
};

std::vector<Prim> scene_prims(const Scene& scene) {
    std::vector<Prim> prims;
    prims.reserve(scene.objects.size() + scene.walls.size());
    for (const auto& o : scene.objects)
        prims.push_back({obox_from_rect(o.footprint), o.height, o.id, std::int16_t(o.category)});
    for (std::size_t k = 0; k < scene.walls.size(); ++k)
        prims.push_back({scene.walls[k].obox(), scene.walls[k].height,
                         -std::int32_t(k) - 1, std::int16_t(kWallCategory)});
    return prims;
}

struct ColumnHit {
    double s; // param along the unnormalized 2D ray
    const Prim* prim;
};

// Shared column raycast. Each pixel column of the canvas corresponds to one
// 2D ray; every row of that column reuses its hit list, testing only the
// projected height at the hit distance.
Frame render_canvas(const std::vector<Prim>& prims, const Pose& pose, const Camera& camera,
                    int canvas_w, int canvas_h) {
    Frame frame(canvas_w, canvas_h);
    const double f = camera.focal();
    const double cx = canvas_w * 0.5, cy = canvas_h * 0.5;
    const Vec2 o = pose.pos();
    const Vec2 fwd = pose.forward(), right = pose.right();
    const double eye = camera.eye_height;

    std::vector<ColumnHit> hits;
    for (int j = 0; j < canvas_w; ++j) {
        const double ku = (j + 0.5 - cx) / f;
        const Vec2 dir{fwd.x + right.x * ku, fwd.y + right.y * ku};
        const double dir_norm = dir.norm();
        const double s_near = camera.near_clip / dir_norm;
        const double s_far = camera.far_clip / dir_norm;

        hits.clear();
        for (const auto& p : prims) {
            auto span = ray_obox(o, dir, p.box);
            if (!span) continue;
            double s = span->t0;
            if (s < s_near) {
                if (span->t1 < s_near) continue; // fully behind
                s = s_near;                      // eye inside the prim's column
            }
            if (s > s_far) continue;
            hits.push_back({s, &p});
        }
        std::sort(hits.begin(), hits.end(), [](const ColumnHit& a, const ColumnHit& b) {
            if (a.s != b.s) return a.s < b.s;
            return a.prim->instance_id < b.prim->instance_id;
        });

        for (int i = 0; i < canvas_h; ++i) {
            const double kv = (cy - (i + 0.5)) / f;
            const std::size_t px = frame.idx(i, j);
            frame.depth[px] = float(camera.far_clip);
            for (const auto& h : hits) {
                const double z = eye + h.s * kv;
                if (z >= 0.0 && z <= h.prim->height) {
                    frame.instance_id[px] = h.prim->instance_id;
                    frame.category[px] = h.prim->category;
                    frame.depth[px] =
                        float(h.s * std::sqrt(dir.x * dir.x + dir.y * dir.y + kv * kv));
                    break;
                }
            }
        }
    }
    return frame;
}

} // namespace

Frame render_frame(const Scene& scene, const Pose& pose, const Camera& camera) {
    if (!scene.bounds.contains(pose.pos()))
        throw ValidationError("render_frame: pose outside scene bounds");
    return render_canvas(scene_prims(scene), pose, camera, camera.width, camera.height);
}

AmodalTruth render_amodal(const Scene& scene, const Pose& pose, const Camera& camera,
                          int target_id) {
    const ObjectInstance* obj = scene.find_object(target_id);
    if (!obj) throw ValidationError("render_amodal: unknown target id " + std::to_string(target_id));

    std::vector<Prim> solo{{obox_from_rect(obj->footprint), obj->height, obj->id,
                            std::int16_t(obj->category)}};
    Frame amodal_frame =
        render_canvas(solo, pose, camera, camera.padded_width(), camera.padded_height());

    AmodalTruth truth;
    truth.amodal_mask = Mask(camera.padded_width(), camera.padded_height());
    for (std::size_t i = 0; i < amodal_frame.instance_id.size(); ++i)
        truth.amodal_mask.on[i] = amodal_frame.instance_id[i] == target_id;

    Frame full = render_frame(scene, pose, camera);
    truth.visible_mask = Mask(camera.width, camera.height);
    for (std::size_t i = 0; i < full.instance_id.size(); ++i)
        truth.visible_mask.on[i] = full.instance_id[i] == target_id;

    std::size_t amodal_n = truth.amodal_mask.count();
    std::size_t visible_n = truth.visible_mask.count();
    truth.visibility = amodal_n == 0 ? 0.0 : double(visible_n) / double(amodal_n);
    truth.amodal_box = amodal_n == 0 ? BoxF{} : mask_bbox(truth.amodal_mask);
    return truth;
}

BoxF mask_bbox(const Mask& m) {
    int min_r = m.height, max_r = -1, min_c = m.width, max_c = -1;
    for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c)
            if (m.at(r, c)) {
                min_r = std::min(min_r, r);
                max_r = std::max(max_r, r);
                min_c = std::min(min_c, c);
                max_c = std::max(max_c, c);
            }
    if (max_r < 0) throw ValidationError("mask_bbox: empty mask");
    return {double(min_c), double(min_r), double(max_c), double(max_r)};
}

BoxF visible_bbox(const Frame& frame, int target_id) {
    Mask m(frame.width, frame.height);
    for (std::size_t i = 0; i < frame.instance_id.size(); ++i)
        m.on[i] = frame.instance_id[i] == target_id;
    if (m.count() == 0)
        throw ValidationError("visible_bbox: target " + std::to_string(target_id) +
                              " has no visible pixel");
    return mask_bbox(m);
}

std::array<float, 3> category_color(int category) {
    switch (category) {
        case 0: return {0.90f, 0.10f, 0.10f}; // bed
        case 1: return {0.10f, 0.80f, 0.10f}; // chair
        case 2: return {0.15f, 0.30f, 0.90f}; // desk
        case 3: return {0.90f, 0.85f, 0.10f}; // dresser
        case 4: return {0.10f, 0.85f, 0.85f}; // fridge
        case 5: return {0.85f, 0.10f, 0.85f}; // sofa
        case 6: return {0.95f, 0.55f, 0.10f}; // table
        case 7: return {0.95f, 0.95f, 0.95f}; // washer
        case kWallCategory: return {0.50f, 0.50f, 0.50f};
        default: return {0.f, 0.f, 0.f}; // background
    }
}

std::vector<float> frame_to_rgb(const Frame& f) {
    const std::size_t hw = std::size_t(f.width) * f.height;
    std::vector<float> rgb(3 * hw);
    for (std::size_t i = 0; i < hw; ++i) {
        auto c = category_color(f.category[i]);
        rgb[i] = c[0];
        rgb[hw + i] = c[1];
        rgb[2 * hw + i] = c[2];
    }
    return rgb;
}

void write_ppm(const std::string& path, const Frame& f) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_ppm: cannot open " + path);
    out << "P6\n" << f.width << " " << f.height << "\n255\n";
    for (std::size_t i = 0; i < f.instance_id.size(); ++i) {
        auto c = category_color(f.category[i]);
        unsigned char px[3] = {(unsigned char)(c[0] * 255.f + 0.5f),
                               (unsigned char)(c[1] * 255.f + 0.5f),
                               (unsigned char)(c[2] * 255.f + 0.5f)};
        out.write(reinterpret_cast<char*>(px), 3);
    }
}

void write_pgm_depth(const std::string& path, const Frame& f) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_pgm_depth: cannot open " + path);
    out << "P5\n" << f.width << " " << f.height << "\n255\n";
    float dmax = 1e-6f;
    for (float d : f.depth) dmax = std::max(dmax, d);
    for (float d : f.depth) {
        unsigned char g = (unsigned char)(255.f * (1.f - d / dmax) + 0.5f);
        out.write(reinterpret_cast<char*>(&g), 1);
    }
}

std::string mask_to_rle(const Mask& m) {
    // Alternating run lengths over the row-major raster, starting with an
    // off-run (possibly 0). Line-wrapped at 20 runs for readability.
    std::ostringstream out;
    out << "mask v1\n" << m.width << " " << m.height << "\n";
    std::uint8_t cur = 0;
    std::size_t run = 0, emitted = 0;
    auto emit = [&](std::size_t n) {
        out << n << ((++emitted % 20 == 0) ? "\n" : " ");
    };
    for (auto v : m.on) {
        std::uint8_t b = v != 0;
        if (b == cur) {
            ++run;
        } else {
            emit(run);
            cur = b;
            run = 1;
        }
    }
    emit(run);
    out << "\nend\n";
    return out.str();
}

Mask mask_from_rle(const std::string& text) {
    const char* begin = text.c_str();
    const char* p = begin;
    auto offset = [&]() { return std::size_t(p - begin); };
    auto skip_ws = [&]() { while (*p == ' ' || *p == '\n' || *p == '\t' || *p == '\r') ++p; };
    auto expect = [&](const char* word) {
        skip_ws();
        std::size_t n = std::strlen(word);
        if (std::strncmp(p, word, n) != 0)
            throw ParseError(std::string("mask: expected '") + word + "'", offset());
        p += n;
    };
    auto read_size = [&]() -> long long {
        skip_ws();
        char* end = nullptr;
        long long v = std::strtoll(p, &end, 10);
        if (end == p) throw ParseError("mask: expected integer", offset());
        p = end;
        return v;
    };

    expect("mask");
    expect("v1");
    long long w = read_size(), h = read_size();
    if (w <= 0 || h <= 0) throw ParseError("mask: non-positive dimensions", offset());
    Mask m{int(w), int(h)};
    std::size_t total = std::size_t(w) * std::size_t(h), pos = 0;
    std::uint8_t cur = 0;
    while (pos < total) {
        long long run = read_size();
        if (run < 0 || pos + std::size_t(run) > total)
            throw ParseError("mask: run overflows raster", offset());
        for (long long k = 0; k < run; ++k) m.on[pos++] = cur;
        cur = !cur;
    }
    expect("end");
    skip_ws();
    if (*p != '\0') throw ParseError("mask: trailing data", offset());
    return m;
}

void save_mask(const std::string& path, const Mask& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_mask: cannot open " + path);
    out << mask_to_rle(m);
}

Mask load_mask(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_mask: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return mask_from_rle(ss.str());
}

} // namespace evr

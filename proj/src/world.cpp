#include "evr/world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "evr/render.hpp"
#include "evr/rng.hpp"
#include "evr/textio.hpp"

namespace evr {

const std::array<CategorySpec, kNumCategories>& category_specs() {
    static const std::array<CategorySpec, kNumCategories> specs = {{
        {"bed", 1.4, 2.0, 1.9, 2.2, 0.45, 0.65},
        {"chair", 0.4, 0.6, 0.4, 0.6, 0.80, 1.10},
        {"desk", 1.0, 1.6, 0.5, 0.8, 0.70, 0.78},
        {"dresser", 0.8, 1.4, 0.4, 0.6, 0.90, 1.40},
        {"fridge", 0.6, 0.9, 0.6, 0.9, 1.50, 2.00},
        {"sofa", 1.5, 2.2, 0.8, 1.0, 0.70, 0.90},
        {"table", 0.8, 1.8, 0.8, 1.2, 0.72, 0.78},
        {"washer", 0.55, 0.7, 0.55, 0.7, 0.85, 1.00},
    }};
    return specs;
}

const char* category_name(Category c) { return category_specs()[size_t(c)].name; }

Category category_from_code(int code) {
    if (code < 0 || code >= kNumCategories)
        throw ValidationError("object.category: unknown code " + std::to_string(code));
    return Category(code);
}

const ObjectInstance* Scene::find_object(int object_id) const {
    for (const auto& o : objects)
        if (o.id == object_id) return &o;
    return nullptr;
}

std::pair<int, int> OccupancyGrid::cell_of(Vec2 p) const {
    int cx = int(std::floor((p.x - origin.x) / resolution));
    int cy = int(std::floor((p.y - origin.y) / resolution));
    if (!in_bounds(cx, cy)) return {-1, -1};
    return {cx, cy};
}

bool OccupancyGrid::free_at(Vec2 p) const {
    auto [cx, cy] = cell_of(p);
    if (cx < 0) return false;
    return !is_blocked(cx, cy);
}

OccupancyGrid rasterize_occupancy(const Scene& scene, double resolution, double agent_radius) {
    if (resolution <= 0) throw ValidationError("rasterize_occupancy: resolution must be > 0");
    OccupancyGrid g;
    g.resolution = resolution;
    g.origin = scene.bounds.lo;
    g.width = int(std::ceil(scene.bounds.width() / resolution - 1e-9));
    g.height = int(std::ceil(scene.bounds.height() / resolution - 1e-9));
    g.blocked.assign(std::size_t(g.width) * g.height, 0);

    std::vector<Quad> quads;
    for (const auto& o : scene.objects) quads.push_back(quad_of(o.footprint));
    for (const auto& w : scene.walls) quads.push_back(quad_of(w.obox()));

    for (int cy = 0; cy < g.height; ++cy) {
        for (int cx = 0; cx < g.width; ++cx) {
            Quad cell = quad_of(g.cell_rect(cx, cy));
            for (const auto& q : quads) {
                // Blocked iff positive-area overlap, or strictly inside the
                // agent-radius inflation. Boundary contact at radius 0 stays free.
                if (interiors_intersect(cell, q) || quad_distance(cell, q) < agent_radius) {
                    g.blocked[std::size_t(cy) * g.width + cx] = 1;
                    break;
                }
            }
        }
    }
    return g;
}

void validate_scene(const Scene& scene) {
    if (scene.bounds.width() <= 0 || scene.bounds.height() <= 0)
        throw ValidationError("scene.bounds: empty");
    for (const auto& w : scene.walls) {
        if ((w.b - w.a).norm() <= 0) throw ValidationError("wall.segment: zero length");
        if (w.height <= 0) throw ValidationError("wall.height: must be > 0");
        if (w.thickness < 0) throw ValidationError("wall.thickness: must be >= 0");
    }
    std::vector<int> seen;
    for (const auto& o : scene.objects) {
        category_from_code(int(o.category));
        if (o.footprint.area() <= 0) throw ValidationError("object.footprint: empty");
        if (o.height <= 0) throw ValidationError("object.height: must be > 0");
        if (o.id == 0) throw ValidationError("object.id: zero is reserved for background");
        if (std::count(seen.begin(), seen.end(), o.id))
            throw ValidationError("object.id: duplicate " + std::to_string(o.id));
        seen.push_back(o.id);
        if (!scene.bounds.contains(o.footprint.lo) || !scene.bounds.contains(o.footprint.hi))
            throw ValidationError("object.footprint: outside scene bounds");
    }
    for (std::size_t i = 0; i < scene.objects.size(); ++i)
        for (std::size_t j = i + 1; j < scene.objects.size(); ++j)
            if (rect_overlap_area(scene.objects[i].footprint, scene.objects[j].footprint) > 0)
                throw ValidationError("object.footprint: overlap between ids " +
                                      std::to_string(scene.objects[i].id) + " and " +
                                      std::to_string(scene.objects[j].id));
}

namespace {

// True if some object can be seen at partial visibility from a free cell in
// the spawn band with a wall hiding part of it.
bool occlusion_achievable(const Scene& scene, const OccupancyGrid& grid,
                          const GenerationConfig& cfg) {
    if (scene.walls.empty()) return false; // only walls count as occluders
    const int stride = 2;
    for (const auto& obj : scene.objects) {
        Vec2 centroid = obj.footprint.center();
        for (int cy = 0; cy < grid.height; cy += stride) {
            for (int cx = 0; cx < grid.width; cx += stride) {
                if (grid.is_blocked(cx, cy)) continue;
                Vec2 p = grid.cell_center(cx, cy);
                double dist = (centroid - p).norm();
                if (dist < cfg.spawn_dist_min || dist > cfg.spawn_dist_max) continue;
                double ang = std::atan2(centroid.y - p.y, centroid.x - p.x) * 180.0 / 3.14159265358979323846;
                Pose pose{p.x, p.y, normalize_deg(std::round(ang / 2.0) * 2.0)};
                AmodalTruth truth = render_amodal(scene, pose, cfg.camera, obj.id);
                if (truth.visibility < cfg.occlusion_vis_min ||
                    truth.visibility > cfg.occlusion_vis_max)
                    continue;
                Frame frame = render_frame(scene, pose, cfg.camera);
                const int pad = cfg.camera.border_pad;
                for (int r = 0; r < frame.height; ++r) {
                    for (int c = 0; c < frame.width; ++c) {
                        if (!truth.amodal_mask.at(r + pad, c + pad)) continue;
                        if (truth.visible_mask.at(r, c)) continue;
                        if (frame.category[frame.idx(r, c)] == kWallCategory) return true;
                    }
                }
            }
        }
    }
    return false;
}

bool clear_of(const Quad& q, const Scene& scene, double clearance) {
    for (const auto& o : scene.objects) {
        Quad oq = quad_of(o.footprint);
        if (interiors_intersect(q, oq) || quad_distance(q, oq) < clearance) return false;
    }
    for (const auto& w : scene.walls) {
        Quad wq = quad_of(w.obox());
        if (interiors_intersect(q, wq) || quad_distance(q, wq) < clearance) return false;
    }
    return true;
}

bool try_generate(Rng& rng, const GenerationConfig& cfg, Scene& scene) {
    double half = cfg.bounds_size * 0.5;
    scene.bounds = {{-half, -half}, {half, half}};
    scene.walls.clear();
    scene.objects.clear();

    int wall_count = int(rng.uniform_int(cfg.walls_min, cfg.walls_max));
    for (int k = 0; k < wall_count; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            double u = rng.uniform();
            double angle = u < 0.35 ? 0.0 : (u < 0.7 ? 90.0 : rng.uniform(0.0, 180.0));
            double len = rng.uniform(cfg.wall_len_min, cfg.wall_len_max);
            double margin = len * 0.5 + cfg.wall_thickness;
            Vec2 c{rng.uniform(-half + margin, half - margin),
                   rng.uniform(-half + margin, half - margin)};
            Vec2 dir{deg_cos(angle), deg_sin(angle)};
            Wall w{c - dir * (len * 0.5), c + dir * (len * 0.5),
                   rng.uniform(cfg.wall_height_min, cfg.wall_height_max), cfg.wall_thickness};
            bool inside = true;
            for (Vec2 corner : w.obox().corners())
                inside = inside && scene.bounds.contains(corner);
            if (!inside) continue;
            scene.walls.push_back(w);
            placed = true;
        }
        if (!placed) return false;
    }

    int next_id = 1;
    for (int code = 0; code < kNumCategories; ++code) {
        const CategorySpec& spec = category_specs()[code];
        int n = int(rng.uniform_int(cfg.per_category_min, cfg.per_category_max));
        for (int k = 0; k < n; ++k) {
            bool placed = false;
            for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
                double w = rng.uniform(spec.w_min, spec.w_max);
                double d = rng.uniform(spec.d_min, spec.d_max);
                if (rng.uniform() < 0.5) std::swap(w, d);
                double mx = w * 0.5 + 0.05, my = d * 0.5 + 0.05;
                Vec2 c{rng.uniform(-half + mx, half - mx), rng.uniform(-half + my, half - my)};
                Rect fp{{c.x - w * 0.5, c.y - d * 0.5}, {c.x + w * 0.5, c.y + d * 0.5}};
                if (!clear_of(quad_of(fp), scene, cfg.clearance)) continue;
                scene.objects.push_back(
                    {next_id++, Category(code), fp, rng.uniform(spec.h_min, spec.h_max)});
                placed = true;
            }
            if (!placed) return false;
        }
    }

    OccupancyGrid grid = rasterize_occupancy(scene, cfg.grid_resolution, cfg.agent_radius);
    return occlusion_achievable(scene, grid, cfg);
}

} // namespace

Scene generate_scene(std::uint64_t seed, const GenerationConfig& config) {
    Scene scene;
    scene.id = int(seed & 0x7fffffff);
    scene.rng_seed = seed;
    for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
        Rng rng(mix_seed(seed, std::uint64_t(attempt)));
        if (try_generate(rng, config, scene)) {
            validate_scene(scene);
            return scene;
        }
    }
    throw GenerationError("generate_scene: no valid scene after " +
                          std::to_string(config.max_attempts) + " attempts (seed " +
                          std::to_string(seed) + ")");
}

// ---- text format ----

std::string scene_to_text(const Scene& scene) {
    std::ostringstream out;
    out << "scene v1\n";
    out << "id " << scene.id << "\n";
    out << "seed " << scene.rng_seed << "\n";
    out << "bounds " << g17(scene.bounds.lo.x) << " " << g17(scene.bounds.lo.y) << " "
        << g17(scene.bounds.hi.x) << " " << g17(scene.bounds.hi.y) << "\n";
    out << "walls " << scene.walls.size() << "\n";
    for (const auto& w : scene.walls)
        out << "wall " << g17(w.a.x) << " " << g17(w.a.y) << " " << g17(w.b.x) << " "
            << g17(w.b.y) << " " << g17(w.height) << " " << g17(w.thickness) << "\n";
    out << "objects " << scene.objects.size() << "\n";
    for (const auto& o : scene.objects)
        out << "object " << o.id << " " << int(o.category) << " " << g17(o.footprint.lo.x) << " "
            << g17(o.footprint.lo.y) << " " << g17(o.footprint.hi.x) << " "
            << g17(o.footprint.hi.y) << " " << g17(o.height) << "\n";
    out << "end\n";
    return out.str();
}

Scene scene_from_text(const std::string& text) {
    Cursor c(text, "scene");
    Scene scene;
    c.expect("scene");
    c.expect("v1");
    c.expect("id");
    scene.id = int(c.read_int("id"));
    c.expect("seed");
    scene.rng_seed = std::uint64_t(c.read_u64("seed"));
    c.expect("bounds");
    scene.bounds.lo.x = c.read_double("bounds.x0");
    scene.bounds.lo.y = c.read_double("bounds.y0");
    scene.bounds.hi.x = c.read_double("bounds.x1");
    scene.bounds.hi.y = c.read_double("bounds.y1");
    c.expect("walls");
    long long nw = c.read_int("wall count");
    for (long long i = 0; i < nw; ++i) {
        c.expect("wall");
        Wall w;
        w.a.x = c.read_double("wall.ax");
        w.a.y = c.read_double("wall.ay");
        w.b.x = c.read_double("wall.bx");
        w.b.y = c.read_double("wall.by");
        w.height = c.read_double("wall.height");
        w.thickness = c.read_double("wall.thickness");
        scene.walls.push_back(w);
    }
    c.expect("objects");
    long long no = c.read_int("object count");
    for (long long i = 0; i < no; ++i) {
        c.expect("object");
        ObjectInstance o;
        o.id = int(c.read_int("object.id"));
        o.category = category_from_code(int(c.read_int("object.category")));
        o.footprint.lo.x = c.read_double("object.x0");
        o.footprint.lo.y = c.read_double("object.y0");
        o.footprint.hi.x = c.read_double("object.x1");
        o.footprint.hi.y = c.read_double("object.y1");
        o.height = c.read_double("object.height");
        scene.objects.push_back(o);
    }
    c.expect("end");
    c.skip_ws();
    if (*c.p != '\0') throw ParseError("scene: trailing data", c.offset());
    validate_scene(scene);
    return scene;
}

void save_scene(const Scene& scene, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_scene: cannot open " + path);
    out << scene_to_text(scene);
}

Scene load_scene(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_scene: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return scene_from_text(ss.str());
}

} // namespace evr

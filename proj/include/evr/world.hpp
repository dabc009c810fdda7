#pragma once
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "evr/errors.hpp"
#include "evr/geometry.hpp"
#include "evr/view.hpp"

namespace evr {

// The 8 furniture categories, with stable codes 0..7 used on the wire and
// in checkpoints. kWallCategory marks wall pixels in rendered frames.
enum class Category : int {
    bed = 0,
    chair = 1,
    desk = 2,
    dresser = 3,
    fridge = 4,
    sofa = 5,
    table = 6,
    washer = 7,
};
inline constexpr int kNumCategories = 8;
inline constexpr int kWallCategory = 8;

const char* category_name(Category c);
Category category_from_code(int code); // throws ValidationError on bad code

// Plausible desk-scale footprint and height ranges per category. Heights
// differ across categories so silhouettes carry class information.
struct CategorySpec {
    const char* name;
    double w_min, w_max; // footprint extent along x, meters
    double d_min, d_max; // footprint extent along y, meters
    double h_min, h_max; // extruded height, meters
};
const std::array<CategorySpec, kNumCategories>& category_specs();

struct ObjectInstance {
    int id = 0; // unique, >= 1 (0 is the background code in frames)
    Category category = Category::bed;
    Rect footprint;
    double height = 0;
    bool operator==(const ObjectInstance&) const = default;
};

struct Wall {
    Vec2 a, b;
    double height = 0;
    double thickness = 0;
    OrientedBox obox() const {
        Vec2 d = b - a;
        double len = d.norm();
        return {{(a.x + b.x) * 0.5, (a.y + b.y) * 0.5},
                {d.x / len, d.y / len},
                len * 0.5,
                thickness * 0.5};
    }
    bool operator==(const Wall&) const = default;
};

struct Scene {
    int id = 0;
    Rect bounds;
    std::vector<Wall> walls;
    std::vector<ObjectInstance> objects;
    std::uint64_t rng_seed = 0;
    const ObjectInstance* find_object(int object_id) const;
    bool operator==(const Scene&) const = default;
};

struct OccupancyGrid {
    double resolution = 0;
    int width = 0, height = 0; // cells along x, y
    Vec2 origin;               // world position of cell (0,0)'s low corner
    std::vector<std::uint8_t> blocked;

    bool in_bounds(int cx, int cy) const {
        return cx >= 0 && cx < width && cy >= 0 && cy < height;
    }
    bool is_blocked(int cx, int cy) const { return blocked[std::size_t(cy) * width + cx] != 0; }
    // Cell containing a world point; points outside the grid map to (-1,-1).
    std::pair<int, int> cell_of(Vec2 p) const;
    Rect cell_rect(int cx, int cy) const {
        Vec2 lo{origin.x + cx * resolution, origin.y + cy * resolution};
        return {lo, {lo.x + resolution, lo.y + resolution}};
    }
    Vec2 cell_center(int cx, int cy) const {
        return {origin.x + (cx + 0.5) * resolution, origin.y + (cy + 0.5) * resolution};
    }
    // False for blocked or off-grid positions.
    bool free_at(Vec2 p) const;
};

struct GenerationConfig {
    double bounds_size = 10.0;
    int walls_min = 3, walls_max = 6;
    double wall_len_min = 1.5, wall_len_max = 4.0;
    double wall_height_min = 1.2, wall_height_max = 2.2;
    double wall_thickness = 0.1;
    int per_category_min = 1, per_category_max = 2;
    double clearance = 0.3; // min gap between placed geometry
    int max_attempts = 10000;
    // Occlusion feasibility probe: some object must be seeable from a free
    // cell in the spawn band at partial visibility with a wall as occluder.
    double spawn_dist_min = 3.0, spawn_dist_max = 6.0;
    double occlusion_vis_min = 0.2, occlusion_vis_max = 0.9;
    double grid_resolution = 0.125;
    double agent_radius = 0.2;
    Camera camera;
};

// Deterministic: same (seed, config) gives a bit-identical scene. Throws
// GenerationError once max_attempts rejection rounds are exhausted.
Scene generate_scene(std::uint64_t seed, const GenerationConfig& config);

// A cell is blocked iff it overlaps (positive area) a wall or object
// footprint, or lies strictly closer to one than agent_radius.
OccupancyGrid rasterize_occupancy(const Scene& scene, double resolution, double agent_radius);

void validate_scene(const Scene& scene); // throws ValidationError

void save_scene(const Scene& scene, const std::string& path);
std::string scene_to_text(const Scene& scene);
Scene load_scene(const std::string& path);
Scene scene_from_text(const std::string& text);

} // namespace evr

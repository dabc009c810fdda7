#pragma once
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "evr/render.hpp"
#include "evr/rng.hpp"
#include "evr/world.hpp"

namespace evr {

enum class Action : int {
    MoveForward = 0,
    MoveBackward = 1,
    MoveLeft = 2,
    MoveRight = 3,
    RotateLeft = 4,
    RotateRight = 5,
};
inline constexpr int kNumActions = 6;
const char* action_name(Action a);
Action action_from_code(int code); // throws ValidationError

enum class Split : int { train = 0, val = 1, test = 2 };
const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct EpisodeConfig {
    int T = 10;
    double step_m = 0.25;
    double rot_deg = 2.0;
    double grid_resolution = 0.125;
    double agent_radius = 0.2;
    double dist_min = 3.0, dist_max = 6.0;
    double min_visibility = 0.2;
    double hard_below = 0.5;
    int per_category_cap = 6;
    int spawn_cell_stride = 2; // spawn candidates every Nth grid cell
};

struct Episode {
    int id = 0;
    int scene_id = 0;
    Pose spawn;
    int target_id = 0;
    BoxF b0;         // visible box at spawn, core-canvas pixels
    bool hard = false;
    Split split = Split::train;
    AmodalTruth truth;
    std::vector<Action> shortest; // exactly T actions
    bool evaluable = true;        // truth may be served over the wire
    bool operator==(const Episode&) const = default;
};

// Positions live on a 1/1024 m lattice so that translate-and-return action
// pairs close exactly and axis-aligned moves leave the other axis untouched.
double snap_coord(double v);

// Apply one action. Translations displace step_m along heading-relative
// axes; a translation into a blocked or off-grid cell is a no-op. Rotations
// change heading by rot_deg and never collide.
Pose step(const Pose& pose, Action action, const OccupancyGrid& grid,
          const EpisodeConfig& cfg = {});

using Cell = std::pair<int, int>; // (cx, cy)

// A* on free cells, 4-connected, unit cost, euclidean heuristic.
// Returns the cell path start..goal inclusive, or nullopt when unreachable.
std::optional<std::vector<Cell>> astar(const OccupancyGrid& grid, Cell start, Cell goal);

// Free cell whose center is nearest to p; ties broken by (cy, cx).
std::optional<Cell> nearest_free_cell(const OccupancyGrid& grid, Vec2 p);

// Greedy conversion of a cell path to translations: aim at the next
// waypoint, take the move that most reduces distance to it, advance on exact
// cell membership, and skip ahead when no move strictly improves. With an
// axis-aligned heading and step_m == grid resolution this walks the path
// exactly.
std::vector<Action> path_to_actions(const OccupancyGrid& grid, const Pose& spawn,
                                    const std::vector<Cell>& path, int max_actions,
                                    const EpisodeConfig& cfg = {});

// Rotations that bring the view axis within ±1 degree of aim_at.
std::vector<Action> alignment_rotations(const Pose& pose, Vec2 aim_at, int max_actions);

// Full shortest-path action sequence toward the target, padded/truncated to
// exactly cfg.T actions. Throws Error when no free cell near the target is
// reachable.
std::vector<Action> shortest_path(const OccupancyGrid& grid, const Pose& spawn,
                                  const Scene& scene, int target_id, const EpisodeConfig& cfg);

std::vector<Episode> sample_episodes(const Scene& scene, Rng& rng, const Camera& camera,
                                     const OccupancyGrid& grid, const EpisodeConfig& cfg);

struct TrajectoryStep {
    Pose pose;
    Action action = Action::RotateLeft; // meaningless on the last step
    Frame frame;
};

enum class Provenance : int { shortest = 0, random = 1, active = 2, passive = 3 };

struct Trajectory {
    Provenance provenance = Provenance::passive;
    std::vector<TrajectoryStep> steps; // length T+1
};

// Render the pose sequence produced by executing the given actions.
Trajectory execute_actions(const Scene& scene, const OccupancyGrid& grid, const Pose& spawn,
                           const std::vector<Action>& actions, const Camera& camera,
                           Provenance provenance, const EpisodeConfig& cfg = {});

std::vector<Action> random_actions(Rng& rng, int count);

struct Dataset {
    std::vector<Scene> scenes;
    std::vector<std::pair<int, Split>> scene_splits; // scene id -> split
    std::vector<Episode> episodes;
    Camera camera;
    EpisodeConfig episode_config;

    const Scene& scene_by_id(int id) const; // throws ValidationError
    Split split_of_scene(int id) const;
    std::vector<const Episode*> episodes_of(Split split) const;
};

void validate_dataset(const Dataset& ds);
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

struct DataConfig {
    std::uint64_t seed = 1;
    int train_scenes = 120;
    int val_scenes = 20;
    int test_scenes = 40;
    bool test_truth_evaluable = false; // serve test truth over the wire only when set
    GenerationConfig gen;
    EpisodeConfig episode;
};

// Deterministic dataset assembly: sequential scene ids, splits assigned by
// contiguous index ranges (train, then val, then test), episode ids
// sequential across the whole set. Identical config -> identical dataset.
Dataset build_dataset(const DataConfig& cfg);

} // namespace evr

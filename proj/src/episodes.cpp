#include "evr/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <queue>
#include <set>
#include <sstream>

#include "evr/textio.hpp"

namespace evr {

const char* action_name(Action a) {
    switch (a) {
        case Action::MoveForward: return "MoveForward";
        case Action::MoveBackward: return "MoveBackward";
        case Action::MoveLeft: return "MoveLeft";
        case Action::MoveRight: return "MoveRight";
        case Action::RotateLeft: return "RotateLeft";
        case Action::RotateRight: return "RotateRight";
    }
    return "?";
}

Action action_from_code(int code) {
    if (code < 0 || code >= kNumActions)
        throw ValidationError("action: unknown code " + std::to_string(code));
    return Action(code);
}

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw ValidationError("split: unknown name '" + name + "'");
}

double snap_coord(double v) { return std::round(v * 1024.0) / 1024.0; }

Pose step(const Pose& pose, Action action, const OccupancyGrid& grid, const EpisodeConfig& cfg) {
    switch (action) {
        case Action::RotateLeft:
            return {pose.x, pose.y, normalize_deg(pose.heading_deg - cfg.rot_deg)};
        case Action::RotateRight:
            return {pose.x, pose.y, normalize_deg(pose.heading_deg + cfg.rot_deg)};
        default: break;
    }
    Vec2 dir;
    switch (action) {
        case Action::MoveForward: dir = pose.forward(); break;
        case Action::MoveBackward: dir = pose.forward() * -1.0; break;
        case Action::MoveLeft: dir = pose.right() * -1.0; break;
        case Action::MoveRight: dir = pose.right(); break;
        default: dir = {0, 0}; break;
    }
    Vec2 np{snap_coord(pose.x + cfg.step_m * dir.x), snap_coord(pose.y + cfg.step_m * dir.y)};
    if (!grid.free_at(np)) return pose; // collision: no-op
    return {np.x, np.y, pose.heading_deg};
}

std::optional<Cell> nearest_free_cell(const OccupancyGrid& grid, Vec2 p) {
    bool found = false;
    Cell best{0, 0};
    double best_d = 0;
    for (int cy = 0; cy < grid.height; ++cy) {
        for (int cx = 0; cx < grid.width; ++cx) {
            if (grid.is_blocked(cx, cy)) continue;
            double d = (grid.cell_center(cx, cy) - p).norm();
            if (!found || d < best_d) {
                found = true;
                best = {cx, cy};
                best_d = d;
            }
        }
    }
    if (!found) return std::nullopt;
    return best;
}

std::optional<std::vector<Cell>> astar(const OccupancyGrid& grid, Cell start, Cell goal) {
    if (!grid.in_bounds(start.first, start.second) || !grid.in_bounds(goal.first, goal.second))
        return std::nullopt;
    if (grid.is_blocked(start.first, start.second) || grid.is_blocked(goal.first, goal.second))
        return std::nullopt;

    const std::size_t n = std::size_t(grid.width) * grid.height;
    auto at = [&](Cell c) { return std::size_t(c.second) * grid.width + c.first; };
    auto heur = [&](Cell c) {
        double dx = c.first - goal.first, dy = c.second - goal.second;
        return std::sqrt(dx * dx + dy * dy);
    };

    std::vector<double> g(n, -1.0);
    std::vector<int> parent(n, -1);
    // Priority: lowest f, then lowest h, then (cy, cx). Fully deterministic.
    using QE = std::tuple<double, double, int, int>;
    std::priority_queue<QE, std::vector<QE>, std::greater<QE>> open;
    g[at(start)] = 0;
    open.push({heur(start), heur(start), start.second, start.first});

    const int dx[4] = {1, -1, 0, 0};
    const int dy[4] = {0, 0, 1, -1};
    while (!open.empty()) {
        auto [f, h, cy, cx] = open.top();
        open.pop();
        Cell c{cx, cy};
        double gc = g[at(c)];
        if (f > gc + h + 1e-12) continue; // stale entry
        if (c == goal) break;
        for (int k = 0; k < 4; ++k) {
            Cell nb{cx + dx[k], cy + dy[k]};
            if (!grid.in_bounds(nb.first, nb.second) || grid.is_blocked(nb.first, nb.second))
                continue;
            double ng = gc + 1.0;
            std::size_t ni = at(nb);
            if (g[ni] < 0 || ng < g[ni] - 1e-12) {
                g[ni] = ng;
                parent[ni] = int(at(c));
                open.push({ng + heur(nb), heur(nb), nb.second, nb.first});
            }
        }
    }
    if (g[at(goal)] < 0) return std::nullopt;

    std::vector<Cell> path;
    int idx = int(at(goal));
    while (idx >= 0) {
        path.push_back({idx % grid.width, idx / grid.width});
        idx = parent[std::size_t(idx)];
    }
    std::reverse(path.begin(), path.end());
    return path;
}

std::vector<Action> path_to_actions(const OccupancyGrid& grid, const Pose& spawn,
                                    const std::vector<Cell>& path, int max_actions,
                                    const EpisodeConfig& cfg) {
    std::vector<Action> actions;
    if (path.empty()) return actions;
    Pose pose = spawn;
    std::size_t k = 1; // next waypoint index (path[0] is the start cell)
    std::set<std::pair<long long, long long>> visited;
    const Action moves[4] = {Action::MoveForward, Action::MoveBackward, Action::MoveLeft,
                             Action::MoveRight};

    auto key = [](const Pose& p) {
        return std::pair<long long, long long>{(long long)std::llround(p.x * 1024.0),
                                               (long long)std::llround(p.y * 1024.0)};
    };
    visited.insert(key(pose));

    while (int(actions.size()) < max_actions) {
        Cell here = grid.cell_of(pose.pos());
        for (std::size_t j = k - 1; j < path.size(); ++j)
            if (path[j] == here) k = j + 1;
        if (k >= path.size()) break; // standing in the goal cell

        bool moved = false;
        for (std::size_t aim_idx = k; aim_idx < path.size() && !moved; ++aim_idx) {
            Vec2 w = grid.cell_center(path[aim_idx].first, path[aim_idx].second);
            double d0 = (pose.pos() - w).norm();
            int best = -1;
            double best_d = d0 - 1e-12;
            for (int a = 0; a < 4; ++a) {
                Pose np = step(pose, moves[a], grid, cfg);
                double d = (np.pos() - w).norm();
                if (d < best_d) {
                    best = a;
                    best_d = d;
                }
            }
            if (best >= 0) {
                Pose np = step(pose, moves[best], grid, cfg);
                if (!visited.insert(key(np)).second) return actions; // cycle guard
                pose = np;
                actions.push_back(moves[best]);
                moved = true;
            }
        }
        if (!moved) break; // no waypoint strictly approachable
    }
    return actions;
}

std::vector<Action> alignment_rotations(const Pose& pose, Vec2 aim_at, int max_actions) {
    std::vector<Action> actions;
    double bearing =
        std::atan2(aim_at.y - pose.y, aim_at.x - pose.x) * 180.0 / 3.14159265358979323846;
    double delta = normalize_deg(bearing - pose.heading_deg);
    if (delta > 180.0) delta -= 360.0;
    while (std::abs(delta) > 1.0 + 1e-12 && int(actions.size()) < max_actions) {
        if (delta > 0) {
            actions.push_back(Action::RotateRight);
            delta -= 2.0;
        } else {
            actions.push_back(Action::RotateLeft);
            delta += 2.0;
        }
    }
    return actions;
}

std::vector<Action> shortest_path(const OccupancyGrid& grid, const Pose& spawn,
                                  const Scene& scene, int target_id, const EpisodeConfig& cfg) {
    const ObjectInstance* obj = scene.find_object(target_id);
    if (!obj) throw ValidationError("shortest_path: unknown target id " + std::to_string(target_id));
    Vec2 centroid = obj->footprint.center();

    Cell start = grid.cell_of(spawn.pos());
    if (start.first < 0 || grid.is_blocked(start.first, start.second))
        throw Error("shortest_path: spawn cell not free");
    auto goal = nearest_free_cell(grid, centroid);
    if (!goal) throw Error("shortest_path: no free cell near target");
    auto path = astar(grid, start, *goal);
    if (!path) throw Error("shortest_path: target unreachable from spawn");

    std::vector<Action> actions = path_to_actions(grid, spawn, *path, cfg.T, cfg);
    if (int(actions.size()) < cfg.T) {
        Pose pose = spawn;
        for (Action a : actions) pose = step(pose, a, grid, cfg);
        auto align = alignment_rotations(pose, centroid, cfg.T - int(actions.size()));
        actions.insert(actions.end(), align.begin(), align.end());
    }
    bool left = true;
    while (int(actions.size()) < cfg.T) { // pad with pose-preserving jitter
        actions.push_back(left ? Action::RotateLeft : Action::RotateRight);
        left = !left;
    }
    actions.resize(std::size_t(cfg.T));
    return actions;
}

std::vector<Episode> sample_episodes(const Scene& scene, Rng& rng, const Camera& camera,
                                     const OccupancyGrid& grid, const EpisodeConfig& cfg) {
    struct Candidate {
        Pose pose;
        int target_id;
        AmodalTruth truth;
        BoxF b0;
    };

    std::vector<Episode> out;
    for (int code = 0; code < kNumCategories; ++code) {
        std::vector<Candidate> cands;
        for (const auto& obj : scene.objects) {
            if (int(obj.category) != code) continue;
            Vec2 centroid = obj.footprint.center();
            for (int cy = 0; cy < grid.height; cy += cfg.spawn_cell_stride) {
                for (int cx = 0; cx < grid.width; cx += cfg.spawn_cell_stride) {
                    if (grid.is_blocked(cx, cy)) continue;
                    Vec2 p = grid.cell_center(cx, cy);
                    double dist = (centroid - p).norm();
                    if (dist < cfg.dist_min || dist > cfg.dist_max) continue;
                    double ang = std::atan2(centroid.y - p.y, centroid.x - p.x) * 180.0 /
                                 3.14159265358979323846;
                    Pose pose{snap_coord(p.x), snap_coord(p.y),
                              normalize_deg(std::round(ang / 2.0) * 2.0)};
                    AmodalTruth truth = render_amodal(scene, pose, camera, obj.id);
                    if (truth.visibility < cfg.min_visibility) continue;
                    if (truth.visible_mask.count() == 0) continue;
                    BoxF b0 = mask_bbox(truth.visible_mask);
                    if (b0.w() <= 0 || b0.h() <= 0) continue; // head needs positive area
                    if (truth.amodal_box.w() <= 0 || truth.amodal_box.h() <= 0) continue;
                    cands.push_back({pose, obj.id, std::move(truth), b0});
                }
            }
        }
        rng.shuffle(cands);
        int kept = 0;
        for (auto& c : cands) {
            if (kept >= cfg.per_category_cap) break;
            std::vector<Action> shortest;
            try {
                shortest = shortest_path(grid, c.pose, scene, c.target_id, cfg);
            } catch (const Error&) {
                continue; // unreachable target: discard candidate
            }
            Episode ep;
            ep.id = int(out.size());
            ep.scene_id = scene.id;
            ep.spawn = c.pose;
            ep.target_id = c.target_id;
            ep.b0 = c.b0;
            ep.hard = c.truth.visibility < cfg.hard_below;
            ep.truth = std::move(c.truth);
            ep.shortest = std::move(shortest);
            out.push_back(std::move(ep));
            ++kept;
        }
    }
    return out;
}

Trajectory execute_actions(const Scene& scene, const OccupancyGrid& grid, const Pose& spawn,
                           const std::vector<Action>& actions, const Camera& camera,
                           Provenance provenance, const EpisodeConfig& cfg) {
    Trajectory traj;
    traj.provenance = provenance;
    Pose pose = spawn;
    traj.steps.push_back({pose, Action::RotateLeft, render_frame(scene, pose, camera)});
    for (std::size_t t = 0; t < actions.size(); ++t) {
        traj.steps[t].action = actions[t];
        pose = step(pose, actions[t], grid, cfg);
        traj.steps.push_back({pose, Action::RotateLeft, render_frame(scene, pose, camera)});
    }
    return traj;
}

std::vector<Action> random_actions(Rng& rng, int count) {
    std::vector<Action> actions;
    actions.reserve(std::size_t(count));
    for (int i = 0; i < count; ++i) actions.push_back(Action(rng.uniform_int(0, 5)));
    return actions;
}

// ---- dataset ----

const Scene& Dataset::scene_by_id(int id) const {
    for (const auto& s : scenes)
        if (s.id == id) return s;
    throw ValidationError("dataset: unknown scene id " + std::to_string(id));
}

Split Dataset::split_of_scene(int id) const {
    for (const auto& [sid, split] : scene_splits)
        if (sid == id) return split;
    throw ValidationError("dataset: scene id " + std::to_string(id) + " has no split");
}

std::vector<const Episode*> Dataset::episodes_of(Split split) const {
    std::vector<const Episode*> out;
    for (const auto& e : episodes)
        if (e.split == split) out.push_back(&e);
    return out;
}

void validate_dataset(const Dataset& ds) {
    std::set<int> seen;
    for (const auto& [sid, split] : ds.scene_splits) {
        (void)split;
        if (!seen.insert(sid).second)
            throw ValidationError("dataset: scene " + std::to_string(sid) +
                                  " assigned to more than one split");
    }
    for (const auto& s : ds.scenes) {
        validate_scene(s);
        ds.split_of_scene(s.id);
    }
    for (const auto& e : ds.episodes) {
        const Scene& s = ds.scene_by_id(e.scene_id);
        if (ds.split_of_scene(s.id) != e.split)
            throw ValidationError("dataset: episode " + std::to_string(e.id) +
                                  " split disagrees with its scene");
        if (int(e.shortest.size()) != ds.episode_config.T)
            throw ValidationError("dataset: episode " + std::to_string(e.id) +
                                  " shortest length != T");
        std::size_t amodal_n = e.truth.amodal_mask.count();
        double vis = amodal_n == 0 ? 0.0 : double(e.truth.visible_mask.count()) / double(amodal_n);
        if (vis != e.truth.visibility)
            throw ValidationError("dataset: episode " + std::to_string(e.id) +
                                  " stored visibility is inconsistent with masks");
        if (e.hard != (e.truth.visibility < ds.episode_config.hard_below))
            throw ValidationError("dataset: episode " + std::to_string(e.id) +
                                  " difficulty label inconsistent");
    }
}

namespace {

void write_runs(std::ostream& out, const Mask& m) {
    std::vector<std::size_t> runs;
    std::uint8_t cur = 0;
    std::size_t run = 0;
    for (auto v : m.on) {
        std::uint8_t b = v != 0;
        if (b == cur) {
            ++run;
        } else {
            runs.push_back(run);
            cur = b;
            run = 1;
        }
    }
    runs.push_back(run);
    out << m.width << " " << m.height << " " << runs.size();
    for (auto r : runs) out << " " << r;
}

Mask read_runs(Cursor& c, const char* what) {
    long long w = c.read_int(what), h = c.read_int(what), k = c.read_int(what);
    if (w <= 0 || h <= 0 || k < 0) throw ParseError(std::string(c.ctx) + ": bad mask header", c.offset());
    Mask m{int(w), int(h)};
    std::size_t total = std::size_t(w) * std::size_t(h), pos = 0;
    std::uint8_t cur = 0;
    for (long long i = 0; i < k; ++i) {
        long long run = c.read_int(what);
        if (run < 0 || pos + std::size_t(run) > total)
            throw ParseError(std::string(c.ctx) + ": mask run overflow", c.offset());
        for (long long j = 0; j < run; ++j) m.on[pos++] = cur;
        cur = !cur;
    }
    if (pos != total) throw ParseError(std::string(c.ctx) + ": mask runs incomplete", c.offset());
    return m;
}

std::string box_text(const BoxF& b) {
    return g17(b.x0) + " " + g17(b.y0) + " " + g17(b.x1) + " " + g17(b.y1);
}

BoxF read_box(Cursor& c, const char* what) {
    BoxF b;
    b.x0 = c.read_double(what);
    b.y0 = c.read_double(what);
    b.x1 = c.read_double(what);
    b.y1 = c.read_double(what);
    return b;
}

} // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "scenes");

    for (const auto& s : ds.scenes)
        save_scene(s, (fs::path(dir) / "scenes" / ("scene_" + std::to_string(s.id) + ".scene")).string());

    {
        std::ofstream out(fs::path(dir) / "index.txt", std::ios::binary);
        if (!out) throw IoError("save_dataset: cannot open index.txt");
        const Camera& c = ds.camera;
        const EpisodeConfig& e = ds.episode_config;
        out << "dataset v1\n";
        out << "camera " << c.width << " " << c.height << " " << c.border_pad << " "
            << g17(c.hfov_deg) << " " << g17(c.eye_height) << " " << g17(c.near_clip) << " "
            << g17(c.far_clip) << "\n";
        out << "episode_config " << e.T << " " << g17(e.step_m) << " " << g17(e.rot_deg) << " "
            << g17(e.grid_resolution) << " " << g17(e.agent_radius) << " " << g17(e.dist_min)
            << " " << g17(e.dist_max) << " " << g17(e.min_visibility) << " " << g17(e.hard_below)
            << " " << e.per_category_cap << " " << e.spawn_cell_stride << "\n";
        out << "scenes " << ds.scene_splits.size() << "\n";
        for (const auto& [sid, split] : ds.scene_splits)
            out << "scene " << sid << " " << split_name(split) << "\n";
        out << "end\n";
    }

    {
        std::ofstream out(fs::path(dir) / "episodes.txt", std::ios::binary);
        if (!out) throw IoError("save_dataset: cannot open episodes.txt");
        out << "episodes v1\n";
        out << "count " << ds.episodes.size() << "\n";
        for (const auto& e : ds.episodes) {
            out << "episode " << e.id << " " << e.scene_id << " " << split_name(e.split) << " "
                << e.target_id << "\n";
            out << "spawn " << g17(e.spawn.x) << " " << g17(e.spawn.y) << " "
                << g17(e.spawn.heading_deg) << "\n";
            out << "b0 " << box_text(e.b0) << "\n";
            out << "hard " << int(e.hard) << "\n";
            out << "evaluable " << int(e.evaluable) << "\n";
            out << "visibility " << g17(e.truth.visibility) << "\n";
            out << "abox " << box_text(e.truth.amodal_box) << "\n";
            out << "amodal ";
            write_runs(out, e.truth.amodal_mask);
            out << "\nvisible ";
            write_runs(out, e.truth.visible_mask);
            out << "\nshortest";
            for (Action a : e.shortest) out << " " << int(a);
            out << "\nend_episode\n";
        }
        out << "end\n";
    }
}

Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    Dataset ds;

    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw IoError("load_dataset: cannot open " + p.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };

    {
        std::string text = slurp(fs::path(dir) / "index.txt");
        Cursor c(text, "dataset index");
        c.expect("dataset");
        std::string version = c.read_word("version");
        if (version != "v1")
            throw Error("dataset: unsupported version '" + version + "' (expected v1)");
        c.expect("camera");
        ds.camera.width = int(c.read_int("camera.width"));
        ds.camera.height = int(c.read_int("camera.height"));
        ds.camera.border_pad = int(c.read_int("camera.border_pad"));
        ds.camera.hfov_deg = c.read_double("camera.hfov");
        ds.camera.eye_height = c.read_double("camera.eye_height");
        ds.camera.near_clip = c.read_double("camera.near_clip");
        ds.camera.far_clip = c.read_double("camera.far_clip");
        c.expect("episode_config");
        ds.episode_config.T = int(c.read_int("T"));
        ds.episode_config.step_m = c.read_double("step_m");
        ds.episode_config.rot_deg = c.read_double("rot_deg");
        ds.episode_config.grid_resolution = c.read_double("grid_resolution");
        ds.episode_config.agent_radius = c.read_double("agent_radius");
        ds.episode_config.dist_min = c.read_double("dist_min");
        ds.episode_config.dist_max = c.read_double("dist_max");
        ds.episode_config.min_visibility = c.read_double("min_visibility");
        ds.episode_config.hard_below = c.read_double("hard_below");
        ds.episode_config.per_category_cap = int(c.read_int("per_category_cap"));
        ds.episode_config.spawn_cell_stride = int(c.read_int("spawn_cell_stride"));
        c.expect("scenes");
        long long n = c.read_int("scene count");
        for (long long i = 0; i < n; ++i) {
            c.expect("scene");
            int sid = int(c.read_int("scene.id"));
            Split split = split_from_name(c.read_word("scene.split"));
            ds.scene_splits.push_back({sid, split});
        }
        c.expect("end");
    }

    for (const auto& [sid, split] : ds.scene_splits) {
        (void)split;
        ds.scenes.push_back(
            load_scene((fs::path(dir) / "scenes" / ("scene_" + std::to_string(sid) + ".scene")).string()));
    }

    {
        std::string text = slurp(fs::path(dir) / "episodes.txt");
        Cursor c(text, "episodes");
        c.expect("episodes");
        std::string version = c.read_word("version");
        if (version != "v1")
            throw Error("episodes: unsupported version '" + version + "' (expected v1)");
        c.expect("count");
        long long n = c.read_int("episode count");
        for (long long i = 0; i < n; ++i) {
            Episode e;
            c.expect("episode");
            e.id = int(c.read_int("episode.id"));
            e.scene_id = int(c.read_int("episode.scene"));
            e.split = split_from_name(c.read_word("episode.split"));
            e.target_id = int(c.read_int("episode.target"));
            c.expect("spawn");
            e.spawn.x = c.read_double("spawn.x");
            e.spawn.y = c.read_double("spawn.y");
            e.spawn.heading_deg = c.read_double("spawn.heading");
            c.expect("b0");
            e.b0 = read_box(c, "b0");
            c.expect("hard");
            e.hard = c.read_int("hard") != 0;
            c.expect("evaluable");
            e.evaluable = c.read_int("evaluable") != 0;
            c.expect("visibility");
            e.truth.visibility = c.read_double("visibility");
            c.expect("abox");
            e.truth.amodal_box = read_box(c, "abox");
            c.expect("amodal");
            e.truth.amodal_mask = read_runs(c, "amodal");
            c.expect("visible");
            e.truth.visible_mask = read_runs(c, "visible");
            c.expect("shortest");
            for (int t = 0; t < ds.episode_config.T; ++t)
                e.shortest.push_back(action_from_code(int(c.read_int("shortest action"))));
            c.expect("end_episode");
            ds.episodes.push_back(std::move(e));
        }
        c.expect("end");
    }

    validate_dataset(ds);
    return ds;
}

Dataset build_dataset(const DataConfig& cfg_in) {
    DataConfig cfg = cfg_in;
    // one walkable grid and one spawn band shared by generation and control
    cfg.episode.grid_resolution = cfg.gen.grid_resolution;
    cfg.episode.agent_radius = cfg.gen.agent_radius;
    cfg.episode.dist_min = cfg.gen.spawn_dist_min;
    cfg.episode.dist_max = cfg.gen.spawn_dist_max;
    cfg.episode.min_visibility = cfg.gen.occlusion_vis_min;

    Dataset ds;
    ds.camera = cfg.gen.camera;
    ds.episode_config = cfg.episode;

    const int total = cfg.train_scenes + cfg.val_scenes + cfg.test_scenes;
    int next_episode_id = 1;
    for (int i = 0; i < total; ++i) {
        Split split = i < cfg.train_scenes                  ? Split::train
                      : i < cfg.train_scenes + cfg.val_scenes ? Split::val
                                                              : Split::test;
        Scene scene;
        bool made = false;
        std::string last_err;
        for (int attempt = 0; attempt < 32 && !made; ++attempt) {
            try {
                scene = generate_scene(mix_seed(cfg.seed, std::uint64_t(i) * 64 + attempt + 1),
                                       cfg.gen);
                made = true;
            } catch (const GenerationError& e) {
                last_err = e.what();
            }
        }
        if (!made) throw GenerationError("scene " + std::to_string(i + 1) + ": " + last_err);
        scene.id = i + 1;

        OccupancyGrid grid = rasterize_occupancy(scene, cfg.gen.grid_resolution, cfg.gen.agent_radius);
        Rng rng(mix_seed(cfg.seed, 0xE50000u + std::uint64_t(i)));
        std::vector<Episode> eps = sample_episodes(scene, rng, ds.camera, grid, ds.episode_config);
        for (Episode& ep : eps) {
            ep.id = next_episode_id++;
            ep.scene_id = scene.id;
            ep.split = split;
            ep.evaluable = split != Split::test || cfg.test_truth_evaluable;
        }
        ds.scenes.push_back(std::move(scene));
        ds.scene_splits.emplace_back(i + 1, split);
        ds.episodes.insert(ds.episodes.end(), eps.begin(), eps.end());
    }
    validate_dataset(ds);
    return ds;
}

} // namespace evr

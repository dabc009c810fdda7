#include "evr/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace evr {

using nlohmann::json;

namespace {

// Reads fields strictly: every key present in the JSON object must be known,
// every absent key keeps its default.
class ObjReader {
public:
    ObjReader(const json& j, std::string where) : j_(&j), where_(std::move(where)) {
        if (!j.is_object()) throw ConfigError(where_ + ": expected an object");
    }
    ~ObjReader() = default;

    template <class T>
    void field(const char* key, T& out) {
        seen_.insert(key);
        auto it = j_->find(key);
        if (it == j_->end()) return;
        try {
            out = it->get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }
    const json* sub(const char* key) {
        seen_.insert(key);
        auto it = j_->find(key);
        if (it == j_->end()) return nullptr;
        return &*it;
    }
    void finish() const {
        for (auto it = j_->begin(); it != j_->end(); ++it)
            if (!seen_.count(it.key()))
                throw ConfigError(where_ + ": unknown key \"" + it.key() + "\"");
    }

private:
    const json* j_;
    std::string where_;
    std::set<std::string> seen_;
};

void read_camera(const json& j, Camera& c) {
    ObjReader r(j, "camera");
    r.field("width", c.width);
    r.field("height", c.height);
    r.field("border_pad", c.border_pad);
    r.field("hfov_deg", c.hfov_deg);
    r.field("eye_height", c.eye_height);
    r.field("near_clip", c.near_clip);
    r.field("far_clip", c.far_clip);
    r.finish();
}

void read_gen(const json& j, GenerationConfig& g) {
    ObjReader r(j, "data.generation");
    r.field("bounds_size", g.bounds_size);
    r.field("walls_min", g.walls_min);
    r.field("walls_max", g.walls_max);
    r.field("wall_len_min", g.wall_len_min);
    r.field("wall_len_max", g.wall_len_max);
    r.field("wall_height_min", g.wall_height_min);
    r.field("wall_height_max", g.wall_height_max);
    r.field("wall_thickness", g.wall_thickness);
    r.field("per_category_min", g.per_category_min);
    r.field("per_category_max", g.per_category_max);
    r.field("clearance", g.clearance);
    r.field("max_attempts", g.max_attempts);
    r.field("spawn_dist_min", g.spawn_dist_min);
    r.field("spawn_dist_max", g.spawn_dist_max);
    r.field("occlusion_vis_min", g.occlusion_vis_min);
    r.field("occlusion_vis_max", g.occlusion_vis_max);
    r.field("grid_resolution", g.grid_resolution);
    r.field("agent_radius", g.agent_radius);
    if (const json* cam = r.sub("camera")) read_camera(*cam, g.camera);
    r.finish();
}

void read_episode(const json& j, EpisodeConfig& e) {
    ObjReader r(j, "data.episode");
    r.field("T", e.T);
    r.field("step_m", e.step_m);
    r.field("rot_deg", e.rot_deg);
    r.field("dist_min", e.dist_min);
    r.field("dist_max", e.dist_max);
    r.field("min_visibility", e.min_visibility);
    r.field("hard_below", e.hard_below);
    r.field("per_category_cap", e.per_category_cap);
    r.field("spawn_cell_stride", e.spawn_cell_stride);
    r.finish();
}

void read_data(const json& j, DataConfig& d) {
    ObjReader r(j, "data");
    r.field("seed", d.seed);
    r.field("train_scenes", d.train_scenes);
    r.field("val_scenes", d.val_scenes);
    r.field("test_scenes", d.test_scenes);
    r.field("test_truth_evaluable", d.test_truth_evaluable);
    if (const json* g = r.sub("generation")) read_gen(*g, d.gen);
    if (const json* e = r.sub("episode")) read_episode(*e, d.episode);
    r.finish();
    // the walkable grid is shared between generation and control
    d.episode.grid_resolution = d.gen.grid_resolution;
    d.episode.agent_radius = d.gen.agent_radius;
    d.episode.dist_min = d.gen.spawn_dist_min;
    d.episode.dist_max = d.gen.spawn_dist_max;
    d.episode.min_visibility = d.gen.occlusion_vis_min;
}

void read_train(const json& j, TrainOptions& t) {
    ObjReader r(j, "train");
    r.field("batch_size", t.batch_size);
    r.field("stage1_lr", t.stage1_lr);
    r.field("sgd_momentum", t.sgd_momentum);
    r.field("weight_decay", t.weight_decay);
    r.field("stage1_max_epochs", t.stage1_max_epochs);
    r.field("patience", t.patience);
    r.field("min_improve", t.min_improve);
    r.field("stage2_lr", t.stage2_lr);
    r.field("rms_alpha", t.rms_alpha);
    r.field("rms_eps", t.rms_eps);
    r.field("stage2_episodes", t.stage2_episodes);
    r.field("stage3_lr", t.stage3_lr);
    r.field("stage3_max_epochs", t.stage3_max_epochs);
    r.field("bn_momentum", t.bn_momentum);
    r.finish();
}

void read_eval(const json& j, EvalConfig& e) {
    ObjReader r(j, "eval");
    r.field("workers", e.workers);
    r.field("random_runs", e.random_runs);
    r.finish();
}

json camera_json(const Camera& c) {
    return json{{"width", c.width},           {"height", c.height},
                {"border_pad", c.border_pad}, {"hfov_deg", c.hfov_deg},
                {"eye_height", c.eye_height}, {"near_clip", c.near_clip},
                {"far_clip", c.far_clip}};
}

json config_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["data"] = json{
        {"seed", c.data.seed},
        {"train_scenes", c.data.train_scenes},
        {"val_scenes", c.data.val_scenes},
        {"test_scenes", c.data.test_scenes},
        {"test_truth_evaluable", c.data.test_truth_evaluable},
        {"generation",
         json{{"bounds_size", c.data.gen.bounds_size},
              {"walls_min", c.data.gen.walls_min},
              {"walls_max", c.data.gen.walls_max},
              {"wall_len_min", c.data.gen.wall_len_min},
              {"wall_len_max", c.data.gen.wall_len_max},
              {"wall_height_min", c.data.gen.wall_height_min},
              {"wall_height_max", c.data.gen.wall_height_max},
              {"wall_thickness", c.data.gen.wall_thickness},
              {"per_category_min", c.data.gen.per_category_min},
              {"per_category_max", c.data.gen.per_category_max},
              {"clearance", c.data.gen.clearance},
              {"max_attempts", c.data.gen.max_attempts},
              {"spawn_dist_min", c.data.gen.spawn_dist_min},
              {"spawn_dist_max", c.data.gen.spawn_dist_max},
              {"occlusion_vis_min", c.data.gen.occlusion_vis_min},
              {"occlusion_vis_max", c.data.gen.occlusion_vis_max},
              {"grid_resolution", c.data.gen.grid_resolution},
              {"agent_radius", c.data.gen.agent_radius},
              {"camera", camera_json(c.data.gen.camera)}}},
        {"episode",
         json{{"T", c.data.episode.T},
              {"step_m", c.data.episode.step_m},
              {"rot_deg", c.data.episode.rot_deg},
              {"dist_min", c.data.episode.dist_min},
              {"dist_max", c.data.episode.dist_max},
              {"min_visibility", c.data.episode.min_visibility},
              {"hard_below", c.data.episode.hard_below},
              {"per_category_cap", c.data.episode.per_category_cap},
              {"spawn_cell_stride", c.data.episode.spawn_cell_stride}}},
    };
    j["train"] = json{{"batch_size", c.train.batch_size},
                      {"stage1_lr", c.train.stage1_lr},
                      {"sgd_momentum", c.train.sgd_momentum},
                      {"weight_decay", c.train.weight_decay},
                      {"stage1_max_epochs", c.train.stage1_max_epochs},
                      {"patience", c.train.patience},
                      {"min_improve", c.train.min_improve},
                      {"stage2_lr", c.train.stage2_lr},
                      {"rms_alpha", c.train.rms_alpha},
                      {"rms_eps", c.train.rms_eps},
                      {"stage2_episodes", c.train.stage2_episodes},
                      {"stage3_lr", c.train.stage3_lr},
                      {"stage3_max_epochs", c.train.stage3_max_epochs},
                      {"bn_momentum", c.train.bn_momentum}};
    j["eval"] = json{{"workers", c.eval.workers}, {"random_runs", c.eval.random_runs}};
    return j;
}

void validate(const RunConfig& c) {
    auto bad = [](const std::string& msg) { throw ConfigError("config: " + msg); };
    if (c.data.train_scenes < 0 || c.data.val_scenes < 0 || c.data.test_scenes < 0)
        bad("scene counts must be non-negative");
    if (c.data.episode.T < 1) bad("episode.T must be >= 1");
    if (c.train.batch_size < 1) bad("train.batch_size must be >= 1");
    if (c.eval.workers < 1) bad("eval.workers must be >= 1");
    if (c.eval.random_runs < 1) bad("eval.random_runs must be >= 1");
    const Camera& cam = c.data.gen.camera;
    if (cam.width < 16 || cam.height < 16) bad("camera too small (min 16x16)");
    if (cam.border_pad < 0) bad("camera.border_pad must be >= 0");
    if (c.data.gen.spawn_dist_min > c.data.gen.spawn_dist_max) bad("spawn distance range inverted");
}

} // namespace

RunConfig default_config() { return RunConfig{}; }

RunConfig config_from_text(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(origin + ": " + e.what());
    }
    RunConfig c;
    ObjReader r(j, origin);
    r.field("seed", c.seed);
    r.field("out_dir", c.out_dir);
    if (const json* d = r.sub("data")) read_data(*d, c.data);
    else {
        // defaults still need the generation/control field coupling
        json empty = json::object();
        read_data(empty, c.data);
    }
    if (const json* t = r.sub("train")) read_train(*t, c.train);
    if (const json* e = r.sub("eval")) read_eval(*e, c.eval);
    r.finish();
    validate(c);
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_text(ss.str(), path);
}

std::string config_to_text(const RunConfig& c) { return config_json(c).dump(2) + "\n"; }

std::string config_hash(const RunConfig& c) {
    json j = config_json(c);
    j.erase("out_dir");
    j["eval"].erase("workers"); // execution detail; never affects artifact bytes
    const std::string s = j.dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_config(const RunConfig& c, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write config " + path);
    out << config_to_text(c);
}

} // namespace evr

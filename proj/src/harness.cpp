#include "evr/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>
#include <tuple>

#include "evr/textio.hpp"

namespace evr {

namespace fs = std::filesystem;

// ---- baseline specs ----

const char* path_kind_name(PathKind k) {
    switch (k) {
        case PathKind::passive: return "PP";
        case PathKind::passive_replicated: return "PP*";
        case PathKind::random: return "RP";
        case PathKind::shortest: return "SP";
        case PathKind::active: return "AP";
    }
    throw ValidationError("path_kind_name: bad kind");
}

const std::vector<std::string>& all_baseline_names() {
    static const std::vector<std::string> names = {"PP/PP", "SP/PP", "SP/PP*", "SP/RP",
                                                   "SP/SP", "SP/AP", "AP/AP"};
    return names;
}

BaselineSpec parse_baseline(const std::string& name) {
    static const std::map<std::string, BaselineSpec> table = {
        {"PP/PP", {PathKind::passive, PathKind::passive}},
        {"SP/PP", {PathKind::shortest, PathKind::passive}},
        {"SP/PP*", {PathKind::shortest, PathKind::passive_replicated}},
        {"SP/RP", {PathKind::shortest, PathKind::random}},
        {"SP/SP", {PathKind::shortest, PathKind::shortest}},
        {"SP/AP", {PathKind::shortest, PathKind::active}},
        {"AP/AP", {PathKind::active, PathKind::active}},
    };
    auto it = table.find(name);
    if (it == table.end()) {
        std::string all;
        for (const auto& n : all_baseline_names()) all += (all.empty() ? "" : ", ") + n;
        throw ValidationError("unknown baseline \"" + name + "\" (expected one of: " + all + ")");
    }
    return it->second;
}

std::string baseline_name(const BaselineSpec& spec) {
    return std::string(path_kind_name(spec.train_path)) + "/" + path_kind_name(spec.test_path);
}

std::string perception_ckpt_name(PathKind train_path) {
    switch (train_path) {
        case PathKind::passive: return "perception_pp.ckpt";
        case PathKind::shortest: return "perception_sp.ckpt";
        case PathKind::active: return "perception_ap.ckpt";
        default: throw ValidationError("no perception checkpoint for this train path");
    }
}

const char* metric_name(Metric m) {
    switch (m) {
        case Metric::clss_acc: return "clss_acc";
        case Metric::abox_iou: return "abox_iou";
        case Metric::amask_iou: return "amask_iou";
        case Metric::amask_occ_iou: return "amask_occ_iou";
    }
    throw ValidationError("metric_name: bad metric");
}

const char* subset_name(Subset s) {
    switch (s) {
        case Subset::all: return "all";
        case Subset::easy: return "easy";
        case Subset::hard: return "hard";
    }
    throw ValidationError("subset_name: bad subset");
}

// ---- shared helpers ----

namespace {

struct GridCache {
    const Dataset* ds;
    std::map<int, OccupancyGrid> grids;
    const OccupancyGrid& get(int scene_id) {
        auto it = grids.find(scene_id);
        if (it == grids.end()) {
            const Scene& sc = ds->scene_by_id(scene_id);
            it = grids
                     .emplace(scene_id, rasterize_occupancy(sc, ds->episode_config.grid_resolution,
                                                            ds->episode_config.agent_radius))
                     .first;
        }
        return it->second;
    }
};

std::vector<const Frame*> frame_ptrs(const std::vector<Frame>& fs) {
    std::vector<const Frame*> p;
    p.reserve(fs.size());
    for (const auto& f : fs) p.push_back(&f);
    return p;
}

std::vector<Frame> trajectory_frames(const Trajectory& tr) {
    std::vector<Frame> fs;
    fs.reserve(tr.steps.size());
    for (const auto& s : tr.steps) fs.push_back(s.frame);
    return fs;
}

void require_meta(const std::map<std::string, std::string>& meta, const std::string& key,
                  const std::string& want, const std::string& path) {
    auto it = meta.find(key);
    if (it == meta.end() || it->second != want)
        throw ConfigError("checkpoint " + path + ": expected " + key + "=" + want + ", found " +
                          (it == meta.end() ? std::string("<missing>") : it->second));
}

double val_mask_iou(PerceptionNet& net, const Dataset& ds, GridCache& grids,
                    const std::vector<const Episode*>& eps, bool passive) {
    if (eps.empty()) throw ValidationError("validation split is empty");
    double sum = 0;
    for (const Episode* ep : eps) {
        const Scene& scene = ds.scene_by_id(ep->scene_id);
        std::vector<Frame> frames;
        if (passive) {
            frames.push_back(render_frame(scene, ep->spawn, ds.camera));
        } else {
            Trajectory tr = execute_actions(scene, grids.get(ep->scene_id), ep->spawn,
                                            ep->shortest, ds.camera, Provenance::shortest,
                                            ds.episode_config);
            frames = trajectory_frames(tr);
        }
        auto preds = predict_sequence(net, frame_ptrs(frames), ep->b0, ds.camera);
        sum += iou_mask(preds.back().mask, ep->truth.amodal_mask);
    }
    return sum / double(eps.size());
}

std::ofstream open_out(const std::string& path, const char* what) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError(std::string(what) + ": cannot open " + path + " for writing");
    return out;
}

} // namespace

// ---- stage 1 ----

StageResult run_stage1(const Dataset& ds, bool passive, const TrainOptions& opt,
                       std::uint64_t seed, const std::string& ckpt_out,
                       const std::string& curve_csv, const std::string& config_hash) {
    PerceptionNet net = PerceptionNet::init(seed);
    auto train_eps = ds.episodes_of(Split::train);
    auto val_eps = ds.episodes_of(Split::val);
    if (train_eps.empty()) throw ValidationError("stage 1: train split is empty");
    GridCache grids{&ds, {}};

    std::ofstream curve = open_out(curve_csv, "stage 1 curve");
    curve << "epoch,train_loss,val_amask_iou\n";

    double best = -1;
    int best_epoch = -1;
    nn::ParamStoreT<float> best_store;
    long batch_id = 0;
    int epoch = 0;
    net.store.zero_grad();
    for (; epoch < opt.stage1_max_epochs; ++epoch) {
        std::vector<const Episode*> order(train_eps);
        Rng order_rng(mix_seed(seed, 0x1000 + std::uint64_t(epoch)));
        order_rng.shuffle(order);

        double loss_sum = 0;
        int in_batch = 0;
        for (std::size_t i = 0; i < order.size(); ++i) {
            const Episode& ep = *order[i];
            const Scene& scene = ds.scene_by_id(ep.scene_id);
            std::vector<Frame> frames;
            if (passive) {
                frames.push_back(render_frame(scene, ep.spawn, ds.camera));
            } else {
                Trajectory tr = execute_actions(scene, grids.get(ep.scene_id), ep.spawn,
                                                ep.shortest, ds.camera, Provenance::shortest,
                                                ds.episode_config);
                frames = trajectory_frames(tr);
            }
            PerceptionTargets tgt = make_targets(ep, scene, ds.camera);

            nn::TapeT<float> tape;
            PerceptionNet::Binder B(tape, net.store, false);
            int loss = perception_loss(B, net, frame_ptrs(frames), ep.b0, tgt, true, passive);
            const float lv = tape.val(loss)[0];
            if (!std::isfinite(lv))
                throw Error("stage 1 diverged: non-finite loss at batch " +
                            std::to_string(batch_id));
            loss_sum += lv;
            tape.backward(loss);
            tape.flush_bn(opt.bn_momentum);
            ++in_batch;
            if (in_batch == opt.batch_size || i + 1 == order.size()) {
                nn::scale_grads(net.store, 1.0 / in_batch);
                nn::sgd_step(net.store, opt.stage1_lr, opt.sgd_momentum, opt.weight_decay);
                net.store.zero_grad();
                in_batch = 0;
                ++batch_id;
            }
        }

        const double val = val_mask_iou(net, ds, grids, val_eps, passive);
        curve << epoch << "," << g17(loss_sum / double(order.size())) << "," << g17(val) << "\n";
        if (val > best + opt.min_improve) {
            best = val;
            best_epoch = epoch;
            best_store = net.store;
        } else if (epoch - best_epoch >= opt.patience) {
            ++epoch;
            break;
        }
    }

    net.store = std::move(best_store);
    net.store.metadata["kind"] = "perception";
    net.store.metadata["stage"] = "1";
    net.store.metadata["train_path"] = passive ? "passive" : "shortest";
    net.store.metadata["seed"] = std::to_string(seed);
    net.store.metadata["epochs"] = std::to_string(epoch);
    net.store.metadata["best_val"] = g17(best);
    net.store.metadata["config"] = config_hash;
    fs::path cp(ckpt_out);
    if (cp.has_parent_path()) fs::create_directories(cp.parent_path());
    nn::save_checkpoint(net.store, ckpt_out);
    return {epoch, best};
}

// ---- stage 2 ----

StageResult run_stage2(const Dataset& ds, const std::string& perception_ckpt,
                       const TrainOptions& opt, std::uint64_t seed, const std::string& ckpt_out,
                       const std::string& curve_csv, const std::string& reward_log_csv,
                       const std::string& config_hash) {
    if (!fs::exists(perception_ckpt))
        throw ConfigError("missing checkpoint " + perception_ckpt + " (run stage 1 first)");
    PerceptionNet per;
    per.store = nn::load_checkpoint<float>(perception_ckpt);
    require_meta(per.store.metadata, "kind", "perception", perception_ckpt);
    require_meta(per.store.metadata, "stage", "1", perception_ckpt);

    PolicyNet pol = PolicyNet::init(seed);
    auto train_eps = ds.episodes_of(Split::train);
    if (train_eps.empty()) throw ValidationError("stage 2: train split is empty");
    GridCache grids{&ds, {}};
    const int T = ds.episode_config.T;
    const Camera& cam = ds.camera;

    std::ofstream curve = open_out(curve_csv, "stage 2 curve");
    curve << "episode,return,baseline,loss,skipped\n";
    std::ofstream rlog = open_out(reward_log_csv, "stage 2 reward log");
    rlog << "episode,t,r,R,action,log_prob\n";

    ReturnBaseline baseline;
    std::vector<const Episode*> order(train_eps);
    std::size_t cursor = order.size();
    int pass = 0;
    long skipped = 0;
    for (int i = 0; i < opt.stage2_episodes; ++i) {
        if (cursor == order.size()) {
            Rng r(mix_seed(seed, 0x2000 + std::uint64_t(pass++)));
            r.shuffle(order);
            cursor = 0;
        }
        const Episode& ep = *order[cursor++];
        const Scene& scene = ds.scene_by_id(ep.scene_id);
        const OccupancyGrid& grid = grids.get(ep.scene_id);
        Rng ep_rng(mix_seed(seed, 0xA0000 + std::uint64_t(i)));

        nn::TapeT<float> tape;
        PolicyNet::Binder B(tape, pol.store, false);
        Pose pose = ep.spawn;
        std::vector<Frame> frames{render_frame(scene, pose, cam)};
        std::vector<int> lp_nodes;
        std::vector<int> taken;
        int h = -1, last = kStartToken;
        for (int t = 1; t <= T; ++t) {
            int obs = observation_leaf(tape, ep.b0, frames.front(), frames.back());
            int z = pol.encode_image(B, obs, /*train=*/true);
            auto ao = pol.act(B, z, h, last);
            h = ao.hidden;
            const auto& pv = tape.val(ao.probs);
            int a = ep_rng.choice(std::vector<double>(pv.data.begin(), pv.data.end()));
            lp_nodes.push_back(nn::pick(tape, nn::log_softmax_vec(tape, ao.logits), a));
            taken.push_back(a);
            pose = step(pose, Action(a), grid, ds.episode_config);
            frames.push_back(render_frame(scene, pose, cam));
            last = a;
        }

        auto preds = predict_sequence(per, frame_ptrs(frames), ep.b0, cam);
        const ObjectInstance* obj = scene.find_object(ep.target_id);
        std::vector<double> r(std::size_t(T) + 1);
        for (int t = 0; t <= T; ++t)
            r[std::size_t(t)] = recognition_reward(preds[std::size_t(t)], int(obj->category),
                                                   ep.truth.amodal_box, ep.truth.amodal_mask);
        const auto R = shaped_rewards(r);
        const auto G = returns_from(R);
        const double b = baseline.value();

        int total = -1;
        for (int t = 0; t < T; ++t) {
            int term = nn::affine(tape, lp_nodes[std::size_t(t)], -(G[std::size_t(t)] - b), 0.0);
            total = total < 0 ? term : nn::add(tape, total, term);
        }
        const float lv = tape.val(total)[0];
        pol.store.zero_grad();
        tape.backward(total);
        bool ok = std::isfinite(lv) && nn::grads_finite(pol.store);
        if (ok) {
            nn::rmsprop_step(pol.store, opt.stage2_lr, opt.rms_alpha, opt.rms_eps);
            tape.flush_bn(opt.bn_momentum);
        } else {
            ++skipped;
        }
        pol.store.zero_grad();
        baseline.update(G[0]);

        curve << i << "," << g17(G[0]) << "," << g17(b) << "," << g17(lv) << "," << (ok ? 0 : 1)
              << "\n";
        rlog << ep.id << ",0," << g17(r[0]) << ",,,\n";
        for (int t = 1; t <= T; ++t)
            rlog << ep.id << "," << t << "," << g17(r[std::size_t(t)]) << ","
                 << g17(R[std::size_t(t) - 1]) << "," << taken[std::size_t(t) - 1] << ","
                 << g17(double(tape.val(lp_nodes[std::size_t(t) - 1])[0])) << "\n";
    }

    pol.store.metadata["kind"] = "policy";
    pol.store.metadata["stage"] = "2";
    pol.store.metadata["seed"] = std::to_string(seed);
    pol.store.metadata["episodes"] = std::to_string(opt.stage2_episodes);
    pol.store.metadata["skipped_updates"] = std::to_string(skipped);
    pol.store.metadata["config"] = config_hash;
    fs::path cp(ckpt_out);
    if (cp.has_parent_path()) fs::create_directories(cp.parent_path());
    nn::save_checkpoint(pol.store, ckpt_out);
    return {opt.stage2_episodes, baseline.mean};
}

// ---- policy rollout (frozen nets) ----

Trajectory rollout_policy(const Scene& scene, const OccupancyGrid& grid, const Episode& ep,
                          PolicyNet& policy, Rng* rng, const Camera& camera,
                          const EpisodeConfig& cfg) {
    Trajectory tr;
    tr.provenance = Provenance::active;
    Pose pose = ep.spawn;
    Frame first = render_frame(scene, pose, camera);
    Frame current = first;
    nn::TensorT<float> h_val;
    int last = kStartToken;
    for (int t = 1; t <= cfg.T; ++t) {
        nn::TapeT<float> tape;
        PolicyNet::Binder B(tape, policy.store, /*frozen=*/true);
        int obs = observation_leaf(tape, ep.b0, first, current);
        int z = policy.encode_image(B, obs, /*train=*/false);
        int h = t == 1 ? -1 : tape.leaf(h_val);
        auto ao = policy.act(B, z, h, last);
        h_val = tape.val(ao.hidden);
        const auto& pv = tape.val(ao.probs);
        int a;
        if (rng) {
            a = rng->choice(std::vector<double>(pv.data.begin(), pv.data.end()));
        } else {
            a = 0;
            for (std::size_t k = 1; k < pv.numel(); ++k)
                if (pv[k] > pv[std::size_t(a)]) a = int(k);
        }
        tr.steps.push_back({pose, Action(a), std::move(current)});
        pose = step(pose, Action(a), grid, cfg);
        current = render_frame(scene, pose, camera);
        last = a;
    }
    tr.steps.push_back({pose, Action::RotateLeft, std::move(current)});
    return tr;
}

// ---- stage 3 ----

StageResult run_stage3(const Dataset& ds, const std::string& perception_ckpt,
                       const std::string& policy_ckpt, const TrainOptions& opt,
                       std::uint64_t seed, const std::string& ckpt_out,
                       const std::string& curve_csv, const std::string& config_hash) {
    if (!fs::exists(perception_ckpt))
        throw ConfigError("missing checkpoint " + perception_ckpt + " (run stage 1 first)");
    if (!fs::exists(policy_ckpt))
        throw ConfigError("missing checkpoint " + policy_ckpt + " (run stage 2 first)");
    PerceptionNet net;
    net.store = nn::load_checkpoint<float>(perception_ckpt);
    require_meta(net.store.metadata, "kind", "perception", perception_ckpt);
    require_meta(net.store.metadata, "stage", "1", perception_ckpt);
    PolicyNet pol;
    pol.store = nn::load_checkpoint<float>(policy_ckpt);
    require_meta(pol.store.metadata, "kind", "policy", policy_ckpt);
    require_meta(pol.store.metadata, "stage", "2", policy_ckpt);

    auto train_eps = ds.episodes_of(Split::train);
    auto val_eps = ds.episodes_of(Split::val);
    if (train_eps.empty()) throw ValidationError("stage 3: train split is empty");
    GridCache grids{&ds, {}};

    std::ofstream curve = open_out(curve_csv, "stage 3 curve");
    curve << "epoch,train_loss,val_amask_iou\n";

    auto val_active = [&]() {
        if (val_eps.empty()) throw ValidationError("stage 3: validation split is empty");
        double sum = 0;
        for (const Episode* ep : val_eps) {
            const Scene& scene = ds.scene_by_id(ep->scene_id);
            Trajectory tr = rollout_policy(scene, grids.get(ep->scene_id), *ep, pol, nullptr,
                                           ds.camera, ds.episode_config);
            auto frames = trajectory_frames(tr);
            auto preds = predict_sequence(net, frame_ptrs(frames), ep->b0, ds.camera);
            sum += iou_mask(preds.back().mask, ep->truth.amodal_mask);
        }
        return sum / double(val_eps.size());
    };

    double best = -1;
    int best_epoch = -1;
    nn::ParamStoreT<float> best_store;
    long batch_id = 0;
    int epoch = 0;
    net.store.zero_grad();
    for (; epoch < opt.stage3_max_epochs; ++epoch) {
        std::vector<const Episode*> order(train_eps);
        Rng order_rng(mix_seed(seed, 0x3000 + std::uint64_t(epoch)));
        order_rng.shuffle(order);

        double loss_sum = 0;
        int in_batch = 0;
        for (std::size_t i = 0; i < order.size(); ++i) {
            const Episode& ep = *order[i];
            const Scene& scene = ds.scene_by_id(ep.scene_id);
            Rng roll_rng(mix_seed(seed, 0xB0000 + std::uint64_t(epoch) * order.size() + i));
            Trajectory tr = rollout_policy(scene, grids.get(ep.scene_id), ep, pol, &roll_rng,
                                           ds.camera, ds.episode_config);
            auto frames = trajectory_frames(tr);
            PerceptionTargets tgt = make_targets(ep, scene, ds.camera);

            nn::TapeT<float> tape;
            PerceptionNet::Binder B(tape, net.store, false);
            int loss = perception_loss(B, net, frame_ptrs(frames), ep.b0, tgt, true, false);
            const float lv = tape.val(loss)[0];
            if (!std::isfinite(lv))
                throw Error("stage 3 diverged: non-finite loss at batch " +
                            std::to_string(batch_id));
            loss_sum += lv;
            tape.backward(loss);
            tape.flush_bn(opt.bn_momentum);
            ++in_batch;
            if (in_batch == opt.batch_size || i + 1 == order.size()) {
                nn::scale_grads(net.store, 1.0 / in_batch);
                nn::sgd_step(net.store, opt.stage3_lr, opt.sgd_momentum, opt.weight_decay);
                net.store.zero_grad();
                in_batch = 0;
                ++batch_id;
            }
        }

        const double val = val_active();
        curve << epoch << "," << g17(loss_sum / double(order.size())) << "," << g17(val) << "\n";
        if (val > best + opt.min_improve) {
            best = val;
            best_epoch = epoch;
            best_store = net.store;
        } else if (epoch - best_epoch >= opt.patience) {
            ++epoch;
            break;
        }
    }

    net.store = std::move(best_store);
    net.store.metadata["kind"] = "perception";
    net.store.metadata["stage"] = "3";
    net.store.metadata["train_path"] = "active";
    net.store.metadata["seed"] = std::to_string(seed);
    net.store.metadata["epochs"] = std::to_string(epoch);
    net.store.metadata["best_val"] = g17(best);
    net.store.metadata["config"] = config_hash;
    fs::path cp(ckpt_out);
    if (cp.has_parent_path()) fs::create_directories(cp.parent_path());
    nn::save_checkpoint(net.store, ckpt_out);
    return {epoch, best};
}

// ---- evaluation ----

namespace {

struct EpisodeOut {
    int id = 0;
    int category = 0;
    bool hard = false;
    // per-step metric means (over random runs where applicable)
    std::vector<double> acc, box, mask;
    std::vector<double> occ;
    std::vector<char> occ_ok;
    std::vector<double> dist;
    std::vector<std::vector<Action>> run_actions;
    struct Dump {
        int run, t;
        StepPrediction pred;
    };
    std::vector<Dump> dumps;
};

struct RunOut {
    std::vector<StepPrediction> preds;
    std::vector<Pose> poses;
    std::vector<Action> actions;
};

RunOut eval_one_run(const Dataset& ds, const Episode& ep, const Scene& scene,
                    const OccupancyGrid& grid, PathKind path, PerceptionNet& per,
                    PolicyNet* pol, Rng* rng, int T) {
    const Camera& cam = ds.camera;
    RunOut out;
    switch (path) {
        case PathKind::passive: {
            Frame f = render_frame(scene, ep.spawn, cam);
            out.preds = predict_sequence(per, {&f}, ep.b0, cam);
            // one prediction, replicated over the curve
            while (int(out.preds.size()) <= T) out.preds.push_back(out.preds.front());
            out.poses.assign(std::size_t(T) + 1, ep.spawn);
            return out;
        }
        case PathKind::passive_replicated: {
            Frame f = render_frame(scene, ep.spawn, cam);
            std::vector<const Frame*> fp(std::size_t(T) + 1, &f);
            out.preds = predict_sequence(per, fp, ep.b0, cam);
            out.poses.assign(std::size_t(T) + 1, ep.spawn);
            return out;
        }
        case PathKind::random:
        case PathKind::shortest:
        case PathKind::active: {
            Trajectory tr;
            if (path == PathKind::random) {
                tr = execute_actions(scene, grid, ep.spawn, random_actions(*rng, T), cam,
                                     Provenance::random, ds.episode_config);
            } else if (path == PathKind::shortest) {
                tr = execute_actions(scene, grid, ep.spawn, ep.shortest, cam,
                                     Provenance::shortest, ds.episode_config);
            } else {
                tr = rollout_policy(scene, grid, ep, *pol, nullptr, cam, ds.episode_config);
            }
            std::vector<Frame> frames = trajectory_frames(tr);
            out.preds = predict_sequence(per, frame_ptrs(frames), ep.b0, cam);
            for (const auto& s : tr.steps) out.poses.push_back(s.pose);
            for (std::size_t k = 0; k + 1 < tr.steps.size(); ++k)
                out.actions.push_back(tr.steps[k].action);
            return out;
        }
    }
    throw ValidationError("eval_one_run: bad path kind");
}

EpisodeOut eval_episode(const Dataset& ds, const Episode& ep, PathKind path, PerceptionNet& per,
                        PolicyNet* pol, const OccupancyGrid& grid, const EvalOptions& opt,
                        bool dump) {
    const int T = ds.episode_config.T;
    const Scene& scene = ds.scene_by_id(ep.scene_id);
    const ObjectInstance* obj = scene.find_object(ep.target_id);
    if (!obj) throw ValidationError("eval: episode target missing from scene");
    const Vec2 centroid = obj->footprint.center();
    const Mask vis_padded = embed_mask(ep.truth.visible_mask, ds.camera.border_pad,
                                       ds.camera.padded_width(), ds.camera.padded_height());

    EpisodeOut out;
    out.id = ep.id;
    out.category = int(obj->category);
    out.hard = ep.hard;
    out.acc.assign(std::size_t(T) + 1, 0);
    out.box.assign(std::size_t(T) + 1, 0);
    out.mask.assign(std::size_t(T) + 1, 0);
    out.occ.assign(std::size_t(T) + 1, 0);
    out.occ_ok.assign(std::size_t(T) + 1, 0);
    out.dist.assign(std::size_t(T) + 1, 0);

    const int runs = path == PathKind::random ? opt.random_runs : 1;
    std::vector<char> occ_any(std::size_t(T) + 1, 0);
    for (int k = 0; k < runs; ++k) {
        Rng run_rng(mix_seed(opt.seed, std::uint64_t(ep.id) * 64 + std::uint64_t(k)));
        RunOut run = eval_one_run(ds, ep, scene, grid, path, per, pol,
                                  path == PathKind::random ? &run_rng : nullptr, T);
        for (int t = 0; t <= T; ++t) {
            const StepPrediction& p = run.preds[std::size_t(t)];
            out.acc[std::size_t(t)] += p.cls == out.category ? 1.0 : 0.0;
            out.box[std::size_t(t)] += iou_box(p.box, ep.truth.amodal_box);
            out.mask[std::size_t(t)] += iou_mask(p.mask, ep.truth.amodal_mask);
            auto occ = amask_occ_iou(p.mask, ep.truth.amodal_mask, vis_padded);
            if (occ) {
                out.occ[std::size_t(t)] += *occ;
                occ_any[std::size_t(t)] = 1;
            }
            out.dist[std::size_t(t)] += (run.poses[std::size_t(t)].pos() - centroid).norm();
            if (dump) out.dumps.push_back({k, t, p});
        }
        if (!run.actions.empty()) out.run_actions.push_back(std::move(run.actions));
    }
    for (int t = 0; t <= T; ++t) {
        out.acc[std::size_t(t)] /= runs;
        out.box[std::size_t(t)] /= runs;
        out.mask[std::size_t(t)] /= runs;
        out.dist[std::size_t(t)] /= runs;
        out.occ_ok[std::size_t(t)] = occ_any[std::size_t(t)];
        if (occ_any[std::size_t(t)]) out.occ[std::size_t(t)] /= runs;
    }
    return out;
}

std::vector<int> hist_steps(int T) {
    std::vector<int> steps;
    for (int s : {1, 3, 5, 7})
        if (s <= T) steps.push_back(s);
    if (T >= 1 && (steps.empty() || steps.back() != T)) steps.push_back(T);
    return steps;
}

} // namespace

MetricReport evaluate(const Dataset& ds, const BaselineSpec& spec, const std::string& ckpt_dir,
                      const EvalOptions& opt, Split split) {
    const std::string per_path =
        (fs::path(ckpt_dir) / perception_ckpt_name(spec.train_path)).string();
    if (!fs::exists(per_path))
        throw ConfigError("missing checkpoint " + per_path +
                          " (run the required training stage first)");
    PerceptionNet per;
    per.store = nn::load_checkpoint<float>(per_path);
    require_meta(per.store.metadata, "kind", "perception", per_path);
    require_meta(per.store.metadata, "stage",
                 spec.train_path == PathKind::active ? "3" : "1", per_path);

    PolicyNet pol;
    const bool need_policy = spec.test_path == PathKind::active;
    if (need_policy) {
        const std::string pol_path = (fs::path(ckpt_dir) / kPolicyCkptName).string();
        if (!fs::exists(pol_path))
            throw ConfigError("missing checkpoint " + pol_path + " (run stage 2 first)");
        pol.store = nn::load_checkpoint<float>(pol_path);
        require_meta(pol.store.metadata, "kind", "policy", pol_path);
        require_meta(pol.store.metadata, "stage", "2", pol_path);
    }

    auto episodes = ds.episodes_of(split);
    if (episodes.empty()) throw ValidationError("evaluate: split has no episodes");
    const int T = ds.episode_config.T;

    // grids precomputed sequentially; shared read-only afterwards
    GridCache grids{&ds, {}};
    for (const Episode* ep : episodes) grids.get(ep->scene_id);

    std::vector<EpisodeOut> results(episodes.size());
    const int workers = std::max(1, opt.workers);
    if (workers == 1) {
        for (std::size_t i = 0; i < episodes.size(); ++i)
            results[i] = eval_episode(ds, *episodes[i], spec.test_path, per,
                                      need_policy ? &pol : nullptr, grids.grids.at(episodes[i]->scene_id),
                                      opt, opt.dump_predictions);
    } else {
        std::atomic<std::size_t> next{0};
        auto work = [&]() {
            PerceptionNet wper;
            wper.store = per.store;
            PolicyNet wpol;
            if (need_policy) wpol.store = pol.store;
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= episodes.size()) break;
                results[i] = eval_episode(ds, *episodes[i], spec.test_path, wper,
                                          need_policy ? &wpol : nullptr,
                                          grids.grids.at(episodes[i]->scene_id), opt,
                                          opt.dump_predictions);
            }
        };
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }

    MetricReport rep;
    rep.baseline = baseline_name(spec);
    rep.steps = T + 1;
    rep.cells.resize(std::size_t(T) + 1);
    rep.distance.resize(std::size_t(T) + 1);
    const bool moves = spec.test_path != PathKind::passive &&
                       spec.test_path != PathKind::passive_replicated;
    if (moves)
        for (int s : hist_steps(T)) rep.action_hist[s] = {};

    for (const EpisodeOut& r : results) {
        ++rep.episodes;
        const Subset sub = r.hard ? Subset::hard : Subset::easy;
        for (int t = 0; t <= T; ++t) {
            for (Subset s : {Subset::all, sub}) {
                rep.cell(Metric::clss_acc, s, t).add(r.acc[std::size_t(t)]);
                rep.cell(Metric::abox_iou, s, t).add(r.box[std::size_t(t)]);
                rep.cell(Metric::amask_iou, s, t).add(r.mask[std::size_t(t)]);
                if (r.occ_ok[std::size_t(t)])
                    rep.cell(Metric::amask_occ_iou, s, t).add(r.occ[std::size_t(t)]);
            }
            rep.distance[std::size_t(t)].add(r.dist[std::size_t(t)]);
        }
        auto& pc = rep.per_category[std::size_t(r.category)];
        pc[0].add(r.acc[std::size_t(T)]);
        pc[1].add(r.box[std::size_t(T)]);
        pc[2].add(r.mask[std::size_t(T)]);
        if (r.occ_ok[std::size_t(T)]) pc[3].add(r.occ[std::size_t(T)]);
        for (const auto& actions : r.run_actions)
            for (auto& [s, hist] : rep.action_hist)
                if (s >= 1 && s <= int(actions.size())) ++hist[std::size_t(int(actions[std::size_t(s - 1)]))];
    }

    rep.info["baseline"] = rep.baseline;
    rep.info["split"] = split_name(split);
    rep.info["eval_seed"] = std::to_string(opt.seed);
    rep.info["random_runs"] = std::to_string(opt.random_runs);
    rep.info["perception_checkpoint"] = perception_ckpt_name(spec.train_path);
    for (const char* k : {"stage", "epochs", "episodes", "seed", "best_val"}) {
        auto it = per.store.metadata.find(k);
        if (it != per.store.metadata.end()) rep.info["perception_" + std::string(k)] = it->second;
    }
    if (need_policy)
        for (const char* k : {"stage", "episodes", "seed", "skipped_updates"}) {
            auto it = pol.store.metadata.find(k);
            if (it != pol.store.metadata.end()) rep.info["policy_" + std::string(k)] = it->second;
        }
    auto cfg_it = per.store.metadata.find("config");
    rep.config_hash = cfg_it == per.store.metadata.end() ? "" : cfg_it->second;
    rep.info["config"] = rep.config_hash;

    if (opt.dump_predictions) {
        if (opt.dump_path.empty()) throw ConfigError("dump_predictions requires dump_path");
        std::ofstream out = open_out(opt.dump_path, "prediction dump");
        out << "predictions v1\n";
        for (const EpisodeOut& r : results)
            for (const auto& d : r.dumps) {
                out << "pred " << r.id << " " << d.run << " " << d.t << " " << d.pred.cls << " "
                    << g17(d.pred.box.x0) << " " << g17(d.pred.box.y0) << " " << g17(d.pred.box.x1)
                    << " " << g17(d.pred.box.y1) << "\n";
                out << mask_to_rle(d.pred.mask);
            }
        out << "end\n";
    }
    return rep;
}

// ---- report io ----

void write_report_csv(const MetricReport& r, const std::string& path) {
    std::ofstream out = open_out(path, "report");
    out << "record,key1,key2,key3,value1,value2\n";
    for (const auto& [k, v] : r.info) out << "meta," << k << ",,," << v << ",\n";
    out << "meta,episodes,,," << r.episodes << ",\n";
    out << "meta,steps,,," << r.steps << ",\n";
    for (int t = 0; t < r.steps; ++t)
        for (int m = 0; m < kNumMetrics; ++m)
            for (int s = 0; s < kNumSubsets; ++s) {
                const MetricCell& c = r.cell(Metric(m), Subset(s), t);
                out << "cell," << metric_name(Metric(m)) << "," << subset_name(Subset(s)) << ","
                    << t << "," << g17(c.sum) << "," << c.n << "\n";
            }
    for (int cat = 0; cat < kNumCategories; ++cat)
        for (int m = 0; m < kNumMetrics; ++m) {
            const MetricCell& c = r.per_category[std::size_t(cat)][std::size_t(m)];
            out << "category," << category_name(Category(cat)) << "," << metric_name(Metric(m))
                << ",," << g17(c.sum) << "," << c.n << "\n";
        }
    for (const auto& [s, hist] : r.action_hist)
        for (int a = 0; a < kNumActions; ++a)
            out << "hist," << s << "," << action_name(Action(a)) << ",," << hist[std::size_t(a)]
                << ",\n";
    for (int t = 0; t < int(r.distance.size()); ++t)
        out << "dist," << t << ",,," << g17(r.distance[std::size_t(t)].sum) << ","
            << r.distance[std::size_t(t)].n << "\n";
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    parts.push_back(cur);
    return parts;
}

Metric metric_from_name(const std::string& n) {
    for (int m = 0; m < kNumMetrics; ++m)
        if (n == metric_name(Metric(m))) return Metric(m);
    throw ParseError("unknown metric name " + n, 0);
}

Subset subset_from_name(const std::string& n) {
    for (int s = 0; s < kNumSubsets; ++s)
        if (n == subset_name(Subset(s))) return Subset(s);
    throw ParseError("unknown subset name " + n, 0);
}

} // namespace

MetricReport read_report_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report " + path);
    MetricReport r;
    std::string line;
    if (!std::getline(in, line) || line != "record,key1,key2,key3,value1,value2")
        throw ParseError("report " + path + ": bad header", 0);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 6) throw ParseError("report " + path + ": bad field count", 0);
        if (f[0] == "meta") {
            r.info[f[1]] = f[4];
            if (f[1] == "steps") {
                r.steps = std::stoi(f[4]);
                r.cells.resize(std::size_t(r.steps));
                r.distance.resize(std::size_t(r.steps));
            }
            if (f[1] == "episodes") r.episodes = std::stoll(f[4]);
            if (f[1] == "baseline") r.baseline = f[4];
            if (f[1] == "config") r.config_hash = f[4];
        } else if (f[0] == "cell") {
            if (r.steps == 0) throw ParseError("report " + path + ": cell before steps meta", 0);
            MetricCell& c = r.cell(metric_from_name(f[1]), subset_from_name(f[2]), std::stoi(f[3]));
            c.sum = std::stod(f[4]);
            c.n = std::stoll(f[5]);
        } else if (f[0] == "category") {
            int code = -1;
            for (int k = 0; k < kNumCategories; ++k)
                if (f[1] == category_name(Category(k))) code = k;
            if (code < 0) throw ParseError("report " + path + ": unknown category " + f[1], 0);
            MetricCell& c = r.per_category[std::size_t(code)][std::size_t(int(metric_from_name(f[2])))];
            c.sum = std::stod(f[4]);
            c.n = std::stoll(f[5]);
        } else if (f[0] == "hist") {
            int s = std::stoi(f[1]);
            int a = -1;
            for (int k = 0; k < kNumActions; ++k)
                if (f[2] == action_name(Action(k))) a = k;
            if (a < 0) throw ParseError("report " + path + ": unknown action " + f[2], 0);
            r.action_hist[s][std::size_t(a)] = std::stoll(f[4]);
        } else if (f[0] == "dist") {
            int t = std::stoi(f[1]);
            if (t < 0 || t >= int(r.distance.size()))
                throw ParseError("report " + path + ": dist index out of range", 0);
            r.distance[std::size_t(t)].sum = std::stod(f[4]);
            r.distance[std::size_t(t)].n = std::stoll(f[5]);
        } else {
            throw ParseError("report " + path + ": unknown record " + f[0], 0);
        }
    }
    return r;
}

void write_report_summary(const MetricReport& r, const std::string& path) {
    std::ofstream out = open_out(path, "report summary");
    out << "baseline " << r.baseline << "\n";
    for (const auto& [k, v] : r.info)
        if (k != "baseline") out << k << " " << v << "\n";
    out << "episodes " << r.episodes << "\n\n";
    const int last = r.steps - 1;
    out << "metric            subset   t0        t" << last << "\n";
    for (int m = 0; m < kNumMetrics; ++m)
        for (int s = 0; s < kNumSubsets; ++s) {
            const MetricCell& c0 = r.cell(Metric(m), Subset(s), 0);
            const MetricCell& cT = r.cell(Metric(m), Subset(s), last);
            char buf[128];
            std::snprintf(buf, sizeof buf, "%-17s %-8s %-9.4f %-9.4f (n=%lld)\n",
                          metric_name(Metric(m)), subset_name(Subset(s)), c0.mean(), cT.mean(),
                          static_cast<long long>(cT.n));
            out << buf;
        }
    out << "\nmean distance to target: t0 " << g17(r.distance.empty() ? 0.0 : r.distance[0].mean())
        << ", t" << last << " "
        << g17(r.distance.empty() ? 0.0 : r.distance[std::size_t(last)].mean()) << "\n";
}

} // namespace evr

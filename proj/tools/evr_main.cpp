// evr: dataset generation, staged training, evaluation, report plotting,
// environment serving, and episode replay, all driven by one config file.
//
// Exit codes: 0 success, 2 configuration/usage, 3 scene generation,
// 4 file/parse, 5 internal.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "evr/config.hpp"
#include "evr/envd.hpp"
#include "evr/episodes.hpp"
#include "evr/errors.hpp"
#include "evr/harness.hpp"
#include "evr/render.hpp"
#include "evr/svgplot.hpp"
#include "evr/world.hpp"

namespace fs = std::filesystem;
using namespace evr;

namespace {

struct CliArgs {
    std::string config_path;
    std::string out_dir_override;
    std::uint64_t seed_override = 0;
    bool has_seed_override = false;
};

RunConfig effective_config(const CliArgs& a) {
    RunConfig cfg = a.config_path.empty() ? default_config() : load_config(a.config_path);
    if (!a.out_dir_override.empty()) cfg.out_dir = a.out_dir_override;
    if (a.has_seed_override) cfg.seed = a.seed_override;
    return cfg;
}

// ---- manifest ----

std::map<std::string, std::string> read_manifest(const std::string& path) {
    std::map<std::string, std::string> m;
    std::ifstream in(path);
    if (!in) return m;
    std::string k, v;
    while (in >> k >> v) m[k] = v;
    return m;
}

void write_manifest(const std::string& path, const std::map<std::string, std::string>& m) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& [k, v] : m) out << k << " " << v << "\n";
}

// Requires `gen` to have run in this directory with the same config (minus
// out_dir); otherwise checkpoints and reports would silently mix runs.
void require_generated(const RunConfig& cfg) {
    const std::string mpath = cfg.out_dir + "/manifest.txt";
    auto m = read_manifest(mpath);
    if (m.find("config_hash") == m.end())
        throw ConfigError(cfg.out_dir + ": no manifest; run `evr gen` first");
    const std::string h = config_hash(cfg);
    if (m["config_hash"] != h)
        throw ConfigError("config-hash mismatch: dataset in " + cfg.out_dir + " was generated with " +
                          m["config_hash"] + ", current config hashes to " + h);
}

std::string hash_tree(const std::string& dir) {
    std::vector<std::string> rel;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), dir).generic_string());
    std::sort(rel.begin(), rel.end());
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const char* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(p[i]);
            h *= 1099511628211ull;
        }
    };
    for (const auto& r : rel) {
        mix(r.data(), r.size());
        mix("\0", 1);
        std::ifstream in(dir + "/" + r, std::ios::binary);
        std::vector<char> buf(std::size_t(1) << 16);
        while (in) {
            in.read(buf.data(), std::streamsize(buf.size()));
            mix(buf.data(), std::size_t(in.gcount()));
        }
        mix("\0", 1);
    }
    char out[17];
    std::snprintf(out, sizeof out, "%016" PRIx64, h);
    return out;
}

std::string baseline_slug(const std::string& name) {
    std::string s;
    for (char c : name) {
        if (c == '/') s += '_';
        else if (c == '*') s += 'x';
        else s += char(std::tolower(static_cast<unsigned char>(c)));
    }
    return s;
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split \"" + s + "\" (train|val|test)");
}

// ---- gen ----

int cmd_gen(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    write_config(cfg, cfg.out_dir + "/config.json");

    Dataset ds = build_dataset(cfg.data);
    save_dataset(ds, cfg.out_dir + "/dataset");

    std::map<std::string, std::string> manifest;
    manifest["config_hash"] = config_hash(cfg);
    manifest["dataset_hash"] = hash_tree(cfg.out_dir + "/dataset");
    write_manifest(cfg.out_dir + "/manifest.txt", manifest);

    int n_train = 0, n_val = 0, n_test = 0, n_hard = 0;
    for (const auto& ep : ds.episodes) {
        (ep.split == Split::train ? n_train : ep.split == Split::val ? n_val : n_test)++;
        n_hard += ep.hard;
    }
    std::printf("generated %zu scenes, %zu episodes (train %d, val %d, test %d; hard %d)\n",
                ds.scenes.size(), ds.episodes.size(), n_train, n_val, n_test, n_hard);
    std::printf("config_hash %s\ndataset_hash %s\n", manifest["config_hash"].c_str(),
                manifest["dataset_hash"].c_str());
    return 0;
}

// ---- train ----

int cmd_train(const RunConfig& cfg, int stage) {
    require_generated(cfg);
    Dataset ds = load_dataset(cfg.out_dir + "/dataset");
    const std::string hash = config_hash(cfg);
    const std::string ckpt = cfg.out_dir + "/ckpt";
    const std::string curves = cfg.out_dir + "/curves";
    fs::create_directories(ckpt);
    fs::create_directories(curves);

    if (stage == 1) {
        StageResult pp = run_stage1(ds, /*passive=*/true, cfg.train, cfg.seed,
                                    ckpt + "/" + perception_ckpt_name(PathKind::passive),
                                    curves + "/stage1_pp.csv", hash);
        std::printf("stage1 pp: %d epochs, best val mask-IoU %.4f\n", pp.epochs, pp.best_val);
        StageResult sp = run_stage1(ds, /*passive=*/false, cfg.train, cfg.seed,
                                    ckpt + "/" + perception_ckpt_name(PathKind::shortest),
                                    curves + "/stage1_sp.csv", hash);
        std::printf("stage1 sp: %d epochs, best val mask-IoU %.4f\n", sp.epochs, sp.best_val);
    } else if (stage == 2) {
        StageResult r = run_stage2(ds, ckpt + "/" + perception_ckpt_name(PathKind::shortest),
                                   cfg.train, cfg.seed, ckpt + "/" + kPolicyCkptName,
                                   curves + "/stage2.csv", curves + "/stage2_rewards.csv", hash);
        std::printf("stage2: %d episodes, final avg return %.4f\n", r.epochs, r.best_val);
    } else if (stage == 3) {
        StageResult r = run_stage3(ds, ckpt + "/" + perception_ckpt_name(PathKind::shortest),
                                   ckpt + "/" + kPolicyCkptName, cfg.train, cfg.seed,
                                   ckpt + "/" + perception_ckpt_name(PathKind::active),
                                   curves + "/stage3.csv", hash);
        std::printf("stage3: %d epochs, best val mask-IoU %.4f\n", r.epochs, r.best_val);
    } else {
        throw ConfigError("train: stage must be 1, 2, or 3");
    }
    return 0;
}

// ---- eval ----

int cmd_eval(const RunConfig& cfg, const std::string& baseline, const std::string& split_name,
             bool dump) {
    require_generated(cfg);
    BaselineSpec spec;
    try {
        spec = parse_baseline(baseline);
    } catch (const ValidationError& e) {
        throw ConfigError(e.what());
    }
    Split split = parse_split(split_name);
    Dataset ds = load_dataset(cfg.out_dir + "/dataset");

    const std::string reports = cfg.out_dir + "/reports";
    fs::create_directories(reports);
    const std::string slug = baseline_slug(baseline) + "_" + split_name;

    EvalOptions opt;
    opt.seed = cfg.seed;
    opt.workers = cfg.eval.workers;
    opt.random_runs = cfg.eval.random_runs;
    if (dump) {
        opt.dump_predictions = true;
        opt.dump_path = reports + "/dump_" + slug + ".txt";
    }
    MetricReport rep = evaluate(ds, spec, cfg.out_dir + "/ckpt", opt, split);
    write_report_csv(rep, reports + "/eval_" + slug + ".csv");
    write_report_summary(rep, reports + "/eval_" + slug + ".summary.txt");

    const int last = rep.steps - 1;
    std::printf("%s on %s (%lld episodes), final step:\n", rep.baseline.c_str(),
                split_name.c_str(), static_cast<long long>(rep.episodes));
    for (int m = 0; m < kNumMetrics; ++m)
        std::printf("  %-14s all %.4f  easy %.4f  hard %.4f\n", metric_name(Metric(m)),
                    rep.cell(Metric(m), Subset::all, last).mean(),
                    rep.cell(Metric(m), Subset::easy, last).mean(),
                    rep.cell(Metric(m), Subset::hard, last).mean());
    return 0;
}

// ---- report ----

int cmd_report(const RunConfig& cfg, const std::string& split_name) {
    const std::string reports = cfg.out_dir + "/reports";
    const std::string plots = cfg.out_dir + "/plots";
    std::vector<MetricReport> reps;
    for (const std::string& name : all_baseline_names()) {
        std::string p = reports + "/eval_" + baseline_slug(name) + "_" + split_name + ".csv";
        if (fs::exists(p)) reps.push_back(read_report_csv(p));
    }
    if (reps.empty())
        throw ConfigError("no evaluation reports for split " + split_name + " under " + reports +
                          "; run `evr eval` first");
    fs::create_directories(plots);

    // Final-step table, baselines x (subset x metric).
    {
        std::ofstream out(reports + "/table_" + split_name + ".csv");
        if (!out) throw IoError("cannot write table csv");
        out << "baseline";
        for (int s = 0; s < kNumSubsets; ++s)
            for (int m = 0; m < kNumMetrics; ++m)
                out << "," << subset_name(Subset(s)) << ":" << metric_name(Metric(m));
        out << "\n";
        for (const auto& r : reps) {
            out << r.baseline;
            char buf[32];
            for (int s = 0; s < kNumSubsets; ++s)
                for (int m = 0; m < kNumMetrics; ++m) {
                    const MetricCell& c = r.cell(Metric(m), Subset(s), r.steps - 1);
                    std::snprintf(buf, sizeof buf, ",%.4f", c.mean());
                    out << buf;
                }
            out << "\n";
        }
    }

    // Per-step curves, one file per metric/subset, one series per baseline.
    for (int m = 0; m < kNumMetrics; ++m)
        for (Subset s : {Subset::all, Subset::hard}) {
            std::vector<Series> series;
            for (const auto& r : reps) {
                Series se;
                se.label = r.baseline;
                for (int t = 0; t < r.steps; ++t) {
                    se.x.push_back(t);
                    se.y.push_back(r.cell(Metric(m), s, t).mean());
                }
                series.push_back(std::move(se));
            }
            std::string name = std::string(metric_name(Metric(m))) + "_" + subset_name(s);
            write_line_svg(plots + "/curve_" + name + "_" + split_name + ".svg",
                           std::string(metric_name(Metric(m))) + " (" + subset_name(s) + ")",
                           "step", metric_name(Metric(m)), series);
        }

    // Distance-to-target curves.
    {
        std::vector<Series> series;
        for (const auto& r : reps) {
            if (r.distance.empty() || r.distance[0].n == 0) continue;
            Series se;
            se.label = r.baseline;
            for (int t = 0; t < int(r.distance.size()); ++t) {
                se.x.push_back(t);
                se.y.push_back(r.distance[std::size_t(t)].mean());
            }
            series.push_back(std::move(se));
        }
        if (!series.empty())
            write_line_svg(plots + "/distance_" + split_name + ".svg", "mean distance to target",
                           "step", "meters", series);
    }

    // Action mix per baseline that executed actions.
    std::vector<std::string> bar_labels;
    for (int a = 0; a < kNumActions; ++a) bar_labels.push_back(action_name(Action(a)));
    for (const auto& r : reps) {
        if (r.action_hist.empty()) continue;
        std::vector<std::string> groups;
        std::vector<std::vector<double>> values;
        for (const auto& [step, counts] : r.action_hist) {
            groups.push_back("t=" + std::to_string(step));
            std::vector<double> row;
            for (auto c : counts) row.push_back(double(c));
            values.push_back(std::move(row));
        }
        write_bars_svg(plots + "/actions_" + baseline_slug(r.baseline) + "_" + split_name + ".svg",
                       "actions executed, " + r.baseline, groups, bar_labels, values);
    }

    std::printf("merged %zu reports -> %s, plots -> %s\n", reps.size(),
                (reports + "/table_" + split_name + ".csv").c_str(), plots.c_str());
    return 0;
}

// ---- serve ----

int cmd_serve(const RunConfig& cfg, const std::string& host, int port) {
    require_generated(cfg);
    Dataset ds = load_dataset(cfg.out_dir + "/dataset");
    EnvServer server(ds, host, port);
    std::printf("listening on %s:%d\n", host.c_str(), server.port());
    std::fflush(stdout);
    server.run();
    return 0;
}

// ---- replay ----

void write_mask_pgm(const std::string& path, const Mask& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "P5\n" << m.width << " " << m.height << "\n255\n";
    for (std::uint8_t v : m.on) out.put(v ? char(255) : char(0));
}

int cmd_replay(const RunConfig& cfg, int episode_id, std::string dir) {
    require_generated(cfg);
    Dataset ds = load_dataset(cfg.out_dir + "/dataset");
    const Episode* ep = nullptr;
    for (const auto& e : ds.episodes)
        if (e.id == episode_id) ep = &e;
    if (!ep) throw ConfigError("unknown episode id " + std::to_string(episode_id));
    if (dir.empty()) dir = cfg.out_dir + "/replay/ep" + std::to_string(episode_id);
    fs::create_directories(dir);

    const Scene& scene = ds.scene_by_id(ep->scene_id);
    OccupancyGrid grid = rasterize_occupancy(scene, ds.episode_config.grid_resolution,
                                             ds.episode_config.agent_radius);
    Trajectory traj = execute_actions(scene, grid, ep->spawn, ep->shortest, ds.camera,
                                      Provenance::shortest, ds.episode_config);
    char name[64];
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
        std::snprintf(name, sizeof name, "/t%02zu.ppm", t);
        write_ppm(dir + name, traj.steps[t].frame);
        std::snprintf(name, sizeof name, "/t%02zu_depth.pgm", t);
        write_pgm_depth(dir + name, traj.steps[t].frame);
    }
    write_mask_pgm(dir + "/amodal_mask.pgm", ep->truth.amodal_mask);
    write_mask_pgm(dir + "/visible_mask.pgm", ep->truth.visible_mask);
    std::printf("episode %d: %zu frames -> %s\n", episode_id, traj.steps.size(), dir.c_str());
    const ObjectInstance* target = scene.find_object(ep->target_id);
    std::printf("category %s, visibility %.3f, %s\n",
                target ? category_name(target->category) : "?", ep->truth.visibility,
                ep->hard ? "hard" : "easy");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"evr: embodied amodal-recognition laboratory"};
    app.require_subcommand(1);

    CliArgs args;
    app.add_option("-c,--config", args.config_path, "config file (JSON); defaults when omitted");
    app.add_option("-o,--out-dir", args.out_dir_override, "override config out_dir");
    auto* seed_opt =
        app.add_option("-s,--seed", args.seed_override, "override training/eval seed");

    auto* gen = app.add_subcommand("gen", "generate scenes and episodes");

    int stage = 0;
    auto* train = app.add_subcommand("train", "run a training stage");
    train->add_option("--stage", stage, "1: perception, 2: policy, 3: fine-tune")->required();

    std::string baseline, split_name = "test";
    bool dump = false;
    int workers = 0;
    auto* eval = app.add_subcommand("eval", "evaluate a baseline");
    eval->add_option("--baseline", baseline, "e.g. PP/PP, SP/AP, AP/AP")->required();
    eval->add_option("--split", split_name, "train|val|test (default test)");
    auto* workers_opt = eval->add_option("--workers", workers, "evaluation worker threads")
                            ->check(CLI::PositiveNumber);
    eval->add_flag("--dump", dump, "write per-episode prediction dump");

    auto* report = app.add_subcommand("report", "merge eval CSVs, write table and SVG plots");
    report->add_option("--split", split_name, "train|val|test (default test)");

    std::string host = "127.0.0.1";
    int port = 0;
    auto* serve = app.add_subcommand("serve", "serve episodes over TCP");
    serve->add_option("--host", host, "bind address");
    serve->add_option("--port", port, "port (0 = ephemeral)");

    int episode_id = 0;
    std::string replay_dir;
    auto* replay = app.add_subcommand("replay", "render a stored episode to image files");
    replay->add_option("--episode", episode_id, "episode id")->required();
    replay->add_option("--dir", replay_dir, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    args.has_seed_override = seed_opt->count() > 0;

    try {
        RunConfig cfg = effective_config(args);
        if (workers_opt->count() > 0) cfg.eval.workers = workers;
        if (gen->parsed()) return cmd_gen(cfg);
        if (train->parsed()) return cmd_train(cfg, stage);
        if (eval->parsed()) return cmd_eval(cfg, baseline, split_name, dump);
        if (report->parsed()) return cmd_report(cfg, split_name);
        if (serve->parsed()) return cmd_serve(cfg, host, port);
        if (replay->parsed()) return cmd_replay(cfg, episode_id, replay_dir);
        return 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const GenerationError& e) {
        std::fprintf(stderr, "generation error: %s\n", e.what());
        return 3;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 4;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "parse error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 5;
    }
}

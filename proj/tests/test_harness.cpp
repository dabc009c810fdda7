#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "common/tiny_world.hpp"
#include "evr/config.hpp"
#include "evr/harness.hpp"

using namespace evr;
namespace fs = std::filesystem;

namespace {

// tiny but complete dataset: one scene per split, one episode per category
const Dataset& stage_dataset() {
    static const Dataset ds = build_dataset(testing::small_data_config(3, 1, 1, 1, 1));
    return ds;
}

// stage smoke tests need speed, not convergence
TrainOptions fast_opts() {
    TrainOptions o;
    o.batch_size = 8;
    o.stage1_max_epochs = 2;
    o.patience = 10;
    o.stage2_episodes = 4;
    o.stage3_max_epochs = 1;
    return o;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(bool(in));
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int count_lines(const std::string& text) {
    int n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

const std::string kWork = "/tmp/evr_test_harness";

std::string report_bytes(const MetricReport& r) {
    const std::string p = kWork + "/tmp_report.csv";
    write_report_csv(r, p);
    return slurp(p);
}

} // namespace

TEST_CASE("baseline names parse and print consistently") {
    REQUIRE(all_baseline_names().size() == 7);
    for (const std::string& name : all_baseline_names()) {
        BaselineSpec spec = parse_baseline(name);
        CHECK(baseline_name(spec) == name);
    }
    BaselineSpec rep = parse_baseline("SP/PP*");
    CHECK(rep.train_path == PathKind::shortest);
    CHECK(rep.test_path == PathKind::passive_replicated);
    BaselineSpec act = parse_baseline("AP/AP");
    CHECK(act.train_path == PathKind::active);
    CHECK(act.test_path == PathKind::active);
    CHECK_THROWS_AS(parse_baseline("PP/AP"), ValidationError);
    CHECK_THROWS_AS(parse_baseline("sp/sp"), ValidationError);
    CHECK_THROWS_AS(parse_baseline(""), ValidationError);
}

TEST_CASE("checkpoint names exist only for trainable perception paths") {
    CHECK(perception_ckpt_name(PathKind::passive) == "perception_pp.ckpt");
    CHECK(perception_ckpt_name(PathKind::shortest) == "perception_sp.ckpt");
    CHECK(perception_ckpt_name(PathKind::active) == "perception_ap.ckpt");
    CHECK_THROWS_AS(perception_ckpt_name(PathKind::random), ValidationError);
    CHECK_THROWS_AS(perception_ckpt_name(PathKind::passive_replicated), ValidationError);
}

TEST_CASE("metric and subset labels are distinct") {
    std::set<std::string> metrics, subsets;
    for (int m = 0; m < kNumMetrics; ++m) metrics.insert(metric_name(Metric(m)));
    for (int s = 0; s < kNumSubsets; ++s) subsets.insert(subset_name(Subset(s)));
    CHECK(metrics.size() == std::size_t(kNumMetrics));
    CHECK(subsets.size() == std::size_t(kNumSubsets));
    CHECK(metrics.count("amask_occ_iou") == 1);
    CHECK(subsets.count("hard") == 1);
}

TEST_CASE("metric cells average their accumulated samples") {
    MetricCell c;
    CHECK(c.mean() == 0.0);
    c.add(0.25);
    c.add(0.75);
    CHECK(c.n == 2);
    CHECK(c.mean() == 0.5);
}

TEST_CASE("report csv io round-trips every table") {
    fs::create_directories(kWork);
    MetricReport r;
    r.baseline = "SP/PP*";
    r.config_hash = "00c0ffee00c0ffee";
    r.steps = 3;
    r.cells.resize(3);
    r.distance.resize(3);
    r.episodes = 11;
    r.info["baseline"] = r.baseline;
    r.info["config"] = r.config_hash;
    r.info["split"] = "val";
    r.cell(Metric::clss_acc, Subset::all, 0) = {1.0 / 3.0, 7};
    r.cell(Metric::abox_iou, Subset::easy, 1) = {0.7071067811865476, 4};
    r.cell(Metric::amask_iou, Subset::hard, 2) = {2.0000000000000004, 3};
    r.cell(Metric::amask_occ_iou, Subset::all, 2) = {0.12345678901234567, 2};
    r.per_category[2][1] = {2.5, 4};
    r.per_category[7][3] = {0.1, 1};
    r.action_hist[1] = {1, 2, 3, 4, 5, 6};
    r.action_hist[2] = {0, 0, 9, 0, 0, 1};
    r.distance[0] = {30.0, 11};
    r.distance[2] = {28.5, 11};

    const std::string path = kWork + "/roundtrip.csv";
    write_report_csv(r, path);
    MetricReport b = read_report_csv(path);

    CHECK(b.baseline == r.baseline);
    CHECK(b.config_hash == r.config_hash);
    CHECK(b.steps == 3);
    CHECK(b.episodes == 11);
    CHECK(b.info.at("split") == "val");
    for (int t = 0; t < 3; ++t)
        for (int m = 0; m < kNumMetrics; ++m)
            for (int s = 0; s < kNumSubsets; ++s) {
                const MetricCell &x = r.cell(Metric(m), Subset(s), t),
                                 &y = b.cell(Metric(m), Subset(s), t);
                CHECK(y.sum == x.sum);
                CHECK(y.n == x.n);
            }
    for (int cat = 0; cat < kNumCategories; ++cat)
        for (int m = 0; m < kNumMetrics; ++m) {
            CHECK(b.per_category[std::size_t(cat)][std::size_t(m)].sum ==
                  r.per_category[std::size_t(cat)][std::size_t(m)].sum);
            CHECK(b.per_category[std::size_t(cat)][std::size_t(m)].n ==
                  r.per_category[std::size_t(cat)][std::size_t(m)].n);
        }
    CHECK(b.action_hist == r.action_hist);
    REQUIRE(b.distance.size() == 3);
    for (int t = 0; t < 3; ++t) {
        CHECK(b.distance[std::size_t(t)].sum == r.distance[std::size_t(t)].sum);
        CHECK(b.distance[std::size_t(t)].n == r.distance[std::size_t(t)].n);
    }

    // a written summary is human-facing but must at least materialize
    write_report_summary(r, kWork + "/roundtrip_summary.txt");
    CHECK(slurp(kWork + "/roundtrip_summary.txt").find("SP/PP*") != std::string::npos);

    CHECK_THROWS_AS(read_report_csv(kWork + "/no_such_report.csv"), IoError);
    std::ofstream bad(kWork + "/bad_report.csv");
    bad << "not,a,report\n";
    bad.close();
    CHECK_THROWS_AS(read_report_csv(kWork + "/bad_report.csv"), ParseError);
}

TEST_CASE("training stages chain through checkpoints with provenance stamps") {
    const Dataset& ds = stage_dataset();
    const TrainOptions opt = fast_opts();
    const std::string dir = kWork + "/stages";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string pp = dir + "/perception_pp.ckpt";
    const std::string sp = dir + "/perception_sp.ckpt";
    const std::string ap = dir + "/perception_ap.ckpt";
    const std::string pol = dir + "/policy.ckpt";

    // prerequisites are spelled out before any training happened
    CHECK_THROWS_WITH_AS(
        run_stage2(ds, sp, opt, 5, pol, dir + "/s2.csv", dir + "/s2r.csv", "h1"),
        doctest::Contains("run stage 1 first"), ConfigError);
    CHECK_THROWS_WITH_AS(run_stage3(ds, sp, pol, opt, 5, ap, dir + "/s3.csv", "h1"),
                         doctest::Contains("run stage 1 first"), ConfigError);

    StageResult r1 = run_stage1(ds, /*passive=*/true, opt, 5, pp, dir + "/s1pp.csv", "h1");
    CHECK(r1.epochs >= 1);
    CHECK(r1.epochs <= opt.stage1_max_epochs);
    CHECK(r1.best_val >= 0.0);
    CHECK(r1.best_val <= 1.0);
    auto meta = nn::read_checkpoint_metadata(pp);
    CHECK(meta.at("kind") == "perception");
    CHECK(meta.at("stage") == "1");
    CHECK(meta.at("train_path") == "passive");
    CHECK(meta.at("seed") == "5");
    CHECK(meta.at("config") == "h1");
    const std::string curve = slurp(dir + "/s1pp.csv");
    CHECK(curve.rfind("epoch,train_loss,val_amask_iou\n", 0) == 0);
    CHECK(count_lines(curve) == r1.epochs + 1);

    StageResult r1s = run_stage1(ds, /*passive=*/false, opt, 5, sp, dir + "/s1sp.csv", "h1");
    CHECK(r1s.epochs >= 1);
    CHECK(nn::read_checkpoint_metadata(sp).at("train_path") == "shortest");

    CHECK_THROWS_WITH_AS(run_stage3(ds, sp, pol, opt, 5, ap, dir + "/s3.csv", "h1"),
                         doctest::Contains("run stage 2 first"), ConfigError);

    StageResult r2 = run_stage2(ds, sp, opt, 5, pol, dir + "/s2.csv", dir + "/s2r.csv", "h1");
    CHECK(r2.epochs == opt.stage2_episodes);
    auto pmeta = nn::read_checkpoint_metadata(pol);
    CHECK(pmeta.at("kind") == "policy");
    CHECK(pmeta.at("stage") == "2");
    CHECK(pmeta.at("episodes") == std::to_string(opt.stage2_episodes));
    const std::string s2 = slurp(dir + "/s2.csv");
    CHECK(s2.rfind("episode,return,baseline,loss,skipped\n", 0) == 0);
    CHECK(count_lines(s2) == opt.stage2_episodes + 1);
    const int T = ds.episode_config.T;
    CHECK(count_lines(slurp(dir + "/s2r.csv")) == opt.stage2_episodes * (T + 1) + 1);

    // feeding the wrong artifact in is caught by the provenance stamp
    CHECK_THROWS_WITH_AS(
        run_stage2(ds, pol, opt, 5, dir + "/p2.ckpt", dir + "/x.csv", dir + "/y.csv", "h1"),
        doctest::Contains("expected kind=perception"), ConfigError);

    StageResult r3 = run_stage3(ds, sp, pol, opt, 5, ap, dir + "/s3.csv", "h1");
    CHECK(r3.epochs >= 1);
    auto ameta = nn::read_checkpoint_metadata(ap);
    CHECK(ameta.at("kind") == "perception");
    CHECK(ameta.at("stage") == "3");
    CHECK(ameta.at("train_path") == "active");
}

TEST_CASE("evaluation aggregates per-episode metrics into the report") {
    const Dataset& ds = stage_dataset();
    const std::string dir = kWork + "/stages"; // checkpoints from the previous case
    REQUIRE(fs::exists(dir + "/perception_pp.ckpt"));
    const int T = ds.episode_config.T;
    auto val_eps = ds.episodes_of(Split::val);
    const auto n_val = std::int64_t(val_eps.size());
    REQUIRE(n_val > 0);
    std::int64_t n_hard = 0;
    for (const Episode* e : val_eps) n_hard += e->hard;

    EvalOptions opt;
    opt.seed = 9;
    opt.random_runs = 2;

    SUBCASE("a fixed spawn view yields flat curves and no action histogram") {
        MetricReport rep = evaluate(ds, parse_baseline("PP/PP"), dir, opt, Split::val);
        CHECK(rep.baseline == "PP/PP");
        CHECK(rep.episodes == n_val);
        CHECK(rep.steps == T + 1);
        CHECK(rep.action_hist.empty());
        CHECK(rep.config_hash == "h1");
        CHECK(rep.info.at("split") == "val");
        for (int t = 0; t <= T; ++t) {
            for (int m = 0; m < kNumMetrics; ++m) {
                const MetricCell& all = rep.cell(Metric(m), Subset::all, t);
                const MetricCell& easy = rep.cell(Metric(m), Subset::easy, t);
                const MetricCell& hard = rep.cell(Metric(m), Subset::hard, t);
                CHECK(all.sum == rep.cell(Metric(m), Subset::all, 0).sum); // flat in t
                CHECK(easy.n + hard.n == all.n);
                CHECK(easy.sum + hard.sum == doctest::Approx(all.sum).epsilon(1e-12));
                if (Metric(m) != Metric::amask_occ_iou) {
                    CHECK(all.n == n_val);
                    CHECK(hard.n == n_hard);
                    CHECK(all.mean() >= 0.0);
                    CHECK(all.mean() <= 1.0);
                }
            }
            CHECK(rep.distance[std::size_t(t)].n == n_val);
            CHECK(rep.distance[std::size_t(t)].sum == rep.distance[0].sum);
        }
        // spawn distances were constrained at sampling time
        CHECK(rep.distance[0].mean() >= 3.0);
        CHECK(rep.distance[0].mean() <= 6.0);
        std::int64_t cat_n = 0;
        for (const auto& pc : rep.per_category) cat_n += pc[0].n;
        CHECK(cat_n == n_val);

        // independent recomputation of the t=0 sums from the checkpoint
        PerceptionNet per;
        per.store = nn::load_checkpoint<float>(dir + "/perception_pp.ckpt");
        double acc = 0, box = 0, mask = 0, occ = 0;
        std::int64_t occ_n = 0;
        for (const Episode* ep : val_eps) {
            const Scene& scene = ds.scene_by_id(ep->scene_id);
            Frame f = render_frame(scene, ep->spawn, ds.camera);
            auto preds = predict_sequence(per, {&f}, ep->b0, ds.camera);
            const StepPrediction& p = preds.front();
            acc += p.cls == int(scene.find_object(ep->target_id)->category) ? 1.0 : 0.0;
            box += iou_box(p.box, ep->truth.amodal_box);
            mask += iou_mask(p.mask, ep->truth.amodal_mask);
            Mask vis = embed_mask(ep->truth.visible_mask, ds.camera.border_pad,
                                  ds.camera.padded_width(), ds.camera.padded_height());
            if (auto v = amask_occ_iou(p.mask, ep->truth.amodal_mask, vis)) {
                occ += *v;
                ++occ_n;
            }
        }
        CHECK(rep.cell(Metric::clss_acc, Subset::all, 0).sum == acc);
        CHECK(rep.cell(Metric::abox_iou, Subset::all, 0).sum == box);
        CHECK(rep.cell(Metric::amask_iou, Subset::all, 0).sum == mask);
        CHECK(rep.cell(Metric::amask_occ_iou, Subset::all, 0).sum == occ);
        CHECK(rep.cell(Metric::amask_occ_iou, Subset::all, 0).n == occ_n);
    }

    SUBCASE("shortest paths close in on the target and log executed actions") {
        MetricReport rep = evaluate(ds, parse_baseline("SP/SP"), dir, opt, Split::val);
        CHECK(rep.episodes == n_val);
        CHECK(rep.distance[std::size_t(T)].mean() < rep.distance[0].mean());
        REQUIRE(!rep.action_hist.empty());
        CHECK(rep.action_hist.count(1) == 1);
        CHECK(rep.action_hist.count(T) == 1);
        for (const auto& [s, hist] : rep.action_hist) {
            std::int64_t total = 0;
            for (auto c : hist) total += c;
            CHECK(total == n_val); // one run per episode
        }
    }

    SUBCASE("random paths repeat per-episode with seeded runs") {
        MetricReport rep = evaluate(ds, parse_baseline("SP/RP"), dir, opt, Split::val);
        CHECK(rep.info.at("random_runs") == "2");
        for (const auto& [s, hist] : rep.action_hist) {
            std::int64_t total = 0;
            for (auto c : hist) total += c;
            CHECK(total == n_val * 2);
        }
        // per-episode averaging over runs can leave fractional accuracies
        for (int t = 0; t <= T; ++t) {
            CHECK(rep.cell(Metric::clss_acc, Subset::all, t).sum <= double(n_val));
            CHECK(rep.cell(Metric::clss_acc, Subset::all, t).sum >= 0.0);
        }
    }

    SUBCASE("reports are byte-stable across repeats and worker counts") {
        MetricReport a = evaluate(ds, parse_baseline("SP/RP"), dir, opt, Split::val);
        MetricReport b = evaluate(ds, parse_baseline("SP/RP"), dir, opt, Split::val);
        EvalOptions threaded = opt;
        threaded.workers = 3;
        MetricReport c = evaluate(ds, parse_baseline("SP/RP"), dir, threaded, Split::val);
        const std::string ab = report_bytes(a);
        CHECK(ab == report_bytes(b));
        CHECK(ab == report_bytes(c));
    }

    SUBCASE("the active baselines run from the fine-tuned checkpoints") {
        MetricReport ap = evaluate(ds, parse_baseline("AP/AP"), dir, opt, Split::val);
        CHECK(ap.info.at("perception_checkpoint") == "perception_ap.ckpt");
        CHECK(ap.info.at("perception_stage") == "3");
        CHECK(ap.info.at("policy_stage") == "2");
        CHECK(!ap.action_hist.empty());
        MetricReport sap = evaluate(ds, parse_baseline("SP/AP"), dir, opt, Split::val);
        CHECK(sap.info.at("perception_checkpoint") == "perception_sp.ckpt");
    }

    SUBCASE("prediction dumps carry one record per run and step") {
        EvalOptions dopt = opt;
        dopt.dump_predictions = true;
        dopt.dump_path = kWork + "/dump_pp.txt";
        MetricReport rep = evaluate(ds, parse_baseline("PP/PP"), dir, dopt, Split::val);
        const std::string dump = slurp(dopt.dump_path);
        CHECK(rep.episodes == n_val);
        CHECK(dump.rfind("predictions v1\n", 0) == 0);
        CHECK(dump.find("\nend\n") != std::string::npos);
        int preds = 0;
        std::istringstream is(dump);
        std::string line;
        while (std::getline(is, line))
            if (line.rfind("pred ", 0) == 0) ++preds;
        CHECK(preds == int(n_val) * (T + 1));

        EvalOptions noplace = opt;
        noplace.dump_predictions = true;
        CHECK_THROWS_AS(evaluate(ds, parse_baseline("PP/PP"), dir, noplace, Split::val),
                        ConfigError);
    }

    SUBCASE("stale or missing checkpoints are refused") {
        const std::string fresh = kWork + "/fresh_ckpts";
        fs::remove_all(fresh);
        fs::create_directories(fresh);
        CHECK_THROWS_WITH_AS(evaluate(ds, parse_baseline("PP/PP"), fresh, opt, Split::val),
                             doctest::Contains("run the required training stage first"),
                             ConfigError);
        // a stage-1 file posing as the fine-tuned network is rejected
        fs::copy_file(dir + "/perception_pp.ckpt", fresh + "/perception_ap.ckpt");
        CHECK_THROWS_WITH_AS(evaluate(ds, parse_baseline("AP/AP"), fresh, opt, Split::val),
                             doctest::Contains("expected stage=3"), ConfigError);
        // active test path needs the policy as well
        fs::copy_file(dir + "/perception_sp.ckpt", fresh + "/perception_sp.ckpt");
        CHECK_THROWS_WITH_AS(evaluate(ds, parse_baseline("SP/AP"), fresh, opt, Split::val),
                             doctest::Contains("run stage 2 first"), ConfigError);
    }

    SUBCASE("an empty split is reported, not silently scored") {
        Dataset empty = ds;
        std::erase_if(empty.episodes, [](const Episode& e) { return e.split == Split::val; });
        CHECK_THROWS_AS(evaluate(empty, parse_baseline("PP/PP"), dir, opt, Split::val),
                        ValidationError);
    }
}

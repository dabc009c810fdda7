#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "evr/episodes.hpp"
#include "evr/harness.hpp"

using namespace evr;
namespace fs = std::filesystem;

namespace {

const std::string kWork = "/tmp/evr_test_cli";

int run(const std::string& args, const std::string& log = "/dev/null") {
    const std::string cmd = std::string(EVR_BIN) + " " + args + " >" + log + " 2>&1";
    int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(bool(in));
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    REQUIRE(bool(out));
    out << text;
}

std::map<std::string, std::string> read_manifest(const std::string& path) {
    std::map<std::string, std::string> m;
    std::ifstream in(path);
    std::string k, v;
    while (in >> k >> v) m[k] = v;
    return m;
}

// tiny dataset + training knobs sized for a smoke run
const char* kConfig = R"({
  "out_dir": "/tmp/evr_test_cli/run",
  "data": {"seed": 3, "train_scenes": 1, "val_scenes": 1, "test_scenes": 1,
           "episode": {"per_category_cap": 1}},
  "train": {"stage1_max_epochs": 1, "stage2_episodes": 2, "stage3_max_epochs": 1},
  "eval": {"random_runs": 2}
})";

struct Fixture {
    std::string cfg = kWork + "/config.json";
    std::string out = kWork + "/run";
    Fixture() {
        fs::create_directories(kWork);
        write_file(cfg, kConfig);
    }
};

} // namespace

TEST_CASE("usage errors exit with the configuration code") {
    Fixture fx;
    CHECK(run("") == 2);                      // a subcommand is required
    CHECK(run("--help") == 0);
    CHECK(run("frobnicate") == 2);            // unknown subcommand
    CHECK(run("train") == 2);                 // --stage is required
    CHECK(run("eval") == 2);                  // --baseline is required
    CHECK(run("-c " + kWork + "/nope.json gen") == 4);   // unreadable config
    write_file(kWork + "/broken.json", "{oops");
    CHECK(run("-c " + kWork + "/broken.json gen") == 2); // unparsable config
    write_file(kWork + "/unknown.json", R"({"data": {"sceness": 1}})");
    CHECK(run("-c " + kWork + "/unknown.json gen") == 2);
}

TEST_CASE("generation writes the dataset, config copy, and manifest") {
    Fixture fx;
    fs::remove_all(fx.out);
    const std::string log = kWork + "/gen.log";
    REQUIRE(run("-c " + fx.cfg + " gen", log) == 0);
    CHECK(slurp(log).find("generated 3 scenes") != std::string::npos);

    auto manifest = read_manifest(fx.out + "/manifest.txt");
    REQUIRE(manifest.count("config_hash") == 1);
    REQUIRE(manifest.count("dataset_hash") == 1);
    CHECK(fs::exists(fx.out + "/config.json"));
    Dataset ds = load_dataset(fx.out + "/dataset");
    CHECK(ds.scenes.size() == 3);
    CHECK(!ds.episodes.empty());

    // regeneration elsewhere reproduces the exact artifact bytes
    REQUIRE(run("-c " + fx.cfg + " -o " + kWork + "/run_again gen") == 0);
    auto again = read_manifest(kWork + "/run_again/manifest.txt");
    CHECK(again.at("dataset_hash") == manifest.at("dataset_hash"));
    // the hash pins semantics, not placement, so -o does not change it
    CHECK(again.at("config_hash") == manifest.at("config_hash"));
}

TEST_CASE("an impossible generation request fails with the generation code") {
    Fixture fx;
    write_file(kWork + "/impossible.json",
               R"({"data": {"generation": {"walls_min": 0, "walls_max": 0, "max_attempts": 8}}})");
    const std::string log = kWork + "/impossible.log";
    CHECK(run("-c " + kWork + "/impossible.json -o " + kWork + "/never gen", log) == 3);
    CHECK(slurp(log).find("generation error") != std::string::npos);
}

TEST_CASE("training and evaluation refuse to run on mismatched runs") {
    Fixture fx;
    if (!fs::exists(fx.out + "/manifest.txt")) REQUIRE(run("-c " + fx.cfg + " gen") == 0);
    const std::string log = kWork + "/mismatch.log";
    // no dataset in this directory at all
    CHECK(run("-c " + fx.cfg + " -o " + kWork + "/elsewhere train --stage 1", log) == 2);
    CHECK(slurp(log).find("run `evr gen` first") != std::string::npos);
    // same directory, different semantics: the seed override changes the hash
    CHECK(run("-c " + fx.cfg + " -s 777 train --stage 1", log) == 2);
    CHECK(slurp(log).find("config-hash mismatch") != std::string::npos);
    // evaluating before any training stage is a configuration error
    CHECK(run("-c " + fx.cfg + " eval --baseline PP/PP --split val", log) == 2);
    CHECK(slurp(log).find("missing checkpoint") != std::string::npos);
    CHECK(run("-c " + fx.cfg + " eval --baseline XX/YY", log) == 2);
    CHECK(run("-c " + fx.cfg + " eval --baseline PP/PP --split weekend", log) == 2);
}

TEST_CASE("the staged pipeline trains, evaluates, and reports end to end") {
    Fixture fx;
    if (!fs::exists(fx.out + "/manifest.txt")) REQUIRE(run("-c " + fx.cfg + " gen") == 0);

    const std::string log = kWork + "/pipeline.log";
    REQUIRE(run("-c " + fx.cfg + " train --stage 1", log) == 0);
    CHECK(slurp(log).find("stage1 pp:") != std::string::npos);
    CHECK(fs::exists(fx.out + "/ckpt/perception_pp.ckpt"));
    CHECK(fs::exists(fx.out + "/ckpt/perception_sp.ckpt"));
    CHECK(fs::exists(fx.out + "/curves/stage1_pp.csv"));
    CHECK(fs::exists(fx.out + "/curves/stage1_sp.csv"));

    // stage 3 needs the stage-2 policy first
    CHECK(run("-c " + fx.cfg + " train --stage 3", log) == 2);
    CHECK(run("-c " + fx.cfg + " train --stage 4", log) == 2);

    REQUIRE(run("-c " + fx.cfg + " train --stage 2", log) == 0);
    CHECK(fs::exists(fx.out + "/ckpt/policy.ckpt"));
    CHECK(fs::exists(fx.out + "/curves/stage2.csv"));
    CHECK(fs::exists(fx.out + "/curves/stage2_rewards.csv"));

    REQUIRE(run("-c " + fx.cfg + " train --stage 3", log) == 0);
    CHECK(fs::exists(fx.out + "/ckpt/perception_ap.ckpt"));

    // report with nothing evaluated yet
    CHECK(run("-c " + fx.cfg + " report --split val", log) == 2);

    REQUIRE(run("-c " + fx.cfg + " eval --baseline PP/PP --split val", log) == 0);
    CHECK(slurp(log).find("PP/PP on val") != std::string::npos);
    REQUIRE(run("-c " + fx.cfg + " eval --baseline SP/RP --split val --workers 2", log) == 0);
    REQUIRE(run("-c " + fx.cfg + " eval --baseline AP/AP --split val --dump", log) == 0);
    CHECK(fs::exists(fx.out + "/reports/eval_pp_pp_val.csv"));
    CHECK(fs::exists(fx.out + "/reports/eval_sp_rp_val.csv"));
    CHECK(fs::exists(fx.out + "/reports/eval_ap_ap_val.csv"));
    CHECK(fs::exists(fx.out + "/reports/eval_ap_ap_val.summary.txt"));
    CHECK(fs::exists(fx.out + "/reports/dump_ap_ap_val.txt"));

    MetricReport rep = read_report_csv(fx.out + "/reports/eval_pp_pp_val.csv");
    CHECK(rep.baseline == "PP/PP");
    CHECK(rep.episodes > 0);
    CHECK(rep.config_hash == read_manifest(fx.out + "/manifest.txt").at("config_hash"));

    REQUIRE(run("-c " + fx.cfg + " report --split val", log) == 0);
    CHECK(fs::exists(fx.out + "/reports/table_val.csv"));
    const std::string table = slurp(fx.out + "/reports/table_val.csv");
    CHECK(table.find("baseline,all:clss_acc") == 0);
    CHECK(table.find("\nPP/PP,") != std::string::npos);
    CHECK(table.find("\nAP/AP,") != std::string::npos);
    CHECK(fs::exists(fx.out + "/plots/curve_amask_iou_hard_val.svg"));
    CHECK(fs::exists(fx.out + "/plots/distance_val.svg"));
    CHECK(fs::exists(fx.out + "/plots/actions_ap_ap_val.svg"));
    CHECK(slurp(fx.out + "/plots/distance_val.svg").find("<svg") != std::string::npos);

    // replay an episode that exists
    Dataset ds = load_dataset(fx.out + "/dataset");
    const int ep_id = ds.episodes.front().id;
    REQUIRE(run("-c " + fx.cfg + " replay --episode " + std::to_string(ep_id), log) == 0);
    const std::string rep_dir = fx.out + "/replay/ep" + std::to_string(ep_id);
    CHECK(fs::exists(rep_dir + "/t00.ppm"));
    CHECK(fs::exists(rep_dir + "/t10.ppm"));
    CHECK(fs::exists(rep_dir + "/t00_depth.pgm"));
    CHECK(fs::exists(rep_dir + "/amodal_mask.pgm"));
    CHECK(slurp(rep_dir + "/t00.ppm").rfind("P6\n", 0) == 0);
    CHECK(run("-c " + fx.cfg + " replay --episode 123456", log) == 2);
}

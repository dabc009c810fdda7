#pragma once
#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "evr/episodes.hpp"
#include "evr/metrics.hpp"
#include "evr/perception.hpp"
#include "evr/policy.hpp"

namespace evr {

enum class PathKind : int { passive, passive_replicated, random, shortest, active };
const char* path_kind_name(PathKind k);

struct BaselineSpec {
    PathKind train_path = PathKind::passive;
    PathKind test_path = PathKind::passive;
};

// "PP/PP", "SP/PP", "SP/PP*", "SP/RP", "SP/SP", "SP/AP", "AP/AP"
BaselineSpec parse_baseline(const std::string& name); // throws ValidationError
std::string baseline_name(const BaselineSpec& spec);
const std::vector<std::string>& all_baseline_names();

struct TrainOptions {
    int batch_size = 8;
    double stage1_lr = 0.0025;
    double sgd_momentum = 0.99;
    double weight_decay = 0.0005;
    int stage1_max_epochs = 40;
    int patience = 10;           // epochs without val improvement before stopping
    double min_improve = 1e-4;

    double stage2_lr = 4e-5;
    double rms_alpha = 0.99;
    double rms_eps = 5e-5;
    int stage2_episodes = 3000;

    double stage3_lr = 0.0005;
    int stage3_max_epochs = 10;

    double bn_momentum = 0.1;
};

struct StageResult {
    int epochs = 0;        // epochs run (stage 2: episodes)
    double best_val = 0;   // validation metric of the saved checkpoint
};

// Stage 1: perception on fixed paths. passive=false trains on the stored
// shortest-path trajectories (the SP perception), passive=true on spawn
// frames only (the PP perception). Early-stops on validation mask-IoU
// plateau and saves the best-validation parameters.
StageResult run_stage1(const Dataset& ds, bool passive, const TrainOptions& opt,
                       std::uint64_t seed, const std::string& ckpt_out,
                       const std::string& curve_csv, const std::string& config_hash);

// Stage 2: REINFORCE on the policy with perception frozen.
StageResult run_stage2(const Dataset& ds, const std::string& perception_ckpt,
                       const TrainOptions& opt, std::uint64_t seed, const std::string& ckpt_out,
                       const std::string& curve_csv, const std::string& reward_log_csv,
                       const std::string& config_hash);

// Stage 3: fine-tune perception on trajectories sampled from the frozen
// policy.
StageResult run_stage3(const Dataset& ds, const std::string& perception_ckpt,
                       const std::string& policy_ckpt, const TrainOptions& opt,
                       std::uint64_t seed, const std::string& ckpt_out,
                       const std::string& curve_csv, const std::string& config_hash);

// Roll the policy for cfg.T actions from the episode spawn. rng null means
// greedy (argmax) action selection.
Trajectory rollout_policy(const Scene& scene, const OccupancyGrid& grid, const Episode& ep,
                          PolicyNet& policy, Rng* rng, const Camera& camera,
                          const EpisodeConfig& cfg);

// ---- evaluation ----

enum class Subset : int { all = 0, easy = 1, hard = 2 };
inline constexpr int kNumSubsets = 3;

enum class Metric : int { clss_acc = 0, abox_iou = 1, amask_iou = 2, amask_occ_iou = 3 };
inline constexpr int kNumMetrics = 4;
const char* metric_name(Metric m);
const char* subset_name(Subset s);

struct MetricCell {
    double sum = 0;
    std::int64_t n = 0;
    void add(double v) { sum += v; ++n; }
    double mean() const { return n ? sum / double(n) : 0.0; }
};

struct MetricReport {
    std::string baseline;
    std::string config_hash;
    int steps = 0; // T + 1 curve points
    // cells[t][metric][subset]
    std::vector<std::array<std::array<MetricCell, kNumSubsets>, kNumMetrics>> cells;
    // per-category means at the final step, [category][metric]
    std::array<std::array<MetricCell, kNumMetrics>, kNumCategories> per_category{};
    // executed-action histograms at selected steps (1-indexed step -> counts)
    std::map<int, std::array<std::int64_t, kNumActions>> action_hist;
    std::vector<MetricCell> distance; // mean distance to target per t
    std::int64_t episodes = 0;
    std::map<std::string, std::string> info; // budgets, checkpoint stamps

    MetricCell& cell(Metric m, Subset s, int t) {
        return cells[std::size_t(t)][std::size_t(int(m))][std::size_t(int(s))];
    }
    const MetricCell& cell(Metric m, Subset s, int t) const {
        return cells[std::size_t(t)][std::size_t(int(m))][std::size_t(int(s))];
    }
};

struct EvalOptions {
    std::uint64_t seed = 0;
    int workers = 1;
    int random_runs = 5; // seeded repeats for the random-path baseline
    bool dump_predictions = false;
    std::string dump_path; // required when dump_predictions
};

MetricReport evaluate(const Dataset& ds, const BaselineSpec& spec, const std::string& ckpt_dir,
                      const EvalOptions& opt, Split split = Split::test);

void write_report_csv(const MetricReport& r, const std::string& path);
void write_report_summary(const MetricReport& r, const std::string& path);
MetricReport read_report_csv(const std::string& path);

// Checkpoint file names under a checkpoint directory.
std::string perception_ckpt_name(PathKind train_path); // pp / sp / ap
inline constexpr const char* kPolicyCkptName = "policy.ckpt";

} // namespace evr

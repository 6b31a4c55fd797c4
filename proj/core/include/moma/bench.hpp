#pragma once

#include "moma/amc.hpp"
#include "moma/dataset.hpp"
#include "moma/hub.hpp"
#include "moma/trainer.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace moma {

// Synthetic multi-task family with controlled relatedness: every cluster
// owns a random smooth latent map, and each task reads its cluster's latents
// out linearly (plus a small cross-cluster leak term and Gaussian noise,
// with a per-task scale and offset so target units differ across tasks).
struct TaskFamilyConfig {
    std::size_t n_clusters = 4;
    std::size_t tasks_per_cluster = 3;
    std::size_t n_downstream = 8;
    std::size_t input_dim = 16;
    std::size_t latent_dim = 4;
    std::size_t samples_upstream = 2000;
    std::size_t samples_downstream = 300;
    double noise_sigma = 0.1;
    double cross_cluster_leak = 0.05;
    std::uint64_t seed = 42;

    void validate() const;
    static TaskFamilyConfig defaults() { return {}; }

    static TaskFamilyConfig from_json_file(const std::filesystem::path & path);
};

struct TaskFamily {
    TaskFamilyConfig config;
    std::vector<SplitDataset> upstream;   // n_clusters * tasks_per_cluster
    std::vector<SplitDataset> downstream; // n_downstream, task d belongs to cluster d % n_clusters
    LabeledDataset pretrain_pool;         // generic auxiliary task for surrogate pre-training
    std::map<std::string, std::size_t> ground_truth_cluster;

    // ground-truth latent maps, kept around for relatedness probes
    std::vector<Matrix> latent_weights; // per cluster, latent_dim x input_dim
    std::vector<Vec64> latent_biases;   // per cluster, latent_dim

    Vec64 cluster_latents(std::size_t cluster, const Vec64 & x) const;
    std::size_t cluster_of(const std::string & task_name) const;
};

TaskFamily generate_task_family(const TaskFamilyConfig & cfg);

enum class Method { scratch, backbone_ft, multitask_ft, moma_full, moma_adapter };
enum class AblationVariant { amc, select_average, all_average, random_selection };

const char * to_string(Method m);
const char * to_string(AblationVariant v);

struct ReportRow {
    std::string task;
    std::string method;
    std::uint64_t split_seed = 0;
    std::string setting = "full"; // train-size tag for few-shot runs
    double test_mae = 0.0;
};

struct MethodAggregate {
    std::string method;
    double mean_mae = 0.0;
    double avg_rank = 0.0;
    double rank_std = 0.0;
};

struct ExperimentReport {
    std::vector<ReportRow> rows;

    void add(ReportRow row); // throws on duplicate (task, method, split, setting)
    std::string to_csv() const;
    std::string summary_json() const;
};

// Per-task ranking of methods by split-averaged MAE (ties share the mean
// rank), averaged across tasks. Rows are grouped per `setting`
// independently, and only the "full" setting participates.
std::vector<MethodAggregate> aggregate_report(const ExperimentReport & report);

double pearson(const Vec64 & x, const Vec64 & y);

struct FewshotSummary {
    // mean over (task, split) of (backbone_ft - moma_full) test MAE divided
    // by the task's full-train-split target stddev, per train-size setting
    std::vector<std::pair<std::string, double>> margin_by_setting;
    std::string summary_json() const;
};

struct ContinualRow {
    std::string task;
    std::uint64_t split_seed = 0;
    double proxy_before = 0.0, proxy_after = 0.0;
    double mae_before = 0.0, mae_after = 0.0;
    bool new_module_selected = false;
};

struct ContinualReport {
    std::vector<ContinualRow> rows;
    double pearson_affected = 0.0; // proxy-error decrease vs test-MAE decrease
    std::string to_csv() const;
    std::string summary_json() const;
};

struct WeightRecord {
    std::uint64_t split_seed = 0;
    std::string task;
    std::vector<std::string> module_ids;
    Vec64 weights;
};

struct BenchOptions {
    std::vector<std::uint64_t> split_seeds = {1, 2, 3, 4, 5};
    std::uint64_t master_seed = 42;

    EncoderConfig encoder;
    TrainConfig pretrain;
    TrainConfig module_train;
    TrainConfig finetune_cfg;
    std::size_t multitask_epochs = 8;
    double multitask_lr = 0.02;
    AMCConfig amc; // kind_filter switched per method

    bool train_adapters = true;

    static BenchOptions defaults(const TaskFamilyConfig & family);
};

// Owns the trained backbone, the hub directory and the experiment loops.
// Deterministic: everything derives from (family seed, split seeds,
// master seed).
class BenchHarness {
public:
    BenchHarness(TaskFamily family, BenchOptions opts, std::filesystem::path workdir);

    // Surrogate-pretrains the shared backbone, then trains one module per
    // upstream task (skipping `excluded_cluster` when given) into the hub.
    void build_hub(std::optional<std::size_t> excluded_cluster = std::nullopt);

    ExperimentReport run_main(const std::vector<Method> & methods);
    ExperimentReport run_ablation(const std::vector<AblationVariant> & variants);
    std::pair<ExperimentReport, FewshotSummary> run_fewshot(const std::vector<std::size_t> & sizes); // 0 = full
    ContinualReport run_continual(const std::vector<SplitDataset> & new_tasks);

    // dry-run support: the (task, method, split) cells a run would execute
    std::vector<std::string> plan_main(const std::vector<Method> & methods) const;

    const TaskFamily & family() const { return family_; }
    const Hub & hub() const;
    const Module & backbone() const;
    const std::vector<WeightRecord> & weight_records() const { return weight_records_; }
    std::string weight_matrix_csv(std::uint64_t split_seed) const;

private:
    TaskFamily family_;
    BenchOptions opts_;
    std::filesystem::path workdir_;
    std::optional<Hub> hub_;
    std::optional<Module> backbone_;    // surrogate-pretrained shared encoder
    std::optional<Module> multitask_;   // backbone after multi-task training
    std::vector<WeightRecord> weight_records_;

    double run_cell(Method method, const SplitDataset & d, std::size_t task_index,
                    std::uint64_t split_seed, bool record_weights);
    Module train_multitask_backbone(std::optional<std::size_t> excluded_cluster);
    TrainConfig cell_config(const TrainConfig & base, std::uint64_t stream,
                            std::size_t task_index, std::uint64_t split_seed) const;
};

} // namespace moma

#pragma once

#include "moma/dataset.hpp"
#include "moma/encoder.hpp"
#include "moma/hub.hpp"
#include "moma/numerics.hpp"

#include <string>
#include <vector>

namespace moma {

// Per-module leave-one-out estimates: values(i, j) is module j's predicted
// label for train sample i.
struct PredictionMatrix {
    Matrix values;
    std::vector<std::string> module_ids;

    std::size_t sample_count() const { return values.rows; }
};

struct AMCConfig {
    std::size_t k_neighbors = 5;
    double selection_threshold = 1e-6;
    ModuleKind kind_filter = ModuleKind::full;

    void validate() const;
};

struct AMCResult {
    WeightVector weights;                  // aligned with module_ids
    std::vector<std::string> module_ids;
    double proxy_error = 0.0;              // at the optimum, standardized target units
    std::vector<std::string> selected_ids; // weight >= selection_threshold
    Module composed;
};

// Leave-one-out kNN label propagation for the given embeddings: sample i's
// own row is never a neighbor, neighbors are ranked by cosine similarity
// descending with ties broken toward the lower index, and labels combine
// under the normalized exp-cosine kernel. k is clamped to m-1.
Vec64 loo_knn_labels(const std::vector<Vec64> & embeddings, const Vec64 & labels, std::size_t k);

// Neighbor index set for one sample, in rank order. Exposed so oracle-style
// checks can compare the chosen sets directly.
std::vector<std::size_t> loo_knn_neighbors(const std::vector<Vec64> & embeddings,
                                           std::size_t query_index, std::size_t k);

// Embed the train set with one module, then propagate labels leave-one-out.
Vec64 estimate_predictions(const Module & module, const Module * backbone,
                           const LabeledDataset & train, std::size_t k);

// One column per hub module of the configured kind, in manifest order.
// Targets are standardized internally before propagation.
PredictionMatrix build_prediction_matrix(const Hub & hub, const LabeledDataset & train,
                                         const AMCConfig & cfg, const Module * backbone = nullptr);

// Simplex-constrained least squares on the prediction matrix.
std::pair<WeightVector, double> optimize_weights(const Matrix & P, const Vec64 & y);

// Weighted parameter average over the hub modules of the configured kind.
// Weights below the selection threshold are zeroed and the survivors are
// renormalized; the largest weight is always kept.
Module compose(const Hub & hub, const WeightVector & weights, const AMCConfig & cfg,
               const Module * backbone = nullptr);

// The full pipeline on data.train: prediction matrix, weight optimization,
// composition.
AMCResult amc_run(const Hub & hub, const SplitDataset & data, const AMCConfig & cfg,
                  const Module * backbone = nullptr);

// {"task":..., "proxy_error":..., "modules":[{"id","weight","selected"}...]}
std::string amc_report_json(const AMCResult & result, const std::string & task_name);

// task,module,weight rows
std::string amc_report_csv(const AMCResult & result, const std::string & task_name);

} // namespace moma

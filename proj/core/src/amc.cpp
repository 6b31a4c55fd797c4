#include "moma/amc.hpp"

#include "moma/csv.hpp"
#include "moma/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace moma {

void AMCConfig::validate() const {
    if (k_neighbors < 1) {
        throw InvalidInputError("amc config: k_neighbors must be >= 1");
    }
    if (!(selection_threshold >= 0.0) || selection_threshold >= 1.0) {
        throw InvalidInputError("amc config: selection_threshold must be in [0, 1)");
    }
}

std::vector<std::size_t> loo_knn_neighbors(const std::vector<Vec64> & embeddings,
                                           std::size_t query_index, std::size_t k) {
    const std::size_t m = embeddings.size();
    if (m < 2) {
        throw TooFewSamplesError("leave-one-out needs at least 2 samples");
    }
    const std::size_t kk = std::min(k, m - 1);

    std::vector<std::pair<double, std::size_t>> ranked;
    ranked.reserve(m - 1);
    for (std::size_t j = 0; j < m; ++j) {
        if (j == query_index) {
            continue;
        }
        ranked.emplace_back(cosine_similarity(embeddings[query_index], embeddings[j]), j);
    }
    // similarity descending, ties toward the lower sample index
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(kk),
                      ranked.end(), [](const auto & a, const auto & b) {
                          if (a.first != b.first) {
                              return a.first > b.first;
                          }
                          return a.second < b.second;
                      });

    std::vector<std::size_t> out(kk);
    for (std::size_t i = 0; i < kk; ++i) {
        out[i] = ranked[i].second;
    }
    return out;
}

Vec64 loo_knn_labels(const std::vector<Vec64> & embeddings, const Vec64 & labels, std::size_t k) {
    if (embeddings.size() != labels.size()) {
        throw ShapeMismatchError("loo_knn_labels: embeddings vs labels size");
    }
    if (k < 1) {
        throw InvalidInputError("loo_knn_labels: k must be >= 1");
    }
    const std::size_t m = embeddings.size();
    Vec64 out(m);
    for (std::size_t i = 0; i < m; ++i) {
        const auto nbrs = loo_knn_neighbors(embeddings, i, k);
        std::vector<Vec64> nbr_embs;
        nbr_embs.reserve(nbrs.size());
        for (std::size_t j : nbrs) {
            nbr_embs.push_back(embeddings[j]);
        }
        const Vec64 kw = knn_kernel_weights(embeddings[i], nbr_embs);
        double acc = 0.0;
        for (std::size_t t = 0; t < nbrs.size(); ++t) {
            acc += kw[t] * labels[nbrs[t]];
        }
        out[i] = acc;
    }
    return out;
}

Vec64 estimate_predictions(const Module & module, const Module * backbone,
                           const LabeledDataset & train, std::size_t k) {
    train.validate();
    if (train.size() < 2) {
        throw TooFewSamplesError("estimate_predictions: train split has " +
                                 std::to_string(train.size()) + " rows, need >= 2");
    }
    std::vector<Vec64> embs;
    embs.reserve(train.size());
    for (const Vec64 & x : train.features) {
        embs.push_back(forward_embed(module, backbone, x));
    }
    return loo_knn_labels(embs, train.targets, k);
}

namespace {

// manifest entries of the requested kind; fingerprints must agree
std::vector<ManifestEntry> select_entries(const Hub & hub, const AMCConfig & cfg,
                                          const Module * backbone) {
    std::vector<ManifestEntry> out;
    for (const auto & e : hub.entries()) {
        if (e.kind == cfg.kind_filter) {
            out.push_back(e);
        }
    }
    if (out.empty()) {
        throw EmptyHubError("hub has no modules of kind " +
                            std::string(to_string(cfg.kind_filter)));
    }
    for (const auto & e : out) {
        if (e.config_fingerprint != out[0].config_fingerprint) {
            throw ConfigMismatchError("hub modules '" + out[0].id + "' and '" + e.id +
                                      "' have different fingerprints");
        }
    }
    if (cfg.kind_filter == ModuleKind::adapter) {
        if (backbone == nullptr) {
            throw MissingBackboneError("adapter composition requires a backbone");
        }
        if (backbone->fingerprint_hex() != out[0].config_fingerprint) {
            throw ConfigMismatchError("backbone fingerprint does not match hub modules");
        }
    }
    return out;
}

} // namespace

PredictionMatrix build_prediction_matrix(const Hub & hub, const LabeledDataset & train,
                                         const AMCConfig & cfg, const Module * backbone) {
    cfg.validate();
    const auto entries = select_entries(hub, cfg, backbone);

    LabeledDataset std_train = train;
    std_train.targets = standardize(train.targets, compute_target_stats(train.targets));

    PredictionMatrix pm;
    pm.values = Matrix(train.size(), entries.size());
    for (std::size_t j = 0; j < entries.size(); ++j) {
        auto [module, head] = hub.load(entries[j].id);
        (void)head;
        const Vec64 col = estimate_predictions(module, backbone, std_train, cfg.k_neighbors);
        for (std::size_t i = 0; i < col.size(); ++i) {
            pm.values(i, j) = col[i];
        }
        pm.module_ids.push_back(entries[j].id);
    }
    return pm;
}

std::pair<WeightVector, double> optimize_weights(const Matrix & P, const Vec64 & y) {
    SimplexLsqResult res = solve_simplex_lsq(P, y);
    return {std::move(res.weights), res.proxy_error};
}

Module compose(const Hub & hub, const WeightVector & weights, const AMCConfig & cfg,
               const Module * backbone) {
    cfg.validate();
    weights.validate();
    const auto entries = select_entries(hub, cfg, backbone);
    if (entries.size() != weights.size()) {
        throw ShapeMismatchError("compose: " + std::to_string(weights.size()) + " weights vs " +
                                 std::to_string(entries.size()) + " hub modules");
    }

    // drop weights under the threshold; the max always survives
    std::size_t argmax = 0;
    for (std::size_t j = 1; j < weights.size(); ++j) {
        if (weights[j] > weights[argmax]) {
            argmax = j;
        }
    }
    std::vector<std::size_t> kept;
    double kept_sum = 0.0;
    for (std::size_t j = 0; j < weights.size(); ++j) {
        if (weights[j] >= cfg.selection_threshold) {
            kept.push_back(j);
            kept_sum += weights[j];
        }
    }
    if (kept.empty()) {
        kept.push_back(argmax);
        kept_sum = weights[argmax];
    }

    WeightVector survivor_weights;
    std::vector<Vec64> survivor_params;
    EncoderConfig composed_config;
    std::ostringstream note;
    note << "composed:";
    for (std::size_t t = 0; t < kept.size(); ++t) {
        const std::size_t j = kept[t];
        auto [module, head] = hub.load(entries[j].id);
        (void)head;
        if (module.kind != cfg.kind_filter) {
            throw ConfigMismatchError("module '" + entries[j].id + "' kind differs from filter");
        }
        if (t == 0) {
            composed_config = module.config;
        }
        const double renorm = kept.size() == 1 ? 1.0 : weights[j] / kept_sum;
        survivor_weights.w.push_back(renorm);
        survivor_params.push_back(std::move(module.params));
        note << (t ? "," : " ") << entries[j].id << ':' << format_double(renorm);
    }

    Module out;
    out.kind = cfg.kind_filter;
    out.config = std::move(composed_config);
    out.params = blend_parameters(survivor_params, survivor_weights);
    out.meta.notes = note.str();
    return out;
}

AMCResult amc_run(const Hub & hub, const SplitDataset & data, const AMCConfig & cfg,
                  const Module * backbone) {
    AMCResult res;
    PredictionMatrix pm = build_prediction_matrix(hub, data.train, cfg, backbone);
    const Vec64 y = standardize(data.train.targets, compute_target_stats(data.train.targets));
    auto [w, err] = optimize_weights(pm.values, y);
    res.weights = std::move(w);
    res.proxy_error = err;
    res.module_ids = pm.module_ids;
    for (std::size_t j = 0; j < res.weights.size(); ++j) {
        if (res.weights[j] >= cfg.selection_threshold) {
            res.selected_ids.push_back(res.module_ids[j]);
        }
    }
    if (res.selected_ids.empty()) {
        std::size_t argmax = 0;
        for (std::size_t j = 1; j < res.weights.size(); ++j) {
            if (res.weights[j] > res.weights[argmax]) {
                argmax = j;
            }
        }
        res.selected_ids.push_back(res.module_ids[argmax]);
    }
    res.composed = compose(hub, res.weights, cfg, backbone);
    res.composed.meta.task_name = data.train.name;
    return res;
}

std::string amc_report_json(const AMCResult & result, const std::string & task_name) {
    nlohmann::json j;
    j["task"] = task_name;
    j["proxy_error"] = result.proxy_error;
    j["selected_ids"] = result.selected_ids;
    j["modules"] = nlohmann::json::array();
    for (std::size_t i = 0; i < result.module_ids.size(); ++i) {
        const bool selected =
            std::find(result.selected_ids.begin(), result.selected_ids.end(),
                      result.module_ids[i]) != result.selected_ids.end();
        j["modules"].push_back({{"id", result.module_ids[i]},
                                {"weight", result.weights[i]},
                                {"selected", selected}});
    }
    return j.dump(2) + "\n";
}

std::string amc_report_csv(const AMCResult & result, const std::string & task_name) {
    std::ostringstream os;
    os << "task,module,weight\n";
    for (std::size_t i = 0; i < result.module_ids.size(); ++i) {
        os << task_name << ',' << result.module_ids[i] << ','
           << format_double(result.weights[i]) << '\n';
    }
    return os.str();
}

} // namespace moma

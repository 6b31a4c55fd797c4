#include "moma/trainer.hpp"

#include "moma/errors.hpp"
#include "moma/rng.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace moma {

TrainConfig TrainConfig::module_defaults() {
    TrainConfig c;
    c.batch_size = 64;
    c.learning_rate = 5e-4;
    c.max_epochs = 80;
    c.patience = 10;
    return c;
}

TrainConfig TrainConfig::finetune_defaults() {
    TrainConfig c;
    c.batch_size = 32;
    c.learning_rate = 8e-5;
    c.max_epochs = 60;
    c.patience = 10;
    return c;
}

void TrainConfig::validate() const {
    if (batch_size < 1) {
        throw InvalidInputError("train config: batch_size must be >= 1");
    }
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw InvalidInputError("train config: bad learning rate");
    }
    if (patience < 1) {
        throw InvalidInputError("train config: patience must be >= 1");
    }
}

namespace {

// MAE in original units for a module/head trained on standardized targets
double mae_destandardized(const Module & m, const Module * bb, const Head & head,
                          const LabeledDataset & data, const TargetStats & stats) {
    double acc = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double pred_std = forward_predict(m, bb, head, data.features[i]);
        const double pred = pred_std * stats.stddev + stats.mean;
        acc += std::abs(pred - data.targets[i]);
    }
    return acc / static_cast<double>(data.size());
}

Head destandardize_head(const Head & head, const TargetStats & stats) {
    Head out;
    out.weights.resize(head.weights.size());
    for (std::size_t i = 0; i < head.weights.size(); ++i) {
        out.weights[i] = head.weights[i] * stats.stddev;
    }
    out.bias = head.bias * stats.stddev + stats.mean;
    return out;
}

struct LoopSetup {
    Module module;        // trainable parameters live here
    const Module * frozen_backbone = nullptr;
    Head head;            // in standardized units during the loop
};

// Shared epoch loop. `data` targets are in original units; training happens
// on standardized targets and the returned head folds the de-standardization
// back in, so predictions and history are always in original units.
TrainResult run_training(LoopSetup setup, const SplitDataset & data, const TrainConfig & cfg) {
    cfg.validate();
    data.train.validate();
    if (!data.val.features.empty()) {
        data.val.validate();
    }

    const TargetStats stats = cfg.target_standardize ? compute_target_stats(data.train.targets)
                                                     : TargetStats{};
    const Vec64 y_train = standardize(data.train.targets, stats);

    Module & mod = setup.module;
    const Module * bb = setup.frozen_backbone;
    Head & head = setup.head;
    if (head.weights.empty()) {
        head.weights.assign(mod.config.embed_dim, 0.0);
        head.bias = 0.0;
    }

    const bool has_val = !data.val.features.empty();
    auto val_mae = [&]() {
        return has_val ? mae_destandardized(mod, bb, head, data.val, stats)
                       : mae_destandardized(mod, bb, head, data.train, stats);
    };

    TrainResult res;
    res.history.push_back({0, mae_destandardized(mod, bb, head, data.train, stats), val_mae()});
    res.best_epoch = 0;
    res.best_val_mae = res.history[0].val_mae;
    Vec64 best_params = mod.params;
    Head best_head = head;

    const std::size_t m = data.train.size();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(cfg.seed, {0x7EA1u}));

    Vec64 grad_acc(mod.params.size());
    Vec64 head_grad_acc(head.weights.size());

    std::size_t bad_epochs = 0;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);

        for (std::size_t start = 0; start < m; start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, m);
            const double inv = 1.0 / static_cast<double>(end - start);
            std::fill(grad_acc.begin(), grad_acc.end(), 0.0);
            std::fill(head_grad_acc.begin(), head_grad_acc.end(), 0.0);
            double head_bias_acc = 0.0;
            double batch_loss = 0.0;

            for (std::size_t k = start; k < end; ++k) {
                const std::size_t i = order[k];
                GradientResult g = gradient(mod, bb, head, data.train.features[i], y_train[i]);
                const double resid = g.prediction - y_train[i];
                batch_loss += resid * resid;
                for (std::size_t p = 0; p < grad_acc.size(); ++p) {
                    grad_acc[p] += g.param_grad[p];
                }
                for (std::size_t p = 0; p < head_grad_acc.size(); ++p) {
                    head_grad_acc[p] += g.head_weight_grad[p];
                }
                head_bias_acc += g.head_bias_grad;
            }

            if (!std::isfinite(batch_loss)) {
                throw DivergenceError("training loss is not finite at epoch " +
                                      std::to_string(epoch), epoch);
            }

            const double step = cfg.learning_rate * inv;
            for (std::size_t p = 0; p < grad_acc.size(); ++p) {
                mod.params[p] -= step * grad_acc[p];
            }
            for (std::size_t p = 0; p < head_grad_acc.size(); ++p) {
                head.weights[p] -= step * head_grad_acc[p];
            }
            head.bias -= step * head_bias_acc;
        }

        EpochStats row;
        row.epoch = epoch;
        row.train_mae = mae_destandardized(mod, bb, head, data.train, stats);
        row.val_mae = val_mae();
        res.history.push_back(row);

        if (row.val_mae < res.best_val_mae) {
            res.best_val_mae = row.val_mae;
            res.best_epoch = epoch;
            best_params = mod.params;
            best_head = head;
            bad_epochs = 0;
        } else {
            if (++bad_epochs >= cfg.patience) {
                break;
            }
        }
    }

    res.module = std::move(setup.module);
    res.module.params = std::move(best_params);
    res.head = destandardize_head(best_head, stats);
    res.module.meta.created_from_seed = cfg.seed;
    res.module.meta.train_mae = res.history[res.best_epoch].train_mae;
    return res;
}

} // namespace

TrainResult train_module(const Module & init, const SplitDataset & data,
                         const TrainConfig & cfg, ModuleKind kind) {
    if (init.kind != ModuleKind::full) {
        throw ConfigMismatchError("train_module: init must be a full module");
    }
    LoopSetup setup;
    if (kind == ModuleKind::full) {
        setup.module = init;
    } else {
        setup.module = attach_adapters(init, init.config, cfg.seed);
        setup.frozen_backbone = &init;
    }
    TrainResult res = run_training(std::move(setup), data, cfg);
    res.module.meta.task_name = data.train.name;
    return res;
}

TrainResult finetune(const Module & composed, const Module * backbone,
                     const SplitDataset & data, const TrainConfig & cfg) {
    cfg.validate();
    data.train.validate();

    const TargetStats stats = cfg.target_standardize ? compute_target_stats(data.train.targets)
                                                     : TargetStats{};
    // closed-form head on the composed module's train embeddings
    std::vector<Vec64> embs;
    embs.reserve(data.train.size());
    for (const Vec64 & x : data.train.features) {
        embs.push_back(forward_embed(composed, backbone, x));
    }
    LoopSetup setup;
    setup.module = composed;
    setup.frozen_backbone = composed.kind == ModuleKind::adapter ? backbone : nullptr;
    setup.head = fit_head_least_squares(embs, standardize(data.train.targets, stats));

    TrainResult res = run_training(std::move(setup), data, cfg);
    res.module.meta.task_name = data.train.name;
    return res;
}

double evaluate_mae(const Module & module, const Module * backbone, const Head & head,
                    const LabeledDataset & data) {
    if (data.features.empty()) {
        throw EmptyDatasetError("evaluate_mae: empty dataset");
    }
    data.validate();
    double acc = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        acc += std::abs(forward_predict(module, backbone, head, data.features[i]) -
                        data.targets[i]);
    }
    return acc / static_cast<double>(data.size());
}

Module surrogate_pretrain(const Module & init, const LabeledDataset & pool,
                          const TrainConfig & cfg) {
    if (cfg.max_epochs == 0) {
        return init;
    }
    SplitDataset split = split_dataset(pool, cfg.seed);
    TrainResult res = train_module(init, split, cfg, ModuleKind::full);
    Module out = std::move(res.module); // head is thrown away
    out.meta.task_name = pool.name;
    return out;
}

Head fit_head_least_squares(const std::vector<Vec64> & embeddings, const Vec64 & targets) {
    if (embeddings.empty() || embeddings.size() != targets.size()) {
        throw ShapeMismatchError("fit_head_least_squares: bad inputs");
    }
    const std::size_t d = embeddings[0].size();
    const std::size_t n = d + 1; // weights plus bias

    // normal equations with a small ridge so collinear embeddings stay solvable
    Matrix a(n, n, 0.0);
    Vec64 b(n, 0.0);
    for (std::size_t r = 0; r < embeddings.size(); ++r) {
        const Vec64 & e = embeddings[r];
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                a(i, j) += e[i] * e[j];
            }
            a(i, d) += e[i];
            a(d, i) += e[i];
            b[i] += e[i] * targets[r];
        }
        a(d, d) += 1.0;
        b[d] += targets[r];
    }
    // trace-scaled ridge on the weights (never the intercept): negligible on
    // well-conditioned fits, keeps the head bounded on degenerate embeddings,
    // and commutes exactly with target standardization
    double trace = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        trace += a(i, i);
    }
    const double ridge = 1e-4 * trace / static_cast<double>(d) + 1e-12;
    for (std::size_t i = 0; i < d; ++i) {
        a(i, i) += ridge;
    }

    Vec64 sol = solve_linear_system(std::move(a), std::move(b));
    Head head;
    head.weights.assign(sol.begin(), sol.begin() + static_cast<std::ptrdiff_t>(d));
    head.bias = sol[d];
    return head;
}

} // namespace moma

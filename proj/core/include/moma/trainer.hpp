#pragma once

#include "moma/dataset.hpp"
#include "moma/encoder.hpp"

#include <cstdint>
#include <vector>

namespace moma {

struct TrainConfig {
    std::size_t batch_size = 32;
    double learning_rate = 8e-5;
    std::size_t max_epochs = 60;
    std::size_t patience = 10;
    std::uint64_t seed = 42;
    bool target_standardize = true;

    // stage-1 module training defaults
    static TrainConfig module_defaults();
    // stage-2 downstream fine-tuning defaults
    static TrainConfig finetune_defaults();

    void validate() const;
};

struct EpochStats {
    std::size_t epoch = 0; // 0 is the pre-training state
    double train_mae = 0.0;
    double val_mae = 0.0;
};

struct TrainResult {
    Module module;
    Head head;                       // predicts in original target units
    std::vector<EpochStats> history; // one row per epoch, epoch 0 included
    double best_val_mae = 0.0;
    std::size_t best_epoch = 0;
};

// Stage 1: train one task module. kind=full fine-tunes every backbone
// parameter; kind=adapter attaches fresh adapters to `init` and trains only
// those (the backbone stays frozen). Plain SGD, seeded shuffling, early
// stopping on validation MAE; returns the best-validation snapshot.
TrainResult train_module(const Module & init, const SplitDataset & data,
                         const TrainConfig & cfg, ModuleKind kind);

// Stage 2: fine-tune a composed module. The head is initialized with the
// closed-form least-squares fit on train embeddings before any SGD epoch.
TrainResult finetune(const Module & composed, const Module * backbone,
                     const SplitDataset & data, const TrainConfig & cfg);

// Mean absolute error in original target units.
double evaluate_mae(const Module & module, const Module * backbone, const Head & head,
                    const LabeledDataset & data);

// Desk-scale stand-in for a pre-trained checkpoint: trains backbone plus a
// throwaway head on a pooled auxiliary task and returns the backbone.
Module surrogate_pretrain(const Module & init, const LabeledDataset & pool,
                          const TrainConfig & cfg);

// Ridge-stabilized least-squares head fit (weights and bias) on embeddings.
Head fit_head_least_squares(const std::vector<Vec64> & embeddings, const Vec64 & targets);

} // namespace moma

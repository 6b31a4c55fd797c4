#pragma once

#include "moma/numerics.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace moma {

struct LabeledDataset {
    std::vector<Vec64> features;
    Vec64 targets;
    std::string name;

    std::size_t size() const { return features.size(); }
    std::size_t input_dim() const { return features.empty() ? 0 : features[0].size(); }

    // m >= 1, uniform row lengths, finite values everywhere
    void validate() const;
};

struct SplitDataset {
    LabeledDataset train, val, test;
};

struct SplitRatios {
    double train = 0.70;
    double val = 0.15;
    double test = 0.15;
};

// Seeded shuffle + partition. Row order within each split follows the
// shuffled order, so the result is deterministic given (data, seed).
SplitDataset split_dataset(const LabeledDataset & data, std::uint64_t seed,
                           const SplitRatios & ratios = {});

// Re-pool an existing split (train, val, test order) and split again with a
// different seed. Used to run experiments over several random splits.
SplitDataset resplit(const SplitDataset & data, std::uint64_t seed,
                     const SplitRatios & ratios = {});

struct TargetStats {
    double mean = 0.0;
    double stddev = 1.0;
};

// Population statistics; stddev floors at 1 when the targets are constant.
TargetStats compute_target_stats(const Vec64 & targets);

Vec64 standardize(const Vec64 & targets, const TargetStats & stats);
Vec64 destandardize(const Vec64 & targets, const TargetStats & stats);

// Keep `count` training rows chosen without replacement (a strict subset of
// the original train indices); val and test are untouched.
SplitDataset downsample_train(const SplitDataset & data, std::size_t count, std::uint64_t seed);

} // namespace moma

#include "moma/dataset.hpp"

#include "moma/errors.hpp"
#include "moma/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace moma {

void LabeledDataset::validate() const {
    if (features.empty()) {
        throw EmptyDatasetError("dataset '" + name + "' has no rows");
    }
    if (targets.size() != features.size()) {
        throw ShapeMismatchError("dataset '" + name + "': " + std::to_string(features.size()) +
                                 " rows vs " + std::to_string(targets.size()) + " targets");
    }
    const std::size_t d = features[0].size();
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (features[i].size() != d) {
            throw ShapeMismatchError("dataset '" + name + "': ragged row " + std::to_string(i));
        }
        for (double x : features[i]) {
            if (!std::isfinite(x)) {
                throw InvalidInputError("dataset '" + name + "': non-finite feature in row " +
                                        std::to_string(i));
            }
        }
        if (!std::isfinite(targets[i])) {
            throw InvalidInputError("dataset '" + name + "': non-finite target in row " +
                                    std::to_string(i));
        }
    }
}

namespace {

LabeledDataset take_rows(const LabeledDataset & src, const std::vector<std::size_t> & idx,
                         std::size_t begin, std::size_t end) {
    LabeledDataset out;
    out.name = src.name;
    out.features.reserve(end - begin);
    out.targets.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
        out.features.push_back(src.features[idx[i]]);
        out.targets.push_back(src.targets[idx[i]]);
    }
    return out;
}

} // namespace

SplitDataset split_dataset(const LabeledDataset & data, std::uint64_t seed,
                           const SplitRatios & ratios) {
    data.validate();
    const std::size_t n = data.size();

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(mix_seed(seed, {0x511e7u}));
    rng.shuffle(idx);

    std::size_t n_train = static_cast<std::size_t>(static_cast<double>(n) * ratios.train);
    std::size_t n_val = static_cast<std::size_t>(static_cast<double>(n) * ratios.val);
    n_train = std::max<std::size_t>(n_train, 1);
    if (n_train + n_val > n) {
        n_val = n - n_train;
    }

    SplitDataset out;
    out.train = take_rows(data, idx, 0, n_train);
    out.val = take_rows(data, idx, n_train, n_train + n_val);
    out.test = take_rows(data, idx, n_train + n_val, n);
    return out;
}

SplitDataset resplit(const SplitDataset & data, std::uint64_t seed, const SplitRatios & ratios) {
    LabeledDataset pooled;
    pooled.name = data.train.name;
    for (const LabeledDataset * part : {&data.train, &data.val, &data.test}) {
        pooled.features.insert(pooled.features.end(), part->features.begin(), part->features.end());
        pooled.targets.insert(pooled.targets.end(), part->targets.begin(), part->targets.end());
    }
    return split_dataset(pooled, seed, ratios);
}

TargetStats compute_target_stats(const Vec64 & targets) {
    if (targets.empty()) {
        throw EmptyDatasetError("target stats of empty vector");
    }
    TargetStats s;
    double sum = 0.0;
    for (double y : targets) {
        sum += y;
    }
    s.mean = sum / static_cast<double>(targets.size());
    double var = 0.0;
    for (double y : targets) {
        var += (y - s.mean) * (y - s.mean);
    }
    var /= static_cast<double>(targets.size());
    s.stddev = var < 1e-24 ? 1.0 : std::sqrt(var);
    return s;
}

Vec64 standardize(const Vec64 & targets, const TargetStats & stats) {
    Vec64 out(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) {
        out[i] = (targets[i] - stats.mean) / stats.stddev;
    }
    return out;
}

Vec64 destandardize(const Vec64 & targets, const TargetStats & stats) {
    Vec64 out(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) {
        out[i] = targets[i] * stats.stddev + stats.mean;
    }
    return out;
}

SplitDataset downsample_train(const SplitDataset & data, std::size_t count, std::uint64_t seed) {
    SplitDataset out = data;
    const std::size_t n = data.train.size();
    if (count >= n) {
        return out; // clamp: nothing to drop
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(mix_seed(seed, {0xFE57u}));
    rng.shuffle(idx);
    idx.resize(count);
    std::sort(idx.begin(), idx.end()); // keep original row order

    out.train.features.clear();
    out.train.targets.clear();
    for (std::size_t i : idx) {
        out.train.features.push_back(data.train.features[i]);
        out.train.targets.push_back(data.train.targets[i]);
    }
    return out;
}

} // namespace moma

#pragma once

#include "moma/dataset.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace moma {

// Dataset CSV format: header `f0,...,f{d-1},target` plus an optional trailing
// `split` column holding train/val/test tags. Values are decimal 64-bit
// floats, round-trip exact via %.17g.

enum class SplitTag { train, val, test };

struct LoadedCsv {
    LabeledDataset data;
    std::optional<std::vector<SplitTag>> split_tags; // present iff the file has a split column
};

// Throws CsvError with row/column diagnostics on malformed input.
LoadedCsv load_dataset_csv(const std::filesystem::path & path);

void save_dataset_csv(const std::filesystem::path & path, const LabeledDataset & data);
void save_split_csv(const std::filesystem::path & path, const SplitDataset & data);

// Apply explicit split tags, or fall back to the seeded 7:1.5:1.5 split.
SplitDataset split_from_csv(const LoadedCsv & loaded, std::uint64_t seed);

// %.17g, shortest exact round-trip not required but parse(format(x)) == x
std::string format_double(double x);

} // namespace moma

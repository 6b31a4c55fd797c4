#include "moma/csv.hpp"

#include "moma/errors.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace moma {

namespace {

std::vector<std::string> split_line(const std::string & line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string & s, std::size_t row, std::size_t col) {
    double v = 0.0;
    const char * b = s.data();
    const char * e = b + s.size();
    auto [ptr, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || ptr != e || s.empty()) {
        throw CsvError("row " + std::to_string(row) + ", column " + std::to_string(col + 1) +
                       ": expected a number, got '" + s + "'");
    }
    return v;
}

} // namespace

std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

LoadedCsv load_dataset_csv(const std::filesystem::path & path) {
    std::ifstream in(path);
    if (!in) {
        throw NotFoundError("cannot open " + path.string());
    }

    std::string line;
    if (!std::getline(in, line)) {
        throw CsvError("empty file: " + path.string());
    }
    const auto header = split_line(line);
    if (header.size() < 2) {
        throw CsvError("header needs at least one feature column and a target");
    }

    bool has_split = header.back() == "split";
    const std::size_t d = header.size() - 1 - (has_split ? 1 : 0);
    if (d < 1) {
        throw CsvError("header has no feature columns");
    }
    for (std::size_t i = 0; i < d; ++i) {
        if (header[i] != "f" + std::to_string(i)) {
            throw CsvError("header column " + std::to_string(i + 1) + ": expected f" +
                           std::to_string(i) + ", got '" + header[i] + "'");
        }
    }
    if (header[d] != "target") {
        throw CsvError("header column " + std::to_string(d + 1) + ": expected target, got '" +
                       header[d] + "'");
    }

    LoadedCsv out;
    out.data.name = path.stem().string();
    if (has_split) {
        out.split_tags.emplace();
    }

    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) {
            continue;
        }
        const auto cells = split_line(line);
        if (cells.size() != header.size()) {
            throw CsvError("row " + std::to_string(row) + ": " + std::to_string(cells.size()) +
                           " columns, header has " + std::to_string(header.size()));
        }
        Vec64 feat(d);
        for (std::size_t i = 0; i < d; ++i) {
            feat[i] = parse_double(cells[i], row, i);
        }
        out.data.features.push_back(std::move(feat));
        out.data.targets.push_back(parse_double(cells[d], row, d));
        if (has_split) {
            const std::string & tag = cells[d + 1];
            if (tag == "train") {
                out.split_tags->push_back(SplitTag::train);
            } else if (tag == "val") {
                out.split_tags->push_back(SplitTag::val);
            } else if (tag == "test") {
                out.split_tags->push_back(SplitTag::test);
            } else {
                throw CsvError("row " + std::to_string(row) + ", column " + std::to_string(d + 2) +
                               ": split must be train/val/test, got '" + tag + "'");
            }
        }
    }
    if (out.data.features.empty()) {
        throw CsvError("no data rows in " + path.string());
    }
    out.data.validate();
    return out;
}

void save_dataset_csv(const std::filesystem::path & path, const LabeledDataset & data) {
    data.validate();
    std::ofstream outf(path);
    if (!outf) {
        throw Error("cannot write " + path.string());
    }
    const std::size_t d = data.input_dim();
    for (std::size_t i = 0; i < d; ++i) {
        outf << 'f' << i << ',';
    }
    outf << "target\n";
    for (std::size_t r = 0; r < data.size(); ++r) {
        for (std::size_t i = 0; i < d; ++i) {
            outf << format_double(data.features[r][i]) << ',';
        }
        outf << format_double(data.targets[r]) << '\n';
    }
}

void save_split_csv(const std::filesystem::path & path, const SplitDataset & data) {
    std::ofstream outf(path);
    if (!outf) {
        throw Error("cannot write " + path.string());
    }
    const std::size_t d = data.train.input_dim();
    for (std::size_t i = 0; i < d; ++i) {
        outf << 'f' << i << ',';
    }
    outf << "target,split\n";
    auto emit = [&](const LabeledDataset & part, const char * tag) {
        for (std::size_t r = 0; r < part.size(); ++r) {
            for (std::size_t i = 0; i < d; ++i) {
                outf << format_double(part.features[r][i]) << ',';
            }
            outf << format_double(part.targets[r]) << ',' << tag << '\n';
        }
    };
    emit(data.train, "train");
    emit(data.val, "val");
    emit(data.test, "test");
}

SplitDataset split_from_csv(const LoadedCsv & loaded, std::uint64_t seed) {
    if (!loaded.split_tags) {
        return split_dataset(loaded.data, seed);
    }
    SplitDataset out;
    out.train.name = out.val.name = out.test.name = loaded.data.name;
    for (std::size_t i = 0; i < loaded.data.size(); ++i) {
        LabeledDataset * part = nullptr;
        switch ((*loaded.split_tags)[i]) {
            case SplitTag::train: part = &out.train; break;
            case SplitTag::val:   part = &out.val;   break;
            case SplitTag::test:  part = &out.test;  break;
        }
        part->features.push_back(loaded.data.features[i]);
        part->targets.push_back(loaded.data.targets[i]);
    }
    if (out.train.features.empty()) {
        throw CsvError("split column assigns no train rows");
    }
    return out;
}

} // namespace moma

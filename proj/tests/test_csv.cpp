#include "moma/csv.hpp"

#include "moma/errors.hpp"
#include "moma/rng.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

using namespace moma;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("moma-csv-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

} // namespace

TEST_CASE("dataset csv round trips values exactly") {
    TempDir tmp;
    Rng rng(17);
    LabeledDataset data;
    data.name = "rt";
    for (int i = 0; i < 25; ++i) {
        Vec64 x(3);
        for (auto & v : x) v = rng.uniform(-1e6, 1e6) * std::pow(10, -(int)rng.next_below(12));
        data.features.push_back(x);
        data.targets.push_back(rng.uniform(-1e3, 1e3));
    }
    save_dataset_csv(tmp.path / "d.csv", data);
    const LoadedCsv loaded = load_dataset_csv(tmp.path / "d.csv");
    CHECK_FALSE(loaded.split_tags.has_value());
    CHECK(loaded.data.features == data.features);
    CHECK(loaded.data.targets == data.targets);
}

TEST_CASE("split column round trip preserves the partition") {
    TempDir tmp;
    LabeledDataset data;
    data.name = "s";
    for (int i = 0; i < 10; ++i) {
        data.features.push_back({double(i), double(i) * 2});
        data.targets.push_back(double(i));
    }
    SplitDataset split = split_dataset(data, 5);
    save_split_csv(tmp.path / "s.csv", split);

    const LoadedCsv loaded = load_dataset_csv(tmp.path / "s.csv");
    REQUIRE(loaded.split_tags.has_value());
    const SplitDataset again = split_from_csv(loaded, 999); // seed must be ignored
    CHECK(again.train.features == split.train.features);
    CHECK(again.val.features == split.val.features);
    CHECK(again.test.features == split.test.features);
}

TEST_CASE("malformed csv reports row and column") {
    TempDir tmp;
    SUBCASE("bad number") {
        std::ofstream(tmp.path / "bad.csv") << "f0,f1,target\n1.0,2.0,3.0\n1.0,oops,3.0\n";
        try {
            load_dataset_csv(tmp.path / "bad.csv");
            FAIL("expected CsvError");
        } catch (const CsvError & e) {
            const std::string msg = e.what();
            CHECK(msg.find("row 3") != std::string::npos);
            CHECK(msg.find("column 2") != std::string::npos);
        }
    }
    SUBCASE("wrong column count") {
        std::ofstream(tmp.path / "bad.csv") << "f0,f1,target\n1.0,2.0\n";
        CHECK_THROWS_AS(load_dataset_csv(tmp.path / "bad.csv"), CsvError);
    }
    SUBCASE("wrong header") {
        std::ofstream(tmp.path / "bad.csv") << "x0,x1,target\n1.0,2.0,3.0\n";
        CHECK_THROWS_AS(load_dataset_csv(tmp.path / "bad.csv"), CsvError);
    }
    SUBCASE("bad split tag") {
        std::ofstream(tmp.path / "bad.csv") << "f0,target,split\n1.0,2.0,maybe\n";
        CHECK_THROWS_AS(load_dataset_csv(tmp.path / "bad.csv"), CsvError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_dataset_csv(tmp.path / "absent.csv"), NotFoundError);
    }
}

TEST_CASE("format_double survives a parse round trip") {
    Rng rng(23);
    for (int i = 0; i < 200; ++i) {
        const double x = rng.uniform(-1, 1) * std::pow(10.0, (int)rng.next_below(40) - 20);
        const std::string s = format_double(x);
        CHECK(std::stod(s) == x);
    }
}

#include "moma/hub.hpp"

#include "moma/crc32.hpp"
#include "moma/errors.hpp"
#include "moma/rng.hpp"
#include "moma/sha256.hpp"

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
               ("moma-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

EncoderConfig config() {
    EncoderConfig cfg;
    cfg.input_dim = 3;
    cfg.hidden_dims = {5};
    cfg.embed_dim = 2;
    return cfg;
}

std::pair<Module, Head> fixture_module(std::uint64_t seed, const std::string & task = "taskA") {
    Module m = init_backbone(config(), seed);
    m.meta.task_name = task;
    m.meta.train_mae = 0.125;
    m.meta.notes = "fixture";
    Head head;
    Rng rng(seed + 1);
    head.weights.resize(config().embed_dim);
    for (auto & w : head.weights) w = rng.uniform(-1, 1);
    head.bias = rng.uniform(-1, 1);
    return {std::move(m), std::move(head)};
}

} // namespace

TEST_CASE("known-answer checks for the hashing primitives") {
    CHECK(crc32("123456789", 9) == 0xCBF43926u);
    CHECK(hex_encode(sha256(std::string("abc"))) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(hex_encode(sha256(std::string()))  ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("hub init semantics") {
    TempDir tmp;
    Hub hub = Hub::init(tmp.path / "h");
    CHECK(hub.entries().empty());
    CHECK_THROWS_AS(Hub::init(tmp.path / "h"), AlreadyExistsError);

    auto [m, head] = fixture_module(1);
    hub.add(m, head);
    CHECK(Hub::open(tmp.path / "h").entries().size() == 1);
}

TEST_CASE("module file round trip is bitwise exact") {
    TempDir tmp;
    auto [m, head] = fixture_module(2);
    m.meta.id = "rt";
    m.meta.train_mae = 0.1234567890123456789;
    save_module_file(tmp.path / "m.moma", m, head);
    auto [m2, head2] = load_module_file(tmp.path / "m.moma");

    CHECK(m2.kind == m.kind);
    CHECK(m2.config == m.config);
    CHECK(m2.params == m.params); // vector<double> equality is bitwise for finite values
    CHECK(m2.meta.id == m.meta.id);
    CHECK(m2.meta.task_name == m.meta.task_name);
    CHECK(m2.meta.train_mae == m.meta.train_mae);
    CHECK(m2.meta.notes == m.meta.notes);
    CHECK(head2.weights == head.weights);
    CHECK(head2.bias == head.bias);
}

TEST_CASE("hub add/load/remove lifecycle") {
    TempDir tmp;
    Hub hub = Hub::init(tmp.path / "h");
    auto [m, head] = fixture_module(3);
    const std::string id = hub.add(m, head);
    CHECK(id == "taskA-full-s3");

    auto [loaded, loaded_head] = hub.load(id);
    CHECK(loaded.params == m.params);
    CHECK(loaded_head.weights == head.weights);

    SUBCASE("duplicate id is rejected") {
        auto [m2, h2] = fixture_module(3);
        CHECK_THROWS_AS(hub.add(m2, h2), DuplicateIdError);
    }
    SUBCASE("unknown id raises NotFound") {
        CHECK_THROWS_AS(hub.load("missing"), NotFoundError);
        CHECK_THROWS_AS(hub.remove("missing"), NotFoundError);
    }
    SUBCASE("remove then load raises NotFound, re-add succeeds") {
        hub.remove(id);
        CHECK_THROWS_AS(hub.load(id), NotFoundError);
        auto [m3, h3] = fixture_module(3);
        CHECK(hub.add(m3, h3) == id);
        CHECK(hub.fsck().ok());
    }
}

TEST_CASE("flipped payload byte is caught by the checksum") {
    TempDir tmp;
    Hub hub = Hub::init(tmp.path / "h");
    auto [m, head] = fixture_module(4);
    const std::string id = hub.add(m, head);
    const fs::path file = tmp.path / "h" / "modules" / (id + ".moma");

    std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(64);
    char byte = 0;
    f.seekg(64);
    f.read(&byte, 1);
    byte = static_cast<char>(byte ^ 0x40);
    f.seekp(64);
    f.write(&byte, 1);
    f.close();

    CHECK_THROWS_AS(hub.load(id), CorruptError);
    CHECK_FALSE(hub.fsck().ok());
}

TEST_CASE("fsck flags missing files and survives orphans") {
    TempDir tmp;
    Hub hub = Hub::init(tmp.path / "h");
    auto [m, head] = fixture_module(5);
    const std::string id = hub.add(m, head);

    SUBCASE("missing file is an error") {
        fs::remove(tmp.path / "h" / "modules" / (id + ".moma"));
        CHECK_FALSE(hub.fsck().ok());
    }
    SUBCASE("orphan module file is only a warning") {
        auto [m2, h2] = fixture_module(6, "orphan");
        m2.meta.id = "orphan-file";
        save_module_file(tmp.path / "h" / "modules" / "orphan-file.moma", m2, h2);
        const FsckReport rep = hub.fsck();
        CHECK(rep.ok());
        CHECK(rep.issues.size() == 1);
    }
}

TEST_CASE("crash injection at every add step leaves the hub consistent") {
    using hub_detail::AddStep;
    struct Crash {};

    for (AddStep crash_at : {AddStep::write_module_tmp, AddStep::rename_module,
                             AddStep::write_manifest_tmp, AddStep::rename_manifest}) {
        TempDir tmp;
        const fs::path dir = tmp.path / "h";
        {
            Hub hub = Hub::init(dir);
            auto [m0, h0] = fixture_module(7, "existing");
            hub.add(m0, h0);
        }

        {
            Hub hub = Hub::open(dir);
            auto [m1, h1] = fixture_module(8, "incoming");
            hub_detail::add_step_hook = [&](AddStep step) {
                if (step == crash_at) {
                    throw Crash{};
                }
            };
            try {
                hub.add(m1, h1);
                FAIL("crash hook did not fire");
            } catch (const Crash &) {
            }
            hub_detail::add_step_hook = nullptr;
        }

        // the hub must reopen cleanly with the prior entry set intact, except
        // when the crash hit after the final manifest rename (the add is
        // complete at that point)
        Hub reopened = Hub::open(dir);
        if (crash_at == AddStep::rename_manifest) {
            CHECK(reopened.entries().size() == 2);
        } else {
            CHECK(reopened.entries().size() == 1);
            CHECK(reopened.entries()[0].task_name == "existing");
        }
        CHECK(reopened.fsck().ok());
        auto [m_ok, h_ok] = reopened.load(reopened.entries()[0].id);
        CHECK(m_ok.meta.task_name == reopened.entries()[0].task_name);
        (void)h_ok;
    }
}

TEST_CASE("truncated module file reads as corrupt") {
    TempDir tmp;
    auto [m, head] = fixture_module(9);
    m.meta.id = "trunc";
    save_module_file(tmp.path / "m.moma", m, head);

    const auto full_size = fs::file_size(tmp.path / "m.moma");
    for (std::uintmax_t keep : {full_size / 4, full_size / 2, full_size - 1}) {
        fs::copy_file(tmp.path / "m.moma", tmp.path / "cut.moma",
                      fs::copy_options::overwrite_existing);
        fs::resize_file(tmp.path / "cut.moma", keep);
        CHECK_THROWS_AS(load_module_file(tmp.path / "cut.moma"), CorruptError);
    }
}

TEST_CASE("adapter modules round trip through the hub") {
    TempDir tmp;
    Hub hub = Hub::init(tmp.path / "h");
    const Module bb = init_backbone(config(), 10);
    Module ad = attach_adapters(bb, config(), 11);
    ad.meta.task_name = "adapter-task";
    Rng rng(12);
    for (auto & p : ad.params) p = rng.uniform(-1, 1);
    Head head;
    head.weights.assign(config().embed_dim, 0.5);

    const std::string id = hub.add(ad, head);
    auto [back, back_head] = hub.load(id);
    CHECK(back.kind == ModuleKind::adapter);
    CHECK(back.params == ad.params);
    (void)back_head;
}

#pragma once

#include "moma/encoder.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace moma {

struct ManifestEntry {
    std::string id;
    std::string task_name;
    ModuleKind kind = ModuleKind::full;
    std::string config_fingerprint; // hex
    std::string file_name;
    std::uint64_t created_from_seed = 0;
    double train_mae = 0.0;
};

struct FsckIssue {
    enum class Severity { error, warning };
    Severity severity = Severity::error;
    std::string message;
};

struct FsckReport {
    std::vector<FsckIssue> issues;
    bool ok() const {
        for (const auto & i : issues) {
            if (i.severity == FsckIssue::Severity::error) {
                return false;
            }
        }
        return true;
    }
};

// Registry of trained modules on disk: `manifest.json` plus one checksummed
// binary file per module under `modules/`. Single writer, many readers;
// every mutation lands via write-temp-then-rename.
class Hub {
public:
    static Hub init(const std::filesystem::path & dir); // AlreadyExists if a hub is present
    static Hub open(const std::filesystem::path & dir); // NotFound without a manifest

    const std::filesystem::path & dir() const { return dir_; }
    const std::vector<ManifestEntry> & entries() const { return entries_; }
    std::optional<ManifestEntry> find(const std::string & id) const;

    // Serializes module + head into one file and registers it. An empty
    // meta.id gets a deterministic "<task>-<kind>-s<seed>" id assigned.
    std::string add(const Module & module, const Head & head);

    std::pair<Module, Head> load(const std::string & id) const;

    void remove(const std::string & id);

    FsckReport fsck() const;

private:
    std::filesystem::path dir_;
    std::vector<ManifestEntry> entries_;

    void write_manifest() const;
    static Hub read(const std::filesystem::path & dir);
};

// Standalone module-file round trip (also used for composed/fine-tuned
// modules outside any hub). The format is a flat little-endian binary with
// magic "MOMA" and a trailing CRC32; see README for the exact layout.
void save_module_file(const std::filesystem::path & path, const Module & module, const Head & head);
std::pair<Module, Head> load_module_file(const std::filesystem::path & path);

namespace hub_detail {

enum class AddStep {
    write_module_tmp,  // module bytes written to <id>.moma.tmp
    rename_module,     // tmp renamed to <id>.moma
    write_manifest_tmp,
    rename_manifest,
};

// Crash-injection hook for tests: invoked after each completed step of
// Hub::add; throw from it to simulate a crash at that point.
extern std::function<void(AddStep)> add_step_hook;

} // namespace hub_detail

} // namespace moma

#include "moma/hub.hpp"

#include "moma/crc32.hpp"
#include "moma/errors.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace moma {

using nlohmann::json;

namespace hub_detail {
std::function<void(AddStep)> add_step_hook;
} // namespace hub_detail

namespace {

constexpr char k_magic[4] = {'M', 'O', 'M', 'A'};
constexpr std::uint16_t k_format_version = 1;
constexpr int k_manifest_version = 1;

void put_u16(std::string & buf, std::uint16_t v) {
    buf.push_back(char(v & 0xFF));
    buf.push_back(char(v >> 8));
}

void put_u32(std::string & buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        buf.push_back(char((v >> (8 * i)) & 0xFF));
    }
}

void put_u64(std::string & buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        buf.push_back(char((v >> (8 * i)) & 0xFF));
    }
}

class Reader {
public:
    Reader(const std::string & buf, const std::string & what) : buf_(buf), what_(what) {}

    const std::uint8_t * take(std::size_t n) {
        if (pos_ + n > buf_.size()) {
            throw CorruptError(what_ + ": truncated");
        }
        const auto * p = reinterpret_cast<const std::uint8_t *>(buf_.data()) + pos_;
        pos_ += n;
        return p;
    }

    std::uint16_t u16() {
        const auto * p = take(2);
        return std::uint16_t(p[0]) | (std::uint16_t(p[1]) << 8);
    }

    std::uint32_t u32() {
        const auto * p = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= std::uint32_t(p[i]) << (8 * i);
        }
        return v;
    }

    std::uint64_t u64() {
        const auto * p = take(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= std::uint64_t(p[i]) << (8 * i);
        }
        return v;
    }

    std::string str(std::size_t n) {
        const auto * p = take(n);
        return std::string(reinterpret_cast<const char *>(p), n);
    }

    std::size_t pos() const { return pos_; }

private:
    const std::string & buf_;
    std::string what_;
    std::size_t pos_ = 0;
};

std::string hexfloat(double x) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%a", x);
    return buf;
}

double parse_hexfloat(const std::string & s, const std::string & what) {
    char * end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) {
        throw CorruptError(what + ": bad float '" + s + "'");
    }
    return v;
}

std::string meta_get(const std::vector<std::pair<std::string, std::string>> & kv,
                     const std::string & key, const std::string & what) {
    for (const auto & [k, v] : kv) {
        if (k == key) {
            return v;
        }
    }
    throw CorruptError(what + ": missing metadata key " + key);
}

void atomic_write(const std::filesystem::path & final_path, const std::string & bytes,
                  hub_detail::AddStep write_step, hub_detail::AddStep rename_step,
                  bool fire_hooks) {
    const std::filesystem::path tmp = final_path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error("cannot write " + tmp.string());
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            throw Error("short write to " + tmp.string());
        }
    }
    if (fire_hooks && hub_detail::add_step_hook) {
        hub_detail::add_step_hook(write_step);
    }
    std::filesystem::rename(tmp, final_path);
    if (fire_hooks && hub_detail::add_step_hook) {
        hub_detail::add_step_hook(rename_step);
    }
}

std::string encode_module(const Module & module, const Head & head) {
    module.config.validate();
    const std::size_t expect = module.kind == ModuleKind::full
                                   ? full_param_count(module.config)
                                   : adapter_param_count(module.config);
    if (module.params.size() != expect) {
        throw InvalidModuleError("module params length does not match its config");
    }
    if (head.weights.size() != module.config.embed_dim) {
        throw InvalidModuleError("head length does not match embed_dim");
    }

    std::vector<std::pair<std::string, std::string>> kv;
    kv.emplace_back("config.input_dim", std::to_string(module.config.input_dim));
    {
        std::ostringstream os;
        for (std::size_t i = 0; i < module.config.hidden_dims.size(); ++i) {
            if (i) os << ',';
            os << module.config.hidden_dims[i];
        }
        kv.emplace_back("config.hidden_dims", os.str());
    }
    kv.emplace_back("config.embed_dim", std::to_string(module.config.embed_dim));
    kv.emplace_back("config.activation", to_string(module.config.activation));
    kv.emplace_back("config.adapter_bottleneck", std::to_string(module.config.adapter_bottleneck));
    kv.emplace_back("meta.id", module.meta.id);
    kv.emplace_back("meta.task_name", module.meta.task_name);
    kv.emplace_back("meta.seed", std::to_string(module.meta.created_from_seed));
    kv.emplace_back("meta.train_mae", hexfloat(module.meta.train_mae));
    kv.emplace_back("meta.notes", module.meta.notes);

    std::string buf;
    buf.append(k_magic, 4);
    put_u16(buf, k_format_version);
    buf.push_back(module.kind == ModuleKind::full ? char(0) : char(1));
    const Digest32 fp = module.fingerprint();
    buf.append(reinterpret_cast<const char *>(fp.data()), fp.size());

    put_u32(buf, static_cast<std::uint32_t>(kv.size()));
    for (const auto & [k, v] : kv) {
        put_u32(buf, static_cast<std::uint32_t>(k.size()));
        buf.append(k);
        put_u32(buf, static_cast<std::uint32_t>(v.size()));
        buf.append(v);
    }

    // payload: module params, then head weights, then head bias
    const std::uint64_t count = module.params.size() + head.weights.size() + 1;
    put_u64(buf, count);
    auto put_f64 = [&buf](double d) { put_u64(buf, std::bit_cast<std::uint64_t>(d)); };
    for (double d : module.params) {
        put_f64(d);
    }
    for (double d : head.weights) {
        put_f64(d);
    }
    put_f64(head.bias);

    put_u32(buf, crc32(buf.data(), buf.size()));
    return buf;
}

std::pair<Module, Head> decode_module(const std::string & buf, const std::string & what) {
    if (buf.size() < 4 + 2 + 1 + 32 + 4 + 8 + 4) {
        throw CorruptError(what + ": too short");
    }
    std::uint32_t stored_crc = 0;
    for (int i = 0; i < 4; ++i) {
        stored_crc |= std::uint32_t(std::uint8_t(buf[buf.size() - 4 + i])) << (8 * i);
    }
    if (crc32(buf.data(), buf.size() - 4) != stored_crc) {
        throw CorruptError(what + ": checksum mismatch");
    }

    Reader r(buf, what);
    if (std::memcmp(r.take(4), k_magic, 4) != 0) {
        throw CorruptError(what + ": bad magic");
    }
    if (r.u16() != k_format_version) {
        throw CorruptError(what + ": unsupported format version");
    }
    const std::uint8_t kind_byte = *r.take(1);
    if (kind_byte > 1) {
        throw CorruptError(what + ": bad kind byte");
    }
    Digest32 fp;
    std::memcpy(fp.data(), r.take(32), 32);

    const std::uint32_t n_kv = r.u32();
    std::vector<std::pair<std::string, std::string>> kv;
    kv.reserve(n_kv);
    for (std::uint32_t i = 0; i < n_kv; ++i) {
        const std::uint32_t klen = r.u32();
        std::string k = r.str(klen);
        const std::uint32_t vlen = r.u32();
        std::string v = r.str(vlen);
        kv.emplace_back(std::move(k), std::move(v));
    }

    Module m;
    m.kind = kind_byte == 0 ? ModuleKind::full : ModuleKind::adapter;
    m.config.input_dim = std::stoull(meta_get(kv, "config.input_dim", what));
    {
        std::istringstream is(meta_get(kv, "config.hidden_dims", what));
        std::string tok;
        while (std::getline(is, tok, ',')) {
            m.config.hidden_dims.push_back(std::stoull(tok));
        }
    }
    m.config.embed_dim = std::stoull(meta_get(kv, "config.embed_dim", what));
    m.config.activation = activation_from_string(meta_get(kv, "config.activation", what));
    m.config.adapter_bottleneck = std::stoull(meta_get(kv, "config.adapter_bottleneck", what));
    m.meta.id = meta_get(kv, "meta.id", what);
    m.meta.task_name = meta_get(kv, "meta.task_name", what);
    m.meta.created_from_seed = std::stoull(meta_get(kv, "meta.seed", what));
    m.meta.train_mae = parse_hexfloat(meta_get(kv, "meta.train_mae", what), what);
    m.meta.notes = meta_get(kv, "meta.notes", what);

    m.config.validate();
    if (m.fingerprint() != fp) {
        throw CorruptError(what + ": fingerprint does not match stored config");
    }

    const std::uint64_t count = r.u64();
    const std::size_t module_len = m.kind == ModuleKind::full ? full_param_count(m.config)
                                                              : adapter_param_count(m.config);
    const std::size_t head_len = m.config.embed_dim + 1;
    if (count != module_len + head_len) {
        throw CorruptError(what + ": parameter count does not match config");
    }
    if (buf.size() != r.pos() + count * 8 + 4) {
        throw CorruptError(what + ": payload size mismatch");
    }

    auto take_f64 = [&r]() { return std::bit_cast<double>(r.u64()); };
    m.params.resize(module_len);
    for (std::size_t i = 0; i < module_len; ++i) {
        m.params[i] = take_f64();
    }
    Head head;
    head.weights.resize(m.config.embed_dim);
    for (std::size_t i = 0; i < m.config.embed_dim; ++i) {
        head.weights[i] = take_f64();
    }
    head.bias = take_f64();
    return {std::move(m), std::move(head)};
}

std::string read_file(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw NotFoundError("cannot open " + path.string());
    }
    std::ostringstream os;
    os << in.rdbuf();
    return std::move(os).str();
}

json entry_to_json(const ManifestEntry & e) {
    return json{
        {"id", e.id},
        {"task_name", e.task_name},
        {"kind", to_string(e.kind)},
        {"config_fingerprint", e.config_fingerprint},
        {"file_name", e.file_name},
        {"created_from_seed", e.created_from_seed},
        {"train_mae", e.train_mae},
    };
}

ManifestEntry entry_from_json(const json & j) {
    ManifestEntry e;
    e.id = j.at("id").get<std::string>();
    e.task_name = j.at("task_name").get<std::string>();
    e.kind = module_kind_from_string(j.at("kind").get<std::string>());
    e.config_fingerprint = j.at("config_fingerprint").get<std::string>();
    e.file_name = j.at("file_name").get<std::string>();
    e.created_from_seed = j.at("created_from_seed").get<std::uint64_t>();
    e.train_mae = j.at("train_mae").get<double>();
    return e;
}

} // namespace

void save_module_file(const std::filesystem::path & path, const Module & module, const Head & head) {
    const std::string bytes = encode_module(module, head);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error("short write to " + path.string());
    }
}

std::pair<Module, Head> load_module_file(const std::filesystem::path & path) {
    return decode_module(read_file(path), path.filename().string());
}

Hub Hub::init(const std::filesystem::path & dir) {
    if (std::filesystem::exists(dir / "manifest.json")) {
        throw AlreadyExistsError("hub already initialized at " + dir.string());
    }
    std::filesystem::create_directories(dir / "modules");
    Hub hub;
    hub.dir_ = dir;
    hub.write_manifest();
    return hub;
}

Hub Hub::read(const std::filesystem::path & dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path)) {
        throw NotFoundError("no hub manifest at " + manifest_path.string());
    }
    json j;
    try {
        std::ifstream in(manifest_path);
        in >> j;
    } catch (const std::exception & e) {
        throw CorruptError("manifest parse failure: " + std::string(e.what()));
    }
    if (!j.is_object() || j.value("version", 0) != k_manifest_version) {
        throw CorruptError("unsupported manifest version");
    }
    Hub hub;
    hub.dir_ = dir;
    for (const auto & je : j.at("entries")) {
        hub.entries_.push_back(entry_from_json(je));
    }
    return hub;
}

Hub Hub::open(const std::filesystem::path & dir) {
    Hub hub = read(dir);
    // sweep leftovers from interrupted writes; never renamed, so never referenced
    std::error_code ec;
    for (const auto & p : {dir, dir / "modules"}) {
        if (!std::filesystem::exists(p, ec)) {
            continue;
        }
        for (const auto & entry : std::filesystem::directory_iterator(p, ec)) {
            if (entry.path().extension() == ".tmp") {
                std::filesystem::remove(entry.path(), ec);
            }
        }
    }
    return hub;
}

std::optional<ManifestEntry> Hub::find(const std::string & id) const {
    for (const auto & e : entries_) {
        if (e.id == id) {
            return e;
        }
    }
    return std::nullopt;
}

void Hub::write_manifest() const {
    json j;
    j["version"] = k_manifest_version;
    j["entries"] = json::array();
    for (const auto & e : entries_) {
        j["entries"].push_back(entry_to_json(e));
    }
    atomic_write(dir_ / "manifest.json", j.dump(2) + "\n",
                 hub_detail::AddStep::write_manifest_tmp, hub_detail::AddStep::rename_manifest,
                 /*fire_hooks=*/true);
}

std::string Hub::add(const Module & module, const Head & head) {
    Module m = module;
    if (m.meta.id.empty()) {
        m.meta.id = m.meta.task_name + "-" + to_string(m.kind) + "-s" +
                    std::to_string(m.meta.created_from_seed);
    }
    if (find(m.meta.id)) {
        throw DuplicateIdError("hub already contains id '" + m.meta.id + "'");
    }

    const std::string file_name = m.meta.id + ".moma";
    const std::string bytes = encode_module(m, head);
    atomic_write(dir_ / "modules" / file_name, bytes,
                 hub_detail::AddStep::write_module_tmp, hub_detail::AddStep::rename_module,
                 /*fire_hooks=*/true);

    ManifestEntry e;
    e.id = m.meta.id;
    e.task_name = m.meta.task_name;
    e.kind = m.kind;
    e.config_fingerprint = m.fingerprint_hex();
    e.file_name = file_name;
    e.created_from_seed = m.meta.created_from_seed;
    e.train_mae = m.meta.train_mae;
    entries_.push_back(e);

    try {
        write_manifest();
    } catch (...) {
        entries_.pop_back(); // in-memory state must match the durable manifest
        throw;
    }
    return e.id;
}

std::pair<Module, Head> Hub::load(const std::string & id) const {
    const auto entry = find(id);
    if (!entry) {
        throw NotFoundError("no module '" + id + "' in hub");
    }
    auto [module, head] = load_module_file(dir_ / "modules" / entry->file_name);
    if (module.fingerprint_hex() != entry->config_fingerprint) {
        throw CorruptError("module '" + id + "': fingerprint differs from manifest");
    }
    if (module.meta.id != id) {
        throw CorruptError("module '" + id + "': file carries id '" + module.meta.id + "'");
    }
    return {std::move(module), std::move(head)};
}

void Hub::remove(const std::string & id) {
    const auto entry = find(id);
    if (!entry) {
        throw NotFoundError("no module '" + id + "' in hub");
    }
    // manifest first: a crash in between leaves only a benign orphan file
    std::vector<ManifestEntry> backup = entries_;
    std::erase_if(entries_, [&](const ManifestEntry & e) { return e.id == id; });
    try {
        write_manifest();
    } catch (...) {
        entries_ = std::move(backup);
        throw;
    }
    std::error_code ec;
    std::filesystem::remove(dir_ / "modules" / entry->file_name, ec);
}

FsckReport Hub::fsck() const {
    FsckReport rep;
    std::set<std::string> ids;
    std::set<std::string> referenced;

    for (const auto & e : entries_) {
        if (!ids.insert(e.id).second) {
            rep.issues.push_back({FsckIssue::Severity::error, "duplicate id '" + e.id + "'"});
        }
        referenced.insert(e.file_name);
        const auto path = dir_ / "modules" / e.file_name;
        if (!std::filesystem::exists(path)) {
            rep.issues.push_back({FsckIssue::Severity::error,
                                  "entry '" + e.id + "': missing file " + e.file_name});
            continue;
        }
        try {
            auto [module, head] = load_module_file(path);
            (void)head;
            if (module.fingerprint_hex() != e.config_fingerprint) {
                rep.issues.push_back({FsckIssue::Severity::error,
                                      "entry '" + e.id + "': fingerprint mismatch"});
            }
            if (module.kind != e.kind) {
                rep.issues.push_back({FsckIssue::Severity::error,
                                      "entry '" + e.id + "': kind mismatch"});
            }
        } catch (const Error & err) {
            rep.issues.push_back({FsckIssue::Severity::error,
                                  "entry '" + e.id + "': " + err.what()});
        }
    }

    // unreferenced files are the residue of an interrupted add/remove: safe
    // to delete, reported but not fatal
    std::error_code ec;
    const auto modules_dir = dir_ / "modules";
    if (std::filesystem::exists(modules_dir, ec)) {
        for (const auto & entry : std::filesystem::directory_iterator(modules_dir, ec)) {
            const std::string name = entry.path().filename().string();
            if (entry.path().extension() == ".tmp") {
                rep.issues.push_back({FsckIssue::Severity::warning, "stray temp file " + name});
            } else if (!referenced.count(name)) {
                rep.issues.push_back({FsckIssue::Severity::warning, "orphan module file " + name});
            }
        }
    } else if (!entries_.empty()) {
        rep.issues.push_back({FsckIssue::Severity::error, "modules directory missing"});
    }
    return rep;
}

} // namespace moma

// moma: modular transfer-learning toolkit CLI.
//
// Subcommands: hub (init/list/add/remove/fsck), train-module, amc, finetune,
// eval, bench (main/ablation/fewshot/continual).
//
// Exit codes: 0 ok, 1 usage or invalid input, 2 not found / conflict,
// 3 corrupt data or runtime failure.

#include "moma/amc.hpp"
#include "moma/bench.hpp"
#include "moma/csv.hpp"
#include "moma/errors.hpp"
#include "moma/hub.hpp"
#include "moma/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GlobalOpts {
    std::uint64_t seed = 42;
    std::string hub_dir;
    std::string out_dir = "out";
};

std::string resolve_hub_dir(const GlobalOpts & g) {
    if (!g.hub_dir.empty()) {
        return g.hub_dir;
    }
    if (const char * env = std::getenv("MOMA_HUB")) {
        if (env[0] != '\0') {
            return env;
        }
    }
    return "hub";
}

void write_text(const fs::path & path, const std::string & text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw moma::Error("cannot write " + path.string());
    }
    out << text;
}

moma::EncoderConfig encoder_from_json(const json & j) {
    moma::EncoderConfig cfg;
    cfg.input_dim = j.at("input_dim").get<std::size_t>();
    cfg.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
    cfg.embed_dim = j.at("embed_dim").get<std::size_t>();
    if (j.contains("activation")) {
        cfg.activation = moma::activation_from_string(j.at("activation").get<std::string>());
    }
    cfg.adapter_bottleneck = j.value("adapter_bottleneck", std::size_t{0});
    cfg.validate();
    return cfg;
}

moma::TrainConfig train_from_json(const json & j, const moma::TrainConfig & base) {
    moma::TrainConfig cfg = base;
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
    cfg.patience = j.value("patience", cfg.patience);
    cfg.target_standardize = j.value("target_standardize", cfg.target_standardize);
    cfg.validate();
    return cfg;
}

json load_json_file(const std::string & path) {
    std::ifstream in(path);
    if (!in) {
        throw moma::NotFoundError("cannot open " + path);
    }
    try {
        json j;
        in >> j;
        return j;
    } catch (const std::exception & e) {
        throw moma::InvalidInputError("bad JSON in " + path + ": " + e.what());
    }
}

std::string history_csv(const std::vector<moma::EpochStats> & history) {
    std::string out = "epoch,train_mae,val_mae\n";
    for (const auto & row : history) {
        out += std::to_string(row.epoch) + "," + moma::format_double(row.train_mae) + "," +
               moma::format_double(row.val_mae) + "\n";
    }
    return out;
}

// --- hub ------------------------------------------------------------------

int cmd_hub_init(const GlobalOpts & g) {
    moma::Hub::init(resolve_hub_dir(g));
    std::cout << "initialized hub at " << resolve_hub_dir(g) << "\n";
    return 0;
}

int cmd_hub_list(const GlobalOpts & g) {
    moma::Hub hub = moma::Hub::open(resolve_hub_dir(g));
    std::printf("%-28s %-16s %-8s %-10s %-12s %s\n", "id", "task", "kind", "fingerprint",
                "seed", "train_mae");
    for (const auto & e : hub.entries()) {
        std::printf("%-28s %-16s %-8s %-10s %-12llu %s\n", e.id.c_str(), e.task_name.c_str(),
                    moma::to_string(e.kind), e.config_fingerprint.substr(0, 8).c_str(),
                    static_cast<unsigned long long>(e.created_from_seed),
                    moma::format_double(e.train_mae).c_str());
    }
    return 0;
}

int cmd_hub_add(const GlobalOpts & g, const std::string & file, const std::string & id) {
    moma::Hub hub = moma::Hub::open(resolve_hub_dir(g));
    auto [module, head] = moma::load_module_file(file);
    if (!id.empty()) {
        module.meta.id = id;
    }
    const std::string assigned = hub.add(module, head);
    std::cout << "added " << assigned << "\n";
    return 0;
}

int cmd_hub_remove(const GlobalOpts & g, const std::string & id) {
    moma::Hub hub = moma::Hub::open(resolve_hub_dir(g));
    hub.remove(id);
    std::cout << "removed " << id << "\n";
    return 0;
}

int cmd_hub_fsck(const GlobalOpts & g) {
    moma::Hub hub = moma::Hub::open(resolve_hub_dir(g));
    const moma::FsckReport rep = hub.fsck();
    for (const auto & issue : rep.issues) {
        std::cout << (issue.severity == moma::FsckIssue::Severity::error ? "error: " : "warning: ")
                  << issue.message << "\n";
    }
    if (!rep.ok()) {
        std::cout << "FAILED\n";
        return 3;
    }
    std::cout << "OK\n";
    return 0;
}

// --- train-module / amc / finetune / eval ----------------------------------

int cmd_train_module(const GlobalOpts & g, const std::string & data_path,
                     const std::string & kind_str, const std::string & config_path,
                     const std::string & backbone_id, const std::string & history_path) {
    const moma::ModuleKind kind = moma::module_kind_from_string(kind_str);
    const json cfg_json = load_json_file(config_path);
    const moma::TrainConfig base = moma::TrainConfig::module_defaults();
    moma::TrainConfig tcfg = train_from_json(cfg_json.value("train", json::object()), base);
    tcfg.seed = g.seed;

    const moma::LoadedCsv loaded = moma::load_dataset_csv(data_path);
    const moma::SplitDataset data = moma::split_from_csv(loaded, g.seed);

    moma::Hub hub = moma::Hub::open(resolve_hub_dir(g));
    moma::Module init;
    if (!backbone_id.empty()) {
        init = hub.load(backbone_id).first;
    } else {
        init = moma::init_backbone(encoder_from_json(cfg_json.at("encoder")), g.seed);
    }
    if (init.config.input_dim != data.train.input_dim()) {
        throw moma::ShapeMismatchError("encoder input_dim " +
                                       std::to_string(init.config.input_dim) +
                                       " vs dataset dim " +
                                       std::to_string(data.train.input_dim()));
    }

    moma::TrainResult res = moma::train_module(init, data, tcfg, kind);
    if (!history_path.empty()) {
        write_text(history_path, history_csv(res.history));
    }
    const std::string id = hub.add(res.module, res.head);
    std::cout << "module " << id << " val_mae " << moma::format_double(res.best_val_mae) << "\n";
    return 0;
}

int cmd_amc(const GlobalOpts & g, const std::string & data_path, std::size_t k,
            const std::string & kind_str, const std::string & report_path,
            const std::string & out_module, const std::string & backbone_id) {
    moma::AMCConfig cfg;
    cfg.k_neighbors = k;
    cfg.kind_filter = moma::module_kind_from_string(kind_str);

    const moma::LoadedCsv loaded = moma::load_dataset_csv(data_path);
    const moma::SplitDataset data = moma::split_from_csv(loaded, g.seed);

    moma::Hub hub = moma::Hub::open(resolve_hub_dir(g));
    std::optional<moma::Module> backbone;
    if (!backbone_id.empty()) {
        backbone = hub.load(backbone_id).first;
    }
    const moma::AMCResult result =
        moma::amc_run(hub, data, cfg, backbone ? &*backbone : nullptr);

    if (!report_path.empty()) {
        write_text(report_path, moma::amc_report_json(result, data.train.name));
        fs::path csv_path = report_path;
        csv_path.replace_extension(".csv");
        write_text(csv_path, moma::amc_report_csv(result, data.train.name));
    }
    if (!out_module.empty()) {
        moma::Head empty_head;
        empty_head.weights.assign(result.composed.config.embed_dim, 0.0);
        moma::save_module_file(out_module, result.composed, empty_head);
    }
    std::cout << "proxy_error " << moma::format_double(result.proxy_error) << " selected "
              << result.selected_ids.size() << "/" << result.module_ids.size() << "\n";
    return 0;
}

int cmd_finetune(const GlobalOpts & g, const std::string & module_path,
                 const std::string & data_path, const std::string & config_path,
                 const std::string & backbone_id, const std::string & out_path,
                 const std::string & history_path) {
    auto [module, stored_head] = moma::load_module_file(module_path);
    (void)stored_head;

    const moma::LoadedCsv loaded = moma::load_dataset_csv(data_path);
    const moma::SplitDataset data = moma::split_from_csv(loaded, g.seed);
    if (module.config.input_dim != data.train.input_dim()) {
        throw moma::ShapeMismatchError("module input_dim " +
                                       std::to_string(module.config.input_dim) +
                                       " vs dataset dim " +
                                       std::to_string(data.train.input_dim()));
    }

    moma::TrainConfig tcfg = moma::TrainConfig::finetune_defaults();
    if (!config_path.empty()) {
        tcfg = train_from_json(load_json_file(config_path).value("train", json::object()), tcfg);
    }
    tcfg.seed = g.seed;

    std::optional<moma::Module> backbone;
    if (!backbone_id.empty()) {
        backbone = moma::Hub::open(resolve_hub_dir(g)).load(backbone_id).first;
    }
    if (module.kind == moma::ModuleKind::adapter && !backbone) {
        throw moma::MissingBackboneError("adapter module needs --backbone-id");
    }

    moma::TrainResult res =
        moma::finetune(module, backbone ? &*backbone : nullptr, data, tcfg);
    if (!history_path.empty()) {
        write_text(history_path, history_csv(res.history));
    }
    if (!out_path.empty()) {
        moma::save_module_file(out_path, res.module, res.head);
    }
    const double test_mae =
        moma::evaluate_mae(res.module, backbone ? &*backbone : nullptr, res.head, data.test);
    std::cout << "test_mae " << moma::format_double(test_mae) << "\n";
    return 0;
}

int cmd_eval(const GlobalOpts & g, const std::string & module_path, const std::string & data_path,
             const std::string & backbone_id) {
    auto [module, head] = moma::load_module_file(module_path);

    const moma::LoadedCsv loaded = moma::load_dataset_csv(data_path);
    if (module.config.input_dim != loaded.data.input_dim()) {
        throw moma::ShapeMismatchError("module input_dim vs dataset dim mismatch");
    }

    std::optional<moma::Module> backbone;
    if (!backbone_id.empty()) {
        backbone = moma::Hub::open(resolve_hub_dir(g)).load(backbone_id).first;
    }
    const double mae =
        moma::evaluate_mae(module, backbone ? &*backbone : nullptr, head, loaded.data);
    std::cout << "mae " << moma::format_double(mae) << "\n";
    return 0;
}

// --- bench -----------------------------------------------------------------

struct BenchFlags {
    std::string family_config;
    std::string sizes = "full,60,10";
    std::string split_seeds;
    bool dry_run = false;
};

moma::BenchHarness make_harness(const GlobalOpts & g, const BenchFlags & flags) {
    moma::TaskFamilyConfig fam = flags.family_config.empty()
                                     ? moma::TaskFamilyConfig::defaults()
                                     : moma::TaskFamilyConfig::from_json_file(flags.family_config);
    moma::TaskFamily family = moma::generate_task_family(fam);
    moma::BenchOptions opts = moma::BenchOptions::defaults(fam);
    opts.master_seed = g.seed;
    if (!flags.split_seeds.empty()) {
        opts.split_seeds.clear();
        std::istringstream is(flags.split_seeds);
        std::string tok;
        while (std::getline(is, tok, ',')) {
            opts.split_seeds.push_back(std::stoull(tok));
        }
        if (opts.split_seeds.empty()) {
            throw moma::InvalidInputError("--split-seeds is empty");
        }
    }
    return moma::BenchHarness(std::move(family), std::move(opts), fs::path(g.out_dir) / "work");
}

const std::vector<moma::Method> k_all_methods = {
    moma::Method::scratch, moma::Method::backbone_ft, moma::Method::multitask_ft,
    moma::Method::moma_full, moma::Method::moma_adapter,
};

int cmd_bench(const GlobalOpts & g, const std::string & suite, const BenchFlags & flags) {
    moma::BenchHarness harness = make_harness(g, flags);
    const fs::path out_dir(g.out_dir);
    fs::create_directories(out_dir);

    if (flags.dry_run) {
        for (const auto & cell : harness.plan_main(k_all_methods)) {
            std::cout << cell << "\n";
        }
        return 0;
    }

    if (suite == "continual") {
        // phase 1 excludes the last cluster; its modules arrive in phase 2
        const std::size_t held_out = harness.family().config.n_clusters - 1;
        harness.build_hub(held_out);
        std::vector<moma::SplitDataset> new_tasks;
        for (const auto & up : harness.family().upstream) {
            if (harness.family().cluster_of(up.train.name) == held_out) {
                new_tasks.push_back(up);
            }
        }
        const moma::ContinualReport report = harness.run_continual(new_tasks);
        write_text(out_dir / "continual_report.csv", report.to_csv());
        write_text(out_dir / "continual_summary.json", report.summary_json());
        std::cout << "pearson " << moma::format_double(report.pearson_affected) << "\n";
        return 0;
    }

    harness.build_hub();
    if (suite == "main") {
        const moma::ExperimentReport report = harness.run_main(k_all_methods);
        write_text(out_dir / "main_report.csv", report.to_csv());
        write_text(out_dir / "main_summary.json", report.summary_json());
        std::set<std::uint64_t> seeds;
        for (const auto & rec : harness.weight_records()) {
            seeds.insert(rec.split_seed);
        }
        for (std::uint64_t s : seeds) {
            write_text(out_dir / ("weights_split" + std::to_string(s) + ".csv"),
                       harness.weight_matrix_csv(s));
        }
        for (const auto & a : moma::aggregate_report(report)) {
            std::cout << a.method << " mean_mae " << moma::format_double(a.mean_mae)
                      << " avg_rank " << moma::format_double(a.avg_rank) << "\n";
        }
        return 0;
    }
    if (suite == "ablation") {
        const std::vector<moma::AblationVariant> variants = {
            moma::AblationVariant::amc, moma::AblationVariant::select_average,
            moma::AblationVariant::all_average, moma::AblationVariant::random_selection};
        const moma::ExperimentReport report = harness.run_ablation(variants);
        write_text(out_dir / "ablation_report.csv", report.to_csv());
        write_text(out_dir / "ablation_summary.json", report.summary_json());
        for (const auto & a : moma::aggregate_report(report)) {
            std::cout << a.method << " mean_mae " << moma::format_double(a.mean_mae)
                      << " avg_rank " << moma::format_double(a.avg_rank) << "\n";
        }
        return 0;
    }
    if (suite == "fewshot") {
        std::vector<std::size_t> sizes;
        std::istringstream is(flags.sizes);
        std::string tok;
        while (std::getline(is, tok, ',')) {
            sizes.push_back(tok == "full" ? 0 : std::stoull(tok));
        }
        auto [report, summary] = harness.run_fewshot(sizes);
        write_text(out_dir / "fewshot_report.csv", report.to_csv());
        write_text(out_dir / "fewshot_summary.json", summary.summary_json());
        for (const auto & [setting, margin] : summary.margin_by_setting) {
            std::cout << "margin@" << setting << " " << moma::format_double(margin) << "\n";
        }
        return 0;
    }
    throw moma::InvalidInputError("unknown bench suite: " + suite);
}

int dispatch(int argc, char ** argv) {
    CLI::App app{"modular transfer-learning toolkit"};
    app.require_subcommand(1);
    app.fallthrough(); // global flags may follow the subcommand

    GlobalOpts g;
    app.add_option("--seed", g.seed, "global random seed")->capture_default_str();
    app.add_option("--hub", g.hub_dir, "hub directory (default: $MOMA_HUB or ./hub)");
    app.add_option("--out", g.out_dir, "output directory")->capture_default_str();

    // hub
    auto * hub_cmd = app.add_subcommand("hub", "module registry operations");
    hub_cmd->require_subcommand(1);
    hub_cmd->add_subcommand("init", "create an empty hub");
    hub_cmd->add_subcommand("list", "print the manifest");
    auto * hub_add = hub_cmd->add_subcommand("add", "import a module file");
    std::string add_file, add_id;
    hub_add->add_option("--file", add_file, "module file to import")->required();
    hub_add->add_option("--id", add_id, "override the module id");
    auto * hub_remove = hub_cmd->add_subcommand("remove", "remove a module");
    std::string remove_id;
    hub_remove->add_option("--id", remove_id, "module id")->required();
    hub_cmd->add_subcommand("fsck", "check manifest/file consistency");

    // train-module
    auto * train_cmd = app.add_subcommand("train-module", "train a task module into the hub");
    std::string train_data, train_kind = "full", train_config, train_backbone, train_history;
    train_cmd->add_option("--data", train_data, "dataset CSV")->required();
    train_cmd->add_option("--kind", train_kind, "full|adapter")->capture_default_str();
    train_cmd->add_option("--config", train_config, "encoder/train config JSON")->required();
    train_cmd->add_option("--backbone-id", train_backbone, "hub module to start from");
    train_cmd->add_option("--history", train_history, "write per-epoch history CSV here");

    // amc
    auto * amc_cmd = app.add_subcommand("amc", "compose a module for a dataset");
    std::string amc_data, amc_kind = "full", amc_report, amc_out, amc_backbone;
    std::size_t amc_k = 5;
    amc_cmd->add_option("--data", amc_data, "dataset CSV")->required();
    amc_cmd->add_option("--k", amc_k, "nearest neighbors")->capture_default_str();
    amc_cmd->add_option("--kind", amc_kind, "full|adapter")->capture_default_str();
    amc_cmd->add_option("--report", amc_report, "weight report JSON (CSV twin written too)");
    amc_cmd->add_option("--out-module", amc_out, "write the composed module file");
    amc_cmd->add_option("--backbone-id", amc_backbone, "backbone for adapter composition");

    // finetune
    auto * ft_cmd = app.add_subcommand("finetune", "fine-tune a module on a dataset");
    std::string ft_module, ft_data, ft_config, ft_backbone, ft_out, ft_history;
    ft_cmd->add_option("--module", ft_module, "module file")->required();
    ft_cmd->add_option("--data", ft_data, "dataset CSV")->required();
    ft_cmd->add_option("--config", ft_config, "train config JSON");
    ft_cmd->add_option("--backbone-id", ft_backbone, "backbone for adapter modules");
    ft_cmd->add_option("--out", ft_out, "write the fine-tuned module file");
    ft_cmd->add_option("--history", ft_history, "write per-epoch history CSV here");

    // eval
    auto * eval_cmd = app.add_subcommand("eval", "evaluate a module file on a dataset");
    std::string eval_module, eval_data, eval_backbone;
    eval_cmd->add_option("--module", eval_module, "module file")->required();
    eval_cmd->add_option("--data", eval_data, "dataset CSV")->required();
    eval_cmd->add_option("--backbone-id", eval_backbone, "backbone for adapter modules");

    // bench
    auto * bench_cmd = app.add_subcommand("bench", "synthetic benchmark suites");
    std::string bench_suite;
    BenchFlags bench_flags;
    bench_cmd->add_option("suite", bench_suite, "main|ablation|fewshot|continual")->required();
    bench_cmd->add_option("--family-config", bench_flags.family_config, "family config JSON");
    bench_cmd->add_option("--sizes", bench_flags.sizes, "fewshot train sizes")
        ->capture_default_str();
    bench_cmd->add_option("--split-seeds", bench_flags.split_seeds, "comma-separated seeds");
    bench_cmd->add_flag("--dry-run", bench_flags.dry_run, "print the cell plan and exit");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp & e) {
        return app.exit(e);
    } catch (const CLI::ParseError & e) {
        app.exit(e);
        return 1;
    }

    if (hub_cmd->parsed()) {
        if (hub_cmd->get_subcommand("init")->parsed()) return cmd_hub_init(g);
        if (hub_cmd->get_subcommand("list")->parsed()) return cmd_hub_list(g);
        if (hub_add->parsed()) return cmd_hub_add(g, add_file, add_id);
        if (hub_remove->parsed()) return cmd_hub_remove(g, remove_id);
        return cmd_hub_fsck(g);
    }
    if (train_cmd->parsed()) {
        return cmd_train_module(g, train_data, train_kind, train_config, train_backbone,
                                train_history);
    }
    if (amc_cmd->parsed()) {
        return cmd_amc(g, amc_data, amc_k, amc_kind, amc_report, amc_out, amc_backbone);
    }
    if (ft_cmd->parsed()) {
        return cmd_finetune(g, ft_module, ft_data, ft_config, ft_backbone, ft_out, ft_history);
    }
    if (eval_cmd->parsed()) {
        return cmd_eval(g, eval_module, eval_data, eval_backbone);
    }
    return cmd_bench(g, bench_suite, bench_flags);
}

} // namespace

int main(int argc, char ** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const moma::CsvError & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const moma::ShapeMismatchError & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const moma::ConfigMismatchError & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const moma::MissingBackboneError & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const moma::InvalidInputError & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const moma::EmptyDatasetError & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const moma::TooFewSamplesError & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const moma::NotFoundError & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const moma::EmptyHubError & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const moma::DuplicateIdError & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const moma::AlreadyExistsError & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const moma::CorruptError & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const moma::Error & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

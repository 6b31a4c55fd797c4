// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Heavier end-to-end runs (criteria 6-9) share a single
// trained harness over the default synthetic family.
#include "moma/amc.hpp"
#include "moma/bench.hpp"
#include "moma/csv.hpp"
#include "moma/errors.hpp"
#include "moma/hub.hpp"
#include "moma/rng.hpp"
#include "moma/trainer.hpp"

#include "oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <unistd.h>

namespace fs = std::filesystem;
using namespace moma;

namespace {

struct Criterion {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

fs::path scratch_root() {
    static fs::path root = [] {
        fs::path p = fs::temp_directory_path() /
                     ("moma-acceptance-" + std::to_string(::getpid()));
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return root;
}

std::string read_file(const fs::path & p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return std::move(os).str();
}

// ---- criterion 1: leave-one-out kNN equals the brute-force oracle ---------

Criterion criterion_knn_oracle() {
    Rng rng(20260808);
    std::size_t value_checks = 0;
    for (int t = 0; t < 200; ++t) {
        const std::size_t m = 2 + rng.next_below(199);  // [2, 200]
        const std::size_t d = 2 + rng.next_below(31);   // [2, 32]
        const std::size_t k = 1 + rng.next_below(10);   // [1, 10]
        std::vector<Vec64> embs(m, Vec64(d));
        for (auto & e : embs) {
            for (auto & v : e) v = rng.uniform(-2, 2);
            if (norm2(e) == 0.0) e[0] = 1.0;
        }
        // engineered ties: clone a handful of rows
        if (m >= 6 && t % 4 == 0) {
            embs[1] = embs[0];
            embs[2] = embs[0];
            embs[5] = embs[4];
        }
        Vec64 labels(m);
        for (auto & v : labels) v = rng.uniform(-10, 10);

        const Vec64 got = loo_knn_labels(embs, labels, k);
        for (std::size_t i = 0; i < m; ++i) {
            const auto want = oracle::loo_brute_force(embs, labels, i, k);
            if (loo_knn_neighbors(embs, i, k) != want.neighbors) {
                return {false, "neighbor set mismatch at instance " + std::to_string(t)};
            }
            if (std::abs(got[i] - want.value) > 1e-12) {
                return {false, "value mismatch at instance " + std::to_string(t)};
            }
            ++value_checks;
        }
    }
    return {true, "200 instances, " + std::to_string(value_checks) + " predictions"};
}

// ---- criterion 2: solver vs 0.01 grid oracle -------------------------------

Criterion criterion_solver_oracle() {
    Rng rng(77001);
    double worst_gap = -1e300;
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 2 + rng.next_below(2);
        const std::size_t m = 1 + rng.next_below(40);
        Matrix p(m, n);
        Vec64 y(m);
        for (auto & v : p.data) v = rng.uniform(-3, 3);
        for (auto & v : y) v = rng.uniform(-3, 3);

        const SimplexLsqResult res = solve_simplex_lsq(p, y);
        double sum = 0.0;
        for (double w : res.weights.w) {
            if (w < -1e-9) {
                return {false, "negative weight"};
            }
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-6) {
            return {false, "weights sum " + std::to_string(sum)};
        }
        const auto grid = oracle::grid_search_simplex(p, y, 0.01);
        worst_gap = std::max(worst_gap, res.proxy_error - grid.error);
        if (res.proxy_error > grid.error + 1e-4) {
            return {false, "proxy gap " + std::to_string(res.proxy_error - grid.error)};
        }
    }
    return {true, "100 instances, worst solver-minus-grid gap " + format_double(worst_gap)};
}

// ---- criterion 3: composition identities -----------------------------------

Criterion criterion_composition() {
    const fs::path dir = scratch_root() / "compose";
    Hub hub = Hub::init(dir);
    EncoderConfig cfg;
    cfg.input_dim = 4;
    cfg.hidden_dims = {6};
    cfg.embed_dim = 3;
    Head head;
    head.weights.assign(cfg.embed_dim, 0.0);

    Module a = init_backbone(cfg, 1);
    a.meta.task_name = "a";
    Module b = init_backbone(cfg, 2);
    b.meta.task_name = "b";
    Module c = init_backbone(cfg, 3);
    c.meta.task_name = "c";
    hub.add(a, head);
    hub.add(b, head);
    hub.add(c, head);

    AMCConfig amc_cfg;
    const Module one_hot = compose(hub, WeightVector::one_hot(3, 2), amc_cfg);
    if (one_hot.params != c.params) {
        return {false, "one-hot composition is not bit-identical"};
    }

    // equal modules: any weights reproduce the module
    {
        const fs::path dir2 = scratch_root() / "compose-eq";
        Hub hub2 = Hub::init(dir2);
        Module c1 = a;
        c1.meta.id = "c1";
        Module c2 = a;
        c2.meta.id = "c2";
        hub2.add(c1, head);
        hub2.add(c2, head);
        WeightVector w;
        w.w = {0.37, 0.63};
        const Module blended = compose(hub2, w, amc_cfg);
        for (std::size_t i = 0; i < blended.params.size(); ++i) {
            if (std::abs(blended.params[i] - a.params[i]) >
                1e-12 * std::max(1.0, std::abs(a.params[i]))) {
                return {false, "equal-module composition drifts"};
            }
        }
    }

    // threshold arithmetic: (0.7, 0.3, 1e-9) at threshold 1e-6 drops the tail
    // and renormalizes the survivors to (0.7, 0.3) / (0.7 + 0.3)
    WeightVector w;
    w.w = {0.7, 0.3, 1e-9};
    const Module dropped = compose(hub, w, amc_cfg);
    const double kept = 0.7 + 0.3;
    for (std::size_t i = 0; i < dropped.params.size(); ++i) {
        const double expect = (0.7 / kept) * a.params[i] + (0.3 / kept) * b.params[i];
        if (std::abs(dropped.params[i] - expect) > 1e-12 * std::max(1.0, std::abs(expect))) {
            return {false, "threshold renormalization mismatch"};
        }
    }
    return {true, "one-hot bitwise, idempotence, threshold arithmetic"};
}

// ---- criterion 4: gradients vs central finite differences ------------------

Criterion criterion_gradients() {
    Rng rng(555001);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        EncoderConfig cfg;
        cfg.input_dim = 2 + rng.next_below(3);
        cfg.hidden_dims = {2 + rng.next_below(3)};
        if (rng.next_below(2)) {
            cfg.hidden_dims.push_back(2 + rng.next_below(3));
        }
        cfg.embed_dim = 2 + rng.next_below(2);

        const Module bb = init_backbone(cfg, 9000 + trial);
        Module mod = bb;
        const Module * frozen = nullptr;
        std::optional<Module> adapter;
        if (trial % 2 == 1) {
            adapter = attach_adapters(bb, cfg, 9100 + trial);
            Rng arng(9200 + trial);
            for (auto & p : adapter->params) p = 0.1 * arng.normal();
            mod = *adapter;
            frozen = &bb;
        }
        Head head;
        head.weights.resize(cfg.embed_dim);
        for (auto & w : head.weights) w = rng.uniform(-1, 1);
        head.bias = rng.uniform(-1, 1);
        Vec64 x(cfg.input_dim);
        for (auto & v : x) v = rng.uniform(-2, 2);
        const double y = rng.uniform(-2, 2);

        const GradientResult g = gradient(mod, frozen, head, x, y);
        const double h = 1e-5;
        const std::size_t total = mod.params.size() + head.weights.size() + 1;
        for (std::size_t i = 0; i < total; ++i) {
            auto loss_at = [&](double delta) {
                Module mm = mod;
                Head hh = head;
                if (i < mm.params.size()) {
                    mm.params[i] += delta;
                } else if (i < mm.params.size() + hh.weights.size()) {
                    hh.weights[i - mm.params.size()] += delta;
                } else {
                    hh.bias += delta;
                }
                const double r = forward_predict(mm, frozen, hh, x) - y;
                return r * r;
            };
            const double fd = (loss_at(h) - loss_at(-h)) / (2.0 * h);
            const double analytic = i < mod.params.size()
                                        ? g.param_grad[i]
                                        : (i < mod.params.size() + head.weights.size()
                                               ? g.head_weight_grad[i - mod.params.size()]
                                               : g.head_bias_grad);
            const double rel = std::abs(analytic - fd) /
                               std::max({std::abs(fd), std::abs(analytic), 1e-6});
            worst = std::max(worst, rel);
            if (rel > 1e-4) {
                return {false, "relative error " + format_double(rel) + " at trial " +
                                   std::to_string(trial)};
            }
        }
    }
    return {true, "20 configurations, worst relative error " + format_double(worst)};
}

// ---- criterion 5: simplex nesting / monotone hub growth --------------------

Criterion criterion_monotone_growth() {
    Rng rng(314159);
    double worst = -1e300;
    for (int t = 0; t < 50; ++t) {
        // columns come from leave-one-out estimates of random embedding sets,
        // the same mechanism the hub uses
        const std::size_t m = 8 + rng.next_below(40);
        const std::size_t n = 1 + rng.next_below(6);
        Vec64 y(m);
        for (auto & v : y) v = rng.uniform(-2, 2);

        auto module_column = [&](std::uint64_t seed) {
            Rng r2(seed);
            std::vector<Vec64> embs(m, Vec64(4));
            for (auto & e : embs) {
                for (auto & v : e) v = r2.uniform(-1, 1);
                if (norm2(e) == 0.0) e[0] = 1.0;
            }
            return loo_knn_labels(embs, y, 5);
        };

        Matrix p(m, n);
        for (std::size_t j = 0; j < n; ++j) {
            const Vec64 col = module_column(1000 * t + j);
            for (std::size_t i = 0; i < m; ++i) {
                p(i, j) = col[i];
            }
        }
        const auto before = optimize_weights(p, y);

        Matrix wider(m, n + 1);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                wider(i, j) = p(i, j);
            }
        }
        const Vec64 extra = module_column(1000 * t + n);
        for (std::size_t i = 0; i < m; ++i) {
            wider(i, n) = extra[i];
        }
        const auto after = optimize_weights(wider, y);
        worst = std::max(worst, after.second - before.second);
        if (after.second > before.second + 1e-6) {
            return {false, "proxy error rose by " + format_double(after.second - before.second)};
        }
    }
    return {true, "50 instances, worst increase " + format_double(worst)};
}

// ---- criteria 6-8: shared harness over the default family ------------------

struct SharedHarness {
    std::optional<BenchHarness> harness;

    BenchHarness & get() {
        if (!harness) {
            const TaskFamilyConfig cfg = TaskFamilyConfig::defaults();
            BenchOptions opts = BenchOptions::defaults(cfg);
            harness.emplace(generate_task_family(cfg), opts, scratch_root() / "bench");
            harness->build_hub();
        }
        return *harness;
    }
};

SharedHarness g_shared;

Criterion criterion_ablation() {
    BenchHarness & h = g_shared.get();
    const std::vector<AblationVariant> variants = {
        AblationVariant::amc, AblationVariant::select_average, AblationVariant::all_average,
        AblationVariant::random_selection};
    const ExperimentReport report = h.run_ablation(variants);

    // split-averaged MAE per (task, variant)
    std::map<std::string, std::map<std::string, std::pair<double, int>>> acc;
    for (const auto & row : report.rows) {
        auto & slot = acc[row.task][row.method];
        slot.first += row.test_mae;
        slot.second += 1;
    }
    std::ostringstream detail;
    bool ok = true;
    for (const char * variant : {"select_average", "all_average", "random_selection"}) {
        std::size_t wins = 0, total = 0;
        for (const auto & [task, methods] : acc) {
            const auto amc_it = methods.find("amc");
            const auto var_it = methods.find(variant);
            const double amc_mae = amc_it->second.first / amc_it->second.second;
            const double var_mae = var_it->second.first / var_it->second.second;
            ++total;
            if (amc_mae <= var_mae) {
                ++wins;
            }
        }
        detail << variant << " " << wins << "/" << total << " ";
        if (10 * wins < 7 * total) {
            ok = false;
        }
    }
    return {ok, "amc wins: " + detail.str()};
}

Criterion criterion_main_ranks() {
    BenchHarness & h = g_shared.get();
    const std::vector<Method> methods = {Method::scratch, Method::backbone_ft,
                                         Method::multitask_ft, Method::moma_full,
                                         Method::moma_adapter};
    const ExperimentReport report = h.run_main(methods);
    std::map<std::string, double> rank;
    for (const auto & agg : aggregate_report(report)) {
        rank[agg.method] = agg.avg_rank;
    }
    std::ostringstream detail;
    detail << "ranks:";
    for (const auto & [m, r] : rank) {
        detail << " " << m << "=" << format_double(r);
    }
    const bool moma_best = rank["moma_full"] < rank["backbone_ft"] &&
                           rank["moma_full"] < rank["multitask_ft"];
    const bool negative_transfer_held = rank["backbone_ft"] - rank["multitask_ft"] <= 0.5;
    return {moma_best && negative_transfer_held, detail.str()};
}

Criterion criterion_fewshot() {
    BenchHarness & h = g_shared.get();
    auto [report, summary] = h.run_fewshot({0, 60, 10});
    (void)report;
    std::ostringstream detail;
    for (const auto & [setting, margin] : summary.margin_by_setting) {
        detail << setting << "=" << format_double(margin) << " ";
    }
    bool ok = summary.margin_by_setting.size() == 3;
    for (std::size_t i = 1; ok && i < summary.margin_by_setting.size(); ++i) {
        if (summary.margin_by_setting[i].second + 1e-12 <
            summary.margin_by_setting[i - 1].second) {
            ok = false;
        }
    }
    return {ok, "normalized margins " + detail.str()};
}

// ---- criterion 9: continual learning correlation ---------------------------

Criterion criterion_continual() {
    const TaskFamilyConfig cfg = TaskFamilyConfig::defaults();
    BenchOptions opts = BenchOptions::defaults(cfg);
    TaskFamily family = generate_task_family(cfg);
    const std::size_t held_out = cfg.n_clusters - 1;

    std::vector<SplitDataset> new_tasks;
    for (const auto & up : family.upstream) {
        if (family.cluster_of(up.train.name) == held_out) {
            new_tasks.push_back(up);
        }
    }

    BenchHarness harness(std::move(family), opts, scratch_root() / "continual");
    harness.build_hub(held_out);
    const ContinualReport report = harness.run_continual(new_tasks);

    std::size_t affected = 0;
    double max_rise = -1e300;
    for (const auto & row : report.rows) {
        affected += row.new_module_selected ? 1 : 0;
        max_rise = std::max(max_rise, row.proxy_after - row.proxy_before);
    }
    const bool monotone = max_rise <= 1e-6;
    const bool positive = report.pearson_affected > 0.0;
    return {monotone && positive && affected >= 2,
            "pearson " + format_double(report.pearson_affected) + " over " +
                std::to_string(affected) + " affected cells, max proxy rise " +
                format_double(max_rise)};
}

// ---- criterion 10: persistence and crash injection --------------------------

Criterion criterion_persistence() {
    const fs::path dir = scratch_root() / "persist";
    EncoderConfig cfg;
    cfg.input_dim = 5;
    cfg.hidden_dims = {7};
    cfg.embed_dim = 4;
    Head head;
    Rng rng(808);
    head.weights.resize(cfg.embed_dim);
    for (auto & w : head.weights) w = rng.uniform(-1, 1);
    head.bias = rng.uniform(-1, 1);

    // bitwise round trip
    {
        Hub hub = Hub::init(dir / "rt");
        Module m = init_backbone(cfg, 17);
        m.meta.task_name = "persist";
        m.meta.train_mae = 0.030517578125e-3;
        const std::string id = hub.add(m, head);
        auto [loaded, loaded_head] = hub.load(id);
        if (loaded.params != m.params || loaded_head.weights != head.weights ||
            loaded_head.bias != head.bias || loaded.meta.train_mae != m.meta.train_mae) {
            return {false, "round trip is not bitwise exact"};
        }
    }

    // crash injection at every add step
    using hub_detail::AddStep;
    struct Crash {};
    for (AddStep crash_at : {AddStep::write_module_tmp, AddStep::rename_module,
                             AddStep::write_manifest_tmp, AddStep::rename_manifest}) {
        const fs::path hdir = dir / ("crash-" + std::to_string(static_cast<int>(crash_at)));
        {
            Hub hub = Hub::init(hdir);
            Module m0 = init_backbone(cfg, 33);
            m0.meta.task_name = "prior";
            hub.add(m0, head);
            Module m1 = init_backbone(cfg, 34);
            m1.meta.task_name = "incoming";
            hub_detail::add_step_hook = [&](AddStep step) {
                if (step == crash_at) {
                    throw Crash{};
                }
            };
            try {
                hub.add(m1, head);
                hub_detail::add_step_hook = nullptr;
                return {false, "crash hook did not fire"};
            } catch (const Crash &) {
            }
            hub_detail::add_step_hook = nullptr;
        }
        Hub reopened = Hub::open(hdir);
        const std::size_t expect = crash_at == AddStep::rename_manifest ? 2 : 1;
        if (reopened.entries().size() != expect) {
            return {false, "entry count after crash step " +
                               std::to_string(static_cast<int>(crash_at))};
        }
        if (!reopened.fsck().ok()) {
            return {false, "fsck failed after crash step " +
                               std::to_string(static_cast<int>(crash_at))};
        }
        (void)reopened.load(reopened.entries()[0].id);
    }
    return {true, "bitwise round trip, 4 crash points fsck-clean"};
}

// ---- criterion 11: bench rerun determinism through the CLI -----------------

Criterion criterion_determinism() {
    const char * cli = std::getenv("MOMA_CLI");
    if (cli == nullptr) {
        return {false, "MOMA_CLI is not set"};
    }
    const fs::path dir = scratch_root() / "determinism";
    fs::create_directories(dir);
    std::ofstream(dir / "family.json") << R"({
  "n_clusters": 2, "tasks_per_cluster": 1, "n_downstream": 2,
  "input_dim": 6, "latent_dim": 2,
  "samples_upstream": 150, "samples_downstream": 200, "seed": 5
})";

    auto run_once = [&](const std::string & out) {
        const std::string cmd = std::string(cli) + " bench main --family-config " +
                                (dir / "family.json").string() + " --split-seeds 1,2 --seed 9 --out " +
                                (dir / out).string() + " > /dev/null 2>&1";
        return std::system(cmd.c_str());
    };
    if (run_once("a") != 0) {
        return {false, "first bench run failed"};
    }
    if (run_once("b") != 0) {
        return {false, "second bench run failed"};
    }

    for (const char * file : {"main_report.csv", "main_summary.json", "weights_split1.csv",
                              "weights_split2.csv"}) {
        const std::string a = read_file(dir / "a" / file);
        const std::string b = read_file(dir / "b" / file);
        if (a.empty() || a != b) {
            return {false, std::string("mismatch or empty: ") + file};
        }
    }
    return {true, "report CSV/JSON byte-identical across reruns"};
}

} // namespace

int main() {
    struct Entry {
        int number;
        const char * name;
        Criterion (*fn)();
    };
    const Entry entries[] = {
        {1, "kNN oracle equivalence", criterion_knn_oracle},
        {2, "weight-optimizer oracle equivalence", criterion_solver_oracle},
        {3, "composition identities", criterion_composition},
        {4, "gradient correctness", criterion_gradients},
        {5, "monotone hub growth", criterion_monotone_growth},
        {6, "ablation ordering", criterion_ablation},
        {7, "main-comparison direction", criterion_main_ranks},
        {8, "few-shot widening", criterion_fewshot},
        {9, "continual-learning correlation", criterion_continual},
        {10, "persistence", criterion_persistence},
        {11, "determinism", criterion_determinism},
    };

    int failures = 0;
    for (const Entry & e : entries) {
        const auto start = std::chrono::steady_clock::now();
        Criterion result;
        try {
            result = e.fn();
        } catch (const std::exception & ex) {
            result = {false, std::string("exception: ") + ex.what()};
        }
        std::printf("[%s] criterion %2d: %s (%s) [%.1fs]\n", result.pass ? "PASS" : "FAIL",
                    e.number, e.name, result.detail.c_str(), seconds_since(start));
        std::fflush(stdout);
        failures += result.pass ? 0 : 1;
    }

    std::error_code ec;
    fs::remove_all(scratch_root(), ec);
    if (failures > 0) {
        std::printf("%d criterion(s) failed\n", failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}

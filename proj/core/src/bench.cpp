#include "moma/bench.hpp"

#include "moma/csv.hpp"
#include "moma/errors.hpp"
#include "moma/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace moma {

using nlohmann::json;

void TaskFamilyConfig::validate() const {
    if (n_clusters < 1 || tasks_per_cluster < 1 || n_downstream < 1) {
        throw InvalidInputError("task family: counts must be positive");
    }
    if (input_dim < 1 || latent_dim < 1) {
        throw InvalidInputError("task family: dims must be positive");
    }
    if (samples_upstream < 4 || samples_downstream < 4) {
        throw InvalidInputError("task family: too few samples");
    }
    if (noise_sigma < 0.0) {
        throw InvalidInputError("task family: noise_sigma must be >= 0");
    }
    if (cross_cluster_leak < 0.0 || cross_cluster_leak >= 1.0) {
        throw InvalidInputError("task family: cross_cluster_leak must be in [0, 1)");
    }
}

TaskFamilyConfig TaskFamilyConfig::from_json_file(const std::filesystem::path & path) {
    std::ifstream in(path);
    if (!in) {
        throw NotFoundError("cannot open " + path.string());
    }
    json j;
    try {
        in >> j;
    } catch (const std::exception & e) {
        throw InvalidInputError("family config parse failure: " + std::string(e.what()));
    }
    TaskFamilyConfig cfg;
    cfg.n_clusters = j.value("n_clusters", cfg.n_clusters);
    cfg.tasks_per_cluster = j.value("tasks_per_cluster", cfg.tasks_per_cluster);
    cfg.n_downstream = j.value("n_downstream", cfg.n_downstream);
    cfg.input_dim = j.value("input_dim", cfg.input_dim);
    cfg.latent_dim = j.value("latent_dim", cfg.latent_dim);
    cfg.samples_upstream = j.value("samples_upstream", cfg.samples_upstream);
    cfg.samples_downstream = j.value("samples_downstream", cfg.samples_downstream);
    cfg.noise_sigma = j.value("noise_sigma", cfg.noise_sigma);
    cfg.cross_cluster_leak = j.value("cross_cluster_leak", cfg.cross_cluster_leak);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.validate();
    return cfg;
}

Vec64 TaskFamily::cluster_latents(std::size_t cluster, const Vec64 & x) const {
    const Matrix & a = latent_weights[cluster];
    const Vec64 & b = latent_biases[cluster];
    Vec64 out(a.rows);
    for (std::size_t r = 0; r < a.rows; ++r) {
        double s = b[r];
        for (std::size_t c = 0; c < a.cols; ++c) {
            s += a(r, c) * x[c];
        }
        out[r] = std::tanh(s);
    }
    return out;
}

std::size_t TaskFamily::cluster_of(const std::string & task_name) const {
    auto it = ground_truth_cluster.find(task_name);
    if (it == ground_truth_cluster.end()) {
        throw NotFoundError("no cluster recorded for task " + task_name);
    }
    return it->second;
}

namespace {

Vec64 unit_normal_vec(Rng & rng, std::size_t n) {
    Vec64 v(n);
    double norm = 0.0;
    for (double & x : v) {
        x = rng.normal();
        norm += x * x;
    }
    norm = std::sqrt(norm);
    if (norm > 0.0) {
        for (double & x : v) {
            x /= norm;
        }
    }
    return v;
}

struct TaskReadout {
    std::size_t cluster = 0;
    std::size_t leak_cluster = 0;
    Vec64 readout;      // unit vector over own-cluster latents
    Vec64 leak_readout; // unit vector over the leak cluster's latents
    double scale = 1.0;
    double offset = 0.0;
};

LabeledDataset sample_task(const TaskFamily & family, const TaskReadout & t,
                           std::size_t n_samples, const std::string & name, Rng & rng) {
    const TaskFamilyConfig & cfg = family.config;
    LabeledDataset data;
    data.name = name;
    data.features.reserve(n_samples);
    data.targets.reserve(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) {
        Vec64 x(cfg.input_dim);
        for (double & v : x) {
            v = rng.normal();
        }
        const Vec64 own = family.cluster_latents(t.cluster, x);
        double core = dot(t.readout, own);
        if (cfg.cross_cluster_leak > 0.0 && cfg.n_clusters > 1) {
            const Vec64 other = family.cluster_latents(t.leak_cluster, x);
            core += cfg.cross_cluster_leak * dot(t.leak_readout, other);
        }
        const double y = t.scale * (core + cfg.noise_sigma * rng.normal()) + t.offset;
        data.features.push_back(std::move(x));
        data.targets.push_back(y);
    }
    return data;
}

TaskReadout make_readout(const TaskFamilyConfig & cfg, std::size_t cluster, Rng & rng,
                         const Vec64 * base = nullptr, double base_tilt = 0.0) {
    TaskReadout t;
    t.cluster = cluster;
    t.leak_cluster = cfg.n_clusters > 1 ? (cluster + 1) % cfg.n_clusters : cluster;
    if (base != nullptr) {
        // a variant of the cluster's base readout (sibling tasks, the way
        // public corpora carry near-duplicate properties across sources)
        Vec64 r = *base;
        const Vec64 noise = unit_normal_vec(rng, cfg.latent_dim);
        for (std::size_t i = 0; i < r.size(); ++i) {
            r[i] += base_tilt * noise[i];
        }
        const double n = norm2(r);
        for (double & v : r) {
            v /= n;
        }
        t.readout = std::move(r);
    } else {
        t.readout = unit_normal_vec(rng, cfg.latent_dim);
    }
    t.leak_readout = unit_normal_vec(rng, cfg.latent_dim);
    t.scale = std::exp(rng.uniform(-1.5, 1.5));
    t.offset = rng.uniform(-2.0, 2.0);
    return t;
}

} // namespace

TaskFamily generate_task_family(const TaskFamilyConfig & cfg) {
    cfg.validate();
    TaskFamily family;
    family.config = cfg;

    // cluster latent maps
    Rng cluster_rng(mix_seed(cfg.seed, {0xC1u}));
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.input_dim));
    for (std::size_t c = 0; c < cfg.n_clusters; ++c) {
        Matrix a(cfg.latent_dim, cfg.input_dim);
        for (double & v : a.data) {
            v = scale * cluster_rng.normal();
        }
        Vec64 b(cfg.latent_dim);
        for (double & v : b) {
            v = cluster_rng.uniform(-0.5, 0.5);
        }
        family.latent_weights.push_back(std::move(a));
        family.latent_biases.push_back(std::move(b));
    }

    // upstream tasks: tasks_per_cluster sibling variants per cluster
    Rng base_rng(mix_seed(cfg.seed, {0xBAu}));
    std::vector<Vec64> base_readouts;
    for (std::size_t c = 0; c < cfg.n_clusters; ++c) {
        base_readouts.push_back(unit_normal_vec(base_rng, cfg.latent_dim));
    }
    for (std::size_t c = 0; c < cfg.n_clusters; ++c) {
        for (std::size_t k = 0; k < cfg.tasks_per_cluster; ++k) {
            const std::string name = "up-c" + std::to_string(c) + "-t" + std::to_string(k);
            Rng rng(mix_seed(cfg.seed, {0x0Bu, c, k}));
            const TaskReadout t = make_readout(cfg, c, rng, &base_readouts[c], 0.35);
            LabeledDataset data = sample_task(family, t, cfg.samples_upstream, name, rng);
            family.upstream.push_back(split_dataset(data, mix_seed(cfg.seed, {0x51u, c, k})));
            family.ground_truth_cluster[name] = c;
        }
    }

    // downstream tasks, assigned round-robin so every cluster is covered
    for (std::size_t d = 0; d < cfg.n_downstream; ++d) {
        const std::size_t c = d % cfg.n_clusters;
        const std::string name = "down-" + std::to_string(d);
        Rng rng(mix_seed(cfg.seed, {0xD0u, d}));
        const TaskReadout t = make_readout(cfg, c, rng);
        LabeledDataset data = sample_task(family, t, cfg.samples_downstream, name, rng);
        family.downstream.push_back(split_dataset(data, mix_seed(cfg.seed, {0x52u, d})));
        family.ground_truth_cluster[name] = c;
    }

    // Auxiliary pre-training pool, the desk-scale analogue of a broad
    // pre-trained checkpoint: several times larger than any single task and
    // built from a sum of nonlinearly warped random mixtures over every
    // cluster's latents, so predicting it well requires representing the
    // whole latent space rather than one readout direction per cluster.
    {
        Rng rng(mix_seed(cfg.seed, {0xAAu}));
        const std::size_t n_mixtures = 4;
        const std::size_t pool_size = 4 * cfg.samples_upstream;
        const double cluster_norm = 1.0 / std::sqrt(static_cast<double>(cfg.n_clusters));
        const double mixture_norm = 1.0 / std::sqrt(static_cast<double>(n_mixtures));
        std::vector<std::vector<Vec64>> mixes(n_mixtures);
        for (auto & mix : mixes) {
            for (std::size_t c = 0; c < cfg.n_clusters; ++c) {
                mix.push_back(unit_normal_vec(rng, cfg.latent_dim));
            }
        }
        LabeledDataset pool;
        pool.name = "pretrain-pool";
        for (std::size_t i = 0; i < pool_size; ++i) {
            Vec64 x(cfg.input_dim);
            for (double & v : x) {
                v = rng.normal();
            }
            double y = 0.0;
            for (std::size_t s = 0; s < n_mixtures; ++s) {
                double mixed = 0.0;
                for (std::size_t c = 0; c < cfg.n_clusters; ++c) {
                    mixed += dot(mixes[s][c], family.cluster_latents(c, x));
                }
                y += std::tanh(1.5 * cluster_norm * mixed);
            }
            y = mixture_norm * y + cfg.noise_sigma * rng.normal();
            pool.features.push_back(std::move(x));
            pool.targets.push_back(y);
        }
        family.pretrain_pool = std::move(pool);
    }

    return family;
}

const char * to_string(Method m) {
    switch (m) {
        case Method::scratch:      return "scratch";
        case Method::backbone_ft:  return "backbone_ft";
        case Method::multitask_ft: return "multitask_ft";
        case Method::moma_full:    return "moma_full";
        case Method::moma_adapter: return "moma_adapter";
    }
    return "?";
}

const char * to_string(AblationVariant v) {
    switch (v) {
        case AblationVariant::amc:              return "amc";
        case AblationVariant::select_average:   return "select_average";
        case AblationVariant::all_average:      return "all_average";
        case AblationVariant::random_selection: return "random_selection";
    }
    return "?";
}

void ExperimentReport::add(ReportRow row) {
    for (const auto & r : rows) {
        if (r.task == row.task && r.method == row.method && r.split_seed == row.split_seed &&
            r.setting == row.setting) {
            throw InvalidInputError("duplicate report cell: " + row.task + "/" + row.method);
        }
    }
    rows.push_back(std::move(row));
}

std::string ExperimentReport::to_csv() const {
    std::ostringstream os;
    os << "task,method,split_seed,setting,test_mae\n";
    for (const auto & r : rows) {
        os << r.task << ',' << r.method << ',' << r.split_seed << ',' << r.setting << ','
           << format_double(r.test_mae) << '\n';
    }
    return os.str();
}

std::vector<MethodAggregate> aggregate_report(const ExperimentReport & report) {
    // split-averaged MAE per (task, method), "full" setting only
    std::vector<std::string> tasks, methods;
    std::map<std::pair<std::string, std::string>, std::pair<double, std::size_t>> acc;
    for (const auto & r : report.rows) {
        if (r.setting != "full") {
            continue;
        }
        if (std::find(tasks.begin(), tasks.end(), r.task) == tasks.end()) {
            tasks.push_back(r.task);
        }
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) {
            methods.push_back(r.method);
        }
        auto & slot = acc[{r.task, r.method}];
        slot.first += r.test_mae;
        slot.second += 1;
    }
    if (tasks.empty() || methods.empty()) {
        return {};
    }

    std::map<std::string, std::vector<double>> ranks; // method -> per-task rank
    std::map<std::string, double> mae_sum;
    for (const auto & task : tasks) {
        std::vector<std::pair<double, std::string>> scored;
        for (const auto & method : methods) {
            auto it = acc.find({task, method});
            if (it == acc.end()) {
                throw InvalidInputError("report missing cell " + task + "/" + method);
            }
            const double mean = it->second.first / static_cast<double>(it->second.second);
            scored.emplace_back(mean, method);
            mae_sum[method] += mean;
        }
        std::sort(scored.begin(), scored.end());
        // ties share the mean of the ranks they cover
        std::size_t i = 0;
        while (i < scored.size()) {
            std::size_t j = i;
            while (j + 1 < scored.size() && scored[j + 1].first == scored[i].first) {
                ++j;
            }
            const double shared = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
            for (std::size_t t = i; t <= j; ++t) {
                ranks[scored[t].second].push_back(shared);
            }
            i = j + 1;
        }
    }

    std::vector<MethodAggregate> out;
    for (const auto & method : methods) {
        MethodAggregate a;
        a.method = method;
        a.mean_mae = mae_sum[method] / static_cast<double>(tasks.size());
        const auto & rv = ranks[method];
        double mean = 0.0;
        for (double r : rv) {
            mean += r;
        }
        mean /= static_cast<double>(rv.size());
        double var = 0.0;
        for (double r : rv) {
            var += (r - mean) * (r - mean);
        }
        var /= static_cast<double>(rv.size());
        a.avg_rank = mean;
        a.rank_std = std::sqrt(var);
        out.push_back(a);
    }
    return out;
}

std::string ExperimentReport::summary_json() const {
    json j;
    j["methods"] = json::array();
    for (const auto & a : aggregate_report(*this)) {
        j["methods"].push_back({{"method", a.method},
                                {"mean_mae", a.mean_mae},
                                {"avg_rank", a.avg_rank},
                                {"rank_std", a.rank_std}});
    }
    return j.dump(2) + "\n";
}

double pearson(const Vec64 & x, const Vec64 & y) {
    if (x.size() != y.size() || x.empty()) {
        throw ShapeMismatchError("pearson: length mismatch");
    }
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) {
        throw UndefinedCorrelationError("pearson: zero variance");
    }
    return sxy / std::sqrt(sxx * syy);
}

std::string FewshotSummary::summary_json() const {
    json j;
    j["normalized_margin"] = json::object();
    for (const auto & [setting, margin] : margin_by_setting) {
        j["normalized_margin"][setting] = margin;
    }
    return j.dump(2) + "\n";
}

std::string ContinualReport::to_csv() const {
    std::ostringstream os;
    os << "task,split_seed,proxy_before,proxy_after,mae_before,mae_after,new_module_selected\n";
    for (const auto & r : rows) {
        os << r.task << ',' << r.split_seed << ',' << format_double(r.proxy_before) << ','
           << format_double(r.proxy_after) << ',' << format_double(r.mae_before) << ','
           << format_double(r.mae_after) << ',' << (r.new_module_selected ? 1 : 0) << '\n';
    }
    return os.str();
}

std::string ContinualReport::summary_json() const {
    json j;
    j["pearson_affected"] = pearson_affected;
    std::size_t affected = 0;
    for (const auto & r : rows) {
        affected += r.new_module_selected ? 1 : 0;
    }
    j["affected_cells"] = affected;
    j["total_cells"] = rows.size();
    return j.dump(2) + "\n";
}

BenchOptions BenchOptions::defaults(const TaskFamilyConfig & family) {
    BenchOptions o;
    o.encoder.input_dim = family.input_dim;
    o.encoder.hidden_dims = {32, 32};
    o.encoder.embed_dim = 16;
    o.encoder.activation = Activation::tanh;

    o.pretrain = TrainConfig::module_defaults();
    o.pretrain.learning_rate = 0.05;
    o.pretrain.max_epochs = 80;
    o.pretrain.patience = 15;

    o.module_train = TrainConfig::module_defaults();
    o.module_train.learning_rate = 0.05;
    o.module_train.max_epochs = 60;
    o.module_train.patience = 10;

    o.finetune_cfg = TrainConfig::finetune_defaults();
    o.finetune_cfg.learning_rate = 0.01;
    o.finetune_cfg.max_epochs = 60;
    o.finetune_cfg.patience = 10;

    o.amc.k_neighbors = 5;
    o.amc.selection_threshold = 1e-6;
    return o;
}

BenchHarness::BenchHarness(TaskFamily family, BenchOptions opts, std::filesystem::path workdir)
    : family_(std::move(family)), opts_(std::move(opts)), workdir_(std::move(workdir)) {
    opts_.encoder.validate();
    std::filesystem::create_directories(workdir_);
}

const Hub & BenchHarness::hub() const {
    if (!hub_) {
        throw Error("bench harness: hub not built yet");
    }
    return *hub_;
}

const Module & BenchHarness::backbone() const {
    if (!backbone_) {
        throw Error("bench harness: hub not built yet");
    }
    return *backbone_;
}

TrainConfig BenchHarness::cell_config(const TrainConfig & base, std::uint64_t stream,
                                      std::size_t task_index, std::uint64_t split_seed) const {
    TrainConfig cfg = base;
    cfg.seed = mix_seed(opts_.master_seed, {stream, task_index, split_seed});
    return cfg;
}

Module BenchHarness::train_multitask_backbone(std::optional<std::size_t> excluded_cluster) {
    // proportional task sampling over the upstream tasks, one head per task,
    // shared trainable backbone; targets standardized per task
    std::vector<const SplitDataset *> tasks;
    std::vector<Vec64> std_targets;
    for (const auto & up : family_.upstream) {
        if (excluded_cluster && family_.cluster_of(up.train.name) == *excluded_cluster) {
            continue;
        }
        tasks.push_back(&up);
        std_targets.push_back(standardize(up.train.targets,
                                          compute_target_stats(up.train.targets)));
    }
    Module mod = *backbone_;
    std::vector<Head> heads(tasks.size());
    for (auto & h : heads) {
        h.weights.assign(opts_.encoder.embed_dim, 0.0);
        h.bias = 0.0;
    }

    std::size_t total = 0;
    std::vector<std::size_t> cumulative;
    for (const auto * t : tasks) {
        total += t->train.size();
        cumulative.push_back(total);
    }

    Rng rng(mix_seed(opts_.master_seed, {0x317u}));
    const std::size_t steps_per_epoch = (total + opts_.module_train.batch_size - 1) /
                                        opts_.module_train.batch_size;
    Vec64 grad_acc(mod.params.size());
    for (std::size_t epoch = 0; epoch < opts_.multitask_epochs; ++epoch) {
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            const std::size_t pick = static_cast<std::size_t>(rng.next_below(total));
            std::size_t ti = 0;
            while (cumulative[ti] <= pick) {
                ++ti;
            }
            const SplitDataset & d = *tasks[ti];
            Head & head = heads[ti];

            const std::size_t bsz = std::min<std::size_t>(opts_.module_train.batch_size,
                                                          d.train.size());
            std::fill(grad_acc.begin(), grad_acc.end(), 0.0);
            Vec64 head_grad(head.weights.size(), 0.0);
            double bias_grad = 0.0;
            for (std::size_t b = 0; b < bsz; ++b) {
                const std::size_t i = static_cast<std::size_t>(rng.next_below(d.train.size()));
                GradientResult g = gradient(mod, nullptr, head, d.train.features[i],
                                            std_targets[ti][i]);
                for (std::size_t p = 0; p < grad_acc.size(); ++p) {
                    grad_acc[p] += g.param_grad[p];
                }
                for (std::size_t p = 0; p < head_grad.size(); ++p) {
                    head_grad[p] += g.head_weight_grad[p];
                }
                bias_grad += g.head_bias_grad;
            }
            const double step_size = opts_.multitask_lr / static_cast<double>(bsz);
            for (std::size_t p = 0; p < grad_acc.size(); ++p) {
                mod.params[p] -= step_size * grad_acc[p];
            }
            for (std::size_t p = 0; p < head_grad.size(); ++p) {
                head.weights[p] -= step_size * head_grad[p];
            }
            head.bias -= step_size * bias_grad;
        }
    }
    mod.meta.task_name = "multitask";
    return mod;
}

void BenchHarness::build_hub(std::optional<std::size_t> excluded_cluster) {
    const auto hub_dir = workdir_ / "hub";
    std::filesystem::remove_all(hub_dir);
    hub_ = Hub::init(hub_dir);

    // shared pre-trained encoder: every module and baseline starts here
    Module raw = init_backbone(opts_.encoder, mix_seed(opts_.master_seed, {0x1Bu}));
    TrainConfig pre = opts_.pretrain;
    pre.seed = mix_seed(opts_.master_seed, {0x9Eu});
    backbone_ = surrogate_pretrain(raw, family_.pretrain_pool, pre);

    for (std::size_t u = 0; u < family_.upstream.size(); ++u) {
        const SplitDataset & task = family_.upstream[u];
        if (excluded_cluster && family_.cluster_of(task.train.name) == *excluded_cluster) {
            continue;
        }
        TrainConfig cfg = opts_.module_train;
        cfg.seed = mix_seed(opts_.master_seed, {0xF0u, u});
        TrainResult full = train_module(*backbone_, task, cfg, ModuleKind::full);
        hub_->add(full.module, full.head);
        if (opts_.train_adapters) {
            TrainConfig acfg = opts_.module_train;
            acfg.seed = mix_seed(opts_.master_seed, {0xF1u, u});
            TrainResult ad = train_module(*backbone_, task, acfg, ModuleKind::adapter);
            hub_->add(ad.module, ad.head);
        }
    }

    multitask_ = train_multitask_backbone(excluded_cluster);
}

double BenchHarness::run_cell(Method method, const SplitDataset & d, std::size_t task_index,
                              std::uint64_t split_seed, bool record_weights) {
    const TrainConfig ft = cell_config(opts_.finetune_cfg, 0x200u + static_cast<std::uint64_t>(method),
                                       task_index, split_seed);
    switch (method) {
        case Method::scratch: {
            Module m0 = init_backbone(opts_.encoder,
                                      mix_seed(opts_.master_seed, {0x5Cu, task_index, split_seed}));
            TrainResult r = finetune(m0, nullptr, d, ft);
            return evaluate_mae(r.module, nullptr, r.head, d.test);
        }
        case Method::backbone_ft: {
            TrainResult r = finetune(*backbone_, nullptr, d, ft);
            return evaluate_mae(r.module, nullptr, r.head, d.test);
        }
        case Method::multitask_ft: {
            TrainResult r = finetune(*multitask_, nullptr, d, ft);
            return evaluate_mae(r.module, nullptr, r.head, d.test);
        }
        case Method::moma_full: {
            AMCConfig cfg = opts_.amc;
            cfg.kind_filter = ModuleKind::full;
            AMCResult amc = amc_run(*hub_, d, cfg);
            if (record_weights) {
                weight_records_.push_back({split_seed, d.train.name, amc.module_ids,
                                           amc.weights.w});
            }
            TrainResult r = finetune(amc.composed, nullptr, d, ft);
            return evaluate_mae(r.module, nullptr, r.head, d.test);
        }
        case Method::moma_adapter: {
            AMCConfig cfg = opts_.amc;
            cfg.kind_filter = ModuleKind::adapter;
            AMCResult amc = amc_run(*hub_, d, cfg, &*backbone_);
            TrainResult r = finetune(amc.composed, &*backbone_, d, ft);
            return evaluate_mae(r.module, &*backbone_, r.head, d.test);
        }
    }
    throw Error("unknown method");
}

std::vector<std::string> BenchHarness::plan_main(const std::vector<Method> & methods) const {
    std::vector<std::string> cells;
    for (std::uint64_t s : opts_.split_seeds) {
        for (const auto & task : family_.downstream) {
            for (Method m : methods) {
                cells.push_back(task.train.name + "/" + to_string(m) + "/split" +
                                std::to_string(s));
            }
        }
    }
    return cells;
}

ExperimentReport BenchHarness::run_main(const std::vector<Method> & methods) {
    hub(); // built?
    weight_records_.clear();
    ExperimentReport report;
    for (std::uint64_t s : opts_.split_seeds) {
        for (std::size_t ti = 0; ti < family_.downstream.size(); ++ti) {
            const SplitDataset d = resplit(family_.downstream[ti], s);
            for (Method m : methods) {
                ReportRow row;
                row.task = d.train.name;
                row.method = to_string(m);
                row.split_seed = s;
                try {
                    row.test_mae = run_cell(m, d, ti, s, /*record_weights=*/true);
                } catch (const std::exception & e) {
                    throw Error("cell " + row.task + "/" + row.method + "/split" +
                                std::to_string(s) + ": " + e.what());
                }
                report.add(std::move(row));
            }
        }
    }
    return report;
}

ExperimentReport BenchHarness::run_ablation(const std::vector<AblationVariant> & variants) {
    hub();
    ExperimentReport report;
    AMCConfig cfg = opts_.amc;
    cfg.kind_filter = ModuleKind::full;

    // ids of every full module, manifest order
    std::vector<std::string> all_ids;
    for (const auto & e : hub_->entries()) {
        if (e.kind == ModuleKind::full) {
            all_ids.push_back(e.id);
        }
    }

    for (std::uint64_t s : opts_.split_seeds) {
        for (std::size_t ti = 0; ti < family_.downstream.size(); ++ti) {
            const SplitDataset d = resplit(family_.downstream[ti], s);
            const AMCResult amc = amc_run(*hub_, d, cfg);

            auto uniform_over = [&](const std::vector<std::string> & ids) {
                WeightVector w;
                w.w.assign(all_ids.size(), 0.0);
                for (const auto & id : ids) {
                    const auto it = std::find(all_ids.begin(), all_ids.end(), id);
                    w.w[static_cast<std::size_t>(it - all_ids.begin())] =
                        1.0 / static_cast<double>(ids.size());
                }
                return w;
            };

            for (AblationVariant v : variants) {
                Module composed;
                switch (v) {
                    case AblationVariant::amc:
                        composed = amc.composed;
                        break;
                    case AblationVariant::select_average:
                        composed = compose(*hub_, uniform_over(amc.selected_ids), cfg);
                        break;
                    case AblationVariant::all_average:
                        composed = compose(*hub_, uniform_over(all_ids), cfg);
                        break;
                    case AblationVariant::random_selection: {
                        Rng rng(mix_seed(opts_.master_seed, {0xABu, ti, s}));
                        std::vector<std::string> pool = all_ids;
                        rng.shuffle(pool);
                        pool.resize(amc.selected_ids.size());
                        composed = compose(*hub_, uniform_over(pool), cfg);
                        break;
                    }
                }
                ReportRow row;
                row.task = d.train.name;
                row.method = to_string(v);
                row.split_seed = s;
                try {
                    const TrainConfig ft = cell_config(
                        opts_.finetune_cfg, 0x300u + static_cast<std::uint64_t>(v), ti, s);
                    TrainResult r = finetune(composed, nullptr, d, ft);
                    row.test_mae = evaluate_mae(r.module, nullptr, r.head, d.test);
                } catch (const std::exception & e) {
                    throw Error("cell " + row.task + "/" + row.method + "/split" +
                                std::to_string(s) + ": " + e.what());
                }
                report.add(std::move(row));
            }
        }
    }
    return report;
}

std::pair<ExperimentReport, FewshotSummary>
BenchHarness::run_fewshot(const std::vector<std::size_t> & sizes) {
    hub();
    ExperimentReport report;
    std::vector<std::pair<std::string, double>> margins;

    for (std::size_t size : sizes) {
        const std::string setting = size == 0 ? "full" : std::to_string(size);
        double margin_acc = 0.0;
        std::size_t cells = 0;
        for (std::uint64_t s : opts_.split_seeds) {
            for (std::size_t ti = 0; ti < family_.downstream.size(); ++ti) {
                const SplitDataset d = resplit(family_.downstream[ti], s);
                const double full_std = compute_target_stats(d.train.targets).stddev;
                if (size > 0 && size >= d.train.size()) {
                    std::fprintf(stderr,
                                 "warning: few-shot size %zu >= train size %zu for %s, clamped\n",
                                 size, d.train.size(), d.train.name.c_str());
                }
                const SplitDataset dd =
                    size == 0 ? d
                              : downsample_train(d, size,
                                                 mix_seed(opts_.master_seed, {0xFEu, ti, s, size}));

                // the cells run exactly as in run_main (same seed streams), so
                // the full-size setting reproduces the main-run numbers
                double mae_moma = 0.0, mae_bft = 0.0;
                try {
                    mae_moma = run_cell(Method::moma_full, dd, ti, s, /*record_weights=*/false);
                    mae_bft = run_cell(Method::backbone_ft, dd, ti, s, /*record_weights=*/false);
                } catch (const std::exception & e) {
                    throw Error("cell " + d.train.name + "/fewshot-" + setting + "/split" +
                                std::to_string(s) + ": " + e.what());
                }

                ReportRow m_row{d.train.name, to_string(Method::moma_full), s, setting, mae_moma};
                ReportRow b_row{d.train.name, to_string(Method::backbone_ft), s, setting, mae_bft};
                report.add(std::move(m_row));
                report.add(std::move(b_row));

                margin_acc += (mae_bft - mae_moma) / full_std;
                ++cells;
            }
        }
        margins.emplace_back(setting, margin_acc / static_cast<double>(cells));
    }

    FewshotSummary summary;
    summary.margin_by_setting = std::move(margins);
    return {std::move(report), std::move(summary)};
}

ContinualReport BenchHarness::run_continual(const std::vector<SplitDataset> & new_tasks) {
    hub();
    AMCConfig cfg = opts_.amc;
    cfg.kind_filter = ModuleKind::full;

    struct BeforeCell {
        double proxy = 0.0;
        double mae = 0.0;
    };
    std::map<std::pair<std::size_t, std::uint64_t>, BeforeCell> before;

    for (std::uint64_t s : opts_.split_seeds) {
        for (std::size_t ti = 0; ti < family_.downstream.size(); ++ti) {
            const SplitDataset d = resplit(family_.downstream[ti], s);
            try {
                AMCResult amc = amc_run(*hub_, d, cfg);
                const TrainConfig ft = cell_config(opts_.finetune_cfg, 0x500u, ti, s);
                TrainResult r = finetune(amc.composed, nullptr, d, ft);
                before[{ti, s}] = {amc.proxy_error,
                                   evaluate_mae(r.module, nullptr, r.head, d.test)};
            } catch (const std::exception & e) {
                throw Error("cell " + d.train.name + "/continual-before/split" +
                            std::to_string(s) + ": " + e.what());
            }
        }
    }

    // expand the hub with modules for the new tasks, same shared backbone
    std::set<std::string> new_ids;
    for (std::size_t u = 0; u < new_tasks.size(); ++u) {
        TrainConfig mcfg = opts_.module_train;
        mcfg.seed = mix_seed(opts_.master_seed, {0x600u, u});
        TrainResult full = train_module(*backbone_, new_tasks[u], mcfg, ModuleKind::full);
        new_ids.insert(hub_->add(full.module, full.head));
    }

    ContinualReport report;
    Vec64 proxy_drop, mae_drop;
    for (std::uint64_t s : opts_.split_seeds) {
        for (std::size_t ti = 0; ti < family_.downstream.size(); ++ti) {
            const SplitDataset d = resplit(family_.downstream[ti], s);
            AMCResult amc = amc_run(*hub_, d, cfg);
            ContinualRow row;
            row.task = d.train.name;
            row.split_seed = s;
            const BeforeCell & b = before.at({ti, s});
            row.proxy_before = b.proxy;
            row.mae_before = b.mae;
            row.proxy_after = amc.proxy_error;
            for (const auto & id : amc.selected_ids) {
                if (new_ids.count(id)) {
                    row.new_module_selected = true;
                    break;
                }
            }
            if (row.new_module_selected) {
                try {
                    const TrainConfig ft = cell_config(opts_.finetune_cfg, 0x501u, ti, s);
                    TrainResult r = finetune(amc.composed, nullptr, d, ft);
                    row.mae_after = evaluate_mae(r.module, nullptr, r.head, d.test);
                } catch (const std::exception & e) {
                    throw Error("cell " + d.train.name + "/continual-after/split" +
                                std::to_string(s) + ": " + e.what());
                }
                proxy_drop.push_back(row.proxy_before - row.proxy_after);
                mae_drop.push_back(row.mae_before - row.mae_after);
            } else {
                row.mae_after = row.mae_before;
            }
            report.rows.push_back(std::move(row));
        }
    }

    report.pearson_affected = proxy_drop.size() >= 2 ? pearson(proxy_drop, mae_drop) : 0.0;
    return report;
}

std::string BenchHarness::weight_matrix_csv(std::uint64_t split_seed) const {
    std::ostringstream os;
    bool header_done = false;
    for (const auto & rec : weight_records_) {
        if (rec.split_seed != split_seed) {
            continue;
        }
        if (!header_done) {
            os << "task";
            for (const auto & id : rec.module_ids) {
                os << ',' << id;
            }
            os << '\n';
            header_done = true;
        }
        os << rec.task;
        for (double w : rec.weights) {
            os << ',' << format_double(w);
        }
        os << '\n';
    }
    return os.str();
}

} // namespace moma

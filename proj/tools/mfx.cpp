#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <mutex>

#include "mfx/checkpoint.hpp"
#include "mfx/experiment.hpp"
#include "mfx/expand.hpp"
#include "mfx/proxies.hpp"
#include "mfx/random.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Common {
    std::string config = "default";
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    unsigned threads = 0;  // 0: take [manifold] threads from the config
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "config file or built-in name")->capture_default_str();
    cmd->add_option("--seed", c.seed, "experiment seed (overrides [protocol] experiment_seed)");
    cmd->add_option("--out-dir", c.out_dir, "output directory (overrides [output] dir)");
    cmd->add_option("--threads", c.threads, "worker threads (overrides [manifold] threads)");
}

mfx::ExperimentConfig resolve(const Common& c) {
    auto file = mfx::load_config_file(c.config);
    if (c.seed) file.set("protocol", "experiment_seed", std::to_string(*c.seed));
    if (!c.out_dir.empty()) file.set("output", "dir", c.out_dir);
    if (c.threads) file.set("manifold", "threads", std::to_string(c.threads));
    return mfx::to_experiment_config(file);
}

void log_line(const std::string& s) {
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    std::cerr << s << '\n';
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream f(path);
    if (!f) throw mfx::Error("cannot write " + path.string());
    f << j.dump(2) << '\n';
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream f(path);
    if (!f) throw mfx::Error("cannot write " + path.string());
    return f;
}

mfx::Checkpoint base_checkpoint(const mfx::BaseModel& base, const mfx::OptimizerSettings& settings) {
    mfx::Checkpoint ck{base.model.spec(), base.params, mfx::make_optimizer<float>(settings, base.params.size()), {},
                       base.best_epoch, base.history};
    std::ostringstream rng;
    rng << std::mt19937_64();
    ck.rng_state = rng.str();
    return ck;
}

struct Loaded {
    mfx::Model model;
    mfx::ParameterVector params;
};

Loaded load_model(const fs::path& path) {
    auto ck = mfx::load_checkpoint(path);
    auto model = mfx::compile(ck.spec);
    return {model, mfx::ParameterVector(model.layout(), mfx::flatten(ck.params))};
}

json estimate_json(const mfx::ManifoldEstimate& e) {
    return {{"edges", e.edges}, {"n", e.n}, {"ratio", e.ratio}, {"lambda", e.lambda}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Manifold-metric expansion experiments"};
    app.require_subcommand(1);

    Common common;
    std::uint64_t replicate = 0;
    bool replicate_set = false;

    auto* train = app.add_subcommand("train", "train a base model to early stopping and save a checkpoint");
    add_common(train, common);
    train->add_option("--replicate", replicate, "replicate seed (default: first of [protocol] seeds)")
        ->each([&](const std::string&) { replicate_set = true; });

    std::string checkpoint, candidate_path;
    std::size_t layer = 0;
    double factor = 2.0;
    auto* expand = app.add_subcommand("expand", "widen a layer of a checkpoint with function-preserving duplication");
    add_common(expand, common);
    expand->add_option("--checkpoint", checkpoint, "base checkpoint")->required();
    expand->add_option("--layer", layer, "ordinal of the parameterized layer to widen")->capture_default_str();
    expand->add_option("--factor", factor, "width multiplier")->capture_default_str();

    std::optional<double> q;
    std::optional<std::size_t> n, batch_index;
    auto* manifold = app.add_subcommand("manifold", "barrier chain of a checkpoint, optionally against a candidate");
    add_common(manifold, common);
    manifold->add_option("--checkpoint", checkpoint, "base checkpoint")->required();
    manifold->add_option("--candidate", candidate_path, "candidate (expanded) checkpoint");
    manifold->add_option("--q", q, "threshold quantile");
    manifold->add_option("--n", n, "chain length");
    manifold->add_option("--layer", layer, "ordinal of the permuted layer")->capture_default_str();
    manifold->add_option("--batch-index", batch_index, "metric batch index");

    std::string metrics = "all";
    auto* proxies = app.add_subcommand("proxies", "zero-cost proxy scores of a checkpoint on the metric batch");
    add_common(proxies, common);
    proxies->add_option("--checkpoint", checkpoint, "checkpoint")->required();
    proxies->add_option("--metrics", metrics, "comma-separated proxy names or 'all'")->capture_default_str();

    std::vector<std::string> candidates;
    auto* sweep = app.add_subcommand("sweep", "(q, n) sensitivity grid from one chain per model");
    add_common(sweep, common);
    sweep->add_option("--checkpoint", checkpoint, "base checkpoint")->required();
    sweep->add_option("--candidate", candidates, "candidate checkpoints")->required();
    sweep->add_option("--layer", layer, "ordinal of the permuted layer")->capture_default_str();

    std::string input;
    std::string metric = "all";
    std::size_t at_epoch = 0;
    auto* correlate = app.add_subcommand("correlate", "rank correlation of a metric column with the best gain");
    add_common(correlate, common);
    correlate->add_option("--input", input, "experiments.csv")->required();
    correlate->add_option("--metric", metric, "column name or 'all'")->capture_default_str();
    correlate->add_option("--epoch", at_epoch, "epoch at which the metric is read")->capture_default_str();

    auto* run = app.add_subcommand("run", "full expansion protocol; manifold_metric and M are in percent");
    add_common(run, common);

    CLI11_PARSE(app, argc, argv);

    try {
        const auto cfg = resolve(common);
        const fs::path out = cfg.out_dir;
        fs::create_directories(out);

        if (*train) {
            const std::uint64_t seed = replicate_set ? replicate : cfg.seeds.front();
            const auto data = mfx::prepare_data(cfg);
            const auto model = mfx::compile(mfx::parse_architecture(cfg.architecture, cfg.data.shape, cfg.data.num_classes));
            const auto init = mfx::init_parameters<float>(model, mfx::derive_seed(cfg.experiment_seed, {seed, mfx::kTagInit}));
            const auto base = mfx::train_to_early_stop(
                model, init, data.split, {cfg.optimizer, cfg.batch_size, cfg.patience, cfg.max_epochs},
                mfx::derive_seed(cfg.experiment_seed, {seed, mfx::kTagBaseTrain}));
            mfx::save_checkpoint(out / "base.ckpt", base_checkpoint(base, cfg.optimizer));
            auto h = open_out(out / "train_history.csv");
            h << "epoch,loss_sum,batches,val_accuracy\n";
            for (const auto& r : base.history)
                h << r.epoch << ',' << mfx::format_number(r.loss_sum) << ',' << r.batches << ','
                  << mfx::format_number(r.val_accuracy) << '\n';
            json j{{"replicate", seed},
                   {"accuracy", base.accuracy},
                   {"best_epoch", base.best_epoch},
                   {"epochs_run", base.epochs_run},
                   {"parameters", model.num_parameters()},
                   {"checkpoint", (out / "base.ckpt").string()}};
            write_json(out / "train.json", j);
            std::cout << j.dump(2) << '\n';
        } else if (*expand) {
            const auto data = mfx::prepare_data(cfg);
            const auto base = load_model(checkpoint);
            const auto plan = mfx::width_plan(base.model, layer, factor,
                                              mfx::derive_seed(cfg.experiment_seed, {layer, mfx::kTagDuplicate}),
                                              cfg.noise, cfg.split);
            const auto grown = mfx::expand(base.model, base.params, plan);
            const double a0 = mfx::validate_accuracy(base.model, base.params, data.split.val);
            const double a1 = mfx::validate_accuracy(grown.model, grown.params, data.split.val);
            const auto l0 = mfx::forward(base.model, base.params, data.metric_batch.inputs);
            const auto l1 = mfx::forward(grown.model, grown.params, data.metric_batch.inputs);
            double diff = 0.0;
            for (std::size_t i = 0; i < l0.size(); ++i) diff = std::max(diff, double(std::abs(l0[i] - l1[i])));
            mfx::Checkpoint ck{grown.model.spec(), grown.params,
                               mfx::make_optimizer<float>(cfg.optimizer, grown.params.size()), {}, 0, {}};
            std::ostringstream rng;
            rng << std::mt19937_64();
            ck.rng_state = rng.str();
            mfx::save_checkpoint(out / "expanded.ckpt", ck);
            json j{{"spec", mfx::serialize_spec(grown.model.spec())},
                   {"base_accuracy", a0},
                   {"expanded_accuracy", a1},
                   {"max_abs_logit_difference", diff},
                   {"checkpoint", (out / "expanded.ckpt").string()}};
            write_json(out / "expand.json", j);
            std::cout << j.dump(2) << '\n';
            if (std::abs(a0 - a1) > cfg.preservation_tolerance) {
                std::cerr << "error: expansion changed validation accuracy\n";
                return 2;
            }
        } else if (*manifold) {
            auto c = cfg;
            if (q) c.q = *q;
            if (n) c.n = *n;
            if (batch_index) c.metric_batch_index = *batch_index;
            mfx::validate(c);
            const auto data = mfx::prepare_data(c);
            const auto base = load_model(checkpoint);
            const auto seeds = mfx::MetricSeeds::from(c.experiment_seed);
            const auto bset = mfx::barrier_samples(base.model, base.params, base.model.param_layer(layer), c.n,
                                                   seeds.base, data.metric_batch, c.threads);
            json j{{"q", c.q}, {"n", c.n}, {"layer", layer}, {"batch_index", c.metric_batch_index},
                   {"loss_evaluations", bset.loss_evaluations}};
            std::vector<mfx::EdgeRow> rows;
            auto add_rows = [&](const std::string& plan, const mfx::ManifoldEstimate& e) {
                for (std::size_t i = 0; i < e.barriers.size(); ++i) rows.push_back({plan, i, e.barriers[i], e.is_edge[i]});
            };
            if (candidate_path.empty()) {
                const auto est = mfx::score_chain(bset, mfx::quantile(bset, c.q));
                add_rows("base", est);
                j["base"] = estimate_json(est);
            } else {
                const auto cand = load_model(candidate_path);
                const auto cset = mfx::barrier_samples(cand.model, cand.params, cand.model.param_layer(layer), c.n,
                                                       seeds.candidate, data.metric_batch, c.threads);
                const auto m = mfx::manifold_metric(bset, cset, c.q);
                add_rows("base", m.base);
                add_rows("candidate", m.candidate);
                j["base"] = estimate_json(m.base);
                j["candidate"] = estimate_json(m.candidate);
                j["manifold_metric"] = m.value;
            }
            auto e = open_out(out / "edges.csv");
            mfx::write_edges_csv(e, rows);
            write_json(out / "manifold.json", j);
            std::cout << j.dump(2) << '\n';
        } else if (*proxies) {
            const auto data = mfx::prepare_data(cfg);
            const auto m = load_model(checkpoint);
            json j;
            auto f = open_out(out / "proxies.csv");
            f << "proxy,value\n";
            for (auto k : mfx::parse_proxy_list(metrics)) {
                const auto s = mfx::compute_proxy(k, m.model, m.params, data.metric_batch);
                j[std::string(mfx::to_string(k))] = s.value;
                f << mfx::to_string(k) << ',' << mfx::format_number(s.value) << '\n';
            }
            std::cout << j.dump(2) << '\n';
        } else if (*sweep) {
            const auto data = mfx::prepare_data(cfg);
            const auto base = load_model(checkpoint);
            std::size_t len = cfg.n;
            for (auto v : cfg.sweep_n) len = std::max(len, v);
            const auto seeds = mfx::MetricSeeds::from(cfg.experiment_seed);
            const auto bset = mfx::barrier_samples(base.model, base.params, base.model.param_layer(layer), len,
                                                   seeds.base, data.metric_batch, cfg.threads);
            std::vector<std::pair<std::string, mfx::BarrierSampleSet>> sets;
            for (const auto& p : candidates) {
                const auto cand = load_model(p);
                sets.emplace_back(fs::path(p).stem().string(),
                                  mfx::barrier_samples(cand.model, cand.params, cand.model.param_layer(layer), len,
                                                       seeds.candidate, data.metric_batch, cfg.threads));
            }
            const auto cells = mfx::sensitivity_sweep(bset, sets, cfg.sweep_q, cfg.sweep_n);
            auto f = open_out(out / "sweep.csv");
            mfx::write_sweep_csv(f, cells);
            mfx::write_sweep_csv(std::cout, cells);
        } else if (*correlate) {
            std::ifstream in(input);
            if (!in) throw mfx::Error("cannot open " + input);
            const auto records = mfx::read_experiments_csv(in);
            if (auto bad = mfx::check_records(records)) throw mfx::Error("experiments.csv: " + *bad);
            std::vector<std::string> names;
            if (metric == "all") {
                names.emplace_back("manifold_metric");
                for (auto k : mfx::kZeroCostProxies) names.emplace_back(mfx::to_string(k));
            } else {
                names.push_back(metric);
            }
            json j = json::array();
            auto f = open_out(out / "correlation.csv");
            f << "metric,epoch,coefficient,mean,std,seeds_used,degenerate,pooled\n";
            for (const auto& name : names) {
                const auto rep = mfx::correlate(records, name, at_epoch);
                auto stats = [&](const char* coef, const mfx::CoefficientStats& s, const std::optional<double>& pooled) {
                    f << name << ',' << at_epoch << ',' << coef << ',' << mfx::format_number(s.mean) << ','
                      << mfx::format_number(s.stddev) << ',' << s.used << ',' << s.degenerate << ','
                      << (pooled ? mfx::format_number(*pooled) : std::string()) << '\n';
                    json per = json::array();
                    for (const auto& v : s.per_seed) per.push_back(v ? json(*v) : json(nullptr));
                    return json{{"mean", s.mean}, {"std", s.stddev}, {"used", s.used}, {"degenerate", s.degenerate},
                                {"per_seed", per}, {"pooled", pooled ? json(*pooled) : json(nullptr)}};
                };
                j.push_back({{"metric", name},
                             {"epoch", at_epoch},
                             {"seeds", rep.seeds},
                             {"kendall", stats("kendall", rep.kendall, rep.pooled_kendall)},
                             {"spearman", stats("spearman", rep.spearman, rep.pooled_spearman)},
                             {"pearson", stats("pearson", rep.pearson, rep.pooled_pearson)}});
            }
            std::cout << j.dump(2) << '\n';
        } else if (*run) {
            mfx::RunOptions opt;
            opt.threads = cfg.threads;
            opt.log = log_line;
            const auto result = mfx::run_expansion_experiment(cfg, opt);
            mfx::write_experiment_outputs(result, cfg, out);
            for (const auto& fl : result.failures)
                std::cerr << "plan aborted: seed " << fl.seed << " " << fl.plan << ": " << fl.diagnostics << '\n';
            std::cout << "wrote " << result.records.size() << " rows to " << (out / "experiments.csv").string() << '\n';
            return result.failures.empty() ? 0 : 3;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

#include "mfx/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>

#include "mfx/expand.hpp"
#include "mfx/parallel.hpp"
#include "mfx/random.hpp"
#include "mfx/ranking.hpp"

namespace mfx {

namespace {

std::size_t chain_length(const ExperimentConfig& c) {
    std::size_t len = c.n;
    for (auto n : c.sweep_n) len = std::max(len, n);
    return len;
}

void note(const RunOptions& opt, const std::string& msg) {
    if (opt.log) opt.log(msg);
}

std::vector<EdgeRow> edge_rows(const std::string& plan, const ManifoldEstimate& est) {
    std::vector<EdgeRow> rows;
    for (std::size_t i = 0; i < est.barriers.size(); ++i) rows.push_back({plan, i, est.barriers[i], est.is_edge[i]});
    return rows;
}

double max_abs_logit_difference(const Model& a, const ParameterVector& pa, const Model& b, const ParameterVector& pb,
                                const Tensor& inputs) {
    const auto la = forward(a, pa, inputs), lb = forward(b, pb, inputs);
    double m = 0.0;
    for (std::size_t i = 0; i < la.size(); ++i) m = std::max(m, std::abs(double(la[i]) - double(lb[i])));
    return m;
}

struct CellOutput {
    std::vector<ExperimentRecord> records;
    std::vector<EdgeRow> edges;
    std::vector<SweepCell> sweep;
    std::optional<PlanFailure> failure;
};

CellOutput run_cell(const ExperimentConfig& cfg, const ExperimentData& data, const SeedContext& ctx,
                    const PlanInfo& plan, const RunOptions& opt) {
    CellOutput out;
    const std::uint64_t exp = cfg.experiment_seed;
    const std::uint64_t pid = plan.index + 1;
    const Model& base_model = ctx.base.model;
    const ExpansionPlan ep = width_plan(base_model, cfg.layer, plan.factor, derive_seed(exp, {ctx.seed, pid, kTagDuplicate}),
                                        cfg.noise, cfg.split);
    auto grown = expand(base_model, ctx.base.params, ep);

    // Function-preservation gate.
    const double acc0 = validate_accuracy(grown.model, grown.params, data.split.val);
    if (std::abs(acc0 - ctx.base.accuracy) > cfg.preservation_tolerance) {
        std::ostringstream d;
        d << "validation accuracy changed on expansion: " << format_number(ctx.base.accuracy) << " -> "
          << format_number(acc0) << "; max |logit difference| on the metric batch "
          << format_number(max_abs_logit_difference(base_model, ctx.base.params, grown.model, grown.params,
                                                    data.metric_batch.inputs));
        out.failure = PlanFailure{ctx.seed, plan.name, d.str()};
        note(opt, "seed " + std::to_string(ctx.seed) + " plan " + plan.name + " aborted: " + d.str());
        return out;
    }

    const LayerHandle layer = grown.model.param_layer(cfg.layer);
    const MetricSeeds ms = MetricSeeds::from(derive_seed(exp, {ctx.seed, kTagChain}));
    ChainOptions chain{chain_length(cfg), ms.candidate, 1, fingerprint(data.metric_batch)};
    const BatchObjective<float> objective(grown.model, data.metric_batch);

    ExperimentRecord r0;
    r0.seed = ctx.seed;
    r0.plan = plan.name;
    r0.epoch = 0;
    r0.acc = acc0;
    r0.gain = acc0 - ctx.base.accuracy;
    r0.best_gain = r0.gain;
    {
        const auto cand = barrier_samples(objective, grown.model, grown.params, layer, chain);
        const auto m0 = manifold_metric(ctx.base_chain.prefix(cfg.n), cand.prefix(cfg.n), cfg.q);
        r0.manifold_metric = m0.value;
        out.edges = edge_rows(plan.name, m0.candidate);
        out.sweep = sensitivity_sweep(ctx.base_chain, {{plan.name, cand}}, cfg.sweep_q, cfg.sweep_n);
    }
    for (ProxyKind k : cfg.proxies) {
        try {
            r0.proxies[k] = compute_proxy(k, grown.model, grown.params, data.metric_batch).value;
        } catch (const NumericError& e) {
            note(opt, "seed " + std::to_string(ctx.seed) + " plan " + plan.name + ": " + std::string(to_string(k)) +
                          " failed: " + e.what());
        }
    }
    out.records.push_back(r0);

    TrainState state = start_training(grown.model, grown.params, cfg.optimizer,
                                      derive_seed(exp, {ctx.seed, pid, kTagExpandedTrain}));
    double best = r0.gain;
    chain.n = cfg.n;
    for (std::size_t t = 1; t <= cfg.epochs; ++t) {
        const auto losses = train_epoch(state, data.split.train, cfg.batch_size);
        ExperimentRecord r;
        r.seed = ctx.seed;
        r.plan = plan.name;
        r.epoch = t;
        r.acc = validate_accuracy(state.model, state.params, data.split.val);
        r.gain = r.acc - ctx.base.accuracy;
        best = std::max(best, r.gain);
        r.best_gain = best;
        r.sotl_e = sotl_e(losses);
        if ((cfg.metric_stride > 0 && t % cfg.metric_stride == 0) || t == cfg.epochs) {
            const auto cand = barrier_samples(objective, state.model, state.params, layer, chain);
            r.manifold_metric = manifold_metric(ctx.base_chain.prefix(cfg.n), cand, cfg.q).value;
        }
        out.records.push_back(std::move(r));
    }
    note(opt, "seed " + std::to_string(ctx.seed) + " plan " + plan.name + ": M0 " +
                  format_number(*r0.manifold_metric) + ", best gain " + format_number(best));
    return out;
}

std::string layer_label(const Model& model, std::size_t ordinal) {
    const auto h = model.param_layer(ordinal);
    std::size_t same = 0;
    for (std::size_t k = 0; k <= ordinal; ++k)
        if (model.layer(model.param_layers()[k]).desc.kind == h.kind) ++same;
    return (h.kind == LayerKind::Conv2D ? "C" : "F") + std::to_string(same);
}

std::string csv_optional(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (char ch : line) {
        if (ch == '"') {
            quoted = !quoted;
        } else if (ch == ',' && !quoted) {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(std::move(cur));
    return out;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"") == std::string::npos) return s;
    return '"' + s + '"';
}

double parse_double(const std::string& s, std::size_t line) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw InvalidArgument("experiments.csv line " + std::to_string(line) + ": bad number '" + s + "'");
    return v;
}

std::uint64_t parse_uint(const std::string& s, std::size_t line) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || s.empty())
        throw InvalidArgument("experiments.csv line " + std::to_string(line) + ": bad integer '" + s + "'");
    return v;
}

CoefficientStats summarise(std::vector<std::optional<double>> values) {
    CoefficientStats s;
    s.per_seed = std::move(values);
    double sum = 0.0;
    for (const auto& v : s.per_seed) {
        if (!v) {
            ++s.degenerate;
            continue;
        }
        sum += *v;
        ++s.used;
    }
    if (s.used == 0) return s;
    s.mean = sum / static_cast<double>(s.used);
    if (s.used > 1) {
        double ss = 0.0;
        for (const auto& v : s.per_seed)
            if (v) ss += (*v - s.mean) * (*v - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(s.used - 1));
    }
    return s;
}

std::vector<std::string> figure_metrics(const ExperimentConfig& cfg) {
    std::vector<std::string> m{"manifold_metric"};
    for (ProxyKind k : cfg.proxies) m.emplace_back(to_string(k));
    return m;
}

}  // namespace

std::string format_number(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::vector<PlanInfo> expansion_plans(const ExperimentConfig& config, const Model& base) {
    const auto h = base.param_layer(config.layer);
    const std::string label = layer_label(base, config.layer);
    std::vector<PlanInfo> plans;
    std::set<std::size_t> widths;
    for (std::size_t i = 0; i < config.factors.size(); ++i) {
        const auto w = static_cast<std::size_t>(std::llround(static_cast<double>(h.width) * config.factors[i]));
        if (!widths.insert(w).second)
            throw InvalidArgument("expansion factors " + format_number(config.factors[i]) +
                                  " and another factor give the same width " + std::to_string(w));
        plans.push_back({i, label + "(" + std::to_string(w) + ")", config.factors[i], w});
    }
    return plans;
}

std::vector<std::size_t> metric_batch_indices(const ExperimentConfig& config) {
    std::mt19937_64 rng(derive_seed(config.experiment_seed, {kTagMetricBatch}));
    const auto order = shuffled_indices(config.data.train_size, rng);
    const std::size_t begin = config.metric_batch_index * config.metric_batch_size;
    if (begin + config.metric_batch_size > order.size()) throw InvalidArgument("metric batch lies outside the training set");
    return {order.begin() + static_cast<std::ptrdiff_t>(begin),
            order.begin() + static_cast<std::ptrdiff_t>(begin + config.metric_batch_size)};
}

ExperimentData prepare_data(const ExperimentConfig& config) {
    ExperimentData d;
    d.split = load_dataset(config.data, derive_seed(config.experiment_seed, {kTagSplit}));
    d.metric_batch = gather(d.split.train, metric_batch_indices(config));
    return d;
}

SeedContext train_base(const ExperimentConfig& config, const ExperimentData& data, std::uint64_t seed) {
    const std::uint64_t exp = config.experiment_seed;
    const Model model = compile(parse_architecture(config.architecture, config.data.shape, config.data.num_classes));
    const auto init = init_parameters<float>(model, derive_seed(exp, {seed, kTagInit}));
    TrainSettings settings{config.optimizer, config.batch_size, config.patience, config.max_epochs};
    SeedContext ctx;
    ctx.seed = seed;
    ctx.base = train_to_early_stop(model, init, data.split, settings, derive_seed(exp, {seed, kTagBaseTrain}));
    const MetricSeeds ms = MetricSeeds::from(derive_seed(exp, {seed, kTagChain}));
    ChainOptions chain{chain_length(config), ms.base, 1, fingerprint(data.metric_batch)};
    ctx.base_chain = barrier_samples(BatchObjective<float>(model, data.metric_batch), model, ctx.base.params,
                                     model.param_layer(config.layer), chain);
    return ctx;
}

ExperimentResult run_expansion_experiment(const ExperimentConfig& config, const RunOptions& options) {
    validate(config);
    const ExperimentData data = prepare_data(config);
    const Model base_model =
        compile(parse_architecture(config.architecture, config.data.shape, config.data.num_classes));
    ExperimentResult result;
    result.plans = expansion_plans(config, base_model);

    const std::size_t S = config.seeds.size(), P = result.plans.size();
    std::vector<SeedContext> contexts(S);
    parallel_for(S, options.threads, [&](std::size_t s) {
        contexts[s] = train_base(config, data, config.seeds[s]);
        note(options, "seed " + std::to_string(config.seeds[s]) + ": base accuracy " +
                          format_number(contexts[s].base.accuracy) + " after " +
                          std::to_string(contexts[s].base.epochs_run) + " epochs (best epoch " +
                          std::to_string(contexts[s].base.best_epoch) + ")");
    });

    std::vector<CellOutput> cells(S * P);
    parallel_for(S * P, options.threads, [&](std::size_t i) {
        cells[i] = run_cell(config, data, contexts[i / P], result.plans[i % P], options);
    });

    for (std::size_t s = 0; s < S; ++s) {
        const auto& ctx = contexts[s];
        SeedOutcome so;
        so.seed = ctx.seed;
        so.base_accuracy = ctx.base.accuracy;
        so.base_epochs = ctx.base.epochs_run;
        so.base_best_epoch = ctx.base.best_epoch;
        const auto base_est = score_chain(ctx.base_chain.prefix(config.n), quantile(ctx.base_chain.prefix(config.n), config.q));
        so.lambda = base_est.lambda;
        so.base_ratio = base_est.ratio;
        so.edges = edge_rows("base", base_est);
        for (std::size_t p = 0; p < P; ++p) {
            auto& cell = cells[s * P + p];
            if (cell.failure) result.failures.push_back(*cell.failure);
            so.edges.insert(so.edges.end(), cell.edges.begin(), cell.edges.end());
            so.sweep.insert(so.sweep.end(), cell.sweep.begin(), cell.sweep.end());
            for (auto& r : cell.records) result.records.push_back(std::move(r));
        }
        result.seeds.push_back(std::move(so));
    }
    return result;
}

std::vector<std::string> experiment_columns() {
    std::vector<std::string> cols{"seed", "plan", "epoch", "acc", "gain", "best_gain", "manifold_metric"};
    for (ProxyKind k : kZeroCostProxies) cols.emplace_back(to_string(k));
    cols.emplace_back("sotl_e");
    return cols;
}

void write_experiments_csv(std::ostream& out, const std::vector<ExperimentRecord>& records) {
    const auto cols = experiment_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << '\n';
    for (const auto& r : records) {
        out << r.seed << ',' << csv_field(r.plan) << ',' << r.epoch << ',' << format_number(r.acc) << ','
            << format_number(r.gain) << ',' << format_number(r.best_gain) << ',' << csv_optional(r.manifold_metric);
        for (ProxyKind k : kZeroCostProxies) {
            auto it = r.proxies.find(k);
            out << ',' << (it == r.proxies.end() ? std::string() : format_number(it->second));
        }
        out << ',' << csv_optional(r.sotl_e) << '\n';
    }
}

std::vector<ExperimentRecord> read_experiments_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw InvalidArgument("experiments.csv: missing header");
    const auto header = split_csv_line(line);
    if (header != experiment_columns()) throw InvalidArgument("experiments.csv: unexpected header '" + line + "'");
    std::vector<ExperimentRecord> out;
    for (std::size_t ln = 2; std::getline(in, line); ++ln) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != header.size())
            throw InvalidArgument("experiments.csv line " + std::to_string(ln) + ": expected " +
                                  std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
        ExperimentRecord r;
        r.seed = parse_uint(f[0], ln);
        r.plan = f[1];
        r.epoch = parse_uint(f[2], ln);
        r.acc = parse_double(f[3], ln);
        r.gain = parse_double(f[4], ln);
        r.best_gain = parse_double(f[5], ln);
        if (!f[6].empty()) r.manifold_metric = parse_double(f[6], ln);
        std::size_t c = 7;
        for (ProxyKind k : kZeroCostProxies) {
            if (!f[c].empty()) r.proxies[k] = parse_double(f[c], ln);
            ++c;
        }
        if (!f[c].empty()) r.sotl_e = parse_double(f[c], ln);
        out.push_back(std::move(r));
    }
    return out;
}

void write_edges_csv(std::ostream& out, const std::vector<EdgeRow>& rows) {
    out << "plan,i,barrier,is_edge\n";
    for (const auto& r : rows)
        out << csv_field(r.plan) << ',' << r.i << ',' << format_number(r.barrier) << ',' << (r.is_edge ? 1 : 0) << '\n';
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepCell>& cells) {
    out << "q,n,plan,M\n";
    for (const auto& c : cells)
        out << format_number(c.q) << ',' << c.n << ',' << csv_field(c.plan) << ',' << format_number(c.metric) << '\n';
}

std::optional<std::string> check_records(const std::vector<ExperimentRecord>& records) {
    std::size_t i = 0;
    while (i < records.size()) {
        const auto& first = records[i];
        double best = -INFINITY;
        std::size_t expect = 0;
        for (; i < records.size() && records[i].seed == first.seed && records[i].plan == first.plan; ++i, ++expect) {
            const auto& r = records[i];
            const std::string where = "seed " + std::to_string(r.seed) + " plan " + r.plan + " epoch " +
                                      std::to_string(r.epoch);
            if (r.epoch != expect) return where + ": expected epoch " + std::to_string(expect);
            if (r.epoch == 0 && r.gain != 0.0) return where + ": G_0 = " + format_number(r.gain) + " is not 0";
            best = std::max(best, r.gain);
            if (r.best_gain != best) return where + ": best_gain " + format_number(r.best_gain) + " != running max " +
                                            format_number(best);
        }
    }
    return std::nullopt;
}

std::optional<double> metric_value(const ExperimentRecord& record, const std::string& metric) {
    if (metric == "manifold_metric") return record.manifold_metric;
    if (metric == "gain") return record.gain;
    if (metric == "best_gain") return record.best_gain;
    const ProxyKind k = parse_proxy_kind(metric);
    if (k == ProxyKind::SotlE) {
        if (!record.sotl_e) return std::nullopt;
        return oriented(k, *record.sotl_e);
    }
    auto it = record.proxies.find(k);
    if (it == record.proxies.end()) return std::nullopt;
    return oriented(k, it->second);
}

CorrelationReport correlate(const std::vector<ExperimentRecord>& records, const std::string& metric,
                            std::size_t epoch) {
    CorrelationReport rep;
    rep.metric = metric;
    rep.epoch = epoch;
    // seed -> plan -> (metric at epoch, G*_T)
    std::map<std::uint64_t, std::map<std::string, std::pair<std::optional<double>, double>>> table;
    std::map<std::uint64_t, std::map<std::string, std::size_t>> last_epoch;
    for (const auto& r : records) {
        auto& cell = table[r.seed][r.plan];
        auto& last = last_epoch[r.seed][r.plan];
        if (r.epoch == epoch) cell.first = metric_value(r, metric);
        if (r.epoch >= last) {
            last = r.epoch;
            cell.second = r.best_gain;
        }
    }
    std::vector<std::optional<double>> kt, sp, pe;
    PairedSeries pooled;
    for (const auto& [seed, plans] : table) {
        PairedSeries s;
        for (const auto& [plan, v] : plans) {
            if (!v.first) continue;
            s.x.push_back(*v.first);
            s.y.push_back(v.second);
            s.ids.push_back(plan);
        }
        rep.seeds.push_back(seed);
        kt.push_back(kendall_tau(s));
        sp.push_back(spearman(s));
        pe.push_back(pearson(s));
        pooled.x.insert(pooled.x.end(), s.x.begin(), s.x.end());
        pooled.y.insert(pooled.y.end(), s.y.begin(), s.y.end());
    }
    rep.kendall = summarise(std::move(kt));
    rep.spearman = summarise(std::move(sp));
    rep.pearson = summarise(std::move(pe));
    rep.pooled_kendall = kendall_tau(pooled);
    rep.pooled_spearman = spearman(pooled);
    rep.pooled_pearson = pearson(pooled);
    return rep;
}

void write_experiment_outputs(const ExperimentResult& result, const ExperimentConfig& config,
                              const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto open = [](const std::filesystem::path& p) {
        std::ofstream f(p);
        if (!f) throw Error("cannot write " + p.string());
        return f;
    };
    {
        auto f = open(dir / "experiments.csv");
        write_experiments_csv(f, result.records);
    }
    for (const auto& so : result.seeds) {
        const auto sub = dir / ("seed_" + std::to_string(so.seed));
        std::filesystem::create_directories(sub);
        auto e = open(sub / "edges.csv");
        write_edges_csv(e, so.edges);
        auto s = open(sub / "sweep.csv");
        write_sweep_csv(s, so.sweep);
    }

    // Correlation with G*_T of the t = 0 metric and every proxy.
    {
        auto f = open(dir / "fig_correlation.csv");
        f << "metric,aggregation,kendall,kendall_std,spearman,spearman_std,pearson,pearson_std,seeds_used,"
             "degenerate\n";
        for (const auto& m : figure_metrics(config)) {
            const auto rep = correlate(result.records, m, 0);
            f << m << ",per_seed_mean," << format_number(rep.kendall.mean) << ',' << format_number(rep.kendall.stddev)
              << ',' << format_number(rep.spearman.mean) << ',' << format_number(rep.spearman.stddev) << ','
              << format_number(rep.pearson.mean) << ',' << format_number(rep.pearson.stddev) << ','
              << rep.kendall.used << ',' << rep.kendall.degenerate << '\n';
            f << m << ",pooled," << csv_optional(rep.pooled_kendall) << ",," << csv_optional(rep.pooled_spearman)
              << ",," << csv_optional(rep.pooled_pearson) << ",," << rep.seeds.size() << ','
              << (rep.pooled_kendall ? 0 : 1) << '\n';
        }
    }
    // Correlation of M_t and SoTL-E with G*_T over training.
    {
        std::set<std::size_t> epochs;
        for (const auto& r : result.records)
            if (r.manifold_metric || r.sotl_e) epochs.insert(r.epoch);
        auto f = open(dir / "fig_trajectory.csv");
        f << "epoch,metric,kendall,kendall_std,seeds_used,degenerate\n";
        for (std::size_t t : epochs)
            for (const std::string m : {"manifold_metric", "sotl_e"}) {
                const auto rep = correlate(result.records, m, t);
                if (rep.kendall.used == 0) continue;
                f << t << ',' << m << ',' << format_number(rep.kendall.mean) << ','
                  << format_number(rep.kendall.stddev) << ',' << rep.kendall.used << ',' << rep.kendall.degenerate
                  << '\n';
            }
    }
    // Sensitivity of the t = 0 correlation to (q, n).
    {
        std::map<std::string, std::map<std::uint64_t, double>> best_final;  // plan -> seed -> G*_T
        for (const auto& r : result.records) best_final[r.plan][r.seed] = r.best_gain;
        auto f = open(dir / "fig_sensitivity.csv");
        f << "q,n,kendall,kendall_std,seeds_used,degenerate\n";
        for (std::size_t n : config.sweep_n)
            for (double q : config.sweep_q) {
                std::vector<std::optional<double>> taus;
                for (const auto& so : result.seeds) {
                    std::vector<double> x, y;
                    for (const auto& c : so.sweep)
                        if (c.n == n && c.q == q) {
                            x.push_back(c.metric);
                            y.push_back(best_final[c.plan][so.seed]);
                        }
                    taus.push_back(kendall_tau(x, y));
                }
                const auto st = summarise(std::move(taus));
                f << format_number(q) << ',' << n << ',' << format_number(st.mean) << ',' << format_number(st.stddev)
                  << ',' << st.used << ',' << st.degenerate << '\n';
            }
    }
    if (!result.failures.empty()) {
        auto f = open(dir / "failures.csv");
        f << "seed,plan,diagnostics\n";
        for (const auto& fl : result.failures) f << fl.seed << ',' << csv_field(fl.plan) << ",\"" << fl.diagnostics << "\"\n";
    }
}

}  // namespace mfx

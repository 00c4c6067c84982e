// stap: train/bench/ablate/gridsearch/inspect/gradcheck entry point.
// Exit codes: 0 ok, 1 failed acceptance-tagged check or runtime error,
// 2 configuration error (unknown key, bad value, missing file).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stap/bench.hpp"
#include "stap/config.hpp"
#include "stap/experiments.hpp"
#include "stap/gradcheck.hpp"
#include "stap/io.hpp"
#include "stap/kernels.hpp"
#include "stap/metrics.hpp"
#include "stap/model.hpp"
#include "stap/synthdata.hpp"

namespace fs = std::filesystem;
using namespace stap;

namespace {

struct CliArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::string variant = "full";
    std::string sizes;
    std::uint64_t seed = 0;
    bool seed_given = false;
};

void add_common(CLI::App* cmd, CliArgs& args) {
    cmd->add_option("--config", args.config_path, "flat key=value config file");
    cmd->add_option("--out", args.out_dir, "output directory")->capture_default_str();
    cmd->add_option("--seed", args.seed, "root seed (overrides config)")
        ->each([&args](const std::string&) { args.seed_given = true; });
}

RunConfig effective_config(const CliArgs& args) {
    RunConfig cfg = args.config_path.empty() ? default_config() : load_config(args.config_path);
    if (args.seed_given) cfg.seed = args.seed;
    cfg.finalize();
    return cfg;
}

std::string out_path(const CliArgs& args, const std::string& name) {
    return (fs::path(args.out_dir) / name).string();
}

void finish_manifest(const CliArgs& args, const RunConfig& cfg,
                     const std::string& command, std::vector<std::string> artifacts,
                     std::vector<std::string> volatiles = {}) {
    auto echo = config_echo(cfg);
    echo["command"] = command;
    write_manifest(args.out_dir, echo, cfg.seed, artifacts, volatiles);
}

struct CheckLine {
    std::string name;
    bool pass = false;
};

bool report_checks(const std::vector<CheckLine>& checks) {
    bool all = true;
    for (const CheckLine& c : checks) {
        std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << c.name << "\n";
        all = all && c.pass;
    }
    return all;
}

void write_epoch_log(const std::string& path, const std::vector<EpochStats>& history,
                     std::uint64_t seed) {
    CsvWriter log(path,
                  "epoch,loss_total,loss_reg,loss_pref,loss_balance,val_mae,val_src,"
                  "slot_entropy,slot_gini,slot_top_share",
                  seed);
    for (const EpochStats& e : history)
        log.row({std::to_string(e.epoch), fmt_double(e.mean_loss.total),
                 fmt_double(e.mean_loss.reg), fmt_double(e.mean_loss.pref),
                 fmt_double(e.mean_loss.balance), fmt_double(e.val_mae),
                 fmt_double(e.val_src), fmt_double(e.slots.entropy),
                 fmt_double(e.slots.gini), fmt_double(e.slots.top_share)});
    log.close();
}

void write_metrics_csv(const std::string& path, std::uint64_t seed,
                       const std::string& variant, StapModel& model,
                       const SynthCorpus& corpus, const TrainOutcome& outcome) {
    CsvWriter out(path, "variant,split,n,mae,nmse,src,pair_accuracy", seed);
    const auto row = [&](const char* split, const MetricReport& rep, double pair_acc) {
        out.row({variant, split, std::to_string(rep.n), fmt_double(rep.mae),
                 rep.degenerate_labels ? "degenerate" : fmt_double(rep.nmse),
                 fmt_double(rep.src), fmt_double(pair_acc)});
    };
    std::vector<double> val_labels, val_preds;
    for (std::size_t i : corpus.val_idx) val_labels.push_back(corpus.samples[i].label);
    val_preds = predict_split(model, corpus, corpus.val_idx);
    const double val_pa = margin_pair_accuracy(
        val_preds, val_labels, pairing_margin(val_labels, model.cfg.margin_scale));
    row("val", outcome.val, val_pa);
    row("test", outcome.test, outcome.pair_accuracy);
    out.close();
}

/// Mean learned frame score at planted highlights vs background, test split.
std::pair<double, double> highlight_score_means(StapModel& model,
                                                const SynthCorpus& corpus) {
    double hot_sum = 0.0, bg_sum = 0.0;
    std::size_t hot_n = 0, bg_n = 0;
    for (std::size_t i : corpus.test_idx) {
        const SynthSample& s = corpus.samples[i];
        TemporalCache cache;
        model.temporal.forward(s.frames, cache);
        for (std::size_t t = 0; t < cache.score.w.numel(); ++t) {
            const bool hot = std::find(s.highlights.begin(), s.highlights.end(), t) !=
                             s.highlights.end();
            if (hot) {
                hot_sum += cache.score.w[t];
                ++hot_n;
            } else {
                bg_sum += cache.score.w[t];
                ++bg_n;
            }
        }
    }
    return {hot_n ? hot_sum / static_cast<double>(hot_n) : 0.0,
            bg_n ? bg_sum / static_cast<double>(bg_n) : 0.0};
}

int cmd_train(const CliArgs& args) {
    const RunConfig cfg = effective_config(args);
    fs::create_directories(args.out_dir);
    const SynthCorpus corpus = generate_corpus(cfg.synth);
    TrainOutcome outcome = train_model(corpus, cfg.model, cfg.train, cfg.seed);

    write_epoch_log(out_path(args, "training_log.csv"), outcome.history, cfg.seed);
    write_metrics_csv(out_path(args, "metrics.csv"), cfg.seed, "full", outcome.model,
                      corpus, outcome);
    save_checkpoint(out_path(args, "checkpoint.bin"), outcome.model);
    export_diagnostics(outcome.model, corpus, args.out_dir);
    finish_manifest(args, cfg, "train",
                    {"training_log.csv", "metrics.csv", "checkpoint.bin",
                     "frame_scores.csv", "slot_heatmap.csv"});
    std::cout << "train: test MAE " << outcome.test.mae << ", nMSE " << outcome.test.nmse
              << ", SRC " << outcome.test.src << ", pair accuracy "
              << outcome.pair_accuracy << "\n";
    return 0;
}

int cmd_bench(const CliArgs& args) {
    RunConfig cfg = effective_config(args);
    if (!args.sizes.empty()) {
        std::vector<std::size_t> sizes;
        std::stringstream ss(args.sizes);
        std::string cell;
        while (std::getline(ss, cell, ','))
            if (!cell.empty()) sizes.push_back(std::stoul(cell));
        if (sizes.size() < 4) throw ConfigError("--sizes needs >=4 increasing values");
        cfg.bench_sizes_seq = sizes;
    }
    fs::create_directories(args.out_dir);

    const std::vector<BenchKernel> seq_kernels = {
        BenchKernel::dense_attention, BenchKernel::sparse_attention, BenchKernel::ssm_scan};
    std::vector<ScalingReport> reports;
    for (BenchKernel k : seq_kernels)
        reports.push_back(bench_scaling(k, cfg.bench_sizes_seq, cfg.bench_trials, cfg.seed));
    reports.push_back(bench_scaling(BenchKernel::route, cfg.bench_sizes_corpus,
                                    cfg.bench_trials, cfg.seed));
    reports.push_back(bench_scaling(BenchKernel::flat_retrieval, cfg.bench_sizes_corpus,
                                    cfg.bench_trials, cfg.seed));

    {
        CsvWriter workload(out_path(args, "bench_workload.csv"), "kernel,size,checksum",
                           cfg.seed);
        for (const ScalingReport& r : reports)
            for (std::size_t i = 0; i < r.sizes.size(); ++i) {
                char hex[24];
                std::snprintf(hex, sizeof hex, "%016llx",
                              static_cast<unsigned long long>(r.checksums[i]));
                workload.row({bench_kernel_name(r.kernel), std::to_string(r.sizes[i]), hex});
            }
        workload.close();
    }
    {
        CsvWriter timing(out_path(args, "bench_timing.csv"), "kernel,size,median_ms",
                         cfg.seed);
        for (const ScalingReport& r : reports)
            for (std::size_t i = 0; i < r.sizes.size(); ++i)
                timing.row({bench_kernel_name(r.kernel), std::to_string(r.sizes[i]),
                            fmt_double(r.median_ms[i])});
        timing.close();
        CsvWriter summary(out_path(args, "bench_summary.csv"),
                          "kernel,slope,slope_halfwidth,max_min_ratio,unstable,trials",
                          cfg.seed);
        for (const ScalingReport& r : reports)
            summary.row({bench_kernel_name(r.kernel), fmt_double(r.slope),
                         fmt_double(r.slope_halfwidth), fmt_double(r.max_min_ratio()),
                         r.unstable ? "1" : "0", std::to_string(r.trials)});
        summary.close();
    }
    finish_manifest(args, cfg, "bench", {"bench_workload.csv"},
                    {"bench_timing.csv", "bench_summary.csv"});

    const auto slope_of = [&](BenchKernel k) {
        for (const ScalingReport& r : reports)
            if (r.kernel == k) return r.slope;
        return 0.0;
    };
    double route_ratio = 0.0;
    for (const ScalingReport& r : reports)
        if (r.kernel == BenchKernel::route) route_ratio = r.max_min_ratio();
    const double dense = slope_of(BenchKernel::dense_attention);
    const double sparse = slope_of(BenchKernel::sparse_attention);
    const double ssm = slope_of(BenchKernel::ssm_scan);
    const bool ok = report_checks({
        {"dense_attention log-log slope " + fmt_double(dense) + " in [1.7, 2.3]",
         dense >= 1.7 && dense <= 2.3},
        {"sparse_attention log-log slope " + fmt_double(sparse) + " in [0.75, 1.25]",
         sparse >= 0.75 && sparse <= 1.25},
        {"ssm_scan log-log slope " + fmt_double(ssm) + " in [0.75, 1.25]",
         ssm >= 0.75 && ssm <= 1.25},
        {"route wall-time max/min ratio " + fmt_double(route_ratio) + " < 1.2",
         route_ratio > 0.0 && route_ratio < 1.2},
    });
    return ok ? 0 : 1;
}

int cmd_ablate(const CliArgs& args) {
    const RunConfig cfg = effective_config(args);
    fs::create_directories(args.out_dir);
    const SynthCorpus corpus = generate_corpus(cfg.synth);

    if (args.variant == "robustness") {
        const std::vector<RobustnessRow> rows = robustness_sweep(
            cfg.harness_proportions, corpus, cfg.model, cfg.train, cfg.seed);
        CsvWriter out(out_path(args, "robustness.csv"),
                      "proportion,mae,nmse,src,delta_src", cfg.seed);
        for (const RobustnessRow& r : rows)
            out.row({fmt_double(r.proportion), fmt_double(r.test.mae),
                     fmt_double(r.test.nmse), fmt_double(r.test.src),
                     fmt_double(r.delta_src)});
        out.close();
        finish_manifest(args, cfg, "ablate", {"robustness.csv"});
        std::cout << "robustness sweep over " << rows.size() << " proportions done\n";
        return 0;
    }

    Variant v;
    try {
        v = variant_from_name(args.variant);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    AblationResult res = run_ablation(v, corpus, cfg.model, cfg.train, cfg.seed);

    write_epoch_log(out_path(args, "ablation_log.csv"), res.outcome.history, cfg.seed);
    write_metrics_csv(out_path(args, "ablation_metrics.csv"), cfg.seed,
                      variant_name(v), res.outcome.model, corpus, res.outcome);
    std::vector<std::string> artifacts = {"ablation_log.csv", "ablation_metrics.csv"};
    std::cout << variant_name(v) << ": test MAE " << res.outcome.test.mae << ", SRC "
              << res.outcome.test.src << ", pair accuracy " << res.outcome.pair_accuracy
              << "\n";

    bool ok = true;
    if (v == Variant::full) {
        export_diagnostics(res.outcome.model, corpus, args.out_dir);
        artifacts.push_back("frame_scores.csv");
        artifacts.push_back("slot_heatmap.csv");
        const auto [hot, bg] = highlight_score_means(res.outcome.model, corpus);
        ok = report_checks({{"mean frame score at planted highlights " + fmt_double(hot) +
                                 " > background " + fmt_double(bg),
                             hot > bg}});
    }
    finish_manifest(args, cfg, "ablate", artifacts);
    return ok ? 0 : 1;
}

int cmd_gridsearch(const CliArgs& args) {
    const RunConfig cfg = effective_config(args);
    fs::create_directories(args.out_dir);
    const SynthCorpus corpus = generate_corpus(cfg.synth);
    const std::vector<GridRow> rows =
        grid_search(cfg.grid_p, cfg.grid_c, corpus, cfg.model, cfg.train, cfg.seed);
    CsvWriter out(out_path(args, "grid.csv"), "P,C,slots,status,MAE,nMSE,SRC", cfg.seed);
    for (const GridRow& r : rows) {
        if (r.skipped)
            out.row({std::to_string(r.p), std::to_string(r.c), std::to_string(r.slots),
                     "skipped", "", "", ""});
        else
            out.row({std::to_string(r.p), std::to_string(r.c), std::to_string(r.slots),
                     "ok", fmt_double(r.test.mae), fmt_double(r.test.nmse),
                     fmt_double(r.test.src)});
    }
    out.close();
    finish_manifest(args, cfg, "gridsearch", {"grid.csv"});
    std::cout << "grid search wrote " << rows.size() << " rows\n";
    return 0;
}

int cmd_inspect(const CliArgs& args) {
    const RunConfig cfg = effective_config(args);
    const std::string ckpt = out_path(args, "checkpoint.bin");
    if (!fs::exists(ckpt))
        throw ConfigError("inspect: no checkpoint at " + ckpt + " (run train first)");
    Rng rng(derive_seed(cfg.seed, 0));
    StapModel model = StapModel::init(cfg.model, rng);
    load_checkpoint(ckpt, model);

    CsvWriter out(out_path(args, "inspect_params.csv"), "name,shape,numel,l2_norm",
                  cfg.seed);
    for (const Param* p : model.all_params()) {
        double sq = 0.0;
        for (double x : p->value.v) sq += x * x;
        out.row({p->name, p->value.shape_str(), std::to_string(p->numel()),
                 fmt_double(std::sqrt(sq))});
        std::cout << p->name << " " << p->value.shape_str() << " numel " << p->numel()
                  << "\n";
    }
    out.close();
    std::cout << "bank: " << model.bank.p_count << "x" << model.bank.c_count
              << " slots, tau " << model.bank.tau << "\n";
    finish_manifest(args, cfg, "inspect", {"inspect_params.csv", "checkpoint.bin"});
    return 0;
}

int cmd_gradcheck(const CliArgs& args) {
    const RunConfig cfg = effective_config(args);
    fs::create_directories(args.out_dir);
    const std::vector<GradCheckReport> reports = run_kernel_suite(4, 1e-4, cfg.seed);
    CsvWriter out(out_path(args, "gradcheck.csv"), "kernel,max_rel_error,probes,pass",
                  cfg.seed);
    bool all = true;
    for (const GradCheckReport& r : reports) {
        out.row({r.kernel, fmt_double(r.max_rel_error), std::to_string(r.probes),
                 r.pass ? "1" : "0"});
        std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.kernel << " max rel error "
                  << r.max_rel_error << " over " << r.probes << " probes\n";
        all = all && r.pass;
    }
    out.close();
    finish_manifest(args, cfg, "gradcheck", {"gradcheck.csv"});
    return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stap: micro-video popularity prediction workbench"};
    app.require_subcommand(1);
    app.footer("Environment: STAP_THREADS caps internal parallelism (default: min(cores, 8)).");

    CliArgs args;
    CLI::App* train = app.add_subcommand("train", "train the full model, write logs + checkpoint");
    CLI::App* bench = app.add_subcommand("bench", "kernel scaling benchmarks");
    CLI::App* ablate = app.add_subcommand("ablate", "train one ablation variant (or 'robustness')");
    CLI::App* grid = app.add_subcommand("gridsearch", "P x C bank geometry sweep");
    CLI::App* inspect = app.add_subcommand("inspect", "summarize a saved checkpoint");
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference kernel gradient suite");
    for (CLI::App* cmd : {train, bench, ablate, grid, inspect, gradcheck}) add_common(cmd, args);
    ablate->add_option("--variant", args.variant,
                       "full|no_balance|no_dppo|top1|no_frame_scoring|no_ssm|"
                       "no_sparse_attn|no_memory|robustness")
        ->capture_default_str();
    bench->add_option("--sizes", args.sizes, "comma list of sequence lengths");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (train->parsed()) return cmd_train(args);
        if (bench->parsed()) return cmd_bench(args);
        if (ablate->parsed()) return cmd_ablate(args);
        if (grid->parsed()) return cmd_gridsearch(args);
        if (inspect->parsed()) return cmd_inspect(args);
        if (gradcheck->parsed()) return cmd_gradcheck(args);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

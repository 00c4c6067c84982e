#include "stap/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "stap/io.hpp"

namespace stap {

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::no_balance: return "no_balance";
        case Variant::no_dppo: return "no_dppo";
        case Variant::top1: return "top1";
        case Variant::no_frame_scoring: return "no_frame_scoring";
        case Variant::no_ssm: return "no_ssm";
        case Variant::no_sparse_attn: return "no_sparse_attn";
        case Variant::no_memory: return "no_memory";
    }
    return "?";
}

Variant variant_from_name(const std::string& name) {
    for (Variant v : {Variant::full, Variant::no_balance, Variant::no_dppo, Variant::top1,
                      Variant::no_frame_scoring, Variant::no_ssm, Variant::no_sparse_attn,
                      Variant::no_memory})
        if (name == variant_name(v)) return v;
    throw std::invalid_argument("unknown ablation variant: " + name);
}

void apply_variant(ModelConfig& cfg, Variant v) {
    switch (v) {
        case Variant::full: break;
        case Variant::no_balance: cfg.use_balance = false; break;
        case Variant::no_dppo: cfg.use_dppo = false; break;
        case Variant::top1: cfg.k_top = 1; break;
        case Variant::no_frame_scoring: cfg.temporal.use_scoring = false; break;
        case Variant::no_ssm: cfg.temporal.use_ssm = false; break;
        case Variant::no_sparse_attn: cfg.temporal.use_attn = false; break;
        case Variant::no_memory:
            cfg.use_memory = false;
            cfg.use_balance = false;
            cfg.use_dppo = false;
            break;
    }
}

std::vector<double> predict_split(StapModel& model, const SynthCorpus& corpus,
                                  const std::vector<std::size_t>& idx) {
    std::vector<double> preds;
    preds.reserve(idx.size());
    for (std::size_t i : idx) {
        const SynthSample& s = corpus.samples.at(i);
        ItemCache cache;
        preds.push_back(model.predict_item(s.frames, s.text, s.meta, cache));
    }
    return preds;
}

double margin_pair_accuracy(const std::vector<double>& preds,
                            const std::vector<double>& labels, double margin) {
    if (preds.size() != labels.size())
        throw std::invalid_argument("margin_pair_accuracy: aligned vectors required");
    double correct = 0.0;
    std::size_t total = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        for (std::size_t j = i + 1; j < labels.size(); ++j) {
            const double gap = labels[i] - labels[j];
            if (std::fabs(gap) <= margin) continue;
            ++total;
            const double pgap = preds[i] - preds[j];
            if (pgap == 0.0) correct += 0.5;
            else if ((pgap > 0.0) == (gap > 0.0)) correct += 1.0;
        }
    return total == 0 ? 0.0 : correct / static_cast<double>(total);
}

namespace {

std::vector<double> labels_of(const SynthCorpus& corpus,
                              const std::vector<std::size_t>& idx) {
    std::vector<double> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(corpus.samples.at(i).label);
    return out;
}

/// Routing distribution over a fixed item set with frozen parameters.
SlotStats probe_slots(StapModel& model, const SynthCorpus& corpus,
                      const std::vector<std::size_t>& idx) {
    if (!model.cfg.use_memory) return {};
    std::vector<Tensor> history;
    history.reserve(idx.size());
    for (std::size_t i : idx) {
        const SynthSample& s = corpus.samples.at(i);
        ItemCache cache;
        model.predict_item(s.frames, s.text, s.meta, cache);
        history.push_back(cache.route.res.pi_soft);
    }
    return slot_statistics(history);
}

}  // namespace

TrainOutcome train_model(const SynthCorpus& corpus, const ModelConfig& mcfg,
                         const TrainSettings& ts, std::uint64_t seed) {
    if (ts.batch_size < 2)
        throw std::invalid_argument("train_model: batch_size must be >= 2");
    mcfg.validate();

    TrainOutcome out;
    Rng init_rng(derive_seed(seed, 0));
    out.model = StapModel::init(mcfg, init_rng);
    StapModel& model = out.model;

    const std::vector<double> train_labels = labels_of(corpus, corpus.train_idx);
    const double label_mean =
        std::accumulate(train_labels.begin(), train_labels.end(), 0.0) /
        static_cast<double>(train_labels.size());
    model.predictor.head_b2.value[0] = label_mean;

    if (mcfg.use_memory) {
        const SampleBatch all_train = make_batch(corpus, corpus.train_idx);
        init_model_bank(model, all_train, derive_seed(seed, 1));
    }

    const std::vector<double> val_labels = labels_of(corpus, corpus.val_idx);
    std::vector<std::size_t> order = corpus.train_idx;
    for (std::size_t epoch = 0; epoch < ts.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(seed, 100 + epoch));
        shuffle_rng.shuffle(order.begin(), order.end());

        EpochStats stats;
        stats.epoch = epoch;
        std::vector<Tensor> pi_history;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < order.size(); start += ts.batch_size) {
            const std::size_t stop = std::min(start + ts.batch_size, order.size());
            if (stop - start < 2) break;  // pairwise terms need >=2 items
            const std::vector<std::size_t> batch_idx(order.begin() + start,
                                                     order.begin() + stop);
            const SampleBatch batch = make_batch(corpus, batch_idx);
            BatchCache cache;
            const LossBreakdown loss = model.train_step(batch, &cache);
            stats.mean_loss.total += loss.total;
            stats.mean_loss.reg += loss.reg;
            stats.mean_loss.pref += loss.pref;
            stats.mean_loss.balance += loss.balance;
            ++steps;
            if (mcfg.use_memory)
                for (const ItemCache& it : cache.items)
                    pi_history.push_back(it.route.res.pi_soft);
        }
        if (steps > 0) {
            stats.mean_loss.total /= static_cast<double>(steps);
            stats.mean_loss.reg /= static_cast<double>(steps);
            stats.mean_loss.pref /= static_cast<double>(steps);
            stats.mean_loss.balance /= static_cast<double>(steps);
        }
        stats.mean_loss.lambda_pref = mcfg.lambda_pref;
        stats.mean_loss.lambda_bal = mcfg.lambda_bal;
        if (!pi_history.empty()) stats.slots = slot_statistics(pi_history);

        const std::vector<double> val_preds = predict_split(model, corpus, corpus.val_idx);
        const MetricReport val = compute_metrics(val_preds, val_labels);
        stats.val_mae = val.mae;
        stats.val_src = val.src;
        out.history.push_back(std::move(stats));
    }

    const std::vector<double> val_preds = predict_split(model, corpus, corpus.val_idx);
    out.val = compute_metrics(val_preds, val_labels);
    const std::vector<double> test_labels = labels_of(corpus, corpus.test_idx);
    const std::vector<double> test_preds = predict_split(model, corpus, corpus.test_idx);
    out.test = compute_metrics(test_preds, test_labels);
    out.pair_accuracy = margin_pair_accuracy(
        test_preds, test_labels, pairing_margin(test_labels, mcfg.margin_scale));
    out.final_slots = probe_slots(model, corpus, corpus.train_idx);
    return out;
}

AblationResult run_ablation(Variant v, const SynthCorpus& corpus,
                            const ModelConfig& base, const TrainSettings& ts,
                            std::uint64_t seed) {
    ModelConfig cfg = base;
    apply_variant(cfg, v);
    AblationResult res;
    res.variant = v;
    res.outcome = train_model(corpus, cfg, ts, seed);
    return res;
}

std::vector<GridRow> grid_search(const std::vector<std::size_t>& p_values,
                                 const std::vector<std::size_t>& c_values,
                                 const SynthCorpus& corpus, const ModelConfig& base,
                                 const TrainSettings& ts, std::uint64_t seed) {
    std::vector<GridRow> rows(p_values.size() * c_values.size());
    std::vector<std::pair<std::size_t, std::size_t>> cells;
    for (std::size_t p : p_values)
        for (std::size_t c : c_values) cells.emplace_back(p, c);

    run_parallel(cells.size(), [&](std::size_t i) {
        const auto [p, c] = cells[i];
        GridRow& row = rows[i];
        row.p = p;
        row.c = c;
        row.slots = p * c;
        if (p * c > corpus.train_idx.size() || p > corpus.train_idx.size() / 2) {
            row.skipped = true;
            return;
        }
        ModelConfig cfg = base;
        cfg.p_count = p;
        cfg.c_count = c;
        if (cfg.k_top > p * c) cfg.k_top = p * c;
        row.test = train_model(corpus, cfg, ts, seed).test;
    });
    return rows;
}

void export_diagnostics(StapModel& model, const SynthCorpus& corpus,
                        const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const std::uint64_t seed = corpus.cfg.seed;

    {
        CsvWriter out((fs::path(out_dir) / "frame_scores.csv").string(),
                      "sample_id,frame_index,score,is_planted_highlight", seed);
        for (std::size_t i : corpus.test_idx) {
            const SynthSample& s = corpus.samples.at(i);
            TemporalCache cache;
            model.temporal.forward(s.frames, cache);
            const Tensor& w = cache.score.w;
            for (std::size_t t = 0; t < w.numel(); ++t) {
                const bool hot = std::find(s.highlights.begin(), s.highlights.end(), t) !=
                                 s.highlights.end();
                out.row({std::to_string(i), std::to_string(t), fmt_double(w[t]),
                         hot ? "1" : "0"});
            }
        }
        out.close();
    }
    {
        CsvWriter out((fs::path(out_dir) / "slot_heatmap.csv").string(),
                      "partition,cluster,mean_activation", seed);
        SlotStats stats;
        if (model.cfg.use_memory) {
            std::vector<Tensor> history;
            for (std::size_t i : corpus.test_idx) {
                const SynthSample& s = corpus.samples.at(i);
                ItemCache cache;
                model.predict_item(s.frames, s.text, s.meta, cache);
                history.push_back(cache.route.res.pi_soft);
            }
            stats = slot_statistics(history);
        } else {
            stats.activation = Tensor({model.cfg.p_count, model.cfg.c_count});
        }
        for (std::size_t p = 0; p < model.cfg.p_count; ++p)
            for (std::size_t c = 0; c < model.cfg.c_count; ++c)
                out.row({std::to_string(p), std::to_string(c),
                         fmt_double(stats.activation.at(p, c))});
        out.close();
    }
}

std::vector<RobustnessRow> robustness_sweep(const std::vector<double>& proportions,
                                            const SynthCorpus& corpus,
                                            const ModelConfig& base,
                                            const TrainSettings& ts,
                                            std::uint64_t seed) {
    if (proportions.empty())
        throw std::invalid_argument("robustness_sweep: proportions required");
    for (double p : proportions)
        if (p <= 0.0 || p > 1.0)
            throw std::invalid_argument("robustness_sweep: proportions must lie in (0,1]");

    std::vector<RobustnessRow> rows(proportions.size());
    MetricReport full_run = train_model(corpus, base, ts, seed).test;

    run_parallel(proportions.size(), [&](std::size_t i) {
        RobustnessRow& row = rows[i];
        row.proportion = proportions[i];
        SynthCorpus truncated = corpus;
        const std::size_t keep = std::max<std::size_t>(
            2, static_cast<std::size_t>(proportions[i] *
                                        static_cast<double>(corpus.train_idx.size())));
        truncated.train_idx.resize(std::min(keep, corpus.train_idx.size()));
        row.test = train_model(truncated, base, ts, seed).test;
    });
    for (RobustnessRow& row : rows) row.delta_src = row.test.src - full_run.src;
    return rows;
}

std::size_t thread_budget() {
    if (const char* env = std::getenv("STAP_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<std::size_t>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return std::min<std::size_t>(hw == 0 ? 1 : hw, 8);
}

void run_parallel(std::size_t n_jobs, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min(thread_budget(), n_jobs);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n_jobs; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&]() {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n_jobs) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace stap

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stap/memory.hpp"
#include "stap/metrics.hpp"
#include "stap/model.hpp"
#include "stap/synthdata.hpp"

namespace stap {

enum class Variant {
    full,
    no_balance,
    no_dppo,
    top1,
    no_frame_scoring,
    no_ssm,
    no_sparse_attn,
    no_memory,
};

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);  // invalid_argument on unknown
void apply_variant(ModelConfig& cfg, Variant v);

struct TrainSettings {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
};

struct EpochStats {
    std::size_t epoch = 0;
    LossBreakdown mean_loss;  // averaged over the epoch's steps
    double val_mae = 0.0;
    double val_src = 0.0;
    SlotStats slots;  // training-step routing distribution for the epoch
};

struct TrainOutcome {
    StapModel model;
    std::vector<EpochStats> history;
    MetricReport val, test;
    double pair_accuracy = 0.0;  // margin pairs on the test split
    SlotStats final_slots;       // train-set routing probe after training
};

/// Builds, bank-initializes and trains a model on corpus.train_idx; all
/// randomness derived from seed. The head output bias starts at the train
/// label mean.
TrainOutcome train_model(const SynthCorpus& corpus, const ModelConfig& mcfg,
                         const TrainSettings& ts, std::uint64_t seed);

std::vector<double> predict_split(StapModel& model, const SynthCorpus& corpus,
                                  const std::vector<std::size_t>& idx);

/// Fraction of label pairs further apart than margin whose prediction order
/// matches the label order; prediction ties score half.
double margin_pair_accuracy(const std::vector<double>& preds,
                            const std::vector<double>& labels, double margin);

struct AblationResult {
    Variant variant = Variant::full;
    TrainOutcome outcome;
};

AblationResult run_ablation(Variant v, const SynthCorpus& corpus,
                            const ModelConfig& base, const TrainSettings& ts,
                            std::uint64_t seed);

struct GridRow {
    std::size_t p = 0, c = 0, slots = 0;
    bool skipped = false;  // P*C exceeds the train-set size
    MetricReport test;
};

std::vector<GridRow> grid_search(const std::vector<std::size_t>& p_values,
                                 const std::vector<std::size_t>& c_values,
                                 const SynthCorpus& corpus, const ModelConfig& base,
                                 const TrainSettings& ts, std::uint64_t seed);

/// frame_scores.csv (sample_id,frame_index,score,is_planted_highlight) over
/// the test split, and slot_heatmap.csv (partition,cluster,mean_activation).
void export_diagnostics(StapModel& model, const SynthCorpus& corpus,
                        const std::string& out_dir);

struct RobustnessRow {
    double proportion = 0.0;
    MetricReport test;
    double delta_src = 0.0;  // SRC(proportion) - SRC(full)
};

/// Re-trains on truncated train splits; last proportion must be 1.0-relative
/// baseline (rows report SRC drop against the full-data run).
std::vector<RobustnessRow> robustness_sweep(const std::vector<double>& proportions,
                                            const SynthCorpus& corpus,
                                            const ModelConfig& base,
                                            const TrainSettings& ts, std::uint64_t seed);

/// STAP_THREADS override, else min(hardware_concurrency, 8), at least 1.
std::size_t thread_budget();

/// Runs fn(0..n_jobs-1) on up to thread_budget() worker threads.
void run_parallel(std::size_t n_jobs, const std::function<void(std::size_t)>& fn);

}  // namespace stap

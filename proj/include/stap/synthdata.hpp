#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "stap/model.hpp"
#include "stap/tensor.hpp"

namespace stap {

struct SynthConfig {
    std::size_t n = 600;
    std::size_t t_len = 64;
    std::size_t d_v = 16;
    std::size_t d_t = 16;
    std::size_t d_u = 4;
    std::size_t g_topics = 6;
    std::size_t h_highlights = 3;
    std::size_t l_tokens = 4;
    double bg_step = 1.0;      // expected background frame-delta norm
    double magnitude = 10.0;   // highlight jump, multiples of bg_step
    double c1 = 0.2;           // highlight-energy label coefficient
    double c2 = 1.0;           // creator-strength label coefficient
    double noise = 0.1;        // label noise sigma
    std::vector<double> base_pop = {2, 4, 6, 8, 10, 12};  // per-topic base
    std::uint64_t seed = 1;

    void validate() const;
};

struct SynthSample {
    Tensor frames;  // [T, d_v]
    Tensor text;    // [L, d_t]
    Tensor meta;    // [d_u], slot 0 carries the creator strength
    double label = 0.0;
    // Ground truth, never fed to the model.
    std::size_t topic = 0;
    std::vector<std::size_t> highlights;
    double creator = 0.0;
};

struct SynthCorpus {
    SynthConfig cfg;
    std::vector<SynthSample> samples;
    std::vector<std::size_t> train_idx, val_idx, test_idx;
};

/// Background random walk with H topic-center-directed highlight jumps; label
/// Y = base_pop[topic] + c1 * (mean |delta x| at highlights) + c2 * creator +
/// N(0, noise). Split 7:1:2, all reproducible from cfg.seed.
SynthCorpus generate_corpus(const SynthConfig& cfg);

/// Assembles the referenced samples into a model batch.
SampleBatch make_batch(const SynthCorpus& corpus, const std::vector<std::size_t>& idx);

/// CSV bundle (frames/text/meta/splits) plus a JSON-lines ground-truth
/// sidecar and a flat config echo, written into dir.
void save_corpus(const SynthCorpus& corpus, const std::string& dir);
SynthCorpus load_corpus(const std::string& dir);

}  // namespace stap

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <stdexcept>
#include <vector>

#include <doctest.h>

#include "stap/synthdata.hpp"
#include "stap/tensor.hpp"

using namespace stap;

namespace {

SynthConfig small_config() {
    SynthConfig cfg;
    cfg.n = 60;
    cfg.t_len = 16;
    cfg.d_v = 6;
    cfg.d_t = 5;
    cfg.d_u = 3;
    cfg.g_topics = 4;
    cfg.h_highlights = 2;
    cfg.l_tokens = 3;
    cfg.base_pop = {2, 4, 6, 8};
    cfg.seed = 11;
    return cfg;
}

double row_delta_norm(const Tensor& frames, std::size_t t) {
    double s = 0.0;
    for (std::size_t j = 0; j < frames.dim(1); ++j) {
        const double d = frames.at(t, j) - frames.at(t - 1, j);
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("config validation rejects inconsistent setups") {
    SynthConfig cfg = small_config();
    cfg.n = 7;  // below 2 * g_topics
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_config();
    cfg.t_len = 1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_config();
    cfg.h_highlights = cfg.t_len;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_config();
    cfg.base_pop = {1, 2};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_config();
    cfg.noise = -0.1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_config();
    cfg.bg_step = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    CHECK_NOTHROW(small_config().validate());
}

TEST_CASE("generation is reproducible from the seed alone") {
    const SynthConfig cfg = small_config();
    const SynthCorpus a = generate_corpus(cfg);
    const SynthCorpus b = generate_corpus(cfg);
    REQUIRE(a.samples.size() == cfg.n);
    for (std::size_t i = 0; i < cfg.n; ++i) {
        CHECK(a.samples[i].label == b.samples[i].label);
        CHECK(a.samples[i].topic == b.samples[i].topic);
        for (std::size_t k = 0; k < a.samples[i].frames.numel(); ++k)
            CHECK(a.samples[i].frames.v[k] == b.samples[i].frames.v[k]);
        for (std::size_t k = 0; k < a.samples[i].text.numel(); ++k)
            CHECK(a.samples[i].text.v[k] == b.samples[i].text.v[k]);
    }
    CHECK(a.train_idx == b.train_idx);

    SynthConfig other = cfg;
    other.seed = 12;
    const SynthCorpus c = generate_corpus(other);
    bool any_diff = false;
    for (std::size_t k = 0; k < c.samples[0].frames.numel(); ++k)
        any_diff |= c.samples[0].frames.v[k] != a.samples[0].frames.v[k];
    CHECK(any_diff);
}

TEST_CASE("sample tensors have the configured geometry") {
    const SynthConfig cfg = small_config();
    const SynthCorpus corpus = generate_corpus(cfg);
    for (const SynthSample& s : corpus.samples) {
        REQUIRE(s.frames.rank() == 2);
        CHECK(s.frames.dim(0) == cfg.t_len);
        CHECK(s.frames.dim(1) == cfg.d_v);
        CHECK(s.text.dim(0) == cfg.l_tokens);
        CHECK(s.text.dim(1) == cfg.d_t);
        CHECK(s.meta.dim(0) == cfg.d_u);
        CHECK(s.meta[0] == s.creator);
        CHECK(s.creator >= 0.0);
        CHECK(s.creator <= 1.0);
        CHECK(s.topic < cfg.g_topics);
        REQUIRE(s.highlights.size() == cfg.h_highlights);
        for (std::size_t h : s.highlights) {
            CHECK(h >= 1);
            CHECK(h < cfg.t_len);
        }
        CHECK(std::is_sorted(s.highlights.begin(), s.highlights.end()));
        CHECK(std::adjacent_find(s.highlights.begin(), s.highlights.end()) ==
              s.highlights.end());
    }
}

TEST_CASE("noise-free labels decompose into their three terms") {
    SynthConfig cfg = small_config();
    cfg.noise = 0.0;
    const SynthCorpus corpus = generate_corpus(cfg);
    for (const SynthSample& s : corpus.samples) {
        double energy = 0.0;
        for (std::size_t h : s.highlights) energy += row_delta_norm(s.frames, h);
        energy /= static_cast<double>(s.highlights.size());
        const double want = cfg.base_pop[s.topic] + cfg.c1 * energy + cfg.c2 * s.creator;
        CHECK(s.label == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("topic base popularity is the only label source when isolated") {
    SynthConfig cfg = small_config();
    cfg.n = 120;
    cfg.noise = 0.0;
    cfg.c1 = 0.0;
    cfg.c2 = 0.0;
    const SynthCorpus corpus = generate_corpus(cfg);
    std::set<double> seen;
    for (const SynthSample& s : corpus.samples) {
        seen.insert(s.label);
        CHECK(s.label == cfg.base_pop[s.topic]);
    }
    CHECK(seen.size() == cfg.g_topics);
}

TEST_CASE("highlight jumps dominate the background walk") {
    SynthConfig cfg;
    cfg.n = 1000;
    cfg.t_len = 32;
    cfg.d_v = 8;
    cfg.g_topics = 4;
    cfg.h_highlights = 3;
    cfg.base_pop = {1, 2, 3, 4};
    cfg.seed = 5;
    const SynthCorpus corpus = generate_corpus(cfg);
    std::size_t dominated = 0;
    for (const SynthSample& s : corpus.samples) {
        std::vector<double> background;
        double weakest_highlight = 1e300;
        for (std::size_t t = 1; t < cfg.t_len; ++t) {
            const double norm = row_delta_norm(s.frames, t);
            if (std::binary_search(s.highlights.begin(), s.highlights.end(), t))
                weakest_highlight = std::min(weakest_highlight, norm);
            else
                background.push_back(norm);
        }
        std::sort(background.begin(), background.end());
        const double p95 = background[static_cast<std::size_t>(
            0.95 * static_cast<double>(background.size()))];
        if (weakest_highlight > p95) ++dominated;
    }
    CHECK(dominated >= 990);
}

TEST_CASE("splits partition the corpus 7:1:2") {
    SynthConfig cfg = small_config();
    cfg.n = 100;
    const SynthCorpus corpus = generate_corpus(cfg);
    CHECK(corpus.train_idx.size() == 70);
    CHECK(corpus.val_idx.size() == 10);
    CHECK(corpus.test_idx.size() == 20);
    std::set<std::size_t> all;
    for (std::size_t i : corpus.train_idx) all.insert(i);
    for (std::size_t i : corpus.val_idx) all.insert(i);
    for (std::size_t i : corpus.test_idx) all.insert(i);
    CHECK(all.size() == 100);
    CHECK(*all.rbegin() == 99);
}

TEST_CASE("batches assemble the referenced samples in order") {
    const SynthCorpus corpus = generate_corpus(small_config());
    const std::vector<std::size_t> idx = {5, 0, 17};
    const SampleBatch batch = make_batch(corpus, idx);
    REQUIRE(batch.size() == 3);
    batch.validate();
    for (std::size_t k = 0; k < idx.size(); ++k) {
        CHECK(batch.labels[k] == corpus.samples[idx[k]].label);
        for (std::size_t j = 0; j < batch.frames[k].numel(); ++j)
            CHECK(batch.frames[k].v[j] == corpus.samples[idx[k]].frames.v[j]);
    }
}

TEST_CASE("corpus round-trips through its on-disk bundle") {
    namespace fs = std::filesystem;
    const SynthCorpus corpus = generate_corpus(small_config());
    const fs::path dir = fs::path("synth_roundtrip_tmp");
    fs::remove_all(dir);
    save_corpus(corpus, dir.string());
    for (const char* name : {"frames.csv", "text.csv", "meta.csv", "splits.csv",
                             "truth.jsonl", "synth_config.txt"})
        CHECK(fs::exists(dir / name));

    const SynthCorpus back = load_corpus(dir.string());
    REQUIRE(back.samples.size() == corpus.samples.size());
    CHECK(back.cfg.n == corpus.cfg.n);
    CHECK(back.cfg.seed == corpus.cfg.seed);
    CHECK(back.cfg.base_pop == corpus.cfg.base_pop);
    for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
        const SynthSample& a = corpus.samples[i];
        const SynthSample& b = back.samples[i];
        CHECK(a.label == b.label);
        CHECK(a.topic == b.topic);
        CHECK(a.highlights == b.highlights);
        CHECK(a.creator == b.creator);
        REQUIRE(a.frames.same_shape(b.frames));
        for (std::size_t j = 0; j < a.frames.numel(); ++j)
            CHECK(a.frames.v[j] == b.frames.v[j]);
        for (std::size_t j = 0; j < a.text.numel(); ++j)
            CHECK(a.text.v[j] == b.text.v[j]);
        for (std::size_t j = 0; j < a.meta.numel(); ++j)
            CHECK(a.meta.v[j] == b.meta.v[j]);
    }
    CHECK(back.train_idx == corpus.train_idx);
    CHECK(back.val_idx == corpus.val_idx);
    CHECK(back.test_idx == corpus.test_idx);
    fs::remove_all(dir);

    CHECK_THROWS_AS(load_corpus("no_such_corpus_dir"), DataError);
}

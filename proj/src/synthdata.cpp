#include "stap/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "stap/io.hpp"
#include "stap/kernels.hpp"
#include "stap/rng.hpp"

namespace stap {

void SynthConfig::validate() const {
    if (g_topics == 0) throw std::invalid_argument("SynthConfig: g_topics must be >= 1");
    if (n < 2 * g_topics)
        throw std::invalid_argument("SynthConfig: n must be >= 2*g_topics");
    if (t_len < 2) throw std::invalid_argument("SynthConfig: t_len must be >= 2");
    if (h_highlights >= t_len)
        throw std::invalid_argument("SynthConfig: h_highlights must be < t_len");
    if (noise < 0.0) throw std::invalid_argument("SynthConfig: noise must be >= 0");
    if (base_pop.size() != g_topics)
        throw std::invalid_argument("SynthConfig: base_pop needs one entry per topic");
    if (d_v == 0 || d_t == 0 || d_u == 0 || l_tokens == 0)
        throw std::invalid_argument("SynthConfig: dims must be >= 1");
    if (bg_step <= 0.0) throw std::invalid_argument("SynthConfig: bg_step must be > 0");
    if (magnitude < 0.0)
        throw std::invalid_argument("SynthConfig: magnitude must be >= 0");
}

namespace {

// Stream ids under cfg.seed: 0 = topic centers, 1 = split shuffle, 10+i = sample i.
constexpr std::uint64_t kCenterStream = 0;
constexpr std::uint64_t kSplitStream = 1;
constexpr std::uint64_t kSampleStream = 10;

struct TopicCenters {
    std::vector<Tensor> visual;  // norm = magnitude * bg_step
    std::vector<Tensor> text;    // N(0,1) coordinates
};

TopicCenters make_centers(const SynthConfig& cfg) {
    Rng rng(derive_seed(cfg.seed, kCenterStream));
    TopicCenters out;
    for (std::size_t g = 0; g < cfg.g_topics; ++g) {
        Tensor dir = rng.normal_tensor({cfg.d_v});
        const double norm = std::max(l2_norm(dir), 1e-12);
        const double target = cfg.magnitude * cfg.bg_step;
        for (double& x : dir.v) x *= target / norm;
        out.visual.push_back(std::move(dir));
        out.text.push_back(rng.normal_tensor({cfg.d_t}));
    }
    return out;
}

SynthSample make_sample(const SynthConfig& cfg, const TopicCenters& centers,
                        std::size_t i) {
    Rng rng(derive_seed(cfg.seed, kSampleStream + i));
    SynthSample s;
    s.topic = rng.index(cfg.g_topics);
    s.creator = rng.uniform(0.0, 1.0);

    // H distinct highlight positions in [1, T-1]; a delta lives at its frame.
    while (s.highlights.size() < cfg.h_highlights) {
        const std::size_t t = 1 + rng.index(cfg.t_len - 1);
        if (std::find(s.highlights.begin(), s.highlights.end(), t) ==
            s.highlights.end())
            s.highlights.push_back(t);
    }
    std::sort(s.highlights.begin(), s.highlights.end());

    const double coord_sd = cfg.bg_step / std::sqrt(static_cast<double>(cfg.d_v));
    s.frames = Tensor({cfg.t_len, cfg.d_v});
    for (std::size_t j = 0; j < cfg.d_v; ++j)
        s.frames.at(0, j) = rng.normal(0.0, coord_sd);
    const Tensor& vc = centers.visual[s.topic];
    double highlight_energy = 0.0;
    for (std::size_t t = 1; t < cfg.t_len; ++t) {
        const bool hot = std::binary_search(s.highlights.begin(), s.highlights.end(), t);
        if (hot) {
            const double u = rng.uniform(0.5, 1.5);
            Tensor dir({cfg.d_v});
            for (std::size_t j = 0; j < cfg.d_v; ++j)
                dir[j] = vc[j] - s.frames.at(t - 1, j);
            const double norm = std::max(l2_norm(dir), 1e-12);
            const double step = u * cfg.magnitude * cfg.bg_step;
            double energy = 0.0;
            for (std::size_t j = 0; j < cfg.d_v; ++j) {
                const double d = step * dir[j] / norm;
                s.frames.at(t, j) = s.frames.at(t - 1, j) + d;
                energy += d * d;
            }
            highlight_energy += std::sqrt(energy);
        } else {
            for (std::size_t j = 0; j < cfg.d_v; ++j)
                s.frames.at(t, j) = s.frames.at(t - 1, j) + rng.normal(0.0, coord_sd);
        }
    }
    if (!s.highlights.empty())
        highlight_energy /= static_cast<double>(s.highlights.size());

    s.text = Tensor({cfg.l_tokens, cfg.d_t});
    const Tensor& tc = centers.text[s.topic];
    for (std::size_t l = 0; l < cfg.l_tokens; ++l)
        for (std::size_t j = 0; j < cfg.d_t; ++j)
            s.text.at(l, j) = tc[j] + rng.normal(0.0, 0.25);

    s.meta = Tensor({cfg.d_u});
    s.meta[0] = s.creator;
    for (std::size_t j = 1; j < cfg.d_u; ++j) s.meta[j] = rng.normal(0.0, 1.0);

    s.label = cfg.base_pop[s.topic] + cfg.c1 * highlight_energy + cfg.c2 * s.creator;
    if (cfg.noise > 0.0) s.label += rng.normal(0.0, cfg.noise);
    return s;
}

}  // namespace

SynthCorpus generate_corpus(const SynthConfig& cfg) {
    cfg.validate();
    SynthCorpus corpus;
    corpus.cfg = cfg;
    const TopicCenters centers = make_centers(cfg);
    corpus.samples.reserve(cfg.n);
    for (std::size_t i = 0; i < cfg.n; ++i)
        corpus.samples.push_back(make_sample(cfg, centers, i));

    std::vector<std::size_t> order(cfg.n);
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(derive_seed(cfg.seed, kSplitStream));
    split_rng.shuffle(order.begin(), order.end());
    const std::size_t n_train = static_cast<std::size_t>(0.7 * static_cast<double>(cfg.n));
    const std::size_t n_val = static_cast<std::size_t>(0.1 * static_cast<double>(cfg.n));
    corpus.train_idx.assign(order.begin(), order.begin() + n_train);
    corpus.val_idx.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    corpus.test_idx.assign(order.begin() + n_train + n_val, order.end());
    return corpus;
}

SampleBatch make_batch(const SynthCorpus& corpus, const std::vector<std::size_t>& idx) {
    SampleBatch batch;
    for (std::size_t i : idx) {
        const SynthSample& s = corpus.samples.at(i);
        batch.frames.push_back(s.frames);
        batch.text.push_back(s.text);
        batch.meta.push_back(s.meta);
        batch.labels.push_back(s.label);
    }
    return batch;
}

// --------------------------------------------------------------------------
// Dump / load
// --------------------------------------------------------------------------

namespace {

void write_matrix_csv(const std::string& path, const std::string& kind,
                      const std::vector<const Tensor*>& rows_of, std::uint64_t seed) {
    // Header: sample,row,c0..c{d-1}; one CSV row per tensor row.
    const std::size_t d = rows_of.empty() ? 0 : rows_of[0]->shape.back();
    std::string header = "sample," + kind;
    for (std::size_t j = 0; j < d; ++j) header += ",c" + std::to_string(j);
    CsvWriter out(path, header, seed);
    std::vector<std::string> cells(d + 2);
    for (std::size_t i = 0; i < rows_of.size(); ++i) {
        const Tensor& t = *rows_of[i];
        const std::size_t n_rows = t.rank() == 1 ? 1 : t.dim(0);
        for (std::size_t r = 0; r < n_rows; ++r) {
            cells[0] = std::to_string(i);
            cells[1] = std::to_string(r);
            for (std::size_t j = 0; j < d; ++j)
                cells[j + 2] = fmt_double(t.v[r * d + j]);
            out.row(cells);
        }
    }
    out.close();
}

std::vector<double> parse_row(const std::vector<std::string>& cells, std::size_t from) {
    std::vector<double> out;
    for (std::size_t j = from; j < cells.size(); ++j) out.push_back(std::stod(cells[j]));
    return out;
}

std::vector<std::vector<std::vector<double>>> read_matrix_csv(const std::string& path,
                                                              std::size_t n) {
    std::ifstream in(path);
    if (!in) throw DataError("load_corpus: cannot open " + path);
    std::vector<std::vector<std::vector<double>>> per_sample(n);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (line.rfind("sample,", 0) == 0) continue;
        const std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() < 3) throw DataError("load_corpus: short row in " + path);
        const std::size_t i = std::stoul(cells[0]);
        if (i >= n) throw DataError("load_corpus: sample index out of range in " + path);
        per_sample[i].push_back(parse_row(cells, 2));
    }
    return per_sample;
}

Tensor rows_to_tensor(const std::vector<std::vector<double>>& rows,
                      const std::string& what) {
    if (rows.empty()) throw DataError("load_corpus: no rows for " + what);
    Tensor t({rows.size(), rows[0].size()});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows[0].size())
            throw DataError("load_corpus: ragged rows for " + what);
        for (std::size_t j = 0; j < rows[r].size(); ++j) t.at(r, j) = rows[r][j];
    }
    return t;
}

std::string idx_join(const std::vector<std::size_t>& idx) {
    std::string out;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (i) out += ' ';
        out += std::to_string(idx[i]);
    }
    return out;
}

std::vector<std::size_t> idx_split(const std::string& text) {
    std::vector<std::size_t> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find(' ', pos);
        if (end == std::string::npos) end = text.size();
        if (end > pos) out.push_back(std::stoul(text.substr(pos, end - pos)));
        pos = end + 1;
    }
    return out;
}

}  // namespace

void save_corpus(const SynthCorpus& corpus, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const SynthConfig& cfg = corpus.cfg;
    const auto path = [&](const char* name) { return (fs::path(dir) / name).string(); };

    std::vector<const Tensor*> frames, text, meta;
    for (const SynthSample& s : corpus.samples) {
        frames.push_back(&s.frames);
        text.push_back(&s.text);
        meta.push_back(&s.meta);
    }
    write_matrix_csv(path("frames.csv"), "frame", frames, cfg.seed);
    write_matrix_csv(path("text.csv"), "token", text, cfg.seed);
    write_matrix_csv(path("meta.csv"), "row", meta, cfg.seed);

    {
        CsvWriter out(path("splits.csv"), "split,indices", cfg.seed);
        out.row({"train", idx_join(corpus.train_idx)});
        out.row({"val", idx_join(corpus.val_idx)});
        out.row({"test", idx_join(corpus.test_idx)});
        out.close();
    }
    {
        std::ofstream out(path("truth.jsonl"));
        if (!out) throw DataError("save_corpus: cannot open truth.jsonl");
        for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
            const SynthSample& s = corpus.samples[i];
            nlohmann::json rec;
            rec["sample"] = i;
            rec["label"] = s.label;
            rec["topic"] = s.topic;
            rec["highlights"] = s.highlights;
            rec["creator"] = s.creator;
            out << rec.dump() << "\n";
        }
        out.close();
        if (out.fail()) throw DataError("save_corpus: write failure on truth.jsonl");
    }
    {
        std::ofstream out(path("synth_config.txt"));
        if (!out) throw DataError("save_corpus: cannot open synth_config.txt");
        out << "synth.n=" << cfg.n << "\n";
        out << "synth.t_len=" << cfg.t_len << "\n";
        out << "synth.d_v=" << cfg.d_v << "\n";
        out << "synth.d_t=" << cfg.d_t << "\n";
        out << "synth.d_u=" << cfg.d_u << "\n";
        out << "synth.g_topics=" << cfg.g_topics << "\n";
        out << "synth.h_highlights=" << cfg.h_highlights << "\n";
        out << "synth.l_tokens=" << cfg.l_tokens << "\n";
        out << "synth.bg_step=" << fmt_double(cfg.bg_step) << "\n";
        out << "synth.magnitude=" << fmt_double(cfg.magnitude) << "\n";
        out << "synth.c1=" << fmt_double(cfg.c1) << "\n";
        out << "synth.c2=" << fmt_double(cfg.c2) << "\n";
        out << "synth.noise=" << fmt_double(cfg.noise) << "\n";
        out << "synth.base_pop=";
        for (std::size_t g = 0; g < cfg.base_pop.size(); ++g)
            out << (g ? " " : "") << fmt_double(cfg.base_pop[g]);
        out << "\n";
        out << "synth.seed=" << cfg.seed << "\n";
        out.close();
        if (out.fail()) throw DataError("save_corpus: write failure on synth_config.txt");
    }
}

SynthCorpus load_corpus(const std::string& dir) {
    namespace fs = std::filesystem;
    const auto path = [&](const char* name) { return (fs::path(dir) / name).string(); };

    SynthConfig cfg;
    {
        std::ifstream in(path("synth_config.txt"));
        if (!in) throw DataError("load_corpus: cannot open synth_config.txt");
        std::string line;
        while (std::getline(in, line)) {
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = line.substr(0, eq);
            const std::string val = line.substr(eq + 1);
            if (key == "synth.n") cfg.n = std::stoul(val);
            else if (key == "synth.t_len") cfg.t_len = std::stoul(val);
            else if (key == "synth.d_v") cfg.d_v = std::stoul(val);
            else if (key == "synth.d_t") cfg.d_t = std::stoul(val);
            else if (key == "synth.d_u") cfg.d_u = std::stoul(val);
            else if (key == "synth.g_topics") cfg.g_topics = std::stoul(val);
            else if (key == "synth.h_highlights") cfg.h_highlights = std::stoul(val);
            else if (key == "synth.l_tokens") cfg.l_tokens = std::stoul(val);
            else if (key == "synth.bg_step") cfg.bg_step = std::stod(val);
            else if (key == "synth.magnitude") cfg.magnitude = std::stod(val);
            else if (key == "synth.c1") cfg.c1 = std::stod(val);
            else if (key == "synth.c2") cfg.c2 = std::stod(val);
            else if (key == "synth.noise") cfg.noise = std::stod(val);
            else if (key == "synth.seed") cfg.seed = std::stoull(val);
            else if (key == "synth.base_pop") {
                cfg.base_pop.clear();
                std::size_t pos = 0;
                while (pos < val.size()) {
                    std::size_t end = val.find(' ', pos);
                    if (end == std::string::npos) end = val.size();
                    if (end > pos) cfg.base_pop.push_back(std::stod(val.substr(pos, end - pos)));
                    pos = end + 1;
                }
            }
        }
    }
    cfg.validate();

    SynthCorpus corpus;
    corpus.cfg = cfg;
    corpus.samples.resize(cfg.n);

    const auto frames = read_matrix_csv(path("frames.csv"), cfg.n);
    const auto text = read_matrix_csv(path("text.csv"), cfg.n);
    const auto meta = read_matrix_csv(path("meta.csv"), cfg.n);
    for (std::size_t i = 0; i < cfg.n; ++i) {
        corpus.samples[i].frames = rows_to_tensor(frames[i], "frames");
        corpus.samples[i].text = rows_to_tensor(text[i], "text");
        const Tensor m = rows_to_tensor(meta[i], "meta");
        corpus.samples[i].meta = Tensor({m.dim(1)}, std::vector<double>(m.v));
    }

    {
        std::ifstream in(path("truth.jsonl"));
        if (!in) throw DataError("load_corpus: cannot open truth.jsonl");
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const nlohmann::json rec = nlohmann::json::parse(line);
            const std::size_t i = rec.at("sample").get<std::size_t>();
            if (i >= cfg.n) throw DataError("load_corpus: truth sample out of range");
            corpus.samples[i].label = rec.at("label").get<double>();
            corpus.samples[i].topic = rec.at("topic").get<std::size_t>();
            corpus.samples[i].highlights =
                rec.at("highlights").get<std::vector<std::size_t>>();
            corpus.samples[i].creator = rec.at("creator").get<double>();
        }
    }
    {
        std::ifstream in(path("splits.csv"));
        if (!in) throw DataError("load_corpus: cannot open splits.csv");
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#' || line.rfind("split,", 0) == 0) continue;
            const std::vector<std::string> cells = split_csv_line(line);
            if (cells.size() != 2) throw DataError("load_corpus: bad splits.csv row");
            if (cells[0] == "train") corpus.train_idx = idx_split(cells[1]);
            else if (cells[0] == "val") corpus.val_idx = idx_split(cells[1]);
            else if (cells[0] == "test") corpus.test_idx = idx_split(cells[1]);
            else throw DataError("load_corpus: unknown split " + cells[0]);
        }
    }
    return corpus;
}

}  // namespace stap

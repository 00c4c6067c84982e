#include "stap/config.hpp"

#include <fstream>
#include <sstream>

#include "stap/io.hpp"

namespace stap {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const std::uint64_t x = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("bad integer for config key " + key + ": '" + v + "'");
    }
}

double parse_f64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("bad number for config key " + key + ": '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError("bad boolean for config key " + key + ": '" + v + "'");
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& key, const std::string& v, Parse parse) {
    std::vector<T> out;
    std::stringstream ss(v);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        cell = trim(cell);
        if (!cell.empty()) out.push_back(parse(key, cell));
    }
    if (out.empty()) throw ConfigError("empty list for config key " + key);
    return out;
}

std::string join_u64(const std::vector<std::size_t>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(xs[i]);
    }
    return out;
}

std::string join_f64(const std::vector<double>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        out += fmt_double(xs[i]);
    }
    return out;
}

}  // namespace

void RunConfig::finalize() {
    model.temporal.d_v = synth.d_v;
    model.d_t = synth.d_t;
    model.d_u = synth.d_u;
    synth.seed = seed;
}

RunConfig default_config() {
    RunConfig cfg;
    cfg.finalize();
    return cfg;
}

void apply_config_kv(RunConfig& cfg, const std::string& key, const std::string& value) {
    // synth
    if (key == "synth.n") cfg.synth.n = parse_u64(key, value);
    else if (key == "synth.t_len") cfg.synth.t_len = parse_u64(key, value);
    else if (key == "synth.d_v") cfg.synth.d_v = parse_u64(key, value);
    else if (key == "synth.d_t") cfg.synth.d_t = parse_u64(key, value);
    else if (key == "synth.d_u") cfg.synth.d_u = parse_u64(key, value);
    else if (key == "synth.g_topics") cfg.synth.g_topics = parse_u64(key, value);
    else if (key == "synth.h_highlights") cfg.synth.h_highlights = parse_u64(key, value);
    else if (key == "synth.l_tokens") cfg.synth.l_tokens = parse_u64(key, value);
    else if (key == "synth.bg_step") cfg.synth.bg_step = parse_f64(key, value);
    else if (key == "synth.magnitude") cfg.synth.magnitude = parse_f64(key, value);
    else if (key == "synth.c1") cfg.synth.c1 = parse_f64(key, value);
    else if (key == "synth.c2") cfg.synth.c2 = parse_f64(key, value);
    else if (key == "synth.noise") cfg.synth.noise = parse_f64(key, value);
    else if (key == "synth.base_pop")
        cfg.synth.base_pop = parse_list<double>(key, value, parse_f64);
    // temporal stage
    else if (key == "model.score_hidden")
        cfg.model.temporal.score_hidden = parse_u64(key, value);
    else if (key == "model.d_h") cfg.model.temporal.ssm.d_h = parse_u64(key, value);
    else if (key == "model.delta_base")
        cfg.model.temporal.ssm.delta_base = parse_f64(key, value);
    else if (key == "model.alpha") cfg.model.temporal.ssm.alpha = parse_f64(key, value);
    else if (key == "model.rho") cfg.model.temporal.ssm.rho = parse_f64(key, value);
    else if (key == "model.delta_min")
        cfg.model.temporal.ssm.delta_min = parse_f64(key, value);
    else if (key == "model.delta_max")
        cfg.model.temporal.ssm.delta_max = parse_f64(key, value);
    else if (key == "model.delta_mode") {
        if (value == "score") cfg.model.temporal.ssm.mode = DeltaMode::score;
        else if (value == "anchor") cfg.model.temporal.ssm.mode = DeltaMode::anchor;
        else throw ConfigError("bad delta_mode for config key " + key + ": '" + value + "'");
    } else if (key == "model.d_a") cfg.model.temporal.attn.d_a = parse_u64(key, value);
    else if (key == "model.w_base") cfg.model.temporal.attn.w_base = parse_f64(key, value);
    else if (key == "model.beta") cfg.model.temporal.attn.beta = parse_f64(key, value);
    // memory and predictor
    else if (key == "model.d_m") cfg.model.d_m = parse_u64(key, value);
    else if (key == "model.d_c") cfg.model.d_c = parse_u64(key, value);
    else if (key == "model.l_ca") cfg.model.l_ca = parse_u64(key, value);
    else if (key == "model.head_hidden") cfg.model.head_hidden = parse_u64(key, value);
    else if (key == "model.p_count") cfg.model.p_count = parse_u64(key, value);
    else if (key == "model.c_count") cfg.model.c_count = parse_u64(key, value);
    else if (key == "model.k_top") cfg.model.k_top = parse_u64(key, value);
    else if (key == "model.tau_init") cfg.model.tau_init = parse_f64(key, value);
    else if (key == "model.tau_min") cfg.model.tau_min = parse_f64(key, value);
    else if (key == "model.tau_max") cfg.model.tau_max = parse_f64(key, value);
    else if (key == "model.zipf_s") cfg.model.balance.zipf_s = parse_f64(key, value);
    else if (key == "model.gamma_lb") cfg.model.balance.gamma_lb = parse_f64(key, value);
    else if (key == "model.beta_lb") cfg.model.balance.beta_lb = parse_f64(key, value);
    else if (key == "model.lambda_bal") cfg.model.lambda_bal = parse_f64(key, value);
    else if (key == "model.lambda_pref") cfg.model.lambda_pref = parse_f64(key, value);
    else if (key == "model.gamma_pref") cfg.model.gamma_pref = parse_f64(key, value);
    else if (key == "model.margin_scale") cfg.model.margin_scale = parse_f64(key, value);
    else if (key == "model.eta") cfg.model.eta = parse_f64(key, value);
    else if (key == "model.lr") cfg.model.lr = parse_f64(key, value);
    else if (key == "model.weight_decay") cfg.model.weight_decay = parse_f64(key, value);
    else if (key == "model.renorm_topk") cfg.model.renorm_topk = parse_bool(key, value);
    // training and harness
    else if (key == "train.epochs") cfg.train.epochs = parse_u64(key, value);
    else if (key == "train.batch_size") cfg.train.batch_size = parse_u64(key, value);
    else if (key == "bench.sizes_seq")
        cfg.bench_sizes_seq = parse_list<std::size_t>(key, value, parse_u64);
    else if (key == "bench.sizes_corpus")
        cfg.bench_sizes_corpus = parse_list<std::size_t>(key, value, parse_u64);
    else if (key == "bench.trials") cfg.bench_trials = parse_u64(key, value);
    else if (key == "harness.proportions")
        cfg.harness_proportions = parse_list<double>(key, value, parse_f64);
    else if (key == "harness.grid_p")
        cfg.grid_p = parse_list<std::size_t>(key, value, parse_u64);
    else if (key == "harness.grid_c")
        cfg.grid_c = parse_list<std::size_t>(key, value, parse_u64);
    else if (key == "seed") cfg.seed = parse_u64(key, value);
    else throw ConfigError("unknown config key: " + key);
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path);
    RunConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("missing '=' at " + path + ":" + std::to_string(lineno));
        apply_config_kv(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    cfg.finalize();
    return cfg;
}

std::map<std::string, std::string> config_echo(const RunConfig& cfg) {
    std::map<std::string, std::string> echo;
    echo["synth.n"] = std::to_string(cfg.synth.n);
    echo["synth.t_len"] = std::to_string(cfg.synth.t_len);
    echo["synth.d_v"] = std::to_string(cfg.synth.d_v);
    echo["synth.d_t"] = std::to_string(cfg.synth.d_t);
    echo["synth.d_u"] = std::to_string(cfg.synth.d_u);
    echo["synth.g_topics"] = std::to_string(cfg.synth.g_topics);
    echo["synth.h_highlights"] = std::to_string(cfg.synth.h_highlights);
    echo["synth.l_tokens"] = std::to_string(cfg.synth.l_tokens);
    echo["synth.bg_step"] = fmt_double(cfg.synth.bg_step);
    echo["synth.magnitude"] = fmt_double(cfg.synth.magnitude);
    echo["synth.c1"] = fmt_double(cfg.synth.c1);
    echo["synth.c2"] = fmt_double(cfg.synth.c2);
    echo["synth.noise"] = fmt_double(cfg.synth.noise);
    echo["synth.base_pop"] = join_f64(cfg.synth.base_pop);
    echo["model.score_hidden"] = std::to_string(cfg.model.temporal.score_hidden);
    echo["model.d_h"] = std::to_string(cfg.model.temporal.ssm.d_h);
    echo["model.delta_base"] = fmt_double(cfg.model.temporal.ssm.delta_base);
    echo["model.alpha"] = fmt_double(cfg.model.temporal.ssm.alpha);
    echo["model.rho"] = fmt_double(cfg.model.temporal.ssm.rho);
    echo["model.delta_min"] = fmt_double(cfg.model.temporal.ssm.delta_min);
    echo["model.delta_max"] = fmt_double(cfg.model.temporal.ssm.delta_max);
    echo["model.delta_mode"] =
        cfg.model.temporal.ssm.mode == DeltaMode::score ? "score" : "anchor";
    echo["model.d_a"] = std::to_string(cfg.model.temporal.attn.d_a);
    echo["model.w_base"] = fmt_double(cfg.model.temporal.attn.w_base);
    echo["model.beta"] = fmt_double(cfg.model.temporal.attn.beta);
    echo["model.d_m"] = std::to_string(cfg.model.d_m);
    echo["model.d_c"] = std::to_string(cfg.model.d_c);
    echo["model.l_ca"] = std::to_string(cfg.model.l_ca);
    echo["model.head_hidden"] = std::to_string(cfg.model.head_hidden);
    echo["model.p_count"] = std::to_string(cfg.model.p_count);
    echo["model.c_count"] = std::to_string(cfg.model.c_count);
    echo["model.k_top"] = std::to_string(cfg.model.k_top);
    echo["model.tau_init"] = fmt_double(cfg.model.tau_init);
    echo["model.tau_min"] = fmt_double(cfg.model.tau_min);
    echo["model.tau_max"] = fmt_double(cfg.model.tau_max);
    echo["model.zipf_s"] = fmt_double(cfg.model.balance.zipf_s);
    echo["model.gamma_lb"] = fmt_double(cfg.model.balance.gamma_lb);
    echo["model.beta_lb"] = fmt_double(cfg.model.balance.beta_lb);
    echo["model.lambda_bal"] = fmt_double(cfg.model.lambda_bal);
    echo["model.lambda_pref"] = fmt_double(cfg.model.lambda_pref);
    echo["model.gamma_pref"] = fmt_double(cfg.model.gamma_pref);
    echo["model.margin_scale"] = fmt_double(cfg.model.margin_scale);
    echo["model.eta"] = fmt_double(cfg.model.eta);
    echo["model.lr"] = fmt_double(cfg.model.lr);
    echo["model.weight_decay"] = fmt_double(cfg.model.weight_decay);
    echo["model.renorm_topk"] = cfg.model.renorm_topk ? "1" : "0";
    echo["train.epochs"] = std::to_string(cfg.train.epochs);
    echo["train.batch_size"] = std::to_string(cfg.train.batch_size);
    echo["bench.sizes_seq"] = join_u64(cfg.bench_sizes_seq);
    echo["bench.sizes_corpus"] = join_u64(cfg.bench_sizes_corpus);
    echo["bench.trials"] = std::to_string(cfg.bench_trials);
    echo["harness.proportions"] = join_f64(cfg.harness_proportions);
    echo["harness.grid_p"] = join_u64(cfg.grid_p);
    echo["harness.grid_c"] = join_u64(cfg.grid_c);
    echo["seed"] = std::to_string(cfg.seed);
    return echo;
}

}  // namespace stap

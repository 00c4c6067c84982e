#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <doctest.h>
#include <json.hpp>

#include "stap/config.hpp"
#include "stap/io.hpp"
#include "stap/model.hpp"
#include "stap/rng.hpp"

using namespace stap;

TEST_CASE("known hash vectors") {
    CHECK(fnv1a("", 0) == 0xcbf29ce484222325ull);
    CHECK(fnv1a("a", 1) == 0xaf63dc4c8601ec8cull);
    Tensor t({2}, {1.0, 2.0});
    CHECK(fnv1a_tensor(t) == fnv1a_tensor(t));
    Tensor u({2}, {1.0, 2.000001});
    CHECK(fnv1a_tensor(t) != fnv1a_tensor(u));
    CHECK_THROWS_AS(fnv1a_file("missing_file_xyz"), DataError);
}

TEST_CASE("double formatting round trips exactly") {
    for (double x : {0.1, -3.141592653589793, 1e-300, 6.02e23, 0.0, -0.0, 42.0}) {
        const std::string s = fmt_double(x);
        CHECK(std::strtod(s.c_str(), nullptr) == x);
    }
}

TEST_CASE("csv writer stamps the seed and enforces the column count") {
    namespace fs = std::filesystem;
    const fs::path path("csv_writer_tmp.csv");
    {
        CsvWriter w(path.string(), "a,b,c", 99);
        w.row({"1", "2", "3"});
        CHECK_THROWS_AS(w.row({"1", "2"}), DataError);
        w.row({"4", "5", "6"});
        w.close();
    }
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "# seed=99");
    std::getline(in, line);
    CHECK(line == "a,b,c");
    std::getline(in, line);
    CHECK(line == "1,2,3");
    fs::remove(path);

    CHECK(split_csv_line("x,,z").size() == 3);
    CHECK(split_csv_line("x,,z")[1].empty());
}

TEST_CASE("bank serialization round trips bit for bit") {
    namespace fs = std::filesystem;
    Rng rng(5);
    MemoryBank bank;
    bank.p_count = 3;
    bank.c_count = 2;
    bank.d_m = 4;
    bank.m = Param("bank.m", rng.normal_tensor({6, 4}));
    bank.mu = rng.normal_tensor({6});
    bank.tau = 1.7;
    bank.tau_min = 0.2;
    bank.tau_max = 4.5;

    const fs::path path("bank_tmp.bin");
    save_bank(path.string(), bank);
    const MemoryBank back = load_bank(path.string());
    CHECK(back.p_count == 3);
    CHECK(back.c_count == 2);
    CHECK(back.d_m == 4);
    CHECK(back.tau == 1.7);
    CHECK(back.tau_min == 0.2);
    CHECK(back.tau_max == 4.5);
    for (std::size_t i = 0; i < bank.m.value.numel(); ++i)
        CHECK(back.m.value.v[i] == bank.m.value.v[i]);
    for (std::size_t i = 0; i < 6; ++i) CHECK(back.mu.v[i] == bank.mu.v[i]);
    fs::remove(path);

    // corrupt magic
    std::ofstream bad("bank_bad_tmp.bin", std::ios::binary);
    bad << "NOTABNK" << std::string(64, '\0');
    bad.close();
    CHECK_THROWS_AS(load_bank("bank_bad_tmp.bin"), DataError);
    fs::remove("bank_bad_tmp.bin");
    CHECK_THROWS_AS(load_bank("missing_bank.bin"), DataError);
}

TEST_CASE("checkpoint restores every parameter and the bank") {
    namespace fs = std::filesystem;
    ModelConfig cfg;
    cfg.temporal.d_v = 4;
    cfg.temporal.score_hidden = 3;
    cfg.temporal.ssm.d_h = 3;
    cfg.temporal.attn.d_a = 3;
    cfg.d_t = 3;
    cfg.d_u = 2;
    cfg.d_m = 4;
    cfg.d_c = 4;
    cfg.l_ca = 1;
    cfg.head_hidden = 4;
    cfg.p_count = 2;
    cfg.c_count = 2;
    cfg.k_top = 2;

    Rng r1(7);
    StapModel saved = StapModel::init(cfg, r1);
    SampleBatch items;
    Rng r2(8);
    for (int i = 0; i < 6; ++i) {
        items.frames.push_back(r2.normal_tensor({4, 4}));
        items.text.push_back(r2.normal_tensor({2, 3}));
        items.meta.push_back(r2.normal_tensor({2}));
        items.labels.push_back(r2.normal());
    }
    init_model_bank(saved, items, 17);

    const fs::path path("ckpt_tmp.bin");
    save_checkpoint(path.string(), saved);

    Rng r3(1234);  // deliberately different init
    StapModel loaded = StapModel::init(cfg, r3);
    CHECK(!loaded.bank_ready);
    load_checkpoint(path.string(), loaded);
    CHECK(loaded.bank_ready);
    CHECK(loaded.bank.tau == saved.bank.tau);

    auto a = saved.all_params();
    auto b = loaded.all_params();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i]->name == b[i]->name);
        for (std::size_t j = 0; j < a[i]->numel(); ++j)
            CHECK(a[i]->value.v[j] == b[i]->value.v[j]);
    }
    for (std::size_t s = 0; s < saved.bank.mu.numel(); ++s)
        CHECK(loaded.bank.mu.v[s] == saved.bank.mu.v[s]);

    // a differently shaped model must refuse the payload
    ModelConfig other = cfg;
    other.d_c = 6;
    Rng r4(9);
    StapModel wrong = StapModel::init(other, r4);
    CHECK_THROWS_AS(load_checkpoint(path.string(), wrong), DataError);
    fs::remove(path);
}

TEST_CASE("manifest lists checksums and flags volatile artifacts") {
    namespace fs = std::filesystem;
    const fs::path dir("manifest_tmp");
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "stable.csv") << "a,b\n1,2\n";
    std::ofstream(dir / "timing.csv") << "ms\n0.5\n";

    std::map<std::string, std::string> echo = {{"seed", "9"}, {"synth.n", "40"}};
    write_manifest(dir.string(), echo, 9, {"stable.csv"}, {"timing.csv"});

    std::ifstream in(dir / "manifest.json");
    REQUIRE(in.good());
    nlohmann::json m = nlohmann::json::parse(in);
    CHECK(m["seed"] == 9);
    CHECK(m["config"]["synth.n"] == "40");
    const std::string stable = m["artifacts"]["stable.csv"];
    CHECK(stable.rfind("fnv1a:", 0) == 0);
    CHECK(stable.size() == 6 + 16);
    CHECK(m["artifacts"]["timing.csv"] == "volatile:wall-clock");
    CHECK(!m.contains("timestamp"));
    fs::remove_all(dir);
}

TEST_CASE("defaults pass through finalize with coupled dimensions") {
    RunConfig cfg = default_config();
    CHECK(cfg.model.temporal.d_v == cfg.synth.d_v);
    CHECK(cfg.model.d_t == cfg.synth.d_t);
    CHECK(cfg.model.d_u == cfg.synth.d_u);
    CHECK(cfg.synth.seed == cfg.seed);

    apply_config_kv(cfg, "synth.d_v", "8");
    apply_config_kv(cfg, "seed", "321");
    cfg.finalize();
    CHECK(cfg.model.temporal.d_v == 8);
    CHECK(cfg.synth.seed == 321);
}

TEST_CASE("unknown keys and bad values are rejected by name") {
    RunConfig cfg = default_config();
    CHECK_THROWS_WITH_AS(apply_config_kv(cfg, "bogus.key", "1"),
                         doctest::Contains("bogus.key"), ConfigError);
    CHECK_THROWS_AS(apply_config_kv(cfg, "synth.n", "many"), ConfigError);
    CHECK_THROWS_AS(apply_config_kv(cfg, "model.lr", "fast"), ConfigError);
    CHECK_THROWS_AS(apply_config_kv(cfg, "model.delta_mode", "sideways"), ConfigError);
    CHECK_NOTHROW(apply_config_kv(cfg, "model.delta_mode", "anchor"));
    CHECK(cfg.model.temporal.ssm.mode == DeltaMode::anchor);
}

TEST_CASE("config files parse with comments and report bad lines") {
    namespace fs = std::filesystem;
    const fs::path path("config_tmp.txt");
    {
        std::ofstream out(path);
        out << "# a comment\n";
        out << "\n";
        out << "synth.n = 48\n";
        out << "model.k_top=2\n";
        out << "train.epochs = 3   # trailing comment\n";
        out << "harness.proportions = 0.5,1.0\n";
    }
    const RunConfig cfg = load_config(path.string());
    CHECK(cfg.synth.n == 48);
    CHECK(cfg.model.k_top == 2);
    CHECK(cfg.train.epochs == 3);
    REQUIRE(cfg.harness_proportions.size() == 2);
    CHECK(cfg.harness_proportions[0] == 0.5);
    fs::remove(path);

    CHECK_THROWS_WITH_AS(load_config("missing_config.txt"),
                         doctest::Contains("missing_config.txt"), ConfigError);

    {
        std::ofstream out(path);
        out << "synth.n 48\n";  // missing '='
    }
    CHECK_THROWS_AS(load_config(path.string()), ConfigError);
    fs::remove(path);
}

TEST_CASE("echo covers the whole schema and re-applies cleanly") {
    RunConfig cfg = default_config();
    apply_config_kv(cfg, "synth.n", "72");
    apply_config_kv(cfg, "model.p_count", "4");
    apply_config_kv(cfg, "bench.sizes_seq", "16,32,64,128");
    cfg.finalize();
    const auto echo = config_echo(cfg);
    CHECK(echo.size() > 40);
    CHECK(echo.at("synth.n") == "72");
    CHECK(echo.at("model.p_count") == "4");
    CHECK(echo.at("bench.sizes_seq") == "16,32,64,128");

    // feeding the echo back reproduces the echo: the schema is closed
    RunConfig round = default_config();
    for (const auto& [k, v] : echo) apply_config_kv(round, k, v);
    round.finalize();
    const auto echo2 = config_echo(round);
    REQUIRE(echo2.size() == echo.size());
    for (const auto& [k, v] : echo) {
        INFO("key ", k);
        CHECK(echo2.at(k) == v);
    }
}

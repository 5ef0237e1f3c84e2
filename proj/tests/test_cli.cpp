#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

// Drives the installed binary end to end; PERTURB_LEARN_BIN points at it.

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* bin() {
    const char* b = std::getenv("PERTURB_LEARN_BIN");
    REQUIRE(b != nullptr);
    return b;
}

struct CliResult {
    int code = -1;
    std::string out;
};

CliResult run_cli(const std::string& args) {
    std::string cmd = std::string(bin()) + " " + args + " 2>/dev/null";
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    CliResult r;
    char buf[4096];
    size_t got;
    while ((got = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, got);
    int st = pclose(p);
    r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return r;
}

// the summary object is the last JSON line
json last_json(const std::string& text) {
    size_t end = text.find_last_not_of('\n');
    REQUIRE(end != std::string::npos);
    size_t start = text.rfind('\n', end);
    start = start == std::string::npos ? 0 : start + 1;
    return json::parse(text.substr(start, end - start + 1));
}

struct TempDir {
    std::string path;
    explicit TempDir(const std::string& p) : path(p) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string write_config(const std::string& dir) {
    std::string path = dir + "/config.ini";
    std::ofstream f(path);
    f << "[data]\n"
         "kind = gaussian\n"
         "n = 100\n"
         "d = 8\n"
         "n_test = 60\n"
         "eta = 1.0\n"
         "sigma = 0.5\n"
         "[train]\n"
         "epochs = 12\n"
         "batch_size = 32\n"
         "lr = 0.02\n"
         "[perturb]\n"
         "method = pgd_l2\n"
         "eps = 0.4\n"
         "steps = 15\n";
    return path;
}

}  // namespace

TEST_CASE("stage pipeline runs and resumes through the binary") {
    TempDir tmp("/tmp/perlearn_cli_stages");
    std::string cfg = write_config(tmp.path);
    std::string common = "--config " + cfg + " --out " + tmp.path;

    auto gen = run_cli("gen-data " + common);
    REQUIRE(gen.code == 0);
    json jg = last_json(gen.out);
    REQUIRE(jg["cmd"] == "gen-data");
    REQUIRE(jg["resumed"] == false);
    REQUIRE(jg["n"] == 100);
    REQUIRE(jg["d"] == 8);
    std::string train_hash = jg["train_hash"];
    REQUIRE(train_hash.size() == 16);

    auto gen2 = run_cli("gen-data " + common);
    REQUIRE(gen2.code == 0);
    json jg2 = last_json(gen2.out);
    REQUIRE(jg2["resumed"] == true);
    REQUIRE(jg2["train_hash"] == train_hash);  // artifact bytes unchanged

    auto tr = run_cli("train " + common);
    REQUIRE(tr.code == 0);
    json jt = last_json(tr.out);
    REQUIRE(jt["resumed"] == false);
    double train_acc = jt["train_acc"];
    REQUIRE(train_acc > 0.8);  // easy synthetic task

    // eval model1 on the training split reproduces the reported accuracy
    auto ev = run_cli("eval " + common +
                      " --set eval.model=model1 --set eval.split=train");
    REQUIRE(ev.code == 0);
    json je = last_json(ev.out);
    REQUIRE(double(je["acc"]) == train_acc);

    auto pe = run_cli("perturb " + common);
    REQUIRE(pe.code == 0);
    json jp = last_json(pe.out);
    REQUIRE(jp["method"] == "pgd");
    REQUIRE(double(jp["mean_l2"]) <= 0.4 + 1e-9);
    REQUIRE(double(jp["validity_rate"]) >= 0.0);
    REQUIRE(double(jp["validity_rate"]) <= 1.0);

    auto re = run_cli("relearn " + common);
    REQUIRE(re.code == 0);
    json jr = last_json(re.out);
    REQUIRE(jr["fit_acc"] >= 0.0);
    REQUIRE(jr["clean_test_acc"] >= 0.0);
    REQUIRE(jr["clean_test_acc"] <= 1.0);

    // resumed stages load artifacts instead of recomputing
    auto tr2 = run_cli("train " + common);
    REQUIRE(last_json(tr2.out)["resumed"] == true);
    auto pe2 = run_cli("perturb " + common);
    json jp2 = last_json(pe2.out);
    REQUIRE(jp2["resumed"] == true);
    REQUIRE(double(jp2["mean_l2"]) == double(jp["mean_l2"]));

    // relearn-only keys do not invalidate upstream artifacts
    auto ev2 = run_cli("eval " + common +
                       " --set eval.model=model1 --set eval.split=train"
                       " --set relearn.epochs=9");
    REQUIRE(ev2.code == 0);
    REQUIRE(double(last_json(ev2.out)["acc"]) == train_acc);
}

TEST_CASE("missing artifacts exit with their own code") {
    TempDir tmp("/tmp/perlearn_cli_missing");
    std::string cfg = write_config(tmp.path);
    auto r = run_cli("train --config " + cfg + " --out " + tmp.path);
    REQUIRE(r.code == 3);
    json j = last_json(r.out);
    REQUIRE(j["error"]["category"] == "missing_artifact");
    REQUIRE(std::string(j["error"]["message"]).find("gen-data") != std::string::npos);
}

TEST_CASE("config problems exit with the config code") {
    TempDir tmp("/tmp/perlearn_cli_badcfg");
    std::string cfg = write_config(tmp.path);
    std::string common = "--config " + cfg + " --out " + tmp.path;
    REQUIRE(run_cli("gen-data " + common).code == 0);
    auto r = run_cli("train " + common + " --set train.optimizer=rmsprop");
    REQUIRE(r.code == 2);
    REQUIRE(last_json(r.out)["error"]["category"] == "config_error");

    auto gone = run_cli("gen-data --config /nonexistent.ini --out " + tmp.path);
    REQUIRE(gone.code == 3);
}

TEST_CASE("sweep subcommand reports row status and exit code") {
    TempDir tmp("/tmp/perlearn_cli_sweep");
    std::string cfg = write_config(tmp.path);
    {
        std::ofstream f(cfg, std::ios::app);
        f << "[sweep]\naxis = d\ngrid = 6, 10\nreps = 1\n";
    }
    std::string common = "--config " + cfg + " --out " + tmp.path;
    auto ok = run_cli("sweep " + common);
    REQUIRE(ok.code == 0);
    json j = last_json(ok.out);
    REQUIRE(j["cmd"] == "sweep");
    REQUIRE(j["rows"] == 2);
    REQUIRE(j["all_ok"] == true);
    REQUIRE(fs::exists(tmp.path + "/sweep_d.csv"));

    auto bad = run_cli("sweep " + common +
                       " --set sweep.axis=eps --set \"sweep.grid=-1, 0.5\"");
    REQUIRE(bad.code == 1);  // error rows, not a crash
    REQUIRE(last_json(bad.out)["all_ok"] == false);
}

TEST_CASE("spurious bench emits the per-method table") {
    TempDir tmp("/tmp/perlearn_cli_bench");
    std::string cfg = tmp.path + "/bench.ini";
    {
        std::ofstream f(cfg);
        f << "[data]\n"
             "kind = spurious\n"
             "n = 300\n"
             "n_test = 300\n"
             "d_core = 4\n"
             "d_spur = 2\n"
             "[train]\n"
             "epochs = 6\n"
             "batch_size = 64\n"
             "[bench]\n"
             "methods = original\n"
             "reps = 1\n";
    }
    auto r = run_cli("spurious-bench --config " + cfg + " --out " + tmp.path);
    REQUIRE(r.code == 0);
    json j = last_json(r.out);
    REQUIRE(j["cmd"] == "spurious-bench");
    REQUIRE(j["all_ok"] == true);
    REQUIRE(fs::exists(tmp.path + "/spurious_bench.csv"));
    // per-row lines precede the summary
    REQUIRE(r.out.find("\"method\":\"original\"") != std::string::npos);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>
#include <sys/wait.h>

#include "npssl/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string cli_path() {
    const char* p = std::getenv("NPSSL_CLI");
    REQUIRE_MESSAGE(p != nullptr, "NPSSL_CLI must point at the npssl binary");
    return p;
}

struct RunResult {
    int exit_code;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

RunResult run_cli(const std::string& args) {
    static int counter = 0;
    const fs::path dir = fs::temp_directory_path() / "npssl_cli_io";
    fs::create_directories(dir);
    const fs::path out = dir / ("out" + std::to_string(counter) + ".txt");
    const fs::path err = dir / ("err" + std::to_string(counter) + ".txt");
    ++counter;
    const std::string cmd = cli_path() + " " + args + " > " + out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

fs::path fresh_dir(const char* name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path write_tiny_config(const fs::path& dir, std::uint64_t seed = 1) {
    const json j = {
        {"dataset",
         {{"kind", "two_moons"}, {"n", 120}, {"noise", 0.1}, {"labels_per_class", 3},
          {"test_fraction", 0.25}, {"seed", 5}}},
        {"train",
         {{"t_max", 40}, {"batch_size", 4}, {"mu_ratio", 2}, {"t_samples", 2},
          {"feat_dim", 8}, {"latent_dim", 8}, {"hidden_dim", 8}, {"bank_capacity", 16},
          {"log_interval", 10}, {"seed", seed}}},
        {"out_dir", (dir / "run").string()},
    };
    const fs::path cfg = dir / "config.json";
    std::ofstream os(cfg);
    os << j.dump(2);
    return cfg;
}

}  // namespace

TEST_CASE("missing config file fails without partial outputs") {
    const fs::path dir = fresh_dir("npssl_cli_missing");
    const RunResult r = run_cli("train --config " + (dir / "nope.json").string() +
                                " --out-dir " + (dir / "run").string());
    CHECK(r.exit_code != 0);
    CHECK(r.err.find("error:") != std::string::npos);
    CHECK(!fs::exists(dir / "run"));
}

TEST_CASE("invalid config key fails naming the key, no partial outputs") {
    const fs::path dir = fresh_dir("npssl_cli_badkey");
    const fs::path cfg = dir / "config.json";
    {
        std::ofstream os(cfg);
        os << R"({"train": {"tau_typo": 1.0}, "out_dir": ")" << (dir / "run").string()
           << R"("})";
    }
    const RunResult r = run_cli("train --config " + cfg.string());
    CHECK(r.exit_code != 0);
    CHECK(r.err.find("tau_typo") != std::string::npos);
    CHECK(!fs::exists(dir / "run"));
}

TEST_CASE("train smoke run writes all three artifacts") {
    const fs::path dir = fresh_dir("npssl_cli_smoke");
    const fs::path cfg = write_tiny_config(dir);
    const RunResult r = run_cli("train --config " + cfg.string());
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(dir / "run" / "metrics.csv"));
    CHECK(fs::exists(dir / "run" / "report.json"));
    CHECK(fs::exists(dir / "run" / "checkpoint.npck"));

    const json report = json::parse(slurp(dir / "run" / "report.json"));
    CHECK(report.contains("final"));
    CHECK(report["final"]["test_accuracy"].is_number());
    const std::string csv = slurp(dir / "run" / "metrics.csv");
    CHECK(csv.rfind("iteration,", 0) == 0);
}

TEST_CASE("seed override changes only the seed field of the echoed config") {
    const fs::path dir = fresh_dir("npssl_cli_seed");
    const fs::path cfg = write_tiny_config(dir);

    const RunResult r1 = run_cli("train --config " + cfg.string() + " --out-dir " +
                                 (dir / "a").string());
    const RunResult r2 = run_cli("train --config " + cfg.string() + " --seed 9 --out-dir " +
                                 (dir / "b").string());
    REQUIRE(r1.exit_code == 0);
    REQUIRE(r2.exit_code == 0);
    json c1 = json::parse(slurp(dir / "a" / "report.json"))["config"];
    json c2 = json::parse(slurp(dir / "b" / "report.json"))["config"];
    CHECK(c1["train"]["seed"] == 1);
    CHECK(c2["train"]["seed"] == 9);
    c1["train"].erase("seed");
    c2["train"].erase("seed");
    c1.erase("out_dir");
    c2.erase("out_dir");
    CHECK(c1 == c2);
}

TEST_CASE("determinism: two identical train runs produce byte-identical metrics") {
    const fs::path dir = fresh_dir("npssl_cli_det");
    const fs::path cfg = write_tiny_config(dir);
    REQUIRE(run_cli("train --config " + cfg.string() + " --out-dir " + (dir / "a").string())
                .exit_code == 0);
    REQUIRE(run_cli("train --config " + cfg.string() + " --out-dir " + (dir / "b").string())
                .exit_code == 0);
    CHECK(slurp(dir / "a" / "metrics.csv") == slurp(dir / "b" / "metrics.csv"));
    json ra = json::parse(slurp(dir / "a" / "report.json"));
    json rb = json::parse(slurp(dir / "b" / "report.json"));
    ra["config"].erase("out_dir");
    rb["config"].erase("out_dir");
    CHECK(ra == rb);
}

TEST_CASE("eval reproduces the recorded training accuracy and is repeatable") {
    const fs::path dir = fresh_dir("npssl_cli_eval");
    const fs::path cfg = write_tiny_config(dir);
    REQUIRE(run_cli("train --config " + cfg.string()).exit_code == 0);
    const json report = json::parse(slurp(dir / "run" / "report.json"));
    const double trained_acc = report["final"]["test_accuracy"];

    const std::string eval_args = "eval --checkpoint " + (dir / "run" / "checkpoint.npck").string() +
                                  " --config " + cfg.string();
    const RunResult e1 = run_cli(eval_args);
    const RunResult e2 = run_cli(eval_args);
    REQUIRE(e1.exit_code == 0);
    CHECK(e1.out == e2.out);
    const json ev = json::parse(e1.out);
    const double eval_acc = ev["test_accuracy"];
    CHECK(eval_acc >= trained_acc - 0.005);  // checkpoint round trip
    CHECK(eval_acc == doctest::Approx(trained_acc));
}

TEST_CASE("eval rejects a corrupt checkpoint with a structured error") {
    const fs::path dir = fresh_dir("npssl_cli_corrupt");
    const fs::path cfg = write_tiny_config(dir);
    const fs::path bad = dir / "bad.npck";
    {
        std::ofstream os(bad, std::ios::binary);
        os << "garbage bytes, not a checkpoint";
    }
    const RunResult r = run_cli("eval --checkpoint " + bad.string() + " --config " + cfg.string());
    CHECK(r.exit_code != 0);
    CHECK(r.err.find("checkpoint") != std::string::npos);
}

TEST_CASE("gen-data emits the dataset CSV") {
    const fs::path dir = fresh_dir("npssl_cli_gendata");
    const fs::path cfg = write_tiny_config(dir);
    const fs::path csv = dir / "data.csv";
    const RunResult r = run_cli("gen-data --config " + cfg.string() + " --out " + csv.string());
    CHECK(r.exit_code == 0);
    const std::string s = slurp(csv);
    CHECK(s.rfind("x1,x2,label,split\n", 0) == 0);
    CHECK(std::count(s.begin(), s.end(), '\n') == 121);
}

TEST_CASE("check-divergence: empty report exits zero") {
    const RunResult r = run_cli("check-divergence --trials 0");
    CHECK(r.exit_code == 0);
}

TEST_CASE("check-divergence passes on a small honest run and fails when corrupted") {
    const RunResult ok = run_cli("check-divergence --trials 2 --mc-samples 20000 --seed 3");
    CHECK(ok.exit_code == 0);
    CHECK(ok.out.find("FAIL") == std::string::npos);

    // Negative control: a corrupted closed form must be caught.
    const RunResult bad =
        run_cli("check-divergence --trials 2 --mc-samples 20000 --seed 3 --self-test-corrupt");
    CHECK(bad.exit_code != 0);
    CHECK(bad.out.find("FAIL") != std::string::npos);
}

TEST_CASE("grad-check is deterministic and passes") {
    const RunResult a = run_cli("grad-check --seed 11");
    const RunResult b = run_cli("grad-check --seed 11");
    CHECK(a.exit_code == 0);
    CHECK(a.out == b.out);
    CHECK(a.out.find("pass") != std::string::npos);
}

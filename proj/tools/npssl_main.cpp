// npssl command-line tool: train / eval / check-divergence / grad-check / gen-data.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "npssl/checkpoint.hpp"
#include "npssl/config.hpp"
#include "npssl/mc.hpp"
#include "npssl/rng.hpp"
#include "npssl/ssl.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace npssl;

namespace {

struct TrainArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    std::int64_t seed = -1;
    bool has_seed = false;
};

json load_json_with_overrides(const TrainArgs& a) {
    std::ifstream is(a.config_path);
    if (!is) throw IoError("config: cannot open " + a.config_path);
    json j;
    try {
        is >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: parse error: ") + e.what());
    }
    for (const auto& kv : a.overrides) io::apply_override(j, kv);
    if (a.has_seed) io::apply_override(j, "train.seed=" + std::to_string(a.seed));
    if (!a.out_dir.empty()) io::apply_override(j, "out_dir=" + a.out_dir);
    return j;
}

int cmd_train(const TrainArgs& a) {
    const json raw = load_json_with_overrides(a);
    const io::RunConfig cfg = io::config_from_json(raw);
    const data::Dataset ds = io::build_dataset(cfg.dataset);

    ssl::TrainOutput out = ssl::train(cfg.train, ds);

    fs::create_directories(cfg.out_dir);
    {
        std::ofstream csv(fs::path(cfg.out_dir) / "metrics.csv", std::ios::trunc);
        if (!csv) throw IoError("train: cannot write metrics.csv");
        ssl::write_metrics_csv(csv, out.metrics);
    }
    const std::string ckpt = (fs::path(cfg.out_dir) / "checkpoint.npck").string();
    io::save_checkpoint(ckpt, io::to_tensors(out.model, out.ema, out.bank_a, out.bank_b));
    {
        json report = {
            {"config", io::config_to_json(cfg)},
            {"seed", cfg.train.seed},
            {"iterations", out.iterations},
            {"final",
             {{"test_accuracy", out.final_eval.accuracy},
              {"mean_confidence", out.final_eval.mean_confidence},
              {"mean_uncertainty", out.final_eval.mean_uncertainty}}},
            {"artifacts", {{"metrics", "metrics.csv"}, {"checkpoint", "checkpoint.npck"}}},
        };
        std::ofstream rep(fs::path(cfg.out_dir) / "report.json", std::ios::trunc);
        if (!rep) throw IoError("train: cannot write report.json");
        rep << report.dump(2) << "\n";
    }
    std::printf("trained %zu iterations, test accuracy %.4f\n", out.iterations,
                out.final_eval.accuracy);
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const TrainArgs& a) {
    const json raw = load_json_with_overrides(a);
    const io::RunConfig cfg = io::config_from_json(raw);
    const data::Dataset ds = io::build_dataset(cfg.dataset);
    io::CheckpointState state = io::from_tensors(io::load_checkpoint(ckpt_path));

    const ssl::EvalResult ev = ssl::evaluate(
        state.ema, state.bank_a, state.bank_b, ds, ds.test_idx, cfg.train.t_samples,
        ssl::eval_stream_seed(cfg.train.seed), cfg.train.uncertainty);
    json out = {{"test_accuracy", ev.accuracy},
                {"mean_confidence", ev.mean_confidence},
                {"mean_uncertainty", ev.mean_uncertainty},
                {"n_test", ds.test_idx.size()}};
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_gen_data(const TrainArgs& a, const std::string& out_path) {
    const json raw = load_json_with_overrides(a);
    const io::RunConfig cfg = io::config_from_json(raw);
    const data::Dataset ds = io::build_dataset(cfg.dataset);
    if (out_path.empty()) {
        data::write_csv(ds, std::cout);
    } else {
        std::ofstream os(out_path, std::ios::trunc);
        if (!os) throw IoError("gen-data: cannot write " + out_path);
        data::write_csv(ds, os);
    }
    return 0;
}

gauss::Gaussian random_instance(Rng& rng, std::size_t d, bool diag) {
    Vector mean(d);
    for (double& m : mean) m = rng.uniform(-3.0, 3.0);
    if (diag) {
        Vector var(d);
        for (double& v : var) v = rng.uniform(0.2, 5.0);
        return gauss::Gaussian::diagonal(std::move(mean), std::move(var));
    }
    // A A^T + c I with modest conditioning
    Matrix a(d, d);
    for (double& v : a.flat()) v = rng.normal();
    Matrix cov(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) acc += a(i, k) * a(j, k);
            cov(i, j) = acc / static_cast<double>(d);
        }
    for (std::size_t i = 0; i < d; ++i) cov(i, i) += 0.4;
    return gauss::Gaussian::full(std::move(mean), std::move(cov));
}

int cmd_check_divergence(const std::string& dims_csv, std::size_t trials,
                         std::size_t mc_samples, std::uint64_t seed, bool corrupt) {
    std::vector<std::size_t> dims;
    std::size_t start = 0;
    while (start < dims_csv.size()) {
        const auto comma = dims_csv.find(',', start);
        dims.push_back(std::stoul(dims_csv.substr(start, comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (dims.empty()) throw ConfigError("check-divergence: --dims must name at least one dimension");

    std::printf("%-8s %-4s %-6s %-8s %-14s %-14s %-12s %-8s %s\n", "kind", "dim", "repr",
                "alpha", "closed", "mc", "se", "|z|", "status");
    if (trials == 0) return 0;

    // The corruption hook exists so the harness itself can be shown to
    // catch a wrong closed form.
    const double fudge = corrupt ? 1.02 : 1.0;

    bool all_ok = true;
    std::size_t checks = 0;
    Rng rng(splitmix64(seed ^ 0xC0DE));
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const std::size_t d = dims[trial % dims.size()];
        const bool diag = trial % 2 == 0;
        const gauss::Gaussian g1 = random_instance(rng, d, diag);
        const gauss::Gaussian g2 = random_instance(rng, d, diag);
        const gauss::SkewParameter alpha(rng.uniform(0.05, 0.95));
        for (int kind = 0; kind < 2; ++kind) {
            const bool dual = kind == 1;
            const double closed =
                fudge * (dual ? gauss::js_geometric_dual(g1, g2, alpha)
                              : gauss::js_geometric(g1, g2, alpha));
            const gauss::McEstimate mc = gauss::mc_divergence(
                g1, g2, alpha, dual ? gauss::McKind::JsDual : gauss::McKind::Js, mc_samples,
                splitmix64(seed ^ (trial * 2 + kind)));
            const double diff = std::abs(closed - mc.value);
            const double z = mc.std_error > 0.0 ? diff / mc.std_error : (diff > 0.0 ? 1e9 : 0.0);
            // The dual estimator has zero sampling variance: the weighted
            // geometric product is proportional to N_a, so its per-sample
            // term is constant and the estimate is exact up to rounding.
            // The absolute floor covers that rounding; any formula bug
            // sits many orders of magnitude above it.
            const double floor = 1e-9 * std::max(1.0, std::abs(closed));
            const bool ok = diff <= 3.0 * mc.std_error + floor;
            all_ok = all_ok && ok;
            ++checks;
            std::printf("%-8s %-4zu %-6s %-8.4f %-14.8f %-14.8f %-12.3g %-8.2f %s\n",
                        dual ? "js_dual" : "js", d, diag ? "diag" : "full", alpha.alpha,
                        closed, mc.value, mc.std_error, z, ok ? "ok" : "FAIL");
        }
    }
    std::printf("%zu checks, %s\n", checks, all_ok ? "all within 3 MC standard errors" : "FAILURES present");
    return all_ok ? 0 : 1;
}

int cmd_grad_check(std::uint64_t seed) {
    const ssl::GradCheckReport report = ssl::grad_check(seed);
    for (const auto& e : report.entries)
        std::printf("%-12s worst relative error %.3e\n", e.suite.c_str(), e.worst_rel);
    std::printf("overall worst relative error %.3e (tolerance 1e-4): %s\n", report.worst_rel,
                report.pass() ? "pass" : "FAIL");
    return report.pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Desk-scale semi-supervised learner with a neural-process predictor "
                 "and geometric Jensen-Shannon regularization"};
    app.require_subcommand(1);

    TrainArgs targs;
    auto add_config_opts = [&](CLI::App* sub, bool config_required) {
        sub->add_option("--config", targs.config_path, "JSON run configuration")
            ->required(config_required);
        sub->add_option("--set", targs.overrides, "override, e.g. --set train.tau_c=0.9");
        sub->add_option("--out-dir", targs.out_dir, "output directory override");
        auto* s = sub->add_option("--seed", targs.seed, "training seed override");
        sub->callback([&targs, s]() { targs.has_seed = s->count() > 0; });
    };

    auto* train_cmd = app.add_subcommand("train", "run the training loop, write artifacts");
    add_config_opts(train_cmd, true);

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the config's test split");
    std::string ckpt_path;
    eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    add_config_opts(eval_cmd, true);

    auto* gen_cmd = app.add_subcommand("gen-data", "emit the configured dataset as CSV");
    std::string gen_out;
    gen_cmd->add_option("--out", gen_out, "output CSV path (stdout when omitted)");
    add_config_opts(gen_cmd, true);

    auto* div_cmd = app.add_subcommand("check-divergence",
                                       "closed-form vs Monte-Carlo divergence comparison");
    std::string dims = "1,2,4";
    std::size_t trials = 50, mc_samples = 1000000;
    std::uint64_t dseed = 7;
    bool corrupt = false;
    div_cmd->add_option("--dims", dims, "comma-separated dimensions");
    div_cmd->add_option("--trials", trials, "random instances");
    div_cmd->add_option("--mc-samples", mc_samples, "Monte-Carlo samples per estimate");
    div_cmd->add_option("--seed", dseed, "RNG seed");
    div_cmd->add_flag("--self-test-corrupt", corrupt,
                      "negative control: perturb the closed form, expect failure");

    auto* grad_cmd = app.add_subcommand("grad-check", "finite-difference gradient verification");
    std::uint64_t gseed = 7;
    grad_cmd->add_option("--seed", gseed, "RNG seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return cmd_train(targs);
        if (eval_cmd->parsed()) return cmd_eval(ckpt_path, targs);
        if (gen_cmd->parsed()) return cmd_gen_data(targs, gen_out);
        if (div_cmd->parsed())
            return cmd_check_divergence(dims, trials, mc_samples, dseed, corrupt);
        if (grad_cmd->parsed()) return cmd_grad_check(gseed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

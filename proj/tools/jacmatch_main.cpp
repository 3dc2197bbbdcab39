// jacmatch: Jacobian-matching knowledge transfer experiments.
//
// Subcommands: train, distill-grid, robustness-grid, transfer, ablate,
// verify, report. Exit codes: 0 ok, 2 config error, 3 numeric failure,
// 4 invariant violation.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "jacmatch/kernels.hpp"
#include "jacmatch/train.hpp"
#include "jacmatch/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

jm::train::ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is.good()) throw jm::ConfigError(jm::strcat("cannot open config '", path, "'"));
    json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw jm::ConfigError(jm::strcat("config '", path, "': ", e.what()));
    }
    return jm::train::ExperimentConfig::from_json(j);
}

void apply_overrides(jm::train::ExperimentConfig& config, const std::vector<std::uint64_t>& seeds,
                     const std::string& out_dir) {
    if (!seeds.empty()) config.seeds = seeds;
    if (!out_dir.empty()) config.out_dir = out_dir;
}

void write_text(const std::string& path, const std::string& text) {
    fs::create_directories(fs::path(path).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(path).parent_path());
    std::ofstream os(path);
    os << text;
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::vector<double> parse_doubles(const std::string& csv) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos < csv.size()) {
        const auto comma = csv.find(',', pos);
        out.push_back(std::stod(csv.substr(pos, comma - pos)));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"Jacobian-matching knowledge transfer experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::vector<std::uint64_t> seeds;
    int jobs = 1;
    std::string kernel_lane;
    app.add_option("--kernels", kernel_lane, "kernel lane: scalar|avx2|auto");

    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        if (needs_config) {
            cmd->add_option("--config", config_path, "experiment config JSON")->required();
        }
        cmd->add_option("--out-dir", out_dir, "output directory override");
        cmd->add_option("--seed,--seeds", seeds, "seed list override");
        cmd->add_option("--jobs", jobs, "max concurrent grid jobs");
    };

    auto* train_cmd = app.add_subcommand("train", "train one configuration over its seeds");
    add_common(train_cmd, true);

    auto* distill_cmd =
        app.add_subcommand("distill-grid", "distillation methods x per-class subset sizes");
    add_common(distill_cmd, true);
    std::string n_list = "1,5,10,50";
    distill_cmd->add_option("--n-per-class", n_list, "comma list of per-class sizes");

    auto* robust_cmd =
        app.add_subcommand("robustness-grid", "penalty weights x test noise levels");
    add_common(robust_cmd, true);
    std::string lambda_list = "0,1";
    std::string sigma_list = "0,0.5,1.0,1.5,2.0";
    robust_cmd->add_option("--lambdas", lambda_list, "comma list of penalty weights");
    robust_cmd->add_option("--test-sigmas", sigma_list, "comma list of test noise sigmas");

    auto* transfer_cmd = app.add_subcommand("transfer", "two-headed transfer method comparison");
    add_common(transfer_cmd, true);

    auto* ablate_cmd = app.add_subcommand("ablate", "tap-depth or pool-window ablation");
    add_common(ablate_cmd, true);
    std::string axis = "tap-depth";
    ablate_cmd->add_option("--axis", axis, "tap-depth|pool-window");

    auto* verify_cmd = app.add_subcommand("verify", "numerical verification labs");
    verify_cmd->require_subcommand(1);
    auto* ve_noise = verify_cmd->add_subcommand("noise-equiv", "expectation-vs-expansion slopes");
    std::string family = "squared";
    std::string sigmas_arg = "0.2,0.1,0.05,0.025";
    int pairs = 20;
    std::uint64_t lab_seed = 0;
    ve_noise->add_option("--family", family, "squared|ce");
    ve_noise->add_option("--sigmas", sigmas_arg, "sigma grid");
    ve_noise->add_option("--pairs", pairs, "number of net pairs");
    ve_noise->add_option("--seed", lab_seed, "base seed");
    ve_noise->add_option("--out-dir", out_dir, "report directory");

    auto* ve_exact = verify_cmd->add_subcommand("exactness", "piecewise-linear exactness check");
    int mc_samples = 100000;
    ve_exact->add_option("--samples", mc_samples, "monte-carlo samples");
    ve_exact->add_option("--seed", lab_seed, "base seed");
    ve_exact->add_option("--out-dir", out_dir, "report directory");

    auto* ve_bound = verify_cmd->add_subcommand("bound", "transfer-bound trials");
    int bound_seeds = 100;
    ve_bound->add_option("--seeds", bound_seeds, "number of seeded trials");
    ve_bound->add_option("--out-dir", out_dir, "report directory");

    auto* report_cmd = app.add_subcommand("report", "aggregate run results into a CSV");
    std::string report_dir;
    report_cmd->add_option("--dir", report_dir, "directory of run-*.json files")->required();
    std::string report_out = "report.csv";
    report_cmd->add_option("--out", report_out, "output CSV path");

    CLI11_PARSE(app, argc, argv);

    if (!kernel_lane.empty() && kernel_lane != "auto") {
        jm::kernels::select_lane(kernel_lane == "scalar" ? jm::kernels::Lane::scalar
                                                         : jm::kernels::Lane::avx2);
    }

    if (*train_cmd) {
        auto config = load_config(config_path);
        apply_overrides(config, seeds, out_dir);
        for (std::uint64_t seed : config.seeds) {
            auto result = jm::train::train_run(config, seed);
            std::cout << "seed " << seed << ": test accuracy " << result.test_accuracy
                      << "% (wall " << result.wall_seconds << "s)\n";
        }
        return 0;
    }
    if (*distill_cmd) {
        auto config = load_config(config_path);
        apply_overrides(config, seeds, out_dir);
        std::vector<int> ns;
        for (double v : parse_doubles(n_list)) ns.push_back(static_cast<int>(v));
        auto grid = jm::train::distill_grid(config, ns, jobs);
        const std::string path = (fs::path(config.out_dir) / "distill_grid.csv").string();
        write_text(path, grid.csv());
        std::cout << grid.csv() << "written: " << path << "\n";
        return 0;
    }
    if (*robust_cmd) {
        auto config = load_config(config_path);
        apply_overrides(config, seeds, out_dir);
        auto grid = jm::train::robustness_grid(config, parse_doubles(lambda_list),
                                               parse_doubles(sigma_list), jobs);
        const std::string path = (fs::path(config.out_dir) / "robustness_grid.csv").string();
        write_text(path, grid.csv());
        std::cout << grid.csv() << "written: " << path << "\n";
        return 0;
    }
    if (*transfer_cmd) {
        auto config = load_config(config_path);
        apply_overrides(config, seeds, out_dir);
        auto result = jm::train::transfer_run(config, jobs);
        const std::string path = (fs::path(config.out_dir) / "transfer.csv").string();
        write_text(path, result.accuracy.csv());
        json jr;
        for (const auto& [method, taps] : result.jacobian_reduction) jr[method] = taps;
        write_json((fs::path(config.out_dir) / "transfer_jacobian_reduction.json").string(), jr);
        std::cout << result.accuracy.csv() << "written: " << path << "\n";
        return 0;
    }
    if (*ablate_cmd) {
        auto config = load_config(config_path);
        apply_overrides(config, seeds, out_dir);
        auto grid = jm::train::ablate(config, axis, jobs);
        const std::string path =
            (fs::path(config.out_dir) / ("ablate_" + axis + ".csv")).string();
        write_text(path, grid.csv());
        std::cout << grid.csv() << "written: " << path << "\n";
        return 0;
    }
    if (*ve_noise) {
        const std::string dir = out_dir.empty() ? "verify-out" : out_dir;
        auto report = jm::verify::noise_equiv_study(parse_doubles(sigmas_arg), pairs,
                                                    family == "ce", lab_seed);
        write_json((fs::path(dir) / "noise_equiv.json").string(), report.to_json());
        for (std::size_t i = 0; i < report.studies.size(); ++i) {
            const auto& s = report.studies[i];
            std::cout << report.kinds[i] << ": slope "
                      << (s.exact_case ? std::string("exact-case") : jm::strcat(s.slope)) << "\n";
        }
        if (family == "ce") {
            std::cout << "ce-family slopes are reported, not asserted\n";
            return 0;
        }
        std::cout << report.in_band << " slope(s) in [3.5, 4.5]\n";
        if (!report.all_in_band) {
            std::cerr << "invariant violated: slope outside [3.5, 4.5]\n";
            return 4;
        }
        return 0;
    }
    if (*ve_exact) {
        const std::string dir = out_dir.empty() ? "verify-out" : out_dir;
        auto report = jm::verify::exactness_fixture(mc_samples, lab_seed);
        write_json((fs::path(dir) / "exactness.json").string(), report.to_json());
        std::cout << "relu fixture: " << (report.relu_fixture.pass ? "exact" : "NOT exact")
                  << " (residual " << report.relu_fixture.residual << ", 3*stderr "
                  << 3 * report.relu_fixture.stderr_est << ")\n";
        std::cout << "sigmoid control: "
                  << (report.sigmoid_control.pass ? "unexpectedly exact" : "inexact as expected")
                  << " (residual " << report.sigmoid_control.residual << ")\n";
        if (!report.ok) {
            std::cerr << "invariant violated: exactness fixture failed\n";
            return 4;
        }
        return 0;
    }
    if (*ve_bound) {
        const std::string dir = out_dir.empty() ? "verify-out" : out_dir;
        auto trials = jm::verify::bound_trials(bound_seeds);
        auto supersets = jm::verify::superset_trials(bound_seeds);
        json j;
        j["prop3"] = trials.to_json();
        j["superset"] = supersets.to_json();
        write_json((fs::path(dir) / "bound.json").string(), j);
        std::cout << "inequality: " << trials.passes << "/" << trials.trials
                  << " trials hold (min slack " << trials.min_slack << ")\n";
        std::cout << "superset monotonicity: " << supersets.passes << "/" << supersets.trials
                  << " trials hold\n";
        if (trials.passes != trials.trials || supersets.passes != supersets.trials) {
            std::cerr << "invariant violated: bound trial failed\n";
            return 4;
        }
        return 0;
    }
    if (*report_cmd) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(report_dir)) {
            if (entry.path().extension() == ".json" &&
                entry.path().filename().string().rfind("run-", 0) == 0) {
                files.push_back(entry.path());
            }
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) throw jm::ConfigError("report: no run-*.json files found");
        std::string hash;
        std::vector<double> accs;
        std::vector<std::uint64_t> run_seeds;
        for (const auto& f : files) {
            std::ifstream is(f);
            json j;
            is >> j;
            const std::string h = j["config_hash"];
            if (hash.empty()) hash = h;
            if (h != hash) {
                throw jm::ConfigError(jm::strcat("report: refusing to aggregate mixed configs (",
                                                 hash, " vs ", h, " in ", f.string(), ")"));
            }
            accs.push_back(j["test_accuracy"].get<double>());
            run_seeds.push_back(j["seed"].get<std::uint64_t>());
        }
        double mean = 0;
        for (double a : accs) mean += a;
        mean /= static_cast<double>(accs.size());
        double sd = 0;
        for (double a : accs) sd += (a - mean) * (a - mean);
        sd = accs.size() > 1 ? std::sqrt(sd / static_cast<double>(accs.size() - 1)) : 0.0;
        std::ostringstream os;
        os.precision(17);
        os << "config_hash,runs,mean_accuracy,stdev_accuracy\n";
        os << hash << "," << accs.size() << "," << mean << "," << sd << "\n";
        write_text(report_out, os.str());
        std::cout << os.str() << "written: " << report_out << "\n";
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const jm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const jm::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const jm::InvariantViolation& e) {
        std::cerr << "invariant violation: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

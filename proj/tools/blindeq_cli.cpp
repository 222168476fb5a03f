// Command-line front end: experiment dispatch, CSV/plot emission, gradient
// checking. Exit codes: 0 ok, 2 config error, 3 numerical failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "blindeq/blindeq.hpp"

namespace fs = std::filesystem;
using namespace blindeq;

namespace {

int resolve_threads(int cli_threads) {
    if (cli_threads > 0) return cli_threads;
    if (const char* env = std::getenv("BLINDEQ_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    return 1;
}

ExperimentConfig load_cfg(const std::string& config_path, const std::string& preset,
                          std::uint64_t seed_override, bool have_seed,
                          const std::string& profile) {
    ExperimentConfig cfg;
    if (!config_path.empty())
        cfg = load_config_file(config_path);
    else if (!preset.empty())
        cfg = config_preset(preset);
    else
        throw ConfigError("either --config or --preset is required");
    if (profile == "paper")
        apply_profile(cfg, Profile::Paper);
    else if (profile != "desk")
        throw ConfigError("profile must be desk or paper");
    if (have_seed) cfg.seed = seed_override;
    return cfg;
}

/// Sweep points run in a small pool; each point owns its RNG stream so the
/// results are identical for any thread count.
ExperimentRecord run_sweep_parallel(const ExperimentConfig& cfg, int threads) {
    cfg.validate();
    const std::vector<double>& axis = !cfg.snr_db.empty()          ? cfg.snr_db
                                      : !cfg.launch_power_dbm.empty() ? cfg.launch_power_dbm
                                                                      : cfg.pa_power_dbm;
    struct Task {
        double axis;
        EqualizerSpec spec;
        std::size_t index;
    };
    std::vector<Task> tasks;
    std::size_t idx = 0;
    for (double a : axis)
        for (const auto& eq : cfg.equalizers) tasks.push_back({a, eq, idx++});

    const auto t0 = std::chrono::steady_clock::now();
    ExperimentRecord rec;
    rec.config = cfg;
    rec.points.resize(tasks.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            rec.points[tasks[i].index] = run_point(cfg, tasks[i].axis, tasks[i].spec,
                                                   tasks[i].index);
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::future<void>> pool;
        for (int t = 0; t < threads; ++t) pool.push_back(std::async(std::launch::async, worker));
        for (auto& f : pool) f.get();
    }
    rec.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

int emit_outputs(const ExperimentRecord& rec, const std::string& out_dir, bool plot) {
    fs::create_directories(out_dir);
    {
        std::ofstream csv(fs::path(out_dir) / "sweep.csv");
        write_sweep_csv(rec, csv);
    }
    {
        std::ofstream js(fs::path(out_dir) / "record.json");
        write_record_json(rec, js);
    }
    if (plot) {
        std::ofstream svg(fs::path(out_dir) / "sweep.svg");
        write_sweep_svg(rec, svg);
    }
    for (const auto& p : rec.points) {
        std::cout << "point axis=" << p.axis_value << " eq=" << p.equalizer << " ser=" << p.ser
                  << " errors=" << p.errors << " steps=" << p.steps
                  << (p.censored ? " censored=1" : "") << (p.diverged ? " diverged=1" : "")
                  << "\n";
    }
    std::size_t diverged = 0;
    for (const auto& p : rec.points) diverged += p.diverged ? 1 : 0;
    if (!rec.points.empty() && diverged == rec.points.size()) {
        std::cerr << "all points diverged\n";
        return 3;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"blindeq: blind channel equalization experiments"};
    app.require_subcommand(1);

    std::string config_path, preset, out_dir = "out", profile = "desk", grid_arg;
    std::uint64_t seed = 0;
    bool have_seed = false, plot = false;
    int threads = 0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON experiment config");
        cmd->add_option("--preset", preset,
                        "named preset (paper-linear-16qam, paper-ssmf, paper-nzdsf, "
                        "paper-pa-surrogate)");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--profile", profile, "desk (default) or paper scale");
        cmd->add_option("--seed", seed, "master seed override")->each([&](const std::string&) {
            have_seed = true;
        });
        cmd->add_option("--threads", threads, "worker threads (default 1; env BLINDEQ_THREADS)");
    };

    CLI::App* sweep = app.add_subcommand("sweep", "run the configured sweep, write CSV");
    add_common(sweep);
    sweep->add_flag("--plot", plot, "also write a static SVG line plot");

    CLI::App* conv = app.add_subcommand("convergence", "per-update traces on fresh data");
    add_common(conv);
    conv->add_option("--grid", grid_arg, "batchxlr cells, e.g. 64x0.001,1024x0.01")->required();

    CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference gradient suites");
    std::string module = "all";
    bool inject_fault = false;
    grad->add_option("--module", module, "all|fir|mlp|elbo");
    grad->add_flag("--inject-fault", inject_fault)->group(""); // test fixture, hidden

    CLI11_PARSE(app, argc, argv);

    try {
        if (grad->parsed()) {
            if (module != "all" && module != "fir" && module != "mlp" && module != "elbo") {
                std::cerr << "gradcheck: empty module selection '" << module << "'\n";
                return 2;
            }
            auto results = gradcheck_run(module, inject_fault);
            bool ok = true;
            for (const auto& r : results) {
                std::cout << "gradcheck path=" << r.path << " max_rel_err=" << r.max_rel_err
                          << "\n";
                ok = ok && r.max_rel_err < 1e-4;
            }
            return ok ? 0 : 1;
        }

        if (sweep->parsed()) {
            ExperimentConfig cfg = load_cfg(config_path, preset, seed, have_seed, profile);
            ExperimentRecord rec = run_sweep_parallel(cfg, resolve_threads(threads));
            return emit_outputs(rec, out_dir, plot);
        }

        if (conv->parsed()) {
            ExperimentConfig cfg = load_cfg(config_path, preset, seed, have_seed, profile);
            cfg.training.on_the_fly = true;
            cfg.record_trace = true;
            std::vector<std::pair<std::size_t, double>> grid;
            std::stringstream ss(grid_arg);
            std::string cell;
            while (std::getline(ss, cell, ',')) {
                const auto x = cell.find('x');
                if (x == std::string::npos) throw ConfigError("bad --grid cell '" + cell + "'");
                grid.emplace_back(std::stoul(cell.substr(0, x)), std::stod(cell.substr(x + 1)));
            }
            if (grid.empty()) throw ConfigError("empty --grid");
            ExperimentRecord rec = run_convergence(cfg, grid);
            fs::create_directories(out_dir);
            for (const auto& p : rec.points) {
                std::string fname = p.equalizer;
                for (auto& ch : fname)
                    if (ch == '@' || ch == '.') ch = '_';
                std::ofstream tf(fs::path(out_dir) / (fname + "_trace.csv"));
                write_trace_csv(p, tf);
            }
            {
                std::ofstream js(fs::path(out_dir) / "record.json");
                write_record_json(rec, js);
            }
            for (const auto& p : rec.points)
                std::cout << "point axis=" << p.axis_value << " eq=" << p.equalizer
                          << " ser=" << p.ser << (p.diverged ? " diverged=1" : "") << "\n";
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}

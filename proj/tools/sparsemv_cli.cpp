// Command-line driver: bounds, estimator variances, SNR sweeps and figure presets.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "sparsemv/expcli.hpp"
#include "sparsemv/svg_plot.hpp"

using namespace sparsemv;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct CommonFlags {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::int64_t> trials;
    std::optional<int> workers;

    json overrides() const {
        json o = json::object();
        if (seed) o["seed"] = *seed;
        if (trials) o["trials"] = *trials;
        if (workers) o["workers"] = *workers;
        return o;
    }
};

void add_common(CLI::App* cmd, CommonFlags& f, bool needs_config) {
    if (needs_config) cmd->add_option("--config", f.config, "experiment config (JSON)")->required();
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("--seed", f.seed, "Monte Carlo seed");
    cmd->add_option("--trials", f.trials, "Monte Carlo trials per estimate");
    cmd->add_option("--workers", f.workers, "worker threads");
}

json load_document(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path, "cannot open config file");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_json_text(buf.str());
}

// Writes the sweep to <out>/<csv name>, or to stdout when no directory is given.
void emit(const ExperimentConfig& cfg, const SweepResult& result, const std::string& out, bool plot) {
    if (out.empty() && !plot) {
        write_csv(result, std::cout);
    } else {
        const std::filesystem::path dir = out.empty() ? "." : out;
        std::filesystem::create_directories(dir);
        write_csv(result, dir / cfg.csv_name);
        std::cerr << "wrote " << (dir / cfg.csv_name).string() << "\n";
        if (plot) {
            PlotStyle style;
            style.title = cfg.name;
            if (cfg.normalization != Normalization::none) style.y_label = "normalized variance";
            emit_plot(dir / cfg.csv_name, dir / cfg.svg_name, style);
            std::cerr << "wrote " << (dir / cfg.svg_name).string() << "\n";
        }
    }
    if (result.clamped_components > 0)
        std::cerr << "note: " << result.clamped_components
                  << " bound components had inconsistent Monte Carlo mean data and were set to 0\n";
}

int run(int argc, char** argv) {
    CLI::App app{"Variance bounds and estimator benchmarks for sparse linear and covariance models"};
    app.require_subcommand(1);

    CommonFlags bound_f, estimate_f, sweep_f, figure_f;
    auto* bound = app.add_subcommand("bound", "evaluate the configured bounds over the SNR grid");
    add_common(bound, bound_f, true);
    auto* estimate = app.add_subcommand("estimate", "estimate the configured estimator variances");
    add_common(estimate, estimate_f, true);
    auto* sweep = app.add_subcommand("sweep", "variances and bounds over the SNR grid, with a plot");
    add_common(sweep, sweep_f, true);

    auto* figure = app.add_subcommand("figure", "reproduce a preset figure");
    std::string figure_id;
    bool print_config = false;
    figure->add_option("id", figure_id, "fig5_2, fig5_3, fig5_4 or fig6_1")->required();
    figure->add_flag("--print-config", print_config, "print the preset config and exit");
    add_common(figure, figure_f, false);

    auto* plot = app.add_subcommand("plot", "render a sweep CSV as SVG");
    std::string csv_path, svg_path, title;
    plot->add_option("--csv", csv_path, "sweep CSV")->required();
    plot->add_option("--out", svg_path, "SVG path (default: CSV path with .svg)");
    plot->add_option("--title", title, "plot title");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    if (*bound || *estimate || *sweep) {
        const CommonFlags& f = *bound ? bound_f : *estimate ? estimate_f : sweep_f;
        json doc = apply_overrides(load_document(f.config), f.overrides());
        if (*bound && doc.contains("estimators") && doc["estimators"].is_array())
            for (auto& e : doc["estimators"])
                if (e.is_object()) e["variance"] = "none";
        if (*estimate) doc["bounds"] = json::array();
        const ExperimentConfig cfg = parse_config(doc);
        emit(cfg, run_sweep(cfg), f.out, static_cast<bool>(*sweep));
        return 0;
    }
    if (*figure) {
        if (print_config) {
            std::cout << apply_overrides(preset_config(figure_id), figure_f.overrides()).dump(2) << "\n";
            return 0;
        }
        const auto out = reproduce_figure(figure_id, figure_f.overrides(), figure_f.out.empty() ? "." : figure_f.out);
        std::cerr << "wrote " << out.config.string() << ", " << out.csv.string() << ", " << out.svg.string() << "\n";
        if (out.result.clamped_components > 0)
            std::cerr << "note: " << out.result.clamped_components
                      << " bound components had inconsistent Monte Carlo mean data and were set to 0\n";
        return 0;
    }
    std::filesystem::path svg = svg_path.empty() ? std::filesystem::path(csv_path).replace_extension(".svg")
                                                 : std::filesystem::path(svg_path);
    PlotStyle style;
    style.title = title;
    emit_plot(csv_path, svg, style);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericalConsistencyError& e) {
        std::cerr << "numerical consistency error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>

#include "platekit/harness.hpp"

using namespace platekit;

namespace {

constexpr int exit_pass = 0;
constexpr int exit_assertion = 1;
constexpr int exit_config = 2;

std::string experiment_list() {
    std::string s;
    for (const auto& n : experiment_names()) s += (s.empty() ? "" : ", ") + n;
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Wave packet, incidence and localization experiments on the light cone"};
    app.footer("Experiments: " + experiment_list() +
               "\nExit status: 0 all assertions hold, 1 an assertion failed, 2 configuration error.");

    std::string name, target, config_path;
    app.add_option("experiment", name, "Experiment to run")->required();
    app.add_option("target", target, "Experiment swept by `sweep` (incidence, micnorm, sharpness)");
    app.add_option("--config", config_path, "File of key = value lines; flags take precedence");

    // Every flag is kept as text and applied through the same path as the
    // config file, so both accept exactly the same keys and values.
    const std::vector<std::pair<std::string, std::string>> flags{
        {"d", "Spatial dimension (2 or 3)"},
        {"N", "Frequency scale, a power of two; delta = 1/N"},
        {"p", "Exponent, or comma-separated list"},
        {"eps0", "Scale exponent; t is the largest dyadic number <= delta^eps0"},
        {"eps", "Pipeline exponent, default eps0^2 / 2"},
        {"seed", "Random seed"},
        {"mode", "Family mode: focusing, tiling or uniform"},
        {"count", "Number of fields or instances"},
        {"lambda", "Level, or comma-separated list"},
        {"alpha", "Exponent alpha of the weak-type predicate"},
        {"plates", "Family size for incidence experiments"},
        {"fraction", "Share of delta-cells in random point sets"},
        {"scales", "Comma-separated N values for sweep"},
        {"out", "Output directory"},
        {"jobs", "Worker threads"},
        {"C0", "Plate length constant"},
        {"C1", "Dual plate length constant"},
        {"Csep", "Separation budget"},
        {"Ccomp", "Comparability dilate"},
        {"M", "Decay order of the plate bumps"},
        {"M0", "Tail exponent of the Schwartz relation"},
        {"C9", "Lower level exponent of the scale-change pipeline"},
        {"Kprime", "Discarded decomposition levels exponent"},
    };
    std::map<std::string, std::string> given;
    std::map<std::string, CLI::Option*> opts;
    for (const auto& [key, help] : flags) opts[key] = app.add_option("--" + key, given[key], help);
    bool force = false;
    app.add_flag("--force", force, "Lift the memory guard on d = 3 FFT experiments");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? exit_pass : exit_config;
    }

    Experiment ex;
    try {
        std::map<std::string, std::string> settings;
        if (!config_path.empty()) settings = read_config_file(config_path);
        for (const auto& [key, opt] : opts)
            if (opt->count() > 0) settings[key] = given[key];
        if (!target.empty()) settings["target"] = target;
        if (force) settings["force"] = "1";
        ex.name = name;
        // eps follows eps0 unless set explicitly.
        for (const auto& [key, value] : settings) apply_setting(ex, key, value);
        if (!settings.count("eps")) ex.cfg.eps = ex.cfg.eps0 * ex.cfg.eps0 / 2;
        validate_experiment(ex);
    } catch (const std::exception& e) {
        std::cerr << "platekit: " << e.what() << '\n';
        return exit_config;
    }

    Report rep;
    try {
        rep = run_experiment(ex);
        rep.write(ex.out);
    } catch (const std::exception& e) {
        std::cerr << "platekit: " << ex.name << ": " << e.what() << '\n';
        return exit_config;
    }
    const std::size_t failed = rep.failures();
    std::cout << rep.name << ": " << (failed ? "FAIL" : "pass") << " (" << rep.assertions.size() - failed << "/"
              << rep.assertions.size() << " assertions hold, " << rep.rows.size() << " rows) -> " << ex.out << "/"
              << rep.name << ".csv\n";
    for (const auto& a : rep.assertions)
        if (!a.holds())
            std::cout << "  failed: " << a.name << " (lhs " << format_number(a.lhs) << ", bound "
                      << format_number(a.bound()) << ")\n";
    return failed ? exit_assertion : exit_pass;
}

#pragma once

// Command-line frontend: config ingestion, dispatch, CSV and manifest output.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "config.hpp"

namespace mpemba {

struct RunOptions {
    std::string out_dir;  // overrides output.dir when nonempty
    int jobs = 1;
    bool dry_run = false;
};

inline json error_json(const std::string& kind, const std::string& message, const std::string& path = "")
{
    json j{{"error", kind}, {"message", message}};
    if (!path.empty()) j["path"] = path;
    return j;
}

// Runs every config of the bundle; writes CSVs, effective_config.json and
// manifest.json under the output directory. Returns the manifest.
inline json run(const ConfigBundle& bundle, const RunOptions& opt, std::ostream& out)
{
    namespace fs = std::filesystem;
    require(opt.jobs >= 1, "must be at least 1", "--jobs");
    if (opt.dry_run) {
        out << "config valid: " << bundle.runs.size() << " run(s), no outputs written\n";
        return json::object();
    }
    const fs::path dir = opt.out_dir.empty() ? fs::path(bundle.runs.front().output.dir) : fs::path(opt.out_dir);
    const bool nested = bundle.runs.size() > 1;
    json manifest;
    manifest["schema"] = "mpemba-lab v1";
    manifest["name"] = bundle.name;
    manifest["jobs"] = opt.jobs;
    manifest["config"] = emit_config(bundle);
    manifest["runs"] = json::array();
    fs::create_directories(dir);
    write_atomically(dir / "effective_config.json", manifest["config"].dump(2) + "\n");
    for (const auto& spec : bundle.runs) {
        const auto res = run_experiment(spec, opt.jobs);
        const fs::path sub = nested ? dir / spec.name : dir;
        json files = json::array();
        for (const auto& [rel, rec] : res.files) {
            persist_run(rec, sub / rel);
            files.push_back((nested ? spec.name + "/" : std::string()) + rel);
        }
        manifest["runs"].push_back({{"name", spec.name}, {"files", files}, {"summary", res.summary}});
        out << spec.name << ": " << res.summary_line << "\n";
        out.flush();
    }
    write_atomically(dir / "manifest.json", manifest.dump(2) + "\n");
    return manifest;
}

inline std::string read_file(const std::string& path)
{
    std::ifstream is(path);
    if (!is) throw ValidationError("cannot read config file", path);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// Exit codes: 0 success, 2 validation, 3 numerical failure, 1 anything else.
inline int run_cli(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    CLI::App app{"Quantum Mpemba experiments on weakly dissipative spin chains", "mpemba-lab"};
    std::string config_path, preset_name;
    RunOptions opt;
    auto* cfg = app.add_option("--config", config_path, "Run-config JSON document");
    auto* pre = app.add_option("--preset", preset_name, "Named preset")->excludes(cfg);
    app.add_option("--out", opt.out_dir, "Output directory (overrides output.dir)");
    app.add_option("--jobs", opt.jobs, "Worker cap")->check(CLI::PositiveNumber);
    app.add_flag("--dry-run", opt.dry_run, "Validate only");
    bool list = false;
    app.add_flag("--list-presets", list, "Print preset names");
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << error_json("ValidationError", e.what()).dump() << "\n";
        return 2;
    }
    try {
        if (list) {
            for (const auto& n : preset_names()) out << n << "\n";
            return 0;
        }
        if (!*cfg && !*pre) throw ValidationError("one of --config or --preset is required", "--config");
        const ConfigBundle bundle = *pre ? preset(preset_name) : parse_config(read_file(config_path));
        run(bundle, opt, out);
        return 0;
    } catch (const ValidationError& e) {
        err << error_json(e.kind(), e.what(), e.path()).dump() << "\n";
        return 2;
    } catch (const SchemaError& e) {
        err << error_json(e.kind(), e.what()).dump() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        err << error_json(e.kind(), e.what()).dump() << "\n";
        return 3;
    } catch (const std::exception& e) {
        err << error_json("Error", e.what()).dump() << "\n";
        return 1;
    }
}

}  // namespace mpemba

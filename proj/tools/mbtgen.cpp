#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "mbt/emitters.hpp"
#include "mbt/explorer.hpp"
#include "mbt/model_io.hpp"

namespace fs = std::filesystem;

namespace {

struct Loaded {
    mbt::ModelDocument doc;
    mbt::SystemModel model;
    std::vector<mbt::Violation> violations;
};

bool read_file(const fs::path& path, std::string& out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        return false;
    }
    out.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return true;
}

bool write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
    out.flush();
    return out.good();
}

/// Reads and lowers the model; 0 on success, 2 on I/O or parse failure.
/// Validation findings are returned, not judged.
int load(const std::string& model_path, const std::string& controls_dir, Loaded& out) {
    std::string text;
    if (!read_file(model_path, text)) {
        std::cerr << "error: cannot open " << model_path << "\n";
        return 2;
    }
    try {
        out.doc = mbt::parse_model(text);
    } catch (const mbt::SchemaError& e) {
        std::cerr << "error: " << model_path;
        if (e.line() > 0) {
            std::cerr << ":" << e.line();
        }
        std::cerr << ": " << e.what() << "\n";
        return 2;
    }

    std::map<std::string, mbt::ControlDefinition> controls;
    if (!controls_dir.empty()) {
        for (const mbt::ApplicationDef& app : out.doc.applications) {
            for (const mbt::ViewDef& view : app.views) {
                if (view.controls_file.empty()) {
                    continue;
                }
                const fs::path path = fs::path(controls_dir) / view.controls_file;
                std::string ctext;
                if (!read_file(path, ctext)) {
                    std::cerr << "note: no controls file " << path.string() << " for view "
                              << view.name << "\n";
                    continue;
                }
                try {
                    controls[view.name] = mbt::parse_controls(ctext);
                } catch (const mbt::SchemaError& e) {
                    std::cerr << "error: " << path.string() << ": " << e.what() << "\n";
                    return 2;
                }
            }
        }
    }

    mbt::BuildResult built = mbt::build_system_model(out.doc, controls);
    out.model = std::move(built.model);
    out.violations = std::move(built.violations);
    return 0;
}

int report_invalid(const Loaded& loaded) {
    for (const mbt::Violation& v : loaded.violations) {
        std::cerr << v.format() << "\n";
    }
    return 1;
}

std::string case_file_name(size_t ordinal, const char* extension) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "test_%04zu.%s", ordinal, extension);
    return buf;
}

bool is_generated_name(const std::string& name) {
    if (name == "report.csv" || name == "report.json" || name == "model.pml") {
        return true;
    }
    if (!name.starts_with("test_")) {
        return false;
    }
    const size_t dot = name.rfind('.');
    if (dot == std::string::npos || (name.substr(dot) != ".json" && name.substr(dot) != ".java")) {
        return false;
    }
    const std::string digits = name.substr(5, dot - 5);
    return !digits.empty() &&
           std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; });
}

int cmd_validate(const std::string& model_path, const std::string& controls_dir) {
    Loaded loaded;
    if (int rc = load(model_path, controls_dir, loaded); rc != 0) {
        return rc;
    }
    for (const mbt::Violation& v : loaded.violations) {
        std::cout << v.format() << "\n";
    }
    if (mbt::has_errors(loaded.violations)) {
        return 1;
    }
    std::cout << "OK: " << loaded.model.machines.size() << " machines, "
              << loaded.model.devices.size() << " devices, " << loaded.model.channels.size()
              << " channels\n";
    return 0;
}

struct GenerateOptions {
    std::string model_path;
    std::string controls_dir;
    std::string out_dir;
    int max_transitions = 10;
    std::size_t global_cap = 10'000'000;
    std::string policy = "strict";
    bool reduce = false;
    std::string formats = "json";
    bool require_all_finished = false;
    bool emit_truncated = false;
    int jobs = 1;
    bool force = false;
    bool verify = false;
};

int cmd_generate(const GenerateOptions& opt) {
    std::set<std::string> formats;
    {
        std::string token;
        for (size_t i = 0; i <= opt.formats.size(); ++i) {
            if (i == opt.formats.size() || opt.formats[i] == ',') {
                if (!token.empty()) {
                    if (token != "json" && token != "uiauto" && token != "promela") {
                        std::cerr << "error: unknown format '" << token << "'\n";
                        return 1;
                    }
                    formats.insert(token);
                    token.clear();
                }
            } else if (!std::isspace(static_cast<unsigned char>(opt.formats[i]))) {
                token += opt.formats[i];
            }
        }
        if (formats.empty()) {
            formats.insert("json");
        }
    }

    Loaded loaded;
    if (int rc = load(opt.model_path, opt.controls_dir, loaded); rc != 0) {
        return rc;
    }
    if (mbt::has_errors(loaded.violations)) {
        return report_invalid(loaded);
    }
    for (const mbt::Violation& v : loaded.violations) {
        std::cerr << v.format() << "\n";
    }

    const mbt::ReceivePolicy policy =
        opt.policy == "relaxed" ? mbt::ReceivePolicy::relaxed : mbt::ReceivePolicy::strict;
    mbt::ExplorationBound bound;
    bound.max_transitions_per_device = opt.max_transitions;
    bound.require_all_finished = opt.require_all_finished;
    bound.emit_truncated = opt.emit_truncated;
    bound.global_expansion_cap = opt.global_cap;

    const auto t0 = std::chrono::steady_clock::now();
    const mbt::ExplorationResult result =
        mbt::explore_multi(loaded.model, bound, policy, opt.reduce, opt.jobs);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (result.cap_hit) {
        std::cerr << "error: global expansion cap of " << opt.global_cap
                  << " nodes hit; no outputs written (raise --global-cap or lower "
                     "--max-transitions)\n";
        return 3;
    }

    std::error_code ec;
    fs::create_directories(opt.out_dir, ec);
    if (ec) {
        std::cerr << "error: cannot create " << opt.out_dir << ": " << ec.message() << "\n";
        return 2;
    }

    struct Planned {
        fs::path path;
        std::string content;
    };
    std::vector<Planned> planned;
    std::vector<std::string> json_texts(result.cases.size());
    try {
        for (size_t i = 0; i < result.cases.size(); ++i) {
            json_texts[i] = mbt::emit_script(result.cases[i], loaded.model,
                                             mbt::ScriptFormat::json, bound, policy);
            if (formats.contains("json")) {
                planned.push_back(
                    {fs::path(opt.out_dir) / case_file_name(i + 1, "json"), json_texts[i]});
            }
            if (formats.contains("uiauto")) {
                planned.push_back({fs::path(opt.out_dir) / case_file_name(i + 1, "java"),
                                   mbt::emit_script(result.cases[i], loaded.model,
                                                    mbt::ScriptFormat::uiauto, bound, policy)});
            }
        }
        if (formats.contains("promela")) {
            planned.push_back(
                {fs::path(opt.out_dir) / "model.pml", mbt::emit_promela(loaded.model, bound)});
        }
    } catch (const mbt::EmitError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    const mbt::GenerationReport report =
        mbt::make_report(result, loaded.model, bound, policy, opt.reduce, seconds);
    planned.push_back(
        {fs::path(opt.out_dir) / "report.csv", mbt::emit_report(report, mbt::ReportFormat::csv)});
    planned.push_back({fs::path(opt.out_dir) / "report.json",
                       mbt::emit_report(report, mbt::ReportFormat::json)});

    if (!opt.force) {
        std::vector<std::string> clashes;
        for (const Planned& p : planned) {
            if (fs::exists(p.path)) {
                clashes.push_back(p.path.string());
            }
        }
        if (!clashes.empty()) {
            std::cerr << "error: refusing to overwrite without --force:\n";
            for (const std::string& c : clashes) {
                std::cerr << "  " << c << "\n";
            }
            return 4;
        }
    } else {
        // A forced rerun starts clean so stale numbered files from a larger
        // earlier run cannot survive next to the new set.
        for (const fs::directory_entry& entry : fs::directory_iterator(opt.out_dir)) {
            if (entry.is_regular_file() && is_generated_name(entry.path().filename().string())) {
                fs::remove(entry.path(), ec);
            }
        }
    }

    for (const Planned& p : planned) {
        if (!write_file(p.path, p.content)) {
            std::cerr << "error: cannot write " << p.path.string() << "\n";
            return 2;
        }
    }

    std::cout << "wrote " << result.cases.size() << " test cases to " << opt.out_dir << "\n";
    std::cout << "wrote " << (fs::path(opt.out_dir) / "report.csv").string() << "\n";
    std::cout << "wrote " << (fs::path(opt.out_dir) / "report.json").string() << "\n";
    if (formats.contains("promela")) {
        std::cout << "wrote " << (fs::path(opt.out_dir) / "model.pml").string() << "\n";
    }

    if (opt.verify) {
        for (size_t i = 0; i < json_texts.size(); ++i) {
            std::string error;
            try {
                const mbt::ActionScript script = mbt::parse_action_script(json_texts[i]);
                if (!mbt::replay_script(script, loaded.model, &error)) {
                    std::cerr << "error: verify failed for " << case_file_name(i + 1, "json")
                              << ": " << error << "\n";
                    return 5;
                }
            } catch (const mbt::EmitError& e) {
                std::cerr << "error: verify failed for " << case_file_name(i + 1, "json") << ": "
                          << e.what() << "\n";
                return 5;
            }
        }
        std::cout << "verified " << json_texts.size() << "/" << json_texts.size()
                  << " scripts\n";
    }
    return 0;
}

int cmd_emit_promela(const std::string& model_path, const std::string& controls_dir,
                     const std::string& out_dir, int max_transitions, bool force) {
    Loaded loaded;
    if (int rc = load(model_path, controls_dir, loaded); rc != 0) {
        return rc;
    }
    if (mbt::has_errors(loaded.violations)) {
        return report_invalid(loaded);
    }

    mbt::ExplorationBound bound;
    bound.max_transitions_per_device = max_transitions;
    std::string text;
    try {
        text = mbt::emit_promela(loaded.model, bound);
    } catch (const mbt::EmitError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) {
        std::cerr << "error: cannot create " << out_dir << ": " << ec.message() << "\n";
        return 2;
    }
    const fs::path path = fs::path(out_dir) / "model.pml";
    if (fs::exists(path) && !force) {
        std::cerr << "error: refusing to overwrite " << path.string() << " without --force\n";
        return 4;
    }
    if (!write_file(path, text)) {
        std::cerr << "error: cannot write " << path.string() << "\n";
        return 2;
    }
    std::cout << path.string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bounded exhaustive test-case generation from composed view state machines"};
    app.require_subcommand(1);

    std::string v_model;
    std::string v_controls;
    CLI::App* validate =
        app.add_subcommand("validate", "Parse a model and report every validation finding");
    validate->add_option("--model", v_model, "Model file (XML or JSON)")->required();
    validate->add_option("--controls-dir", v_controls,
                         "Directory holding per-view control definition files");

    GenerateOptions gen;
    CLI::App* generate = app.add_subcommand(
        "generate", "Enumerate bounded interaction sequences and write scripts plus reports");
    generate->add_option("--model", gen.model_path, "Model file (XML or JSON)")->required();
    generate->add_option("--controls-dir", gen.controls_dir,
                         "Directory holding per-view control definition files");
    generate->add_option("--out", gen.out_dir, "Output directory")->required();
    generate
        ->add_option("--max-transitions", gen.max_transitions,
                     "Per-device bound on labelled transitions")
        ->capture_default_str();
    generate->add_option("--global-cap", gen.global_cap, "Hard cap on expanded search nodes")
        ->capture_default_str();
    generate->add_option("--policy", gen.policy, "Receive policy")
        ->check(CLI::IsMember({"strict", "relaxed"}))
        ->capture_default_str();
    generate->add_flag("--reduce", gen.reduce,
                       "Keep one representative per independence-equivalence class");
    generate->add_option("--format", gen.formats, "Comma-separated outputs: json,uiauto,promela")
        ->capture_default_str();
    generate->add_flag("--require-all-finished", gen.require_all_finished,
                       "Keep only traces where every device finished");
    generate->add_flag("--emit-truncated", gen.emit_truncated,
                       "Also emit bound-truncated prefixes");
    generate->add_option("--jobs", gen.jobs, "Worker threads; output is independent of the count")
        ->capture_default_str();
    generate->add_flag("--force", gen.force, "Overwrite existing generated files");
    generate->add_flag("--verify", gen.verify, "Replay every emitted script as a self-check");

    std::string p_model;
    std::string p_controls;
    std::string p_out = ".";
    int p_max_tr = 10;
    bool p_force = false;
    CLI::App* promela =
        app.add_subcommand("emit-promela", "Write the PROMELA encoding of the model");
    promela->add_option("--model", p_model, "Model file (XML or JSON)")->required();
    promela->add_option("--controls-dir", p_controls,
                        "Directory holding per-view control definition files");
    promela->add_option("--out", p_out, "Output directory")->capture_default_str();
    promela
        ->add_option("--max-transitions", p_max_tr, "Per-device bound on labelled transitions")
        ->capture_default_str();
    promela->add_flag("--force", p_force, "Overwrite an existing model.pml");

    CLI11_PARSE(app, argc, argv);

    if (validate->parsed()) {
        return cmd_validate(v_model, v_controls);
    }
    if (generate->parsed()) {
        return cmd_generate(gen);
    }
    return cmd_emit_promela(p_model, p_controls, p_out, p_max_tr, p_force);
}

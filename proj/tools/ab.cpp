// Command-line front end; all work happens behind the C API.
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "audiobert.h"

namespace {

struct ConfigHandle {
    ab_config* c = nullptr;
    ~ConfigHandle() { ab_config_free(c); }
};

struct OwnedString {
    char* s = nullptr;
    ~OwnedString() { ab_string_free(s); }
};

int fail(ab_status st) {
    std::fprintf(stderr, "error: %s\n", ab_last_error());
    return static_cast<int>(st);
}

// defaults, then the file, then AB_* environment variables, then --set flags
int build_config(const std::string& path, const std::vector<std::string>& sets, ConfigHandle& out) {
    const ab_status st =
        path.empty() ? ab_config_default(&out.c) : ab_config_load(path.c_str(), &out.c);
    if (st != AB_OK) return fail(st);
    if (const ab_status env = ab_config_apply_env(out.c); env != AB_OK) return fail(env);
    for (const auto& kv : sets)
        if (const ab_status set = ab_config_set(out.c, kv.c_str()); set != AB_OK) return fail(set);
    return 0;
}

int print_result(ab_status st, const OwnedString& text) {
    if (st != AB_OK) return fail(st);
    const size_t n = std::strlen(text.s);
    std::fputs(text.s, stdout);
    if (n == 0 || text.s[n - 1] != '\n') std::fputc('\n', stdout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"auditory-knowledge language model pipeline"};
    app.set_version_flag("--version", ab_version());
    app.require_subcommand(1);
    app.fallthrough();  // -c/--set are accepted before or after the subcommand

    std::string config_path;
    std::vector<std::string> sets;
    app.add_option("-c,--config", config_path, "configuration file (section.key=value)");
    app.add_option("--set", sets, "override one key, e.g. --set detector.lr=1e-3")
        ->allow_extra_args(false);

    auto* gen = app.add_subcommand("gen-data", "generate the benchmark dataset");

    std::string phase;
    auto* train = app.add_subcommand("train", "train one phase");
    train->add_option("phase", phase, "detector | clap | audiobert")->required();

    auto* index = app.add_subcommand("build-index", "embed all clips into the retrieval index");

    std::string split = "test";
    auto* eval = app.add_subcommand("eval", "evaluate a split, model beside baseline");
    eval->add_option("split", split, "train | dev | test | gen");

    std::string prompt;
    bool as_json = false;
    auto* query = app.add_subcommand("query", "answer one [MASK] prompt");
    query->add_option("prompt", prompt, "prompt containing one [MASK]")->required();
    query->add_flag("--json", as_json, "emit the trace as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return static_cast<int>(AB_ERR_USAGE);
    }

    ConfigHandle cfg;
    if (const int rc = build_config(config_path, sets, cfg); rc != 0) return rc;

    OwnedString out;
    ab_status st = AB_OK;
    if (gen->parsed())
        st = ab_gen_data(cfg.c, &out.s);
    else if (train->parsed())
        st = ab_train(cfg.c, phase.c_str(), &out.s);
    else if (index->parsed())
        st = ab_build_index(cfg.c, &out.s);
    else if (eval->parsed())
        st = ab_eval(cfg.c, split.c_str(), &out.s);
    else if (query->parsed())
        st = ab_query(cfg.c, prompt.c_str(), as_json ? 1 : 0, &out.s);
    return print_result(st, out);
}

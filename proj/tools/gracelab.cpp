#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "gracelab/error.hpp"
#include "gracelab/store.hpp"

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string target;
    bool quiet = false;
};

gracelab::store::Pipeline open(const Options& o) {
    auto cfg = o.config.empty() ? gracelab::store::config_from_json(nlohmann::json::object(), o.seed)
                                : gracelab::store::load_config(o.config, o.seed);
    if (const char* root = std::getenv("GRACELAB_OUTPUT_ROOT"); root != nullptr && *root != '\0') {
        cfg.output_dir = root;
    }
    return gracelab::store::Pipeline(std::move(cfg));
}

void add_common(CLI::App* cmd, Options& o) {
    cmd->add_option("-c,--config", o.config, "experiment config (JSON); built-in defaults when omitted");
    cmd->add_option("-s,--seed", o.seed, "override master_seed");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gracelab: GRACE unlearning and data-influence analysis on synthetic corpora"};
    app.require_subcommand(1);
    Options o;
    app.add_flag("-q,--quiet", o.quiet, "only log warnings and errors");

    auto* generate = app.add_subcommand("generate", "generate the synthetic corpus");
    auto* pretrain = app.add_subcommand("pretrain", "pretrain the model on every domain");
    auto* unlearn = app.add_subcommand("unlearn", "run GRACE on one target domain");
    auto* evaluate = app.add_subcommand("evaluate", "score capabilities before and after unlearning");
    auto* analyze = app.add_subcommand("analyze", "degradation ratios, correlations, clustering, relations");
    auto* report = app.add_subcommand("report", "write the report bundle");
    auto* run = app.add_subcommand("run", "full pipeline, resuming from the first incomplete stage");
    auto* defaults = app.add_subcommand("defaults", "print the default config with every field");
    for (auto* cmd : {generate, pretrain, unlearn, evaluate, analyze, report, run}) {
        add_common(cmd, o);
    }
    unlearn->add_option("-t,--target", o.target, "domain to unlearn")->required();

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(o.quiet ? spdlog::level::warn : spdlog::level::info);

    std::string stage = "CONFIG";
    try {
        if (defaults->parsed()) {
            std::cout << gracelab::store::default_config_json().dump(2) << '\n';
            return 0;
        }
        auto p = open(o);
        stage = "RUN";
        if (generate->parsed()) {
            p.generate();
        } else if (pretrain->parsed()) {
            p.pretrain();
        } else if (unlearn->parsed()) {
            p.unlearn(o.target);
        } else if (evaluate->parsed()) {
            p.evaluate();
        } else if (analyze->parsed()) {
            p.analyze();
        } else if (report->parsed()) {
            p.report();
        } else if (run->parsed()) {
            p.run();
        }
        std::cout << p.run_dir().string() << '\n';
        return 0;
    } catch (const gracelab::store::StageError& e) {
        std::cerr << "gracelab: stage " << e.stage() << " failed: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "gracelab: stage " << stage << " failed: " << e.what() << '\n';
        return 2;
    }
}

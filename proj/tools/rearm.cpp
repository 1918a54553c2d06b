// rearm: experiment runner for the multi-modal graph recommender.

#include "rearm/rearm.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

struct Overrides {
    std::string config_file;
    std::map<std::string, std::string> values;
};

void add_config_options(CLI::App* cmd, Overrides& ov) {
    cmd->add_option("--config,-c", ov.config_file, "key = value config file");
    for (const auto& key : rearm::config_keys()) {
        std::string help = key.help;
        if (*key.default_value) help += std::string(" [") + key.default_value + "]";
        cmd->add_option_function<std::string>(
            std::string("--") + key.name, [&ov, name = std::string(key.name)](const std::string& v) { ov.values[name] = v; },
            help);
    }
}

rearm::RunConfig resolve(const Overrides& ov) {
    rearm::RunConfig cfg;
    if (!ov.config_file.empty()) cfg.load(ov.config_file);
    for (const auto& [k, v] : ov.values) cfg.set(k, v);
    rearm::set_threads(static_cast<int>(cfg.integer("threads")));
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"REARM multi-modal graph recommender"};
    app.require_subcommand(1);

    struct Command {
        const char* name;
        const char* help;
        std::function<void(const rearm::RunConfig&)> run;
    };
    const std::vector<Command> commands{
        {"build-graphs", "build (or reuse) the cached homogeneous and bipartite graphs",
         [](const rearm::RunConfig& c) { rearm::cmd_build_graphs(c); }},
        {"train", "train, then write checkpoint, history and report", [](const rearm::RunConfig& c) { rearm::cmd_train(c); }},
        {"evaluate", "evaluate a checkpoint on val and test", [](const rearm::RunConfig& c) { rearm::cmd_evaluate(c); }},
        {"ablate", "train the full model and all ablation variants", [](const rearm::RunConfig& c) { rearm::cmd_ablate(c); }},
        {"diff-matrix", "sigmoid score difference between two checkpoints",
         [](const rearm::RunConfig& c) { rearm::cmd_diff_matrix(c); }},
    };

    std::vector<Overrides> overrides(commands.size());
    std::vector<CLI::App*> subs;
    for (std::size_t k = 0; k < commands.size(); ++k) {
        auto* sub = app.add_subcommand(commands[k].name, commands[k].help);
        add_config_options(sub, overrides[k]);
        subs.push_back(sub);
    }

    rearm::SyntheticSpec spec;
    std::string synth_dir = "synthetic";
    auto* synth = app.add_subcommand("synth", "write the two-block synthetic dataset and a config");
    synth->add_option("--dir", synth_dir, "output directory")->capture_default_str();
    synth->add_option("--users", spec.n_users)->capture_default_str();
    synth->add_option("--items", spec.n_items)->capture_default_str();
    synth->add_option("--blocks", spec.blocks)->capture_default_str();
    synth->add_option("--noise", spec.noise)->capture_default_str();
    synth->add_option("--seed", spec.seed)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(rearm::ErrorKind::usage);
    }

    try {
        if (synth->parsed()) {
            rearm::cmd_synth(synth_dir, spec);
            return 0;
        }
        for (std::size_t k = 0; k < commands.size(); ++k)
            if (subs[k]->parsed()) commands[k].run(resolve(overrides[k]));
    } catch (const rearm::Error& e) {
        std::cerr << "rearm: " << e.what() << "\n";
        return static_cast<int>(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "rearm: " << e.what() << "\n";
        return static_cast<int>(rearm::ErrorKind::data);
    }
    return 0;
}

// Copyright 2026 The divhf Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <iostream>

#include "divhf/errors.hpp"
#include "divhf/parallel.hpp"
#include "divhf/pipeline.hpp"

namespace {

std::atomic<bool> interrupted{false};

extern "C" void on_sigint(int) { interrupted.store(true); }

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    int threads = 0;
};

void add_common(CLI::App* cmd, Common& c)
{
    cmd->add_option("--config", c.config, "run configuration (JSON)")->required();
    cmd->add_option("--seed", c.seed, "override every seed");
    cmd->add_option("--out", c.out, "override the run directory");
    cmd->add_option("--threads", c.threads, "OpenMP threads (0 = runtime default)")->check(CLI::NonNegativeNumber);
}

divhf::cli::RunConfig resolve(const Common& c)
{
    auto cfg = divhf::cli::load_config(c.config);
    if (c.seed)
        divhf::cli::override_seeds(cfg, *c.seed);
    if (!c.out.empty())
        cfg.output_dir = c.out;
    cfg.validate();
    if (c.threads > 0)
        divhf::parallel::set_threads(c.threads);
    return cfg;
}

} // namespace

int main(int argc, char** argv)
{
    using namespace divhf::cli;

    CLI::App app{"divhf: preference-learned behaviour descriptors for quality-diversity search"};
    app.require_subcommand(1);

    Common common;
    std::string mode = "oracle";
    std::string method = "divhf";
    std::string checkpoint;

    auto* c_collect = app.add_subcommand("collect", "simulate the trajectory dataset");
    add_common(c_collect, common);

    auto* c_label = app.add_subcommand("label", "label triplet queries");
    add_common(c_label, common);
    c_label->add_option("--mode", mode, "oracle or serve")->check(CLI::IsMember({"oracle", "serve"}));

    auto* c_train = app.add_subcommand("train", "train a behaviour descriptor");
    add_common(c_train, common);
    c_train->add_option("--method", method, "descriptor method")->check(CLI::IsMember(train_methods));

    auto* c_me = app.add_subcommand("run-me", "run MAP-Elites with a descriptor");
    add_common(c_me, common);
    c_me->add_option("--method", method, "descriptor method")->check(CLI::IsMember(me_methods));
    c_me->add_option("--checkpoint", checkpoint, "checkpoint path (default: the method's run checkpoint)");

    auto* c_report = app.add_subcommand("report", "aggregate metrics into CSV tables");
    add_common(c_report, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? exit_ok : exit_bad_config;
    }

    try {
        const auto cfg = resolve(common);
        if (c_collect->parsed()) {
            collect(cfg);
            std::cout << "collected " << cfg.dataset.trajectories << " trajectories into " << cfg.output_dir << "\n";
        } else if (c_label->parsed()) {
            if (mode == "oracle") {
                const auto s = label_oracle(cfg);
                std::cout << "wrote " << s.written << " preferences (" << s.ties << " ties, " << s.dropped
                          << " dropped)\n";
            } else {
                std::signal(SIGINT, on_sigint);
                label_serve(cfg, interrupted, [&](int port) {
                    std::cout << "labeling service on http://" << cfg.service.host << ":" << port
                              << " (Ctrl-C to stop)" << std::endl;
                });
            }
        } else if (c_train->parsed()) {
            train(cfg, method);
            std::cout << "trained " << method << "\n";
        } else if (c_me->parsed()) {
            run_me(cfg, method, checkpoint);
            std::cout << "MAP-Elites finished for " << method << "\n";
        } else if (c_report->parsed()) {
            report(cfg);
            std::cout << "report written to " << (RunPaths{cfg.output_dir}.report_dir()).string() << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return exit_ok;
}

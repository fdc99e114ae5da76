// forge: command-line front end for the knowledge-graph pipeline.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <csignal>
#include <iostream>

#include "forge/generation.hpp"
#include "forge/mock_backend.hpp"
#include "forge/pipeline.hpp"
#include "forge/population.hpp"

namespace {

std::function<void()> g_stop;

void on_signal(int) {
    if (g_stop) g_stop();
}

int fail(int code, const std::string& message) {
    spdlog::error("{}", message);
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Build an intention knowledge graph from co-buy data"};
    app.require_subcommand(1);

    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<double> threshold;
    std::optional<std::size_t> min_support;
    bool force = false;
    bool verbose = false;

    std::vector<std::string> stages = forge::pipeline::stage_names();
    stages.push_back("all");
    for (const auto& name : stages) {
        auto* sub = app.add_subcommand(name, name == "all" ? "Run every batch stage in order" : "Run the " + name + " stage");
        sub->add_option("-c,--config", config, "Pipeline configuration (INI)")->required();
        sub->add_option("--seed", seed, "Override run.seed");
        sub->add_option("--threshold", threshold, "Override population.plau_threshold");
        sub->add_option("--min-support", min_support, "Override mining.min_support");
        sub->add_flag("-f,--force", force, "Ignore matching manifests");
        sub->add_flag("-v,--verbose", verbose, "Debug logging");
    }

    std::string pool_path, host = "127.0.0.1";
    int port = 8000;
    auto* mock = app.add_subcommand("mock-backend", "Serve canned generations and hash-based scores");
    mock->add_option("--pool", pool_path, "relation<TAB>sentence file")->required();
    mock->add_option("--host", host);
    mock->add_option("--port", port);

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

    namespace pl = forge::pipeline;
    try {
        if (mock->parsed()) {
            forge::mock::MockServer server(forge::mock::load_tail_pool(pool_path));
            const int bound = server.bind(host, port);
            if (bound < 0) return fail(1, "cannot bind " + host + ":" + std::to_string(port));
            g_stop = [&server] { server.stop(); };
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            spdlog::info("mock backend on http://{}:{}", host, bound);
            server.listen();
            return 0;
        }

        const std::string stage = app.get_subcommands().front()->get_name();
        auto cfg = pl::load_config(config);
        pl::apply(cfg, {seed, threshold, min_support});

        if (stage == "annotate-serve") {
            pl::serve_annotation(cfg, [](forge::annotation::AnnotationServer& server, int) {
                g_stop = [&server] { server.stop(); };
                std::signal(SIGINT, on_signal);
                std::signal(SIGTERM, on_signal);
            });
            return 0;
        }
        pl::run_stage(stage, cfg, {force});
        return 0;
    } catch (const pl::MissingInputError& e) {
        return fail(2, e.what());
    } catch (const pl::ConfigError& e) {
        return fail(3, e.what());
    } catch (const forge::DomainError& e) {
        return fail(3, e.what());
    } catch (const forge::FatalInputError& e) {
        return fail(3, e.what());
    } catch (const forge::kg::ReferentialError& e) {
        return fail(3, e.what());
    } catch (const std::exception& e) {
        return fail(1, e.what());
    }
}

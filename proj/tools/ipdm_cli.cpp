// Command line front end. Every verb except `serve` builds the same JSON config the HTTP job API
// accepts and hands it to run_command.

#include "ipdm/commands.hpp"
#include "ipdm/parallel.hpp"
#include "ipdm/service.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <csignal>
#include <functional>
#include <iostream>
#include <map>
#include <thread>

using nlohmann::json;

namespace
{

struct Verb
{
    CLI::App* app = nullptr;
    std::vector<std::function<void(json&)>> fill;
    std::string out = ".";
};

class VerbBuilder
{
public:
    VerbBuilder(Verb& v) : v_(v) {}

    VerbBuilder& str(const std::string& flag, const std::string& key, const std::string& desc, bool required = false)
    {
        auto value = std::make_shared<std::string>();
        CLI::Option* opt = v_.app->add_option(flag, *value, desc);
        if (required)
            opt->required();
        v_.fill.push_back([=](json& c) {
            if (opt->count())
                c[key] = *value;
        });
        return *this;
    }

    VerbBuilder& integer(const std::string& flag, const std::string& key, const std::string& desc)
    {
        auto value = std::make_shared<long long>(0);
        CLI::Option* opt = v_.app->add_option(flag, *value, desc);
        v_.fill.push_back([=](json& c) {
            if (opt->count())
                c[key] = *value;
        });
        return *this;
    }

    VerbBuilder& unsigned_int(const std::string& flag, const std::string& key, const std::string& desc)
    {
        auto value = std::make_shared<std::uint64_t>(0);
        CLI::Option* opt = v_.app->add_option(flag, *value, desc);
        v_.fill.push_back([=](json& c) {
            if (opt->count())
                c[key] = *value;
        });
        return *this;
    }

    VerbBuilder& number(const std::string& flag, const std::string& key, const std::string& desc)
    {
        auto value = std::make_shared<double>(0.0);
        CLI::Option* opt = v_.app->add_option(flag, *value, desc);
        v_.fill.push_back([=](json& c) {
            if (opt->count())
                c[key] = *value;
        });
        return *this;
    }

    VerbBuilder& flag(const std::string& flag, const std::string& key, const std::string& desc)
    {
        auto value = std::make_shared<bool>(false);
        CLI::Option* opt = v_.app->add_flag(flag, *value, desc);
        v_.fill.push_back([=](json& c) {
            if (opt->count())
                c[key] = *value;
        });
        return *this;
    }

    VerbBuilder& fractions(const std::string& flag, const std::string& key, const std::string& desc)
    {
        auto value = std::make_shared<std::vector<double>>();
        CLI::Option* opt = v_.app->add_option(flag, *value, desc)->expected(3)->delimiter(',');
        v_.fill.push_back([=](json& c) {
            if (opt->count())
                c[key] = *value;
        });
        return *this;
    }

private:
    Verb& v_;
};

int exit_code(const ipdm::Error& e)
{
    switch (e.kind())
    {
    case ipdm::ErrorKind::numerical_degeneracy:
        return 2;
    default:
        return 1;
    }
}

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Inspection-based deterioration modeling tools"};
    app.require_subcommand(1);
    unsigned threads = 0;
    app.add_option("--threads", threads, "worker threads (0 = all cores)");

    std::map<std::string, Verb> verbs;
    auto verb = [&](const std::string& name, const std::string& desc) {
        Verb& v = verbs[name];
        v.app = app.add_subcommand(name, desc);
        v.app->add_option("--threads", threads, "worker threads (0 = all cores)");
        v.app->add_option("--out", v.out, "output directory");
        VerbBuilder b(v);
        b.unsigned_int("--seed", "seed", "random seed");
        return b;
    };

    for (const char* name : {"ingest", "preprocess"})
        verb(name, std::string(name) == "ingest" ? "read an inspection CSV and report what it holds"
                                                 : "read an inspection CSV into a per-bridge store")
            .str("--csv", "csv", "inspection CSV", true)
            .str("--mapping", "mapping", "column mapping file (role=column lines)", true)
            .number("--scale-lower", "scale_lower", "lowest condition rating")
            .number("--scale-upper", "scale_upper", "highest condition rating");
    verb("analyze-element", "filter, smooth and forecast one element")
        .str("--store", "store", "preprocessed store directory", true)
        .str("--bridge", "bridge", "bridge id", true)
        .str("--element", "element", "element id", true)
        .str("--category", "category", "structural category (searched when omitted)")
        .integer("--forecast", "forecast", "forecast horizon in years")
        .str("--params", "params", "model parameter file");
    verb("generate", "generate a synthetic dataset")
        .str("--config", "config", "generator config file", true);
    verb("train", "fit model parameters by maximum likelihood")
        .str("--data", "data", "synthetic dataset or store directory", true)
        .str("--params", "params", "starting parameter file")
        .fractions("--split", "split", "train,validation,test fractions")
        .integer("--max-iter", "max_iter", "outer iteration cap")
        .number("--tol", "tol", "relative log-likelihood tolerance")
        .flag("--kernel", "kernel", "use the kernel-regression speed prior")
        .str("--category", "category", "train only this category");
    verb("train-interventions", "estimate intervention effects")
        .str("--data", "data", "synthetic dataset or store directory", true)
        .str("--records", "records", "intervention records CSV", true)
        .str("--params", "params", "model parameter file", true);
    verb("verify", "forecast-error and recovery reports on synthetic data")
        .str("--data", "data", "synthetic dataset directory", true)
        .str("--params", "params", "model parameter file", true)
        .integer("--horizon", "horizon", "forecast horizon in years")
        .integer("--elements", "elements", "number of sampled elements");
    verb("validate", "check forecasts against a database with additional inspections")
        .str("--old", "old", "earlier store or dataset directory", true)
        .str("--new", "new", "later store or dataset directory", true)
        .str("--params", "params", "model parameter file", true);

    CLI::App* serve = app.add_subcommand("serve", "run the HTTP API");
    ipdm::ServerConfig server_config;
    std::string store_dir, params_path, static_dir;
    std::string jobs_dir = "jobs";
    int port = -1;
    serve->add_option("--threads", threads, "worker threads (0 = all cores)");
    serve->add_option("--store", store_dir, "preprocessed store directory");
    serve->add_option("--params", params_path, "parameters for deterioration analyses");
    serve->add_option("--jobs", jobs_dir, "job records and outputs");
    serve->add_option("--static", static_dir, "static files served at /");
    serve->add_option("--workers", server_config.job_workers, "concurrent jobs");
    serve->add_option("--host", server_config.host, "bind address");
    serve->add_option("--port", port, "port (default IPDM_PORT or 8464)");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::CallForHelp& e)
    {
        return app.exit(e);
    }
    catch (const CLI::CallForAllHelp& e)
    {
        return app.exit(e);
    }
    catch (const CLI::ParseError& e)
    {
        app.exit(e);
        std::cerr << app.help();
        return 1;
    }

    try
    {
        ipdm::set_thread_count(threads);
        if (serve->parsed())
        {
            if (!store_dir.empty())
                server_config.store_dir = store_dir;
            if (!params_path.empty())
                server_config.params = params_path;
            if (!static_dir.empty())
                server_config.static_dir = static_dir;
            server_config.jobs_dir = jobs_dir;
            server_config.port = port >= 0 ? port : ipdm::default_port();
            ipdm::ApiServer server(server_config);
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            const int bound = server.start();
            std::cout << "listening on http://" << server_config.host << ":" << bound << std::endl;
            while (!g_stop)
                std::this_thread::sleep_for(std::chrono::milliseconds(100));
            server.stop();
            return 0;
        }
        for (auto& [name, v] : verbs)
        {
            if (!v.app->parsed())
                continue;
            json config = json::object();
            for (auto& f : v.fill)
                f(config);
            ipdm::RunContext ctx;
            ctx.on_log = [](const std::string& line) { std::cerr << line << "\n"; };
            const ipdm::CommandOutput out = ipdm::run_command(name, config, v.out, ctx);
            for (const auto& w : out.warnings)
                std::cerr << "warning: " << w << "\n";
            for (const auto& a : out.artifacts)
                std::cout << (std::filesystem::path(v.out) / a).string() << "\n";
            std::cout << out.summary.dump() << "\n";
            return 0;
        }
    }
    catch (const ipdm::Error& e)
    {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e);
    }
    catch (const std::exception& e)
    {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

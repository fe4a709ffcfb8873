#include "ipdm/service.hpp"

#include "helpers.hpp"

#include <doctest.h>
#include <httplib.h>

#include <atomic>
#include <chrono>
#include <thread>

using namespace ipdm;
using nlohmann::json;

namespace
{

/// Executor whose jobs block until released; counts how many ran concurrently.
struct GatedExecutor
{
    std::mutex m;
    std::condition_variable cv;
    bool open = false;
    int running = 0;
    int max_running = 0;
    std::vector<std::string> started;

    void release()
    {
        std::lock_guard lock(m);
        open = true;
        cv.notify_all();
    }

    JobExecutor fn()
    {
        return [this](const std::string& kind, const json& config, const std::filesystem::path& out,
                      const RunContext&) {
            {
                std::unique_lock lock(m);
                started.push_back(config.value("category", kind));
                max_running = std::max(max_running, ++running);
                cv.wait(lock, [&] { return open; });
                --running;
            }
            std::filesystem::create_directories(out);
            write_file_atomic(out / "result.txt", config.value("category", std::string("x")) + "\n");
            CommandOutput o;
            o.artifacts = {"result.txt"};
            return o;
        };
    }
};

/// Passes every job through the real schema check but runs `body` instead of the command.
JobExecutor executor_of(std::function<CommandOutput(const json&, const std::filesystem::path&)> body)
{
    return [body](const std::string&, const json& config, const std::filesystem::path& out, const RunContext&) {
        return body(config, out);
    };
}

bool wait_for_state(JobRunner& r, const std::string& id, JobState s, double seconds = 30.0)
{
    const auto until = std::chrono::steady_clock::now() + std::chrono::duration<double>(seconds);
    while (std::chrono::steady_clock::now() < until)
    {
        if (r.get(id)->state == s)
            return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    return false;
}

json body_of(const httplib::Result& r)
{
    REQUIRE(r);
    return json::parse(r->body);
}

/// A preprocessed store with one bridge: element "1" rated twice, element "2" once.
void write_store(const test::TempDir& dir)
{
    const auto csv = dir.write("db.csv", "bridge,cat,elem,year,cond,insp\n"
                                         "130,deck,1,2000,90,I1\n130,deck,1,2006,84,I2\n"
                                         "130,deck,2,2004,82,I1\n");
    const auto r = read_csv(csv, ColumnMapping::from_text("structure=bridge\ncategory=cat\nelement=elem\n"
                                                          "year=year\ncondition=cond\ninspector=insp\n"));
    preprocess(r.store, dir / "store");
}

} // namespace

TEST_CASE("job records survive json")
{
    JobRecord j;
    j.id = "job-000007";
    j.kind = "train";
    j.state = JobState::done;
    j.progress = 1.0;
    j.config = {{"data", "d"}};
    j.result_location = "/x";
    j.artifacts = {"a.csv"};
    j.log_tail = {"started", "done"};
    const JobRecord back = job_from_json(job_to_json(j));
    CHECK(job_to_json(back) == job_to_json(j));
    CHECK(job_state_from_name("cancelled") == JobState::cancelled);
    CHECK_FALSE(job_state_from_name("paused").has_value());
    CHECK_THROWS_AS(job_from_json(json{{"format", "other"}, {"version", 1}}), Error);
}

TEST_CASE("job runner: one worker runs one job at a time")
{
    test::TempDir dir("jobs_k1");
    GatedExecutor gate;
    JobRunner runner(dir.path(), 1, gate.fn());
    const auto a = runner.submit("train", {{"data", "d"}, {"category", "a"}});
    const auto b = runner.submit("train", {{"data", "d"}, {"category", "b"}});
    REQUIRE(wait_for_state(runner, a, JobState::running));
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    CHECK(runner.get(b)->state == JobState::queued);
    gate.release();
    REQUIRE(runner.wait(a, 30));
    REQUIRE(runner.wait(b, 30));
    CHECK(runner.get(a)->state == JobState::done);
    CHECK(runner.get(b)->state == JobState::done);
    CHECK(gate.max_running == 1);
    CHECK(gate.started == std::vector<std::string>{"a", "b"});

    const auto done = *runner.get(a);
    CHECK(done.progress == 1.0);
    CHECK(read_file(std::filesystem::path(done.result_location) / "result.txt") == "a\n");
    CHECK(runner.cancel(a) == CancelOutcome::finished);
    CHECK(runner.cancel("job-999999") == CancelOutcome::not_found);
}

TEST_CASE("job runner: two workers overlap")
{
    test::TempDir dir("jobs_k2");
    GatedExecutor gate;
    JobRunner runner(dir.path(), 2, gate.fn());
    const auto a = runner.submit("train", {{"data", "d"}, {"category", "a"}});
    const auto b = runner.submit("train", {{"data", "d"}, {"category", "b"}});
    REQUIRE(wait_for_state(runner, a, JobState::running));
    REQUIRE(wait_for_state(runner, b, JobState::running));
    gate.release();
    REQUIRE(runner.wait(b, 30));
    CHECK(gate.max_running == 2);
}

TEST_CASE("job runner: submission validates the config")
{
    test::TempDir dir("jobs_schema");
    JobRunner runner(dir.path(), 1);
    CHECK_THROWS_AS(runner.submit("train", json::object()), Error);
    CHECK_THROWS_AS(runner.submit("train", {{"data", 5}}), Error);
    CHECK_THROWS_AS(runner.submit("train", {{"data", "d"}, {"colour", "red"}}), Error);
    CHECK_THROWS_AS(runner.submit("dance", json::object()), Error);
    CHECK(runner.list().empty());
}

TEST_CASE("job runner: a queued job can be cancelled")
{
    test::TempDir dir("jobs_cq");
    GatedExecutor gate;
    JobRunner runner(dir.path(), 1, gate.fn());
    const auto a = runner.submit("train", {{"data", "d"}, {"category", "a"}});
    const auto b = runner.submit("train", {{"data", "d"}, {"category", "b"}});
    REQUIRE(wait_for_state(runner, a, JobState::running));
    CHECK(runner.cancel(b) == CancelOutcome::cancelled);
    CHECK(runner.get(b)->state == JobState::cancelled);
    gate.release();
    REQUIRE(runner.wait(a, 30));
    CHECK(gate.started == std::vector<std::string>{"a"});
}

TEST_CASE("job runner: cancelling a running generate removes its outputs")
{
    test::TempDir dir("jobs_cancel");
    JobRunner runner(dir.path(), 1);
    const json cfg{{"config", {{"series", 200000}, {"time_span", 60}, {"inspectors", 50}}}, {"seed", 1}};
    const auto id = runner.submit("generate", cfg);
    REQUIRE(wait_for_state(runner, id, JobState::running));
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    CHECK(runner.cancel(id) == CancelOutcome::requested);
    REQUIRE(runner.wait(id, 60));
    const auto job = *runner.get(id);
    CHECK(job.state == JobState::cancelled);
    CHECK(job.result_location.empty());
    CHECK_FALSE(std::filesystem::exists(runner.output_dir(id)));
    CHECK(std::filesystem::exists(dir / id / "job.json"));
}

TEST_CASE("job runner: a throwing executor fails the job, not the runner")
{
    test::TempDir dir("jobs_throw");
    JobRunner runner(dir.path(), 1, executor_of([](const json& c, const std::filesystem::path& out) -> CommandOutput {
                         if (c.at("data") == "boom")
                         {
                             std::filesystem::create_directories(out);
                             write_file_atomic(out / "partial.txt", "x");
                             throw std::runtime_error("worker exploded");
                         }
                         return {};
                     }));
    const auto bad = runner.submit("train", {{"data", "boom"}});
    REQUIRE(runner.wait(bad, 30));
    const auto job = *runner.get(bad);
    CHECK(job.state == JobState::failed);
    CHECK(job.error.find("worker exploded") != std::string::npos);
    REQUIRE_FALSE(job.log_tail.empty());
    CHECK(job.log_tail.back().find("worker exploded") != std::string::npos);
    CHECK_FALSE(std::filesystem::exists(runner.output_dir(bad)));

    const auto good = runner.submit("train", {{"data", "fine"}});
    REQUIRE(runner.wait(good, 30));
    CHECK(runner.get(good)->state == JobState::done);
}

TEST_CASE("job runner: records persist across a restart")
{
    test::TempDir dir("jobs_restart");
    std::string done_id, queued_id;
    {
        GatedExecutor gate;
        JobRunner runner(dir.path(), 1, executor_of([](const json&, const std::filesystem::path& out) {
                             std::filesystem::create_directories(out);
                             write_file_atomic(out / "r.txt", "ok\n");
                             CommandOutput o;
                             o.artifacts = {"r.txt"};
                             return o;
                         }));
        done_id = runner.submit("train", {{"data", "d"}});
        REQUIRE(runner.wait(done_id, 30));
    }
    // a record left behind in the running state by a killed process
    JobRecord stale;
    stale.id = "job-000050";
    stale.kind = "train";
    stale.state = JobState::running;
    stale.config = {{"data", "d"}};
    std::filesystem::create_directories(dir / stale.id / "out");
    write_file_atomic(dir / stale.id / "job.json", job_to_json(stale).dump());
    write_file_atomic(dir / stale.id / "out" / "half.csv", "a,b\n1,");

    GatedExecutor gate;
    JobRunner again(dir.path(), 1, gate.fn());
    const auto old = again.get(done_id);
    REQUIRE(old.has_value());
    CHECK(old->state == JobState::done);
    CHECK(read_file(std::filesystem::path(old->result_location) / "r.txt") == "ok\n");
    const auto interrupted = again.get("job-000050");
    REQUIRE(interrupted.has_value());
    CHECK(interrupted->state == JobState::failed);
    CHECK_FALSE(std::filesystem::exists(dir / "job-000050" / "out"));

    const auto fresh = again.submit("train", {{"data", "d"}});
    CHECK(fresh == "job-000051");
    gate.release();
    REQUIRE(again.wait(fresh, 30));
}

TEST_CASE("http api over an empty store")
{
    test::TempDir dir("api_empty");
    ServerConfig cfg;
    cfg.port = 0;
    cfg.jobs_dir = dir / "jobs";
    ApiServer server(cfg);
    const int port = server.start();
    httplib::Client cli("127.0.0.1", port);

    const auto bridges = cli.Get("/api/bridges");
    REQUIRE(bridges);
    CHECK(bridges->status == 200);
    CHECK(json::parse(bridges->body) == json::array());

    const auto version = body_of(cli.Get("/api/version"));
    CHECK(version.at("api_version") == kApiVersion);

    const auto missing = cli.Get("/api/elements/1~default~1/series");
    REQUIRE(missing);
    CHECK(missing->status == 404);
    CHECK(json::parse(missing->body).at("level") == "element");

    const auto bridge = cli.Get("/api/bridges/5/categories");
    REQUIRE(bridge);
    CHECK(bridge->status == 404);
    CHECK(json::parse(bridge->body).at("level") == "bridge");

    const auto nowhere = cli.Get("/api/nothing");
    REQUIRE(nowhere);
    CHECK(nowhere->status == 404);
    server.stop();
}

TEST_CASE("http api: navigation and deterioration analysis")
{
    test::TempDir dir("api_store");
    write_store(dir);
    ServerConfig cfg;
    cfg.port = 0;
    cfg.jobs_dir = dir / "jobs";
    cfg.store_dir = dir / "store";
    ApiServer server(cfg);
    httplib::Client cli("127.0.0.1", server.start());

    const auto bridges = body_of(cli.Get("/api/bridges"));
    REQUIRE(bridges.size() == 1);
    CHECK(bridges[0].at("id") == "130");
    CHECK(bridges[0].at("elements") == 2);
    const auto elems = body_of(cli.Get("/api/bridges/130/categories/deck/elements"));
    REQUIRE(elems.size() == 2);
    CHECK(elems[0] == json{{"id", "1"}, {"inspections", 2}});
    const auto missing_cat = cli.Get("/api/bridges/130/categories/piers/elements");
    REQUIRE(missing_cat);
    CHECK(missing_cat->status == 404);
    CHECK(json::parse(missing_cat->body).at("level") == "category");

    const auto series = body_of(cli.Get("/api/elements/130~deck~1/series"));
    CHECK(series.at("inspections").size() == 2);
    CHECK(series.at("inspections")[0].at("inspector_id") == "I1");

    SUBCASE("a single observation gives a widening forecast band")
    {
        const auto r = cli.Post("/api/analyses/deterioration", R"({"element":"130~deck~2","horizon":10})",
                                "application/json");
        REQUIRE(r);
        CHECK(r->status == 200);
        const auto a = json::parse(r->body);
        const auto& fc = a.at("forecast");
        REQUIRE(fc.size() == 10);
        double prev = -1.0;
        for (const auto& p : fc)
        {
            const double width = p.at("band_high").get<double>() - p.at("band_low").get<double>();
            CHECK(width > prev);
            prev = width;
        }
        CHECK(a.at("observations").size() == 1);
    }
    SUBCASE("schema violations are 400")
    {
        for (const char* bad : {"not json", "[1,2]", R"({"horizon":3})", R"({"element":"130~deck~1","x":1})",
                                R"({"element":"130~deck~1","horizon":"ten"})"})
        {
            const auto r = cli.Post("/api/analyses/deterioration", bad, "application/json");
            REQUIRE(r);
            CHECK(r->status == 400);
        }
        const auto r = cli.Post("/api/analyses/deterioration", R"({"element":"130~deck~9"})", "application/json");
        REQUIRE(r);
        CHECK(r->status == 404);
    }
}

TEST_CASE("http api: job lifecycle")
{
    test::TempDir dir("api_jobs");
    ServerConfig cfg;
    cfg.port = 0;
    cfg.jobs_dir = dir / "jobs";
    GatedExecutor gate;
    ApiServer server(cfg, gate.fn());
    httplib::Client cli("127.0.0.1", server.start());

    const auto t0 = std::chrono::steady_clock::now();
    const auto posted = cli.Post("/api/jobs", R"({"kind":"train","config":{"data":"d","category":"one"}})",
                                 "application/json");
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    REQUIRE(posted);
    CHECK(posted->status == 202);
    CHECK(ms < 100.0);
    const std::string id = json::parse(posted->body).at("id");

    const auto early = cli.Get("/api/jobs/" + id + "/result");
    REQUIRE(early);
    CHECK(early->status == 409);

    gate.release();
    REQUIRE(server.jobs().wait(id, 30));
    const auto job = body_of(cli.Get("/api/jobs/" + id));
    CHECK(job.at("state") == "done");
    const auto result = body_of(cli.Get("/api/jobs/" + id + "/result"));
    CHECK(result.at("artifacts") == json::array({"result.txt"}));
    const auto file = cli.Get("/api/jobs/" + id + "/result/result.txt");
    REQUIRE(file);
    CHECK(file->status == 200);
    CHECK(file->body == "one\n");
    const auto absent = cli.Get("/api/jobs/" + id + "/result/other.txt");
    REQUIRE(absent);
    CHECK(absent->status == 404);

    const auto finished = cli.Delete("/api/jobs/" + id);
    REQUIRE(finished);
    CHECK(finished->status == 409);
    const auto unknown = cli.Get("/api/jobs/job-424242");
    REQUIRE(unknown);
    CHECK(unknown->status == 404);
    const auto unknown_cancel = cli.Delete("/api/jobs/job-424242");
    REQUIRE(unknown_cancel);
    CHECK(unknown_cancel->status == 404);

    for (const char* bad : {R"({"kind":"train"})", R"({"kind":"juggle","config":{}})", R"({"config":{}})",
                            R"({"kind":"train","config":{"data":1}})", "{"})
    {
        const auto r = cli.Post("/api/jobs", bad, "application/json");
        REQUIRE(r);
        CHECK(r->status == 400);
    }
    CHECK(body_of(cli.Get("/api/jobs")).size() == 1);
}

#include "ipdm/service.hpp"

#include "ipdm/ingest.hpp"
#include "ipdm/io.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>

namespace ipdm
{

using nlohmann::json;
namespace fs = std::filesystem;

const char* job_state_name(JobState s)
{
    switch (s)
    {
    case JobState::queued:
        return "queued";
    case JobState::running:
        return "running";
    case JobState::done:
        return "done";
    case JobState::failed:
        return "failed";
    case JobState::cancelled:
        return "cancelled";
    }
    return "unknown";
}

std::optional<JobState> job_state_from_name(const std::string& s)
{
    for (JobState st : {JobState::queued, JobState::running, JobState::done, JobState::failed, JobState::cancelled})
        if (s == job_state_name(st))
            return st;
    return std::nullopt;
}

json job_to_json(const JobRecord& job)
{
    json j{{"format", "ipdm-job"},
           {"version", kApiVersion},
           {"id", job.id},
           {"kind", job.kind},
           {"state", job_state_name(job.state)},
           {"progress", job.progress},
           {"config", job.config},
           {"artifacts", job.artifacts},
           {"warnings", job.warnings},
           {"summary", job.summary},
           {"log_tail", job.log_tail},
           {"cancel_requested", job.cancel_requested}};
    j["result_location"] = job.result_location.empty() ? json(nullptr) : json(job.result_location);
    j["error"] = job.error.empty() ? json(nullptr) : json(job.error);
    return j;
}

JobRecord job_from_json(const json& j)
{
    if (j.at("format").get<std::string>() != "ipdm-job" || j.at("version").get<int>() != kApiVersion)
        throw Error(ErrorKind::schema, "not a version " + std::to_string(kApiVersion) + " job record");
    JobRecord r;
    r.id = j.at("id").get<std::string>();
    r.kind = j.at("kind").get<std::string>();
    const auto st = job_state_from_name(j.at("state").get<std::string>());
    if (!st)
        throw Error(ErrorKind::schema, "job " + r.id + ": unknown state");
    r.state = *st;
    r.progress = j.at("progress").get<double>();
    r.config = j.at("config");
    r.artifacts = j.at("artifacts").get<std::vector<std::string>>();
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    r.summary = j.at("summary");
    r.log_tail = j.at("log_tail").get<std::vector<std::string>>();
    r.cancel_requested = j.at("cancel_requested").get<bool>();
    if (!j.at("result_location").is_null())
        r.result_location = j.at("result_location").get<std::string>();
    if (!j.at("error").is_null())
        r.error = j.at("error").get<std::string>();
    return r;
}

// ---------------------------------------------------------------------------------------------
// JobRunner

namespace
{

constexpr std::size_t kLogTail = 50;

void push_log(JobRecord& job, const std::string& line)
{
    job.log_tail.push_back(line);
    if (job.log_tail.size() > kLogTail)
        job.log_tail.erase(job.log_tail.begin(), job.log_tail.begin() + (job.log_tail.size() - kLogTail));
}

} // namespace

JobRunner::JobRunner(fs::path root, unsigned workers, JobExecutor executor)
    : root_(std::move(root)), executor_(std::move(executor))
{
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec)
        throw Error(ErrorKind::io, "cannot create " + root_.string() + ": " + ec.message());
    load_existing();
    for (unsigned i = 0; i < std::max(1u, workers); ++i)
        workers_.emplace_back([this] { worker_loop(); });
}

JobRunner::~JobRunner()
{
    {
        std::lock_guard lock(mutex_);
        stopping_ = true;
        for (auto& [id, job] : jobs_)
            if (job.state == JobState::running)
                job.cancel_requested = true;
    }
    changed_.notify_all();
    for (auto& t : workers_)
        t.join();
}

void JobRunner::load_existing()
{
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root_))
        if (entry.is_directory() && fs::exists(entry.path() / "job.json"))
            dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs)
    {
        JobRecord job;
        try
        {
            job = job_from_json(json::parse(read_file(d / "job.json")));
        }
        catch (const std::exception&)
        {
            continue;
        }
        unsigned long long n = 0;
        if (std::sscanf(job.id.c_str(), "job-%llu", &n) == 1)
            next_id_ = std::max<std::uint64_t>(next_id_, n + 1);
        if (job.state == JobState::running)
        {
            job.state = JobState::failed;
            job.error = "interrupted by a service restart";
            push_log(job, job.error);
            std::error_code ec;
            fs::remove_all(output_dir(job.id), ec);
            persist(job);
        }
        if (job.state == JobState::queued)
            queue_.push_back(job.id);
        jobs_.emplace(job.id, std::move(job));
    }
}

void JobRunner::persist(const JobRecord& job) const
{
    write_file_atomic(root_ / job.id / "job.json", job_to_json(job).dump(1) + "\n");
}

std::string JobRunner::submit(const std::string& kind, const json& config)
{
    validate_command(kind, config);
    std::lock_guard lock(mutex_);
    char id[32];
    std::snprintf(id, sizeof id, "job-%06llu", static_cast<unsigned long long>(next_id_++));
    JobRecord job;
    job.id = id;
    job.kind = kind;
    job.config = config;
    std::error_code ec;
    fs::create_directories(root_ / job.id, ec);
    if (ec)
        throw Error(ErrorKind::io, "cannot create job directory: " + ec.message());
    persist(job);
    jobs_.emplace(job.id, job);
    queue_.push_back(job.id);
    changed_.notify_all();
    return job.id;
}

std::optional<JobRecord> JobRunner::get(const std::string& id) const
{
    std::lock_guard lock(mutex_);
    const auto it = jobs_.find(id);
    if (it == jobs_.end())
        return std::nullopt;
    return it->second;
}

std::vector<JobRecord> JobRunner::list() const
{
    std::lock_guard lock(mutex_);
    std::vector<JobRecord> out;
    for (const auto& [id, job] : jobs_)
        out.push_back(job);
    return out;
}

CancelOutcome JobRunner::cancel(const std::string& id)
{
    std::lock_guard lock(mutex_);
    const auto it = jobs_.find(id);
    if (it == jobs_.end())
        return CancelOutcome::not_found;
    JobRecord& job = it->second;
    if (is_finished(job.state))
        return CancelOutcome::finished;
    job.cancel_requested = true;
    if (job.state == JobState::queued)
    {
        queue_.erase(std::remove(queue_.begin(), queue_.end(), id), queue_.end());
        job.state = JobState::cancelled;
        push_log(job, "cancelled before start");
        persist(job);
        changed_.notify_all();
        return CancelOutcome::cancelled;
    }
    persist(job);
    return CancelOutcome::requested;
}

bool JobRunner::wait(const std::string& id, double timeout_seconds) const
{
    std::unique_lock lock(mutex_);
    return changed_.wait_for(lock, std::chrono::duration<double>(timeout_seconds), [&] {
        const auto it = jobs_.find(id);
        return it == jobs_.end() || is_finished(it->second.state);
    });
}

void JobRunner::worker_loop()
{
    for (;;)
    {
        std::string id;
        {
            std::unique_lock lock(mutex_);
            changed_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
            if (stopping_)
                return;
            id = queue_.front();
            queue_.pop_front();
            JobRecord& job = jobs_.at(id);
            job.state = JobState::running;
            push_log(job, "started");
            persist(job);
        }
        changed_.notify_all();
        run_job(id);
        changed_.notify_all();
    }
}

void JobRunner::run_job(const std::string& id)
{
    std::string kind;
    json config;
    {
        std::lock_guard lock(mutex_);
        kind = jobs_.at(id).kind;
        config = jobs_.at(id).config;
    }
    const fs::path out = output_dir(id);
    std::atomic<bool> cancel{false};
    RunContext ctx;
    ctx.should_cancel = [&] {
        if (cancel.load(std::memory_order_relaxed))
            return true;
        std::lock_guard lock(mutex_);
        if (jobs_.at(id).cancel_requested)
            cancel = true;
        return cancel.load();
    };
    ctx.on_progress = [&](double f) {
        std::lock_guard lock(mutex_);
        JobRecord& job = jobs_.at(id);
        const double prev = job.progress;
        job.progress = std::clamp(f, prev, 1.0);
        if (job.progress - prev >= 0.01)
            persist(job);
    };
    ctx.on_log = [&](const std::string& line) {
        std::lock_guard lock(mutex_);
        push_log(jobs_.at(id), line);
    };

    std::optional<CommandOutput> result;
    std::string error;
    bool was_cancelled = false;
    try
    {
        result = executor_(kind, config, out, ctx);
        was_cancelled = ctx.cancelled();
    }
    catch (const Error& e)
    {
        was_cancelled = e.kind() == ErrorKind::cancelled || ctx.cancelled();
        error = e.what();
    }
    catch (const std::exception& e)
    {
        error = std::string("internal error: ") + e.what();
    }
    catch (...)
    {
        error = "internal error: unknown exception";
    }

    std::lock_guard lock(mutex_);
    JobRecord& job = jobs_.at(id);
    if (was_cancelled || !result)
    {
        std::error_code ec;
        fs::remove_all(out, ec);
    }
    if (was_cancelled)
    {
        job.state = JobState::cancelled;
        push_log(job, "cancelled; partial outputs removed");
    }
    else if (!result)
    {
        job.state = JobState::failed;
        job.error = error;
        push_log(job, error);
    }
    else
    {
        job.artifacts = result->artifacts;
        job.warnings = result->warnings;
        job.summary = result->summary;
        job.result_location = fs::absolute(out).string();
        job.progress = 1.0;
        job.state = JobState::done;
        push_log(job, "done");
    }
    persist(job);
}

// ---------------------------------------------------------------------------------------------
// HTTP API

int default_port()
{
    if (const char* p = std::getenv("IPDM_PORT"))
    {
        const auto v = parse_int(p);
        if (v && *v > 0 && *v < 65536)
            return static_cast<int>(*v);
        throw Error(ErrorKind::invalid_input, std::string("IPDM_PORT is not a valid port: ") + p);
    }
    return 8464;
}

struct ApiServer::Impl
{
    ServerConfig config;
    NetworkStore store;
    ModelParams params;
    JobRunner runner;
    httplib::Server server;
    std::thread thread;
    int bound_port = 0;

    Impl(const ServerConfig& c, JobExecutor executor)
        : config(c), runner(c.jobs_dir, c.job_workers, std::move(executor))
    {
        if (config.store_dir)
            store = load_store(*config.store_dir);
        if (config.params)
            params = load_params(*config.params);
        routes();
    }

    static void send_json(httplib::Response& res, int status, const json& body)
    {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void send_error(httplib::Response& res, int status, const std::string& message,
                           const std::optional<std::string>& level = std::nullopt)
    {
        json body{{"error", message}, {"status", status}};
        if (level)
            body["level"] = *level;
        send_json(res, status, body);
    }

    /// Maps library errors to status codes; not-found messages start with the level name.
    static void send_exception(httplib::Response& res, const Error& e)
    {
        const std::string what = e.what();
        switch (e.kind())
        {
        case ErrorKind::not_found:
        {
            std::optional<std::string> level;
            for (const char* l : {"bridge", "category", "element"})
                if (what.rfind(l, 0) == 0)
                    level = l;
            send_error(res, 404, what, level);
            return;
        }
        case ErrorKind::invalid_input:
        case ErrorKind::schema:
            send_error(res, 400, what);
            return;
        default:
            send_error(res, 500, what);
        }
    }

    template <class F>
    static httplib::Server::Handler guarded(F f)
    {
        return [f](const httplib::Request& req, httplib::Response& res) {
            try
            {
                f(req, res);
            }
            catch (const Error& e)
            {
                send_exception(res, e);
            }
            catch (const json::exception& e)
            {
                send_error(res, 400, std::string("malformed request: ") + e.what());
            }
            catch (const std::exception& e)
            {
                send_error(res, 500, e.what());
            }
        };
    }

    static json listing_json(const Listing& l, const char* count_name)
    {
        json out = json::array();
        for (const auto& [id, n] : l.children)
            out.push_back({{"id", id}, {count_name, n}});
        return out;
    }

    static json parse_body(const httplib::Request& req)
    {
        json body;
        try
        {
            body = json::parse(req.body);
        }
        catch (const json::exception&)
        {
            throw Error(ErrorKind::invalid_input, "request body is not valid JSON");
        }
        if (!body.is_object())
            throw Error(ErrorKind::invalid_input, "request body must be a JSON object");
        return body;
    }

    void routes()
    {
        server.Get("/api/version", guarded([](const httplib::Request&, httplib::Response& res) {
                       send_json(res, 200, {{"api_version", kApiVersion}, {"job_kinds", command_kinds()}});
                   }));
        server.Get("/api/bridges", guarded([this](const httplib::Request&, httplib::Response& res) {
                       send_json(res, 200, listing_json(navigate(store, {}), "elements"));
                   }));
        server.Get(R"(/api/bridges/([^/]+)/categories)",
                   guarded([this](const httplib::Request& req, httplib::Response& res) {
                       send_json(res, 200, listing_json(navigate(store, {req.matches[1]}), "elements"));
                   }));
        server.Get(R"(/api/bridges/([^/]+)/categories/([^/]+)/elements)",
                   guarded([this](const httplib::Request& req, httplib::Response& res) {
                       send_json(res, 200,
                                 listing_json(navigate(store, {req.matches[1], req.matches[2]}), "inspections"));
                   }));
        server.Get(R"(/api/elements/([^/]+)/series)", guarded([this](const httplib::Request& req,
                                                                    httplib::Response& res) {
                       const ElementSeries s = element_series(store, req.matches[1]);
                       json ins = json::array();
                       for (const auto& i : s.inspections)
                           ins.push_back({{"year", i.year},
                                          {"condition", i.condition ? json(*i.condition) : json(nullptr)},
                                          {"inspector_id", i.inspector},
                                          {"out_of_scale", i.out_of_scale}});
                       send_json(res, 200, {{"element_id", s.id}, {"category", s.category}, {"inspections", ins}});
                   }));
        server.Post("/api/analyses/deterioration", guarded([this](const httplib::Request& req,
                                                                  httplib::Response& res) {
                        const json body = parse_body(req);
                        for (const auto& [k, v] : body.items())
                            if (k != "element" && k != "horizon")
                                throw Error(ErrorKind::invalid_input, "unknown key '" + k + "'");
                        if (!body.contains("element") || !body.at("element").is_string())
                            throw Error(ErrorKind::invalid_input, "'element' must be a string");
                        int horizon = 10;
                        if (body.contains("horizon"))
                        {
                            if (!body.at("horizon").is_number_integer())
                                throw Error(ErrorKind::invalid_input, "'horizon' must be an integer");
                            horizon = body.at("horizon").get<int>();
                        }
                        const ElementSeries s = element_series(store, body.at("element").get<std::string>());
                        send_json(res, 200, analysis_json(analyze_element(s, params, horizon)));
                    }));
        server.Get("/api/jobs", guarded([this](const httplib::Request&, httplib::Response& res) {
                       json out = json::array();
                       for (const auto& j : runner.list())
                           out.push_back(job_to_json(j));
                       send_json(res, 200, out);
                   }));
        server.Post("/api/jobs", guarded([this](const httplib::Request& req, httplib::Response& res) {
                        const json body = parse_body(req);
                        for (const auto& [k, v] : body.items())
                            if (k != "kind" && k != "config")
                                throw Error(ErrorKind::invalid_input, "unknown key '" + k + "'");
                        if (!body.contains("kind") || !body.at("kind").is_string())
                            throw Error(ErrorKind::invalid_input, "'kind' must be a string");
                        const json config = body.contains("config") ? body.at("config") : json::object();
                        const std::string id = runner.submit(body.at("kind").get<std::string>(), config);
                        send_json(res, 202, job_to_json(*runner.get(id)));
                    }));
        server.Get(R"(/api/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                       const auto job = runner.get(req.matches[1]);
                       if (!job)
                           return send_error(res, 404, "job '" + req.matches[1].str() + "' not found", "job");
                       send_json(res, 200, job_to_json(*job));
                   }));
        server.Delete(R"(/api/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                          const std::string id = req.matches[1];
                          switch (runner.cancel(id))
                          {
                          case CancelOutcome::not_found:
                              return send_error(res, 404, "job '" + id + "' not found", "job");
                          case CancelOutcome::finished:
                              return send_error(res, 409, "job '" + id + "' has already finished");
                          case CancelOutcome::cancelled:
                          case CancelOutcome::requested:
                              send_json(res, 200, job_to_json(*runner.get(id)));
                          }
                      }));
        server.Get(R"(/api/jobs/([^/]+)/result)", guarded([this](const httplib::Request& req,
                                                                httplib::Response& res) {
                       const auto job = runner.get(req.matches[1]);
                       if (!job)
                           return send_error(res, 404, "job '" + req.matches[1].str() + "' not found", "job");
                       if (job->state != JobState::done)
                           return send_error(res, 409, std::string("job is ") + job_state_name(job->state));
                       send_json(res, 200,
                                 {{"id", job->id},
                                  {"kind", job->kind},
                                  {"location", job->result_location},
                                  {"artifacts", job->artifacts},
                                  {"warnings", job->warnings},
                                  {"summary", job->summary}});
                   }));
        server.Get(R"(/api/jobs/([^/]+)/result/([^/]+))", guarded([this](const httplib::Request& req,
                                                                         httplib::Response& res) {
                       const auto job = runner.get(req.matches[1]);
                       if (!job)
                           return send_error(res, 404, "job '" + req.matches[1].str() + "' not found", "job");
                       if (job->state != JobState::done)
                           return send_error(res, 409, std::string("job is ") + job_state_name(job->state));
                       const std::string name = req.matches[2];
                       if (std::find(job->artifacts.begin(), job->artifacts.end(), name) == job->artifacts.end())
                           return send_error(res, 404, "artifact '" + name + "' not found", "artifact");
                       const std::string ext = fs::path(name).extension().string();
                       const char* type = ext == ".png"    ? "image/png"
                                          : ext == ".csv"  ? "text/csv"
                                          : ext == ".json" || ext == ".ipdm" ? "application/json"
                                                                             : "text/plain";
                       res.status = 200;
                       res.set_content(read_file(fs::path(job->result_location) / name), type);
                   }));
        if (config.static_dir)
            server.set_mount_point("/", config.static_dir->string());
        server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
            if (res.body.empty() && req.path.rfind("/api/", 0) == 0)
                send_error(res, res.status, "no route for " + req.method + " " + req.path);
        });
    }
};

ApiServer::ApiServer(const ServerConfig& config, JobExecutor executor)
    : impl_(std::make_unique<Impl>(config, std::move(executor)))
{
}

ApiServer::~ApiServer() { stop(); }

int ApiServer::start()
{
    auto& s = impl_->server;
    if (impl_->config.port == 0)
        impl_->bound_port = s.bind_to_any_port(impl_->config.host);
    else if (s.bind_to_port(impl_->config.host, impl_->config.port))
        impl_->bound_port = impl_->config.port;
    else
        impl_->bound_port = -1;
    if (impl_->bound_port <= 0)
        throw Error(ErrorKind::io, "cannot bind " + impl_->config.host + ":" + std::to_string(impl_->config.port));
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    while (!s.is_running())
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
    return impl_->bound_port;
}

void ApiServer::stop()
{
    if (!impl_)
        return;
    impl_->server.stop();
    if (impl_->thread.joinable() && impl_->thread.get_id() != std::this_thread::get_id())
        impl_->thread.join();
}

int ApiServer::port() const { return impl_->bound_port; }

JobRunner& ApiServer::jobs() { return impl_->runner; }

} // namespace ipdm

/// @file service.hpp
/// Background job runner with on-disk job records, and the HTTP API over a loaded store.

#ifndef IPDM_SERVICE_HPP
#define IPDM_SERVICE_HPP

#include "ipdm/commands.hpp"

#include <json.hpp>

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace ipdm
{

inline constexpr int kApiVersion = 1;

enum class JobState
{
    queued,
    running,
    done,
    failed,
    cancelled,
};

const char* job_state_name(JobState s);
std::optional<JobState> job_state_from_name(const std::string& s);
inline bool is_finished(JobState s) { return s == JobState::done || s == JobState::failed || s == JobState::cancelled; }

struct JobRecord
{
    std::string id;
    std::string kind;
    JobState state = JobState::queued;
    double progress = 0.0;
    nlohmann::json config = nlohmann::json::object();
    std::string result_location;  ///< set once done
    std::vector<std::string> artifacts;
    std::vector<std::string> warnings;
    nlohmann::json summary = nlohmann::json::object();
    std::string error;
    std::vector<std::string> log_tail;
    bool cancel_requested = false;
};

nlohmann::json job_to_json(const JobRecord& job);
JobRecord job_from_json(const nlohmann::json& j);

using JobExecutor = std::function<CommandOutput(const std::string& kind, const nlohmann::json& config,
                                                const std::filesystem::path& out, const RunContext& ctx)>;

enum class CancelOutcome
{
    cancelled,   ///< was queued, now cancelled
    requested,   ///< running; the worker stops at the next element boundary
    finished,    ///< already done/failed/cancelled
    not_found,
};

/// Runs at most `workers` jobs at a time. Records live in `<root>/<id>/job.json` and outputs in
/// `<root>/<id>/out`; every record write goes through a temporary file and a rename.
class JobRunner
{
public:
    JobRunner(std::filesystem::path root, unsigned workers = 1, JobExecutor executor = run_command);
    ~JobRunner();

    JobRunner(const JobRunner&) = delete;
    JobRunner& operator=(const JobRunner&) = delete;

    /// Validates and enqueues; returns the new job id.
    std::string submit(const std::string& kind, const nlohmann::json& config);
    std::optional<JobRecord> get(const std::string& id) const;
    std::vector<JobRecord> list() const;
    CancelOutcome cancel(const std::string& id);
    /// Blocks until the job is finished or the timeout elapses; true when finished.
    bool wait(const std::string& id, double timeout_seconds = 600.0) const;

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path output_dir(const std::string& id) const { return root_ / id / "out"; }

private:
    void worker_loop();
    void run_job(const std::string& id);
    void persist(const JobRecord& job) const;
    void load_existing();

    std::filesystem::path root_;
    JobExecutor executor_;
    mutable std::mutex mutex_;
    mutable std::condition_variable changed_;
    std::map<std::string, JobRecord> jobs_;
    std::deque<std::string> queue_;
    std::uint64_t next_id_ = 1;
    bool stopping_ = false;
    std::vector<std::thread> workers_;
};

struct ServerConfig
{
    std::optional<std::filesystem::path> store_dir;  ///< empty store when unset
    std::optional<std::filesystem::path> params;     ///< analysis parameters (defaults otherwise)
    std::filesystem::path jobs_dir = "jobs";
    std::optional<std::filesystem::path> static_dir;
    unsigned job_workers = 1;
    std::string host = "127.0.0.1";
    int port = 8464;  ///< 0 picks a free port
};

/// Port from IPDM_PORT, else 8464.
int default_port();

class ApiServer
{
public:
    explicit ApiServer(const ServerConfig& config, JobExecutor executor = run_command);
    ~ApiServer();

    /// Binds and starts serving on a background thread; returns the bound port.
    int start();
    void stop();
    int port() const;
    JobRunner& jobs();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace ipdm

#endif // IPDM_SERVICE_HPP

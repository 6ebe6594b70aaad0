#pragma once

// FIFO job orchestration over exclusive slot groups.
//
// Each deployment reserves a fixed group of slots (a slot stands in for one
// accelerator) and owns one FIFO queue. Up to max_concurrent_jobs jobs of a
// deployment run at once, each on its own worker thread. All queue, slot
// and job state sits behind one mutex; workers hand results back through
// complete().

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include "edif/clock.hpp"
#include "edif/graph.hpp"
#include "edif/model.hpp"
#include "edif/result_store.hpp"
#include "edif/telemetry.hpp"
#include "edif/wire.hpp"

namespace edif {

inline constexpr std::size_t kQueueCap = 10'000;
inline constexpr std::int64_t kDefaultTimeoutMs = 120'000;

struct DeploymentManifest {
  std::string model_id;
  int required_slots = 1;
  std::int64_t declared_memory_units = 1;
  int max_concurrent_jobs = 1;
  std::int64_t timeout_ms = kDefaultTimeoutMs;

  bool operator==(const DeploymentManifest&) const = default;
};

// Parses a JSON array of manifests. Errors name `source` and the line.
std::vector<DeploymentManifest> parse_manifests(std::string_view json_text, std::string_view source);

// ceil(declared / capacity)
int plan_allocation(std::int64_t declared_memory_units, std::int64_t slot_capacity_units);

struct Slot {
  int slot_id = 0;
  int capacity_units = 0;
  std::optional<std::string> assigned_deployment;
};

class SlotPool {
 public:
  SlotPool(int slot_count, int capacity_units);

  // Lowest free slot ids first; all or nothing. Throws kInsufficientSlots.
  std::vector<int> reserve(const std::string& deployment, int count);
  void release(const std::string& deployment);
  int free_count() const;
  const std::vector<Slot>& slots() const { return slots_; }

 private:
  std::vector<Slot> slots_;
};

struct FaultPolicy {
  double fault_rate = 0.0;
  std::uint64_t seed = 0;
};

// Decides, dispatch by dispatch, whether a job suffers an injected worker
// fault: the k-th call consumes the k-th output of mt19937_64(seed) and
// faults when its top 53 bits, scaled to [0,1), fall below fault_rate.
class FaultInjector {
 public:
  explicit FaultInjector(FaultPolicy policy) : policy_(policy), rng_(policy.seed) {}
  bool next() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53 < policy_.fault_rate; }

 private:
  FaultPolicy policy_;
  std::mt19937_64 rng_;
};

// Lexicographically sortable 26-char ids: 48-bit millisecond time plus 80
// bits that increment within a millisecond.
class UlidGenerator {
 public:
  UlidGenerator();
  std::string next(std::int64_t unix_ms);

 private:
  std::int64_t last_ms_ = -1;
  std::uint64_t hi_ = 0;  // top 16 of the 80 random bits
  std::uint64_t lo_ = 0;  // low 64
  std::mt19937_64 rng_;
};

using Executor =
    std::function<ResultBundle(const InterventionGraph&, const ModelInstance&, std::stop_token)>;

Executor default_executor();

struct SchedulerOptions {
  int slot_count = 8;
  int slot_capacity_units = 48;
  std::size_t queue_cap = kQueueCap;
  Encoding result_encoding = Encoding::kGzip;
  bool allow_fault_injection = false;
};

struct EnqueueResult {
  std::string job_id;
  JobStatus status;
};

struct SchedulerSnapshot {
  std::uint64_t submitted = 0;
  std::uint64_t rejected = 0;  // failed at enqueue (unknown model, queue full)
  std::uint64_t queued = 0;
  std::uint64_t running = 0;
  std::uint64_t completed = 0;
  std::uint64_t failed = 0;  // terminal failures after acceptance

  bool conserved() const { return submitted == rejected + queued + running + completed + failed; }
};

struct DeploymentSummary {
  std::string model_id;
  int required_slots = 0;
  std::vector<int> slot_ids;
  std::size_t queue_depth = 0;  // enqueued and not yet terminal
  int running = 0;
  int max_concurrent_jobs = 1;
  std::string state;  // ACTIVE or DRAINING
};

class Scheduler {
 public:
  Scheduler(SchedulerOptions options, ResultStore& store, Telemetry* telemetry, const Clock& clock,
            Executor executor = default_executor());
  ~Scheduler();
  Scheduler(const Scheduler&) = delete;
  Scheduler& operator=(const Scheduler&) = delete;

  // Throws kInsufficientSlots (free vs required) or kBadConfig.
  std::vector<int> deploy(const DeploymentManifest& manifest, std::shared_ptr<const ModelInstance> model);
  // Fails queued jobs with UNKNOWN_MODEL; slots free once running jobs end.
  void undeploy(const std::string& model_id);

  // Unknown models and a full queue yield an immediately FAILED job.
  EnqueueResult enqueue(JobRequest request, std::string owner);

  JobStatus job_status(std::string_view job_id) const;  // throws kUnknownJob
  std::string job_owner(std::string_view job_id) const;
  std::optional<ResultManifest> job_result(std::string_view job_id) const;

  // Only honoured when SchedulerOptions::allow_fault_injection is set.
  void inject_faults(FaultPolicy policy);

  // One dispatch pass: expires overdue jobs, then starts queue heads on
  // deployments with a free concurrency token. Returns (job, model) pairs.
  std::vector<std::pair<std::string, std::string>> tick();

  // Background dispatcher; without it callers drive tick() themselves.
  void start();
  void stop();
  bool wait_until_idle(std::chrono::milliseconds timeout);

  SchedulerSnapshot snapshot() const;
  std::vector<DeploymentSummary> deployments() const;
  ModelCatalog catalog() const;
  std::vector<Slot> slots() const;

  // Job ids in the order they were accepted / entered RUNNING.
  std::vector<std::string> submission_log(const std::string& model_id) const;
  std::vector<std::string> dispatch_log(const std::string& model_id) const;

 private:
  struct Deployment {
    DeploymentManifest manifest;
    std::shared_ptr<const ModelInstance> model;
    std::vector<int> slot_ids;
    std::deque<std::string> queue;
    std::uint64_t dequeued = 0;
    std::uint64_t enqueued = 0;
    int running = 0;  // concurrency tokens in use (workers alive)
    int live = 0;     // jobs enqueued and not terminal
    bool draining = false;
    std::vector<std::string> submissions;
    std::vector<std::string> dispatches;
  };

  struct JobRecord {
    std::string id;
    std::string owner;
    std::string model_id;
    InterventionGraph graph;
    std::int64_t submitted_at_ms = 0;
    std::chrono::steady_clock::time_point submitted;
    std::optional<std::chrono::steady_clock::time_point> deadline;
    std::uint64_t queue_seq = 0;
    JobStatus status;
    std::optional<ResultManifest> result;
    std::stop_source stop;
    bool rejected = false;
  };

  struct Outcome {
    std::optional<ResultManifest> manifest;
    std::optional<JobFailure> failure;
  };

  void transition_locked(JobRecord& job, JobState to, std::optional<JobFailure> failure);
  void finish_locked(JobRecord& job, Outcome outcome);
  std::vector<std::pair<std::string, std::string>> tick_locked();
  void run_worker(std::string job_id, InterventionGraph graph, std::shared_ptr<const ModelInstance> model,
                  bool fault, std::stop_token stop);
  void complete(const std::string& job_id, Outcome outcome);
  void release_if_drained_locked(const std::string& model_id);
  void publish_queue_depth_locked();
  bool idle_locked() const;
  JobRecord& job_locked(std::string_view job_id);
  const JobRecord& job_locked(std::string_view job_id) const;

  SchedulerOptions options_;
  ResultStore& store_;
  Telemetry* telemetry_;
  const Clock& clock_;
  Executor executor_;

  mutable std::mutex mutex_;
  std::condition_variable cv_;
  SlotPool pool_;
  std::map<std::string, Deployment, std::less<>> deployments_;
  std::map<std::string, JobRecord, std::less<>> jobs_;
  std::optional<FaultInjector> faults_;
  UlidGenerator ids_;
  SchedulerSnapshot counts_;
  int active_workers_ = 0;
  bool stopping_ = false;
  std::thread dispatcher_;
};

}  // namespace edif

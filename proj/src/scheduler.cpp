#include "edif/scheduler.hpp"

#include <algorithm>

#include "edif/error.hpp"

namespace edif {

using nlohmann::json;

std::vector<DeploymentManifest> parse_manifests(std::string_view json_text, std::string_view source) {
  json j;
  try {
    j = json::parse(json_text.begin(), json_text.end());
  } catch (const json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte, json_text.size());
    const auto line = 1 + std::count(json_text.begin(), json_text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    throw Error(ErrorCode::kBadConfig, std::string(source) + ":" + std::to_string(line) + ": " + e.what());
  }
  if (!j.is_array()) throw Error(ErrorCode::kBadConfig, std::string(source) + ": expected an array of manifests");
  std::vector<DeploymentManifest> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string where = std::string(source) + ": manifest " + std::to_string(i);
    try {
      const auto& m = j[i];
      json_util::require_keys(m, {"model_id", "required_slots", "declared_memory_units"},
                              {"max_concurrent_jobs", "timeout_ms"}, where);
      DeploymentManifest d;
      d.model_id = json_util::get_string(m, "model_id");
      d.required_slots = static_cast<int>(json_util::get_int(m, "required_slots"));
      d.declared_memory_units = json_util::get_int(m, "declared_memory_units");
      if (m.contains("max_concurrent_jobs")) d.max_concurrent_jobs = static_cast<int>(json_util::get_int(m, "max_concurrent_jobs"));
      if (m.contains("timeout_ms")) d.timeout_ms = json_util::get_int(m, "timeout_ms");
      if (d.model_id.empty() || d.required_slots < 1 || d.declared_memory_units < 1 ||
          d.max_concurrent_jobs < 1 || d.timeout_ms < 1) {
        throw Error(ErrorCode::kBadConfig, "model_id must be non-empty and all counts positive");
      }
      out.push_back(std::move(d));
    } catch (const Error& e) {
      throw Error(ErrorCode::kBadConfig, where + ": " + e.message());
    }
  }
  return out;
}

int plan_allocation(std::int64_t declared_memory_units, std::int64_t slot_capacity_units) {
  if (declared_memory_units <= 0 || slot_capacity_units <= 0) {
    throw Error(ErrorCode::kBadConfig, "memory and slot capacity must be positive");
  }
  return static_cast<int>((declared_memory_units + slot_capacity_units - 1) / slot_capacity_units);
}

SlotPool::SlotPool(int slot_count, int capacity_units) {
  for (int i = 0; i < slot_count; ++i) slots_.push_back({i, capacity_units, std::nullopt});
}

std::vector<int> SlotPool::reserve(const std::string& deployment, int count) {
  const int free = free_count();
  if (count > free) {
    throw Error(ErrorCode::kInsufficientSlots, deployment + " needs " + std::to_string(count) +
                                                   " slots, " + std::to_string(free) + " free");
  }
  std::vector<int> taken;
  for (auto& slot : slots_) {
    if (static_cast<int>(taken.size()) == count) break;
    if (!slot.assigned_deployment) {
      slot.assigned_deployment = deployment;
      taken.push_back(slot.slot_id);
    }
  }
  return taken;
}

void SlotPool::release(const std::string& deployment) {
  for (auto& slot : slots_) {
    if (slot.assigned_deployment == deployment) slot.assigned_deployment.reset();
  }
}

int SlotPool::free_count() const {
  return static_cast<int>(std::count_if(slots_.begin(), slots_.end(),
                                        [](const Slot& s) { return !s.assigned_deployment; }));
}

UlidGenerator::UlidGenerator() : rng_(std::random_device{}()) {}

std::string UlidGenerator::next(std::int64_t unix_ms) {
  if (unix_ms <= last_ms_) {
    // Same (or earlier) millisecond: stay on the last timestamp and bump
    // the random part so ids keep sorting in issue order.
    unix_ms = last_ms_;
    if (++lo_ == 0) hi_ = (hi_ + 1) & 0xFFFF;
  } else {
    last_ms_ = unix_ms;
    hi_ = rng_() & 0x7FFF;  // leave headroom for increments
    lo_ = rng_() >> 1;
  }
  static constexpr char kAlphabet[] = "0123456789ABCDEFGHJKMNPQRSTVWXYZ";
  std::string out(26, '0');
  auto time = static_cast<std::uint64_t>(unix_ms) & ((1ull << 48) - 1);
  for (int i = 9; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kAlphabet[time & 31];
    time >>= 5;
  }
  // 80 bits = hi(16) | lo(64), emitted as 16 base32 digits.
  std::uint64_t lo = lo_;
  std::uint64_t hi = hi_;
  for (int i = 25; i >= 10; --i) {
    out[static_cast<std::size_t>(i)] = kAlphabet[lo & 31];
    lo = (lo >> 5) | ((hi & 31) << 59);
    hi >>= 5;
  }
  return out;
}

Executor default_executor() {
  return [](const InterventionGraph& graph, const ModelInstance& model, std::stop_token stop) {
    return execute(graph, model, std::move(stop));
  };
}

Scheduler::Scheduler(SchedulerOptions options, ResultStore& store, Telemetry* telemetry, const Clock& clock,
                     Executor executor)
    : options_(options),
      store_(store),
      telemetry_(telemetry),
      clock_(clock),
      executor_(std::move(executor)),
      pool_(options.slot_count, options.slot_capacity_units) {}

Scheduler::~Scheduler() {
  stop();
  std::unique_lock lock(mutex_);
  for (auto& [id, job] : jobs_) {
    if (job.status.state == JobState::kRunning) job.stop.request_stop();
  }
  cv_.wait(lock, [&] { return active_workers_ == 0; });
}

std::vector<int> Scheduler::deploy(const DeploymentManifest& manifest, std::shared_ptr<const ModelInstance> model) {
  if (manifest.required_slots < 1 || manifest.max_concurrent_jobs < 1 || manifest.timeout_ms < 1) {
    throw Error(ErrorCode::kBadConfig, manifest.model_id + ": manifest counts must be positive");
  }
  if (!model || model->config().model_id != manifest.model_id) {
    throw Error(ErrorCode::kBadConfig, manifest.model_id + ": model instance does not match the manifest");
  }
  std::lock_guard lock(mutex_);
  if (deployments_.contains(manifest.model_id)) {
    throw Error(ErrorCode::kBadConfig, manifest.model_id + " is already deployed");
  }
  Deployment d;
  d.manifest = manifest;
  d.model = std::move(model);
  d.slot_ids = pool_.reserve(manifest.model_id, manifest.required_slots);
  auto slots = d.slot_ids;
  deployments_.emplace(manifest.model_id, std::move(d));
  return slots;
}

void Scheduler::undeploy(const std::string& model_id) {
  std::lock_guard lock(mutex_);
  auto it = deployments_.find(model_id);
  if (it == deployments_.end()) throw Error(ErrorCode::kUnknownModel, "no deployment " + model_id);
  Deployment& d = it->second;
  d.draining = true;
  while (!d.queue.empty()) {
    JobRecord& job = job_locked(d.queue.front());
    d.queue.pop_front();
    ++d.dequeued;
    finish_locked(job, Outcome{std::nullopt, JobFailure{ErrorCode::kUnknownModel, model_id + " was undeployed"}});
  }
  release_if_drained_locked(model_id);
  publish_queue_depth_locked();
}

void Scheduler::release_if_drained_locked(const std::string& model_id) {
  auto it = deployments_.find(model_id);
  if (it == deployments_.end() || !it->second.draining || it->second.running > 0) return;
  pool_.release(model_id);
  deployments_.erase(it);
}

EnqueueResult Scheduler::enqueue(JobRequest request, std::string owner) {
  std::lock_guard lock(mutex_);
  const std::int64_t now = clock_.now_ms();
  JobRecord job;
  job.id = ids_.next(now);
  job.owner = std::move(owner);
  job.model_id = request.model_id;
  job.graph = std::move(request.graph);
  job.submitted_at_ms = now;
  job.submitted = std::chrono::steady_clock::now();
  job.status.job_id = job.id;
  job.status.state = JobState::kQueued;
  ++counts_.submitted;
  ++counts_.queued;
  if (telemetry_) telemetry_->record({now, EventKind::kRequest, job.id, job.model_id, std::nullopt, std::nullopt});

  auto [it, inserted] = jobs_.emplace(job.id, std::move(job));
  JobRecord& rec = it->second;

  auto dep = deployments_.find(rec.model_id);
  std::optional<JobFailure> rejection;
  if (dep == deployments_.end() || dep->second.draining) {
    rejection = JobFailure{ErrorCode::kUnknownModel, "model '" + rec.model_id + "' is not deployed"};
  } else if (dep->second.queue.size() >= options_.queue_cap) {
    rejection = JobFailure{ErrorCode::kQuota, "queue for '" + rec.model_id + "' is full (" +
                                                  std::to_string(options_.queue_cap) + " jobs)"};
  }
  if (rejection) {
    rec.rejected = true;
    finish_locked(rec, Outcome{std::nullopt, rejection});
    return {rec.id, rec.status};
  }

  Deployment& d = dep->second;
  rec.queue_seq = d.enqueued++;
  d.queue.push_back(rec.id);
  d.submissions.push_back(rec.id);
  ++d.live;
  rec.status.queue_position = static_cast<std::int64_t>(d.queue.size()) - 1;
  publish_queue_depth_locked();
  cv_.notify_all();
  return {rec.id, rec.status};
}

Scheduler::JobRecord& Scheduler::job_locked(std::string_view job_id) {
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) throw Error(ErrorCode::kUnknownJob, "no job " + std::string(job_id));
  return it->second;
}

const Scheduler::JobRecord& Scheduler::job_locked(std::string_view job_id) const {
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) throw Error(ErrorCode::kUnknownJob, "no job " + std::string(job_id));
  return it->second;
}

JobStatus Scheduler::job_status(std::string_view job_id) const {
  std::lock_guard lock(mutex_);
  const JobRecord& job = job_locked(job_id);
  JobStatus status = job.status;
  status.queue_position.reset();
  if (status.state == JobState::kQueued) {
    const Deployment& d = deployments_.find(job.model_id)->second;
    status.queue_position = static_cast<std::int64_t>(job.queue_seq - d.dequeued);
  }
  return status;
}

std::string Scheduler::job_owner(std::string_view job_id) const {
  std::lock_guard lock(mutex_);
  return job_locked(job_id).owner;
}

std::optional<ResultManifest> Scheduler::job_result(std::string_view job_id) const {
  std::lock_guard lock(mutex_);
  return job_locked(job_id).result;
}

void Scheduler::inject_faults(FaultPolicy policy) {
  if (!options_.allow_fault_injection) {
    throw Error(ErrorCode::kBadConfig, "fault injection is only available in test/bench mode");
  }
  if (!(policy.fault_rate >= 0.0 && policy.fault_rate <= 1.0)) {
    throw Error(ErrorCode::kBadConfig, "fault rate must lie in [0, 1]");
  }
  std::lock_guard lock(mutex_);
  faults_.emplace(policy);
}

void Scheduler::transition_locked(JobRecord& job, JobState to, std::optional<JobFailure> failure) {
  if (!is_valid_transition(job.status.state, to)) {
    throw Error(ErrorCode::kWorkerFault, "illegal transition " + std::string(to_string(job.status.state)) +
                                             " -> " + std::string(to_string(to)) + " for " + job.id);
  }
  (job.status.state == JobState::kQueued ? counts_.queued : counts_.running)--;
  job.status.state = to;
  job.status.queue_position.reset();
  job.status.failure = std::move(failure);
  switch (to) {
    case JobState::kRunning: ++counts_.running; break;
    case JobState::kCompleted: ++counts_.completed; break;
    case JobState::kFailed: ++(job.rejected ? counts_.rejected : counts_.failed); break;
    case JobState::kQueued: break;
  }
}

void Scheduler::finish_locked(JobRecord& job, Outcome outcome) {
  if (is_terminal(job.status.state)) return;
  const auto latency = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - job.submitted).count();
  if (outcome.failure) {
    transition_locked(job, JobState::kFailed, outcome.failure);
  } else {
    job.result = std::move(outcome.manifest);
    transition_locked(job, JobState::kCompleted, std::nullopt);
  }
  if (!job.rejected) {
    if (auto it = deployments_.find(job.model_id); it != deployments_.end()) --it->second.live;
  }
  if (telemetry_) {
    Event e{clock_.now_ms(), outcome.failure ? EventKind::kFailed : EventKind::kCompleted, job.id, job.model_id,
            outcome.failure ? std::optional(outcome.failure->code) : std::nullopt, latency};
    telemetry_->record(e);
  }
  cv_.notify_all();
}

std::vector<std::pair<std::string, std::string>> Scheduler::tick() {
  std::lock_guard lock(mutex_);
  return tick_locked();
}

std::vector<std::pair<std::string, std::string>> Scheduler::tick_locked() {
  const auto now = std::chrono::steady_clock::now();
  for (auto& [id, job] : jobs_) {
    if (job.status.state == JobState::kRunning && job.deadline && now >= *job.deadline) {
      job.stop.request_stop();
      finish_locked(job, Outcome{std::nullopt, JobFailure{ErrorCode::kTimeout, "job exceeded its wall-clock cap"}});
    }
  }

  std::vector<std::pair<std::string, std::string>> assigned;
  for (auto& [model_id, d] : deployments_) {
    while (!d.draining && !d.queue.empty() && d.running < d.manifest.max_concurrent_jobs) {
      JobRecord& job = job_locked(d.queue.front());
      d.queue.pop_front();
      ++d.dequeued;
      transition_locked(job, JobState::kRunning, std::nullopt);
      job.deadline = now + std::chrono::milliseconds(d.manifest.timeout_ms);
      d.dispatches.push_back(job.id);
      ++d.running;
      ++active_workers_;
      const bool fault = faults_ && faults_->next();
      std::thread(&Scheduler::run_worker, this, job.id, job.graph, d.model, fault, job.stop.get_token()).detach();
      assigned.emplace_back(job.id, model_id);
    }
  }
  if (!assigned.empty()) publish_queue_depth_locked();
  return assigned;
}

void Scheduler::run_worker(std::string job_id, InterventionGraph graph, std::shared_ptr<const ModelInstance> model,
                           bool fault, std::stop_token stop) {
  Outcome outcome;
  try {
    if (fault) throw Error(ErrorCode::kWorkerFault, "injected worker fault");
    ResultBundle bundle = executor_(graph, *model, stop);
    outcome.manifest = store_bundle(store_, job_id, bundle, options_.result_encoding);
  } catch (const Error& e) {
    ErrorCode code = ErrorCode::kWorkerFault;
    if (e.code() == ErrorCode::kTimeout || e.code() == ErrorCode::kValidation) code = e.code();
    outcome.failure = JobFailure{code, e.message()};
  } catch (const std::exception& e) {
    outcome.failure = JobFailure{ErrorCode::kWorkerFault, e.what()};
  }
  complete(job_id, std::move(outcome));
}

void Scheduler::complete(const std::string& job_id, Outcome outcome) {
  std::lock_guard lock(mutex_);
  JobRecord& job = job_locked(job_id);
  finish_locked(job, std::move(outcome));
  if (auto it = deployments_.find(job.model_id); it != deployments_.end()) {
    --it->second.running;
    release_if_drained_locked(job.model_id);
  }
  --active_workers_;
  cv_.notify_all();
}

void Scheduler::start() {
  std::lock_guard lock(mutex_);
  if (dispatcher_.joinable()) return;
  stopping_ = false;
  dispatcher_ = std::thread([this] {
    std::unique_lock lock(mutex_);
    while (!stopping_) {
      tick_locked();
      std::optional<std::chrono::steady_clock::time_point> next_deadline;
      for (const auto& [id, job] : jobs_) {
        if (job.status.state == JobState::kRunning && job.deadline &&
            (!next_deadline || *job.deadline < *next_deadline)) {
          next_deadline = job.deadline;
        }
      }
      const auto wake = next_deadline.value_or(std::chrono::steady_clock::now() + std::chrono::milliseconds(200));
      cv_.wait_until(lock, wake);
    }
  });
}

void Scheduler::stop() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (dispatcher_.joinable()) dispatcher_.join();
}

bool Scheduler::idle_locked() const {
  if (active_workers_ > 0) return false;
  return std::all_of(deployments_.begin(), deployments_.end(),
                     [](const auto& kv) { return kv.second.queue.empty(); });
}

bool Scheduler::wait_until_idle(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mutex_);
  return cv_.wait_for(lock, timeout, [&] { return idle_locked(); });
}

SchedulerSnapshot Scheduler::snapshot() const {
  std::lock_guard lock(mutex_);
  return counts_;
}

std::vector<DeploymentSummary> Scheduler::deployments() const {
  std::lock_guard lock(mutex_);
  std::vector<DeploymentSummary> out;
  for (const auto& [model_id, d] : deployments_) {
    out.push_back({model_id, d.manifest.required_slots, d.slot_ids, static_cast<std::size_t>(d.live), d.running,
                   d.manifest.max_concurrent_jobs, d.draining ? "DRAINING" : "ACTIVE"});
  }
  return out;
}

ModelCatalog Scheduler::catalog() const {
  std::lock_guard lock(mutex_);
  ModelCatalog catalog;
  for (const auto& [model_id, d] : deployments_) {
    if (!d.draining) catalog.emplace(model_id, d.model->config());
  }
  return catalog;
}

std::vector<Slot> Scheduler::slots() const {
  std::lock_guard lock(mutex_);
  return pool_.slots();
}

std::vector<std::string> Scheduler::submission_log(const std::string& model_id) const {
  std::lock_guard lock(mutex_);
  auto it = deployments_.find(model_id);
  return it == deployments_.end() ? std::vector<std::string>{} : it->second.submissions;
}

std::vector<std::string> Scheduler::dispatch_log(const std::string& model_id) const {
  std::lock_guard lock(mutex_);
  auto it = deployments_.find(model_id);
  return it == deployments_.end() ? std::vector<std::string>{} : it->second.dispatches;
}

void Scheduler::publish_queue_depth_locked() {
  if (!telemetry_) return;
  std::int64_t depth = 0;
  for (const auto& [id, d] : deployments_) depth += static_cast<std::int64_t>(d.queue.size());
  telemetry_->set_queue_depth(depth);
}

}  // namespace edif

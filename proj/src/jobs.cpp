#include <algorithm>
#include <cstdio>

#include "provenance/hashing.hpp"
#include "provenance/image.hpp"
#include "provenance/service.hpp"

namespace provenance {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr JobState kForwardOrder[] = {JobState::queued, JobState::retrieving, JobState::interpreting,
                                      JobState::synthesizing, JobState::done};

int rank(JobState s) {
  for (int i = 0; i < 5; ++i) {
    if (kForwardOrder[i] == s) {
      return i;
    }
  }
  return -1;
}

std::string format_job_id(std::uint64_t n) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "job-%06llu", static_cast<unsigned long long>(n));
  return buf;
}

}  // namespace

const char* to_string(JobState s) {
  switch (s) {
    case JobState::queued:
      return "queued";
    case JobState::retrieving:
      return "retrieving";
    case JobState::interpreting:
      return "interpreting";
    case JobState::synthesizing:
      return "synthesizing";
    case JobState::done:
      return "done";
    case JobState::failed:
      return "failed";
  }
  return "?";
}

JobState job_state_from_string(std::string_view s) {
  for (const auto state : {JobState::queued, JobState::retrieving, JobState::interpreting, JobState::synthesizing,
                           JobState::done, JobState::failed}) {
    if (s == to_string(state)) {
      return state;
    }
  }
  throw InvalidArgument("unknown job state " + std::string(s));
}

bool is_terminal(JobState s) { return s == JobState::done || s == JobState::failed; }

bool is_valid_transition(JobState from, JobState to) {
  if (is_terminal(from)) {
    return false;
  }
  if (to == JobState::failed) {
    return true;
  }
  return rank(to) > rank(from);
}

json AnalysisJob::to_json() const {
  json hist = json::array();
  for (const auto& [state, ts] : history) {
    hist.push_back({{"state", state}, {"at", ts}});
  }
  json out = {{"job_id", job_id},
              {"state", to_string(state)},
              {"history", hist},
              {"parameters", {{"k", k}, {"m", m}, {"sigma", sigma}}}};
  if (state == JobState::failed) {
    out["failure"] = {{"stage", failure_stage}, {"message", failure_message}};
  }
  return out;
}

AnalysisJob AnalysisJob::from_json(const json& j) {
  AnalysisJob job;
  job.job_id = j.at("job_id").get<std::string>();
  job.state = job_state_from_string(j.at("state").get<std::string>());
  for (const auto& h : j.at("history")) {
    job.history.emplace_back(h.at("state").get<std::string>(), h.at("at").get<std::string>());
  }
  const auto& p = j.at("parameters");
  job.k = p.at("k").get<std::size_t>();
  job.m = p.at("m").get<long long>();
  job.sigma = p.at("sigma").get<double>();
  if (j.contains("failure")) {
    job.failure_stage = j["failure"].value("stage", std::string());
    job.failure_message = j["failure"].value("message", std::string());
  }
  return job;
}

// ---------------------------------------------------------------------------

JobStore::JobStore(fs::path dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_);
  for (const auto& entry : fs::directory_iterator(dir_)) {
    const auto name = entry.path().filename().string();
    if (!entry.is_directory() || name.rfind("job-", 0) != 0) {
      continue;
    }
    try {
      next_id_ = std::max<std::uint64_t>(next_id_, std::stoull(name.substr(4)) + 1);
    } catch (const std::exception&) {
      continue;
    }
    if (!fs::exists(entry.path() / "job.json")) {
      continue;
    }
    // A job that was mid-flight when the process stopped cannot resume.
    auto job = load_locked(name);
    if (!is_terminal(job.state)) {
      job.state = JobState::failed;
      job.failure_stage = "service";
      job.failure_message = "interrupted by service restart";
      job.history.emplace_back("failed", utc_timestamp());
      store_locked(job);
    }
  }
}

AnalysisJob JobStore::load_locked(const std::string& job_id) const {
  const auto path = dir_ / job_id / "job.json";
  if (job_id.empty() || job_id.find('/') != std::string::npos || !fs::exists(path)) {
    throw NotFound("unknown job " + job_id);
  }
  return AnalysisJob::from_json(json::parse(read_file_text(path.string())));
}

void JobStore::store_locked(const AnalysisJob& job) {
  write_file_atomic((dir_ / job.job_id / "job.json").string(), job.to_json().dump(2) + "\n");
}

AnalysisJob JobStore::create(std::span<const std::uint8_t> image, std::size_t k, long long m, double sigma) {
  std::lock_guard lock(mu_);
  AnalysisJob job;
  job.job_id = format_job_id(next_id_++);
  job.k = k;
  job.m = m;
  job.sigma = sigma;
  job.history.emplace_back("queued", utc_timestamp());
  write_file_atomic((dir_ / job.job_id / "query.bin").string(),
                    std::string_view(reinterpret_cast<const char*>(image.data()), image.size()));
  store_locked(job);
  return job;
}

AnalysisJob JobStore::advance_locked(const std::string& job_id, JobState next) {
  auto job = load_locked(job_id);
  if (job.state == next) {
    return job;
  }
  if (!is_valid_transition(job.state, next)) {
    throw InvalidArgument(std::string("job ") + job_id + " cannot move from " + to_string(job.state) + " to " +
                          to_string(next));
  }
  job.state = next;
  job.history.emplace_back(to_string(next), utc_timestamp());
  return job;
}

AnalysisJob JobStore::transition(const std::string& job_id, JobState next) {
  if (next == JobState::done || next == JobState::failed) {
    throw InvalidArgument("terminal states are entered through complete() or fail()");
  }
  std::lock_guard lock(mu_);
  auto job = advance_locked(job_id, next);
  store_locked(job);
  return job;
}

AnalysisJob JobStore::fail(const std::string& job_id, const std::string& stage, const std::string& message) {
  std::lock_guard lock(mu_);
  auto job = advance_locked(job_id, JobState::failed);
  job.failure_stage = stage;
  job.failure_message = message;
  store_locked(job);
  return job;
}

AnalysisJob JobStore::complete(const std::string& job_id, const std::string& report) {
  std::lock_guard lock(mu_);
  auto job = advance_locked(job_id, JobState::done);
  // The report lands before the state flips so that done always implies a report.
  write_file_atomic((dir_ / job_id / "report.json").string(), report);
  store_locked(job);
  return job;
}

void JobStore::save_artifact(const std::string& job_id, const std::string& name, const json& artifact) {
  std::lock_guard lock(mu_);
  load_locked(job_id);
  write_file_atomic((dir_ / job_id / (name + ".json")).string(), artifact.dump(2) + "\n");
}

bool JobStore::exists(const std::string& job_id) const {
  std::lock_guard lock(mu_);
  return !job_id.empty() && job_id.find('/') == std::string::npos && fs::exists(dir_ / job_id / "job.json");
}

AnalysisJob JobStore::get(const std::string& job_id) const {
  std::lock_guard lock(mu_);
  return load_locked(job_id);
}

std::string JobStore::report(const std::string& job_id) const {
  std::lock_guard lock(mu_);
  auto job = load_locked(job_id);
  if (job.state != JobState::done) {
    const std::string why = job.state == JobState::failed
                                ? "job failed at stage " + job.failure_stage + ": " + job.failure_message
                                : std::string("job is still ") + to_string(job.state);
    throw ConflictError(why, std::move(job));
  }
  return read_file_text((dir_ / job_id / "report.json").string());
}

std::vector<std::uint8_t> JobStore::query_image(const std::string& job_id) const {
  std::lock_guard lock(mu_);
  load_locked(job_id);
  return read_file_bytes((dir_ / job_id / "query.bin").string());
}

// ---------------------------------------------------------------------------

namespace {

class JobObserver final : public AnalysisObserver {
 public:
  JobObserver(JobStore& store, std::string job_id) : store_(store), job_id_(std::move(job_id)) {}

  void on_stage(AnalysisStage stage) override {
    switch (stage) {
      case AnalysisStage::retrieval:
      case AnalysisStage::aggregation:
        store_.transition(job_id_, JobState::retrieving);
        break;
      case AnalysisStage::interpretation:
        store_.transition(job_id_, JobState::interpreting);
        break;
      case AnalysisStage::synthesis:
        store_.transition(job_id_, JobState::synthesizing);
        break;
    }
  }
  void on_artifact(const std::string& name, const json& artifact) override {
    store_.save_artifact(job_id_, name, artifact);
  }

 private:
  JobStore& store_;
  std::string job_id_;
};

}  // namespace

AnalysisService::AnalysisService(Pipeline& pipeline, JobStore& store, int active_jobs)
    : pipeline_(pipeline), store_(store) {
  for (int i = 0; i < std::max(1, active_jobs); ++i) {
    workers_.emplace_back([this] { worker_loop(); });
  }
}

AnalysisService::~AnalysisService() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  for (auto& w : workers_) {
    w.join();
  }
}

std::string AnalysisService::submit(std::span<const std::uint8_t> image, const AnalysisOverrides& overrides) {
  auto params = pipeline_.config().default_params();
  if (overrides.k) {
    if (*overrides.k < 1) {
      throw InvalidArgument("k must be at least 1");
    }
    params.k = static_cast<std::size_t>(*overrides.k);
  }
  if (overrides.m) {
    if (*overrides.m < 1) {
      throw InvalidArgument("m must be at least 1");
    }
    params.m = *overrides.m;
  }
  if (sniff_media_type(image).empty()) {
    throw InvalidArgument("unsupported image format");
  }
  const auto job = store_.create(image, params.k, params.m, pipeline_.index().meta.sigma);
  {
    std::lock_guard lock(mu_);
    queue_.emplace_back(job.job_id, params);
  }
  cv_.notify_one();
  return job.job_id;
}

void AnalysisService::wait_idle() {
  std::unique_lock lock(mu_);
  idle_cv_.wait(lock, [this] { return queue_.empty() && running_ == 0; });
}

void AnalysisService::worker_loop() {
  while (true) {
    std::pair<std::string, AnalysisParams> item;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (stopping_ && queue_.empty()) {
        return;
      }
      item = std::move(queue_.front());
      queue_.pop_front();
      ++running_;
      params_[item.first] = item.second;
    }
    process(item.first);
    {
      std::lock_guard lock(mu_);
      params_.erase(item.first);
      --running_;
    }
    idle_cv_.notify_all();
  }
}

void AnalysisService::process(const std::string& job_id) {
  AnalysisParams params;
  {
    std::lock_guard lock(mu_);
    params = params_.at(job_id);
  }
  Transcript transcript;
  JobObserver observer(store_, job_id);
  try {
    const auto image = store_.query_image(job_id);
    const auto report = pipeline_.analyze(image, params, transcript, &observer);
    store_.save_artifact(job_id, "transcript", transcript.to_json());
    store_.complete(job_id, serialize_report(report));
  } catch (const AnalysisError& e) {
    store_.save_artifact(job_id, "transcript", transcript.to_json());
    store_.fail(job_id, to_string(e.stage()), e.detail());
  } catch (const std::exception& e) {
    store_.save_artifact(job_id, "transcript", transcript.to_json());
    store_.fail(job_id, "service", e.what());
  }
}

}  // namespace provenance

#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "provenance/corpus.hpp"
#include "provenance/embedding.hpp"
#include "provenance/evaluation.hpp"
#include "provenance/gaussian.hpp"
#include "provenance/inference.hpp"
#include "provenance/retrieval.hpp"

namespace httplib {
class Server;
}

namespace provenance {

struct EmbedderConfig {
  std::string kind = "stub";  // "stub" | "remote"
  std::string base_url;
  std::string embedder_id;
  std::size_t dim = 0;
  bool supports_text = true;
};

struct VlmConfig {
  std::string kind = "mock";  // "mock" | "remote"
  std::filesystem::path fixtures_dir;
  std::filesystem::path miss_dir;
  std::string base_url;
  std::string api_key;
  std::string model = "gpt-4o";
};

struct ServiceConfig {
  std::filesystem::path data_dir = "data";
  std::filesystem::path index_path;  // default <data_dir>/index.bin
  std::filesystem::path jobs_dir;    // default <data_dir>/jobs
  std::filesystem::path scores_log;  // default <data_dir>/scores.jsonl
  std::filesystem::path prompts_dir;  // empty: built-in templates
  std::filesystem::path ui_dir;       // optional static bundle served at /

  EmbedderConfig raw_embedder;
  EmbedderConfig semantic_embedder;
  VlmConfig vlm;

  std::size_t k = 5;
  long long m = 10;
  double sigma = kDefaultEdgeSigma;
  int preprocess_side = kDefaultPreprocessSide;
  CandidateOrdering ordering = CandidateOrdering::label;
  bool allow_degraded = false;
  int context_window_pages = 0;

  std::string host = "127.0.0.1";
  int port = 8080;

  std::size_t max_upload_bytes = 10u << 20;
  int phase1_concurrency = 4;
  int active_jobs = 1;
  int provider_attempts = 3;
  int retry_backoff_ms = 200;

  // Relative paths are resolved against `base_dir`.
  static ServiceConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
  static ServiceConfig load(const std::filesystem::path& file);

  // EMBED_API_BASE, VLM_API_BASE and VLM_API_KEY override the file.
  void apply_environment();
  void fill_defaults();
  // Throws InvalidArgument on k/m < 1, sigma <= 0 and other bad limits.
  void validate() const;

  RetryPolicy retry_policy() const;
  AnalysisParams default_params() const;
};

std::unique_ptr<EmbedderProvider> make_embedder(const EmbedderConfig& config);
std::unique_ptr<VlmClient> make_vlm_client(const VlmConfig& config);

// Everything needed to run analyses against one published corpus and index.
// The CLI and the HTTP service both go through analyze(), so equal inputs
// produce equal reports.
class Pipeline {
 public:
  explicit Pipeline(const ServiceConfig& config);

  AttributionReport analyze(std::span<const std::uint8_t> query_image, const AnalysisParams& params,
                            Transcript& transcript, AnalysisObserver* observer = nullptr);

  const ServiceConfig& config() const { return config_; }
  const Corpus& corpus() const { return corpus_; }
  const VectorIndex& index() const { return index_; }

 private:
  ServiceConfig config_;
  Corpus corpus_;
  VectorIndex index_;
  std::unique_ptr<EmbedderProvider> raw_provider_;
  std::unique_ptr<EmbedderProvider> semantic_provider_;
  std::unique_ptr<VlmClient> client_;
  PromptSet prompts_;
};

// Builds the index for the configured corpus and publishes it atomically.
VectorIndex build_and_publish_index(const ServiceConfig& config);

// ---------------------------------------------------------------------------
// Jobs

enum class JobState { queued, retrieving, interpreting, synthesizing, done, failed };
const char* to_string(JobState s);
JobState job_state_from_string(std::string_view s);
bool is_terminal(JobState s);
// Forward along queued -> retrieving -> interpreting -> synthesizing -> done;
// failed from any non-terminal state.
bool is_valid_transition(JobState from, JobState to);

struct AnalysisJob {
  std::string job_id;
  JobState state = JobState::queued;
  std::vector<std::pair<std::string, std::string>> history;  // (state, timestamp)
  std::size_t k = 0;
  long long m = 0;
  double sigma = 0.0;
  std::string failure_stage;
  std::string failure_message;

  nlohmann::json to_json() const;
  static AnalysisJob from_json(const nlohmann::json& j);
};

class ConflictError : public Error {
 public:
  ConflictError(const std::string& message, AnalysisJob job) : Error(message), job_(std::move(job)) {}
  const AnalysisJob& job() const { return job_; }

 private:
  AnalysisJob job_;
};

// File-backed job records: <dir>/<job_id>/{job.json, query.bin, report.json, ...}.
// Writes are serialized; a job's state only moves forward.
class JobStore {
 public:
  explicit JobStore(std::filesystem::path dir);

  AnalysisJob create(std::span<const std::uint8_t> image, std::size_t k, long long m, double sigma);
  AnalysisJob transition(const std::string& job_id, JobState next);
  AnalysisJob fail(const std::string& job_id, const std::string& stage, const std::string& message);
  AnalysisJob complete(const std::string& job_id, const std::string& report);
  void save_artifact(const std::string& job_id, const std::string& name, const nlohmann::json& artifact);

  bool exists(const std::string& job_id) const;
  AnalysisJob get(const std::string& job_id) const;
  // Throws ConflictError unless the job is done.
  std::string report(const std::string& job_id) const;
  std::vector<std::uint8_t> query_image(const std::string& job_id) const;
  std::filesystem::path job_dir(const std::string& job_id) const { return dir_ / job_id; }

 private:
  AnalysisJob load_locked(const std::string& job_id) const;
  void store_locked(const AnalysisJob& job);
  AnalysisJob advance_locked(const std::string& job_id, JobState next);

  std::filesystem::path dir_;
  mutable std::mutex mu_;
  std::uint64_t next_id_ = 1;
};

struct AnalysisOverrides {
  std::optional<long long> k;
  std::optional<long long> m;
};

// Embedded queue feeding a fixed number of worker threads.
class AnalysisService {
 public:
  AnalysisService(Pipeline& pipeline, JobStore& store, int active_jobs = 1);
  ~AnalysisService();
  AnalysisService(const AnalysisService&) = delete;
  AnalysisService& operator=(const AnalysisService&) = delete;

  // Validates overrides before any job is created.
  std::string submit(std::span<const std::uint8_t> image, const AnalysisOverrides& overrides = {});
  AnalysisJob get_job(const std::string& job_id) const { return store_.get(job_id); }
  std::string get_report(const std::string& job_id) const { return store_.report(job_id); }
  // Blocks until the queue is drained and no job is running.
  void wait_idle();

 private:
  void worker_loop();
  void process(const std::string& job_id);

  Pipeline& pipeline_;
  JobStore& store_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::deque<std::pair<std::string, AnalysisParams>> queue_;
  std::map<std::string, AnalysisParams> params_;
  int running_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

// HTTP front end:
//   POST /api/analyses                  multipart field "image", optional "k", "m"
//   GET  /api/analyses/{id}
//   GET  /api/analyses/{id}/report
//   GET  /api/corpus/images/{image_id}
//   POST /api/scores
//   GET  /api/eval/distribution?question=Q1|Q2
//   GET  /                              static review UI bundle (when configured)
class HttpServer {
 public:
  HttpServer(const ServiceConfig& config, Pipeline& pipeline, AnalysisService& service, JobStore& jobs,
             ScoreBook& scores);
  ~HttpServer();

  // Returns the bound port.
  int bind(const std::string& host, int port);
  void listen();  // blocks until stop()
  void stop();

 private:
  void install_routes();

  ServiceConfig config_;
  Pipeline& pipeline_;
  AnalysisService& service_;
  JobStore& jobs_;
  ScoreBook& scores_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace provenance

#include <cstdlib>

#include "provenance/hashing.hpp"
#include "provenance/service.hpp"

namespace provenance {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path resolve(const fs::path& base, const std::string& value) {
  if (value.empty()) {
    return {};
  }
  const fs::path p(value);
  return p.is_absolute() ? p : base / p;
}

EmbedderConfig embedder_from_json(const json& j) {
  EmbedderConfig c;
  c.kind = j.value("kind", c.kind);
  c.base_url = j.value("base_url", c.base_url);
  c.embedder_id = j.value("embedder_id", c.embedder_id);
  c.dim = j.value("dim", c.dim);
  c.supports_text = j.value("supports_text", c.supports_text);
  return c;
}

}  // namespace

ServiceConfig ServiceConfig::from_json(const json& doc, const fs::path& base_dir) {
  ServiceConfig c;
  try {
    c.data_dir = resolve(base_dir, doc.value("data_dir", std::string("data")));
    c.index_path = resolve(base_dir, doc.value("index_path", std::string()));
    c.jobs_dir = resolve(base_dir, doc.value("jobs_dir", std::string()));
    c.scores_log = resolve(base_dir, doc.value("scores_log", std::string()));
    c.prompts_dir = resolve(base_dir, doc.value("prompts_dir", std::string()));
    c.ui_dir = resolve(base_dir, doc.value("ui_dir", std::string()));
    if (doc.contains("embedders")) {
      const auto& e = doc.at("embedders");
      if (e.contains("raw")) c.raw_embedder = embedder_from_json(e.at("raw"));
      if (e.contains("semantic")) c.semantic_embedder = embedder_from_json(e.at("semantic"));
    }
    if (doc.contains("vlm")) {
      const auto& v = doc.at("vlm");
      c.vlm.kind = v.value("kind", c.vlm.kind);
      c.vlm.fixtures_dir = resolve(base_dir, v.value("fixtures_dir", std::string()));
      c.vlm.miss_dir = resolve(base_dir, v.value("miss_dir", std::string()));
      c.vlm.base_url = v.value("base_url", c.vlm.base_url);
      c.vlm.api_key = v.value("api_key", c.vlm.api_key);
      c.vlm.model = v.value("model", c.vlm.model);
    }
    if (doc.contains("defaults")) {
      const auto& d = doc.at("defaults");
      c.k = d.value("k", c.k);
      c.m = d.value("m", c.m);
      c.sigma = d.value("sigma", c.sigma);
      c.preprocess_side = d.value("preprocess_side", c.preprocess_side);
      c.ordering = ordering_from_string(d.value("ordering", std::string("label")));
      c.context_window_pages = d.value("context_window_pages", c.context_window_pages);
    }
    if (doc.contains("listen")) {
      c.host = doc.at("listen").value("host", c.host);
      c.port = doc.at("listen").value("port", c.port);
    }
    if (doc.contains("limits")) {
      const auto& l = doc.at("limits");
      c.max_upload_bytes = l.value("max_upload_bytes", c.max_upload_bytes);
      c.phase1_concurrency = l.value("phase1_concurrency", c.phase1_concurrency);
      c.active_jobs = l.value("active_jobs", c.active_jobs);
      c.provider_attempts = l.value("provider_attempts", c.provider_attempts);
      c.retry_backoff_ms = l.value("retry_backoff_ms", c.retry_backoff_ms);
    }
    c.allow_degraded = doc.value("allow_degraded", c.allow_degraded);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("invalid configuration: ") + e.what());
  }
  c.fill_defaults();
  return c;
}

ServiceConfig ServiceConfig::load(const fs::path& file) {
  json doc;
  try {
    doc = json::parse(read_file_text(file.string()));
  } catch (const json::parse_error& e) {
    throw InvalidArgument("configuration " + file.string() + " is not valid JSON: " + e.what());
  }
  return from_json(doc, file.has_parent_path() ? file.parent_path() : fs::path("."));
}

void ServiceConfig::fill_defaults() {
  if (index_path.empty()) index_path = data_dir / "index.bin";
  if (jobs_dir.empty()) jobs_dir = data_dir / "jobs";
  if (scores_log.empty()) scores_log = data_dir / "scores.jsonl";
}

void ServiceConfig::apply_environment() {
  if (const char* base = std::getenv("EMBED_API_BASE"); base && *base) {
    for (auto* e : {&raw_embedder, &semantic_embedder}) {
      if (e->kind == "remote") {
        e->base_url = base;
      }
    }
  }
  if (const char* base = std::getenv("VLM_API_BASE"); base && *base) {
    vlm.base_url = base;
  }
  if (const char* key = std::getenv("VLM_API_KEY"); key && *key) {
    vlm.api_key = key;
  }
}

void ServiceConfig::validate() const {
  if (k < 1) throw InvalidArgument("k must be at least 1");
  if (m < 1) throw InvalidArgument("m must be at least 1");
  if (!(sigma > 0.0)) throw InvalidArgument("sigma must be positive");
  if (preprocess_side < 1) throw InvalidArgument("preprocess_side must be positive");
  if (context_window_pages < 0 || context_window_pages > 1) throw InvalidArgument("context_window_pages must be 0 or 1");
  if (phase1_concurrency < 1) throw InvalidArgument("phase1_concurrency must be at least 1");
  if (active_jobs < 1) throw InvalidArgument("active_jobs must be at least 1");
  if (provider_attempts < 1) throw InvalidArgument("provider_attempts must be at least 1");
  if (max_upload_bytes < 1) throw InvalidArgument("max_upload_bytes must be positive");
  for (const auto* e : {&raw_embedder, &semantic_embedder}) {
    if (e->kind != "stub" && e->kind != "remote") {
      throw InvalidArgument("unknown embedder kind '" + e->kind + "'");
    }
  }
  if (vlm.kind != "mock" && vlm.kind != "remote") {
    throw InvalidArgument("unknown VLM kind '" + vlm.kind + "'");
  }
}

RetryPolicy ServiceConfig::retry_policy() const {
  return RetryPolicy{provider_attempts, std::chrono::milliseconds(retry_backoff_ms)};
}

AnalysisParams ServiceConfig::default_params() const { return AnalysisParams{k, m, ordering, allow_degraded}; }

std::unique_ptr<EmbedderProvider> make_embedder(const EmbedderConfig& config) {
  if (config.kind == "stub") {
    return std::make_unique<StubEmbedder>();
  }
  if (config.kind == "remote") {
    return std::make_unique<RemoteEmbedder>(
        RemoteEmbedderConfig{config.base_url, config.embedder_id, config.dim, config.supports_text});
  }
  throw InvalidArgument("unknown embedder kind '" + config.kind + "'");
}

std::unique_ptr<VlmClient> make_vlm_client(const VlmConfig& config) {
  if (config.kind == "mock") {
    return std::make_unique<MockVlmClient>(config.fixtures_dir, config.miss_dir);
  }
  if (config.kind == "remote") {
    RemoteVlmConfig remote;
    remote.base_url = config.base_url;
    remote.api_key = config.api_key;
    remote.model = config.model;
    return std::make_unique<RemoteVlmClient>(remote);
  }
  throw InvalidArgument("unknown VLM kind '" + config.kind + "'");
}

Pipeline::Pipeline(const ServiceConfig& config)
    : config_(config),
      corpus_(Corpus::open(config.data_dir)),
      index_(load_index(config.index_path)),
      raw_provider_(make_embedder(config.raw_embedder)),
      semantic_provider_(make_embedder(config.semantic_embedder)),
      client_(make_vlm_client(config.vlm)),
      prompts_(config.prompts_dir.empty() ? PromptSet::builtin() : PromptSet::from_directory(config.prompts_dir)) {
  config_.validate();
}

AttributionReport Pipeline::analyze(std::span<const std::uint8_t> query_image, const AnalysisParams& params,
                                    Transcript& transcript, AnalysisObserver* observer) {
  InferenceOptions inference;
  inference.transport_retry = config_.retry_policy();
  inference.phase1_concurrency = config_.phase1_concurrency;
  PipelineResources resources{corpus_,  index_,   *raw_provider_, *semantic_provider_,
                              *client_, prompts_, inference,      config_.retry_policy()};
  return run_analysis(query_image, params, resources, transcript, observer);
}

VectorIndex build_and_publish_index(const ServiceConfig& config) {
  config.validate();
  const auto corpus = Corpus::open(config.data_dir);
  auto raw = make_embedder(config.raw_embedder);
  auto semantic = make_embedder(config.semantic_embedder);
  IndexOptions options;
  options.sigma = config.sigma;
  options.preprocess_side = config.preprocess_side;
  options.retry = config.retry_policy();
  auto index = build_index(corpus, *raw, *semantic, options);
  save_index(index, config.index_path);
  return index;
}

}  // namespace provenance

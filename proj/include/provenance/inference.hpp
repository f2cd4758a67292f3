#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "provenance/aggregate.hpp"
#include "provenance/corpus.hpp"
#include "provenance/errors.hpp"
#include "provenance/retrieval.hpp"

namespace provenance {

// A VLM reply that does not match the expected JSON schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// A cited (document, page) that is outside the corpus or outside the allowed set.
class CitationError : public Error {
 public:
  using Error::Error;
};

struct Reference {
  std::string doc_id;
  int page_no = 0;

  bool operator==(const Reference&) const = default;
  auto operator<=>(const Reference&) const = default;
};

struct ImagePayload {
  std::string media_type;
  std::vector<std::uint8_t> bytes;
  std::string sha256;

  static ImagePayload from_bytes(std::vector<std::uint8_t> bytes);
};

using TargetImage = ImagePayload;

struct CandidateDossier {
  CandidateLabel label;
  ImagePayload image;
  DocumentRecord document;
  std::vector<Paragraph> context;  // caption first, as returned by link_context
  std::map<Strategy, double> scores;
};

CandidateDossier make_dossier(const Corpus& corpus, const PoolEntry& entry);

struct CandidateInterpretation {
  CandidateLabel label;
  std::string excavation_site;
  std::string cultural_period;
  std::string similarity_rationale;
  Reference reference;

  bool operator==(const CandidateInterpretation&) const = default;
};

// ---------------------------------------------------------------------------
// VLM client contract

struct VlmRequest {
  std::string purpose;  // "interpret:<label>" or "synthesize"
  int attempt = 1;      // 2 for the corrective re-prompt
  std::string prompt;
  std::vector<ImagePayload> images;
};

// SHA-256 over the prompt followed by "\n<sha256 of image>" per attached image.
std::string request_key(const VlmRequest& request);

class VlmClient {
 public:
  virtual ~VlmClient() = default;
  virtual std::string model() const = 0;
  // Returns the assistant's text. Throws TransportError on retryable failure.
  virtual std::string complete(const VlmRequest& request) = 0;
};

struct TranscriptEntry {
  std::string purpose;
  int attempt = 1;
  int transport_try = 1;
  std::string request_key;
  std::string prompt;
  std::vector<std::string> image_digests;
  std::string response;
  std::string error;
};

// Every VLM exchange of one analysis. Safe for concurrent recording.
class Transcript {
 public:
  void record(TranscriptEntry entry);
  // Sorted by (purpose, attempt, transport_try), independent of call interleaving.
  std::vector<TranscriptEntry> entries() const;
  std::size_t count_with_prefix(std::string_view purpose_prefix) const;
  nlohmann::json to_json() const;

 private:
  mutable std::mutex mu_;
  std::vector<TranscriptEntry> entries_;
};

class MockMissError : public Error {
 public:
  using Error::Error;
};

// Replays canned replies stored as <fixtures_dir>/<request_key>.json. An
// optional responder is consulted first (tests script behaviour with it). On
// a miss the request is written to `miss_dir`, when set, for fixture authoring.
class MockVlmClient final : public VlmClient {
 public:
  using Responder = std::function<std::optional<std::string>(const VlmRequest&)>;

  explicit MockVlmClient(std::filesystem::path fixtures_dir = {}, std::filesystem::path miss_dir = {});

  std::string model() const override { return "mock-vlm"; }
  std::string complete(const VlmRequest& request) override;
  void set_responder(Responder responder) { responder_ = std::move(responder); }

 private:
  std::filesystem::path fixtures_dir_;
  std::filesystem::path miss_dir_;
  Responder responder_;
};

struct RemoteVlmConfig {
  std::string base_url;  // POST <base_url>/chat/completions
  std::string api_key;
  std::string model = "gpt-4o";
  std::chrono::seconds timeout{120};
  int max_tokens = 1024;
};

// OpenAI-style chat-completions client. Requests temperature 0 and a fixed
// seed; images travel as base64 data URLs.
class RemoteVlmClient final : public VlmClient {
 public:
  explicit RemoteVlmClient(RemoteVlmConfig config);
  std::string model() const override { return config_.model; }
  std::string complete(const VlmRequest& request) override;

 private:
  RemoteVlmConfig config_;
};

// ---------------------------------------------------------------------------
// Prompt templates

// Text with {{name}} placeholders. Rendering fails when a placeholder has no value.
class PromptTemplate {
 public:
  PromptTemplate(std::string name, std::string text);

  const std::string& name() const { return name_; }
  const std::string& text() const { return text_; }
  const std::string& sha256() const { return sha256_; }
  std::vector<std::string> placeholders() const;
  std::string render(const std::map<std::string, std::string>& values) const;

 private:
  std::string name_;
  std::string text_;
  std::string sha256_;
};

struct PromptSet {
  PromptTemplate interpret;
  PromptTemplate synthesize;

  // Compiled in from prompts/ at build time.
  static PromptSet builtin();
  // Reads interpret_candidate.v1.txt and synthesize_attribution.v1.txt from `dir`.
  static PromptSet from_directory(const std::filesystem::path& dir);
};

// ---------------------------------------------------------------------------
// Phase 1 / Phase 2

struct InferenceOptions {
  RetryPolicy transport_retry{3, std::chrono::milliseconds(500)};
  int phase1_concurrency = 4;
};

struct InferenceContext {
  const Corpus& corpus;
  VlmClient& client;
  const PromptSet& prompts;
  Transcript& transcript;
  InferenceOptions options;
};

// Accepts a bare object or one wrapped in a ```json fence.
nlohmann::json extract_json_object(std::string_view reply);

CandidateInterpretation parse_interpretation(std::string_view reply, const CandidateLabel& expected_label);

struct SynthesisReply {
  std::string site;
  std::string period;
  Reference best_reference;
  std::string justification;
};
SynthesisReply parse_synthesis(std::string_view reply);

struct InterpretationOutcome {
  CandidateInterpretation interpretation;
  // False when the cited page fails validate_reference; such interpretations
  // are excluded from Phase 2 and from the report.
  bool valid = true;
  std::string diagnostic;
  int retries = 0;
};

std::string render_interpret_prompt(const CandidateDossier& dossier, const PromptTemplate& tmpl);
std::string render_synthesize_prompt(std::span<const CandidateInterpretation> interpretations,
                                     const PromptTemplate& tmpl);

// One corrective re-prompt on schema failure, then SchemaError.
InterpretationOutcome interpret_candidate(const CandidateDossier& dossier, const TargetImage& target,
                                          InferenceContext& ctx);

struct CitedPage {
  Reference reference;
  std::string title;
  std::string language_tag;
  std::string source_uri;
};

struct ExcludedCandidate {
  CandidateLabel label;
  std::string reason;  // "citation_invalid" or "schema_invalid"
};

struct RetrievalTrace {
  std::size_t k = 0;
  long long m = 0;
  double sigma = 0.0;
  CandidateOrdering ordering = CandidateOrdering::label;
  std::vector<SearchHit> hits_raw;
  std::vector<SearchHit> hits_edge;
  std::vector<SearchHit> hits_clip;
  std::vector<std::string> failures;
  CandidatePool pool;
  std::vector<CandidateLabel> ordered;
  std::vector<CandidateLabel> truncated;
};

struct ReportProvenance {
  std::string corpus_checksum;
  std::string raw_embedder;
  std::string semantic_embedder;
  std::string vlm_model;
  std::string interpret_template;
  std::string interpret_template_sha256;
  std::string synthesize_template;
  std::string synthesize_template_sha256;
};

struct AttributionReport {
  std::string target_sha256;
  std::size_t target_bytes = 0;
  std::string target_media_type;
  std::string site;
  std::string period;
  Reference best_reference;
  std::string justification;
  std::vector<CandidateInterpretation> interpretations;
  std::vector<ExcludedCandidate> excluded;
  std::vector<CitedPage> cited_pages;
  RetrievalTrace trace;
  ReportProvenance provenance;
};

inline constexpr int kReportFormatVersion = 1;

// Requires at least one interpretation. The chosen best_reference must be one
// of the interpretations' references; otherwise one corrective re-prompt,
// then CitationError.
AttributionReport synthesize(const TargetImage& target, std::span<const CandidateInterpretation> interpretations,
                             InferenceContext& ctx);

nlohmann::json report_to_json(const AttributionReport& report);
// Pretty-printed JSON with a trailing newline; byte-stable for equal reports.
std::string serialize_report(const AttributionReport& report);

// ---------------------------------------------------------------------------
// End-to-end analysis

enum class AnalysisStage { retrieval, aggregation, interpretation, synthesis };
const char* to_string(AnalysisStage stage);

class AnalysisError : public Error {
 public:
  AnalysisError(AnalysisStage stage, const std::string& message)
      : Error(std::string(to_string(stage)) + ": " + message), stage_(stage), detail_(message) {}
  AnalysisStage stage() const { return stage_; }
  const std::string& detail() const { return detail_; }

 private:
  AnalysisStage stage_;
  std::string detail_;
};

struct AnalysisParams {
  std::size_t k = 5;
  long long m = 10;
  CandidateOrdering ordering = CandidateOrdering::label;
  bool allow_degraded = false;
};

struct PipelineResources {
  const Corpus& corpus;
  const VectorIndex& index;
  EmbedderProvider& raw_provider;
  EmbedderProvider& semantic_provider;
  VlmClient& client;
  const PromptSet& prompts;
  InferenceOptions inference;
  RetryPolicy embed_retry;
};

// Receives stage transitions and intermediate artifacts as they are produced.
class AnalysisObserver {
 public:
  virtual ~AnalysisObserver() = default;
  virtual void on_stage(AnalysisStage /*stage*/) {}
  virtual void on_artifact(const std::string& /*name*/, const nlohmann::json& /*artifact*/) {}
};

// retrieve_all -> pool -> order -> truncate -> dossiers -> Phase 1 (bounded
// concurrency) -> Phase 2. Failures surface as AnalysisError naming the stage.
AttributionReport run_analysis(std::span<const std::uint8_t> query_image, const AnalysisParams& params,
                               PipelineResources& resources, Transcript& transcript,
                               AnalysisObserver* observer = nullptr);

}  // namespace provenance

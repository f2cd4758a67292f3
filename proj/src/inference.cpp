#include "provenance/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <set>
#include <thread>

#include "provenance/hashing.hpp"

namespace provenance {

using nlohmann::json;

namespace {

std::string format_score(double score) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", score);
  return buf;
}

std::string required_text(const json& obj, const char* key) {
  if (!obj.contains(key) || !obj.at(key).is_string()) {
    throw SchemaError(std::string("field \"") + key + "\" must be a string");
  }
  auto value = obj.at(key).get<std::string>();
  if (value.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw SchemaError(std::string("field \"") + key + "\" must not be empty");
  }
  return value;
}

Reference required_reference(const json& obj, const char* key) {
  if (!obj.contains(key) || !obj.at(key).is_object()) {
    throw SchemaError(std::string("field \"") + key + "\" must be an object with doc_id and page_no");
  }
  const auto& ref = obj.at(key);
  Reference out;
  out.doc_id = required_text(ref, "doc_id");
  if (!ref.contains("page_no") || !ref.at("page_no").is_number_integer()) {
    throw SchemaError(std::string("field \"") + key + ".page_no\" must be an integer");
  }
  out.page_no = ref.at("page_no").get<int>();
  return out;
}

json reference_json(const Reference& r) { return {{"doc_id", r.doc_id}, {"page_no", r.page_no}}; }

json interpretation_json(const CandidateInterpretation& i) {
  return {{"label", i.label.str()},
          {"excavation_site", i.excavation_site},
          {"cultural_period", i.cultural_period},
          {"similarity_rationale", i.similarity_rationale},
          {"reference", reference_json(i.reference)}};
}

std::string corrective_prompt(const std::string& original, const std::string& problem) {
  return original + "\n\nYour previous reply was rejected: " + problem +
         "\nReply again with exactly one JSON object in the format described above.";
}

// Sends one request, retrying transport failures, and records every try.
std::string call_vlm(InferenceContext& ctx, const VlmRequest& request) {
  const int tries = std::max(1, ctx.options.transport_retry.max_attempts);
  const auto key = request_key(request);
  std::vector<std::string> digests;
  for (const auto& img : request.images) {
    digests.push_back(img.sha256);
  }
  for (int t = 1;; ++t) {
    TranscriptEntry entry{request.purpose, request.attempt, t, key, request.prompt, digests, {}, {}};
    try {
      entry.response = ctx.client.complete(request);
      ctx.transcript.record(entry);
      return entry.response;
    } catch (const TransportError& e) {
      entry.error = e.what();
      ctx.transcript.record(entry);
      if (t >= tries) {
        throw TransportError("VLM call " + request.purpose + " failed after " + std::to_string(tries) +
                             " attempts: " + e.what());
      }
      std::this_thread::sleep_for(ctx.options.transport_retry.backoff * t);
    } catch (const std::exception& e) {
      entry.error = e.what();
      ctx.transcript.record(entry);
      throw;
    }
  }
}

}  // namespace

CandidateDossier make_dossier(const Corpus& corpus, const PoolEntry& entry) {
  const auto& asset = corpus.asset(entry.label);
  CandidateDossier d;
  d.label = entry.label;
  d.image = ImagePayload::from_bytes(corpus.asset_bytes(asset));
  d.document = corpus.document(asset.doc_id);
  d.context = corpus.link_context(asset.image_id);
  d.scores = entry.best_score;
  return d;
}

json extract_json_object(std::string_view reply) {
  const auto open = reply.find('{');
  const auto close = reply.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) {
    throw SchemaError("reply contains no JSON object");
  }
  try {
    auto doc = json::parse(reply.substr(open, close - open + 1));
    if (!doc.is_object()) {
      throw SchemaError("reply is not a JSON object");
    }
    return doc;
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("reply is not valid JSON: ") + e.what());
  }
}

CandidateInterpretation parse_interpretation(std::string_view reply, const CandidateLabel& expected_label) {
  const auto doc = extract_json_object(reply);
  CandidateInterpretation out;
  const auto label = required_text(doc, "label");
  if (label != expected_label.str()) {
    throw SchemaError("field \"label\" must be \"" + expected_label.str() + "\", got \"" + label + "\"");
  }
  out.label = expected_label;
  out.excavation_site = required_text(doc, "excavation_site");
  out.cultural_period = required_text(doc, "cultural_period");
  out.similarity_rationale = required_text(doc, "similarity_rationale");
  out.reference = required_reference(doc, "reference");
  return out;
}

SynthesisReply parse_synthesis(std::string_view reply) {
  const auto doc = extract_json_object(reply);
  SynthesisReply out;
  out.site = required_text(doc, "site");
  out.period = required_text(doc, "period");
  out.best_reference = required_reference(doc, "best_reference");
  out.justification = required_text(doc, "justification");
  return out;
}

std::string render_interpret_prompt(const CandidateDossier& dossier, const PromptTemplate& tmpl) {
  std::string context;
  for (const auto& p : dossier.context) {
    context += "[" + p.para_id + "] " + p.text + "\n";
  }
  if (context.empty()) {
    context = "(no text accompanies this reference image)\n";
  } else {
    context.pop_back();
  }
  std::string retrieval;
  for (const auto& [strategy, score] : dossier.scores) {
    if (!retrieval.empty()) {
      retrieval += ", ";
    }
    retrieval += std::string(to_string(strategy)) + " similarity " + format_score(score);
  }
  return tmpl.render({{"label", dossier.label.str()},
                      {"doc_title", dossier.document.title},
                      {"doc_id", dossier.document.doc_id},
                      {"language_tag", dossier.document.language_tag},
                      {"page_count", std::to_string(dossier.document.page_count)},
                      {"page_no", std::to_string(dossier.label.page_no)},
                      {"retrieval", retrieval},
                      {"context", context}});
}

std::string render_synthesize_prompt(std::span<const CandidateInterpretation> interpretations,
                                     const PromptTemplate& tmpl) {
  std::string lines;
  for (const auto& i : interpretations) {
    lines += interpretation_json(i).dump() + "\n";
  }
  if (!lines.empty()) {
    lines.pop_back();
  }
  return tmpl.render({{"interpretations", lines}});
}

InterpretationOutcome interpret_candidate(const CandidateDossier& dossier, const TargetImage& target,
                                          InferenceContext& ctx) {
  VlmRequest request;
  request.purpose = "interpret:" + dossier.label.str();
  request.prompt = render_interpret_prompt(dossier, ctx.prompts.interpret);
  request.images = {target, dossier.image};

  InterpretationOutcome outcome;
  std::string reply = call_vlm(ctx, request);
  try {
    outcome.interpretation = parse_interpretation(reply, dossier.label);
  } catch (const SchemaError& first) {
    outcome.retries = 1;
    VlmRequest retry = request;
    retry.attempt = 2;
    retry.prompt = corrective_prompt(request.prompt, first.what());
    reply = call_vlm(ctx, retry);
    try {
      outcome.interpretation = parse_interpretation(reply, dossier.label);
    } catch (const SchemaError& second) {
      throw SchemaError("candidate " + dossier.label.str() + " failed the interpretation schema twice: " +
                        second.what());
    }
  }
  const auto& ref = outcome.interpretation.reference;
  if (!ctx.corpus.validate_reference(ref.doc_id, ref.page_no)) {
    outcome.valid = false;
    outcome.diagnostic = "cited page " + std::to_string(ref.page_no) + " of '" + ref.doc_id +
                         "' does not exist in the corpus";
  }
  return outcome;
}

AttributionReport synthesize(const TargetImage& target, std::span<const CandidateInterpretation> interpretations,
                             InferenceContext& ctx) {
  if (interpretations.empty()) {
    throw InvalidArgument("synthesis needs at least one valid interpretation");
  }
  std::set<Reference> allowed;
  for (const auto& i : interpretations) {
    allowed.insert(i.reference);
  }

  VlmRequest request;
  request.purpose = "synthesize";
  request.prompt = render_synthesize_prompt(interpretations, ctx.prompts.synthesize);
  request.images = {target};

  auto attempt = [&](const VlmRequest& req) {
    auto parsed = parse_synthesis(call_vlm(ctx, req));
    const auto& ref = parsed.best_reference;
    if (!allowed.contains(ref) || !ctx.corpus.validate_reference(ref.doc_id, ref.page_no)) {
      throw CitationError("best_reference {\"doc_id\": \"" + ref.doc_id + "\", \"page_no\": " +
                          std::to_string(ref.page_no) + "} is not one of the listed references");
    }
    return parsed;
  };

  SynthesisReply reply;
  try {
    reply = attempt(request);
  } catch (const SchemaError& e) {
    VlmRequest retry = request;
    retry.attempt = 2;
    retry.prompt = corrective_prompt(request.prompt, e.what());
    reply = attempt(retry);
  } catch (const CitationError& e) {
    VlmRequest retry = request;
    retry.attempt = 2;
    retry.prompt = corrective_prompt(request.prompt, e.what());
    reply = attempt(retry);
  }

  AttributionReport report;
  report.target_sha256 = target.sha256;
  report.target_bytes = target.bytes.size();
  report.target_media_type = target.media_type;
  report.site = reply.site;
  report.period = reply.period;
  report.best_reference = reply.best_reference;
  report.justification = reply.justification;
  report.interpretations.assign(interpretations.begin(), interpretations.end());
  for (const auto& ref : allowed) {
    const auto& doc = ctx.corpus.document(ref.doc_id);
    report.cited_pages.push_back({ref, doc.title, doc.language_tag, doc.source_uri});
  }
  return report;
}

// ---------------------------------------------------------------------------

namespace {

json hits_json(const std::vector<SearchHit>& hits) {
  json out = json::array();
  for (const auto& h : hits) {
    out.push_back({{"label", h.label.str()}, {"score", round_score(h.score)}});
  }
  return out;
}

json labels_json(const std::vector<CandidateLabel>& labels) {
  json out = json::array();
  for (const auto& l : labels) {
    out.push_back(l.str());
  }
  return out;
}

json retrieval_json(const RetrievalTrace& t) {
  return {{"k", t.k},
          {"m", t.m},
          {"sigma", t.sigma},
          {"ordering", to_string(t.ordering)},
          {"hits", {{"raw", hits_json(t.hits_raw)}, {"edge", hits_json(t.hits_edge)}, {"clip", hits_json(t.hits_clip)}}},
          {"failures", t.failures},
          {"pool", pool_to_json(t.pool)},
          {"ordered", labels_json(t.ordered)},
          {"truncated", labels_json(t.truncated)}};
}

}  // namespace

json report_to_json(const AttributionReport& r) {
  json interpretations = json::array();
  for (const auto& i : r.interpretations) {
    interpretations.push_back(interpretation_json(i));
  }
  json excluded = json::array();
  for (const auto& e : r.excluded) {
    excluded.push_back({{"label", e.label.str()}, {"reason", e.reason}});
  }
  json cited = json::array();
  for (const auto& c : r.cited_pages) {
    cited.push_back({{"doc_id", c.reference.doc_id},
                     {"page_no", c.reference.page_no},
                     {"title", c.title},
                     {"language_tag", c.language_tag},
                     {"source_uri", c.source_uri}});
  }
  const auto& p = r.provenance;
  return {{"format_version", kReportFormatVersion},
          {"target", {{"sha256", r.target_sha256}, {"bytes", r.target_bytes}, {"media_type", r.target_media_type}}},
          {"site", r.site},
          {"period", r.period},
          {"best_reference", reference_json(r.best_reference)},
          {"justification", r.justification},
          {"interpretations", interpretations},
          {"excluded", excluded},
          {"cited_pages", cited},
          {"retrieval", retrieval_json(r.trace)},
          {"provenance",
           {{"corpus_checksum", p.corpus_checksum},
            {"embedders", {{"raw", p.raw_embedder}, {"semantic", p.semantic_embedder}}},
            {"vlm_model", p.vlm_model},
            {"templates",
             {{"interpret", {{"name", p.interpret_template}, {"sha256", p.interpret_template_sha256}}},
              {"synthesize", {{"name", p.synthesize_template}, {"sha256", p.synthesize_template_sha256}}}}}}}};
}

std::string serialize_report(const AttributionReport& report) { return report_to_json(report).dump(2) + "\n"; }

const char* to_string(AnalysisStage stage) {
  switch (stage) {
    case AnalysisStage::retrieval:
      return "retrieval";
    case AnalysisStage::aggregation:
      return "aggregation";
    case AnalysisStage::interpretation:
      return "interpretation";
    case AnalysisStage::synthesis:
      return "synthesis";
  }
  return "?";
}

AttributionReport run_analysis(std::span<const std::uint8_t> query_image, const AnalysisParams& params,
                               PipelineResources& res, Transcript& transcript, AnalysisObserver* observer) {
  AnalysisObserver noop;
  AnalysisObserver& obs = observer ? *observer : noop;

  // Retrieval
  obs.on_stage(AnalysisStage::retrieval);
  if (params.k < 1) {
    throw AnalysisError(AnalysisStage::retrieval, "k must be at least 1");
  }
  if (params.m < 1) {
    throw AnalysisError(AnalysisStage::aggregation, "m must be at least 1");
  }
  if (res.index.empty()) {
    throw AnalysisError(AnalysisStage::retrieval, "empty index: the corpus has no reference images");
  }
  if (res.index.meta.corpus_checksum != res.corpus.manifest().checksum) {
    throw AnalysisError(AnalysisStage::retrieval, "index was built for a different corpus; rebuild it");
  }
  const auto target = ImagePayload::from_bytes({query_image.begin(), query_image.end()});
  RetrievalTrace trace;
  trace.k = params.k;
  trace.m = params.m;
  trace.sigma = res.index.meta.sigma;
  trace.ordering = params.ordering;
  try {
    auto hits = retrieve_all(res.index, query_image, res.raw_provider, res.semantic_provider,
                             RetrievalOptions{params.k, params.allow_degraded, res.embed_retry});
    trace.hits_raw = std::move(hits.hits_raw);
    trace.hits_edge = std::move(hits.hits_edge);
    trace.hits_clip = std::move(hits.hits_clip);
    trace.failures = std::move(hits.failures);
  } catch (const std::exception& e) {
    throw AnalysisError(AnalysisStage::retrieval, e.what());
  }

  // Aggregation
  trace.pool = pool(trace.hits_raw, trace.hits_edge, trace.hits_clip);
  trace.ordered = order_candidates(trace.pool, params.ordering);
  trace.truncated = truncate(trace.ordered, params.m);
  if (trace.truncated.empty()) {
    throw AnalysisError(AnalysisStage::aggregation, "no candidates were retrieved");
  }
  obs.on_artifact("retrieval", retrieval_json(trace));

  std::vector<CandidateDossier> dossiers;
  try {
    for (const auto& label : trace.truncated) {
      dossiers.push_back(make_dossier(res.corpus, trace.pool.entries.at(label.str())));
    }
  } catch (const std::exception& e) {
    throw AnalysisError(AnalysisStage::aggregation, std::string("cannot assemble candidate dossier: ") + e.what());
  }

  // Phase 1: one worker per slot pulls the next dossier; results land at the
  // dossier's index so the join is in label order.
  obs.on_stage(AnalysisStage::interpretation);
  InferenceContext ctx{res.corpus, res.client, res.prompts, transcript, res.inference};
  std::vector<std::optional<InterpretationOutcome>> outcomes(dossiers.size());
  std::vector<std::exception_ptr> errors(dossiers.size());
  {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next++; i < dossiers.size(); i = next++) {
        try {
          outcomes[i] = interpret_candidate(dossiers[i], target, ctx);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    const auto workers = std::min<std::size_t>(std::max(1, res.inference.phase1_concurrency), dossiers.size());
    std::vector<std::jthread> pool_threads;
    for (std::size_t w = 0; w < workers; ++w) {
      pool_threads.emplace_back(worker);
    }
  }

  std::vector<CandidateInterpretation> valid;
  std::vector<ExcludedCandidate> excluded;
  json phase1 = json::array();
  for (std::size_t i = 0; i < dossiers.size(); ++i) {
    const auto label = dossiers[i].label;
    if (errors[i]) {
      try {
        std::rethrow_exception(errors[i]);
      } catch (const SchemaError& e) {
        excluded.push_back({label, "schema_invalid"});
        phase1.push_back({{"label", label.str()}, {"status", "schema_invalid"}, {"diagnostic", e.what()}});
        continue;
      } catch (const std::exception& e) {
        throw AnalysisError(AnalysisStage::interpretation, label.str() + ": " + e.what());
      }
    }
    const auto& o = *outcomes[i];
    if (o.valid) {
      valid.push_back(o.interpretation);
      phase1.push_back({{"label", label.str()}, {"status", "valid"}, {"retries", o.retries}});
    } else {
      excluded.push_back({label, "citation_invalid"});
      phase1.push_back(
          {{"label", label.str()}, {"status", "citation_invalid"}, {"retries", o.retries}, {"diagnostic", o.diagnostic}});
    }
  }
  obs.on_artifact("interpretations", phase1);

  // Phase 2
  obs.on_stage(AnalysisStage::synthesis);
  if (valid.empty()) {
    throw AnalysisError(AnalysisStage::synthesis,
                        "no valid interpretations: all " + std::to_string(dossiers.size()) +
                            " candidates were excluded in phase 1");
  }
  AttributionReport report;
  try {
    report = synthesize(target, valid, ctx);
  } catch (const std::exception& e) {
    throw AnalysisError(AnalysisStage::synthesis, e.what());
  }
  report.excluded = std::move(excluded);
  report.trace = std::move(trace);
  report.provenance = {res.corpus.manifest().checksum,
                       res.index.raw.embedder_id().empty() ? res.raw_provider.embedder_id() : res.index.raw.embedder_id(),
                       res.index.semantic.embedder_id().empty() ? res.semantic_provider.embedder_id()
                                                                : res.index.semantic.embedder_id(),
                       res.client.model(),
                       res.prompts.interpret.name(),
                       res.prompts.interpret.sha256(),
                       res.prompts.synthesize.name(),
                       res.prompts.synthesize.sha256()};
  return report;
}

}  // namespace provenance

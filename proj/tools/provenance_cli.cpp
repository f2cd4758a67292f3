#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "provenance/corpus.hpp"
#include "provenance/errors.hpp"
#include "provenance/evaluation.hpp"
#include "provenance/hashing.hpp"
#include "provenance/inference.hpp"
#include "provenance/service.hpp"

namespace fs = std::filesystem;
using namespace provenance;

namespace {

HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server != nullptr) g_server->stop();
}

ServiceConfig load_config(const std::string& path) {
  ServiceConfig config;
  if (path.empty()) {
    config = ServiceConfig::from_json(nlohmann::json::object(), fs::current_path());
  } else {
    config = ServiceConfig::load(path);
  }
  config.apply_environment();
  config.fill_defaults();
  config.validate();
  return config;
}

int fail(const std::string& stage, const std::string& message) {
  std::cerr << "error [" << stage << "]: " << message << "\n";
  return 1;
}

int run_ingest(const ServiceConfig& config, const std::string& bundle, int window) {
  auto corpus = Corpus::open(config.data_dir);
  IngestOptions options;
  options.context_window_pages = window >= 0 ? window : config.context_window_pages;
  const auto doc = corpus.ingest_document(bundle, options);
  std::size_t images = 0;
  for (const auto& a : corpus.manifest().assets) {
    if (a.doc_id == doc.doc_id) ++images;
  }
  std::cout << "ingested " << doc.doc_id << ": " << doc.page_count << " pages, " << images << " images\n";
  std::cout << "manifest checksum " << corpus.manifest().checksum << "\n";
  return 0;
}

int run_index(const ServiceConfig& config) {
  const auto index = build_and_publish_index(config);
  std::cout << "indexed " << index.raw.size() << " raw, " << index.edge.size() << " edge, "
            << index.semantic.size() << " semantic entries -> " << config.index_path.string() << "\n";
  return 0;
}

int run_analyze(const ServiceConfig& config, const std::string& image, std::optional<long long> k,
                std::optional<long long> m, const std::string& ordering, const std::string& out,
                const std::string& transcript_out) {
  AnalysisParams params = config.default_params();
  if (k) {
    if (*k < 1) throw InvalidArgument("k must be at least 1");
    params.k = static_cast<std::size_t>(*k);
  }
  if (m) {
    if (*m < 1) throw InvalidArgument("m must be at least 1");
    params.m = *m;
  }
  if (!ordering.empty()) params.ordering = ordering_from_string(ordering);

  Pipeline pipeline(config);
  const auto bytes = read_file_bytes(image);
  Transcript transcript;
  const auto report = pipeline.analyze(bytes, params, transcript);
  write_file_atomic(out, serialize_report(report));
  if (!transcript_out.empty()) write_file_atomic(transcript_out, transcript.to_json().dump(2) + "\n");
  std::cout << "report written to " << out << " (" << report.site << ", " << report.period << ")\n";
  return 0;
}

int run_serve(const ServiceConfig& config) {
  Pipeline pipeline(config);
  JobStore jobs(config.jobs_dir);
  ScoreBook scores(config.scores_log, [&jobs](const std::string& id) { return jobs.exists(id); });
  AnalysisService service(pipeline, jobs, config.active_jobs);
  HttpServer server(config, pipeline, service, jobs, scores);
  const int port = server.bind(config.host, config.port);
  spdlog::info("listening on {}:{}", config.host, port);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.listen();
  g_server = nullptr;
  return 0;
}

int run_eval_report(const ServiceConfig& config, const std::string& question, const std::string& format) {
  ScoreBook scores(config.scores_log);
  const auto q = question_from_string(question);
  const auto dist = scores.distribution(q);
  if (format == "json") {
    std::cout << (dist ? distribution_to_json(*dist) : nlohmann::json{{"question", to_string(q)}, {"empty", true}}).dump(2)
              << "\n";
  } else if (dist) {
    std::cout << distribution_table(*dist);
  } else {
    std::cout << "no scores recorded for " << to_string(q) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Provenance attribution: corpus ingestion, retrieval indexing, analysis and evaluation"};
  app.require_subcommand(1);
  std::string config_path;
  bool verbose = false;
  app.add_option("-c,--config", config_path, "service configuration (JSON)");
  app.add_flag("-v,--verbose", verbose, "debug logging");

  auto* ingest = app.add_subcommand("ingest", "add a document bundle to the corpus");
  std::string bundle;
  int window = -1;
  ingest->add_option("--bundle", bundle, "bundle directory")->required()->check(CLI::ExistingDirectory);
  ingest->add_option("--window", window, "context window in pages (0 or 1)")->check(CLI::Range(0, 1));

  app.add_subcommand("index", "embed the corpus and publish the vector index");

  auto* analyze = app.add_subcommand("analyze", "attribute one query image");
  std::string image;
  std::optional<long long> k;
  std::optional<long long> m;
  std::string ordering;
  std::string out = "report.json";
  std::string transcript_out;
  analyze->add_option("--image", image, "query image")->required()->check(CLI::ExistingFile);
  analyze->add_option("--k", k, "hits per retrieval strategy");
  analyze->add_option("--m", m, "candidates interpreted");
  analyze->add_option("--ordering", ordering, "candidate ordering (label or consensus)");
  analyze->add_option("--out", out, "report path");
  analyze->add_option("--transcript", transcript_out, "optional VLM transcript path");

  app.add_subcommand("serve", "run the HTTP service");

  auto* eval = app.add_subcommand("eval-report", "print the expert score distribution");
  std::string question = "Q1";
  std::string format = "text";
  eval->add_option("--question", question, "Q1 or Q2")->check(CLI::IsMember({"Q1", "Q2"}));
  eval->add_option("--format", format, "text or json")->check(CLI::IsMember({"text", "json"}));

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  const auto* sub = app.get_subcommands().front();
  const std::string verb = sub->get_name();
  try {
    const auto config = load_config(config_path);
    if (verb == "ingest") return run_ingest(config, bundle, window);
    if (verb == "index") return run_index(config);
    if (verb == "analyze") return run_analyze(config, image, k, m, ordering, out, transcript_out);
    if (verb == "serve") return run_serve(config);
    return run_eval_report(config, question, format);
  } catch (const AnalysisError& e) {
    return fail(to_string(e.stage()), e.detail());
  } catch (const std::exception& e) {
    return fail(verb, e.what());
  }
}

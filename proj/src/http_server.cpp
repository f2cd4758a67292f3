#include <httplib.h>

#include <set>

#include <spdlog/spdlog.h>

#include "provenance/hashing.hpp"
#include "provenance/image.hpp"
#include "provenance/service.hpp"

namespace provenance {

using nlohmann::json;

namespace {

const std::set<std::string> kAcceptedUploadTypes = {"image/png", "image/jpeg", "image/bmp",
                                                     "image/x-portable-pixmap", "image/x-portable-graymap",
                                                     "image/x-portable-anymap"};

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, status, {{"error", code}, {"message", message}});
}

std::optional<long long> parse_override(const httplib::Request& req, const std::string& name) {
  std::string text;
  if (req.has_file(name)) {
    text = req.get_file_value(name).content;
  } else if (req.has_param(name)) {
    text = req.get_param_value(name);
  } else {
    return std::nullopt;
  }
  try {
    std::size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (used != text.size()) {
      throw std::invalid_argument(name);
    }
    return v;
  } catch (const std::exception&) {
    throw InvalidArgument(name + " must be an integer");
  }
}

}  // namespace

HttpServer::HttpServer(const ServiceConfig& config, Pipeline& pipeline, AnalysisService& service, JobStore& jobs,
                       ScoreBook& scores)
    : config_(config),
      pipeline_(pipeline),
      service_(service),
      jobs_(jobs),
      scores_(scores),
      server_(std::make_unique<httplib::Server>()) {
  // Multipart framing adds overhead on top of the image itself.
  server_->set_payload_max_length(config_.max_upload_bytes + (64u << 10));
  install_routes();
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = server_->bind_to_any_port(host);
    if (bound < 0) {
      throw Error("cannot bind " + host);
    }
    return bound;
  }
  if (!server_->bind_to_port(host, port)) {
    throw Error("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpServer::listen() { server_->listen_after_bind(); }

void HttpServer::stop() {
  if (server_ && server_->is_running()) {
    server_->stop();
  }
}

void HttpServer::install_routes() {
  auto& s = *server_;

  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  });

  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.status == 413) {
      send_error(res, 413, "payload_too_large", "upload exceeds the configured size limit");
    } else if (res.body.empty()) {
      send_error(res, res.status, "http_" + std::to_string(res.status), "request failed");
    }
  });

  s.Get("/api/health", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"status", "ok"}}); });

  s.Post("/api/analyses", [this](const httplib::Request& req, httplib::Response& res) {
    if (!req.is_multipart_form_data() || !req.has_file("image")) {
      send_error(res, 400, "bad_request", "expected multipart/form-data with an \"image\" part");
      return;
    }
    const auto& part = req.get_file_value("image");
    if (part.content.size() > config_.max_upload_bytes) {
      send_error(res, 413, "payload_too_large",
                 "image is " + std::to_string(part.content.size()) + " bytes; limit is " +
                     std::to_string(config_.max_upload_bytes));
      return;
    }
    const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(part.content.data()),
                                              part.content.size());
    const auto sniffed = sniff_media_type(bytes);
    if (!kAcceptedUploadTypes.contains(part.content_type) || sniffed.empty()) {
      send_error(res, 415, "unsupported_media_type",
                 "accepted image types: png, jpeg, bmp, netpbm (got '" + part.content_type + "')");
      return;
    }
    try {
      AnalysisOverrides overrides{parse_override(req, "k"), parse_override(req, "m")};
      const auto job_id = service_.submit(bytes, overrides);
      res.set_header("Location", "/api/analyses/" + job_id);
      send_json(res, 202, {{"job_id", job_id}, {"state", "queued"}});
    } catch (const InvalidArgument& e) {
      send_error(res, 400, "validation", e.what());
    }
  });

  s.Get(R"(/api/analyses/([A-Za-z0-9._-]+))", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      send_json(res, 200, service_.get_job(req.matches[1]).to_json());
    } catch (const NotFound& e) {
      send_error(res, 404, "not_found", e.what());
    }
  });

  s.Get(R"(/api/analyses/([A-Za-z0-9._-]+)/report)", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      res.status = 200;
      res.set_content(service_.get_report(req.matches[1]), "application/json");
    } catch (const NotFound& e) {
      send_error(res, 404, "not_found", e.what());
    } catch (const ConflictError& e) {
      json body = {{"error", "conflict"}, {"message", e.what()}, {"state", to_string(e.job().state)}};
      if (e.job().state == JobState::failed) {
        body["stage"] = e.job().failure_stage;
        body["diagnostic"] = e.job().failure_message;
      }
      send_json(res, 409, body);
    }
  });

  s.Get(R"(/api/corpus/images/([A-Za-z0-9._-]+))", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto& corpus = pipeline_.corpus();
      const auto bytes = corpus.asset_bytes(corpus.asset(std::string(req.matches[1])));
      auto type = sniff_media_type(bytes);
      res.status = 200;
      res.set_content(std::string(bytes.begin(), bytes.end()), type.empty() ? "application/octet-stream" : type);
    } catch (const NotFound& e) {
      send_error(res, 404, "not_found", e.what());
    }
  });

  s.Post("/api/scores", [this](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::parse_error& e) {
      send_error(res, 400, "bad_request", std::string("body is not JSON: ") + e.what());
      return;
    }
    const json records = body.is_array() ? body : json::array({body});
    std::vector<ExpertScore> parsed;
    try {
      for (const auto& r : records) {
        auto score = score_from_json(r);
        if (score.score < 1 || score.score > 4) {
          throw InvalidArgument("score must be between 1 and 4, got " + std::to_string(score.score));
        }
        if (score.rater_id.empty()) {
          throw InvalidArgument("rater_id is required");
        }
        if (!jobs_.exists(score.object_id)) {
          send_error(res, 404, "not_found", "unknown object '" + score.object_id + "'");
          return;
        }
        score.timestamp.clear();
        parsed.push_back(std::move(score));
      }
    } catch (const InvalidArgument& e) {
      send_error(res, 400, "validation", e.what());
      return;
    }
    json stored = json::array();
    for (auto& score : parsed) {
      stored.push_back(score_to_json(scores_.record(std::move(score))));
    }
    send_json(res, 201, body.is_array() ? stored : stored.at(0));
  });

  s.Get("/api/eval/distribution", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto q = question_from_string(req.get_param_value("question"));
      const auto d = scores_.distribution(q);
      if (!d) {
        send_json(res, 200, {{"question", to_string(q)}, {"total", 0}, {"empty", true}});
        return;
      }
      send_json(res, 200, distribution_to_json(*d));
    } catch (const InvalidArgument& e) {
      send_error(res, 400, "validation", e.what());
    }
  });

  if (!config_.ui_dir.empty() && std::filesystem::is_directory(config_.ui_dir)) {
    s.set_mount_point("/", config_.ui_dir.string());
  }

  s.set_logger([](const httplib::Request& req, const httplib::Response& res) {
    spdlog::debug("{} {} -> {}", req.method, req.path, res.status);
  });
}

}  // namespace provenance

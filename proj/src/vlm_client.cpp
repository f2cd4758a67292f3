#include <algorithm>
#include <fstream>
#include <tuple>

#include <httplib.h>

#include "http_util.hpp"
#include "provenance/hashing.hpp"
#include "provenance/image.hpp"
#include "provenance/inference.hpp"

namespace provenance {

using nlohmann::json;

ImagePayload ImagePayload::from_bytes(std::vector<std::uint8_t> bytes) {
  ImagePayload p;
  p.media_type = sniff_media_type(bytes);
  if (p.media_type.empty()) {
    p.media_type = "application/octet-stream";
  }
  p.sha256 = sha256_hex(bytes);
  p.bytes = std::move(bytes);
  return p;
}

std::string request_key(const VlmRequest& request) {
  std::string material = request.prompt;
  for (const auto& img : request.images) {
    material += '\n';
    material += img.sha256;
  }
  return sha256_hex(material);
}

void Transcript::record(TranscriptEntry entry) {
  std::lock_guard lock(mu_);
  entries_.push_back(std::move(entry));
}

std::vector<TranscriptEntry> Transcript::entries() const {
  std::vector<TranscriptEntry> out;
  {
    std::lock_guard lock(mu_);
    out = entries_;
  }
  std::stable_sort(out.begin(), out.end(), [](const TranscriptEntry& a, const TranscriptEntry& b) {
    return std::tie(a.purpose, a.attempt, a.transport_try) < std::tie(b.purpose, b.attempt, b.transport_try);
  });
  return out;
}

std::size_t Transcript::count_with_prefix(std::string_view purpose_prefix) const {
  std::lock_guard lock(mu_);
  return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(), [&](const TranscriptEntry& e) {
    return std::string_view(e.purpose).substr(0, purpose_prefix.size()) == purpose_prefix;
  }));
}

json Transcript::to_json() const {
  json out = json::array();
  for (const auto& e : entries()) {
    out.push_back({{"purpose", e.purpose},
                   {"attempt", e.attempt},
                   {"transport_try", e.transport_try},
                   {"request_key", e.request_key},
                   {"prompt", e.prompt},
                   {"images", e.image_digests},
                   {"response", e.response},
                   {"error", e.error}});
  }
  return out;
}

// ---------------------------------------------------------------------------

MockVlmClient::MockVlmClient(std::filesystem::path fixtures_dir, std::filesystem::path miss_dir)
    : fixtures_dir_(std::move(fixtures_dir)), miss_dir_(std::move(miss_dir)) {}

std::string MockVlmClient::complete(const VlmRequest& request) {
  if (responder_) {
    if (auto reply = responder_(request)) {
      return *reply;
    }
  }
  const auto key = request_key(request);
  if (!fixtures_dir_.empty()) {
    const auto path = fixtures_dir_ / (key + ".json");
    if (std::filesystem::exists(path)) {
      return read_file_text(path.string());
    }
  }
  if (!miss_dir_.empty()) {
    json images = json::array();
    for (const auto& img : request.images) {
      images.push_back(img.sha256);
    }
    write_file_atomic((miss_dir_ / (key + ".request.json")).string(),
                      json{{"purpose", request.purpose},
                           {"attempt", request.attempt},
                           {"prompt", request.prompt},
                           {"images", images}}
                          .dump(2));
  }
  throw MockMissError("mock VLM has no canned reply for request " + key + " (" + request.purpose + ")");
}

// ---------------------------------------------------------------------------

RemoteVlmClient::RemoteVlmClient(RemoteVlmConfig config) : config_(std::move(config)) {
  if (config_.base_url.empty()) {
    throw InvalidArgument("VLM endpoint is not configured (VLM_API_BASE)");
  }
}

std::string RemoteVlmClient::complete(const VlmRequest& request) {
  json content = json::array();
  content.push_back({{"type", "text"}, {"text", request.prompt}});
  for (const auto& img : request.images) {
    const bool native = img.media_type == "image/png" || img.media_type == "image/jpeg";
    const auto bytes = native ? img.bytes : encode_png(decode_image(img.bytes));
    const std::string media = native ? img.media_type : "image/png";
    content.push_back(
        {{"type", "image_url"}, {"image_url", {{"url", "data:" + media + ";base64," + base64_encode(bytes)}}}});
  }
  const json body = {{"model", config_.model},
                     {"temperature", 0},
                     {"seed", 0},
                     {"max_tokens", config_.max_tokens},
                     {"messages", json::array({{{"role", "user"}, {"content", content}}})}};

  const auto url = http::split_url(config_.base_url);
  httplib::Client client(url.origin);
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  httplib::Headers headers;
  if (!config_.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + config_.api_key);
  }
  const auto res = client.Post(url.path_prefix + "/chat/completions", headers, body.dump(), "application/json");
  const std::string who = "VLM endpoint " + config_.base_url;
  if (!res) {
    throw TransportError(who + " unreachable: " + httplib::to_string(res.error()));
  }
  if (res->status == 429 || res->status >= 500) {
    throw TransportError(who + " returned HTTP " + std::to_string(res->status));
  }
  if (res->status != 200) {
    throw Error(who + " rejected the request with HTTP " + std::to_string(res->status) + ": " +
                res->body.substr(0, 300));
  }
  try {
    const auto doc = json::parse(res->body);
    return doc.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception&) {
    throw TransportError(who + " returned an unexpected response body");
  }
}

}  // namespace provenance

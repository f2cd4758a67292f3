#include "provenance/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "binary_io.hpp"
#include "http_util.hpp"
#include "provenance/errors.hpp"
#include "provenance/hashing.hpp"

namespace provenance {

using nlohmann::json;

double EmbeddingVector::norm() const {
  double sum = 0.0;
  for (const float v : values) {
    sum += static_cast<double>(v) * v;
  }
  return std::sqrt(sum);
}

EmbeddingVector make_unit_embedding(std::string embedder_id, std::span<const double> raw) {
  if (raw.empty()) {
    throw InvalidArgument("embedding must have positive dimension");
  }
  double sum = 0.0;
  for (const double v : raw) {
    sum += v * v;
  }
  EmbeddingVector out{std::move(embedder_id), std::vector<float>(raw.size())};
  if (!(sum > 0.0) || !std::isfinite(sum)) {
    const float uniform = static_cast<float>(1.0 / std::sqrt(static_cast<double>(raw.size())));
    std::fill(out.values.begin(), out.values.end(), uniform);
    return out;
  }
  const double inv = 1.0 / std::sqrt(sum);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out.values[i] = static_cast<float>(raw[i] * inv);
  }
  return out;
}

namespace {

template <typename Fn>
auto with_retries(const RetryPolicy& retry, const std::string& what, Fn&& fn) {
  const int attempts = std::max(1, retry.max_attempts);
  for (int attempt = 1;; ++attempt) {
    try {
      return fn();
    } catch (const TransportError& e) {
      if (attempt >= attempts) {
        throw TransportError(what + " failed after " + std::to_string(attempts) + " attempts: " + e.what());
      }
      std::this_thread::sleep_for(retry.backoff * attempt);
    }
  }
}

std::vector<EmbeddingVector> finish(const std::vector<std::vector<double>>& raw, std::size_t expected_count,
                                    const EmbedderProvider& provider) {
  if (raw.size() != expected_count) {
    throw MismatchError("embedder " + provider.embedder_id() + " returned " + std::to_string(raw.size()) +
                        " vectors for " + std::to_string(expected_count) + " inputs");
  }
  std::vector<EmbeddingVector> out;
  out.reserve(raw.size());
  for (const auto& v : raw) {
    if (v.size() != provider.dim()) {
      throw MismatchError("embedder " + provider.embedder_id() + " returned dimension " +
                          std::to_string(v.size()) + ", configured " + std::to_string(provider.dim()));
    }
    out.push_back(make_unit_embedding(provider.embedder_id(), v));
  }
  return out;
}

}  // namespace

std::vector<EmbeddingVector> embed_images(std::span<const ImageTensor> images, EmbedderProvider& provider,
                                          const RetryPolicy& retry) {
  if (images.empty()) {
    return {};
  }
  auto raw = with_retries(retry, "embedder " + provider.embedder_id(), [&] { return provider.embed_images(images); });
  return finish(raw, images.size(), provider);
}

std::vector<EmbeddingVector> embed_texts(std::span<const std::string> texts, EmbedderProvider& provider,
                                         const RetryPolicy& retry) {
  if (!provider.supports_text()) {
    throw InvalidArgument("embedder " + provider.embedder_id() + " does not embed text");
  }
  if (texts.empty()) {
    return {};
  }
  auto raw = with_retries(retry, "embedder " + provider.embedder_id(), [&] { return provider.embed_texts(texts); });
  return finish(raw, texts.size(), provider);
}

EmbeddingVector embed_image(const ImageTensor& image, EmbedderProvider& provider, const RetryPolicy& retry) {
  return embed_images(std::span<const ImageTensor>(&image, 1), provider, retry).front();
}

EmbeddingVector embed_text(const std::string& text, EmbedderProvider& provider, const RetryPolicy& retry) {
  return embed_texts(std::span<const std::string>(&text, 1), provider, retry).front();
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.embedder_id != b.embedder_id) {
    throw MismatchError("cosine between embedders " + a.embedder_id + " and " + b.embedder_id);
  }
  if (a.dim() != b.dim()) {
    throw MismatchError("cosine between dimensions " + std::to_string(a.dim()) + " and " + std::to_string(b.dim()));
  }
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double x = a.values[i];
    const double y = b.values[i];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 || nb == 0.0) {
    return 0.0;
  }
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Stub embedder

std::vector<double> StubEmbedder::image_features(const ImageTensor& image) {
  const auto small = resize(to_grayscale(image), kSide, kSide);
  std::vector<double> v(small.values.begin(), small.values.end());
  double mean = 0.0;
  for (const double x : v) {
    mean += x;
  }
  mean /= static_cast<double>(v.size());
  for (auto& x : v) {
    x -= mean;
  }
  return v;
}

std::vector<double> StubEmbedder::text_features(const std::string& text) {
  std::vector<double> v(kDim, 0.0);
  for (std::size_t i = 0; i + 3 <= text.size(); ++i) {
    std::uint32_t h = 2166136261u;
    for (std::size_t j = i; j < i + 3; ++j) {
      h ^= static_cast<std::uint8_t>(text[j]);
      h *= 16777619u;
    }
    v[h % kDim] += 1.0;
  }
  return v;
}

std::vector<std::vector<double>> StubEmbedder::embed_images(std::span<const ImageTensor> images) {
  std::vector<std::vector<double>> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    out.push_back(image_features(img));
  }
  return out;
}

std::vector<std::vector<double>> StubEmbedder::embed_texts(std::span<const std::string> texts) {
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    out.push_back(text_features(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Remote embedder

RemoteEmbedder::RemoteEmbedder(RemoteEmbedderConfig config) : config_(std::move(config)) {
  if (config_.base_url.empty()) {
    throw InvalidArgument("remote embedder " + config_.embedder_id + " has no base URL");
  }
  if (config_.dim == 0) {
    throw InvalidArgument("remote embedder " + config_.embedder_id + " needs a configured dimension");
  }
}

std::vector<std::vector<double>> RemoteEmbedder::embed_images(std::span<const ImageTensor> images) {
  json inputs = json::array();
  for (const auto& img : images) {
    inputs.push_back({{"kind", "image"}, {"b64", base64_encode(encode_png(img))}});
  }
  return post(json{{"inputs", inputs}}.dump(), images.size());
}

std::vector<std::vector<double>> RemoteEmbedder::embed_texts(std::span<const std::string> texts) {
  json inputs = json::array();
  for (const auto& t : texts) {
    inputs.push_back({{"kind", "text"}, {"text", t}});
  }
  return post(json{{"inputs", inputs}}.dump(), texts.size());
}

std::vector<std::vector<double>> RemoteEmbedder::post(const std::string& body, std::size_t expected) {
  const auto url = http::split_url(config_.base_url);
  httplib::Client client(url.origin);
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  const auto res = client.Post(url.path_prefix + "/embed", body, "application/json");
  const std::string who = "embedding provider " + config_.embedder_id + " at " + config_.base_url;
  if (!res) {
    throw TransportError(who + " unreachable: " + httplib::to_string(res.error()));
  }
  if (res->status == 429 || res->status >= 500) {
    throw TransportError(who + " returned HTTP " + std::to_string(res->status));
  }
  if (res->status != 200) {
    throw Error(who + " rejected the request with HTTP " + std::to_string(res->status));
  }
  json doc;
  try {
    doc = json::parse(res->body);
  } catch (const json::parse_error&) {
    throw TransportError(who + " returned a non-JSON body");
  }
  const auto id = doc.value("embedder_id", std::string());
  if (id != config_.embedder_id) {
    throw MismatchError(who + " identifies as '" + id + "'");
  }
  if (doc.value("dim", std::size_t{0}) != config_.dim) {
    throw MismatchError(who + " reports dimension " + std::to_string(doc.value("dim", std::size_t{0})) +
                        ", configured " + std::to_string(config_.dim));
  }
  std::vector<std::vector<double>> vectors;
  try {
    vectors = doc.at("vectors").get<std::vector<std::vector<double>>>();
  } catch (const json::exception&) {
    throw TransportError(who + " returned malformed vectors");
  }
  if (vectors.size() != expected) {
    throw MismatchError(who + " returned " + std::to_string(vectors.size()) + " vectors for " +
                        std::to_string(expected) + " inputs");
  }
  return vectors;
}

// ---------------------------------------------------------------------------
// Embedding block file format

namespace {
constexpr char kBlockMagic[4] = {'P', 'E', 'M', 'B'};
}

void write_embedding_block(std::ostream& out, const EmbeddingBlock& block) {
  if (block.tags.size() != block.keys.size() || block.data.size() != block.keys.size() * block.dim) {
    throw InvalidArgument("embedding block is internally inconsistent");
  }
  out.write(kBlockMagic, 4);
  binary::put_le(out, kEmbeddingBlockVersion);
  binary::put_string32(out, block.embedder_id);
  binary::put_le(out, static_cast<std::uint32_t>(block.dim));
  binary::put_le(out, static_cast<std::uint64_t>(block.keys.size()));
  for (std::size_t i = 0; i < block.keys.size(); ++i) {
    if (block.keys[i].size() > 0xffff) {
      throw InvalidArgument("embedding key too long");
    }
    binary::put_le(out, static_cast<std::uint16_t>(block.keys[i].size()));
    out.write(block.keys[i].data(), static_cast<std::streamsize>(block.keys[i].size()));
    binary::put_le(out, block.tags[i]);
  }
  for (const float v : block.data) {
    binary::put_f32(out, v);
  }
  if (!out) {
    throw Error("failed writing embedding block");
  }
}

EmbeddingBlock read_embedding_block(std::istream& in, const std::string& expected_embedder_id) {
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kBlockMagic)) {
    throw Error("not an embedding block (bad magic)");
  }
  const auto version = binary::get_le<std::uint32_t>(in);
  if (version != kEmbeddingBlockVersion) {
    throw Error("unsupported embedding block version " + std::to_string(version));
  }
  EmbeddingBlock block;
  block.embedder_id = binary::get_string32(in);
  if (!expected_embedder_id.empty() && block.embedder_id != expected_embedder_id) {
    throw MismatchError("embedding cache was produced by '" + block.embedder_id + "', expected '" +
                        expected_embedder_id + "'");
  }
  block.dim = binary::get_le<std::uint32_t>(in);
  const auto count = binary::get_le<std::uint64_t>(in);
  if (count > (1ull << 32)) {
    throw Error("embedding block count is implausible");
  }
  block.keys.reserve(count);
  block.tags.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    block.keys.push_back(binary::get_string(in, binary::get_le<std::uint16_t>(in)));
    block.tags.push_back(binary::get_le<std::uint8_t>(in));
  }
  block.data.resize(count * block.dim);
  for (auto& v : block.data) {
    v = binary::get_f32(in);
  }
  return block;
}

void save_embedding_cache(const std::filesystem::path& path, const EmbeddingBlock& block) {
  std::ostringstream out(std::ios::binary);
  write_embedding_block(out, block);
  write_file_atomic(path.string(), out.str());
}

EmbeddingBlock load_embedding_cache(const std::filesystem::path& path, const std::string& expected_embedder_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw NotFound("cannot open embedding cache " + path.string());
  }
  return read_embedding_block(in, expected_embedder_id);
}

}  // namespace provenance

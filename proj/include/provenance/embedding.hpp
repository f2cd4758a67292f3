#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "provenance/image.hpp"

namespace provenance {

// Unit-norm embedding tagged with the identity of the model that produced it.
struct EmbeddingVector {
  std::string embedder_id;
  std::vector<float> values;

  std::size_t dim() const { return values.size(); }
  double norm() const;
  bool operator==(const EmbeddingVector&) const = default;
};

// Normalizes in double precision. A zero vector has no direction; it maps to
// the constant unit vector (every component 1/sqrt(dim)).
EmbeddingVector make_unit_embedding(std::string embedder_id, std::span<const double> raw);

// Contract for image/text encoders. Outputs need not be normalized; the
// embed_* functions below normalize and check dimensions. Implementations
// must be deterministic and safe to call from several threads.
class EmbedderProvider {
 public:
  virtual ~EmbedderProvider() = default;

  virtual std::string embedder_id() const = 0;
  virtual std::size_t dim() const = 0;
  virtual bool supports_text() const = 0;

  virtual std::vector<std::vector<double>> embed_images(std::span<const ImageTensor> images) = 0;
  virtual std::vector<std::vector<double>> embed_texts(std::span<const std::string> texts) = 0;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds backoff{200};
};

// Transport failures are retried per `retry`; a dimension disagreement with
// the provider's declared dim throws MismatchError immediately.
std::vector<EmbeddingVector> embed_images(std::span<const ImageTensor> images, EmbedderProvider& provider,
                                          const RetryPolicy& retry = {});
std::vector<EmbeddingVector> embed_texts(std::span<const std::string> texts, EmbedderProvider& provider,
                                         const RetryPolicy& retry = {});
EmbeddingVector embed_image(const ImageTensor& image, EmbedderProvider& provider, const RetryPolicy& retry = {});
EmbeddingVector embed_text(const std::string& text, EmbedderProvider& provider, const RetryPolicy& retry = {});

// Cosine similarity in [-1, 1]. Throws MismatchError on differing dim or embedder.
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

// Deterministic, dependency-free reference encoder.
//   image: luma, resize to 16x16, flatten, subtract mean.
//   text:  FNV-1a hash of every byte trigram into 256 buckets.
class StubEmbedder final : public EmbedderProvider {
 public:
  static constexpr const char* kId = "stub-gray16";
  static constexpr int kSide = 16;
  static constexpr std::size_t kDim = kSide * kSide;

  std::string embedder_id() const override { return kId; }
  std::size_t dim() const override { return kDim; }
  bool supports_text() const override { return true; }

  std::vector<std::vector<double>> embed_images(std::span<const ImageTensor> images) override;
  std::vector<std::vector<double>> embed_texts(std::span<const std::string> texts) override;

  static std::vector<double> image_features(const ImageTensor& image);
  static std::vector<double> text_features(const std::string& text);
};

struct RemoteEmbedderConfig {
  std::string base_url;  // POST <base_url>/embed
  std::string embedder_id;
  std::size_t dim = 0;
  bool supports_text = true;
  std::chrono::seconds timeout{60};
};

// JSON-over-HTTP provider:
//   request  {"inputs":[{"kind":"image","b64":...} | {"kind":"text","text":...}]}
//   response {"embedder_id":..., "dim":..., "vectors":[[...], ...]}
class RemoteEmbedder final : public EmbedderProvider {
 public:
  explicit RemoteEmbedder(RemoteEmbedderConfig config);

  std::string embedder_id() const override { return config_.embedder_id; }
  std::size_t dim() const override { return config_.dim; }
  bool supports_text() const override { return config_.supports_text; }

  std::vector<std::vector<double>> embed_images(std::span<const ImageTensor> images) override;
  std::vector<std::vector<double>> embed_texts(std::span<const std::string> texts) override;

 private:
  std::vector<std::vector<double>> post(const std::string& body, std::size_t expected);

  RemoteEmbedderConfig config_;
};

// Binary block of embeddings sharing one embedder:
//   "PEMB" | u32 version | u32 len + embedder_id | u32 dim | u64 count
//   count x (u16 len + key | u8 tag)
//   count x dim little-endian float32
struct EmbeddingBlock {
  std::string embedder_id;
  std::size_t dim = 0;
  std::vector<std::string> keys;
  std::vector<std::uint8_t> tags;
  std::vector<float> data;  // count * dim, row-major

  std::size_t size() const { return keys.size(); }
  bool operator==(const EmbeddingBlock&) const = default;
};

inline constexpr std::uint32_t kEmbeddingBlockVersion = 1;

void write_embedding_block(std::ostream& out, const EmbeddingBlock& block);
// Empty `expected_embedder_id` accepts any embedder.
EmbeddingBlock read_embedding_block(std::istream& in, const std::string& expected_embedder_id = {});

void save_embedding_cache(const std::filesystem::path& path, const EmbeddingBlock& block);
EmbeddingBlock load_embedding_cache(const std::filesystem::path& path, const std::string& expected_embedder_id);

}  // namespace provenance

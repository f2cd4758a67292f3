#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "provenance/embedding.hpp"
#include "provenance/errors.hpp"
#include "provenance/image.hpp"
#include "test_support.hpp"

using namespace provenance;
using nlohmann::json;

namespace {

ImageTensor split_image(int side, bool vertical) {
  ImageTensor t(side, side, 1);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      t.at(x, y) = (vertical ? x : y) >= side / 2 ? 1.0 : 0.0;
    }
  }
  return t;
}

ImageTensor invert(ImageTensor t) {
  for (auto& v : t.values) v = 1.0 - v;
  return t;
}

std::uint32_t fnv1a(std::string_view s) {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : s) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

class FlakyProvider : public EmbedderProvider {
 public:
  explicit FlakyProvider(int failures, std::size_t dim = 4) : failures_(failures), dim_(dim) {}
  std::string embedder_id() const override { return "flaky"; }
  std::size_t dim() const override { return 4; }
  bool supports_text() const override { return false; }
  std::vector<std::vector<double>> embed_images(std::span<const ImageTensor> images) override {
    ++calls;
    if (failures_-- > 0) throw TransportError("temporarily unavailable");
    return std::vector<std::vector<double>>(images.size(), std::vector<double>(dim_, 1.0));
  }
  std::vector<std::vector<double>> embed_texts(std::span<const std::string>) override { return {}; }
  int calls = 0;

 private:
  int failures_;
  std::size_t dim_;
};

struct FakeEmbedServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> requests{0};
  std::atomic<int> fail_first{0};
  std::size_t reply_dim = 3;

  FakeEmbedServer() {
    server.Post("/v1/embed", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests;
      if (fail_first-- > 0) {
        res.status = 503;
        return;
      }
      const auto body = json::parse(req.body);
      json vectors = json::array();
      for (std::size_t i = 0; i < body.at("inputs").size(); ++i) {
        vectors.push_back(std::vector<double>(reply_dim, static_cast<double>(i + 1)));
      }
      res.set_content(json{{"embedder_id", "clip-test"}, {"dim", reply_dim}, {"vectors", vectors}}.dump(),
                      "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~FakeEmbedServer() {
    server.stop();
    thread.join();
  }
  std::string base() const { return "http://127.0.0.1:" + std::to_string(port) + "/v1"; }
};

}  // namespace

TEST(EmbeddingTest, StubVectorsAreUnitNorm) {
  StubEmbedder stub;
  for (const auto& img : {split_image(32, true), ImageTensor(5, 9, 3, 0.2), ImageTensor(300, 200, 1, 0.9)}) {
    const auto v = embed_image(img, stub);
    EXPECT_EQ(v.embedder_id, "stub-gray16");
    EXPECT_EQ(v.dim(), 256u);
    EXPECT_NEAR(v.norm(), 1.0, 1e-6);
  }
}

TEST(EmbeddingTest, IdenticalTensorsGiveIdenticalVectors) {
  StubEmbedder stub;
  const auto img = split_image(40, false);
  EXPECT_EQ(embed_image(img, stub), embed_image(img, stub));
}

TEST(EmbeddingTest, StubBlackVersusWhite) {
  // Both images are constant, so mean subtraction leaves zero vectors; a zero
  // vector embeds as the constant unit vector, hence cosine 1.
  StubEmbedder stub;
  const auto black = embed_image(ImageTensor(32, 32, 1, 0.0), stub);
  const auto white = embed_image(ImageTensor(32, 32, 1, 1.0), stub);
  for (float v : black.values) EXPECT_FLOAT_EQ(v, static_cast<float>(1.0 / 16.0));
  EXPECT_NEAR(cosine(black, white), 1.0, 1e-9);
}

TEST(EmbeddingTest, StubCosinesOfHalfSplitImages) {
  // Features f(x) for the vertical split and f(y) for the horizontal split,
  // with f zero-mean: the dot product factorizes as sum(f) * sum(f) = 0.
  // Inverting an image negates its features exactly.
  StubEmbedder stub;
  const auto vertical = embed_image(split_image(32, true), stub);
  const auto horizontal = embed_image(split_image(32, false), stub);
  const auto inverted = embed_image(invert(split_image(32, true)), stub);
  EXPECT_NEAR(cosine(vertical, horizontal), 0.0, 1e-9);
  EXPECT_NEAR(cosine(vertical, inverted), -1.0, 1e-9);
  EXPECT_NEAR(cosine(vertical, vertical), 1.0, 1e-9);
}

TEST(EmbeddingTest, StubContrastInvariance) {
  // Scaling contrast about mid-gray scales the centred features.
  StubEmbedder stub;
  auto low = split_image(32, true);
  for (auto& v : low.values) v = 0.25 + 0.5 * v;
  EXPECT_NEAR(cosine(embed_image(low, stub), embed_image(split_image(32, true), stub)), 1.0, 1e-6);
}

TEST(EmbeddingTest, StubTextHashesByteTrigrams) {
  StubEmbedder stub;
  const auto v = StubEmbedder::text_features("abcd");
  std::vector<double> expected(256, 0.0);
  expected[fnv1a("abc") % 256] += 1.0;
  expected[fnv1a("bcd") % 256] += 1.0;
  EXPECT_EQ(v, expected);

  const auto unit = embed_text("abc", stub);
  EXPECT_FLOAT_EQ(unit.values[fnv1a("abc") % 256], 1.0f);
  EXPECT_NEAR(unit.norm(), 1.0, 1e-6);
}

TEST(EmbeddingTest, CosineBasicIdentities) {
  const std::vector<double> a{0.6, 0.8, 0.0};
  const std::vector<double> b{0.0, 0.0, 2.0};
  const std::vector<double> neg{-0.6, -0.8, 0.0};
  const auto va = make_unit_embedding("t", a);
  const auto vb = make_unit_embedding("t", b);
  const auto vn = make_unit_embedding("t", neg);
  EXPECT_NEAR(cosine(va, va), 1.0, 1e-9);
  EXPECT_NEAR(cosine(va, vb), 0.0, 1e-9);
  EXPECT_NEAR(cosine(va, vn), -1.0, 1e-9);
  EXPECT_EQ(cosine(va, vn), cosine(vn, va));
}

TEST(EmbeddingTest, CosineRejectsMismatch) {
  const std::vector<double> a{1.0, 0.0};
  const std::vector<double> c{1.0, 0.0, 0.0};
  EXPECT_THROW(cosine(make_unit_embedding("x", a), make_unit_embedding("y", a)), MismatchError);
  EXPECT_THROW(cosine(make_unit_embedding("x", a), make_unit_embedding("x", c)), MismatchError);
}

TEST(EmbeddingTest, TransportFailuresAreRetried) {
  FlakyProvider provider(2);
  const std::vector<ImageTensor> imgs{ImageTensor(2, 2, 1)};
  const auto out = embed_images(imgs, provider, RetryPolicy{3, std::chrono::milliseconds(0)});
  EXPECT_EQ(provider.calls, 3);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_NEAR(out[0].norm(), 1.0, 1e-6);

  FlakyProvider hopeless(5);
  EXPECT_THROW(embed_images(imgs, hopeless, RetryPolicy{3, std::chrono::milliseconds(0)}), TransportError);
  EXPECT_EQ(hopeless.calls, 3);
}

TEST(EmbeddingTest, DimensionMismatchIsFatal) {
  FlakyProvider wrong(0, 5);
  const std::vector<ImageTensor> imgs{ImageTensor(2, 2, 1)};
  EXPECT_THROW(embed_images(imgs, wrong), MismatchError);
  EXPECT_EQ(wrong.calls, 1);
}

TEST(EmbeddingTest, TextRequiresTextSupport) {
  FlakyProvider provider(0);
  EXPECT_THROW(embed_text("hello", provider), InvalidArgument);
}

TEST(EmbeddingCacheTest, ByteLayoutIsAsDocumented) {
  EmbeddingBlock block{"ab", 2, {"k1"}, {3}, {1.0f, -2.0f}};
  std::ostringstream out(std::ios::binary);
  write_embedding_block(out, block);

  std::string expected = "PEMB";
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) expected.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  auto f32 = [&](float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    u32(bits);
  };
  u32(1);
  u32(2);
  expected += "ab";
  u32(2);
  u32(1);
  u32(0);  // high half of the u64 count
  expected.push_back(2);
  expected.push_back(0);
  expected += "k1";
  expected.push_back(3);
  f32(1.0f);
  f32(-2.0f);
  EXPECT_EQ(out.str(), expected);
}

TEST(EmbeddingCacheTest, RoundTripAndEmbedderCheck) {
  fixtures::TempDir tmp;
  EmbeddingBlock block{"stub-gray16", 3, {"a", "b"}, {0, 2}, {0.1f, 0.2f, 0.3f, -1.0f, 0.0f, 1e-7f}};
  const auto path = tmp / "cache.bin";
  save_embedding_cache(path, block);
  EXPECT_EQ(load_embedding_cache(path, "stub-gray16"), block);
  EXPECT_EQ(load_embedding_cache(path, ""), block);
  EXPECT_THROW(load_embedding_cache(path, "clip-vit"), MismatchError);
  EXPECT_THROW(load_embedding_cache(tmp / "missing.bin", "stub-gray16"), NotFound);
}

TEST(EmbeddingCacheTest, CorruptInputIsRejected) {
  EmbeddingBlock block{"id", 2, {"k"}, {0}, {1.0f, 2.0f}};
  std::ostringstream out(std::ios::binary);
  write_embedding_block(out, block);
  const auto bytes = out.str();

  std::istringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_embedding_block(truncated), Error);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::istringstream in(bad_magic);
  EXPECT_THROW(read_embedding_block(in), Error);
}

TEST(RemoteEmbedderTest, EmbedsThroughHttp) {
  FakeEmbedServer server;
  RemoteEmbedder remote({server.base(), "clip-test", 3, true, std::chrono::seconds(5)});
  const std::vector<std::string> texts{"one", "two"};
  const auto out = embed_texts(texts, remote);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].embedder_id, "clip-test");
  EXPECT_NEAR(out[1].values[0], 1.0 / std::sqrt(3.0), 1e-6);
}

TEST(RemoteEmbedderTest, ServerErrorsAreRetried) {
  FakeEmbedServer server;
  server.fail_first = 2;
  RemoteEmbedder remote({server.base(), "clip-test", 3, true, std::chrono::seconds(5)});
  const auto v = embed_image(ImageTensor(4, 4, 3, 0.5), remote, RetryPolicy{3, std::chrono::milliseconds(1)});
  EXPECT_EQ(server.requests.load(), 3);
  EXPECT_EQ(v.dim(), 3u);
}

TEST(RemoteEmbedderTest, DimensionDisagreementIsMismatch) {
  FakeEmbedServer server;
  RemoteEmbedder remote({server.base(), "clip-test", 4, true, std::chrono::seconds(5)});
  EXPECT_THROW(embed_text("x", remote, RetryPolicy{3, std::chrono::milliseconds(0)}), MismatchError);
  EXPECT_EQ(server.requests.load(), 1);
}

TEST(RemoteEmbedderTest, UnreachableEndpointNamesProvider) {
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  RemoteEmbedder remote({"http://127.0.0.1:" + std::to_string(port), "clip-test", 3, true, std::chrono::seconds(2)});
  try {
    embed_text("x", remote, RetryPolicy{2, std::chrono::milliseconds(0)});
    FAIL() << "expected TransportError";
  } catch (const TransportError& e) {
    EXPECT_NE(std::string(e.what()).find("clip-test"), std::string::npos) << e.what();
  }
}

#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "provenance/corpus.hpp"
#include "provenance/errors.hpp"
#include "provenance/hashing.hpp"
#include "provenance/image.hpp"
#include "test_support.hpp"

using namespace provenance;
using provenance::fixtures::TempDir;
using provenance::fixtures::write_text;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct BundleImage {
  std::string image_id;
  int page_no;
  std::string caption;
};

// Writes a bundle with `pages` pages; texts maps page number to its paragraphs.
fs::path make_bundle(const fs::path& root, const std::string& doc_id, int pages,
                     const std::map<int, std::vector<std::string>>& texts, const std::vector<BundleImage>& images) {
  const fs::path dir = root / ("bundle-" + doc_id);
  json page_list = json::array();
  for (int p = 1; p <= pages; ++p) {
    json entry = {{"page_no", p}};
    if (auto it = texts.find(p); it != texts.end()) {
      std::string body;
      for (const auto& para : it->second) {
        body += para + "\n\n";
      }
      const std::string name = "p" + std::to_string(p) + ".txt";
      write_text(dir / name, body);
      entry["text_file"] = name;
    }
    page_list.push_back(entry);
  }
  json image_list = json::array();
  int shade = 10;
  for (const auto& img : images) {
    const auto bytes = encode_pnm(ImageTensor(8, 6, 1, shade / 255.0));
    shade += 20;
    const std::string file = img.image_id + ".pgm";
    write_text(dir / file, std::string(bytes.begin(), bytes.end()));
    json entry = {{"image_id", img.image_id}, {"page_no", img.page_no}, {"file", file}};
    if (!img.caption.empty()) entry["caption"] = img.caption;
    image_list.push_back(entry);
  }
  write_text(dir / "bundle.json", json{{"doc_id", doc_id},
                                       {"title", "Catalogue " + doc_id},
                                       {"language_tag", "en"},
                                       {"pages", page_list},
                                       {"images", image_list}}
                                      .dump(2));
  return dir;
}

std::vector<std::string> texts_of(const std::vector<Paragraph>& paras) {
  std::vector<std::string> out;
  for (const auto& p : paras) out.push_back(p.text);
  return out;
}

}  // namespace

TEST(CorpusTest, IngestRegistersDocumentAndAssets) {
  TempDir tmp;
  const auto bundle = make_bundle(tmp.path(), "doc-a", 3, {{2, {"First.", "Second."}}},
                                  {{"img-1", 2, ""}, {"img-2", 2, "A caption"}});
  auto corpus = Corpus::open(tmp / "data");
  const auto record = corpus.ingest_document(bundle);

  EXPECT_EQ(record.doc_id, "doc-a");
  EXPECT_EQ(record.page_count, 3);
  ASSERT_EQ(corpus.manifest().assets.size(), 2u);
  for (const auto& asset : corpus.manifest().assets) {
    EXPECT_EQ(asset.page_no, 2);
    EXPECT_EQ(asset.doc_id, "doc-a");
  }
  EXPECT_EQ(corpus.asset("img-2").caption.value_or(""), "A caption");
  EXPECT_FALSE(corpus.asset("img-1").caption.has_value());
}

TEST(CorpusTest, AssetsAreStoredContentAddressed) {
  TempDir tmp;
  const auto bundle = make_bundle(tmp.path(), "doc-a", 1, {}, {{"img-1", 1, ""}});
  auto corpus = Corpus::open(tmp / "data");
  corpus.ingest_document(bundle);

  const auto original = read_file_bytes((bundle / "img-1.pgm").string());
  const auto& asset = corpus.asset("img-1");
  EXPECT_EQ(asset.pixel_ref, "assets/" + sha256_hex(original) + ".pgm");
  EXPECT_TRUE(fs::exists(tmp / "data" / asset.pixel_ref));
  EXPECT_EQ(corpus.asset_bytes(asset), original);
}

TEST(CorpusTest, ImageOnMissingPageIsRejectedWithPageNumber) {
  TempDir tmp;
  const auto bundle = make_bundle(tmp.path(), "doc-a", 3, {}, {{"img-9", 9, ""}});
  auto corpus = Corpus::open(tmp / "data");
  try {
    corpus.ingest_document(bundle);
    FAIL() << "expected CorpusError";
  } catch (const CorpusError& e) {
    EXPECT_NE(std::string(e.what()).find("page 9"), std::string::npos) << e.what();
  }
  EXPECT_TRUE(corpus.manifest().documents.empty());
  EXPECT_FALSE(fs::exists(tmp / "data" / Corpus::kManifestFile));
}

TEST(CorpusTest, DuplicateDocIdIsRejected) {
  TempDir tmp;
  auto corpus = Corpus::open(tmp / "data");
  corpus.ingest_document(make_bundle(tmp.path(), "doc-a", 1, {}, {{"img-1", 1, ""}}));
  const auto before = corpus.manifest();
  const auto again = make_bundle(tmp / "second", "doc-a", 1, {}, {{"img-2", 1, ""}});
  EXPECT_THROW(corpus.ingest_document(again), CorpusError);
  EXPECT_EQ(corpus.manifest(), before);
}

TEST(CorpusTest, DuplicateImageIdAcrossDocumentsIsRejected) {
  TempDir tmp;
  auto corpus = Corpus::open(tmp / "data");
  corpus.ingest_document(make_bundle(tmp.path(), "doc-a", 1, {}, {{"img-1", 1, ""}}));
  EXPECT_THROW(corpus.ingest_document(make_bundle(tmp.path(), "doc-b", 1, {}, {{"img-1", 1, ""}})), CorpusError);
}

TEST(CorpusTest, UndecodableImageIsRejected) {
  TempDir tmp;
  const auto bundle = make_bundle(tmp.path(), "doc-a", 1, {}, {{"img-1", 1, ""}});
  write_text(bundle / "img-1.pgm", "P5\n8 6\n255\nxx");
  auto corpus = Corpus::open(tmp / "data");
  EXPECT_THROW(corpus.ingest_document(bundle), CorpusError);
}

TEST(CorpusTest, EightBundlesGiveEightDocuments) {
  TempDir tmp;
  auto corpus = Corpus::open(tmp / "data");
  for (int i = 0; i < 8; ++i) {
    const std::string id = "cat-" + std::to_string(i);
    corpus.ingest_document(make_bundle(tmp.path(), id, 2, {{1, {"Text " + id}}}, {{"img-" + id, 1, ""}}));
  }
  EXPECT_EQ(corpus.manifest().documents.size(), 8u);
  EXPECT_EQ(Corpus::open(tmp / "data").manifest().documents.size(), 8u);
}

TEST(CorpusTest, LinkContextReturnsWholePageInOrder) {
  TempDir tmp;
  const std::vector<std::string> paras{"Alpha.", "Beta.", "Gamma.", "Delta."};
  auto corpus = Corpus::open(tmp / "data");
  corpus.ingest_document(make_bundle(tmp.path(), "doc-a", 3, {{2, paras}, {3, {"Other page."}}}, {{"img-1", 2, ""}}));
  const auto context = corpus.link_context("img-1");
  EXPECT_EQ(texts_of(context), paras);
  ASSERT_EQ(context.size(), 4u);
  EXPECT_EQ(context.front().para_id, "p0002-001");
  EXPECT_EQ(context.back().para_id, "p0002-004");
}

TEST(CorpusTest, LinkContextOnPlatePageIsEmpty) {
  TempDir tmp;
  auto corpus = Corpus::open(tmp / "data");
  corpus.ingest_document(make_bundle(tmp.path(), "doc-a", 2, {{1, {"Text."}}}, {{"plate-1", 2, ""}}));
  EXPECT_TRUE(corpus.link_context("plate-1").empty());
}

TEST(CorpusTest, LinkContextWithAdjacentPageWindow) {
  TempDir tmp;
  // Caption on the image, no text on its own page, one paragraph on each
  // neighbour; page 4 lies outside the window.
  const std::map<int, std::vector<std::string>> texts{{1, {"Before."}}, {3, {"After."}}, {4, {"Far."}}};
  auto corpus = Corpus::open(tmp / "data");
  corpus.ingest_document(make_bundle(tmp.path(), "doc-a", 4, texts, {{"img-1", 2, "Fig. 1"}}),
                         IngestOptions{.context_window_pages = 1});

  const auto context = corpus.link_context("img-1");
  const std::vector<std::string> expected{"Fig. 1", "Before.", "After."};
  EXPECT_EQ(texts_of(context), expected);
  EXPECT_EQ(context.front().para_id, Corpus::kCaptionParaId);
}

TEST(CorpusTest, LinkContextUnknownImageThrows) {
  TempDir tmp;
  auto corpus = Corpus::open(tmp / "data");
  EXPECT_THROW(corpus.link_context("nope"), NotFound);
}

TEST(CorpusTest, ValidateReferenceBoundaries) {
  TempDir tmp;
  auto corpus = Corpus::open(tmp / "data");
  corpus.ingest_document(make_bundle(tmp.path(), "long-doc", 120, {}, {{"img-1", 1, ""}}));
  EXPECT_TRUE(corpus.validate_reference("long-doc", 1));
  EXPECT_TRUE(corpus.validate_reference("long-doc", 120));
  EXPECT_FALSE(corpus.validate_reference("long-doc", 121));
  EXPECT_FALSE(corpus.validate_reference("long-doc", 0));
  EXPECT_FALSE(corpus.validate_reference("long-doc", -3));
  EXPECT_FALSE(corpus.validate_reference("unknown", 5));
}

TEST(CorpusTest, SplitParagraphsDropsBlankBlocks) {
  const auto paras = split_paragraphs("  one\nline two\n\n \n\nthree\r\n\r\n\n");
  const std::vector<std::string> expected{"one\nline two", "three"};
  EXPECT_EQ(paras, expected);
}

TEST(ManifestTest, RoundTripPreservesEquality) {
  TempDir tmp;
  const auto corpus = fixtures::ingest_fixture_corpus(tmp / "data");
  const auto path = tmp / "copy.json";
  save_manifest(corpus.manifest(), path);
  EXPECT_EQ(load_manifest(path), corpus.manifest());
}

TEST(ManifestTest, ChecksumIsSha256OfCanonicalFormWithoutChecksum) {
  TempDir tmp;
  fixtures::ingest_fixture_corpus(tmp / "data");
  auto doc = json::parse(read_file_text((tmp / "data" / Corpus::kManifestFile).string()));
  const std::string stored = doc.at("checksum");
  doc.erase("checksum");
  EXPECT_EQ(stored, sha256_hex(doc.dump()));
}

TEST(ManifestTest, FlippedByteFailsLoad) {
  TempDir tmp;
  fixtures::ingest_fixture_corpus(tmp / "data");
  const auto path = tmp / "data" / Corpus::kManifestFile;
  auto text = read_file_text(path.string());
  const auto pos = text.find("Ritual");
  ASSERT_NE(pos, std::string::npos);
  text[pos] = 'r';
  write_text(path, text);
  EXPECT_THROW(load_manifest(path), CorpusError);
  EXPECT_THROW(Corpus::open(tmp / "data"), CorpusError);
}

TEST(ManifestTest, UnsupportedVersionFailsLoad) {
  TempDir tmp;
  const auto corpus = fixtures::ingest_fixture_corpus(tmp / "data");
  auto doc = json::parse(serialize_manifest(corpus.manifest()));
  doc["version"] = 99;
  doc.erase("checksum");
  doc["checksum"] = sha256_hex(doc.dump());
  const auto path = tmp / "v99.json";
  write_text(path, doc.dump());
  try {
    load_manifest(path);
    FAIL() << "expected CorpusError";
  } catch (const CorpusError& e) {
    EXPECT_NE(std::string(e.what()).find("99"), std::string::npos);
  }
}

TEST(ManifestTest, ValidateRejectsDanglingAssetPage) {
  TempDir tmp;
  auto manifest = fixtures::ingest_fixture_corpus(tmp / "data").manifest();
  manifest.assets.front().page_no = 500;
  EXPECT_THROW(validate_manifest(manifest), CorpusError);
}

TEST(ManifestTest, MissingManifestOpensEmptyCorpus) {
  TempDir tmp;
  const auto corpus = Corpus::open(tmp / "nothing-here");
  EXPECT_TRUE(corpus.empty());
  EXPECT_TRUE(corpus.manifest().documents.empty());
}

TEST(FixtureCorpusTest, HasTenAssetsAndSixContextEntries) {
  TempDir tmp;
  const auto corpus = fixtures::ingest_fixture_corpus(tmp / "data");
  EXPECT_EQ(corpus.manifest().documents.size(), 3u);
  EXPECT_EQ(corpus.manifest().assets.size(), 10u);
  std::size_t context = 0;
  for (const auto& asset : corpus.manifest().assets) {
    context += corpus.link_context(asset.image_id).size();
  }
  EXPECT_EQ(context, 6u);
  EXPECT_EQ(corpus.document("bronzes-wz").page_count, 120);
}

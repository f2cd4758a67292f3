#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "provenance/label.hpp"

namespace provenance {

struct Paragraph {
  std::string para_id;
  std::string text;

  bool operator==(const Paragraph&) const = default;
};

struct PageContext {
  std::string doc_id;
  int page_no = 0;
  std::vector<Paragraph> paragraphs;

  bool operator==(const PageContext&) const = default;
};

struct DocumentRecord {
  std::string doc_id;
  std::string title;
  std::string language_tag;
  int page_count = 0;
  std::string source_uri;

  bool operator==(const DocumentRecord&) const = default;
};

struct ImageAsset {
  std::string image_id;
  std::string doc_id;
  int page_no = 0;
  std::optional<std::string> caption;
  // Content-addressed path relative to the data directory: assets/<sha256>.<ext>
  std::string pixel_ref;
  std::vector<std::string> context_para_ids;

  CandidateLabel label() const { return {doc_id, page_no, image_id}; }
  bool operator==(const ImageAsset&) const = default;
};

inline constexpr int kManifestVersion = 1;

struct CorpusManifest {
  int version = kManifestVersion;
  std::vector<DocumentRecord> documents;
  std::vector<ImageAsset> assets;
  // Page text is carried in the manifest so the checksum covers it.
  std::vector<PageContext> pages;
  std::string checksum;

  bool operator==(const CorpusManifest&) const = default;
};

// SHA-256 over the sorted-key, whitespace-free JSON of every field except
// `checksum`.
std::string manifest_checksum(const CorpusManifest& manifest);

// Structural validation: unique ids, page ranges, resolvable cross references.
// Throws CorpusError describing the first violation.
void validate_manifest(const CorpusManifest& manifest);

std::string serialize_manifest(const CorpusManifest& manifest);
CorpusManifest parse_manifest(std::string_view text);

void save_manifest(const CorpusManifest& manifest, const std::filesystem::path& path);
CorpusManifest load_manifest(const std::filesystem::path& path);

struct IngestOptions {
  // 0: caption plus the paragraphs of the image's own page.
  // 1: additionally the paragraphs of the previous and next pages.
  int context_window_pages = 0;
};

// Splits page text into paragraphs at blank lines; whitespace-only blocks are dropped.
std::vector<std::string> split_paragraphs(std::string_view text);

class Corpus {
 public:
  static constexpr const char* kManifestFile = "manifest.json";
  static constexpr const char* kBundleDescriptor = "bundle.json";
  static constexpr const char* kCaptionParaId = "caption";

  // Opens the corpus rooted at `data_dir`. A missing manifest yields an empty corpus.
  static Corpus open(const std::filesystem::path& data_dir);

  const CorpusManifest& manifest() const { return manifest_; }
  const std::filesystem::path& data_dir() const { return data_dir_; }
  bool empty() const { return manifest_.assets.empty(); }

  // Registers the bundle and publishes the updated manifest. On any error the
  // published manifest is left untouched.
  DocumentRecord ingest_document(const std::filesystem::path& bundle_dir,
                                 const IngestOptions& options = {});

  // Caption first (para_id "caption"), then linked paragraphs in page order.
  std::vector<Paragraph> link_context(std::string_view image_id) const;

  bool validate_reference(std::string_view doc_id, int page_no) const noexcept;

  const DocumentRecord& document(std::string_view doc_id) const;
  const ImageAsset& asset(std::string_view image_id) const;
  const ImageAsset& asset(const CandidateLabel& label) const;
  std::filesystem::path asset_path(const ImageAsset& asset) const;
  std::vector<std::uint8_t> asset_bytes(const ImageAsset& asset) const;

 private:
  explicit Corpus(std::filesystem::path data_dir, CorpusManifest manifest);
  void reindex();

  std::filesystem::path data_dir_;
  CorpusManifest manifest_;
  std::map<std::string, std::size_t, std::less<>> doc_by_id_;
  std::map<std::string, std::size_t, std::less<>> asset_by_id_;
  // doc_id + '/' + para_id -> (index into pages, index into paragraphs)
  std::map<std::string, std::pair<std::size_t, std::size_t>, std::less<>> para_by_key_;
};

}  // namespace provenance

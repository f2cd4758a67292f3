#include "provenance/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include <json.hpp>

#include "provenance/errors.hpp"
#include "provenance/hashing.hpp"
#include "provenance/image.hpp"

namespace provenance {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json to_json_value(const CorpusManifest& m, bool with_checksum) {
  json docs = json::array();
  for (const auto& d : m.documents) {
    docs.push_back({{"doc_id", d.doc_id},
                    {"title", d.title},
                    {"language_tag", d.language_tag},
                    {"page_count", d.page_count},
                    {"source_uri", d.source_uri}});
  }
  json assets = json::array();
  for (const auto& a : m.assets) {
    json entry = {{"image_id", a.image_id},
                  {"doc_id", a.doc_id},
                  {"page_no", a.page_no},
                  {"pixel_ref", a.pixel_ref},
                  {"context_para_ids", a.context_para_ids}};
    if (a.caption) {
      entry["caption"] = *a.caption;
    }
    assets.push_back(std::move(entry));
  }
  json pages = json::array();
  for (const auto& p : m.pages) {
    json paras = json::array();
    for (const auto& para : p.paragraphs) {
      paras.push_back({{"para_id", para.para_id}, {"text", para.text}});
    }
    pages.push_back({{"doc_id", p.doc_id}, {"page_no", p.page_no}, {"paragraphs", paras}});
  }
  json out = {{"version", m.version}, {"documents", docs}, {"assets", assets}, {"pages", pages}};
  if (with_checksum) {
    out["checksum"] = m.checksum;
  }
  return out;
}

template <typename T>
T required(const json& obj, const char* key) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw CorpusError(std::string("manifest field missing: ") + key);
  }
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw CorpusError(std::string("manifest field has wrong type: ") + key);
  }
}

std::string para_id_for(int page_no, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "p%04d-%03zu", page_no, index + 1);
  return buf;
}

std::string lowercase_extension(const fs::path& file) {
  std::string ext = file.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext.empty()) {
    return ".bin";
  }
  return ext;
}

std::string trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) {
    return {};
  }
  const auto end = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(begin, end - begin + 1));
}

}  // namespace

std::string manifest_checksum(const CorpusManifest& manifest) {
  return sha256_hex(to_json_value(manifest, false).dump());
}

void validate_manifest(const CorpusManifest& m) {
  if (m.version < 1 || m.version > kManifestVersion) {
    throw CorpusError("unsupported manifest version " + std::to_string(m.version));
  }
  std::map<std::string, int, std::less<>> page_counts;
  for (const auto& d : m.documents) {
    if (!is_valid_identifier(d.doc_id)) {
      throw CorpusError("invalid doc_id '" + d.doc_id + "'");
    }
    if (d.page_count < 1 || d.page_count > kMaxPageNumber) {
      throw CorpusError("document " + d.doc_id + " has invalid page_count " +
                        std::to_string(d.page_count));
    }
    if (!page_counts.emplace(d.doc_id, d.page_count).second) {
      throw CorpusError("duplicate doc_id " + d.doc_id);
    }
  }
  auto check_ref = [&](const std::string& doc_id, int page_no, const std::string& what) {
    const auto it = page_counts.find(doc_id);
    if (it == page_counts.end()) {
      throw CorpusError(what + " references unknown document " + doc_id);
    }
    if (page_no < 1 || page_no > it->second) {
      throw CorpusError(what + " references page " + std::to_string(page_no) + " of " + doc_id +
                        " which has " + std::to_string(it->second) + " pages");
    }
  };
  std::set<std::string> para_keys;
  std::set<std::pair<std::string, int>> seen_pages;
  for (const auto& p : m.pages) {
    check_ref(p.doc_id, p.page_no, "page text");
    if (!seen_pages.emplace(p.doc_id, p.page_no).second) {
      throw CorpusError("duplicate page text for " + p.doc_id + " page " + std::to_string(p.page_no));
    }
    std::set<std::string> on_page;
    for (const auto& para : p.paragraphs) {
      if (para.text.empty()) {
        throw CorpusError("empty paragraph " + para.para_id + " in " + p.doc_id);
      }
      if (!on_page.insert(para.para_id).second || !para_keys.insert(p.doc_id + "/" + para.para_id).second) {
        throw CorpusError("duplicate para_id " + para.para_id + " in " + p.doc_id);
      }
    }
  }
  std::set<std::string> image_ids;
  for (const auto& a : m.assets) {
    if (!is_valid_identifier(a.image_id)) {
      throw CorpusError("invalid image_id '" + a.image_id + "'");
    }
    if (!image_ids.insert(a.image_id).second) {
      throw CorpusError("duplicate image_id " + a.image_id);
    }
    check_ref(a.doc_id, a.page_no, "image " + a.image_id);
    if (a.pixel_ref.rfind("assets/", 0) != 0) {
      throw CorpusError("image " + a.image_id + " has malformed pixel_ref " + a.pixel_ref);
    }
    for (const auto& id : a.context_para_ids) {
      if (!para_keys.contains(a.doc_id + "/" + id)) {
        throw CorpusError("image " + a.image_id + " links unknown paragraph " + id);
      }
    }
  }
}

std::string serialize_manifest(const CorpusManifest& manifest) {
  return to_json_value(manifest, true).dump() + "\n";
}

CorpusManifest parse_manifest(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw CorpusError(std::string("manifest is not valid JSON: ") + e.what());
  }
  CorpusManifest m;
  m.version = required<int>(root, "version");
  if (m.version > kManifestVersion) {
    throw CorpusError("manifest version " + std::to_string(m.version) +
                      " is newer than supported version " + std::to_string(kManifestVersion));
  }
  for (const auto& d : required<json>(root, "documents")) {
    m.documents.push_back({required<std::string>(d, "doc_id"), required<std::string>(d, "title"),
                           required<std::string>(d, "language_tag"), required<int>(d, "page_count"),
                           required<std::string>(d, "source_uri")});
  }
  for (const auto& a : required<json>(root, "assets")) {
    ImageAsset asset;
    asset.image_id = required<std::string>(a, "image_id");
    asset.doc_id = required<std::string>(a, "doc_id");
    asset.page_no = required<int>(a, "page_no");
    if (a.contains("caption")) {
      asset.caption = required<std::string>(a, "caption");
    }
    asset.pixel_ref = required<std::string>(a, "pixel_ref");
    asset.context_para_ids = required<std::vector<std::string>>(a, "context_para_ids");
    m.assets.push_back(std::move(asset));
  }
  for (const auto& p : required<json>(root, "pages")) {
    PageContext page;
    page.doc_id = required<std::string>(p, "doc_id");
    page.page_no = required<int>(p, "page_no");
    for (const auto& para : required<json>(p, "paragraphs")) {
      page.paragraphs.push_back({required<std::string>(para, "para_id"), required<std::string>(para, "text")});
    }
    m.pages.push_back(std::move(page));
  }
  m.checksum = required<std::string>(root, "checksum");
  if (manifest_checksum(m) != m.checksum) {
    throw CorpusError("manifest checksum mismatch");
  }
  validate_manifest(m);
  return m;
}

void save_manifest(const CorpusManifest& manifest, const fs::path& path) {
  validate_manifest(manifest);
  CorpusManifest stamped = manifest;
  stamped.checksum = manifest_checksum(manifest);
  write_file_atomic(path.string(), serialize_manifest(stamped));
}

CorpusManifest load_manifest(const fs::path& path) {
  return parse_manifest(read_file_text(path.string()));
}

std::vector<std::string> split_paragraphs(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  std::size_t pos = 0;
  auto flush = [&] {
    auto t = trim(current);
    if (!t.empty()) {
      out.push_back(std::move(t));
    }
    current.clear();
  };
  while (pos <= text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) {
      eol = text.size();
    }
    const auto line = text.substr(pos, eol - pos);
    if (trim(line).empty()) {
      flush();
    } else {
      if (!current.empty()) {
        current.push_back('\n');
      }
      current.append(line);
    }
    pos = eol + 1;
  }
  flush();
  return out;
}

Corpus::Corpus(fs::path data_dir, CorpusManifest manifest)
    : data_dir_(std::move(data_dir)), manifest_(std::move(manifest)) {
  reindex();
}

Corpus Corpus::open(const fs::path& data_dir) {
  const auto path = data_dir / kManifestFile;
  if (!fs::exists(path)) {
    CorpusManifest empty;
    empty.checksum = manifest_checksum(empty);
    return Corpus(data_dir, std::move(empty));
  }
  return Corpus(data_dir, load_manifest(path));
}

void Corpus::reindex() {
  doc_by_id_.clear();
  asset_by_id_.clear();
  para_by_key_.clear();
  for (std::size_t i = 0; i < manifest_.documents.size(); ++i) {
    doc_by_id_.emplace(manifest_.documents[i].doc_id, i);
  }
  for (std::size_t i = 0; i < manifest_.assets.size(); ++i) {
    asset_by_id_.emplace(manifest_.assets[i].image_id, i);
  }
  for (std::size_t p = 0; p < manifest_.pages.size(); ++p) {
    const auto& page = manifest_.pages[p];
    for (std::size_t q = 0; q < page.paragraphs.size(); ++q) {
      para_by_key_.emplace(page.doc_id + "/" + page.paragraphs[q].para_id, std::make_pair(p, q));
    }
  }
}

DocumentRecord Corpus::ingest_document(const fs::path& bundle_dir, const IngestOptions& options) {
  if (options.context_window_pages < 0 || options.context_window_pages > 1) {
    throw InvalidArgument("context window must be 0 or 1 pages");
  }
  const auto descriptor_path = bundle_dir / kBundleDescriptor;
  json desc;
  try {
    desc = json::parse(read_file_text(descriptor_path.string()));
  } catch (const json::parse_error& e) {
    throw CorpusError("bundle descriptor " + descriptor_path.string() + " is not valid JSON: " + e.what());
  }

  DocumentRecord record;
  try {
    record.doc_id = desc.at("doc_id").get<std::string>();
    record.title = desc.at("title").get<std::string>();
    record.language_tag = desc.value("language_tag", std::string("und"));
    record.source_uri = desc.value("source_uri", std::string());
  } catch (const json::exception& e) {
    throw CorpusError("bundle descriptor missing doc_id/title: " + std::string(e.what()));
  }
  if (!is_valid_identifier(record.doc_id)) {
    throw CorpusError("invalid doc_id '" + record.doc_id + "'");
  }
  if (doc_by_id_.contains(record.doc_id)) {
    throw CorpusError("duplicate doc_id " + record.doc_id);
  }

  const json pages = desc.value("pages", json::array());
  if (!pages.is_array() || pages.empty()) {
    throw CorpusError("bundle " + record.doc_id + " declares no pages");
  }
  record.page_count = static_cast<int>(pages.size());
  if (record.page_count > kMaxPageNumber) {
    throw CorpusError("bundle " + record.doc_id + " exceeds " + std::to_string(kMaxPageNumber) + " pages");
  }

  std::vector<PageContext> page_texts;
  for (std::size_t i = 0; i < pages.size(); ++i) {
    const int expected = static_cast<int>(i) + 1;
    const int page_no = pages[i].value("page_no", 0);
    if (page_no != expected) {
      throw CorpusError("bundle " + record.doc_id + " lists page " + std::to_string(page_no) +
                        " where page " + std::to_string(expected) + " was expected");
    }
    PageContext page{record.doc_id, page_no, {}};
    const auto text_file = pages[i].value("text_file", std::string());
    if (!text_file.empty()) {
      const auto paragraphs = split_paragraphs(read_file_text((bundle_dir / text_file).string()));
      for (std::size_t p = 0; p < paragraphs.size(); ++p) {
        page.paragraphs.push_back({para_id_for(page_no, p), paragraphs[p]});
      }
    }
    page_texts.push_back(std::move(page));
  }

  struct PendingImage {
    ImageAsset asset;
    std::vector<std::uint8_t> bytes;
    std::string extension;
  };
  std::vector<PendingImage> pending;
  std::set<std::string> new_ids;
  for (const auto& img : desc.value("images", json::array())) {
    PendingImage p;
    p.asset.image_id = img.value("image_id", std::string());
    p.asset.doc_id = record.doc_id;
    p.asset.page_no = img.value("page_no", 0);
    if (!is_valid_identifier(p.asset.image_id)) {
      throw CorpusError("invalid image_id '" + p.asset.image_id + "' in bundle " + record.doc_id);
    }
    if (asset_by_id_.contains(p.asset.image_id) || !new_ids.insert(p.asset.image_id).second) {
      throw CorpusError("duplicate image_id " + p.asset.image_id);
    }
    if (p.asset.page_no < 1 || p.asset.page_no > record.page_count) {
      throw CorpusError("image " + p.asset.image_id + " references page " +
                        std::to_string(p.asset.page_no) + " but document " + record.doc_id + " has " +
                        std::to_string(record.page_count) + " pages");
    }
    if (img.contains("caption") && img["caption"].is_string()) {
      auto caption = trim(img["caption"].get<std::string>());
      if (!caption.empty()) {
        p.asset.caption = std::move(caption);
      }
    }
    const fs::path file = bundle_dir / img.value("file", std::string());
    p.bytes = read_file_bytes(file.string());
    try {
      decode_image(p.bytes);
    } catch (const DecodeError& e) {
      throw CorpusError("image " + p.asset.image_id + " is not decodable: " + e.what());
    }
    p.extension = lowercase_extension(file);
    p.asset.pixel_ref = "assets/" + sha256_hex(p.bytes) + p.extension;

    const int lo = std::max(1, p.asset.page_no - options.context_window_pages);
    const int hi = std::min(record.page_count, p.asset.page_no + options.context_window_pages);
    for (int page_no = lo; page_no <= hi; ++page_no) {
      for (const auto& para : page_texts[static_cast<std::size_t>(page_no - 1)].paragraphs) {
        p.asset.context_para_ids.push_back(para.para_id);
      }
    }
    pending.push_back(std::move(p));
  }

  CorpusManifest next = manifest_;
  next.documents.push_back(record);
  for (auto& page : page_texts) {
    next.pages.push_back(std::move(page));
  }
  for (const auto& p : pending) {
    next.assets.push_back(p.asset);
  }
  validate_manifest(next);
  next.checksum = manifest_checksum(next);

  // Content-addressed writes are idempotent, so they may precede the manifest swap.
  for (const auto& p : pending) {
    const auto target = data_dir_ / p.asset.pixel_ref;
    if (!fs::exists(target)) {
      write_file_atomic(target.string(),
                        std::string_view(reinterpret_cast<const char*>(p.bytes.data()), p.bytes.size()));
    }
  }
  save_manifest(next, data_dir_ / kManifestFile);
  manifest_ = std::move(next);
  reindex();
  return record;
}

std::vector<Paragraph> Corpus::link_context(std::string_view image_id) const {
  const auto& a = asset(image_id);
  std::vector<Paragraph> out;
  if (a.caption) {
    out.push_back({kCaptionParaId, *a.caption});
  }
  for (const auto& id : a.context_para_ids) {
    const auto [page, para] = para_by_key_.at(a.doc_id + "/" + id);
    out.push_back(manifest_.pages[page].paragraphs[para]);
  }
  return out;
}

bool Corpus::validate_reference(std::string_view doc_id, int page_no) const noexcept {
  const auto it = doc_by_id_.find(doc_id);
  if (it == doc_by_id_.end()) {
    return false;
  }
  return page_no >= 1 && page_no <= manifest_.documents[it->second].page_count;
}

const DocumentRecord& Corpus::document(std::string_view doc_id) const {
  const auto it = doc_by_id_.find(doc_id);
  if (it == doc_by_id_.end()) {
    throw NotFound("unknown document " + std::string(doc_id));
  }
  return manifest_.documents[it->second];
}

const ImageAsset& Corpus::asset(std::string_view image_id) const {
  const auto it = asset_by_id_.find(image_id);
  if (it == asset_by_id_.end()) {
    throw NotFound("unknown image " + std::string(image_id));
  }
  return manifest_.assets[it->second];
}

const ImageAsset& Corpus::asset(const CandidateLabel& label) const {
  const auto& a = asset(label.image_id);
  if (a.doc_id != label.doc_id || a.page_no != label.page_no) {
    throw NotFound("label " + label.str() + " does not match registered image");
  }
  return a;
}

fs::path Corpus::asset_path(const ImageAsset& a) const { return data_dir_ / a.pixel_ref; }

std::vector<std::uint8_t> Corpus::asset_bytes(const ImageAsset& a) const {
  return read_file_bytes(asset_path(a).string());
}

}  // namespace provenance

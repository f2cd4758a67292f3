#include "provenance/retrieval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <future>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "binary_io.hpp"
#include "provenance/errors.hpp"
#include "provenance/gaussian.hpp"
#include "provenance/hashing.hpp"

namespace provenance {

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::raw:
      return "raw";
    case Strategy::edge:
      return "edge";
    case Strategy::clip:
      return "clip";
  }
  return "?";
}

Strategy strategy_from_string(std::string_view s) {
  if (s == "raw") return Strategy::raw;
  if (s == "edge") return Strategy::edge;
  if (s == "clip") return Strategy::clip;
  throw InvalidArgument("unknown strategy " + std::string(s));
}

const char* to_string(EntryVariant v) {
  switch (v) {
    case EntryVariant::raw:
      return "raw";
    case EntryVariant::edge:
      return "edge";
    case EntryVariant::semantic_image:
      return "semantic-image";
    case EntryVariant::semantic_text:
      return "semantic-text";
  }
  return "?";
}

SubIndex::SubIndex(std::string embedder_id, std::size_t dim) : embedder_id_(std::move(embedder_id)), dim_(dim) {}

void SubIndex::add(const CandidateLabel& label, EntryVariant variant, const EmbeddingVector& vector) {
  if (vector.embedder_id != embedder_id_ || vector.dim() != dim_) {
    throw MismatchError("sub-index for " + embedder_id_ + "/" + std::to_string(dim_) + " cannot hold a vector from " +
                        vector.embedder_id + "/" + std::to_string(vector.dim()));
  }
  double sq = 0.0;
  for (const float v : vector.values) {
    sq += static_cast<double>(v) * v;
  }
  const std::string key = label.str();
  const auto [slot, inserted] = group_by_label_.try_emplace(key, group_labels_.size());
  if (inserted) {
    group_labels_.push_back(key);
    group_first_entry_.push_back(labels_.size());
  }
  group_of_.push_back(slot->second);
  labels_.push_back(label);
  variants_.push_back(variant);
  data_.insert(data_.end(), vector.values.begin(), vector.values.end());
  norms_.push_back(sq);
}

EmbeddingBlock SubIndex::to_block() const {
  EmbeddingBlock block;
  block.embedder_id = embedder_id_;
  block.dim = dim_;
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    block.keys.push_back(labels_[i].str());
    block.tags.push_back(static_cast<std::uint8_t>(variants_[i]));
  }
  block.data = data_;
  return block;
}

SubIndex SubIndex::from_block(const EmbeddingBlock& block) {
  SubIndex index(block.embedder_id, block.dim);
  for (std::size_t i = 0; i < block.size(); ++i) {
    if (block.tags[i] > static_cast<std::uint8_t>(EntryVariant::semantic_text)) {
      throw Error("unknown index entry variant " + std::to_string(block.tags[i]));
    }
    EmbeddingVector v{block.embedder_id,
                      std::vector<float>(block.data.begin() + static_cast<std::ptrdiff_t>(i * block.dim),
                                         block.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * block.dim))};
    index.add(CandidateLabel::parse(block.keys[i]), static_cast<EntryVariant>(block.tags[i]), v);
  }
  return index;
}

std::vector<SearchHit> search(const SubIndex& index, const EmbeddingVector& query, std::size_t k, Strategy strategy) {
  if (k < 1) {
    throw InvalidArgument("search depth k must be at least 1");
  }
  if (index.empty()) {
    return {};
  }
  if (query.embedder_id != index.embedder_id_ || query.dim() != index.dim_) {
    throw MismatchError("query from " + query.embedder_id + "/" + std::to_string(query.dim()) +
                        " against sub-index " + index.embedder_id_ + "/" + std::to_string(index.dim_));
  }
  const std::size_t dim = index.dim_;
  double query_sq = 0.0;
  for (const float v : query.values) {
    query_sq += static_cast<double>(v) * v;
  }

  std::vector<double> best(index.group_labels_.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < index.labels_.size(); ++i) {
    const float* row = index.data_.data() + i * dim;
    double dot = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      dot += static_cast<double>(query.values[j]) * row[j];
    }
    const double denom = query_sq * index.norms_[i];
    const double score = denom == 0.0 ? 0.0 : std::clamp(dot / std::sqrt(denom), -1.0, 1.0);
    auto& slot = best[index.group_of_[i]];
    slot = std::max(slot, score);
  }

  std::vector<std::size_t> order(best.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t take = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (best[a] != best[b]) {
                        return best[a] > best[b];
                      }
                      return index.group_labels_[a] < index.group_labels_[b];
                    });
  std::vector<SearchHit> hits;
  hits.reserve(take);
  for (std::size_t r = 0; r < take; ++r) {
    const auto g = order[r];
    hits.push_back({index.labels_[index.group_first_entry_[g]], best[g], strategy});
  }
  return hits;
}

// ---------------------------------------------------------------------------

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void check_options(double sigma, int side) {
  if (!(sigma > 0.0)) {
    throw InvalidArgument("sigma must be positive");
  }
  if (side < 1) {
    throw InvalidArgument("preprocess side must be positive");
  }
}

}  // namespace

EmbeddingVector query_raw_embedding(const ImageTensor& decoded, const IndexMetadata& meta, EmbedderProvider& provider,
                                    const RetryPolicy& retry) {
  return embed_image(preprocess(decoded, meta.preprocess_side, false), provider, retry);
}

EmbeddingVector query_edge_embedding(const ImageTensor& decoded, const IndexMetadata& meta, EmbedderProvider& provider,
                                     const RetryPolicy& retry) {
  return embed_image(edge_map(preprocess(decoded, meta.preprocess_side, true), meta.sigma), provider, retry);
}

EmbeddingVector query_semantic_embedding(const ImageTensor& decoded, const IndexMetadata& meta,
                                         EmbedderProvider& provider, const RetryPolicy& retry) {
  return embed_image(preprocess(decoded, meta.preprocess_side, false), provider, retry);
}

VectorIndex build_index(const Corpus& corpus, EmbedderProvider& raw_provider, EmbedderProvider& semantic_provider,
                        const IndexOptions& options) {
  check_options(options.sigma, options.preprocess_side);
  VectorIndex index;
  index.meta.corpus_checksum = corpus.manifest().checksum;
  index.meta.sigma = options.sigma;
  index.meta.preprocess_side = options.preprocess_side;
  index.meta.built_at = utc_now();
  index.raw = SubIndex(raw_provider.embedder_id(), raw_provider.dim());
  index.edge = SubIndex(raw_provider.embedder_id(), raw_provider.dim());
  index.semantic = SubIndex(semantic_provider.embedder_id(), semantic_provider.dim());

  const auto& assets = corpus.manifest().assets;
  const bool has_text = std::any_of(assets.begin(), assets.end(),
                                    [&](const ImageAsset& a) { return !corpus.link_context(a.image_id).empty(); });
  if (has_text && !semantic_provider.supports_text()) {
    throw InvalidArgument("semantic embedder " + semantic_provider.embedder_id() + " cannot embed context text");
  }

  const std::size_t batch = std::max<std::size_t>(1, options.batch_size);
  for (std::size_t start = 0; start < assets.size(); start += batch) {
    const std::size_t end = std::min(assets.size(), start + batch);
    std::vector<ImageTensor> color;
    std::vector<ImageTensor> edges;
    for (std::size_t i = start; i < end; ++i) {
      const auto decoded = decode_image(corpus.asset_bytes(assets[i]));
      color.push_back(preprocess(decoded, options.preprocess_side, false));
      edges.push_back(edge_map(preprocess(decoded, options.preprocess_side, true), options.sigma));
    }
    const auto raw_vecs = embed_images(color, raw_provider, options.retry);
    const auto edge_vecs = embed_images(edges, raw_provider, options.retry);
    const auto sem_vecs = embed_images(color, semantic_provider, options.retry);
    for (std::size_t i = start; i < end; ++i) {
      const auto label = assets[i].label();
      index.raw.add(label, EntryVariant::raw, raw_vecs[i - start]);
      index.edge.add(label, EntryVariant::edge, edge_vecs[i - start]);
      index.semantic.add(label, EntryVariant::semantic_image, sem_vecs[i - start]);
      const auto context = corpus.link_context(assets[i].image_id);
      if (context.empty()) {
        continue;
      }
      std::vector<std::string> texts;
      for (const auto& p : context) {
        texts.push_back(p.text);
      }
      for (const auto& v : embed_texts(texts, semantic_provider, options.retry)) {
        index.semantic.add(label, EntryVariant::semantic_text, v);
      }
    }
  }
  return index;
}

namespace {
constexpr char kIndexMagic[4] = {'P', 'I', 'D', 'X'};
}

std::string serialize_index(const VectorIndex& index) {
  std::ostringstream out(std::ios::binary);
  out.write(kIndexMagic, 4);
  binary::put_le(out, kIndexFileVersion);
  binary::put_string32(out, index.meta.corpus_checksum);
  binary::put_f64(out, index.meta.sigma);
  binary::put_le(out, static_cast<std::uint32_t>(index.meta.preprocess_side));
  for (const SubIndex* sub : {&index.raw, &index.edge, &index.semantic}) {
    binary::put_string32(out, sub->embedder_id());
    binary::put_le(out, static_cast<std::uint32_t>(sub->dim()));
    binary::put_le(out, static_cast<std::uint64_t>(sub->size()));
  }
  for (const SubIndex* sub : {&index.raw, &index.edge, &index.semantic}) {
    write_embedding_block(out, sub->to_block());
  }
  return out.str();
}

void save_index(const VectorIndex& index, const std::filesystem::path& path) {
  write_file_atomic(path.string(), serialize_index(index));
}

VectorIndex load_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw NotFound("cannot open index " + path.string());
  }
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kIndexMagic)) {
    throw Error("not an index file: " + path.string());
  }
  const auto version = binary::get_le<std::uint32_t>(in);
  if (version != kIndexFileVersion) {
    throw Error("unsupported index version " + std::to_string(version));
  }
  VectorIndex index;
  index.meta.corpus_checksum = binary::get_string32(in);
  index.meta.sigma = binary::get_f64(in);
  index.meta.preprocess_side = static_cast<int>(binary::get_le<std::uint32_t>(in));
  struct Header {
    std::string embedder_id;
    std::uint32_t dim;
    std::uint64_t count;
  };
  Header headers[3];
  for (auto& h : headers) {
    h.embedder_id = binary::get_string32(in);
    h.dim = binary::get_le<std::uint32_t>(in);
    h.count = binary::get_le<std::uint64_t>(in);
  }
  SubIndex* subs[3] = {&index.raw, &index.edge, &index.semantic};
  for (int i = 0; i < 3; ++i) {
    const auto block = read_embedding_block(in, headers[i].embedder_id);
    if (block.dim != headers[i].dim || block.size() != headers[i].count) {
      throw Error("index header disagrees with embedding block " + std::to_string(i));
    }
    *subs[i] = SubIndex::from_block(block);
  }
  return index;
}

RetrievalResult retrieve_all(const VectorIndex& index, std::span<const std::uint8_t> query_image,
                             EmbedderProvider& raw_provider, EmbedderProvider& semantic_provider,
                             const RetrievalOptions& options) {
  if (options.k < 1) {
    throw InvalidArgument("k must be at least 1");
  }
  const auto decoded = decode_image(query_image);
  const auto& meta = index.meta;
  const auto k = options.k;

  auto raw = std::async(std::launch::async, [&] {
    return search(index.raw, query_raw_embedding(decoded, meta, raw_provider, options.retry), k, Strategy::raw);
  });
  auto edge = std::async(std::launch::async, [&] {
    return search(index.edge, query_edge_embedding(decoded, meta, raw_provider, options.retry), k, Strategy::edge);
  });
  auto clip = std::async(std::launch::async, [&] {
    return search(index.semantic, query_semantic_embedding(decoded, meta, semantic_provider, options.retry), k,
                  Strategy::clip);
  });

  RetrievalResult result;
  std::exception_ptr first_error;
  auto collect = [&](std::future<std::vector<SearchHit>>& f, std::vector<SearchHit>& into, Strategy s) {
    try {
      into = f.get();
    } catch (const std::exception& e) {
      result.failures.push_back(std::string(to_string(s)) + ": " + e.what());
      if (!first_error) {
        first_error = std::current_exception();
      }
    }
  };
  collect(raw, result.hits_raw, Strategy::raw);
  collect(edge, result.hits_edge, Strategy::edge);
  collect(clip, result.hits_clip, Strategy::clip);
  if (first_error && (!options.allow_degraded || result.failures.size() == 3)) {
    std::rethrow_exception(first_error);
  }
  return result;
}

}  // namespace provenance

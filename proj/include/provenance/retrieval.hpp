#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "provenance/corpus.hpp"
#include "provenance/embedding.hpp"
#include "provenance/label.hpp"

namespace provenance {

enum class Strategy : std::uint8_t { raw = 0, edge = 1, clip = 2 };
const char* to_string(Strategy s);
Strategy strategy_from_string(std::string_view s);

enum class EntryVariant : std::uint8_t { raw = 0, edge = 1, semantic_image = 2, semantic_text = 3 };
const char* to_string(EntryVariant v);

struct SearchHit {
  CandidateLabel label;
  double score = 0.0;
  Strategy strategy = Strategy::raw;

  bool operator==(const SearchHit&) const = default;
};

// Flat store of unit vectors from one embedder. Several entries may share a
// label (an image plus its context paragraphs); search reports each label
// once, at its best score.
class SubIndex {
 public:
  SubIndex() = default;
  SubIndex(std::string embedder_id, std::size_t dim);

  void add(const CandidateLabel& label, EntryVariant variant, const EmbeddingVector& vector);

  const std::string& embedder_id() const { return embedder_id_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  std::size_t label_count() const { return group_labels_.size(); }

  const CandidateLabel& label(std::size_t i) const { return labels_[i]; }
  EntryVariant variant(std::size_t i) const { return variants_[i]; }
  std::span<const float> vector(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }

  EmbeddingBlock to_block() const;
  static SubIndex from_block(const EmbeddingBlock& block);

  bool operator==(const SubIndex& other) const {
    return embedder_id_ == other.embedder_id_ && dim_ == other.dim_ && labels_ == other.labels_ &&
           variants_ == other.variants_ && data_ == other.data_;
  }

 private:
  friend std::vector<SearchHit> search(const SubIndex&, const EmbeddingVector&, std::size_t, Strategy);

  std::string embedder_id_;
  std::size_t dim_ = 0;
  std::vector<CandidateLabel> labels_;
  std::vector<EntryVariant> variants_;
  std::vector<float> data_;
  std::vector<double> norms_;
  std::vector<std::size_t> group_of_;           // entry -> distinct label slot
  std::vector<std::string> group_labels_;       // canonical label strings
  std::vector<std::size_t> group_first_entry_;  // slot -> an entry carrying that label
  std::unordered_map<std::string, std::size_t> group_by_label_;
};

// Exact top-k by cosine: score descending, ties by canonical label ascending.
// Throws MismatchError if the query's embedder or dim differs from the index.
std::vector<SearchHit> search(const SubIndex& index, const EmbeddingVector& query, std::size_t k,
                              Strategy strategy);

struct IndexMetadata {
  std::string corpus_checksum;
  double sigma = 1.0;
  int preprocess_side = kDefaultPreprocessSide;
  // Not persisted: the file must be identical across rebuilds of one corpus.
  std::string built_at;
};

struct VectorIndex {
  IndexMetadata meta;
  SubIndex raw;
  SubIndex edge;
  SubIndex semantic;

  bool empty() const { return raw.empty() && edge.empty() && semantic.empty(); }
};

struct IndexOptions {
  double sigma = 1.0;
  int preprocess_side = kDefaultPreprocessSide;
  RetryPolicy retry;
  std::size_t batch_size = 32;
};

// Raw and edge sub-indexes get one entry per asset; the semantic sub-index
// gets the asset image plus one entry per linked text (caption and
// paragraphs), all carrying the image's label. Any provider failure aborts
// the build.
VectorIndex build_index(const Corpus& corpus, EmbedderProvider& raw_provider, EmbedderProvider& semantic_provider,
                        const IndexOptions& options = {});

inline constexpr std::uint32_t kIndexFileVersion = 1;

// "PIDX" | u32 version | u32 len + corpus checksum | f64 sigma | u32 side
// | 3 x (u32 len + embedder_id | u32 dim | u64 count) | raw, edge, semantic blocks
void save_index(const VectorIndex& index, const std::filesystem::path& path);
VectorIndex load_index(const std::filesystem::path& path);
std::string serialize_index(const VectorIndex& index);

struct RetrievalOptions {
  std::size_t k = 5;
  // When set, a failing strategy is recorded and the remaining ones proceed.
  bool allow_degraded = false;
  RetryPolicy retry;
};

struct RetrievalResult {
  std::vector<SearchHit> hits_raw;
  std::vector<SearchHit> hits_edge;
  std::vector<SearchHit> hits_clip;
  std::vector<std::string> failures;  // "<strategy>: <message>" in degraded mode
};

// Query-side embeddings for the three strategies, in the same spaces the
// index was built with.
EmbeddingVector query_raw_embedding(const ImageTensor& decoded, const IndexMetadata& meta, EmbedderProvider& provider,
                                    const RetryPolicy& retry = {});
EmbeddingVector query_edge_embedding(const ImageTensor& decoded, const IndexMetadata& meta, EmbedderProvider& provider,
                                     const RetryPolicy& retry = {});
EmbeddingVector query_semantic_embedding(const ImageTensor& decoded, const IndexMetadata& meta,
                                         EmbedderProvider& provider, const RetryPolicy& retry = {});

// Runs the three strategies concurrently and joins them in fixed order.
RetrievalResult retrieve_all(const VectorIndex& index, std::span<const std::uint8_t> query_image,
                             EmbedderProvider& raw_provider, EmbedderProvider& semantic_provider,
                             const RetrievalOptions& options = {});

}  // namespace provenance

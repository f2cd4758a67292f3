#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "provenance/label.hpp"
#include "provenance/retrieval.hpp"

namespace provenance {

struct PoolEntry {
  CandidateLabel label;
  std::set<Strategy> strategies;
  // Carried for reporting; the default ordering ignores it.
  std::map<Strategy, double> best_score;

  int multiplicity() const { return static_cast<int>(strategies.size()); }
  double max_score() const;
};

// Existence-based multiset union of the per-strategy hit lists, keyed by
// canonical label string.
struct CandidatePool {
  std::map<std::string, PoolEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

CandidatePool pool(std::span<const SearchHit> hits_raw, std::span<const SearchHit> hits_edge,
                   std::span<const SearchHit> hits_clip);

// Unique labels in ascending canonical-string order.
std::vector<CandidateLabel> dedup_sort(const CandidatePool& pool);

// First min(m, |ordered|) labels. Throws InvalidArgument when m < 1.
std::vector<CandidateLabel> truncate(std::span<const CandidateLabel> ordered, long long m);

enum class CandidateOrdering {
  label,      // default: canonical label order
  consensus,  // extension: multiplicity desc, best score desc, label asc
};
const char* to_string(CandidateOrdering o);
CandidateOrdering ordering_from_string(std::string_view s);

std::vector<CandidateLabel> consensus_sort(const CandidatePool& pool);
std::vector<CandidateLabel> order_candidates(const CandidatePool& pool, CandidateOrdering ordering);

// [{label, strategies:[...], scores:{strategy: score}}] in canonical label order.
nlohmann::json pool_to_json(const CandidatePool& pool);

// Scores in serialized artifacts are rounded to this many decimals so that
// reports stay byte-stable across floating point environments.
double round_score(double score);

}  // namespace provenance

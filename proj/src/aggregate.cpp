#include "provenance/aggregate.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "provenance/errors.hpp"

namespace provenance {

double PoolEntry::max_score() const {
  double best = -1.0;
  for (const auto& [s, score] : best_score) {
    best = std::max(best, score);
  }
  return best;
}

CandidatePool pool(std::span<const SearchHit> hits_raw, std::span<const SearchHit> hits_edge,
                   std::span<const SearchHit> hits_clip) {
  CandidatePool out;
  auto absorb = [&](std::span<const SearchHit> hits, Strategy strategy) {
    for (const auto& hit : hits) {
      auto [it, inserted] = out.entries.try_emplace(hit.label.str());
      auto& entry = it->second;
      if (inserted) {
        entry.label = hit.label;
      }
      entry.strategies.insert(strategy);
      auto [score_it, fresh] = entry.best_score.try_emplace(strategy, hit.score);
      if (!fresh) {
        score_it->second = std::max(score_it->second, hit.score);
      }
    }
  };
  absorb(hits_raw, Strategy::raw);
  absorb(hits_edge, Strategy::edge);
  absorb(hits_clip, Strategy::clip);
  return out;
}

std::vector<CandidateLabel> dedup_sort(const CandidatePool& pool) {
  // std::map keys are already unique and ascending.
  std::vector<CandidateLabel> out;
  out.reserve(pool.entries.size());
  for (const auto& [key, entry] : pool.entries) {
    out.push_back(entry.label);
  }
  return out;
}

std::vector<CandidateLabel> truncate(std::span<const CandidateLabel> ordered, long long m) {
  if (m < 1) {
    throw InvalidArgument("truncation size m must be at least 1, got " + std::to_string(m));
  }
  const auto n = std::min(static_cast<std::size_t>(m), ordered.size());
  return {ordered.begin(), ordered.begin() + static_cast<std::ptrdiff_t>(n)};
}

const char* to_string(CandidateOrdering o) { return o == CandidateOrdering::label ? "label" : "consensus"; }

CandidateOrdering ordering_from_string(std::string_view s) {
  if (s == "label") return CandidateOrdering::label;
  if (s == "consensus") return CandidateOrdering::consensus;
  throw InvalidArgument("unknown candidate ordering " + std::string(s));
}

std::vector<CandidateLabel> consensus_sort(const CandidatePool& pool) {
  std::vector<const PoolEntry*> entries;
  for (const auto& [key, entry] : pool.entries) {
    entries.push_back(&entry);
  }
  std::stable_sort(entries.begin(), entries.end(), [](const PoolEntry* a, const PoolEntry* b) {
    if (a->multiplicity() != b->multiplicity()) {
      return a->multiplicity() > b->multiplicity();
    }
    return a->max_score() > b->max_score();
  });
  std::vector<CandidateLabel> out;
  for (const auto* e : entries) {
    out.push_back(e->label);
  }
  return out;
}

std::vector<CandidateLabel> order_candidates(const CandidatePool& pool, CandidateOrdering ordering) {
  return ordering == CandidateOrdering::label ? dedup_sort(pool) : consensus_sort(pool);
}

double round_score(double score) { return std::round(score * 1e6) / 1e6; }

nlohmann::json pool_to_json(const CandidatePool& pool) {
  auto out = nlohmann::json::array();
  for (const auto& [key, entry] : pool.entries) {
    auto strategies = nlohmann::json::array();
    auto scores = nlohmann::json::object();
    for (const auto s : entry.strategies) {
      strategies.push_back(to_string(s));
      scores[to_string(s)] = round_score(entry.best_score.at(s));
    }
    out.push_back({{"label", key}, {"strategies", strategies}, {"scores", scores}});
  }
  return out;
}

}  // namespace provenance

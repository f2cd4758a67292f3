#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

namespace provenance {

// Q1: quality of the retrieved stylistic parallels.
// Q2: quality of the chronological, geographical and cultural attribution.
enum class Question { Q1, Q2 };
const char* to_string(Question q);
Question question_from_string(std::string_view s);

// Four-level scale: 1 = not meaningful ... 4 = highly meaningful.
struct ExpertScore {
  std::string object_id;
  Question question = Question::Q1;
  std::string rater_id;
  int score = 0;
  std::string timestamp;  // ISO-8601 UTC
  std::string comment;

  bool operator==(const ExpertScore&) const = default;
};

nlohmann::json score_to_json(const ExpertScore& s);
ExpertScore score_from_json(const nlohmann::json& j);

struct ScoreDistribution {
  Question question = Question::Q1;
  std::array<int, 4> counts{};          // index 0 -> score 1
  std::array<double, 4> percentages{};  // exact, unrounded
  double meaningful_share = 0.0;        // percentage with score 2..4
  int total = 0;

  // One decimal, half-up, computed from the integer counts.
  std::string percent_text(int score) const;
  std::string meaningful_text() const;
};

// Empty input yields nullopt: there is no distribution to report.
std::optional<ScoreDistribution> compute_distribution(Question question, std::span<const int> scores);

// count/total as a percentage rounded half-up to one decimal, e.g. "63.2".
std::string format_percent_half_up(long long count, long long total);

nlohmann::json distribution_to_json(const ScoreDistribution& d);
std::string distribution_table(const ScoreDistribution& d);

// Append-only score log (one JSON record per line). The current score for a
// (object, question, rater) key is the last record written for it.
class ScoreBook {
 public:
  using ObjectExists = std::function<bool(const std::string&)>;
  using Clock = std::function<std::string()>;

  // Replays an existing log. `exists` defaults to accepting any object id.
  explicit ScoreBook(std::filesystem::path log_path, ObjectExists exists = {}, Clock clock = {});

  // Fills in a missing timestamp. Throws InvalidArgument for an out-of-range
  // score or missing rater, NotFound for an unknown object.
  ExpertScore record(ExpertScore score);

  std::optional<ScoreDistribution> distribution(Question question) const;
  std::vector<ExpertScore> audit(const std::string& object_id, Question question, const std::string& rater_id) const;
  std::vector<ExpertScore> current() const;
  std::size_t log_size() const;

 private:
  using Key = std::tuple<std::string, Question, std::string>;
  void apply(const ExpertScore& s);

  std::filesystem::path log_path_;
  ObjectExists exists_;
  Clock clock_;
  mutable std::mutex mu_;
  std::vector<ExpertScore> log_;
  std::map<Key, std::size_t> latest_;  // key -> index into log_
};

std::string utc_timestamp();

}  // namespace provenance

#include "provenance/evaluation.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "provenance/errors.hpp"

namespace provenance {

using nlohmann::json;

const char* to_string(Question q) { return q == Question::Q1 ? "Q1" : "Q2"; }

Question question_from_string(std::string_view s) {
  if (s == "Q1" || s == "q1") return Question::Q1;
  if (s == "Q2" || s == "q2") return Question::Q2;
  throw InvalidArgument("question must be Q1 or Q2, got '" + std::string(s) + "'");
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  const auto n = std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm);
  std::snprintf(buf + n, sizeof(buf) - n, ".%03lldZ", static_cast<long long>(ms));
  return buf;
}

json score_to_json(const ExpertScore& s) {
  return {{"object_id", s.object_id}, {"question", to_string(s.question)}, {"rater_id", s.rater_id},
          {"score", s.score},         {"timestamp", s.timestamp},          {"comment", s.comment}};
}

ExpertScore score_from_json(const json& j) {
  ExpertScore s;
  try {
    s.object_id = j.at("object_id").get<std::string>();
    s.question = question_from_string(j.at("question").get<std::string>());
    s.rater_id = j.at("rater_id").get<std::string>();
    s.score = j.at("score").get<int>();
    s.timestamp = j.value("timestamp", std::string());
    s.comment = j.value("comment", std::string());
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed score record: ") + e.what());
  }
  return s;
}

std::string format_percent_half_up(long long count, long long total) {
  if (total <= 0) {
    throw InvalidArgument("percentage of an empty total");
  }
  // tenths = round_half_up(count * 1000 / total)
  const long long tenths = (2 * count * 1000 + total) / (2 * total);
  return std::to_string(tenths / 10) + "." + std::to_string(tenths % 10);
}

std::string ScoreDistribution::percent_text(int score) const {
  if (score < 1 || score > 4) {
    throw InvalidArgument("score must be in 1..4");
  }
  return format_percent_half_up(counts[static_cast<std::size_t>(score - 1)], total);
}

std::string ScoreDistribution::meaningful_text() const {
  return format_percent_half_up(total - counts[0], total);
}

std::optional<ScoreDistribution> compute_distribution(Question question, std::span<const int> scores) {
  if (scores.empty()) {
    return std::nullopt;
  }
  ScoreDistribution d;
  d.question = question;
  for (const int s : scores) {
    if (s < 1 || s > 4) {
      throw InvalidArgument("score out of range: " + std::to_string(s));
    }
    ++d.counts[static_cast<std::size_t>(s - 1)];
  }
  d.total = static_cast<int>(scores.size());
  for (std::size_t i = 0; i < 4; ++i) {
    d.percentages[i] = 100.0 * d.counts[i] / d.total;
  }
  d.meaningful_share = 100.0 * (d.total - d.counts[0]) / d.total;
  return d;
}

json distribution_to_json(const ScoreDistribution& d) {
  json scores = json::array();
  for (int s = 1; s <= 4; ++s) {
    const auto i = static_cast<std::size_t>(s - 1);
    scores.push_back({{"score", s}, {"count", d.counts[i]}, {"percent", d.percentages[i]}, {"percent_text", d.percent_text(s)}});
  }
  return {{"question", to_string(d.question)},
          {"total", d.total},
          {"empty", false},
          {"scores", scores},
          {"meaningful_share", d.meaningful_share},
          {"meaningful_share_text", d.meaningful_text()}};
}

std::string distribution_table(const ScoreDistribution& d) {
  std::ostringstream out;
  out << to_string(d.question) << " (n=" << d.total << ")\n";
  out << "score  count  percent\n";
  for (int s = 1; s <= 4; ++s) {
    char line[64];
    std::snprintf(line, sizeof(line), "%5d  %5d  %6s%%\n", s, d.counts[static_cast<std::size_t>(s - 1)],
                  d.percent_text(s).c_str());
    out << line;
  }
  out << "meaningful (scores 2-4): " << d.meaningful_text() << "%\n";
  return out.str();
}

// ---------------------------------------------------------------------------

ScoreBook::ScoreBook(std::filesystem::path log_path, ObjectExists exists, Clock clock)
    : log_path_(std::move(log_path)), exists_(std::move(exists)), clock_(std::move(clock)) {
  if (!clock_) {
    clock_ = utc_timestamp;
  }
  std::ifstream in(log_path_);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    try {
      apply(score_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw Error("score log " + log_path_.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void ScoreBook::apply(const ExpertScore& s) {
  latest_[{s.object_id, s.question, s.rater_id}] = log_.size();
  log_.push_back(s);
}

ExpertScore ScoreBook::record(ExpertScore score) {
  if (score.score < 1 || score.score > 4) {
    throw InvalidArgument("score must be between 1 and 4, got " + std::to_string(score.score));
  }
  if (score.rater_id.empty()) {
    throw InvalidArgument("rater_id is required");
  }
  if (score.object_id.empty() || (exists_ && !exists_(score.object_id))) {
    throw NotFound("unknown object '" + score.object_id + "'");
  }
  if (score.timestamp.empty()) {
    score.timestamp = clock_();
  }
  std::lock_guard lock(mu_);
  if (log_path_.has_parent_path()) {
    std::filesystem::create_directories(log_path_.parent_path());
  }
  std::ofstream out(log_path_, std::ios::app);
  out << score_to_json(score).dump() << '\n';
  out.flush();
  if (!out) {
    throw Error("cannot append to score log " + log_path_.string());
  }
  apply(score);
  return score;
}

std::optional<ScoreDistribution> ScoreBook::distribution(Question question) const {
  std::vector<int> scores;
  {
    std::lock_guard lock(mu_);
    for (const auto& [key, index] : latest_) {
      if (std::get<1>(key) == question) {
        scores.push_back(log_[index].score);
      }
    }
  }
  return compute_distribution(question, scores);
}

std::vector<ExpertScore> ScoreBook::audit(const std::string& object_id, Question question,
                                          const std::string& rater_id) const {
  std::lock_guard lock(mu_);
  std::vector<ExpertScore> out;
  for (const auto& s : log_) {
    if (s.object_id == object_id && s.question == question && s.rater_id == rater_id) {
      out.push_back(s);
    }
  }
  return out;
}

std::vector<ExpertScore> ScoreBook::current() const {
  std::lock_guard lock(mu_);
  std::vector<ExpertScore> out;
  for (const auto& [key, index] : latest_) {
    out.push_back(log_[index]);
  }
  return out;
}

std::size_t ScoreBook::log_size() const {
  std::lock_guard lock(mu_);
  return log_.size();
}

}  // namespace provenance

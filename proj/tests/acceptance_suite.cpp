// Acceptance criteria as a standalone program: one PASS/FAIL line each,
// nonzero exit when any criterion fails. Uses only the stub embedder and the
// mock VLM, so it runs without network access.

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "oracles.hpp"
#include "provenance/aggregate.hpp"
#include "provenance/evaluation.hpp"
#include "provenance/gaussian.hpp"
#include "provenance/inference.hpp"
#include "provenance/retrieval.hpp"
#include "provenance/service.hpp"
#include "test_support.hpp"

using namespace provenance;
using namespace provenance::fixtures;
using nlohmann::json;

namespace {

// Collects the first few violations of one criterion.
class Check {
 public:
  void require(bool ok, const std::string& what) {
    if (!ok) {
      ++failures_;
      if (notes_.size() < 5) notes_.push_back(what);
    }
  }
  void note(const std::string& info) { info_.push_back(info); }
  bool passed() const { return failures_ == 0; }
  std::string summary() const {
    std::ostringstream out;
    const auto& lines = passed() ? info_ : notes_;
    for (std::size_t i = 0; i < lines.size(); ++i) out << (i ? "; " : "") << lines[i];
    if (failures_ > notes_.size()) out << "; ... " << failures_ << " violations";
    return out.str();
  }

 private:
  std::size_t failures_ = 0;
  std::vector<std::string> notes_;
  std::vector<std::string> info_;
};

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(10);
  out << v;
  return out.str();
}

// ---------------------------------------------------------------------------

void retrieval_oracle(Check& c) {
  std::mt19937 rng(20240611);
  const auto start = std::chrono::steady_clock::now();
  std::size_t corpora = 0;
  std::size_t queries = 0;
  std::size_t largest = 0;
  for (; corpora < 120; ++corpora) {
    const auto corpus = random_stub_corpus(rng, 1000, 8);
    largest = std::max(largest, corpus.index.size());
    for (const auto& q : corpus.queries) {
      for (std::size_t k : {std::size_t{1}, std::size_t{5}, 1 + rng() % 40, corpus.index.size() + 3}) {
        const auto ours = search(corpus.index, q, k, Strategy::raw);
        const auto oracle = brute_force_search(corpus.index, q, k, Strategy::raw);
        c.require(ours == oracle, "corpus " + std::to_string(corpora) + " k=" + std::to_string(k) + " differs");
      }
      ++queries;
    }
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  c.require(seconds < 60.0, "took " + fmt(seconds) + " s");
  c.note(std::to_string(corpora) + " corpora (largest " + std::to_string(largest) + " entries), " +
         std::to_string(queries) + " queries, " + fmt(seconds) + " s");
}

void gaussian_kernel_properties(Check& c) {
  std::mt19937 rng(99);
  std::uniform_real_distribution<double> sigma(0.05, 5.0);
  double worst_sum = 0.0;
  double worst_ratio = 0.0;
  const int trials = 500;
  for (int t = 0; t < trials; ++t) {
    const double s = sigma(rng);
    const int r = min_kernel_radius(s) + static_cast<int>(rng() % 4);
    const auto k = gaussian_kernel(s, r);
    double sum = 0.0;
    for (double w : k.weights) sum += w;
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) {
        c.require(k.at(dx, dy) == k.at(-dx, -dy) && k.at(dx, dy) == k.at(dy, dx),
                  "asymmetric kernel for sigma " + fmt(s));
      }
    }
    worst_ratio = std::max(worst_ratio, std::abs(k.at(1, 0) / k.at(0, 0) - std::exp(-1.0 / (2.0 * s * s))));
  }
  c.require(worst_sum <= 1e-9, "weight sum off by " + fmt(worst_sum));
  c.require(worst_ratio <= 1e-9, "neighbour ratio off by " + fmt(worst_ratio));
  c.note(std::to_string(trials) + " kernels, max |sum-1| " + fmt(worst_sum) + ", max ratio error " + fmt(worst_ratio));
}

void edge_map_properties(Check& c) {
  for (double level : {0.0, 0.25, 0.5, 1.0}) {
    for (auto mode : {Convolution::separable, Convolution::direct}) {
      const auto e = edge_map(ImageTensor(40, 30, 1, level), 1.0, mode);
      bool zero = true;
      for (double v : e.values) zero = zero && v == 0.0;
      c.require(zero, "constant image " + fmt(level) + " gives a nonzero map");
    }
  }
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    ImageTensor img(17 + static_cast<int>(rng() % 40), 17 + static_cast<int>(rng() % 40), 1);
    for (auto& v : img.values) v = u(rng);
    const double s = 0.3 + 2.5 * u(rng);
    const auto a = edge_map(img, s, Convolution::separable);
    const auto b = edge_map(img, s, Convolution::direct);
    for (std::size_t i = 0; i < a.values.size(); ++i) worst = std::max(worst, std::abs(a.values[i] - b.values[i]));
  }
  c.require(worst <= 1e-9, "separable vs direct differ by " + fmt(worst));
  c.note("constant maps all zero, separable vs direct max diff " + fmt(worst));
}

void aggregation(Check& c) {
  const CandidateLabel a{"a", 1, "x"};
  const CandidateLabel b{"b", 1, "x"};
  const CandidateLabel cc{"c", 1, "x"};
  const std::vector<SearchHit> A{{b, 0.9, Strategy::raw}, {cc, 0.8, Strategy::raw}};
  const std::vector<SearchHit> B{{a, 0.7, Strategy::edge}, {cc, 0.6, Strategy::edge}};
  const std::vector<SearchHit> C{{cc, 0.5, Strategy::clip}};
  const auto p = pool(A, B, C);
  c.require(p.size() == 3, "pool size " + std::to_string(p.size()));
  c.require(p.entries.at(a.str()).multiplicity() == 1, "multiplicity of a");
  c.require(p.entries.at(b.str()).multiplicity() == 1, "multiplicity of b");
  c.require(p.entries.at(cc.str()).multiplicity() == 3, "multiplicity of c");
  const auto t = dedup_sort(p);
  c.require(t == std::vector<CandidateLabel>{a, b, cc}, "T is not (a,b,c)");
  c.require(truncate(t, 2) == std::vector<CandidateLabel>{a, b}, "truncate(T,2) is not (a,b)");

  std::mt19937 rng(17);
  const int trials = 1000;
  for (int trial = 0; trial < trials; ++trial) {
    std::vector<CandidateLabel> universe;
    for (std::size_t i = 0, n = 1 + rng() % 25; i < n; ++i) {
      universe.push_back({"d" + std::to_string(rng() % 5), static_cast<int>(1 + rng() % 200), "i" + std::to_string(i)});
    }
    std::vector<SearchHit> lists[3];
    for (int s = 0; s < 3; ++s) {
      for (std::size_t i = 0, n = rng() % 15; i < n; ++i) {
        lists[s].push_back({universe[rng() % universe.size()], static_cast<double>(rng() % 100) / 100.0,
                            static_cast<Strategy>(s)});
      }
    }
    const auto rp = pool(lists[0], lists[1], lists[2]);
    for (const auto& [key, e] : rp.entries) {
      c.require(e.multiplicity() >= 1 && e.multiplicity() <= 3, "multiplicity out of bounds for " + key);
    }
    const auto rt = dedup_sort(rp);
    std::vector<SearchHit> again;
    for (const auto& l : rt) again.push_back({l, 0.0, Strategy::raw});
    c.require(dedup_sort(pool(again, {}, {})) == rt, "dedup_sort is not idempotent");
    c.require(std::is_sorted(rt.begin(), rt.end()) && std::adjacent_find(rt.begin(), rt.end()) == rt.end(),
              "dedup_sort output not strictly ascending");
    for (long long m = 1; m <= static_cast<long long>(rt.size()) + 1; ++m) {
      const auto cut = truncate(rt, m);
      c.require(cut.size() == std::min<std::size_t>(static_cast<std::size_t>(m), rt.size()) &&
                    std::equal(cut.begin(), cut.end(), rt.begin()),
                "truncate is not a prefix");
    }
  }
  c.note("hand example holds; " + std::to_string(trials) + " random hit-list triples");
}

// ---------------------------------------------------------------------------
// Pipeline criteria share one prepared fixture service.

struct Fixture {
  TempDir dir;
  ServiceConfig config;
  std::vector<std::uint8_t> query;
  Fixture() : config(prepare_fixture_service(dir.path())), query(read_bytes(golden_query())) {}
};

std::string interpretation_reply(const CandidateLabel& label, const std::string& doc, int page) {
  return json{{"label", label.str()},
              {"excavation_site", "site"},
              {"cultural_period", "period"},
              {"similarity_rationale", "rationale"},
              {"reference", {{"doc_id", doc}, {"page_no", page}}}}
      .dump();
}

std::string synthesis_reply(const std::string& doc, int page) {
  return json{{"site", "s"}, {"period", "p"}, {"best_reference", {{"doc_id", doc}, {"page_no", page}}},
              {"justification", "j"}}
      .dump();
}

bool is_interpret(const VlmRequest& r) { return r.purpose.rfind("interpret:", 0) == 0; }

CandidateLabel purpose_label(const VlmRequest& r) { return CandidateLabel::parse(r.purpose.substr(10)); }

struct ScriptedRun {
  std::optional<AttributionReport> report;
  std::string error;
  Transcript transcript;
};

void run_scripted(const Fixture& f, MockVlmClient::Responder responder, const AnalysisParams& params, ScriptedRun& out) {
  const auto corpus = Corpus::open(f.config.data_dir);
  const auto index = load_index(f.config.index_path);
  StubEmbedder raw;
  StubEmbedder semantic;
  MockVlmClient client;
  client.set_responder(std::move(responder));
  const auto prompts = PromptSet::builtin();
  InferenceOptions options;
  options.transport_retry = {1, {}};
  PipelineResources res{corpus, index, raw, semantic, client, prompts, options, {1, {}}};
  try {
    out.report = run_analysis(f.query, params, res, out.transcript);
  } catch (const std::exception& e) {
    out.error = e.what();
  }
}

std::optional<std::string> honest(const VlmRequest& r) {
  if (is_interpret(r)) {
    const auto l = purpose_label(r);
    return interpretation_reply(l, l.doc_id, l.page_no);
  }
  const auto at = r.prompt.find("{\"cultural_period\"");
  const auto first = json::parse(r.prompt.substr(at, r.prompt.find('\n', at) - at));
  return synthesis_reply(first["reference"]["doc_id"], first["reference"]["page_no"]);
}

void end_to_end_determinism(Check& c, const Fixture& f) {
  const auto corpus = Corpus::open(f.config.data_dir);
  c.require(corpus.manifest().assets.size() == 10, "fixture corpus has " +
                                                       std::to_string(corpus.manifest().assets.size()) + " assets");
  std::vector<std::string> reports;
  for (int run = 0; run < 3; ++run) {
    Pipeline pipeline(f.config);
    Transcript transcript;
    reports.push_back(serialize_report(pipeline.analyze(f.query, f.config.default_params(), transcript)));
  }
  c.require(reports[0] == reports[1] && reports[1] == reports[2], "reports differ across runs");
  c.require(reports[0] == golden_report(), "report differs from the committed golden report");

  const auto doc = json::parse(reports[0]);
  std::size_t cited = 0;
  auto check_ref = [&](const json& ref) {
    ++cited;
    c.require(corpus.validate_reference(ref["doc_id"].get<std::string>(), ref["page_no"].get<int>()),
              "invalid citation " + ref.dump());
  };
  check_ref(doc["best_reference"]);
  for (const auto& p : doc["cited_pages"]) check_ref(p);
  for (const auto& i : doc["interpretations"]) check_ref(i["reference"]);
  c.note("3 runs byte-identical to golden (" + std::to_string(reports[0].size()) + " bytes), " +
         std::to_string(cited) + " citations validated");
}

void citation_guard(Check& c, const Fixture& f) {
  // Phase 1: one candidate cites page 999 of a 120-page catalogue.
  ScriptedRun phase1;
  run_scripted(
      f,
      [](const VlmRequest& r) -> std::optional<std::string> {
        if (is_interpret(r) && purpose_label(r).image_id == "wz-ding-01") {
          return interpretation_reply(purpose_label(r), "bronzes-wz", 999);
        }
        return honest(r);
      },
      AnalysisParams{}, phase1);
  c.require(phase1.report.has_value(), "phase 1 run failed: " + phase1.error);
  bool cited_in_transcript = false;
  for (const auto& e : phase1.transcript.entries()) {
    if (e.purpose == "interpret:bronzes-wz:0012:wz-ding-01" && e.response.find("999") != std::string::npos) {
      cited_in_transcript = true;
    }
    if (e.purpose == "synthesize") {
      c.require(e.prompt.find("\"page_no\":999") == std::string::npos, "invalid citation forwarded to phase 2");
    }
  }
  c.require(cited_in_transcript, "transcript does not show the out-of-range citation");
  if (phase1.report) {
    const auto& r = *phase1.report;
    c.require(r.excluded.size() == 1 && r.excluded[0].label.image_id == "wz-ding-01" &&
                  r.excluded[0].reason == "citation_invalid",
              "out-of-range candidate not excluded");
    for (const auto& i : r.interpretations) c.require(i.reference.page_no != 999, "page 999 in interpretations");
    for (const auto& p : r.cited_pages) c.require(p.reference.page_no != 999, "page 999 in cited pages");
    c.require(r.best_reference.page_no != 999, "page 999 as best reference");
  }

  // Phase 2: the synthesis keeps citing a page outside the allowed set.
  ScriptedRun phase2;
  run_scripted(
      f,
      [](const VlmRequest& r) -> std::optional<std::string> {
        if (r.purpose == "synthesize") return synthesis_reply("bronzes-wz", 999);
        return honest(r);
      },
      AnalysisParams{}, phase2);
  c.require(!phase2.report.has_value(), "phase 2 produced a report citing page 999");
  c.require(phase2.error.rfind("synthesis:", 0) == 0, "phase 2 failure not attributed to synthesis: " + phase2.error);
  std::vector<int> attempts;
  for (const auto& e : phase2.transcript.entries()) {
    if (e.purpose == "synthesize") {
      attempts.push_back(e.attempt);
      if (e.attempt == 2) {
        c.require(e.prompt.find("not one of the listed references") != std::string::npos,
                  "second synthesis prompt is not corrective");
      }
    }
  }
  c.require(attempts == std::vector<int>{1, 2}, "expected exactly one corrective synthesis retry");

  // Phase 2: a corrected second answer is accepted.
  ScriptedRun recovered;
  run_scripted(
      f,
      [](const VlmRequest& r) -> std::optional<std::string> {
        if (r.purpose == "synthesize" && r.attempt == 1) return synthesis_reply("bronzes-wz", 999);
        return honest(r);
      },
      AnalysisParams{}, recovered);
  c.require(recovered.report && recovered.report->best_reference.page_no != 999, "corrected synthesis rejected");
  c.note("phase 1 exclusion, phase 2 retry-then-fail and retry-then-accept verified from transcripts");
}

void evaluation_arithmetic(Check& c) {
  // Published Q1 statements: about 63% meaningful (scores 2-4); score 2 30.6%,
  // score 3 17.7%, score 4 14.9%.
  const double published_score2 = 30.6;
  const double published_score3 = 17.7;
  const double published_score4 = 14.9;
  const double published_meaningful_approx = 63.0;

  std::vector<int> scores;
  for (auto [value, count] : std::vector<std::pair<int, int>>{{1, 368}, {2, 306}, {3, 177}, {4, 149}}) {
    scores.insert(scores.end(), static_cast<std::size_t>(count), value);
  }
  std::shuffle(scores.begin(), scores.end(), std::mt19937(8));
  const auto d = compute_distribution(Question::Q1, scores);
  c.require(d.has_value(), "no distribution");
  if (!d) return;
  c.require(std::abs(d->percentages[1] - published_score2) <= 0.05, "score 2: " + fmt(d->percentages[1]));
  c.require(std::abs(d->percentages[2] - published_score3) <= 0.05, "score 3: " + fmt(d->percentages[2]));
  c.require(std::abs(d->percentages[3] - published_score4) <= 0.05, "score 4: " + fmt(d->percentages[3]));
  const double expected_meaningful = published_score2 + published_score3 + published_score4;
  c.require(std::abs(d->meaningful_share - expected_meaningful) <= 0.05, "meaningful: " + fmt(d->meaningful_share));
  c.require(std::abs(d->meaningful_share - published_meaningful_approx) < 0.5,
            "meaningful share not approximately 63%: " + fmt(d->meaningful_share));
  c.require(d->meaningful_text() == "63.2", "meaningful text " + d->meaningful_text());
  c.note("scores 2/3/4 = " + d->percent_text(2) + "/" + d->percent_text(3) + "/" + d->percent_text(4) +
         "%, meaningful " + d->meaningful_text() + "%");
}

void phase1_fan_out(Check& c, const Fixture& f) {
  AnalysisParams params;
  params.m = 3;
  ScriptedRun run;
  run_scripted(f, honest, params, run);
  c.require(run.report.has_value(), "analysis failed: " + run.error);
  if (!run.report) return;
  const auto pooled = run.report->trace.pool.size();
  c.require(pooled >= 3, "only " + std::to_string(pooled) + " pooled candidates");
  const auto calls = run.transcript.count_with_prefix("interpret:");
  c.require(calls == 3, std::to_string(calls) + " interpretation calls");
  std::set<std::string> purposes;
  for (const auto& e : run.transcript.entries()) {
    if (is_interpret(VlmRequest{e.purpose, e.attempt, "", {}})) purposes.insert(e.purpose);
  }
  c.require(purposes.size() == 3, "interpretation calls are not for 3 distinct candidates");
  c.note(std::to_string(pooled) + " pooled candidates, " + std::to_string(calls) + " interpretation calls");
}

}  // namespace

int main() {
  std::unique_ptr<Fixture> fixture;
  std::string fixture_error;
  try {
    fixture = std::make_unique<Fixture>();
  } catch (const std::exception& e) {
    fixture_error = e.what();
  }

  const std::vector<std::pair<std::string, std::function<void(Check&)>>> criteria{
      {"retrieval oracle equivalence", retrieval_oracle},
      {"gaussian kernel properties", gaussian_kernel_properties},
      {"edge map properties", edge_map_properties},
      {"aggregation example and properties", aggregation},
      {"end-to-end determinism", [&](Check& c) { end_to_end_determinism(c, *fixture); }},
      {"citation guard", [&](Check& c) { citation_guard(c, *fixture); }},
      {"evaluation arithmetic", evaluation_arithmetic},
      {"phase-1 fan-out", [&](Check& c) { phase1_fan_out(c, *fixture); }},
  };

  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Check check;
    const bool needs_fixture = name == "end-to-end determinism" || name == "citation guard" || name == "phase-1 fan-out";
    try {
      if (needs_fixture && !fixture) {
        check.require(false, "fixture setup failed: " + fixture_error);
      } else {
        run(check);
      }
    } catch (const std::exception& e) {
      check.require(false, std::string("exception: ") + e.what());
    }
    failed += !check.passed();
    std::cout << (check.passed() ? "PASS " : "FAIL ") << name << ": " << check.summary() << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}

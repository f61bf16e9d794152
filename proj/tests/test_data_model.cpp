#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "ehrjoint/data_model.hpp"
#include "ehrjoint/errors.hpp"
#include "ehrjoint/rng.hpp"

using namespace ehrjoint;

namespace {

PanelDataset three_subjects() {
  PanelDataset d;
  d.covariate_names = {"A", "Z"};
  d.baselines.push_back({"s1", 10.0, {1.0, 0.3}});
  d.baselines.push_back({"s2", 8.0, {0.0, -1.2}});
  d.baselines.push_back({"s3", 12.0, {1.0, 2.0}});
  d.events.push_back({0, 2.0, true, 1.5});
  d.events.push_back({0, 5.0, false, std::nullopt});
  d.events.push_back({1, 3.5, true, -0.7});
  // s3 has zero events on purpose
  d.finalize();
  return d;
}

std::set<std::string> codes(const ValidationReport& rep) {
  std::set<std::string> out;
  for (const auto& v : rep.violations) out.insert(v.code);
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool datasets_equal(const PanelDataset& a, const PanelDataset& b) {
  if (a.covariate_names != b.covariate_names) return false;
  if (a.n_subjects() != b.n_subjects() || a.events.size() != b.events.size()) return false;
  for (std::size_t i = 0; i < a.n_subjects(); ++i) {
    if (a.baselines[i].subject_id != b.baselines[i].subject_id) return false;
    if (a.baselines[i].censoring_time != b.baselines[i].censoring_time) return false;
    if (a.baselines[i].covariates != b.baselines[i].covariates) return false;
  }
  for (std::size_t e = 0; e < a.events.size(); ++e) {
    if (a.events[e].subject != b.events[e].subject) return false;
    if (a.events[e].time != b.events[e].time) return false;
    if (a.events[e].recorded != b.events[e].recorded) return false;
    if (a.events[e].outcome != b.events[e].outcome) return false;
  }
  return true;
}

// Random valid dataset for the round-trip property; values include awkward
// decimals to stress shortest-roundtrip formatting.
PanelDataset random_dataset(std::uint64_t seed) {
  Stream s(seed);
  PanelDataset d;
  d.covariate_names = {"A", "Z"};
  const int n = 2 + s.uniform_int(6);
  for (int i = 0; i < n; ++i) {
    SubjectBaseline b;
    b.subject_id = "id" + std::to_string(i);
    b.censoring_time = 1.0 + 20.0 * s.uniform01();
    b.covariates = {s.bernoulli(0.5) ? 1.0 : 0.0, s.normal()};
    d.baselines.push_back(b);
    double t = 0.0;
    const int k = s.uniform_int(5);
    for (int j = 0; j < k; ++j) {
      t += 0.05 + s.uniform01();
      if (t > b.censoring_time) break;
      VisitEvent e;
      e.subject = i;
      e.time = t;
      e.recorded = s.bernoulli(0.7);
      if (e.recorded) e.outcome = s.normal(0.0, 3.0);
      d.events.push_back(e);
    }
  }
  d.finalize();
  return d;
}

}  // namespace

TEST_CASE("well-formed dataset passes validation") {
  const PanelDataset d = three_subjects();
  CHECK(validate(d).pass());
  CHECK_NOTHROW(require_valid(d));
}

TEST_CASE("finalize computes tau and per-subject event ranges") {
  const PanelDataset d = three_subjects();
  CHECK(d.tau == 12.0);
  REQUIRE(d.event_begin.size() == 4);
  CHECK(d.event_begin[0] == 0);
  CHECK(d.event_begin[1] == 2);
  CHECK(d.event_begin[2] == 3);
  CHECK(d.event_begin[3] == 3);  // zero-visit subject keeps an empty range
}

TEST_CASE("visit and recorded counts") {
  const PanelDataset d = three_subjects();
  const auto n = d.visit_counts();
  const auto o = d.recorded_counts();
  CHECK(n == std::vector<double>{2.0, 1.0, 0.0});
  CHECK(o == std::vector<double>{1.0, 1.0, 0.0});
  for (std::size_t i = 0; i < d.n_subjects(); ++i) CHECK(o[i] <= n[i]);
}

TEST_CASE("covariate_index resolves names") {
  const PanelDataset d = three_subjects();
  CHECK(d.covariate_index("A") == 0);
  CHECK(d.covariate_index("Z") == 1);
  CHECK(d.covariate_index("nope") == -1);
}

TEST_CASE("each invariant violation has a triggering fixture") {
  PanelDataset d = three_subjects();
  d.events[0].outcome.reset();  // recorded=1 without outcome
  CHECK(codes(validate(d)).count("outcome-missing-at-recorded-visit") == 1);

  d = three_subjects();
  d.events[1].outcome = 3.0;  // recorded=0 with outcome
  CHECK(codes(validate(d)).count("outcome-present-at-unrecorded-visit") == 1);

  d = three_subjects();
  d.events[2].time = 8.5;  // beyond s2's censoring at 8
  CHECK(codes(validate(d)).count("event-after-censoring") == 1);

  d = three_subjects();
  d.events[2].subject = 9;
  CHECK(codes(validate(d)).count("unknown-subject") == 1);

  d = three_subjects();
  d.baselines[1].subject_id = "s1";
  CHECK(codes(validate(d)).count("duplicate-subject-id") == 1);

  d = three_subjects();
  d.baselines[0].censoring_time = 0.0;
  CHECK(codes(validate(d)).count("censoring-before-origin") == 1);

  d = three_subjects();
  d.events[1].time = d.events[0].time;  // two events at one instant
  CHECK(codes(validate(d)).count("simultaneous-visits") == 1);

  d = three_subjects();
  std::swap(d.events[0].time, d.events[1].time);
  CHECK(codes(validate(d)).count("events-out-of-order") == 1);

  d = three_subjects();
  d.baselines[0].covariates = {1.0};
  CHECK(codes(validate(d)).count("covariate-set-mismatch") == 1);

  // validate is total: it reports every violation instead of aborting early
  d = three_subjects();
  d.events[0].outcome.reset();
  d.events[2].time = 8.5;
  const auto got = codes(validate(d));
  CHECK(got.count("outcome-missing-at-recorded-visit") == 1);
  CHECK(got.count("event-after-censoring") == 1);
}

TEST_CASE("require_valid throws Validation listing codes") {
  PanelDataset d = three_subjects();
  d.events[0].outcome.reset();
  CHECK_THROWS_AS(require_valid(d), Validation);
  try {
    require_valid(d);
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::Validation);
    CHECK(std::string(err.what()).find("outcome-missing-at-recorded-visit") != std::string::npos);
  }
}

TEST_CASE("csv round-trip is exact and byte-stable") {
  const PanelDataset d = three_subjects();
  const std::string b1 = "rt_base1.csv", e1 = "rt_ev1.csv";
  const std::string b2 = "rt_base2.csv", e2 = "rt_ev2.csv";
  export_csv(d, b1, e1);
  const PanelDataset back = ingest_csv(b1, e1);
  CHECK(datasets_equal(d, back));

  export_csv(back, b2, e2);
  CHECK(slurp(b1) == slurp(b2));
  CHECK(slurp(e1) == slurp(e2));

  // unrecorded visit serializes with an empty outcome cell
  const std::string ev = slurp(e1);
  CHECK(ev.find("s1,5,0,\n") != std::string::npos);
  for (const auto& p : {b1, e1, b2, e2}) std::remove(p.c_str());
}

TEST_CASE("round-trip property over random datasets") {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    const PanelDataset d = random_dataset(seed);
    REQUIRE(validate(d).pass());
    const std::string bp = "rt_prop_b.csv", ep = "rt_prop_e.csv";
    export_csv(d, bp, ep);
    const PanelDataset back = ingest_csv(bp, ep);
    CHECK(datasets_equal(d, back));
    std::remove(bp.c_str());
    std::remove(ep.c_str());
  }
}

TEST_CASE("empty events file yields zero-event dataset") {
  const PanelDataset d = three_subjects();
  const std::string bp = "empty_b.csv", ep = "empty_e.csv";
  export_csv(d, bp, ep);
  std::ofstream(ep, std::ios::trunc) << "subject_id,time,recorded,outcome\n";
  const PanelDataset back = ingest_csv(bp, ep);
  CHECK(back.n_subjects() == 3);
  CHECK(back.events.empty());
  CHECK(validate(back).pass());
  std::remove(bp.c_str());
  std::remove(ep.c_str());
}

TEST_CASE("ingest rejects unknown subject ids") {
  const PanelDataset d = three_subjects();
  const std::string bp = "unk_b.csv", ep = "unk_e.csv";
  export_csv(d, bp, ep);
  std::ofstream(ep, std::ios::app) << "ghost,1.0,1,0.5\n";
  CHECK_THROWS_AS(ingest_csv(bp, ep), Validation);
  std::remove(bp.c_str());
  std::remove(ep.c_str());
}

TEST_CASE("ingest reports parse errors with line numbers") {
  const std::string bp = "bad_b.csv", ep = "bad_e.csv";
  std::ofstream(bp) << "subject_id,censoring_time,A,Z\ns1,10,1,0\n";
  std::ofstream(ep) << "subject_id,time,recorded,outcome\ns1,notanumber,1,0.5\n";
  try {
    ingest_csv(bp, ep);
    FAIL("expected Validation");
  } catch (const Validation& err) {
    CHECK(std::string(err.what()).find(":2:") != std::string::npos);
  }
  std::remove(bp.c_str());
  std::remove(ep.c_str());
}

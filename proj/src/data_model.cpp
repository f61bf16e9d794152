#include "ehrjoint/data_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "ehrjoint/errors.hpp"

namespace ehrjoint {

int PanelDataset::covariate_index(const std::string& name) const {
  for (std::size_t k = 0; k < covariate_names.size(); ++k)
    if (covariate_names[k] == name) return static_cast<int>(k);
  return -1;
}

void PanelDataset::finalize() {
  tau = 0.0;
  for (const auto& b : baselines) tau = std::max(tau, b.censoring_time);
  event_begin.assign(baselines.size() + 1, 0);
  for (const auto& e : events)
    if (e.subject >= 0 && e.subject + 1 < static_cast<int>(event_begin.size()))
      event_begin[static_cast<std::size_t>(e.subject) + 1]++;
  for (std::size_t i = 1; i < event_begin.size(); ++i) event_begin[i] += event_begin[i - 1];
}

std::vector<double> PanelDataset::visit_counts() const {
  std::vector<double> n(n_subjects(), 0.0);
  for (const auto& e : events) n[static_cast<std::size_t>(e.subject)] += 1.0;
  return n;
}

std::vector<double> PanelDataset::recorded_counts() const {
  std::vector<double> o(n_subjects(), 0.0);
  for (const auto& e : events)
    if (e.recorded) o[static_cast<std::size_t>(e.subject)] += 1.0;
  return o;
}

ValidationReport validate(const PanelDataset& d) {
  ValidationReport rep;
  auto add = [&rep](const std::string& code, const std::string& sid, const std::string& detail) {
    rep.violations.push_back({code, sid, detail});
  };
  std::unordered_set<std::string> seen_ids;
  for (const auto& b : d.baselines) {
    if (!seen_ids.insert(b.subject_id).second)
      add("duplicate-subject-id", b.subject_id, "subject id appears twice in baselines");
    if (!(b.censoring_time > d.study_origin))
      add("censoring-before-origin", b.subject_id, "censoring_time must exceed study_origin");
    if (b.covariates.size() != d.covariate_names.size())
      add("covariate-set-mismatch", b.subject_id, "covariate count differs from header");
    for (double v : b.covariates)
      if (!std::isfinite(v)) add("nonfinite-covariate", b.subject_id, "covariate value not finite");
    if (b.censoring_time > d.tau) add("tau-too-small", b.subject_id, "tau below a censoring time");
  }
  int prev_subject = -1;
  double prev_time = 0.0;
  for (const auto& e : d.events) {
    const bool known = e.subject >= 0 && e.subject < static_cast<int>(d.baselines.size());
    const std::string sid = known ? d.baselines[static_cast<std::size_t>(e.subject)].subject_id
                                  : std::string("<unknown>");
    if (!known) {
      add("unknown-subject", sid, "event references a subject not in baselines");
      continue;
    }
    const auto& b = d.baselines[static_cast<std::size_t>(e.subject)];
    if (!(e.time > d.study_origin))
      add("event-at-or-before-origin", sid, "event time must exceed study_origin");
    if (e.time > b.censoring_time) add("event-after-censoring", sid, "event beyond censoring_time");
    if (e.time > d.tau) add("event-after-tau", sid, "event beyond tau");
    if (e.recorded && !e.outcome.has_value())
      add("outcome-missing-at-recorded-visit", sid, "recorded=1 requires an outcome");
    if (!e.recorded && e.outcome.has_value())
      add("outcome-present-at-unrecorded-visit", sid, "recorded=0 forbids an outcome");
    if (e.outcome.has_value() && !std::isfinite(*e.outcome))
      add("nonfinite-outcome", sid, "outcome not finite");
    if (e.subject == prev_subject) {
      if (e.time == prev_time) add("simultaneous-visits", sid, "two events at one timestamp");
      if (e.time < prev_time) add("events-out-of-order", sid, "event times must increase");
    } else if (e.subject < prev_subject) {
      add("events-not-grouped", sid, "events must be grouped by subject");
    }
    prev_subject = e.subject;
    prev_time = e.time;
  }
  return rep;
}

void require_valid(const PanelDataset& d) {
  ValidationReport rep = validate(d);
  if (rep.pass()) return;
  std::ostringstream msg;
  msg << "dataset invalid:";
  for (const auto& v : rep.violations)
    msg << " [" << v.code << " subject=" << v.subject_id << "]";
  throw Validation(msg.str());
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

double parse_double(const std::string& s, const std::string& file, std::size_t lineno) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) {
    std::ostringstream msg;
    msg << file << ":" << lineno << ": cannot parse number '" << s << "'";
    throw Validation(msg.str());
  }
  return v;
}

// Shortest round-trip decimal representation; keeps exports byte-exact.
std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string read_line_strip(std::istream& in, bool& ok) {
  std::string line;
  ok = static_cast<bool>(std::getline(in, line));
  if (ok && !line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

PanelDataset ingest_csv(const std::string& baselines_path, const std::string& events_path) {
  std::ifstream bf(baselines_path);
  if (!bf) throw Validation("cannot open " + baselines_path);
  PanelDataset d;
  bool ok = false;
  std::string header = read_line_strip(bf, ok);
  if (!ok) throw Validation(baselines_path + ": empty file");
  auto cols = split_line(header);
  if (cols.size() < 2 || cols[0] != "subject_id" || cols[1] != "censoring_time")
    throw Validation(baselines_path + ": header must start subject_id,censoring_time");
  d.covariate_names.assign(cols.begin() + 2, cols.end());
  std::unordered_map<std::string, int> index_of;
  std::size_t lineno = 1;
  while (true) {
    std::string line = read_line_strip(bf, ok);
    if (!ok) break;
    ++lineno;
    if (line.empty()) continue;
    auto f = split_line(line);
    if (f.size() != cols.size()) {
      std::ostringstream msg;
      msg << baselines_path << ":" << lineno << ": expected " << cols.size() << " fields";
      throw Validation(msg.str());
    }
    SubjectBaseline b;
    b.subject_id = f[0];
    b.censoring_time = parse_double(f[1], baselines_path, lineno);
    for (std::size_t k = 2; k < f.size(); ++k)
      b.covariates.push_back(parse_double(f[k], baselines_path, lineno));
    index_of[b.subject_id] = static_cast<int>(d.baselines.size());
    d.baselines.push_back(std::move(b));
  }

  std::ifstream ef(events_path);
  if (!ef) throw Validation("cannot open " + events_path);
  header = read_line_strip(ef, ok);
  if (!ok) throw Validation(events_path + ": empty file");
  if (header != "subject_id,time,recorded,outcome")
    throw Validation(events_path + ": header must be subject_id,time,recorded,outcome");
  lineno = 1;
  while (true) {
    std::string line = read_line_strip(ef, ok);
    if (!ok) break;
    ++lineno;
    if (line.empty()) continue;
    auto f = split_line(line);
    if (f.size() != 4) {
      std::ostringstream msg;
      msg << events_path << ":" << lineno << ": expected 4 fields";
      throw Validation(msg.str());
    }
    VisitEvent e;
    auto it = index_of.find(f[0]);
    if (it == index_of.end()) {
      std::ostringstream msg;
      msg << events_path << ":" << lineno << ": unknown-subject '" << f[0] << "'";
      throw Validation(msg.str());
    }
    e.subject = it->second;
    e.time = parse_double(f[1], events_path, lineno);
    if (f[2] == "1")
      e.recorded = true;
    else if (f[2] == "0")
      e.recorded = false;
    else {
      std::ostringstream msg;
      msg << events_path << ":" << lineno << ": recorded must be 0 or 1";
      throw Validation(msg.str());
    }
    if (!f[3].empty()) e.outcome = parse_double(f[3], events_path, lineno);
    d.events.push_back(e);
  }
  std::stable_sort(d.events.begin(), d.events.end(), [](const VisitEvent& a, const VisitEvent& b) {
    return a.subject != b.subject ? a.subject < b.subject : a.time < b.time;
  });
  d.finalize();
  require_valid(d);
  return d;
}

void export_csv(const PanelDataset& d, const std::string& baselines_path,
                const std::string& events_path) {
  require_valid(d);
  std::ofstream bf(baselines_path, std::ios::binary);
  if (!bf) throw Error(ErrorCode::Generic, "cannot write " + baselines_path);
  bf << "subject_id,censoring_time";
  for (const auto& name : d.covariate_names) bf << "," << name;
  bf << "\n";
  for (const auto& b : d.baselines) {
    bf << b.subject_id << "," << format_double(b.censoring_time);
    for (double v : b.covariates) bf << "," << format_double(v);
    bf << "\n";
  }
  std::ofstream ef(events_path, std::ios::binary);
  if (!ef) throw Error(ErrorCode::Generic, "cannot write " + events_path);
  ef << "subject_id,time,recorded,outcome\n";
  for (const auto& e : d.events) {
    ef << d.baselines[static_cast<std::size_t>(e.subject)].subject_id << ","
       << format_double(e.time) << "," << (e.recorded ? "1" : "0") << ",";
    if (e.outcome.has_value()) ef << format_double(*e.outcome);
    ef << "\n";
  }
}

}  // namespace ehrjoint

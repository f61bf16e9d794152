#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace ehrjoint {

struct SubjectBaseline {
  std::string subject_id;
  double censoring_time = 0.0;
  std::vector<double> covariates;  // ordered per PanelDataset::covariate_names
};

struct VisitEvent {
  int subject = -1;  // index into baselines
  double time = 0.0;
  bool recorded = false;
  std::optional<double> outcome;  // present iff recorded
};

struct Violation {
  std::string code;
  std::string subject_id;
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool pass() const { return violations.empty(); }
};

// Irregular longitudinal panel: subjects with baseline covariates and censoring
// times, plus time-stamped visit events carrying a recording flag and optional
// outcome. Immutable after construction; safe to share across threads.
struct PanelDataset {
  double study_origin = 0.0;
  double tau = 0.0;  // max censoring time
  std::vector<std::string> covariate_names;
  std::vector<SubjectBaseline> baselines;
  std::vector<VisitEvent> events;        // sorted by (subject, time)
  std::vector<std::size_t> event_begin;  // per-subject event ranges; size n+1

  std::size_t n_subjects() const { return baselines.size(); }
  int covariate_index(const std::string& name) const;  // -1 when absent

  // Recomputes tau and event_begin; events must already be grouped by subject.
  void finalize();

  // Per-subject total visit count n_i and recorded count o_i.
  std::vector<double> visit_counts() const;
  std::vector<double> recorded_counts() const;
};

ValidationReport validate(const PanelDataset& dataset);

// Throws Validation listing every violation.
void require_valid(const PanelDataset& dataset);

PanelDataset ingest_csv(const std::string& baselines_path, const std::string& events_path);
void export_csv(const PanelDataset& dataset, const std::string& baselines_path,
                const std::string& events_path);

}  // namespace ehrjoint

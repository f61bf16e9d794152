#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ehrjoint/data_model.hpp"
#include "ehrjoint/rng.hpp"

namespace ehrjoint {

// Visit-model parameters; which fields apply depends on the case.
struct VisitParams {
  double gamma0 = -2.2;
  double gamma_a = 0.5;
  double gamma_z = 0.5;
  double gamma_b = 0.2;      // latent-frailty link (case x-3)
  double gamma_y = 1.0;      // previous-outcome link (case x-4)
  double sigma_eta2 = 1.0;   // frailty variance (case x-3 and Settings B/C)
  double c = 6.0;            // scheduled inter-visit gap (case x-1)
};

struct SimConfig {
  char setting = 'A';        // derived from case_id prefix 1/2/3 -> A/B/C
  std::string case_id = "1-1";
  int n_subjects = 1000;
  std::array<double, 4> beta{-2.0, -0.5, 0.5, 0.1};  // beta0, beta_a, beta_z, beta_t
  double sigma_eps2 = 1.0;
  std::array<double, 2> sigma_b_diag{1.0, 4.0};
  std::array<double, 2> theta{0.5, 0.5};             // Settings B/C latent coupling
  VisitParams gamma;
  std::array<double, 3> alpha{0.0, 0.0, 0.0};        // Settings B/C observation model
  double t0 = 0.0;
  double censoring = 60.0;
  double grid_step = 0.1;                            // threshold mechanism grid
  std::uint64_t seed = 20260814ULL;
};

// Defaults of the simulation protocol for one case; throws Usage on unknown id.
SimConfig default_config(const std::string& case_id);

// Partial JSON accepted: case_id required, all other fields default per case.
SimConfig config_from_json(const std::string& text);
std::string config_to_json(const SimConfig& config);

// Throws Validation naming the offending field.
void validate_config(const SimConfig& config);

// Visit mechanisms; numbering is stable in truth output.
// 1 scheduled, 2 measured covariates, 3 latent frailty, 4 previous outcome,
// 5 current-value threshold, 7 Settings B/C frailty visiting.
struct SubjectTruth {
  double eta = 1.0;        // Settings B/C coupling frailty; 1 in Setting A
  double b0 = 0.0;
  double b1 = 0.0;
  int mechanism = 1;
  double eta_visit = 1.0;  // mechanism-3 visit frailty; 1 otherwise
};

struct SimTruth {
  std::vector<SubjectTruth> subjects;
  bool threshold_used = false;
  double threshold = 0.0;
};

struct SimOutput {
  PanelDataset dataset;
  SimTruth truth;
};

// Deterministic in config.seed; per-subject substreams, so changing
// n_subjects never perturbs earlier subjects.
SimOutput generate(const SimConfig& config);

// Constant-rate renewal: cumulative exponential gaps truncated at censoring.
// rate == 0 is the degenerate no-visit limit; negative or non-finite rates
// are rejected.
std::vector<double> gen_visits_renewal(Stream& stream, double rate, double t0, double censoring);

struct ThresholdVisits {
  std::vector<double> times;
  std::vector<double> values;  // latent outcomes at the emitted times
};

// Latent path base + slope*t + noise scanned on the grid t0+step, ..., censoring;
// a visit fires wherever the latent value exceeds threshold.
ThresholdVisits gen_visits_threshold(Stream& stream, double base, double slope, double sigma_eps,
                                     double threshold, double grid_step, double t0,
                                     double censoring);

// Population 0.8-quantile of the marginal outcome over the time grid, from
// 10^6 Monte Carlo draws on a fixed internal stream (not user-seeded).
double threshold_for(const SimConfig& config);

std::string truth_to_json(const SimConfig& config, const SimTruth& truth);

}  // namespace ehrjoint

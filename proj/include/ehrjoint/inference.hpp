#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ehrjoint/data_model.hpp"
#include "ehrjoint/design.hpp"
#include "ehrjoint/simgen.hpp"

namespace ehrjoint {

// Uniform coefficient view over every fitter, for the harness and bootstrap.
struct FitResult {
  std::vector<std::string> beta_names;
  Eigen::VectorXd beta;
  std::vector<std::string> theta_names;  // estimating-equation joint fits only
  Eigen::VectorXd theta;
};

FitResult fit_method(const PanelDataset& dataset, const DesignSpec& design, Method method);

// Default design on a dataset: all baseline covariates everywhere, random
// effects on (intercept, first covariate), time in the fixed design only for
// the regression-style methods (the centered equations reject it).
DesignSpec default_design(const PanelDataset& dataset, Method method);

// Runs body(0..n-1) on a worker pool; any body exception is rethrown after
// joining. Results must be written to per-index slots.
void parallel_for(int n, int threads, const std::function<void(int)>& body);

struct BootstrapResult {
  std::vector<std::string> beta_names;
  Eigen::VectorXd point;
  Eigen::VectorXd se;
  Eigen::VectorXd ci_lower;  // percentile 95%
  Eigen::VectorXd ci_upper;
  int n_boot = 0;    // requested resamples
  int n_failed = 0;  // dropped non-converged resamples
};

// Subject-level nonparametric bootstrap; entire visit histories travel with
// the resampled subjects, and the full pipeline is re-run per resample.
BootstrapResult bootstrap(const PanelDataset& dataset, Method method, const DesignSpec& design,
                          int n_boot, std::uint64_t seed);

// Dataset of n subjects resampled with replacement; ids reindexed 0..n-1 so
// duplicate-id validation holds.
PanelDataset resample_subjects(const PanelDataset& dataset, Stream& stream);

struct ReplicationCell {
  std::string method;
  std::string coefficient;
  double truth = 0.0;
  double bias = 0.0;
  double sd = 0.0;
  double rmse = 0.0;
  int n_success = 0;
  int n_failed = 0;
};

struct ReplicationReport {
  SimConfig config;
  int n_reps = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> methods;
  std::vector<ReplicationCell> cells;
};

using MethodFitter = std::function<FitResult(const PanelDataset&)>;

// Replication r draws its dataset from substream (seed, replication domain, r),
// so the method set never influences the data and shrinking it leaves the
// surviving methods' numbers unchanged.
ReplicationReport run_replications_with(
    const SimConfig& config, const std::vector<std::pair<std::string, MethodFitter>>& fitters,
    int n_reps, std::uint64_t seed, int threads);

ReplicationReport run_replications(const SimConfig& config, const std::vector<Method>& methods,
                                   int n_reps, std::uint64_t seed, int threads);

// Interpolated percentile of a sample (linear between order statistics).
double quantile(std::vector<double> values, double p);

}  // namespace ehrjoint

#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "ehrjoint/data_model.hpp"

namespace ehrjoint {

struct ObsModelFit {
  Eigen::VectorXd alpha;  // (intercept, v_names...)
  int iterations = 0;
  bool converged = false;
};

// Newton on the visit-level logistic score. V is time-invariant, so the data
// collapse to per-subject (o_i, n_i) sufficient statistics.
ObsModelFit estimate_alpha(const PanelDataset& dataset, const std::vector<std::string>& v_names,
                           double tol = 1e-10, int max_iter = 50);

// omega_i = logistic(alpha' V_i), constant in t.
std::vector<double> omega(const ObsModelFit& fit, const PanelDataset& dataset,
                          const std::vector<std::string>& v_names);

}  // namespace ehrjoint

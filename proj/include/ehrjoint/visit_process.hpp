#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "ehrjoint/data_model.hpp"
#include "ehrjoint/step_function.hpp"

namespace ehrjoint {

struct VisitModelFit {
  Eigen::VectorXd gamma;    // over w_names
  StepFunction baseline;    // Aalen-Breslow cumulative baseline intensity
  double sigma_eta2 = 0.0;  // frailty variance, clamped at 0
  int iterations = 0;
  bool converged = false;
};

// Builds the n x p matrix of the named baseline covariates.
Eigen::MatrixXd covariate_matrix(const PanelDataset& dataset,
                                 const std::vector<std::string>& names);

// Damped Newton for the centered estimating equation of the proportional-rate
// model. Risk sets change only at censoring times, so each Newton step is one
// reverse-time pass with incrementally grown weighted sums.
Eigen::VectorXd estimate_gamma(const PanelDataset& dataset, const Eigen::MatrixXd& W,
                               double tol = 1e-8, int max_iter = 100, int* iterations = nullptr);

StepFunction breslow_baseline(const PanelDataset& dataset, const Eigen::MatrixXd& W,
                              const Eigen::VectorXd& gamma);

double estimate_sigma_eta(const PanelDataset& dataset, const Eigen::MatrixXd& W,
                          const Eigen::VectorXd& gamma, const StepFunction& baseline);

// Scalar multipliers m_i with B_i(t) = m_i * Z_i(t); the conditional
// expectation of (eta_i - 1) given the subject's count and follow-up.
std::vector<double> frailty_multipliers(const PanelDataset& dataset, const Eigen::MatrixXd& W,
                                        const Eigen::VectorXd& gamma, const StepFunction& baseline,
                                        double sigma_eta2);

VisitModelFit fit_visit_model(const PanelDataset& dataset,
                              const std::vector<std::string>& w_names, double tol = 1e-8,
                              int max_iter = 100);

}  // namespace ehrjoint

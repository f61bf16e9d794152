#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "ehrjoint/data_model.hpp"
#include "ehrjoint/design.hpp"
#include "ehrjoint/obs_process.hpp"
#include "ehrjoint/visit_process.hpp"

namespace ehrjoint {

struct JointFitResult {
  Method method = Method::EHRJoint;
  std::vector<std::string> beta_names;
  Eigen::VectorXd beta;
  std::vector<std::string> theta_names;  // empty when theta absent (sigma_eta2 = 0)
  Eigen::VectorXd theta;
  double condition_number = 0.0;
  VisitModelFit visit;
  std::optional<ObsModelFit> obs;
};

// Copy of dataset keeping only recorded events (the measurement process).
PanelDataset measurements_only(const PanelDataset& dataset);

JointFitResult fit_ehrjoint(const PanelDataset& dataset, const DesignSpec& design);
JointFitResult fit_jmvl_liang(const PanelDataset& dataset, const DesignSpec& design);
JointFitResult fit_adapted_liang(const PanelDataset& dataset, const DesignSpec& design);
JointFitResult fit_jmvl_ly(const PanelDataset& dataset, const DesignSpec& design);
JointFitResult fit_iirr(const PanelDataset& dataset, const DesignSpec& design, bool stabilized);

JointFitResult fit_joint(const PanelDataset& dataset, const DesignSpec& design, Method method);

}  // namespace ehrjoint

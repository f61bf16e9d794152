#pragma once

#include <string>
#include <vector>

#include "ehrjoint/data_model.hpp"

namespace ehrjoint {

enum class Method {
  EHRJoint,
  JMVLLiang,
  AdaptedLiang,
  JMVLLY,
  IIRR,
  IIRRStab,
  LME,
  OALME,
  VALME,
  SummaryMin,
  SummaryMean,
  SummaryMedian,
  SummaryMax,
};

Method method_from_string(const std::string& name);   // throws Usage on unknown name
std::string method_to_string(Method m);
bool is_estimating_equation(Method m);  // EHRJoint/Liang/Adapted/LY/IIRR family
bool is_lme_family(Method m);
bool is_summary(Method m);

struct DesignSpec {
  std::vector<std::string> w_names;  // visiting model covariates W_i
  std::vector<std::string> v_names;  // observation model covariates V_i (intercept implicit)
  std::vector<std::string> x_names;  // longitudinal fixed effects X_i
  std::vector<std::string> z_names;  // random-effect carriers, subset of x_names
  bool include_time_fixed_effect = false;
};

// Throws Validation when names do not resolve / duplicate / z not within x.
void check_design(const DesignSpec& design, const PanelDataset& dataset);

// Supp-S3 guard: with a common follow-up clock, t - tbar(t) vanishes
// identically, so time cannot enter X for the centered-equation methods.
void check_identifiable(const DesignSpec& design, Method method);

}  // namespace ehrjoint

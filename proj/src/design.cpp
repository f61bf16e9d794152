#include "ehrjoint/design.hpp"

#include <unordered_set>

#include "ehrjoint/errors.hpp"

namespace ehrjoint {

Method method_from_string(const std::string& name) {
  if (name == "ehrjoint") return Method::EHRJoint;
  if (name == "liang") return Method::JMVLLiang;
  if (name == "adapted-liang") return Method::AdaptedLiang;
  if (name == "jmvl-ly") return Method::JMVLLY;
  if (name == "iirr") return Method::IIRR;
  if (name == "iirr-stab") return Method::IIRRStab;
  if (name == "lme") return Method::LME;
  if (name == "oa-lme") return Method::OALME;
  if (name == "va-lme") return Method::VALME;
  if (name == "summary:min") return Method::SummaryMin;
  if (name == "summary:mean") return Method::SummaryMean;
  if (name == "summary:median") return Method::SummaryMedian;
  if (name == "summary:max") return Method::SummaryMax;
  throw Usage("unknown method '" + name + "'");
}

std::string method_to_string(Method m) {
  switch (m) {
    case Method::EHRJoint: return "ehrjoint";
    case Method::JMVLLiang: return "liang";
    case Method::AdaptedLiang: return "adapted-liang";
    case Method::JMVLLY: return "jmvl-ly";
    case Method::IIRR: return "iirr";
    case Method::IIRRStab: return "iirr-stab";
    case Method::LME: return "lme";
    case Method::OALME: return "oa-lme";
    case Method::VALME: return "va-lme";
    case Method::SummaryMin: return "summary:min";
    case Method::SummaryMean: return "summary:mean";
    case Method::SummaryMedian: return "summary:median";
    case Method::SummaryMax: return "summary:max";
  }
  return "?";
}

bool is_estimating_equation(Method m) {
  switch (m) {
    case Method::EHRJoint:
    case Method::JMVLLiang:
    case Method::AdaptedLiang:
    case Method::JMVLLY:
    case Method::IIRR:
    case Method::IIRRStab: return true;
    default: return false;
  }
}

bool is_lme_family(Method m) {
  return m == Method::LME || m == Method::OALME || m == Method::VALME;
}

bool is_summary(Method m) {
  switch (m) {
    case Method::SummaryMin:
    case Method::SummaryMean:
    case Method::SummaryMedian:
    case Method::SummaryMax: return true;
    default: return false;
  }
}

namespace {
void check_names(const std::vector<std::string>& names, const PanelDataset& d,
                 const std::string& which) {
  std::unordered_set<std::string> seen;
  for (const auto& n : names) {
    if (!seen.insert(n).second) throw Validation(which + ": duplicate name '" + n + "'");
    if (d.covariate_index(n) < 0)
      throw Validation(which + ": unknown covariate '" + n + "'");
  }
}
}  // namespace

void check_design(const DesignSpec& design, const PanelDataset& dataset) {
  check_names(design.w_names, dataset, "w_names");
  check_names(design.v_names, dataset, "v_names");
  check_names(design.x_names, dataset, "x_names");
  check_names(design.z_names, dataset, "z_names");
  for (const auto& z : design.z_names) {
    bool found = false;
    for (const auto& x : design.x_names) found = found || x == z;
    if (!found) throw Validation("z_names: '" + z + "' not in x_names");
  }
}

void check_identifiable(const DesignSpec& design, Method method) {
  if (!design.include_time_fixed_effect) return;
  const bool centered = method == Method::EHRJoint || method == Method::JMVLLiang ||
                        method == Method::AdaptedLiang || method == Method::JMVLLY;
  if (centered)
    throw TimeNotIdentifiable(
        "time cannot be a fixed effect for " + method_to_string(method) +
        ": the centered estimating equation for t is identically zero");
  if (is_summary(method))
    throw TimeNotIdentifiable("summary regressions collapse time and cannot include it");
}

}  // namespace ehrjoint

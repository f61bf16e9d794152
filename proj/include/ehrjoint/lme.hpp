#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "ehrjoint/data_model.hpp"
#include "ehrjoint/design.hpp"

namespace ehrjoint {

enum class LmeVariant { Standard, OA, VA };

struct LmeFit {
  std::vector<std::string> beta_names;  // (intercept), x_names..., t, count column
  Eigen::VectorXd beta;
  Eigen::MatrixXd sigma_b_lower;  // Cholesky factor; sigma_b() = L L' is PSD by construction
  double sigma_eps2 = 0.0;
  double loglik = 0.0;
  bool converged = false;
  int evaluations = 0;

  Eigen::MatrixXd sigma_b() const { return sigma_b_lower * sigma_b_lower.transpose(); }
};

// Per-subject sufficient statistics of the marginal Gaussian likelihood.
// Random-effect rows are constant within subject, so each subject reduces to
// (m, z, X'X, X'1, X'y, 1'y, y'y).
struct LmeSuffStats {
  std::vector<std::string> beta_names;
  Eigen::MatrixXd z;                 // n x q random-effect covariates (intercept first)
  std::vector<double> m;             // measurement counts
  std::vector<Eigen::MatrixXd> xtx;  // p x p
  std::vector<Eigen::VectorXd> xt1;  // p
  std::vector<Eigen::VectorXd> xty;  // p
  std::vector<double> s1y;           // 1'y
  std::vector<double> syy;           // y'y
  double total_m = 0.0;

  Eigen::Index p() const { return beta_names.empty() ? 0 : xtx.front().rows(); }
  Eigen::Index q() const { return z.cols(); }
};

// Builds stats and checks the stacked fixed design for rank deficiency
// (condition number > 1e10 on the raw singular values -> Collinear).
LmeSuffStats build_lme_stats(const PanelDataset& dataset, const DesignSpec& design,
                             LmeVariant variant);

struct LmeEval {
  Eigen::VectorXd beta;  // GLS profile at the given variance parameters
  double loglik = 0.0;
};

// Marginal log-likelihood with beta profiled out. Per-subject covariance
// sigma_eps2*I + Z Sigma_b Z' handled by the q x q Woodbury identity.
LmeEval lme_profile(const LmeSuffStats& stats, const Eigen::MatrixXd& sigma_b, double sigma_eps2);

// ML fit over a log-Cholesky parametrization by Nelder-Mead with 5 seeded
// restarts; restarts use a fixed internal seed so the fit is a pure function
// of the data.
LmeFit fit_lme(const PanelDataset& dataset, const DesignSpec& design, LmeVariant variant);

enum class SummaryStat { Min, Mean, Median, Max };

struct SummaryOlsFit {
  std::vector<std::string> beta_names;  // (intercept), x_names...
  Eigen::VectorXd beta;
};

// Per-subject summary of the recorded outcomes regressed on baseline
// covariates by OLS. Even-count median is the midpoint of the two central
// order statistics.
SummaryOlsFit fit_summary_ols(const PanelDataset& dataset, SummaryStat stat,
                              const std::vector<std::string>& x_names);

SummaryStat summary_stat_of(Method method);
LmeVariant lme_variant_of(Method method);

}  // namespace ehrjoint

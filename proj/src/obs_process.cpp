#include "ehrjoint/obs_process.hpp"

#include <cmath>

#include "ehrjoint/errors.hpp"
#include "ehrjoint/visit_process.hpp"

namespace ehrjoint {

namespace {
inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

ObsModelFit estimate_alpha(const PanelDataset& d, const std::vector<std::string>& v_names,
                           double tol, int max_iter) {
  if (d.events.empty()) throw Validation("estimate_alpha: no visits");
  const std::vector<double> n = d.visit_counts();
  const std::vector<double> o = d.recorded_counts();
  double n_tot = 0.0, o_tot = 0.0;
  for (std::size_t i = 0; i < n.size(); ++i) {
    n_tot += n[i];
    o_tot += o[i];
  }
  if (o_tot == 0.0 || o_tot == n_tot)
    throw Degenerate("estimate_alpha: recording flags are all equal");

  const Eigen::MatrixXd Vraw = covariate_matrix(d, v_names);
  const Eigen::Index p = Vraw.cols() + 1;
  Eigen::MatrixXd V(Vraw.rows(), p);
  V.col(0).setOnes();
  V.rightCols(Vraw.cols()) = Vraw;

  ObsModelFit fit;
  fit.alpha = Eigen::VectorXd::Zero(p);
  for (fit.iterations = 0; fit.iterations < max_iter; ++fit.iterations) {
    Eigen::VectorXd U = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index i = 0; i < V.rows(); ++i) {
      const std::size_t s = static_cast<std::size_t>(i);
      if (n[s] == 0.0) continue;
      const double pr = logistic(V.row(i).dot(fit.alpha));
      U += (o[s] - n[s] * pr) * V.row(i).transpose();
      J += n[s] * pr * (1.0 - pr) * (V.row(i).transpose() * V.row(i));
    }
    if (U.cwiseAbs().maxCoeff() <= tol * n_tot) {
      fit.converged = true;
      return fit;
    }
    fit.alpha += J.ldlt().solve(U);
    if (fit.alpha.cwiseAbs().maxCoeff() > 30.0)
      throw Separation("estimate_alpha: monotone likelihood, |alpha| diverged");
  }
  throw NotConverged("estimate_alpha: no convergence in " + std::to_string(max_iter) +
                     " iterations");
}

std::vector<double> omega(const ObsModelFit& fit, const PanelDataset& d,
                          const std::vector<std::string>& v_names) {
  const Eigen::MatrixXd Vraw = covariate_matrix(d, v_names);
  std::vector<double> w(d.n_subjects());
  for (std::size_t i = 0; i < d.n_subjects(); ++i) {
    double lin = fit.alpha(0);
    for (Eigen::Index k = 0; k < Vraw.cols(); ++k)
      lin += fit.alpha(k + 1) * Vraw(static_cast<Eigen::Index>(i), k);
    w[i] = logistic(lin);
  }
  return w;
}

}  // namespace ehrjoint

#include "ehrjoint/visit_process.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ehrjoint/errors.hpp"

namespace ehrjoint {

Eigen::MatrixXd covariate_matrix(const PanelDataset& d, const std::vector<std::string>& names) {
  Eigen::MatrixXd W(static_cast<Eigen::Index>(d.n_subjects()),
                    static_cast<Eigen::Index>(names.size()));
  for (std::size_t k = 0; k < names.size(); ++k) {
    const int col = d.covariate_index(names[k]);
    if (col < 0) throw Validation("unknown covariate '" + names[k] + "'");
    for (std::size_t i = 0; i < d.n_subjects(); ++i)
      W(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          d.baselines[i].covariates[static_cast<std::size_t>(col)];
  }
  return W;
}

namespace {

struct EventOrder {
  std::vector<int> subject;   // event subjects, time-descending
  std::vector<double> time;   // event times, descending
  std::vector<int> by_c_desc; // subject indices sorted by censoring time descending
};

EventOrder order_events(const PanelDataset& d) {
  EventOrder eo;
  const std::size_t m = d.events.size();
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), 0u);
  std::stable_sort(idx.begin(), idx.end(), [&d](std::size_t a, std::size_t b) {
    return d.events[a].time > d.events[b].time;
  });
  eo.subject.reserve(m);
  eo.time.reserve(m);
  for (std::size_t k : idx) {
    eo.subject.push_back(d.events[k].subject);
    eo.time.push_back(d.events[k].time);
  }
  eo.by_c_desc.resize(d.n_subjects());
  std::iota(eo.by_c_desc.begin(), eo.by_c_desc.end(), 0);
  std::stable_sort(eo.by_c_desc.begin(), eo.by_c_desc.end(), [&d](int a, int b) {
    return d.baselines[static_cast<std::size_t>(a)].censoring_time >
           d.baselines[static_cast<std::size_t>(b)].censoring_time;
  });
  return eo;
}

// One reverse-time pass: accumulates U and the information matrix at gamma.
// Subjects enter the running sums once t drops to their censoring time, so no
// subtraction ever occurs and the pass is O(events + subjects).
void score_pass(const PanelDataset& d, const Eigen::MatrixXd& W, const EventOrder& eo,
                const Eigen::VectorXd& gamma, Eigen::VectorXd& U, Eigen::MatrixXd& info) {
  const Eigen::Index p = W.cols();
  U.setZero(p);
  info.setZero(p, p);
  Eigen::VectorXd expg = (W * gamma).array().exp();
  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
  std::size_t next = 0;
  for (std::size_t e = 0; e < eo.subject.size(); ++e) {
    const double t = eo.time[e];
    while (next < eo.by_c_desc.size()) {
      const int j = eo.by_c_desc[next];
      if (d.baselines[static_cast<std::size_t>(j)].censoring_time < t) break;
      const double w = expg(j);
      s0 += w;
      s1 += w * W.row(j).transpose();
      s2 += w * (W.row(j).transpose() * W.row(j));
      ++next;
    }
    const Eigen::VectorXd wbar = s1 / s0;
    U += W.row(eo.subject[e]).transpose() - wbar;
    info += s2 / s0 - wbar * wbar.transpose();
  }
}

}  // namespace

Eigen::VectorXd estimate_gamma(const PanelDataset& d, const Eigen::MatrixXd& W, double tol,
                               int max_iter, int* iterations) {
  if (d.events.empty()) throw Validation("estimate_gamma: no events");
  const Eigen::Index p = W.cols();
  const EventOrder eo = order_events(d);
  const double scale = static_cast<double>(d.events.size());
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd U(p);
  Eigen::MatrixXd info(p, p);
  score_pass(d, W, eo, gamma, U, info);
  {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(info);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(lo > hi * 1e-12) || hi <= 0.0)
      throw NonIdentifiable("centered visiting-model covariates are collinear or constant");
  }
  int iter = 0;
  for (; iter < max_iter; ++iter) {
    if (U.cwiseAbs().maxCoeff() <= tol * scale) break;
    const Eigen::VectorXd step = info.ldlt().solve(U);
    double s = 1.0;
    const double u0 = U.norm();
    Eigen::VectorXd gamma_try, U_try(p);
    Eigen::MatrixXd info_try(p, p);
    for (int h = 0; h <= 30; ++h) {
      gamma_try = gamma + s * step;
      score_pass(d, W, eo, gamma_try, U_try, info_try);
      if (U_try.norm() < u0 || h == 30) break;
      s *= 0.5;
    }
    gamma = gamma_try;
    U = U_try;
    info = info_try;
  }
  if (iterations) *iterations = iter;
  if (U.cwiseAbs().maxCoeff() > tol * scale)
    throw NotConverged("estimate_gamma: no convergence in " + std::to_string(max_iter) +
                       " iterations");
  return gamma;
}

StepFunction breslow_baseline(const PanelDataset& d, const Eigen::MatrixXd& W,
                              const Eigen::VectorXd& gamma) {
  StepFunction out;
  if (d.events.empty()) return out;
  const EventOrder eo = order_events(d);
  Eigen::VectorXd expg = (W * gamma).array().exp();
  double s0 = 0.0;
  std::size_t next = 0;
  // distinct times descending with d_s / S0(s); ties share one jump
  std::vector<double> times_desc, jumps_desc;
  std::size_t e = 0;
  while (e < eo.subject.size()) {
    const double t = eo.time[e];
    while (next < eo.by_c_desc.size()) {
      const int j = eo.by_c_desc[next];
      if (d.baselines[static_cast<std::size_t>(j)].censoring_time < t) break;
      s0 += expg(j);
      ++next;
    }
    std::size_t tied = 0;
    while (e < eo.subject.size() && eo.time[e] == t) {
      ++tied;
      ++e;
    }
    if (!(s0 > 0.0)) throw Error(ErrorCode::Generic, "breslow: empty risk set at an event");
    times_desc.push_back(t);
    jumps_desc.push_back(static_cast<double>(tied) / s0);
  }
  out.jump_times.assign(times_desc.rbegin(), times_desc.rend());
  double cum = 0.0;
  for (auto it = jumps_desc.rbegin(); it != jumps_desc.rend(); ++it) {
    cum += *it;
    out.cumulative_values.push_back(cum);
  }
  return out;
}

double estimate_sigma_eta(const PanelDataset& d, const Eigen::MatrixXd& W,
                          const Eigen::VectorXd& gamma, const StepFunction& baseline) {
  const std::vector<double> n = d.visit_counts();
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < d.n_subjects(); ++i) {
    const double mu = std::exp(W.row(static_cast<Eigen::Index>(i)).dot(gamma)) *
                      baseline.evaluate(d.baselines[i].censoring_time);
    num += n[i] * n[i] - n[i] - mu * mu;
    den += mu * mu;
  }
  if (!(den > 0.0)) throw ZeroExposure("estimate_sigma_eta: zero cumulative exposure");
  return std::max(num / den, 0.0);
}

std::vector<double> frailty_multipliers(const PanelDataset& d, const Eigen::MatrixXd& W,
                                        const Eigen::VectorXd& gamma, const StepFunction& baseline,
                                        double sigma_eta2) {
  const std::vector<double> n = d.visit_counts();
  std::vector<double> m(d.n_subjects());
  for (std::size_t i = 0; i < d.n_subjects(); ++i) {
    const double mu = std::exp(W.row(static_cast<Eigen::Index>(i)).dot(gamma)) *
                      baseline.evaluate(d.baselines[i].censoring_time);
    m[i] = (n[i] - mu) * sigma_eta2 / (1.0 + mu * sigma_eta2);
  }
  return m;
}

VisitModelFit fit_visit_model(const PanelDataset& d, const std::vector<std::string>& w_names,
                              double tol, int max_iter) {
  VisitModelFit fit;
  const Eigen::MatrixXd W = covariate_matrix(d, w_names);
  fit.gamma = estimate_gamma(d, W, tol, max_iter, &fit.iterations);
  fit.converged = true;
  fit.baseline = breslow_baseline(d, W, fit.gamma);
  fit.sigma_eta2 = estimate_sigma_eta(d, W, fit.gamma, fit.baseline);
  return fit;
}

}  // namespace ehrjoint

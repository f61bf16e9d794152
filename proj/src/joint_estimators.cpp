#include "ehrjoint/joint_estimators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ehrjoint/errors.hpp"

namespace ehrjoint {

namespace {

// Rank-revealing solve with a condition check; near-collinear systems fail loudly.
Eigen::VectorXd checked_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& c,
                              double* condition) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double smax = svd.singularValues().maxCoeff();
  const double smin = svd.singularValues().minCoeff();
  const double cond = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
  if (condition) *condition = cond;
  if (!(cond < 1e12)) throw SingularSystem("assembled system condition number above 1e12");
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  return lu.solve(c);
}

struct RecordedEvent {
  int subject;
  double time;
  double y;
};

// Recorded events in descending time order.
std::vector<RecordedEvent> recorded_desc(const PanelDataset& d) {
  std::vector<RecordedEvent> ev;
  ev.reserve(d.events.size());
  for (const auto& e : d.events)
    if (e.recorded) ev.push_back({e.subject, e.time, *e.outcome});
  std::stable_sort(ev.begin(), ev.end(),
                   [](const RecordedEvent& a, const RecordedEvent& b) { return a.time > b.time; });
  return ev;
}

std::vector<int> subjects_by_censoring_desc(const PanelDataset& d) {
  std::vector<int> order(d.n_subjects());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&d](int a, int b) {
    return d.baselines[static_cast<std::size_t>(a)].censoring_time >
           d.baselines[static_cast<std::size_t>(b)].censoring_time;
  });
  return order;
}

enum class LiangMode { EHRJoint, Liang, Adapted };

// Shared machinery for EHRJoint / JMVL-Liang / Adapted-Liang. The three differ
// only in which counting process feeds the nuisance fits and in omega:
//   EHRJoint: full visits, omega = logistic(alpha' V);
//   Liang:    measurement events only, omega = 1;
//   Adapted:  full visits, alpha forced to 0 so omega = 0.5.
JointFitResult liang_family(const PanelDataset& dataset, const DesignSpec& design,
                            LiangMode mode) {
  check_design(design, dataset);
  const Method method = mode == LiangMode::EHRJoint  ? Method::EHRJoint
                        : mode == LiangMode::Liang   ? Method::JMVLLiang
                                                     : Method::AdaptedLiang;
  check_identifiable(design, method);

  JointFitResult out;
  out.method = method;

  const PanelDataset counting = mode == LiangMode::Liang ? measurements_only(dataset) : dataset;
  if (counting.events.empty()) throw Validation("no events in the counting process");
  const Eigen::MatrixXd W = covariate_matrix(counting, design.w_names);
  out.visit.gamma = estimate_gamma(counting, W, 1e-8, 100, &out.visit.iterations);
  out.visit.converged = true;
  out.visit.baseline = breslow_baseline(counting, W, out.visit.gamma);
  out.visit.sigma_eta2 = estimate_sigma_eta(counting, W, out.visit.gamma, out.visit.baseline);
  const std::vector<double> m =
      frailty_multipliers(counting, W, out.visit.gamma, out.visit.baseline, out.visit.sigma_eta2);
  const std::vector<double> n_count = counting.visit_counts();

  std::vector<double> om(dataset.n_subjects(), 1.0);
  if (mode == LiangMode::Adapted) {
    om.assign(dataset.n_subjects(), 0.5);
  } else if (mode == LiangMode::EHRJoint) {
    const std::vector<double> o = dataset.recorded_counts();
    const std::vector<double> nv = dataset.visit_counts();
    const double o_tot = std::accumulate(o.begin(), o.end(), 0.0);
    const double n_tot = std::accumulate(nv.begin(), nv.end(), 0.0);
    if (o_tot < n_tot) {
      out.obs = estimate_alpha(dataset, design.v_names);
      om = omega(*out.obs, dataset, design.v_names);
    }  // recorded == 1 everywhere: omega stays 1 and the fit reduces to JMVL-Liang
  }

  const bool use_theta = out.visit.sigma_eta2 > 0.0;
  const Eigen::MatrixXd X = covariate_matrix(dataset, design.x_names);
  const Eigen::Index px = X.cols();
  const Eigen::Index pz = use_theta ? static_cast<Eigen::Index>(design.z_names.size()) + 1 : 0;
  const Eigen::Index p = px + pz;
  Eigen::MatrixXd Zr(X.rows(), std::max<Eigen::Index>(pz, 1));
  if (use_theta) {
    Zr.col(0).setOnes();  // random intercept carrier
    const Eigen::MatrixXd Zn = covariate_matrix(dataset, design.z_names);
    Zr.rightCols(Zn.cols()) = Zn;
  }

  // per-subject centering weight omega_j * n_j / Lambda0(C_j); zero-count subjects drop out
  std::vector<double> wsub(dataset.n_subjects(), 0.0);
  for (std::size_t j = 0; j < dataset.n_subjects(); ++j) {
    if (n_count[j] == 0.0) continue;
    const double lam = out.visit.baseline.evaluate(dataset.baselines[j].censoring_time);
    wsub[j] = om[j] * n_count[j] / lam;
  }

  const std::vector<RecordedEvent> ev = recorded_desc(dataset);
  if (ev.empty()) throw Validation("no recorded measurements");
  const std::vector<int> order = subjects_by_censoring_desc(dataset);

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(p);
  double sw = 0.0;
  Eigen::VectorXd sx = Eigen::VectorXd::Zero(px);
  Eigen::VectorXd sb = Eigen::VectorXd::Zero(std::max<Eigen::Index>(pz, 1));
  std::size_t next = 0;
  Eigen::VectorXd L(p), R(p);
  for (const auto& e : ev) {
    while (next < order.size()) {
      const int j = order[next];
      if (dataset.baselines[static_cast<std::size_t>(j)].censoring_time < e.time) break;
      sw += wsub[static_cast<std::size_t>(j)];
      sx += wsub[static_cast<std::size_t>(j)] * X.row(j).transpose();
      if (use_theta)
        sb += wsub[static_cast<std::size_t>(j)] * m[static_cast<std::size_t>(j)] *
              Zr.row(j).transpose();
      ++next;
    }
    const int i = e.subject;
    L.head(px) = X.row(i).transpose() - sx / sw;
    R.head(px) = X.row(i).transpose();
    if (use_theta) {
      L.tail(pz) = m[static_cast<std::size_t>(i)] * Zr.row(i).transpose() - sb / sw;
      R.tail(pz) = m[static_cast<std::size_t>(i)] * Zr.row(i).transpose();
    }
    A += L * R.transpose();
    c += L * e.y;
  }

  const Eigen::VectorXd sol = checked_solve(A, c, &out.condition_number);
  out.beta_names = design.x_names;
  out.beta = sol.head(px);
  if (use_theta) {
    out.theta_names.push_back("(intercept)");
    for (const auto& z : design.z_names) out.theta_names.push_back(z);
    out.theta = sol.tail(pz);
  }
  return out;
}

}  // namespace

PanelDataset measurements_only(const PanelDataset& dataset) {
  PanelDataset d = dataset;
  d.events.clear();
  for (const auto& e : dataset.events)
    if (e.recorded) d.events.push_back(e);
  d.finalize();
  return d;
}

JointFitResult fit_ehrjoint(const PanelDataset& dataset, const DesignSpec& design) {
  return liang_family(dataset, design, LiangMode::EHRJoint);
}

JointFitResult fit_jmvl_liang(const PanelDataset& dataset, const DesignSpec& design) {
  return liang_family(dataset, design, LiangMode::Liang);
}

JointFitResult fit_adapted_liang(const PanelDataset& dataset, const DesignSpec& design) {
  return liang_family(dataset, design, LiangMode::Adapted);
}

JointFitResult fit_jmvl_ly(const PanelDataset& dataset, const DesignSpec& design) {
  check_design(design, dataset);
  check_identifiable(design, Method::JMVLLY);
  JointFitResult out;
  out.method = Method::JMVLLY;

  const PanelDataset meas = measurements_only(dataset);
  if (meas.events.empty()) throw Validation("no recorded measurements");
  const Eigen::MatrixXd W = covariate_matrix(meas, design.w_names);
  out.visit.gamma = estimate_gamma(meas, W, 1e-8, 100, &out.visit.iterations);
  out.visit.converged = true;
  out.visit.baseline = breslow_baseline(meas, W, out.visit.gamma);
  out.visit.sigma_eta2 = estimate_sigma_eta(meas, W, out.visit.gamma, out.visit.baseline);

  const Eigen::MatrixXd X = covariate_matrix(dataset, design.x_names);
  const Eigen::Index px = X.cols();
  const Eigen::VectorXd expg = (W * out.visit.gamma).array().exp();

  // per-subject measurement times/values for the nearest-measurement lookups
  const std::size_t n = dataset.n_subjects();
  std::vector<std::vector<double>> mt(n), my(n);
  for (const auto& e : meas.events) {
    mt[static_cast<std::size_t>(e.subject)].push_back(e.time);
    my[static_cast<std::size_t>(e.subject)].push_back(*e.outcome);
  }
  auto nearest = [&mt, &my](std::size_t j, double t) {
    const auto& ts = mt[j];
    auto it = std::lower_bound(ts.begin(), ts.end(), t);
    std::size_t k;
    if (it == ts.begin())
      k = 0;
    else if (it == ts.end())
      k = ts.size() - 1;
    else {
      const std::size_t hi = static_cast<std::size_t>(it - ts.begin());
      // equidistant neighbours resolve to the earlier measurement
      k = (t - ts[hi - 1] <= ts[hi] - t) ? hi - 1 : hi;
    }
    return my[j][k];
  };

  const std::vector<RecordedEvent> ev = recorded_desc(dataset);
  const std::vector<int> order = subjects_by_censoring_desc(dataset);
  std::vector<int> risk;  // active subjects, grown as time descends
  risk.reserve(n);
  std::size_t next = 0;

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(px, px);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(px);
  double sw = 0.0;
  Eigen::VectorXd sx = Eigen::VectorXd::Zero(px);
  std::size_t e = 0;
  while (e < ev.size()) {
    const double t = ev[e].time;
    while (next < order.size()) {
      const int j = order[next];
      if (dataset.baselines[static_cast<std::size_t>(j)].censoring_time < t) break;
      risk.push_back(j);
      sw += expg(j);
      sx += expg(j) * X.row(j).transpose();
      ++next;
    }
    const double K = static_cast<double>(risk.size());
    const Eigen::VectorXd xbar = sx / sw;
    // Ybar*(t): weighted nearest measurements over risk-set subjects that have any
    double ynum = 0.0, yden = 0.0;
    for (int j : risk) {
      const std::size_t js = static_cast<std::size_t>(j);
      if (mt[js].empty()) continue;
      ynum += expg(j) * nearest(js, t);
      yden += expg(j);
    }
    const double ybar = ynum / yden;
    while (e < ev.size() && ev[e].time == t) {
      const Eigen::VectorXd xc = X.row(ev[e].subject).transpose() - xbar;
      A += K * (xc * xc.transpose());
      c += K * xc * (ev[e].y - ybar);
      ++e;
    }
  }
  out.beta_names = design.x_names;
  out.beta = checked_solve(A, c, &out.condition_number);
  return out;
}

JointFitResult fit_iirr(const PanelDataset& dataset, const DesignSpec& design, bool stabilized) {
  check_design(design, dataset);
  JointFitResult out;
  out.method = stabilized ? Method::IIRRStab : Method::IIRR;

  const PanelDataset meas = measurements_only(dataset);
  if (meas.events.empty()) throw Validation("no recorded measurements");
  const Eigen::MatrixXd W = covariate_matrix(meas, design.w_names);
  out.visit.gamma = estimate_gamma(meas, W, 1e-8, 100, &out.visit.iterations);
  out.visit.converged = true;
  out.visit.baseline = breslow_baseline(meas, W, out.visit.gamma);
  out.visit.sigma_eta2 = estimate_sigma_eta(meas, W, out.visit.gamma, out.visit.baseline);

  // stabilizer gamma_x: Eq.-(1) machinery over the time-invariant, non-constant
  // columns of the outcome design (time and intercept cannot enter).
  const Eigen::MatrixXd Xbase = covariate_matrix(dataset, design.x_names);
  Eigen::VectorXd gx;
  if (stabilized) gx = estimate_gamma(meas, covariate_matrix(meas, design.x_names), 1e-8, 100);

  // outcome design: intercept + x_names (+ time when requested)
  const Eigen::Index px = Xbase.cols() + 1 + (design.include_time_fixed_effect ? 1 : 0);
  out.beta_names.push_back("(intercept)");
  for (const auto& x : design.x_names) out.beta_names.push_back(x);
  if (design.include_time_fixed_effect) out.beta_names.push_back("t");

  const std::vector<RecordedEvent> ev = recorded_desc(dataset);
  const std::vector<int> order = subjects_by_censoring_desc(dataset);
  std::size_t next = 0;
  double K = 0.0;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(px, px);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(px);
  Eigen::VectorXd row(px);
  for (const auto& e : ev) {
    while (next < order.size()) {
      const int j = order[next];
      if (dataset.baselines[static_cast<std::size_t>(j)].censoring_time < e.time) break;
      K += 1.0;
      ++next;
    }
    const int i = e.subject;
    row(0) = 1.0;
    row.segment(1, Xbase.cols()) = Xbase.row(i);
    if (design.include_time_fixed_effect) row(px - 1) = e.time;
    double rho = std::exp(W.row(i).dot(out.visit.gamma));
    if (stabilized) rho /= std::exp(Xbase.row(i).dot(gx));
    const double wgt = K / rho;
    A += wgt * (row * row.transpose());
    c += wgt * row * e.y;
  }
  out.beta = checked_solve(A, c, &out.condition_number);
  return out;
}

JointFitResult fit_joint(const PanelDataset& dataset, const DesignSpec& design, Method method) {
  switch (method) {
    case Method::EHRJoint: return fit_ehrjoint(dataset, design);
    case Method::JMVLLiang: return fit_jmvl_liang(dataset, design);
    case Method::AdaptedLiang: return fit_adapted_liang(dataset, design);
    case Method::JMVLLY: return fit_jmvl_ly(dataset, design);
    case Method::IIRR: return fit_iirr(dataset, design, false);
    case Method::IIRRStab: return fit_iirr(dataset, design, true);
    default: throw Usage("fit_joint: not an estimating-equation method");
  }
}

}  // namespace ehrjoint

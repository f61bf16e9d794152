#include "ehrjoint/lme.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "ehrjoint/errors.hpp"
#include "ehrjoint/rng.hpp"

namespace ehrjoint {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
// Fixed optimizer seed: restarts are reproducible and the fit stays a pure
// function of the data.
constexpr std::uint64_t kOptimizerSeed = 0x1c8e2d3b9f51ab04ULL;

void check_stacked_rank(const Eigen::MatrixXd& X) {
  if (X.rows() < X.cols()) throw Collinear("fewer rows than fixed-effect columns");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(X);
  const double smax = svd.singularValues().maxCoeff();
  const double smin = svd.singularValues().minCoeff();
  if (!(smin > 0.0) || smax / smin > 1e10)
    throw Collinear("fixed-effect design condition number above 1e10");
}

struct SimplexResult {
  Eigen::VectorXd x;
  double fx = std::numeric_limits<double>::infinity();
  bool converged = false;
  int evaluations = 0;
};

// Nelder-Mead with standard coefficients; stops when every vertex lies within
// tol (max norm) of the best vertex.
SimplexResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                          const Eigen::VectorXd& x0, double step, double tol, int max_iter) {
  const Eigen::Index d = x0.size();
  std::vector<Eigen::VectorXd> xs(static_cast<std::size_t>(d) + 1, x0);
  std::vector<double> fs(xs.size());
  SimplexResult out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i > 0) xs[i](static_cast<Eigen::Index>(i) - 1) += step;
    fs[i] = f(xs[i]);
    ++out.evaluations;
  }
  std::vector<std::size_t> idx(xs.size());
  for (int iter = 0; iter < max_iter; ++iter) {
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(),
                     [&fs](std::size_t a, std::size_t b) { return fs[a] < fs[b]; });
    const std::size_t best = idx.front(), worst = idx.back(), second = idx[idx.size() - 2];
    double diam = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i)
      diam = std::max(diam, (xs[i] - xs[best]).cwiseAbs().maxCoeff());
    if (diam < tol) {
      out.x = xs[best];
      out.fx = fs[best];
      out.converged = true;
      return out;
    }
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(d);
    for (std::size_t i = 0; i < xs.size(); ++i)
      if (i != worst) centroid += xs[i];
    centroid /= static_cast<double>(d);
    const Eigen::VectorXd xr = centroid + (centroid - xs[worst]);
    const double fr = f(xr);
    ++out.evaluations;
    if (fr < fs[idx.front()]) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - xs[worst]);
      const double fe = f(xe);
      ++out.evaluations;
      if (fe < fr) {
        xs[worst] = xe;
        fs[worst] = fe;
      } else {
        xs[worst] = xr;
        fs[worst] = fr;
      }
    } else if (fr < fs[second]) {
      xs[worst] = xr;
      fs[worst] = fr;
    } else {
      const bool outside = fr < fs[worst];
      const Eigen::VectorXd base = outside ? xr : xs[worst];
      const Eigen::VectorXd xc = centroid + 0.5 * (base - centroid);
      const double fc = f(xc);
      ++out.evaluations;
      if (fc < (outside ? fr : fs[worst])) {
        xs[worst] = xc;
        fs[worst] = fc;
      } else {
        for (std::size_t i = 0; i < xs.size(); ++i) {
          if (i == best) continue;
          xs[i] = xs[best] + 0.5 * (xs[i] - xs[best]);
          fs[i] = f(xs[i]);
          ++out.evaluations;
        }
      }
    }
  }
  const std::size_t best =
      static_cast<std::size_t>(std::min_element(fs.begin(), fs.end()) - fs.begin());
  out.x = xs[best];
  out.fx = fs[best];
  return out;
}

Eigen::MatrixXd unpack_lower(const Eigen::VectorXd& params, Eigen::Index q) {
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(q, q);
  Eigen::Index k = 0;
  for (Eigen::Index c = 0; c < q; ++c) {
    L(c, c) = std::exp(params(k++));  // log-diagonal keeps the factor PD
    for (Eigen::Index r = c + 1; r < q; ++r) L(r, c) = params(k++);
  }
  return L;
}

}  // namespace

LmeSuffStats build_lme_stats(const PanelDataset& dataset, const DesignSpec& design,
                             LmeVariant variant) {
  check_design(design, dataset);
  check_identifiable(design, variant == LmeVariant::Standard ? Method::LME
                             : variant == LmeVariant::OA     ? Method::OALME
                                                             : Method::VALME);
  LmeSuffStats stats;
  stats.beta_names.push_back("(intercept)");
  for (const auto& x : design.x_names) stats.beta_names.push_back(x);
  if (design.include_time_fixed_effect) stats.beta_names.push_back("t");
  if (variant == LmeVariant::OA) stats.beta_names.push_back("prior_measurements");
  if (variant == LmeVariant::VA) stats.beta_names.push_back("prior_visits");
  const Eigen::Index p = static_cast<Eigen::Index>(stats.beta_names.size());

  const std::size_t n = dataset.n_subjects();
  const Eigen::Index q = static_cast<Eigen::Index>(design.z_names.size()) + 1;
  stats.z = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(n), q);
  for (std::size_t k = 0; k < design.z_names.size(); ++k) {
    const int ci = dataset.covariate_index(design.z_names[k]);
    for (std::size_t i = 0; i < n; ++i)
      stats.z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k) + 1) =
          dataset.baselines[i].covariates[static_cast<std::size_t>(ci)];
  }

  std::vector<int> xcols;
  for (const auto& x : design.x_names) xcols.push_back(dataset.covariate_index(x));

  stats.m.assign(n, 0.0);
  stats.xtx.assign(n, Eigen::MatrixXd::Zero(p, p));
  stats.xt1.assign(n, Eigen::VectorXd::Zero(p));
  stats.xty.assign(n, Eigen::VectorXd::Zero(p));
  stats.s1y.assign(n, 0.0);
  stats.syy.assign(n, 0.0);

  std::vector<Eigen::VectorXd> rows;
  std::vector<double> ys;
  Eigen::VectorXd row(p);
  for (std::size_t i = 0; i < n; ++i) {
    double prior_visits = 0.0, prior_meas = 0.0;
    for (std::size_t e = dataset.event_begin[i]; e < dataset.event_begin[i + 1]; ++e) {
      const VisitEvent& ev = dataset.events[e];
      if (ev.recorded) {
        Eigen::Index k = 0;
        row(k++) = 1.0;
        for (int ci : xcols) row(k++) = dataset.baselines[i].covariates[static_cast<std::size_t>(ci)];
        if (design.include_time_fixed_effect) row(k++) = ev.time;
        if (variant == LmeVariant::OA) row(k++) = prior_meas;
        if (variant == LmeVariant::VA) row(k++) = prior_visits;
        const double y = *ev.outcome;
        stats.m[i] += 1.0;
        stats.xtx[i] += row * row.transpose();
        stats.xt1[i] += row;
        stats.xty[i] += row * y;
        stats.s1y[i] += y;
        stats.syy[i] += y * y;
        rows.push_back(row);
        ys.push_back(y);
      }
      prior_visits += 1.0;
      if (ev.recorded) prior_meas += 1.0;
    }
    stats.total_m += stats.m[i];
  }
  if (stats.total_m < 2.0) throw Validation("need at least two recorded measurements");

  Eigen::MatrixXd stacked(static_cast<Eigen::Index>(rows.size()), p);
  for (std::size_t r = 0; r < rows.size(); ++r)
    stacked.row(static_cast<Eigen::Index>(r)) = rows[r];
  check_stacked_rank(stacked);
  return stats;
}

LmeEval lme_profile(const LmeSuffStats& stats, const Eigen::MatrixXd& sigma_b,
                    double sigma_eps2) {
  const Eigen::Index p = stats.p();
  const Eigen::Index q = stats.q();
  const std::size_t n = stats.m.size();
  LmeEval out;
  if (!(sigma_eps2 > 0.0)) {
    out.loglik = -std::numeric_limits<double>::infinity();
    return out;
  }

  std::vector<double> a(n, 0.0), logdet(n, 0.0);
  Eigen::MatrixXd xtvx = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd xtvy = Eigen::VectorXd::Zero(p);
  for (std::size_t j = 0; j < n; ++j) {
    if (stats.m[j] == 0.0) continue;
    const Eigen::VectorXd zj = stats.z.row(static_cast<Eigen::Index>(j)).transpose();
    const Eigen::MatrixXd G =
        Eigen::MatrixXd::Identity(q, q) + (stats.m[j] / sigma_eps2) * zj * (zj.transpose() * sigma_b);
    const double det = G.determinant();
    if (!(det > 0.0) || !std::isfinite(det)) {
      out.loglik = -std::numeric_limits<double>::infinity();
      return out;
    }
    const Eigen::MatrixXd M = sigma_b * G.inverse();
    a[j] = zj.dot(M * zj);
    logdet[j] = stats.m[j] * std::log(sigma_eps2) + std::log(det);
    xtvx += (stats.xtx[j] - (a[j] / sigma_eps2) * stats.xt1[j] * stats.xt1[j].transpose()) /
            sigma_eps2;
    xtvy += (stats.xty[j] - (a[j] / sigma_eps2) * stats.xt1[j] * stats.s1y[j]) / sigma_eps2;
  }
  out.beta = xtvx.ldlt().solve(xtvy);

  double quad = 0.0, ld = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (stats.m[j] == 0.0) continue;
    const double rss = stats.syy[j] - 2.0 * out.beta.dot(stats.xty[j]) +
                       out.beta.dot(stats.xtx[j] * out.beta);
    const double r1 = stats.s1y[j] - stats.xt1[j].dot(out.beta);
    quad += (rss - (a[j] / sigma_eps2) * r1 * r1) / sigma_eps2;
    ld += logdet[j];
  }
  out.loglik = -0.5 * (stats.total_m * std::log(kTwoPi) + ld + quad);
  if (!std::isfinite(out.loglik)) out.loglik = -std::numeric_limits<double>::infinity();
  return out;
}

LmeFit fit_lme(const PanelDataset& dataset, const DesignSpec& design, LmeVariant variant) {
  const LmeSuffStats stats = build_lme_stats(dataset, design, variant);
  const Eigen::Index p = stats.p();
  const Eigen::Index q = stats.q();
  const Eigen::Index d = q * (q + 1) / 2 + 1;

  // moment start: pooled OLS residual variance split between the two levels
  Eigen::MatrixXd sxx = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd sxy = Eigen::VectorXd::Zero(p);
  double syy = 0.0;
  for (std::size_t j = 0; j < stats.m.size(); ++j) {
    sxx += stats.xtx[j];
    sxy += stats.xty[j];
    syy += stats.syy[j];
  }
  const Eigen::VectorXd bols = sxx.ldlt().solve(sxy);
  double v = (syy - 2.0 * bols.dot(sxy) + bols.dot(sxx * bols)) /
             std::max(stats.total_m - static_cast<double>(p), 1.0);
  v = std::max(v, 1e-8);

  Eigen::VectorXd x0(d);
  {
    Eigen::Index k = 0;
    for (Eigen::Index c = 0; c < q; ++c) {
      x0(k++) = 0.5 * std::log(v / (2.0 * static_cast<double>(q)));
      for (Eigen::Index r = c + 1; r < q; ++r) x0(k++) = 0.0;
    }
    x0(k) = std::log(v / 2.0);
  }

  // Floor on sigma_eps2: interpolated (noise-free) data would otherwise send
  // the likelihood to +inf along sigma -> 0 and the simplex could never
  // contract; the floor flattens that ray so the fit terminates with the
  // exact GLS beta.
  constexpr double kSigmaFloor = 1e-10;
  auto objective = [&stats, q](const Eigen::VectorXd& params) {
    const Eigen::MatrixXd L = unpack_lower(params, q);
    const double s2 = kSigmaFloor + std::exp(params(params.size() - 1));
    const double ll = lme_profile(stats, L * L.transpose(), s2).loglik;
    return std::isfinite(ll) ? -ll : std::numeric_limits<double>::max();
  };

  LmeFit fit;
  double best = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_x;
  bool best_converged = false;
  bool any_converged = false;
  for (int r = 0; r < 5; ++r) {
    Eigen::VectorXd start = x0;
    if (r > 0) {
      Stream stream(substream_key(kOptimizerSeed, rngdom::kOptimizer,
                                  static_cast<std::uint64_t>(r)));
      for (Eigen::Index k = 0; k < d; ++k) start(k) += 3.0 * stream.uniform01() - 1.5;
    }
    const SimplexResult res = nelder_mead(objective, start, 0.25, 1e-8, 2000);
    fit.evaluations += res.evaluations;
    any_converged = any_converged || res.converged;
    if (res.fx < best) {
      best = res.fx;
      best_x = res.x;
      best_converged = res.converged;
    }
  }
  if (!any_converged) throw NotConverged("simplex diameter never fell below 1e-8");

  fit.beta_names = stats.beta_names;
  fit.sigma_b_lower = unpack_lower(best_x, q);
  fit.sigma_eps2 = kSigmaFloor + std::exp(best_x(d - 1));
  const LmeEval eval = lme_profile(stats, fit.sigma_b(), fit.sigma_eps2);
  fit.beta = eval.beta;
  fit.loglik = eval.loglik;
  fit.converged = best_converged;
  return fit;
}

SummaryOlsFit fit_summary_ols(const PanelDataset& dataset, SummaryStat stat,
                              const std::vector<std::string>& x_names) {
  std::vector<int> xcols;
  for (const auto& x : x_names) {
    const int ci = dataset.covariate_index(x);
    if (ci < 0) throw Validation("unknown covariate: " + x);
    xcols.push_back(ci);
  }

  std::vector<Eigen::VectorXd> rows;
  std::vector<double> ys;
  const Eigen::Index p = static_cast<Eigen::Index>(x_names.size()) + 1;
  for (std::size_t i = 0; i < dataset.n_subjects(); ++i) {
    std::vector<double> obs;
    for (std::size_t e = dataset.event_begin[i]; e < dataset.event_begin[i + 1]; ++e)
      if (dataset.events[e].recorded) obs.push_back(*dataset.events[e].outcome);
    if (obs.empty()) continue;
    std::sort(obs.begin(), obs.end());
    double s = 0.0;
    switch (stat) {
      case SummaryStat::Min: s = obs.front(); break;
      case SummaryStat::Max: s = obs.back(); break;
      case SummaryStat::Mean: {
        for (double y : obs) s += y;
        s /= static_cast<double>(obs.size());
        break;
      }
      case SummaryStat::Median: {
        const std::size_t h = obs.size() / 2;
        s = obs.size() % 2 == 1 ? obs[h] : 0.5 * (obs[h - 1] + obs[h]);
        break;
      }
    }
    Eigen::VectorXd row(p);
    row(0) = 1.0;
    for (Eigen::Index k = 1; k < p; ++k)
      row(k) = dataset.baselines[i].covariates[static_cast<std::size_t>(xcols[static_cast<std::size_t>(k - 1)])];
    rows.push_back(row);
    ys.push_back(s);
  }

  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), p);
  Eigen::VectorXd y(static_cast<Eigen::Index>(ys.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    X.row(static_cast<Eigen::Index>(r)) = rows[r];
    y(static_cast<Eigen::Index>(r)) = ys[r];
  }
  check_stacked_rank(X);

  SummaryOlsFit out;
  out.beta_names.push_back("(intercept)");
  for (const auto& x : x_names) out.beta_names.push_back(x);
  out.beta = (X.transpose() * X).ldlt().solve(X.transpose() * y);
  return out;
}

SummaryStat summary_stat_of(Method method) {
  switch (method) {
    case Method::SummaryMin: return SummaryStat::Min;
    case Method::SummaryMean: return SummaryStat::Mean;
    case Method::SummaryMedian: return SummaryStat::Median;
    case Method::SummaryMax: return SummaryStat::Max;
    default: throw Usage("not a summary method");
  }
}

LmeVariant lme_variant_of(Method method) {
  switch (method) {
    case Method::LME: return LmeVariant::Standard;
    case Method::OALME: return LmeVariant::OA;
    case Method::VALME: return LmeVariant::VA;
    default: throw Usage("not an lme method");
  }
}

}  // namespace ehrjoint

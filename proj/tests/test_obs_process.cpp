#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "ehrjoint/data_model.hpp"
#include "ehrjoint/errors.hpp"
#include "ehrjoint/obs_process.hpp"

using namespace ehrjoint;

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }
double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Subjects defined by (V, visits, recorded): V may be empty for intercept-only.
PanelDataset obs_panel(const std::vector<double>& v, const std::vector<int>& visits,
                       const std::vector<int>& recorded) {
  PanelDataset d;
  if (!v.empty()) d.covariate_names = {"V"};
  for (std::size_t i = 0; i < visits.size(); ++i) {
    SubjectBaseline b;
    b.subject_id = "s" + std::to_string(i);
    b.censoring_time = 100.0;
    if (!v.empty()) b.covariates = {v[i]};
    d.baselines.push_back(b);
    for (int k = 0; k < visits[i]; ++k) {
      VisitEvent e;
      e.subject = static_cast<int>(i);
      e.time = 1.0 + k;
      e.recorded = k < recorded[i];
      if (e.recorded) e.outcome = 0.0;
      d.events.push_back(e);
    }
  }
  d.finalize();
  return d;
}

// Uncollapsed oracle: Newton on the visit-level logistic score, iterating
// event rows directly rather than per-subject sufficient statistics.
Eigen::VectorXd newton_uncollapsed(const PanelDataset& d, const std::vector<std::string>& v_names) {
  const Eigen::Index p = static_cast<Eigen::Index>(v_names.size()) + 1;
  std::vector<int> cols;
  for (const auto& name : v_names) cols.push_back(d.covariate_index(name));
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(p);
  for (int it = 0; it < 100; ++it) {
    Eigen::VectorXd score = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd row(p);
    for (const auto& e : d.events) {
      row(0) = 1.0;
      for (Eigen::Index k = 1; k < p; ++k)
        row(k) = d.baselines[static_cast<std::size_t>(e.subject)]
                     .covariates[static_cast<std::size_t>(cols[static_cast<std::size_t>(k - 1)])];
      const double mu = expit(alpha.dot(row));
      score += row * ((e.recorded ? 1.0 : 0.0) - mu);
      info += row * row.transpose() * mu * (1.0 - mu);
    }
    const Eigen::VectorXd step = info.ldlt().solve(score);
    alpha += step;
    if (step.lpNorm<Eigen::Infinity>() < 1e-12) break;
  }
  return alpha;
}

double score_direct(const PanelDataset& d, const std::vector<std::string>& v_names,
                    const Eigen::VectorXd& alpha) {
  std::vector<int> cols;
  for (const auto& name : v_names) cols.push_back(d.covariate_index(name));
  Eigen::VectorXd score = Eigen::VectorXd::Zero(alpha.size());
  Eigen::VectorXd row(alpha.size());
  for (const auto& e : d.events) {
    row(0) = 1.0;
    for (Eigen::Index k = 1; k < alpha.size(); ++k)
      row(k) = d.baselines[static_cast<std::size_t>(e.subject)]
                   .covariates[static_cast<std::size_t>(cols[static_cast<std::size_t>(k - 1)])];
    score += row * ((e.recorded ? 1.0 : 0.0) - expit(alpha.dot(row)));
  }
  return score.lpNorm<Eigen::Infinity>();
}

}  // namespace

TEST_CASE("intercept-only alpha is the logit of the recorded fraction") {
  const PanelDataset d = obs_panel({}, {6, 4}, {2, 2});  // 10 visits, 4 recorded
  const ObsModelFit fit = estimate_alpha(d, {});
  CHECK(fit.converged);
  CHECK(std::abs(fit.alpha(0) - logit(0.4)) <= 1e-8);
  CHECK(fit.alpha(0) == doctest::Approx(-0.405465).epsilon(1e-5));

  const auto om = omega(fit, d, {});
  for (double w : om) CHECK(w == doctest::Approx(0.4).epsilon(1e-10));
}

TEST_CASE("saturated binary model hits the closed form") {
  // V=0: 10 visits 5 recorded; V=1: 10 visits 8 recorded
  const PanelDataset d = obs_panel({0.0, 1.0}, {10, 10}, {5, 8});
  const ObsModelFit fit = estimate_alpha(d, {"V"});
  CHECK(std::abs(fit.alpha(0) - 0.0) <= 1e-8);
  CHECK(std::abs(fit.alpha(1) - std::log(4.0)) <= 1e-8);
  CHECK(fit.alpha(1) == doctest::Approx(1.386294).epsilon(1e-5));
}

TEST_CASE("degenerate recording flags are rejected") {
  CHECK_THROWS_AS(estimate_alpha(obs_panel({}, {3, 2}, {3, 2}), {}), Degenerate);
  CHECK_THROWS_AS(estimate_alpha(obs_panel({}, {3, 2}, {0, 0}), {}), Degenerate);
}

TEST_CASE("perfect separation by a binary covariate is detected") {
  const PanelDataset d = obs_panel({0.0, 1.0}, {8, 8}, {0, 8});
  CHECK_THROWS_AS(estimate_alpha(d, {"V"}), Separation);
}

TEST_CASE("collapsed fit agrees with the uncollapsed oracle") {
  const PanelDataset d = obs_panel({0.0, 1.0, 0.5, 1.0, 0.0}, {6, 9, 4, 7, 5}, {2, 7, 1, 4, 4});
  const ObsModelFit fit = estimate_alpha(d, {"V"}, 1e-12, 100);
  const Eigen::VectorXd oracle = newton_uncollapsed(d, {"V"});
  CHECK((fit.alpha - oracle).lpNorm<Eigen::Infinity>() <= 1e-10);
  CHECK(score_direct(d, {"V"}, fit.alpha) <= 1e-8);
}

TEST_CASE("intercept solution balances expected and observed recordings") {
  const PanelDataset d = obs_panel({0.0, 1.0, 0.5, 1.0}, {6, 9, 4, 7}, {2, 7, 1, 4});
  const ObsModelFit fit = estimate_alpha(d, {"V"});
  const auto om = omega(fit, d, {"V"});
  const auto n = d.visit_counts();
  const auto o = d.recorded_counts();
  double expected = 0.0, observed = 0.0;
  for (std::size_t i = 0; i < d.n_subjects(); ++i) {
    expected += n[i] * om[i];
    observed += o[i];
  }
  CHECK(expected == doctest::Approx(observed).epsilon(1e-10));
}

TEST_CASE("omega is the logistic transform, constant in t") {
  ObsModelFit fit;
  fit.alpha = Eigen::VectorXd::Zero(1);
  fit.converged = true;
  const PanelDataset d = obs_panel({}, {2, 3}, {1, 1});
  for (double w : omega(fit, d, {})) CHECK(w == 0.5);

  fit.alpha(0) = std::log(3.0);
  for (double w : omega(fit, d, {})) CHECK(w == doctest::Approx(0.75).epsilon(1e-12));
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "ehrjoint/data_model.hpp"
#include "ehrjoint/errors.hpp"
#include "ehrjoint/rng.hpp"
#include "ehrjoint/simgen.hpp"

using namespace ehrjoint;

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

bool datasets_equal(const PanelDataset& a, const PanelDataset& b) {
  if (a.n_subjects() != b.n_subjects() || a.events.size() != b.events.size()) return false;
  for (std::size_t i = 0; i < a.n_subjects(); ++i) {
    if (a.baselines[i].censoring_time != b.baselines[i].censoring_time) return false;
    if (a.baselines[i].covariates != b.baselines[i].covariates) return false;
  }
  for (std::size_t e = 0; e < a.events.size(); ++e) {
    if (a.events[e].subject != b.events[e].subject) return false;
    if (a.events[e].time != b.events[e].time) return false;
    if (a.events[e].recorded != b.events[e].recorded) return false;
    if (a.events[e].outcome != b.events[e].outcome) return false;
  }
  return true;
}

const char* kAllCases[] = {"1-1", "1-2", "1-3", "1-4", "1-5", "1-6", "2-1", "2-2",
                           "2-3", "3-1", "3-2", "3-3", "3-4", "3-5", "3-6"};

}  // namespace

TEST_CASE("scheduled case puts every subject on the 6,12,...,60 grid") {
  SimConfig config = default_config("1-1");
  config.n_subjects = 40;
  const SimOutput out = generate(config);
  REQUIRE(out.dataset.n_subjects() == 40);
  for (std::size_t i = 0; i < 40; ++i) {
    const std::size_t b = out.dataset.event_begin[i], e = out.dataset.event_begin[i + 1];
    REQUIRE(e - b == 10);
    for (std::size_t k = b; k < e; ++k) {
      CHECK(out.dataset.events[k].time == 6.0 * static_cast<double>(k - b + 1));
      CHECK(out.dataset.events[k].recorded);  // Setting A records every visit
    }
    CHECK(out.truth.subjects[i].mechanism == 1);
    CHECK(out.truth.subjects[i].eta == 1.0);
  }
}

TEST_CASE("every case generates a dataset that validates") {
  for (const char* id : kAllCases) {
    SimConfig config = default_config(id);
    config.n_subjects = 50;
    config.seed = 31;
    const SimOutput out = generate(config);
    CHECK(validate(out.dataset).pass());
    if (config.setting == 'A')
      for (const auto& e : out.dataset.events) CHECK(e.recorded);
  }
}

TEST_CASE("generation is deterministic in the seed") {
  SimConfig config = default_config("2-3");
  config.n_subjects = 60;
  config.seed = 12345;
  CHECK(datasets_equal(generate(config).dataset, generate(config).dataset));
  SimConfig other = config;
  other.seed = 12346;
  CHECK_FALSE(datasets_equal(generate(config).dataset, generate(other).dataset));
}

TEST_CASE("per-subject substreams: growing n never perturbs earlier subjects") {
  SimConfig small = default_config("1-3");
  small.n_subjects = 30;
  small.seed = 99;
  SimConfig big = small;
  big.n_subjects = 60;
  const SimOutput a = generate(small);
  const SimOutput b = generate(big);
  for (std::size_t i = 0; i < 30; ++i) {
    CHECK(a.dataset.baselines[i].covariates == b.dataset.baselines[i].covariates);
    const std::size_t na = a.dataset.event_begin[i + 1] - a.dataset.event_begin[i];
    const std::size_t nb = b.dataset.event_begin[i + 1] - b.dataset.event_begin[i];
    REQUIRE(na == nb);
    for (std::size_t k = 0; k < na; ++k) {
      const auto& ea = a.dataset.events[a.dataset.event_begin[i] + k];
      const auto& eb = b.dataset.events[b.dataset.event_begin[i] + k];
      CHECK(ea.time == eb.time);
      CHECK(ea.outcome == eb.outcome);
    }
  }
}

TEST_CASE("renewal gaps give the poisson mean count") {
  Stream stream(2024);
  double total = 0.0;
  const int reps = 10000;
  for (int r = 0; r < reps; ++r)
    total += static_cast<double>(gen_visits_renewal(stream, 0.1, 0.0, 60.0).size());
  const double mean = total / reps;
  const double mc_se = std::sqrt(6.0 / reps);
  CHECK(std::abs(mean - 6.0) <= 3.0 * mc_se);
}

TEST_CASE("renewal edge rates") {
  Stream stream(7);
  CHECK(gen_visits_renewal(stream, 0.0, 0.0, 60.0).empty());
  CHECK_THROWS_AS(gen_visits_renewal(stream, -1.0, 0.0, 60.0), Validation);
  const auto times = gen_visits_renewal(stream, 0.5, 0.0, 20.0);
  for (std::size_t k = 1; k < times.size(); ++k) CHECK(times[k] > times[k - 1]);
  if (!times.empty()) CHECK(times.back() <= 20.0);
}

TEST_CASE("threshold visits fire exactly where the latent path exceeds") {
  Stream s1(5);
  // path everywhere below the threshold: no visits
  CHECK(gen_visits_threshold(s1, -100.0, 0.0, 0.0, 0.0, 0.1, 0.0, 60.0).times.empty());
  // path everywhere above: one visit per grid point, so halving the step doubles them
  Stream s2(5), s3(5);
  const auto coarse = gen_visits_threshold(s2, 100.0, 0.0, 0.0, 0.0, 0.1, 0.0, 60.0);
  const auto fine = gen_visits_threshold(s3, 100.0, 0.0, 0.0, 0.0, 0.05, 0.0, 60.0);
  CHECK(coarse.times.size() == 600);
  CHECK(fine.times.size() == 1200);
}

TEST_CASE("threshold matches an independent monte carlo quantile") {
  const SimConfig config = default_config("1-5");
  const double thr = threshold_for(config);
  // independent draw of the marginal outcome over the time grid
  Stream stream(424242);
  std::vector<double> ys;
  const int draws = 400000;
  ys.reserve(draws);
  for (int k = 0; k < draws; ++k) {
    const double A = stream.bernoulli(0.5) ? 1.0 : 0.0;
    const double Z = stream.normal();
    const double b0 = std::sqrt(config.sigma_b_diag[0]) * stream.normal();
    const double b1 = std::sqrt(config.sigma_b_diag[1]) * stream.normal();
    const double t = config.t0 + stream.uniform01() * (config.censoring - config.t0);
    ys.push_back((config.beta[0] + b0) + (config.beta[1] + b1) * A + config.beta[2] * Z +
                 config.beta[3] * t + std::sqrt(config.sigma_eps2) * stream.normal());
  }
  std::sort(ys.begin(), ys.end());
  const double q80 = ys[static_cast<std::size_t>(0.8 * draws)];
  CHECK(std::abs(thr - q80) < 0.04);

  // generated data: about 20% of grid points produce visits
  SimConfig gen_config = config;
  gen_config.n_subjects = 4000;
  gen_config.seed = 5150;
  const SimOutput out = generate(gen_config);
  const double grid_points =
      static_cast<int>((config.censoring - config.t0) / config.grid_step + 1e-9);
  const double frac = static_cast<double>(out.dataset.events.size()) /
                      (grid_points * static_cast<double>(gen_config.n_subjects));
  CHECK(std::abs(frac - 0.20) < 0.03);
}

TEST_CASE("noise-free outcomes sit exactly on the linear predictor") {
  SimConfig config = default_config("1-2");
  config.n_subjects = 50;
  config.sigma_eps2 = 0.0;
  config.sigma_b_diag = {0.0, 0.0};
  config.seed = 8;
  const SimOutput out = generate(config);
  for (const auto& e : out.dataset.events) {
    const auto& b = out.dataset.baselines[static_cast<std::size_t>(e.subject)];
    const double mu = config.beta[0] + config.beta[1] * b.covariates[0] +
                      config.beta[2] * b.covariates[1] + config.beta[3] * e.time;
    REQUIRE(e.outcome.has_value());
    CHECK(*e.outcome == doctest::Approx(mu).epsilon(1e-12));
  }
}

TEST_CASE("latent coupling: cov(eta, b0) = theta0 * sigma_eta2") {
  SimConfig config = default_config("2-2");
  config.n_subjects = 20000;
  config.theta = {1.0, 1.0};
  config.seed = 1001;
  const SimOutput out = generate(config);
  double se = 0.0, sb = 0.0, seb = 0.0;
  const double n = static_cast<double>(config.n_subjects);
  for (const auto& s : out.truth.subjects) {
    se += s.eta;
    sb += s.b0;
    seb += s.eta * s.b0;
  }
  const double cov = seb / n - (se / n) * (sb / n);
  CHECK(std::abs(cov - config.gamma.sigma_eta2) < 0.05);
}

TEST_CASE("recording fraction matches the analytic missingness complement") {
  SimConfig config = default_config("2-3");
  config.n_subjects = 3000;
  config.seed = 321;
  const SimOutput out = generate(config);
  double rec = 0.0;
  for (const auto& e : out.dataset.events) rec += e.recorded ? 1.0 : 0.0;
  const double frac = rec / static_cast<double>(out.dataset.events.size());

  // oracle: event-weighted mean of 1 - logistic(a0 + aa A + az Z) where the
  // expected event count scales with exp(ga A + gz Z) (frailty cancels)
  Stream stream(111);
  double num = 0.0, den = 0.0;
  const int draws = 1000000;
  for (int k = 0; k < draws; ++k) {
    const double A = stream.bernoulli(0.5) ? 1.0 : 0.0;
    const double Z = stream.normal();
    const double w = std::exp(config.gamma.gamma_a * A + config.gamma.gamma_z * Z);
    num += w * (1.0 - logistic(config.alpha[0] + config.alpha[1] * A + config.alpha[2] * Z));
    den += w;
  }
  CHECK(std::abs(frac - num / den) < 0.02);
}

TEST_CASE("alpha 0 flips a fair coin per visit") {
  SimConfig config = default_config("2-1");
  REQUIRE(config.alpha == std::array<double, 3>{0.0, 0.0, 0.0});
  config.n_subjects = 1500;
  config.seed = 55;
  const SimOutput out = generate(config);
  double rec = 0.0;
  for (const auto& e : out.dataset.events) rec += e.recorded ? 1.0 : 0.0;
  const double n = static_cast<double>(out.dataset.events.size());
  CHECK(std::abs(rec / n - 0.5) <= 4.0 * std::sqrt(0.25 / n));
}

TEST_CASE("mixture case assigns the five mechanisms evenly") {
  SimConfig config = default_config("1-6");
  config.n_subjects = 5000;
  config.seed = 2;
  const SimOutput out = generate(config);
  std::vector<double> share(6, 0.0);
  for (const auto& s : out.truth.subjects) {
    REQUIRE(s.mechanism >= 1);
    REQUIRE(s.mechanism <= 5);
    share[static_cast<std::size_t>(s.mechanism)] += 1.0;
  }
  const double tol = 4.0 * std::sqrt(0.2 * 0.8 / 5000.0);
  for (int m = 1; m <= 5; ++m) CHECK(std::abs(share[static_cast<std::size_t>(m)] / 5000.0 - 0.2) <= tol);
}

TEST_CASE("frailty-visit counts match a two-stage oracle distribution") {
  // gamma_b = 0 and no covariate effects: counts are a gamma-poisson mixture
  SimConfig config = default_config("1-3");
  config.n_subjects = 30000;
  config.gamma.gamma_a = 0.0;
  config.gamma.gamma_z = 0.0;
  config.gamma.gamma_b = 0.0;
  config.seed = 404;
  const SimOutput out = generate(config);
  const int bins = 9;  // counts 0..7 and 8+
  std::vector<double> observed(bins, 0.0);
  for (std::size_t i = 0; i < out.dataset.n_subjects(); ++i) {
    const std::size_t c = out.dataset.event_begin[i + 1] - out.dataset.event_begin[i];
    observed[std::min<std::size_t>(c, bins - 1)] += 1.0;
  }

  // oracle: draw eta ~ Gamma(mean 1, var sigma_eta2), then exponential gaps
  Stream stream(606);
  const double rate0 = std::exp(config.gamma.gamma0);
  std::vector<double> expected(bins, 0.0);
  const int reps = 300000;
  for (int r = 0; r < reps; ++r) {
    const double eta = stream.gamma(1.0 / config.gamma.sigma_eta2, config.gamma.sigma_eta2);
    int count = 0;
    double t = config.t0;
    while (true) {
      t += stream.exponential(eta * rate0);
      if (t > config.censoring) break;
      ++count;
    }
    expected[std::min(count, bins - 1)] += 1.0;
  }
  for (double& e : expected) e *= static_cast<double>(config.n_subjects) / reps;

  double chi2 = 0.0;
  for (int k = 0; k < bins; ++k) {
    REQUIRE(expected[static_cast<std::size_t>(k)] > 5.0);
    const double diff = observed[static_cast<std::size_t>(k)] - expected[static_cast<std::size_t>(k)];
    chi2 += diff * diff / expected[static_cast<std::size_t>(k)];
  }
  CHECK(chi2 < 26.12);  // chi-square df=8 at p=0.001
}

TEST_CASE("config validation names the offending field") {
  CHECK_THROWS_AS(default_config("9-9"), Usage);
  SimConfig config = default_config("1-2");
  config.sigma_eps2 = -1.0;
  CHECK_THROWS_AS(validate_config(config), Validation);
  config = default_config("1-2");
  config.setting = 'B';
  CHECK_THROWS_AS(validate_config(config), Validation);
  config = default_config("1-2");
  config.censoring = config.t0;
  CHECK_THROWS_AS(validate_config(config), Validation);
  config = default_config("1-2");
  config.n_subjects = 0;
  CHECK_THROWS_AS(validate_config(config), Validation);
}

TEST_CASE("json config round-trips and rejects unknown fields") {
  SimConfig config = default_config("2-3");
  config.n_subjects = 123;
  config.seed = 77;
  config.theta = {0.25, -0.5};
  const SimConfig back = config_from_json(config_to_json(config));
  CHECK(back.case_id == config.case_id);
  CHECK(back.setting == config.setting);
  CHECK(back.n_subjects == config.n_subjects);
  CHECK(back.seed == config.seed);
  CHECK(back.theta == config.theta);
  CHECK(back.alpha == config.alpha);
  CHECK(back.gamma.sigma_eta2 == config.gamma.sigma_eta2);

  CHECK_THROWS_AS(config_from_json("{\"n_subjects\": 5}"), Validation);  // case_id required
  CHECK_THROWS_AS(config_from_json("{\"case_id\": \"1-1\", \"bogus\": 1}"), Validation);
  CHECK_THROWS_AS(config_from_json("not json"), Validation);
  const SimConfig partial = config_from_json("{\"case_id\": \"1-3\", \"n_subjects\": 9}");
  CHECK(partial.n_subjects == 9);
  CHECK(partial.gamma.gamma0 == -3.5);  // case default survives partial override
}

TEST_CASE("case defaults follow the protocol parameter sets") {
  const SimConfig c11 = default_config("1-1");
  CHECK(c11.setting == 'A');
  CHECK(c11.gamma.c == 6.0);
  CHECK(c11.beta == std::array<double, 4>{-2.0, -0.5, 0.5, 0.1});
  CHECK(c11.sigma_b_diag == std::array<double, 2>{1.0, 4.0});
  CHECK(c11.censoring == 60.0);

  const SimConfig c12 = default_config("1-2");
  CHECK(c12.gamma.gamma0 == -2.2);
  CHECK(c12.gamma.gamma_a == 0.5);
  CHECK(c12.gamma.gamma_z == 0.5);

  const SimConfig c13 = default_config("1-3");
  CHECK(c13.gamma.gamma0 == -3.5);
  CHECK(c13.gamma.gamma_a == 1.0);
  CHECK(c13.gamma.gamma_z == 1.0);
  CHECK(c13.gamma.gamma_b == 0.2);
  CHECK(c13.gamma.sigma_eta2 == 1.0);

  const SimConfig c14 = default_config("1-4");
  CHECK(c14.gamma.gamma0 == -2.2);
  CHECK(c14.gamma.gamma_a == 0.0);
  CHECK(c14.gamma.gamma_z == 0.0);
  CHECK(c14.gamma.gamma_y == 1.0);

  CHECK(default_config("2-3").alpha == std::array<double, 3>{-2.0, 2.0, 1.0});
  CHECK(default_config("3-1").alpha == std::array<double, 3>{-2.0, 2.0, 1.0});
  CHECK(default_config("3-3").gamma.gamma0 == -3.5);
}

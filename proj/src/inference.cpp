#include "ehrjoint/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <thread>

#include "ehrjoint/errors.hpp"
#include "ehrjoint/joint_estimators.hpp"
#include "ehrjoint/lme.hpp"
#include "ehrjoint/rng.hpp"

namespace ehrjoint {

FitResult fit_method(const PanelDataset& dataset, const DesignSpec& design, Method method) {
  check_identifiable(design, method);
  FitResult out;
  if (is_estimating_equation(method)) {
    JointFitResult fit = fit_joint(dataset, design, method);
    out.beta_names = fit.beta_names;
    out.beta = fit.beta;
    out.theta_names = fit.theta_names;
    out.theta = fit.theta;
  } else if (is_lme_family(method)) {
    LmeFit fit = fit_lme(dataset, design, lme_variant_of(method));
    out.beta_names = fit.beta_names;
    out.beta = fit.beta;
  } else {
    check_design(design, dataset);
    SummaryOlsFit fit = fit_summary_ols(dataset, summary_stat_of(method), design.x_names);
    out.beta_names = fit.beta_names;
    out.beta = fit.beta;
  }
  return out;
}

DesignSpec default_design(const PanelDataset& dataset, Method method) {
  DesignSpec design;
  design.w_names = dataset.covariate_names;
  design.v_names = dataset.covariate_names;
  design.x_names = dataset.covariate_names;
  if (!dataset.covariate_names.empty()) design.z_names = {dataset.covariate_names.front()};
  design.include_time_fixed_effect =
      is_lme_family(method) || method == Method::IIRR || method == Method::IIRRStab;
  return design;
}

void parallel_for(int n, int threads, const std::function<void(int)>& body) {
  if (n <= 0) return;
  if (threads < 1) threads = 1;
  threads = std::min(threads, n);
  if (threads == 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (;;) {
          const int i = next.fetch_add(1, std::memory_order_relaxed);
          if (i >= n) break;
          body(i);
        }
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& worker : pool) worker.join();
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw Validation("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  if (p <= 0.0) return values.front();
  if (p >= 1.0) return values.back();
  const double h = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(h);
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

PanelDataset resample_subjects(const PanelDataset& dataset, Stream& stream) {
  const int n = static_cast<int>(dataset.n_subjects());
  if (n == 0) throw Validation("cannot resample an empty dataset");
  PanelDataset out;
  out.study_origin = dataset.study_origin;
  out.covariate_names = dataset.covariate_names;
  out.baselines.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const int i = stream.uniform_int(n);
    SubjectBaseline base = dataset.baselines[static_cast<std::size_t>(i)];
    base.subject_id = std::to_string(k);
    out.baselines.push_back(std::move(base));
    for (std::size_t e = dataset.event_begin[static_cast<std::size_t>(i)];
         e < dataset.event_begin[static_cast<std::size_t>(i) + 1]; ++e) {
      VisitEvent ev = dataset.events[e];
      ev.subject = k;
      out.events.push_back(ev);
    }
  }
  out.finalize();
  return out;
}

BootstrapResult bootstrap(const PanelDataset& dataset, Method method, const DesignSpec& design,
                          int n_boot, std::uint64_t seed) {
  if (n_boot < 50) throw TooFewBoot("n_boot must be at least 50, got " + std::to_string(n_boot));
  const FitResult point = fit_method(dataset, design, method);
  const auto p = static_cast<std::size_t>(point.beta.size());
  std::vector<std::vector<double>> draws(p);
  int n_failed = 0;
  for (int b = 0; b < n_boot; ++b) {
    Stream stream(substream_key(seed, rngdom::kBootstrap, static_cast<std::uint64_t>(b)));
    PanelDataset resampled = resample_subjects(dataset, stream);
    try {
      const FitResult fit = fit_method(resampled, design, method);
      for (std::size_t j = 0; j < p; ++j) draws[j].push_back(fit.beta[static_cast<int>(j)]);
    } catch (const Error&) {
      ++n_failed;
    }
  }
  if (n_failed == n_boot)
    throw AllResamplesFailed("all " + std::to_string(n_boot) + " resamples failed to fit");

  BootstrapResult out;
  out.beta_names = point.beta_names;
  out.point = point.beta;
  out.n_boot = n_boot;
  out.n_failed = n_failed;
  out.se.resize(point.beta.size());
  out.ci_lower.resize(point.beta.size());
  out.ci_upper.resize(point.beta.size());
  for (std::size_t j = 0; j < p; ++j) {
    const auto& sample = draws[j];
    const auto m = static_cast<double>(sample.size());
    double mean = 0.0;
    for (double v : sample) mean += v;
    mean /= m;
    double ss = 0.0;
    for (double v : sample) ss += (v - mean) * (v - mean);
    const int jj = static_cast<int>(j);
    out.se[jj] = sample.size() > 1 ? std::sqrt(ss / (m - 1.0))
                                   : std::numeric_limits<double>::quiet_NaN();
    out.ci_lower[jj] = quantile(sample, 0.025);
    out.ci_upper[jj] = quantile(sample, 0.975);
  }
  return out;
}

namespace {

// Truth lookup for generated data; coefficients outside the generative model
// (derived count covariates, frailty-link terms) carry no truth and are
// skipped in the report.
std::optional<double> truth_for(const std::string& coefficient, const SimConfig& config) {
  if (coefficient == "(intercept)") return config.beta[0];
  if (coefficient == "A") return config.beta[1];
  if (coefficient == "Z") return config.beta[2];
  if (coefficient == "t") return config.beta[3];
  return std::nullopt;
}

}  // namespace

ReplicationReport run_replications_with(
    const SimConfig& config, const std::vector<std::pair<std::string, MethodFitter>>& fitters,
    int n_reps, std::uint64_t seed, int threads) {
  validate_config(config);
  if (n_reps < 2) throw Validation("n_reps must be at least 2, got " + std::to_string(n_reps));
  if (fitters.empty()) throw Validation("no methods requested");

  // Slot per (replication, method); aggregation replays slots in index order,
  // so the thread count cannot affect any reported number.
  const auto n_methods = fitters.size();
  std::vector<std::vector<std::optional<FitResult>>> slots(
      static_cast<std::size_t>(n_reps), std::vector<std::optional<FitResult>>(n_methods));

  parallel_for(n_reps, threads, [&](int r) {
    SimConfig rep_config = config;
    rep_config.seed = substream_key(seed, rngdom::kReplication, static_cast<std::uint64_t>(r));
    const SimOutput sim = generate(rep_config);
    for (std::size_t f = 0; f < n_methods; ++f) {
      try {
        slots[static_cast<std::size_t>(r)][f] = fitters[f].second(sim.dataset);
      } catch (const Error&) {
        // fit failure on this replication: dropped and counted
      }
    }
  });

  ReplicationReport report;
  report.config = config;
  report.n_reps = n_reps;
  report.seed = seed;
  for (const auto& [name, fn] : fitters) report.methods.push_back(name);

  for (std::size_t f = 0; f < n_methods; ++f) {
    std::vector<std::string> names;
    for (int r = 0; r < n_reps; ++r) {
      const auto& slot = slots[static_cast<std::size_t>(r)][f];
      if (slot) {
        names = slot->beta_names;
        break;
      }
    }
    int n_success = 0;
    for (int r = 0; r < n_reps; ++r)
      if (slots[static_cast<std::size_t>(r)][f]) ++n_success;
    const int n_failed = n_reps - n_success;
    if (n_success == 0) {
      // Every replication failed; keep the method visible in the report.
      ReplicationCell cell;
      cell.method = fitters[f].first;
      cell.coefficient = "(none)";
      cell.truth = cell.bias = cell.sd = cell.rmse = std::numeric_limits<double>::quiet_NaN();
      cell.n_success = 0;
      cell.n_failed = n_failed;
      report.cells.push_back(std::move(cell));
      continue;
    }
    for (std::size_t j = 0; j < names.size(); ++j) {
      const auto truth = truth_for(names[j], config);
      if (!truth) continue;
      std::vector<double> estimates;
      estimates.reserve(static_cast<std::size_t>(n_success));
      for (int r = 0; r < n_reps; ++r) {
        const auto& slot = slots[static_cast<std::size_t>(r)][f];
        if (slot) estimates.push_back(slot->beta[static_cast<int>(j)]);
      }
      const auto m = static_cast<double>(estimates.size());
      double mean = 0.0;
      for (double v : estimates) mean += v;
      mean /= m;
      double ss = 0.0;
      double sq_err = 0.0;
      for (double v : estimates) {
        ss += (v - mean) * (v - mean);
        sq_err += (v - *truth) * (v - *truth);
      }
      ReplicationCell cell;
      cell.method = fitters[f].first;
      cell.coefficient = names[j];
      cell.truth = *truth;
      cell.bias = mean - *truth;
      cell.sd = estimates.size() > 1 ? std::sqrt(ss / (m - 1.0)) : 0.0;
      cell.rmse = std::sqrt(sq_err / m);
      cell.n_success = n_success;
      cell.n_failed = n_failed;
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

ReplicationReport run_replications(const SimConfig& config, const std::vector<Method>& methods,
                                   int n_reps, std::uint64_t seed, int threads) {
  std::vector<std::pair<std::string, MethodFitter>> fitters;
  fitters.reserve(methods.size());
  for (Method m : methods) {
    fitters.emplace_back(method_to_string(m), [m](const PanelDataset& d) {
      return fit_method(d, default_design(d, m), m);
    });
  }
  return run_replications_with(config, fitters, n_reps, seed, threads);
}

}  // namespace ehrjoint

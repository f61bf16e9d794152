#include "ehrjoint/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <sstream>

#include <json.hpp>

#include "ehrjoint/errors.hpp"

namespace ehrjoint {

namespace {

using nlohmann::json;

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

int case_sub(const std::string& case_id) { return case_id[2] - '0'; }

char case_setting(const std::string& case_id) {
  switch (case_id[0]) {
    case '1': return 'A';
    case '2': return 'B';
    case '3': return 'C';
    default: return '?';
  }
}

bool known_case(const std::string& case_id) {
  if (case_id.size() != 3 || case_id[1] != '-') return false;
  const char s = case_id[0], k = case_id[2];
  if (s == '1' || s == '3') return k >= '1' && k <= '6';
  if (s == '2') return k >= '1' && k <= '3';
  return false;
}

// Mechanism parameters: a case's own mechanism reads the config; mixture
// members keep the protocol defaults of their canonical cases, so "a mixture
// of the five processes" stays literal.
VisitParams params_for_mechanism(const SimConfig& config, int mech) {
  const int own = case_sub(config.case_id);
  const char setting = config.setting;
  const int own_mech = setting == 'B' ? (own == 1 ? 1 : 7) : own;
  if (mech == own_mech && own != 6) return config.gamma;
  switch (mech) {
    case 3: return default_config("1-3").gamma;
    case 4: return default_config("1-4").gamma;
    default: return default_config("1-1").gamma;
  }
}

double quantile_type7(std::vector<double>& v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

json config_json(const SimConfig& c) {
  json g;
  g["gamma0"] = c.gamma.gamma0;
  g["gamma_a"] = c.gamma.gamma_a;
  g["gamma_z"] = c.gamma.gamma_z;
  g["gamma_b"] = c.gamma.gamma_b;
  g["gamma_y"] = c.gamma.gamma_y;
  g["sigma_eta2"] = c.gamma.sigma_eta2;
  g["c"] = c.gamma.c;
  json j;
  j["setting"] = std::string(1, c.setting);
  j["case_id"] = c.case_id;
  j["n_subjects"] = c.n_subjects;
  j["beta"] = c.beta;
  j["sigma_eps2"] = c.sigma_eps2;
  j["sigma_b_diag"] = c.sigma_b_diag;
  j["theta"] = c.theta;
  j["gamma"] = g;
  j["alpha"] = c.alpha;
  j["t0"] = c.t0;
  j["censoring"] = c.censoring;
  j["grid_step"] = c.grid_step;
  j["seed"] = c.seed;
  return j;
}

}  // namespace

SimConfig default_config(const std::string& case_id) {
  if (!known_case(case_id)) throw Usage("unknown case_id: " + case_id);
  SimConfig c;
  c.case_id = case_id;
  c.setting = case_setting(case_id);
  const int sub = case_sub(case_id);
  if (sub == 3 && c.setting != 'B') {
    c.gamma.gamma0 = -3.5;
    c.gamma.gamma_a = 1.0;
    c.gamma.gamma_z = 1.0;
  }
  if (sub == 4 && c.setting != 'B') {
    c.gamma.gamma_a = 0.0;
    c.gamma.gamma_z = 0.0;
  }
  if (c.setting == 'C' || case_id == "2-3") c.alpha = {-2.0, 2.0, 1.0};
  return c;
}

void validate_config(const SimConfig& config) {
  if (!known_case(config.case_id)) throw Usage("unknown case_id: " + config.case_id);
  if (config.setting != case_setting(config.case_id))
    throw Validation("setting inconsistent with case_id");
  if (config.n_subjects < 1) throw Validation("n_subjects must be positive");
  if (config.sigma_eps2 < 0.0) throw Validation("sigma_eps2 must be >= 0");
  if (config.sigma_b_diag[0] < 0.0 || config.sigma_b_diag[1] < 0.0)
    throw Validation("sigma_b_diag must be >= 0");
  if (config.gamma.sigma_eta2 < 0.0) throw Validation("gamma.sigma_eta2 must be >= 0");
  if (!(config.censoring > config.t0)) throw Validation("censoring must exceed t0");
  if (!(config.grid_step > 0.0)) throw Validation("grid_step must be positive");
  if (!(config.gamma.c > 0.0)) throw Validation("gamma.c must be positive");
}

SimConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw Validation(std::string("config parse error: ") + e.what());
  }
  if (!j.contains("case_id")) throw Validation("config missing field: case_id");
  SimConfig c;
  try {
    c = default_config(j.at("case_id").get<std::string>());
    static const std::vector<std::string> known{
        "setting", "case_id", "n_subjects", "beta",      "sigma_eps2", "sigma_b_diag", "theta",
        "gamma",   "alpha",   "t0",         "censoring", "grid_step",  "seed"};
    for (const auto& [key, value] : j.items()) {
      (void)value;
      if (std::find(known.begin(), known.end(), key) == known.end())
        throw Validation("config has unknown field: " + key);
    }
    if (j.contains("setting")) {
      const auto s = j.at("setting").get<std::string>();
      if (s.size() != 1 || s[0] != c.setting)
        throw Validation("setting inconsistent with case_id");
    }
    if (j.contains("n_subjects")) c.n_subjects = j.at("n_subjects").get<int>();
    if (j.contains("beta")) c.beta = j.at("beta").get<std::array<double, 4>>();
    if (j.contains("sigma_eps2")) c.sigma_eps2 = j.at("sigma_eps2").get<double>();
    if (j.contains("sigma_b_diag"))
      c.sigma_b_diag = j.at("sigma_b_diag").get<std::array<double, 2>>();
    if (j.contains("theta")) c.theta = j.at("theta").get<std::array<double, 2>>();
    if (j.contains("alpha")) c.alpha = j.at("alpha").get<std::array<double, 3>>();
    if (j.contains("t0")) c.t0 = j.at("t0").get<double>();
    if (j.contains("censoring")) c.censoring = j.at("censoring").get<double>();
    if (j.contains("grid_step")) c.grid_step = j.at("grid_step").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("gamma")) {
      const json& g = j.at("gamma");
      static const std::vector<std::string> gknown{"gamma0",  "gamma_a",    "gamma_z", "gamma_b",
                                                   "gamma_y", "sigma_eta2", "c"};
      for (const auto& [key, value] : g.items()) {
        (void)value;
        if (std::find(gknown.begin(), gknown.end(), key) == gknown.end())
          throw Validation("config has unknown field: gamma." + key);
      }
      if (g.contains("gamma0")) c.gamma.gamma0 = g.at("gamma0").get<double>();
      if (g.contains("gamma_a")) c.gamma.gamma_a = g.at("gamma_a").get<double>();
      if (g.contains("gamma_z")) c.gamma.gamma_z = g.at("gamma_z").get<double>();
      if (g.contains("gamma_b")) c.gamma.gamma_b = g.at("gamma_b").get<double>();
      if (g.contains("gamma_y")) c.gamma.gamma_y = g.at("gamma_y").get<double>();
      if (g.contains("sigma_eta2")) c.gamma.sigma_eta2 = g.at("sigma_eta2").get<double>();
      if (g.contains("c")) c.gamma.c = g.at("c").get<double>();
    }
  } catch (const json::exception& e) {
    throw Validation(std::string("config field error: ") + e.what());
  }
  validate_config(c);
  return c;
}

std::string config_to_json(const SimConfig& config) { return config_json(config).dump(2) + "\n"; }

std::vector<double> gen_visits_renewal(Stream& stream, double rate, double t0, double censoring) {
  if (!(rate >= 0.0) || !std::isfinite(rate)) throw Validation("nonpositive visit rate");
  std::vector<double> times;
  if (rate == 0.0) return times;  // degenerate no-visit limit
  double t = t0;
  while (times.size() < 20000) {  // runaway guard against extreme rates
    double gap = stream.exponential(rate);
    if (!(gap > 1e-9)) gap = 1e-9;  // keeps timestamps strictly increasing in double
    t += gap;
    if (t > censoring) break;
    times.push_back(t);
  }
  return times;
}

ThresholdVisits gen_visits_threshold(Stream& stream, double base, double slope, double sigma_eps,
                                     double threshold, double grid_step, double t0,
                                     double censoring) {
  ThresholdVisits out;
  const int n_grid = static_cast<int>((censoring - t0) / grid_step + 1e-9);
  const double sd = std::sqrt(sigma_eps);
  for (int jj = 1; jj <= n_grid; ++jj) {
    const double t = t0 + jj * grid_step;
    if (t > censoring) break;  // accumulated rounding can push past the bound
    const double y = base + slope * t + sd * stream.normal();
    if (y > threshold) {
      out.times.push_back(t);
      out.values.push_back(y);
    }
  }
  return out;
}

double threshold_for(const SimConfig& config) {
  static std::mutex cache_mutex;
  static std::map<std::string, double> cache;

  const bool coupled = config.setting != 'A';
  std::ostringstream key;
  key.precision(17);
  key << coupled << ':' << config.beta[0] << ',' << config.beta[1] << ',' << config.beta[2] << ','
      << config.beta[3] << ',' << config.sigma_eps2 << ',' << config.sigma_b_diag[0] << ','
      << config.sigma_b_diag[1] << ',' << config.theta[0] << ',' << config.theta[1] << ','
      << config.gamma.sigma_eta2 << ',' << config.t0 << ',' << config.censoring << ','
      << config.grid_step;
  {
    std::lock_guard<std::mutex> lock(cache_mutex);
    const auto it = cache.find(key.str());
    if (it != cache.end()) return it->second;
  }

  constexpr std::uint64_t kThresholdSeed = 0x7d1afc2e94b05c63ULL;
  Stream stream(substream_key(kThresholdSeed, rngdom::kThreshold, 0));
  const int n_grid = static_cast<int>((config.censoring - config.t0) / config.grid_step + 1e-9);
  const double sd0 = std::sqrt(config.sigma_b_diag[0]);
  const double sd1 = std::sqrt(config.sigma_b_diag[1]);
  const double sde = std::sqrt(config.sigma_eps2);
  const double s2 = config.gamma.sigma_eta2;
  constexpr std::size_t kDraws = 1000000;
  std::vector<double> y(kDraws);
  for (std::size_t k = 0; k < kDraws; ++k) {
    const double t = config.t0 + (1 + stream.uniform_int(n_grid)) * config.grid_step;
    const double A = stream.bernoulli(0.5) ? 1.0 : 0.0;
    const double Z = stream.normal();
    double m0 = 0.0, m1 = 0.0;
    if (coupled && s2 > 0.0) {
      const double eta = stream.gamma(1.0 / s2, s2);
      m0 = config.theta[0] * (eta - 1.0);
      m1 = config.theta[1] * (eta - 1.0);
    }
    const double b0 = m0 + sd0 * stream.normal();
    const double b1 = m1 + sd1 * stream.normal();
    y[k] = (config.beta[0] + b0) + (config.beta[1] + b1) * A + config.beta[2] * Z +
           config.beta[3] * t + sde * stream.normal();
  }
  const double thr = quantile_type7(y, 0.8);
  std::lock_guard<std::mutex> lock(cache_mutex);
  cache[key.str()] = thr;
  return thr;
}

SimOutput generate(const SimConfig& config) {
  validate_config(config);
  const char setting = config.setting;
  const int sub = case_sub(config.case_id);
  const bool mixture = sub == 6;
  const double C = config.censoring;
  const double sde = std::sqrt(config.sigma_eps2);
  const double sd0 = std::sqrt(config.sigma_b_diag[0]);
  const double sd1 = std::sqrt(config.sigma_b_diag[1]);
  const double s2 = config.gamma.sigma_eta2;

  // threshold needed iff mechanism 5 can occur
  const bool needs_threshold = (setting != 'B') && (sub == 5 || mixture);
  const double threshold = needs_threshold ? threshold_for(config) : 0.0;

  SimOutput out;
  PanelDataset& d = out.dataset;
  d.study_origin = config.t0;
  d.covariate_names = {"A", "Z"};
  d.baselines.reserve(static_cast<std::size_t>(config.n_subjects));
  out.truth.subjects.reserve(static_cast<std::size_t>(config.n_subjects));
  out.truth.threshold_used = needs_threshold;
  out.truth.threshold = threshold;

  for (int i = 0; i < config.n_subjects; ++i) {
    // draw order per subject: A, Z, [eta], b0, b1, [mechanism], visit draws,
    // outcome noise, recording flags
    Stream stream(substream_key(config.seed, rngdom::kSubject, static_cast<std::uint64_t>(i)));
    SubjectTruth truth;
    const double A = stream.bernoulli(0.5) ? 1.0 : 0.0;
    const double Z = stream.normal();
    if (setting != 'A') truth.eta = s2 > 0.0 ? stream.gamma(1.0 / s2, s2) : 1.0;
    const double m0 = setting == 'A' ? 0.0 : config.theta[0] * (truth.eta - 1.0);
    const double m1 = setting == 'A' ? 0.0 : config.theta[1] * (truth.eta - 1.0);
    truth.b0 = m0 + sd0 * stream.normal();
    truth.b1 = m1 + sd1 * stream.normal();

    int mech;
    if (setting == 'B') {
      mech = sub == 1 ? 1 : 7;
    } else if (mixture) {
      mech = 1 + stream.uniform_int(5);
    } else {
      mech = sub;
    }
    truth.mechanism = mech;

    const double base =
        (config.beta[0] + truth.b0) + (config.beta[1] + truth.b1) * A + config.beta[2] * Z;
    const auto mu = [&](double t) { return base + config.beta[3] * t; };

    const VisitParams vp = params_for_mechanism(config, mech);
    std::vector<double> times;
    std::vector<double> values;
    bool values_ready = false;
    switch (mech) {
      case 1: {
        for (int jj = 1; config.t0 + jj * vp.c <= C; ++jj)
          times.push_back(config.t0 + jj * vp.c);
        break;
      }
      case 2: {
        const double rate = std::exp(vp.gamma0 + vp.gamma_a * A + vp.gamma_z * Z);
        times = gen_visits_renewal(stream, rate, config.t0, C);
        break;
      }
      case 3: {
        // visit frailty with mean exp(-gamma_b * b1): higher-slope subjects
        // visit less often, tying visit intensity to the latent trajectory
        const double mean_eta = std::exp(-vp.gamma_b * truth.b1);
        truth.eta_visit =
            vp.sigma_eta2 > 0.0 ? stream.gamma(1.0 / vp.sigma_eta2, vp.sigma_eta2 * mean_eta)
                                : mean_eta;
        const double rate =
            truth.eta_visit * std::exp(vp.gamma0 + vp.gamma_a * A + vp.gamma_z * Z);
        times = gen_visits_renewal(stream, rate, config.t0, C);
        break;
      }
      case 4: {
        // outcome-driven renewal; the first gap uses the noise-free mean at t0
        double y_prev = mu(config.t0);
        double t = config.t0;
        while (times.size() < 20000) {
          double rate =
              std::exp(vp.gamma0 + vp.gamma_a * A + vp.gamma_z * Z + vp.gamma_y * y_prev);
          if (!(rate > 0.0)) break;  // intensity underflowed: no further visits
          if (!std::isfinite(rate)) rate = 1e300;
          double gap = stream.exponential(rate);
          if (!(gap > 1e-9)) gap = 1e-9;
          t += gap;
          if (t > C) break;
          const double y = mu(t) + sde * stream.normal();
          times.push_back(t);
          values.push_back(y);
          y_prev = y;
        }
        values_ready = true;
        break;
      }
      case 5: {
        ThresholdVisits tv = gen_visits_threshold(stream, base, config.beta[3], config.sigma_eps2,
                                                  threshold, config.grid_step, config.t0, C);
        times = std::move(tv.times);
        values = std::move(tv.values);
        values_ready = true;
        break;
      }
      case 7: {
        const double rate =
            truth.eta * std::exp(vp.gamma0 + vp.gamma_a * A + vp.gamma_z * Z);
        times = gen_visits_renewal(stream, rate, config.t0, C);
        break;
      }
      default: throw Usage("unknown mechanism");
    }
    if (!values_ready)
      for (double t : times) values.push_back(mu(t) + sde * stream.normal());

    SubjectBaseline b;
    b.subject_id = std::to_string(i);
    b.censoring_time = C;
    b.covariates = {A, Z};
    d.baselines.push_back(std::move(b));

    for (std::size_t k = 0; k < times.size(); ++k) {
      VisitEvent e;
      e.subject = i;
      e.time = times[k];
      if (setting == 'A') {
        e.recorded = true;
      } else {
        // alpha parametrizes missingness: recording probability is the
        // complement of logistic(alpha'V)
        const double p =
            1.0 - logistic(config.alpha[0] + config.alpha[1] * A + config.alpha[2] * Z);
        e.recorded = stream.bernoulli(p);
      }
      if (e.recorded) e.outcome = values[k];
      d.events.push_back(e);
    }
    out.truth.subjects.push_back(truth);
  }

  d.finalize();
  require_valid(d);
  return out;
}

std::string truth_to_json(const SimConfig& config, const SimTruth& truth) {
  json j;
  j["config"] = config_json(config);
  if (truth.threshold_used)
    j["threshold"] = truth.threshold;
  else
    j["threshold"] = nullptr;
  json subjects = json::array();
  for (std::size_t i = 0; i < truth.subjects.size(); ++i) {
    const SubjectTruth& s = truth.subjects[i];
    json js;
    js["subject_id"] = std::to_string(i);
    js["eta"] = s.eta;
    js["b0"] = s.b0;
    js["b1"] = s.b1;
    js["mechanism"] = s.mechanism;
    js["eta_visit"] = s.eta_visit;
    subjects.push_back(std::move(js));
  }
  j["subjects"] = std::move(subjects);
  return j.dump(2) + "\n";
}

}  // namespace ehrjoint

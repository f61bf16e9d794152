#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ehrjoint/data_model.hpp"
#include "ehrjoint/design.hpp"
#include "ehrjoint/errors.hpp"
#include "ehrjoint/inference.hpp"
#include "ehrjoint/joint_estimators.hpp"
#include "ehrjoint/lme.hpp"
#include "ehrjoint/simgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ehrjoint;

namespace {

constexpr const char* kArtifactVersion = "0.1.0";

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Validation("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Validation("cannot write file: " + path.string());
  out << text;
  if (!out) throw Validation("write failed: " + path.string());
}

// FNV-1a over tagged segments; the tag keeps adjacent inputs from aliasing.
class InputHash {
 public:
  void feed(const std::string& tag, const std::string& bytes) {
    feed_bytes(tag);
    feed_bytes("\x1f");
    feed_bytes(bytes);
    feed_bytes("\x1e");
  }
  std::string hex() const {
    std::ostringstream ss;
    ss << std::hex << std::setw(16) << std::setfill('0') << h_;
    return ss.str();
  }

 private:
  void feed_bytes(const std::string& s) {
    for (unsigned char c : s) {
      h_ ^= static_cast<std::uint64_t>(c);
      h_ *= 1099511628211ULL;
    }
  }
  std::uint64_t h_ = 14695981039346656037ULL;
};

struct SeedChoice {
  std::uint64_t value = 0;
  std::string source;  // "config" | "flag" | "env"
};

// EHRJOINT_SEED overrides whatever the config or flag supplied.
SeedChoice effective_seed(std::uint64_t base, const std::string& base_source) {
  if (const char* env = std::getenv("EHRJOINT_SEED")) {
    const std::string text(env);
    std::uint64_t value = 0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size() || text.empty())
      throw Usage("EHRJOINT_SEED must be a decimal unsigned integer, got '" + text + "'");
    return {value, "env"};
  }
  return {base, base_source};
}

void write_manifest(const fs::path& out_dir, const std::string& command, const InputHash& hash,
                    const SeedChoice& seed, double wall_seconds, int threads,
                    const std::vector<std::string>& outputs) {
  json m;
  m["command"] = command;
  m["config_hash"] = hash.hex();
  m["seed"] = seed.value;
  m["seed_source"] = seed.source;
  m["artifact_version"] = kArtifactVersion;
  m["wall_clock_seconds"] = wall_seconds;
  m["threads"] = threads;
  m["outputs"] = outputs;
  write_file(out_dir / "manifest.json", m.dump(2) + "\n");
}

json design_to_json(const DesignSpec& design) {
  json d;
  d["w_names"] = design.w_names;
  d["v_names"] = design.v_names;
  d["x_names"] = design.x_names;
  d["z_names"] = design.z_names;
  d["include_time_fixed_effect"] = design.include_time_fixed_effect;
  return d;
}

// Partial design files override only the fields they name.
DesignSpec parse_design(const std::string& text, DesignSpec base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Validation(std::string("design file is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Validation("design file must hold a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "w_names")
        base.w_names = value.get<std::vector<std::string>>();
      else if (key == "v_names")
        base.v_names = value.get<std::vector<std::string>>();
      else if (key == "x_names")
        base.x_names = value.get<std::vector<std::string>>();
      else if (key == "z_names")
        base.z_names = value.get<std::vector<std::string>>();
      else if (key == "include_time_fixed_effect")
        base.include_time_fixed_effect = value.get<bool>();
      else
        throw Validation("unknown design field: " + key);
    }
  } catch (const json::exception& e) {
    throw Validation(std::string("design field error: ") + e.what());
  }
  return base;
}

int count_recorded(const PanelDataset& dataset) {
  int k = 0;
  for (const auto& e : dataset.events) k += e.recorded ? 1 : 0;
  return k;
}

std::string counting_convention(Method method) {
  // Which events drive the visit-process step of each estimating equation.
  switch (method) {
    case Method::EHRJoint:
    case Method::AdaptedLiang:
      return "all visit events";
    case Method::JMVLLiang:
    case Method::JMVLLY:
    case Method::IIRR:
    case Method::IIRRStab:
      return "measurement events only";
    default:
      return "recorded measurements (no counting process)";
  }
}

struct EstimateRow {
  std::string parameter;
  std::string coefficient;
  double estimate = 0.0;
  bool has_boot = false;
  double boot_se = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
};

void write_estimates_csv(const fs::path& path, const std::vector<EstimateRow>& rows,
                         bool with_boot) {
  std::ostringstream ss;
  ss << "parameter,coefficient,estimate";
  if (with_boot) ss << ",boot_se,boot_ci_lower,boot_ci_upper";
  ss << "\n";
  for (const auto& r : rows) {
    ss << r.parameter << "," << r.coefficient << "," << fmt(r.estimate);
    if (with_boot) {
      if (r.has_boot)
        ss << "," << fmt(r.boot_se) << "," << fmt(r.ci_lower) << "," << fmt(r.ci_upper);
      else
        ss << ",,,";
    }
    ss << "\n";
  }
  write_file(path, ss.str());
}

int run_simulate(const std::string& config_path, const std::string& out_dir, int threads) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string text = read_file(config_path);
  SimConfig config = config_from_json(text);
  const SeedChoice seed = effective_seed(config.seed, "config");
  config.seed = seed.value;

  const SimOutput sim = generate(config);
  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  export_csv(sim.dataset, (out / "baselines.csv").string(), (out / "events.csv").string());
  write_file(out / "truth.json", truth_to_json(config, sim.truth));

  InputHash hash;
  hash.feed("command", "simulate");
  hash.feed("config", text);
  hash.feed("seed", std::to_string(seed.value));
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(out, "simulate", hash, seed, wall, threads,
                 {"baselines.csv", "events.csv", "truth.json"});
  return 0;
}

int run_fit(const std::string& data_dir, const std::string& design_path,
            const std::string& method_name, const std::string& out_dir, int n_boot,
            std::uint64_t seed_flag, bool seed_given, int threads) {
  const auto t0 = std::chrono::steady_clock::now();
  const Method method = method_from_string(method_name);
  const fs::path data(data_dir);
  const std::string baselines_text = read_file(data / "baselines.csv");
  const std::string events_text = read_file(data / "events.csv");
  const PanelDataset dataset =
      ingest_csv((data / "baselines.csv").string(), (data / "events.csv").string());
  require_valid(dataset);

  DesignSpec design = default_design(dataset, method);
  std::string design_text;
  if (!design_path.empty()) {
    design_text = read_file(design_path);
    design = parse_design(design_text, design);
  }

  json diag;
  diag["method"] = method_to_string(method);
  diag["design"] = design_to_json(design);
  diag["n_subjects"] = dataset.n_subjects();
  diag["n_events"] = dataset.events.size();
  diag["n_recorded"] = count_recorded(dataset);
  diag["counting_convention"] = counting_convention(method);

  std::vector<EstimateRow> rows;
  if (is_estimating_equation(method)) {
    const JointFitResult fit = fit_joint(dataset, design, method);
    for (std::size_t j = 0; j < fit.beta_names.size(); ++j)
      rows.push_back({"beta", fit.beta_names[j], fit.beta[static_cast<int>(j)]});
    for (std::size_t j = 0; j < fit.theta_names.size(); ++j)
      rows.push_back({"theta", fit.theta_names[j], fit.theta[static_cast<int>(j)]});
    json visit;
    json gamma;
    for (std::size_t j = 0; j < design.w_names.size(); ++j)
      gamma[design.w_names[j]] = fit.visit.gamma[static_cast<int>(j)];
    visit["gamma"] = gamma;
    visit["sigma_eta2"] = fit.visit.sigma_eta2;
    visit["iterations"] = fit.visit.iterations;
    visit["converged"] = fit.visit.converged;
    diag["visit_model"] = visit;
    if (fit.obs) {
      json obs;
      json alpha;
      alpha["(intercept)"] = fit.obs->alpha[0];
      for (std::size_t j = 0; j < design.v_names.size(); ++j)
        alpha[design.v_names[j]] = fit.obs->alpha[static_cast<int>(j) + 1];
      obs["alpha"] = alpha;
      obs["iterations"] = fit.obs->iterations;
      obs["converged"] = fit.obs->converged;
      diag["observation_model"] = obs;
    }
    diag["condition_number"] = fit.condition_number;
  } else if (is_lme_family(method)) {
    const LmeFit fit = fit_lme(dataset, design, lme_variant_of(method));
    for (std::size_t j = 0; j < fit.beta_names.size(); ++j)
      rows.push_back({"beta", fit.beta_names[j], fit.beta[static_cast<int>(j)]});
    const Eigen::Matrix2d sb = fit.sigma_b();
    diag["sigma_b"] = {{sb(0, 0), sb(0, 1)}, {sb(1, 0), sb(1, 1)}};
    diag["sigma_eps2"] = fit.sigma_eps2;
    diag["loglik"] = fit.loglik;
    diag["converged"] = fit.converged;
    diag["evaluations"] = fit.evaluations;
  } else {
    check_design(design, dataset);
    const SummaryOlsFit fit = fit_summary_ols(dataset, summary_stat_of(method), design.x_names);
    for (std::size_t j = 0; j < fit.beta_names.size(); ++j)
      rows.push_back({"beta", fit.beta_names[j], fit.beta[static_cast<int>(j)]});
  }

  SeedChoice seed = effective_seed(seed_flag, seed_given ? "flag" : "config");
  if (n_boot > 0) {
    const BootstrapResult bs = bootstrap(dataset, method, design, n_boot, seed.value);
    for (auto& r : rows) {
      if (r.parameter != "beta") continue;
      for (std::size_t j = 0; j < bs.beta_names.size(); ++j) {
        if (bs.beta_names[j] != r.coefficient) continue;
        const int jj = static_cast<int>(j);
        r.has_boot = true;
        r.boot_se = bs.se[jj];
        r.ci_lower = bs.ci_lower[jj];
        r.ci_upper = bs.ci_upper[jj];
      }
    }
    json boot;
    boot["n_boot"] = bs.n_boot;
    boot["n_failed"] = bs.n_failed;
    boot["seed"] = seed.value;
    diag["bootstrap"] = boot;
  }

  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  write_estimates_csv(out / "estimates.csv", rows, n_boot > 0);
  write_file(out / "diagnostics.json", diag.dump(2) + "\n");

  InputHash hash;
  hash.feed("command", "fit");
  hash.feed("baselines", baselines_text);
  hash.feed("events", events_text);
  hash.feed("design", design_text);
  hash.feed("method", method_name);
  hash.feed("n_boot", std::to_string(n_boot));
  if (n_boot > 0) hash.feed("seed", std::to_string(seed.value));
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(out, "fit", hash, seed, wall, threads, {"estimates.csv", "diagnostics.json"});
  return 0;
}

void write_report_csv(const fs::path& path, const ReplicationReport& report,
                      const std::string& case_column) {
  std::ostringstream ss;
  if (!case_column.empty()) ss << "case,";
  ss << "method,coefficient,bias_x100,sd_x100,rmse_x100,failures\n";
  for (const auto& c : report.cells) {
    if (!case_column.empty()) ss << case_column << ",";
    ss << c.method << "," << c.coefficient << "," << fmt(c.bias * 100.0) << ","
       << fmt(c.sd * 100.0) << "," << fmt(c.rmse * 100.0) << "," << c.n_failed << "\n";
  }
  write_file(path, ss.str());
}

json report_to_json(const ReplicationReport& report, const SeedChoice& seed) {
  json out;
  out["config"] = json::parse(config_to_json(report.config));
  out["n_reps"] = report.n_reps;
  out["seed"] = seed.value;
  out["seed_source"] = seed.source;
  out["methods"] = report.methods;
  json cells = json::array();
  for (const auto& c : report.cells) {
    json cell;
    cell["method"] = c.method;
    cell["coefficient"] = c.coefficient;
    cell["truth"] = c.truth;
    cell["bias"] = c.bias;
    cell["sd"] = c.sd;
    cell["rmse"] = c.rmse;
    cell["bias_x100"] = c.bias * 100.0;
    cell["sd_x100"] = c.sd * 100.0;
    cell["rmse_x100"] = c.rmse * 100.0;
    cell["n_success"] = c.n_success;
    cell["n_failed"] = c.n_failed;
    cells.push_back(cell);
  }
  out["cells"] = cells;
  return out;
}

int run_benchmark(const std::string& config_path, const std::string& out_dir, int threads) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string text = read_file(config_path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Validation(std::string("benchmark config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Validation("benchmark config must hold a JSON object");

  std::vector<std::string> cases;
  std::vector<std::string> method_names;
  int n_reps = 200;
  std::uint64_t seed_base = 0;
  bool seed_present = false;
  std::optional<int> n_subjects;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "cases")
        cases = value.get<std::vector<std::string>>();
      else if (key == "methods")
        method_names = value.get<std::vector<std::string>>();
      else if (key == "n_reps")
        n_reps = value.get<int>();
      else if (key == "seed") {
        seed_base = value.get<std::uint64_t>();
        seed_present = true;
      } else if (key == "n_subjects")
        n_subjects = value.get<int>();
      else
        throw Validation("unknown benchmark field: " + key);
    }
  } catch (const json::exception& e) {
    throw Validation(std::string("benchmark field error: ") + e.what());
  }
  if (cases.empty()) throw Validation("benchmark config missing field: cases");
  if (method_names.empty()) throw Validation("benchmark config missing field: methods");
  if (!seed_present) throw Validation("benchmark config missing field: seed");

  std::vector<Method> methods;
  methods.reserve(method_names.size());
  for (const auto& name : method_names) methods.push_back(method_from_string(name));

  const SeedChoice seed = effective_seed(seed_base, "config");

  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  std::vector<std::string> outputs;
  std::ostringstream combined;
  combined << "case,method,coefficient,bias_x100,sd_x100,rmse_x100,failures\n";
  for (const auto& case_id : cases) {
    SimConfig config = default_config(case_id);
    if (n_subjects) config.n_subjects = *n_subjects;
    const ReplicationReport report =
        run_replications(config, methods, n_reps, seed.value, threads);
    const std::string case_dir = "case-" + case_id;
    fs::create_directories(out / case_dir);
    write_report_csv(out / case_dir / "report.csv", report, "");
    write_file(out / case_dir / "report.json", report_to_json(report, seed).dump(2) + "\n");
    outputs.push_back(case_dir + "/report.csv");
    outputs.push_back(case_dir + "/report.json");
    for (const auto& c : report.cells)
      combined << case_id << "," << c.method << "," << c.coefficient << "," << fmt(c.bias * 100.0)
               << "," << fmt(c.sd * 100.0) << "," << fmt(c.rmse * 100.0) << "," << c.n_failed
               << "\n";
  }
  write_file(out / "combined.csv", combined.str());
  outputs.push_back("combined.csv");

  InputHash hash;
  hash.feed("command", "benchmark");
  hash.feed("config", text);
  hash.feed("seed", std::to_string(seed.value));
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(out, "benchmark", hash, seed, wall, threads, outputs);
  return 0;
}

int run_validate(const std::string& data_dir) {
  const fs::path data(data_dir);
  const PanelDataset dataset =
      ingest_csv((data / "baselines.csv").string(), (data / "events.csv").string());
  const ValidationReport report = validate(dataset);
  if (!report.pass()) {
    for (const auto& v : report.violations)
      std::cerr << v.code << " subject=" << v.subject_id << ": " << v.detail << "\n";
    throw Validation(std::to_string(report.violations.size()) + " violation(s) found");
  }
  std::cout << "ok: " << dataset.n_subjects() << " subjects, " << dataset.events.size()
            << " events (" << count_recorded(dataset) << " recorded)\n";
  return 0;
}

// Renders benchmark outputs as an aligned table, one block per case.
int run_report(const std::vector<std::string>& inputs, const std::string& out_path) {
  std::vector<fs::path> files;
  for (const auto& input : inputs) {
    const fs::path p(input);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& entry : fs::recursive_directory_iterator(p))
        if (entry.is_regular_file() && entry.path().filename() == "report.json")
          found.push_back(entry.path());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(p);
    }
  }
  if (files.empty()) throw Validation("no report.json found under the given inputs");

  std::vector<std::array<std::string, 7>> rows;
  rows.push_back({"case", "method", "coefficient", "bias_x100", "sd_x100", "rmse_x100", "failures"});
  for (const auto& file : files) {
    json j;
    try {
      j = json::parse(read_file(file));
    } catch (const json::exception& e) {
      throw Validation("cannot parse " + file.string() + ": " + e.what());
    }
    std::string case_id;
    try {
      case_id = j.at("config").at("case_id").get<std::string>();
      for (const auto& cell : j.at("cells")) {
        std::ostringstream b, s, r;
        b << std::fixed << std::setprecision(2) << cell.at("bias_x100").get<double>();
        s << std::fixed << std::setprecision(2) << cell.at("sd_x100").get<double>();
        r << std::fixed << std::setprecision(2) << cell.at("rmse_x100").get<double>();
        rows.push_back({case_id, cell.at("method").get<std::string>(),
                        cell.at("coefficient").get<std::string>(), b.str(), s.str(), r.str(),
                        std::to_string(cell.at("n_failed").get<int>())});
      }
    } catch (const json::exception& e) {
      throw Validation("unexpected report shape in " + file.string() + ": " + e.what());
    }
  }

  std::array<std::size_t, 7> width{};
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream table;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c)
      table << std::left << std::setw(static_cast<int>(width[c]) + 2) << row[c];
    table << "\n";
  }
  std::cout << table.str();
  if (!out_path.empty()) write_file(out_path, table.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Panel-data joint modeling toolkit: informative visiting and observation"};
  app.require_subcommand(1);
  int threads = static_cast<int>(std::thread::hardware_concurrency());
  if (threads < 1) threads = 1;
  app.add_option("--threads", threads,
                 "worker threads; results are identical for any thread count");

  auto* sim = app.add_subcommand("simulate", "generate a synthetic panel dataset");
  std::string sim_config, sim_out;
  sim->add_option("--config", sim_config, "SimConfig JSON path")->required();
  sim->add_option("--out", sim_out, "output directory")->required();

  auto* fit = app.add_subcommand("fit", "fit one method to a dataset directory");
  std::string fit_data, fit_design, fit_method_name, fit_out;
  int fit_boot = 0;
  std::uint64_t fit_seed = 20260814ULL;
  fit->add_option("--data", fit_data, "directory holding baselines.csv and events.csv")
      ->required();
  fit->add_option("--method", fit_method_name, "method name, e.g. ehrjoint")->required();
  fit->add_option("--out", fit_out, "output directory")->required();
  fit->add_option("--design", fit_design, "design JSON path (partial override)");
  fit->add_option("--boot", fit_boot, "bootstrap resamples (0 = off; 200 is conventional)");
  auto* fit_seed_opt = fit->add_option("--seed", fit_seed, "bootstrap seed");

  auto* bench = app.add_subcommand("benchmark", "replication study across cases and methods");
  std::string bench_config, bench_out;
  bench->add_option("--config", bench_config, "benchmark JSON path")->required();
  bench->add_option("--out", bench_out, "output directory")->required();

  auto* val = app.add_subcommand("validate", "validate a dataset directory");
  std::string val_data;
  val->add_option("--data", val_data, "directory holding baselines.csv and events.csv")
      ->required();

  auto* rep = app.add_subcommand("report", "render benchmark outputs as an aligned table");
  std::vector<std::string> rep_inputs;
  std::string rep_out;
  rep->add_option("inputs", rep_inputs, "report.json files or directories to scan")->required();
  rep->add_option("--out", rep_out, "also write the table to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorCode::Usage);
  }

  try {
    if (*sim) return run_simulate(sim_config, sim_out, threads);
    if (*fit)
      return run_fit(fit_data, fit_design, fit_method_name, fit_out, fit_boot, fit_seed,
                     fit_seed_opt->count() > 0, threads);
    if (*bench) return run_benchmark(bench_config, bench_out, threads);
    if (*val) return run_validate(val_data);
    if (*rep) return run_report(rep_inputs, rep_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorCode::Generic);
  }
  return 0;
}

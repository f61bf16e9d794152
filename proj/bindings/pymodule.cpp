#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ehrjoint/data_model.hpp"
#include "ehrjoint/design.hpp"
#include "ehrjoint/inference.hpp"
#include "ehrjoint/simgen.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace ehrjoint;

namespace {

PanelDataset load_dir(const std::string& data_dir) {
  const fs::path data(data_dir);
  PanelDataset dataset =
      ingest_csv((data / "baselines.csv").string(), (data / "events.csv").string());
  require_valid(dataset);
  return dataset;
}

void simulate_to_dir(const std::string& config_json, const std::string& out_dir) {
  const SimConfig config = config_from_json(config_json);
  const SimOutput sim = generate(config);
  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  export_csv(sim.dataset, (out / "baselines.csv").string(), (out / "events.csv").string());
  std::ofstream truth(out / "truth.json", std::ios::binary);
  truth << truth_to_json(config, sim.truth);
}

py::dict fit_dir(const std::string& data_dir, const std::string& method_name) {
  const PanelDataset dataset = load_dir(data_dir);
  const Method method = method_from_string(method_name);
  const FitResult fit = fit_method(dataset, default_design(dataset, method), method);
  py::dict beta;
  for (std::size_t j = 0; j < fit.beta_names.size(); ++j)
    beta[py::str(fit.beta_names[j])] = fit.beta[static_cast<int>(j)];
  py::dict theta;
  for (std::size_t j = 0; j < fit.theta_names.size(); ++j)
    theta[py::str(fit.theta_names[j])] = fit.theta[static_cast<int>(j)];
  py::dict out;
  out["method"] = method_name;
  out["beta"] = beta;
  out["theta"] = theta;
  return out;
}

py::list replicate(const std::string& case_id, const std::vector<std::string>& method_names,
                   int n_reps, std::uint64_t seed, int n_subjects, int threads) {
  SimConfig config = default_config(case_id);
  if (n_subjects > 0) config.n_subjects = n_subjects;
  std::vector<Method> methods;
  methods.reserve(method_names.size());
  for (const auto& name : method_names) methods.push_back(method_from_string(name));
  const ReplicationReport report = run_replications(config, methods, n_reps, seed, threads);
  py::list cells;
  for (const auto& c : report.cells) {
    py::dict cell;
    cell["method"] = c.method;
    cell["coefficient"] = c.coefficient;
    cell["truth"] = c.truth;
    cell["bias"] = c.bias;
    cell["sd"] = c.sd;
    cell["rmse"] = c.rmse;
    cell["n_success"] = c.n_success;
    cell["n_failed"] = c.n_failed;
    cells.append(cell);
  }
  return cells;
}

py::list validate_dir(const std::string& data_dir) {
  const fs::path data(data_dir);
  const PanelDataset dataset =
      ingest_csv((data / "baselines.csv").string(), (data / "events.csv").string());
  const ValidationReport report = validate(dataset);
  py::list out;
  for (const auto& v : report.violations) {
    std::ostringstream ss;
    ss << v.code << " subject=" << v.subject_id << ": " << v.detail;
    out.append(ss.str());
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Panel-data joint modeling under informative visiting and observation";
  m.def("simulate_to_dir", &simulate_to_dir, py::arg("config_json"), py::arg("out_dir"),
        "Generate a dataset from a SimConfig JSON string into a directory.");
  m.def("fit_dir", &fit_dir, py::arg("data_dir"), py::arg("method"),
        "Fit one method to baselines.csv/events.csv and return named coefficients.");
  m.def("replicate", &replicate, py::arg("case_id"), py::arg("methods"), py::arg("n_reps"),
        py::arg("seed"), py::arg("n_subjects") = 0, py::arg("threads") = 1,
        "Monte Carlo bias/SD/RMSE cells for a protocol case.");
  m.def("validate_dir", &validate_dir, py::arg("data_dir"),
        "List dataset violations; empty means valid.");
  m.def("default_config_json", [](const std::string& case_id) {
    return config_to_json(default_config(case_id));
  });
  m.attr("__version__") = "0.1.0";
}

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "eivtraj/eval.hpp"
#include "eivtraj/fit.hpp"
#include "eivtraj/io.hpp"
#include "eivtraj/response.hpp"
#include "eivtraj/simulate.hpp"

namespace py = pybind11;
using namespace eivtraj;
using io::json;

namespace {

json parse(const std::string& text) { return text.empty() ? json::object() : json::parse(text); }

Eigen::MatrixXd as_matrix(const PosteriorDraws& d) {
  Eigen::MatrixXd m(d.total(), d.dim());
  for (std::size_t k = 0; k < d.total(); ++k)
    for (std::size_t j = 0; j < d.dim(); ++j) m(k, j) = d.row(k)[j];
  return m;
}

py::dict trajectory_dict(const PatientTrajectory& t) {
  py::dict d;
  d["id"] = t.id;
  d["times"] = t.times;
  d["train_mask"] = t.train_mask;
  d["outcome"] = t.outcome;
  d["trend_mean"] = t.trend_mean;
  d["trend_sd"] = t.trend_sd;
  d["response_mean"] = t.response_mean;
  d["total_mean"] = t.total_mean;
  d["total_sd"] = t.total_sd;
  d["lower"] = t.lower;
  d["upper"] = t.upper;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Treatment-response trajectories with errors-in-variables";

  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<StructuralError>(m, "StructuralError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<TreatmentEvent>(m, "TreatmentEvent")
      .def(py::init<>())
      .def(py::init([](double t, std::vector<double> x) { return TreatmentEvent{t, std::move(x)}; }),
           py::arg("observed_time"), py::arg("covariates"))
      .def_readwrite("observed_time", &TreatmentEvent::observed_time)
      .def_readwrite("covariates", &TreatmentEvent::covariates);

  py::class_<PatientData>(m, "PatientData")
      .def(py::init<>())
      .def_readwrite("id", &PatientData::id)
      .def_readwrite("outcome", &PatientData::outcome)
      .def_readwrite("obs_times", &PatientData::obs_times)
      .def_readwrite("events", &PatientData::events)
      .def_readwrite("train_mask", &PatientData::train_mask)
      .def("validate", &PatientData::validate)
      .def("__len__", &PatientData::size);

  py::class_<FitResult>(m, "Fit")
      .def_property_readonly("names", [](const FitResult& f) { return f.draws.names; })
      .def_property_readonly("draws", [](const FitResult& f) { return as_matrix(f.draws); })
      .def_property_readonly("raw_draws", [](const FitResult& f) { return as_matrix(f.raw); })
      .def_property_readonly("chains", [](const FitResult& f) { return f.draws.chains; })
      .def_property_readonly("max_rhat", [](const FitResult& f) { return f.max_rhat; })
      .def_property_readonly("divergences", [](const FitResult& f) { return f.draws.divergence_count(); })
      .def("summary_json", [](const FitResult& f) { return io::to_json(f.summary).dump(); })
      .def(
          "trajectories",
          [](const FitResult& f, std::size_t max_draws) {
            py::list out;
            for (const auto& t : posterior_trajectories(*f.model, f.raw, max_draws)) out.append(trajectory_dict(t));
            return out;
          },
          py::arg("max_draws") = 200)
      .def("pointwise_loglik", [](const FitResult& f) { return pointwise_loglik(*f.model, f.raw); })
      .def("mean_coefficients", [](const FitResult& f) {
        std::vector<std::pair<std::vector<double>, std::vector<double>>> out;
        for (const auto& c : posterior_mean_coefficients(*f.model, f.raw)) out.emplace_back(c.beta_h, c.beta_l);
        return out;
      })
      .def("meal_log_delta", [](const FitResult& f) {
        std::vector<double> out;
        for (const auto& r : meal_latents(*f.model, f.raw)) out.push_back(r.log_delta_mean);
        return out;
      });

  m.def(
      "simulate",
      [](const std::string& sim_json, const std::string& spec_json) {
        const SimConfig cfg = io::sim_config_from_json(parse(sim_json));
        const ModelSpec spec = io::model_spec_from_json(parse(spec_json));
        if (cfg.protocol == SimProtocol::FromFit) throw DomainError("from_fit needs a fitted posterior");
        const SimResult r = cfg.protocol == SimProtocol::Toy ? simulate_toy(cfg, spec) : simulate_generative(cfg, spec);
        return std::make_pair(r.data, io::to_json(r.truth).dump());
      },
      py::arg("sim_json") = "", py::arg("spec_json") = "");

  m.def("ingest", &io::ingest, py::arg("glucose_path"), py::arg("meals_path"), py::arg("train_days") = 2.0);

  m.def(
      "fit",
      [](std::vector<PatientData> data, const std::string& spec_json, const std::string& sampler_json) {
        const ModelSpec spec = io::model_spec_from_json(parse(spec_json));
        const SamplerConfig sc = io::sampler_config_from_json(parse(sampler_json));
        py::gil_scoped_release release;
        return fit_model(std::move(data), spec, sc);
      },
      py::arg("data"), py::arg("spec_json") = "", py::arg("sampler_json") = "");

  m.def(
      "evaluate",
      [](const FitResult& f, const FitResult* baseline) {
        const auto tr = posterior_trajectories(*f.model, f.raw);
        std::vector<PatientTrajectory> base;
        if (baseline) base = posterior_trajectories(*baseline->model, baseline->raw);
        const MetricReport rep = evaluate(tr, f.model->data(), pointwise_loglik(*f.model, f.raw),
                                          baseline ? &base : nullptr);
        return io::to_json(rep).dump();
      },
      py::arg("fit"), py::arg("baseline") = nullptr);

  m.def("response_curve", [](const std::vector<double>& lags, double h, double l) {
    return response_curve(lags, h, l);
  });
  m.def("response_area", &response_area, py::arg("h"), py::arg("l"));

  m.def("mann_whitney_u", [](const std::vector<double>& a, const std::vector<double>& b) {
    const MannWhitney r = mann_whitney_u(a, b);
    return py::make_tuple(r.u, r.p_one_sided, r.exact);
  });

  m.def("psis_loo", [](const Eigen::MatrixXd& loglik) { return io::to_json(psis_loo(loglik)).dump(); });
}

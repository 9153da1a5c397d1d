#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "anchorstream/anchors.hpp"
#include "anchorstream/config.hpp"
#include "anchorstream/datagen.hpp"
#include "anchorstream/engine.hpp"
#include "anchorstream/gaussian.hpp"
#include "anchorstream/pipeline.hpp"
#include "anchorstream/running_stats.hpp"

namespace py = pybind11;
using namespace anchorstream;

namespace {

KlForm kl_form_from_name(const std::string& name) {
  if (name == "standard") return KlForm::standard;
  if (name == "paper_printed") return KlForm::paper_printed;
  throw ConfigError("kl_form must be standard or paper_printed, got '" + name + "'");
}

EngineConfig config_from_dict(const std::map<std::string, std::string>& pairs) {
  return apply_config_pairs(EngineConfig{}, pairs);
}

Dataset dataset_from(const Matrix& inputs, const std::vector<int>& labels) {
  Dataset data;
  data.inputs = inputs;
  data.labels = labels;
  return data;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "streaming test-time adaptation with anchored clustering";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);

  py::class_<RunningGaussian>(m, "RunningGaussian")
      .def(py::init([](int dim, std::int64_t clip) { return RunningGaussian::zero(dim, clip); }),
           py::arg("dim"), py::arg("clip") = kUnboundedClip)
      .def_readonly("mean", &RunningGaussian::mean)
      .def_readonly("cov", &RunningGaussian::cov)
      .def_readonly("count", &RunningGaussian::count)
      .def_readonly("clip", &RunningGaussian::clip)
      .def("update", [](RunningGaussian& self, const Matrix& batch) {
        update_global(self, batch);
      }, py::arg("batch"))
      .def("update_weighted",
           [](RunningGaussian& self, const Matrix& batch, const Vector& weights) {
             update_weighted(self, batch, weights);
           },
           py::arg("batch"), py::arg("weights"));

  m.def("clip_coefficient", &clip_coefficient, py::arg("count"), py::arg("clip"));

  m.def("batch_mle",
        [](const Matrix& features) {
          auto [mean, cov] = batch_mle(features);
          return py::make_tuple(mean, cov);
        },
        py::arg("features"), "population mean/covariance over rows");

  m.def("kl_gaussian",
        [](const Vector& mean_p, const Matrix& cov_p, const Vector& mean_q, const Matrix& cov_q,
           double ridge, const std::string& form) {
          return kl_gaussian(Gaussian{mean_p, cov_p}, Gaussian{mean_q, cov_q}, ridge,
                             kl_form_from_name(form));
        },
        py::arg("mean_p"), py::arg("cov_p"), py::arg("mean_q"), py::arg("cov_q"),
        py::arg("ridge") = kDefaultRidge, py::arg("form") = "standard");

  py::class_<Model>(m, "Model")
      .def_static("load", &load_model, py::arg("path"))
      .def("save", &save_model, py::arg("path"))
      .def_property_readonly("input_dim", &Model::input_dim)
      .def_property_readonly("feature_dim", &Model::feature_dim)
      .def_property_readonly("num_classes", &Model::num_classes)
      .def("predict",
           [](const Model& self, const Matrix& inputs) {
             const ForwardCache cache = forward(self, inputs);
             std::vector<int> preds(static_cast<std::size_t>(inputs.rows()));
             for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
               preds[static_cast<std::size_t>(i)] =
                   argmax_lowest(cache.posteriors.row(i).transpose());
             }
             return preds;
           },
           py::arg("inputs"))
      .def("features",
           [](const Model& self, const Matrix& inputs) { return forward(self, inputs).features; },
           py::arg("inputs"))
      .def("posteriors",
           [](const Model& self, const Matrix& inputs) { return forward(self, inputs).posteriors; },
           py::arg("inputs"));

  py::class_<SourceAnchors>(m, "SourceAnchors")
      .def_static("load", &load_anchors, py::arg("path"))
      .def("save", &save_anchors, py::arg("path"))
      .def_property_readonly("num_classes", &SourceAnchors::num_classes)
      .def_property_readonly("dim", &SourceAnchors::dim)
      .def("class_mean",
           [](const SourceAnchors& self, int k) {
             return self.class_anchors.at(static_cast<std::size_t>(k)).mean;
           },
           py::arg("k"))
      .def("class_cov", [](const SourceAnchors& self, int k) {
        return self.class_anchors.at(static_cast<std::size_t>(k)).cov;
      }, py::arg("k"));

  m.def("make_benchmark",
        [](int classes, int dim, int source_per_class, int target_per_class, std::uint64_t seed,
           const std::string& family, int severity, double mean_radius, double cov_scale) {
          const DomainSpec source_spec =
              default_domain(classes, dim, source_per_class, seed, mean_radius, cov_scale);
          DomainSpec target_spec =
              default_domain(classes, dim, target_per_class, seed, mean_radius, cov_scale);
          target_spec.seed = seed + 1000003;
          const Dataset source = generate(source_spec);
          const Dataset clean = generate(target_spec);
          const Dataset target = corrupt(
              clean, CorruptionSpec{corruption_family_from_string(family), severity,
                                    seed + 2000003});
          py::dict out;
          out["source_x"] = source.inputs;
          out["source_y"] = source.labels;
          out["target_x"] = target.inputs;
          out["target_y"] = target.labels;
          return out;
        },
        py::arg("classes") = 10, py::arg("dim") = 4, py::arg("source_per_class") = 500,
        py::arg("target_per_class") = 1000, py::arg("seed") = 0,
        py::arg("family") = "rotation_mix", py::arg("severity") = 3,
        py::arg("mean_radius") = 1.0, py::arg("cov_scale") = 0.12);

  m.def("train_source",
        [](const Matrix& inputs, const std::vector<int>& labels,
           const std::vector<int>& hidden_dims, int feature_dim, int epochs, double lr,
           double momentum, int batch_size, double holdout_fraction, std::uint64_t seed) {
          const int classes =
              1 + *std::max_element(labels.begin(), labels.end());
          Model model = make_model(static_cast<int>(inputs.cols()), hidden_dims, feature_dim,
                                   classes, seed);
          PretrainOptions opts;
          opts.epochs = epochs;
          opts.lr = lr;
          opts.momentum = momentum;
          opts.batch_size = batch_size;
          opts.holdout_fraction = holdout_fraction;
          opts.seed = seed;
          const PretrainResult result = pretrain_source(model, dataset_from(inputs, labels), opts);
          return py::make_tuple(model, result.holdout_accuracy);
        },
        py::arg("inputs"), py::arg("labels"), py::arg("hidden_dims") = std::vector<int>{64, 64},
        py::arg("feature_dim") = 8, py::arg("epochs") = 25, py::arg("lr") = 0.05,
        py::arg("momentum") = 0.9, py::arg("batch_size") = 128,
        py::arg("holdout_fraction") = 0.1, py::arg("seed") = 0);

  m.def("compute_anchors",
        [](const Model& model, const Matrix& inputs, const std::vector<int>& labels) {
          return compute_source_anchors(model, dataset_from(inputs, labels));
        },
        py::arg("model"), py::arg("inputs"), py::arg("labels"));

  m.def("run_stream",
        [](const Model& model, std::optional<SourceAnchors> anchors, const Matrix& inputs,
           const std::vector<int>& labels, const std::map<std::string, std::string>& config) {
          const EngineConfig cfg = config_from_dict(config);
          const PipelineResult result =
              run_pipeline(model, anchors, dataset_from(inputs, labels), cfg);
          py::dict out;
          out["final_error"] = result.final_error;
          out["baseline_error"] = result.baseline_error;
          out["series"] = result.series;
          std::vector<int> preds;
          preds.reserve(result.log.records.size());
          for (const auto& r : result.log.records) preds.push_back(r.predicted_class);
          out["predictions"] = preds;
          out["config"] = config_to_map(cfg);
          return out;
        },
        py::arg("model"), py::arg("anchors"), py::arg("inputs"), py::arg("labels"),
        py::arg("config") = std::map<std::string, std::string>{});
}

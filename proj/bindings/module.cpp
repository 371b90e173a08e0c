#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fedqot/fedavg.hpp"
#include "fedqot/qot_data.hpp"

namespace py = pybind11;
using namespace fedqot;

namespace {

py::array_t<double> matrix_to_numpy(const Matrix& m) {
  py::array_t<double> out({m.rows, m.cols});
  std::copy(m.data.begin(), m.data.end(), out.mutable_data());
  return out;
}

py::array_t<double> vector_to_numpy(const std::vector<double>& v) {
  // The (shape, ptr) form copies the buffer; the bare ssize_t ctor of this
  // pybind11 release builds a stride-0 view instead.
  return py::array_t<double>({py::ssize_t(v.size())}, v.data());
}

Batch batch_from_numpy(py::array_t<double, py::array::c_style> features,
                       const std::vector<int32_t>& labels) {
  if (features.ndim() != 2) throw UsageError("features must be a 2-D array");
  Batch b;
  b.features.rows = size_t(features.shape(0));
  b.features.cols = size_t(features.shape(1));
  b.features.data.assign(features.data(),
                         features.data() + features.size());
  b.labels = labels;
  return b;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "federated QoT-estimation core (dense nets, FedAvg, data tools)";

  py::register_exception<UsageError>(m, "UsageError");
  py::register_exception<SchemaError>(m, "SchemaError");
  py::register_exception<ValidationError>(m, "ValidationError");
  py::register_exception<FormatError>(m, "FormatError");

  py::class_<ModelSpec>(m, "ModelSpec")
      .def(py::init([](uint32_t input_dim, std::vector<uint32_t> hidden_dims,
                       uint32_t output_dim) {
             ModelSpec s{input_dim, std::move(hidden_dims), output_dim};
             s.validate();
             return s;
           }),
           py::arg("input_dim"), py::arg("hidden_dims"), py::arg("output_dim"))
      .def_readonly("input_dim", &ModelSpec::input_dim)
      .def_readonly("hidden_dims", &ModelSpec::hidden_dims)
      .def_readonly("output_dim", &ModelSpec::output_dim)
      .def("param_count", &ModelSpec::param_count)
      .def("__eq__", [](const ModelSpec& a, const ModelSpec& b) { return a == b; });

  py::class_<ParameterVector>(m, "ParameterVector")
      .def_readonly("spec", &ParameterVector::spec)
      .def_property_readonly(
          "values",
          [](const ParameterVector& pv) { return vector_to_numpy(pv.values); })
      .def("__len__", [](const ParameterVector& pv) { return pv.values.size(); });

  py::class_<Hyperparams>(m, "Hyperparams")
      .def(py::init([](double eta, uint32_t local_epochs, uint32_t batch_size,
                       uint32_t rounds, uint64_t shuffle_seed) {
             return Hyperparams{eta, local_epochs, batch_size, rounds,
                                shuffle_seed};
           }),
           py::arg("eta") = 0.01, py::arg("local_epochs") = 2,
           py::arg("batch_size") = 64, py::arg("rounds") = 30,
           py::arg("shuffle_seed") = 0)
      .def_readwrite("eta", &Hyperparams::eta)
      .def_readwrite("local_epochs", &Hyperparams::local_epochs)
      .def_readwrite("batch_size", &Hyperparams::batch_size)
      .def_readwrite("rounds", &Hyperparams::rounds)
      .def_readwrite("shuffle_seed", &Hyperparams::shuffle_seed);

  py::class_<FeatureSchema>(m, "FeatureSchema")
      .def("encoded_width", &FeatureSchema::encoded_width)
      .def("canonical_json", &FeatureSchema::canonical_json)
      .def("hash", &FeatureSchema::hash);

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly(
          "features", [](const Dataset& d) { return matrix_to_numpy(d.features); })
      .def_readonly("labels", &Dataset::labels)
      .def_readonly("domain_tags", &Dataset::domain_tags)
      .def_readonly("schema", &Dataset::schema)
      .def("__len__", &Dataset::size);

  m.def("default_schema", &default_schema);
  m.def("init_params", &init_params, py::arg("spec"), py::arg("seed"));
  m.def(
      "forward",
      [](const ParameterVector& params,
         py::array_t<double, py::array::c_style> features,
         const std::vector<int32_t>& labels) {
        return matrix_to_numpy(forward(params, batch_from_numpy(features, labels)));
      },
      py::arg("params"), py::arg("features"), py::arg("labels"));
  m.def(
      "loss_and_grad",
      [](const ParameterVector& params,
         py::array_t<double, py::array::c_style> features,
         const std::vector<int32_t>& labels) {
        LossGrad lg = loss_and_grad(params, batch_from_numpy(features, labels));
        return py::make_tuple(lg.loss, vector_to_numpy(lg.grad.values));
      },
      py::arg("params"), py::arg("features"), py::arg("labels"));
  m.def(
      "sgd_step",
      [](const ParameterVector& params,
         py::array_t<double, py::array::c_style> grad, double eta) {
        Gradient g;
        g.values.assign(grad.data(), grad.data() + grad.size());
        return sgd_step(params, g, eta);
      },
      py::arg("params"), py::arg("grad"), py::arg("eta"));
  m.def(
      "evaluate_accuracy",
      [](const ParameterVector& params, const Dataset& data) {
        return evaluate_accuracy(params, data.as_batch());
      },
      py::arg("params"), py::arg("dataset"));
  m.def(
      "serialize_params",
      [](const ParameterVector& params) {
        const std::vector<uint8_t> blob = serialize_params(params);
        return py::bytes(reinterpret_cast<const char*>(blob.data()), blob.size());
      },
      py::arg("params"));
  m.def(
      "deserialize_params",
      [](py::bytes blob, const ModelSpec& spec) {
        const std::string s = blob;
        return deserialize_params(std::vector<uint8_t>(s.begin(), s.end()), spec);
      },
      py::arg("blob"), py::arg("spec"));

  m.def(
      "label_qot",
      [](int n_spans, double launch_power_dbm, int channel_load,
         const std::string& modulation, int domain_id) {
        LightpathSample s;
        s.n_spans = n_spans;
        s.launch_power_dbm = launch_power_dbm;
        s.channel_load = channel_load;
        s.modulation = modulation_from_name(modulation);
        s.domain_id = domain_id;
        return label_qot(s);
      },
      py::arg("n_spans"), py::arg("launch_power_dbm"), py::arg("channel_load"),
      py::arg("modulation"), py::arg("domain_id") = 0);
  m.def("generate_synthetic", &generate_synthetic, py::arg("n_samples"),
        py::arg("n_domains"), py::arg("seed"));
  m.def(
      "train_test_split",
      [](const Dataset& ds, double test_fraction, uint64_t seed) {
        auto [train, test] = train_test_split(ds, test_fraction, seed);
        return py::make_tuple(std::move(train), std::move(test));
      },
      py::arg("dataset"), py::arg("test_fraction"), py::arg("seed"));

  m.def("ecn_update", &ecn_update, py::arg("local_data"),
        py::arg("global_params"), py::arg("hyperparams"),
        py::arg("round_index"));
  m.def(
      "aggregate",
      [](const std::vector<std::tuple<std::string, ParameterVector, uint64_t>>&
             updates) {
        std::vector<EcnUpdate> ups;
        for (const auto& [id, pv, n] : updates) ups.push_back({id, pv, n});
        return aggregate(ups);
      },
      py::arg("updates"));
  m.def(
      "run_training",
      [](const std::vector<Dataset>& partitions, const ModelSpec& spec,
         const Hyperparams& hp, uint64_t init_seed, const Dataset* eval_set) {
        TrainingResult r = run_training(partitions, spec, hp, init_seed, eval_set);
        py::list history;
        for (const auto& m_ : r.history) {
          history.append(py::make_tuple(m_.round, m_.mean_local_loss,
                                        m_.eval_accuracy));
        }
        return py::make_tuple(std::move(r.final_params), history);
      },
      py::arg("partitions"), py::arg("spec"), py::arg("hyperparams"),
      py::arg("init_seed"), py::arg("eval_set") = nullptr);
  m.def("centralized_train", &centralized_train, py::arg("pooled"),
        py::arg("spec"), py::arg("hyperparams"), py::arg("init_seed"));
}

// pybind11 module `ohnn._ohnn`. Vectors cross the boundary as float64 numpy
// arrays; configuration uses the same JSON documents as the command line.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <string>
#include <vector>

#include "ohnn/anonymizer.hpp"
#include "ohnn/attack.hpp"
#include "ohnn/errors.hpp"
#include "ohnn/experiment.hpp"
#include "ohnn/metrics.hpp"
#include "ohnn/pool.hpp"
#include "ohnn/training.hpp"

namespace py = pybind11;
using namespace ohnn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Vec to_vec(const Array& a) {
  if (a.ndim() != 1) throw InvalidShape("expected a 1-d array");
  return Vec(a.data(), a.data() + a.size());
}

Array from_vec(const Vec& v) {
  Array out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Array from_mat(const Mat& m) {
  const auto d = static_cast<py::ssize_t>(m.dim());
  Array out({d, d});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

py::bytes to_bytes(const std::vector<std::uint8_t>& b) {
  return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
}

std::vector<std::uint8_t> from_bytes(const py::bytes& b) {
  const std::string s = b;
  return std::vector<std::uint8_t>(s.begin(), s.end());
}

// Applies `f` to a single vector or to every row of a 2-d array.
template <class F>
Array map_rows(const Array& x, std::size_t dim, F f) {
  if (x.ndim() == 1) return from_vec(f(std::span<const double>(x.data(), x.size())));
  if (x.ndim() != 2 || static_cast<std::size_t>(x.shape(1)) != dim)
    throw InvalidShape("expected shape (d,) or (n, d) with d = " + std::to_string(dim));
  Array out({x.shape(0), x.shape(1)});
  for (py::ssize_t i = 0; i < x.shape(0); ++i) {
    const Vec y = f(std::span<const double>(x.data(i, 0), dim));
    std::copy(y.begin(), y.end(), out.mutable_data(i, 0));
  }
  return out;
}

SimilarityMatrix to_matrix(const Array& a) {
  if (a.ndim() != 2 || a.shape(0) != a.shape(1)) throw InvalidShape("expected a square matrix");
  SimilarityMatrix m;
  for (py::ssize_t i = 0; i < a.shape(0); ++i) m.speakers.push_back(std::to_string(i));
  m.values.assign(a.data(), a.data() + a.size());
  return m;
}

Array pool_vectors(const EmbeddingPool& p) {
  Array out({static_cast<py::ssize_t>(p.size()), static_cast<py::ssize_t>(p.dim())});
  for (std::size_t i = 0; i < p.size(); ++i)
    std::copy(p[i].vector.begin(), p[i].vector.end(),
              out.mutable_data(static_cast<py::ssize_t>(i), 0));
  return out;
}

EmbeddingPool pool_with_vectors(const EmbeddingPool& p, const Array& v) {
  if (v.ndim() != 2 || static_cast<std::size_t>(v.shape(0)) != p.size() ||
      static_cast<std::size_t>(v.shape(1)) != p.dim())
    throw InvalidShape("expected an array of shape (len(pool), dim)");
  EmbeddingPool out = p;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double* row = v.data(static_cast<py::ssize_t>(i), 0);
    out.set_vector(i, Vec(row, row + p.dim()));
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_ohnn, m) {
  m.doc() = "Orthogonal Householder speaker-vector anonymization";

  auto base = py::register_exception<Error>(m, "OhnnError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

  py::enum_<Split>(m, "Split")
      .value("TRAIN", Split::Train)
      .value("ENROLL", Split::Enroll)
      .value("TRIAL", Split::Trial);
  py::enum_<StackVariant>(m, "StackVariant")
      .value("ROH", StackVariant::Roh)
      .value("LOH", StackVariant::Loh);
  py::enum_<LohReduction>(m, "LohReduction")
      .value("MEAN_POOL", LohReduction::MeanPool)
      .value("DIAGONAL", LohReduction::Diagonal);
  py::enum_<AnonymizerForm>(m, "AnonymizerForm")
      .value("SIMPLIFIED", AnonymizerForm::Simplified)
      .value("GENERAL_WHITENED", AnonymizerForm::GeneralWhitened);
  py::enum_<PoolSide>(m, "PoolSide")
      .value("TRIALS", PoolSide::Trials)
      .value("ENROLLMENT", PoolSide::Enrollment)
      .value("BOTH", PoolSide::Both)
      .value("TRAIN", PoolSide::Train);

  py::class_<EmbeddingPool>(m, "EmbeddingPool")
      .def(py::init<std::size_t>(), py::arg("dim"))
      .def(
          "add",
          [](EmbeddingPool& p, std::string speaker, std::string utterance, Split split,
             const Array& v) { p.add({std::move(speaker), std::move(utterance), split, to_vec(v)}); },
          py::arg("speaker"), py::arg("utterance"), py::arg("split"), py::arg("vector"))
      .def_property_readonly("dim", &EmbeddingPool::dim)
      .def("__len__", &EmbeddingPool::size)
      .def("speakers", &EmbeddingPool::speakers, py::arg("split") = py::none())
      .def("has_split", &EmbeddingPool::has_split)
      .def(
          "records",
          [](const EmbeddingPool& p) {
            std::vector<std::tuple<std::string, std::string, Split>> out;
            for (const Record& r : p.records()) out.emplace_back(r.speaker, r.utterance, r.split);
            return out;
          },
          "List of (speaker, utterance, split) in storage order")
      .def("vectors", &pool_vectors, "Copy of all vectors as an (n, dim) array")
      .def("with_vectors", &pool_with_vectors, py::arg("vectors"),
           "Copy of the pool with every vector replaced")
      .def("fingerprint", &pool_fingerprint)
      .def("__eq__", [](const EmbeddingPool& a, const EmbeddingPool& b) { return a == b; });

  m.def(
      "generate_synthetic",
      [](std::size_t num_speakers, std::size_t utterances_per_speaker, std::size_t dim,
         double sigma_within, double sigma_between, std::uint64_t seed, bool normalize,
         double mean_offset, std::size_t eval_speakers, std::size_t enroll_utterances) {
        SyntheticSpec s{num_speakers, utterances_per_speaker, dim, sigma_within, sigma_between,
                        seed, normalize, mean_offset, eval_speakers, enroll_utterances};
        return generate_synthetic(s);
      },
      py::arg("num_speakers") = 40, py::arg("utterances_per_speaker") = 10, py::arg("dim") = 16,
      py::arg("sigma_within") = 0.25, py::arg("sigma_between") = 1.0, py::arg("seed") = 7,
      py::arg("normalize") = false, py::arg("mean_offset") = 0.0, py::arg("eval_speakers") = 20,
      py::arg("enroll_utterances") = 5);
  m.def("load_pool", &load_pool_any, py::arg("path"));
  m.def("save_pool", &save_pool, py::arg("pool"), py::arg("path"));
  m.def("save_pool_csv", &save_pool_csv, py::arg("pool"), py::arg("path"));
  m.def("encode_pool", [](const EmbeddingPool& p) { return to_bytes(encode_pool(p)); });
  m.def("decode_pool", [](const py::bytes& b) { return decode_pool(from_bytes(b)); });

  py::class_<AnonymizerModel>(m, "AnonymizerModel")
      .def_property_readonly("variant", [](const AnonymizerModel& a) { return a.stack.variant; })
      .def_property_readonly("form", [](const AnonymizerModel& a) { return a.form; })
      .def_property_readonly("dim", [](const AnonymizerModel& a) { return a.stack.dim; })
      .def_property_readonly("layer_sizes",
                             [](const AnonymizerModel& a) { return a.stack.layer_sizes; })
      .def_property_readonly("seed", [](const AnonymizerModel& a) { return a.seed; })
      .def_property_readonly("params",
                             [](const AnonymizerModel& a) { return from_vec(a.stack.params); })
      .def_property_readonly("mu", [](const AnonymizerModel& a) { return from_vec(a.mu); })
      .def(
          "anonymize",
          [](const AnonymizerModel& a, const Array& x) {
            return map_rows(x, a.stack.dim,
                            [&](std::span<const double> v) { return anonymize(a, v); });
          },
          py::arg("x"), "Anonymize one vector of shape (d,) or a batch of shape (n, d)")
      .def(
          "matrix",
          [](const AnonymizerModel& a, const Array& generator_input) {
            return from_mat(stack_matrix(a.stack, to_vec(generator_input)));
          },
          py::arg("generator_input"),
          "Dense orthogonal W; LOH reflections are generated from `generator_input`")
      .def("to_json", &model_to_json)
      .def("encode", [](const AnonymizerModel& a) { return to_bytes(encode_model(a)); })
      .def("save", [](const AnonymizerModel& a, const std::filesystem::path& p) { save_model(a, p); })
      .def("__eq__", [](const AnonymizerModel& a, const AnonymizerModel& b) { return a == b; });

  m.def("load_model", &load_model, py::arg("path"));
  m.def("decode_model", [](const py::bytes& b) { return decode_model(from_bytes(b)); });
  m.def(
      "init_model",
      [](StackVariant variant, std::size_t dim, std::vector<std::size_t> layer_sizes,
         std::uint64_t seed, std::optional<Array> mu, LohReduction reduction) {
        HouseholderStack s = init_stack(variant, dim, layer_sizes, seed, reduction);
        return make_simplified(std::move(s), mu ? to_vec(*mu) : Vec(dim, 0.0), seed);
      },
      py::arg("variant"), py::arg("dim"), py::arg("layer_sizes"), py::arg("seed"),
      py::arg("mu") = py::none(), py::arg("reduction") = LohReduction::MeanPool,
      "Untrained simplified-form model W (x - mu) + mu");

  m.def(
      "normalize_config",
      [](const std::string& json) { return experiment_to_json(parse_experiment(json)); },
      py::arg("config_json"), "Parse an experiment document and return it with defaults filled in");
  m.def(
      "train",
      [](const EmbeddingPool& pool, StackVariant variant, const std::string& config_json) {
        const ExperimentConfig cfg = parse_experiment(config_json);
        StackSpec spec = cfg.stack;
        spec.variant = variant;
        TrainConfig tc = cfg.train;
        tc.seed = cfg.user_seed;
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(pool, spec, tc);
        }
        return py::make_tuple(r.model, report_to_json(r.report));
      },
      py::arg("pool"), py::arg("variant"), py::arg("config_json"),
      "Train with the `stack`, `train` and `user_seed` sections of an experiment document; "
      "returns (model, report_json)");
  m.def(
      "anonymize_pool",
      [](const EmbeddingPool& pool, const AnonymizerModel& model, PoolSide side) {
        return anonymize_pool(pool, Anonymizer(model), side);
      },
      py::arg("pool"), py::arg("model"), py::arg("side") = PoolSide::Both);
  m.def(
      "attack_sim",
      [](const EmbeddingPool& pool, const std::string& config_json,
         std::optional<EmbeddingPool> external) {
        const ExperimentConfig cfg = parse_experiment(config_json);
        if (!external && cfg.kind == AnonymizerKind::Selection)
          external = load_or_generate_external(cfg, pool.dim());
        std::vector<std::string> reports;
        {
          py::gil_scoped_release release;
          AttackHarness harness(pool, scenario_config(cfg, cfg.scenarios.front()), external);
          for (Scenario s : cfg.scenarios)
            reports.push_back(scenario_report_to_json(harness.run(s)));
        }
        return reports;
      },
      py::arg("pool"), py::arg("config_json"), py::arg("external") = py::none(),
      "Run the configured scenarios; returns one JSON report per scenario");

  m.def(
      "eer",
      [](const Array& target, const Array& nontarget) {
        const EerResult r = eer({to_vec(target), to_vec(nontarget)});
        return py::make_tuple(r.eer, r.threshold);
      },
      py::arg("target"), py::arg("nontarget"), "Returns (eer, threshold); eer is a fraction");
  m.def(
      "weighted_average_eer",
      [](const std::vector<double>& eers, const std::vector<double>& weights) {
        if (eers.size() != weights.size()) throw InvalidShape("one weight per EER is required");
        std::vector<WeightedEer> s;
        for (std::size_t i = 0; i < eers.size(); ++i) s.push_back({eers[i], weights[i]});
        return weighted_average_eer(s);
      },
      py::arg("eers"), py::arg("weights"));
  m.def("d_diag", [](const Array& a) { return d_diag(to_matrix(a)); }, py::arg("matrix"));
  m.def(
      "g_vd", [](const Array& aa, const Array& oo) { return g_vd(to_matrix(aa), to_matrix(oo)); },
      py::arg("m_aa"), py::arg("m_oo"), "10 log10(D(M_aa) / D(M_oo)) in dB");
}

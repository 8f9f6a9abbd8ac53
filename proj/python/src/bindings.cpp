#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "bapm/checkpoint.hpp"
#include "bapm/config.hpp"
#include "bapm/dataset.hpp"
#include "bapm/metrics.hpp"
#include "bapm/nifti.hpp"
#include "bapm/phantom.hpp"
#include "bapm/training.hpp"

namespace py = pybind11;
using namespace bapm;

namespace {

// Volumes cross the boundary as (X, Y, Z) arrays in Fortran order, so arr[i, j, k] is voxel (i, j, k)
// and the buffer matches the library's x-fastest layout.
template <class T>
using FArray = py::array_t<T, py::array::f_style | py::array::forcecast>;

template <class T>
Image<T> to_image(const FArray<T>& a, std::array<double, 3> spacing) {
  if (a.ndim() != 3) throw std::invalid_argument("expected a 3-D array");
  const Dims d{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2))};
  Image<T> img(Grid::make(d, spacing));
  std::memcpy(img.data.data(), a.data(), img.size() * sizeof(T));
  return img;
}

template <class T>
FArray<T> to_array(const Image<T>& img) {
  const auto& d = img.dims();
  FArray<T> a({d[0], d[1], d[2]});
  std::memcpy(a.mutable_data(), img.data.data(), img.size() * sizeof(T));
  return a;
}

py::dict as_dict(const ClassificationMetrics& m) {
  py::dict out;
  out["ACC"] = m.acc;
  out["SEN"] = m.sen;
  out["SPE"] = m.spe;
  out["F1"] = m.f1;
  return out;
}

py::list trace_rows(const std::vector<LossReport>& trace) {
  py::list rows;
  for (const auto& r : trace) {
    py::dict d;
    d["epoch"] = r.epoch;
    d["step"] = r.step;
    d["l_rec"] = r.l_rec ? py::cast(*r.l_rec) : py::none();
    d["l_seg"] = r.l_seg ? py::cast(*r.l_seg) : py::none();
    d["l_total"] = r.l_total;
    rows.append(d);
  }
  return rows;
}

/// A trained pretext model with its architecture settings.
struct PretextModel {
  ParameterStore params;
  ModelConfig config;
  PretextTasks tasks = PretextTasks::Both;
  std::uint64_t seed = 0;

  static PretextModel load(const std::filesystem::path& path) {
    const auto ckpt = load_checkpoint(path);
    PretextModel m;
    m.config = model_config_from_metadata(ckpt.metadata);
    m.tasks = tasks_from_metadata(ckpt.metadata);
    m.params = build_pretext(m.config, m.tasks, 0);
    load_into(m.params, ckpt, "");
    return m;
  }

  void save(const std::filesystem::path& path) const {
    auto md = model_metadata(config, tasks);
    md["stage"] = "pretext";
    md["seed"] = std::to_string(seed);
    save_checkpoint(params, md, path);
  }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Volumetric pretext training, transfer and evaluation";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NiftiError>(m, "NiftiError", PyExc_IOError);
  py::register_exception<MetricError>(m, "MetricError", PyExc_ValueError);

  py::class_<Settings>(m, "Settings")
      .def(py::init<>())
      .def("set", &apply_setting, py::arg("key"), py::arg("value"))
      .def("get",
           [](const Settings& s, const std::string& key) {
             for (const auto& k : config_keys())
               if (k.key == key) return k.get(s);
             throw ConfigError(key, "unknown configuration key");
           })
      .def("load", [](Settings& s, const std::filesystem::path& p) { load_config_file(s, p); })
      .def("validate", &Settings::validate)
      .def("render", &render_config);
  m.def("config_keys", [] {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& k : config_keys()) out.emplace_back(k.key, k.help);
    return out;
  });

  m.def(
      "phantom",
      [](std::uint64_t seed, int size, int atrophy_class, double atrophy_delta) {
        PhantomSpec spec;
        spec.dims = {size, size, size};
        spec.atrophy_class = atrophy_class;
        spec.atrophy_delta = atrophy_delta;
        const auto s = generate_phantom(spec, seed);
        return py::make_tuple(to_array(s.intensity), to_array(s.labels));
      },
      py::arg("seed"), py::arg("size") = 32, py::arg("atrophy_class") = 0, py::arg("atrophy_delta") = 0.3,
      "Synthetic head phantom: (intensity float32, labels uint8), both shaped (size, size, size).");
  m.def(
      "write_phantom_dataset",
      [](const std::filesystem::path& dir, std::size_t count, const Settings& s) {
        write_phantom_dataset(generate_samples(count, s.phantom, s.run.seed), dir);
      },
      py::arg("dir"), py::arg("count"), py::arg("settings") = Settings{});

  m.def(
      "read_nifti",
      [](const std::filesystem::path& p) {
        const auto v = read_nifti(p);
        return py::make_tuple(to_array(v), v.grid.spacing);
      },
      "Returns (float32 array, spacing).");
  m.def("read_nifti_labels", [](const std::filesystem::path& p) {
    const auto v = read_nifti_labels(p);
    return py::make_tuple(to_array(v), v.grid.spacing);
  });
  m.def(
      "write_nifti",
      [](const std::filesystem::path& p, const py::array& a, std::array<double, 3> spacing) {
        if (a.dtype().is(py::dtype::of<std::uint8_t>()))
          write_nifti(to_image(FArray<std::uint8_t>::ensure(a), spacing), p);
        else
          write_nifti(to_image(FArray<float>::ensure(a), spacing), p);
      },
      py::arg("path"), py::arg("array"), py::arg("spacing") = std::array<double, 3>{1, 1, 1},
      "uint8 arrays are written as label maps, anything else as float32.");

  m.def(
      "segmentation_metrics",
      [](const FArray<std::uint8_t>& pred, const FArray<std::uint8_t>& truth, std::array<double, 3> spacing,
         double hd_percentile) {
        const auto r = segmentation_metrics(to_image(pred, spacing), to_image(truth, spacing), hd_percentile);
        py::dict out;
        out["Dice"] = r.dice;
        out["ASD"] = r.asd;
        out["HD"] = r.hd;
        py::list per;
        for (const auto& c : r.per_class) {
          py::dict d;
          d["Dice"] = c.dice;
          d["ASD"] = c.asd;
          d["HD"] = c.hd;
          per.append(d);
        }
        out["per_class"] = per;
        return out;
      },
      py::arg("pred"), py::arg("truth"), py::arg("spacing") = std::array<double, 3>{1, 1, 1},
      py::arg("hd_percentile") = 100.0);
  m.def(
      "reconstruction_metrics",
      [](const FArray<float>& x, const FArray<float>& x_hat) {
        const auto r = reconstruction_metrics(to_image(x, {1, 1, 1}), to_image(x_hat, {1, 1, 1}));
        py::dict out;
        out["MAE"] = r.mae;
        out["NMI"] = r.nmi;
        out["SSIM"] = r.ssim;
        return out;
      },
      py::arg("x"), py::arg("x_hat"));
  m.def(
      "classification_metrics",
      [](const std::vector<double>& scores, const std::vector<int>& labels, double threshold) {
        if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
        std::vector<BinaryPrediction> p;
        for (std::size_t i = 0; i < scores.size(); ++i) p.push_back({scores[i], labels[i]});
        auto out = as_dict(classification_metrics(p, threshold));
        out["AUC"] = 100.0 * auc(p);
        return out;
      },
      py::arg("scores"), py::arg("labels"), py::arg("threshold") = 0.5, "Percentages, AUC included.");

  py::class_<PretextModel>(m, "PretextModel")
      .def_static("load", &PretextModel::load)
      .def("save", &PretextModel::save)
      .def_property_readonly("tasks", [](const PretextModel& p) { return to_string(p.tasks); })
      .def_property_readonly("width_factor", [](const PretextModel& p) { return p.config.width_factor; })
      .def("encoder_hash", [](const PretextModel& p) { return p.params.hash("encoder."); })
      .def("reconstruct",
           [](const PretextModel& p, const FArray<float>& image) {
             const auto v = to_image(image, {1, 1, 1});
             Volume out;
             {
               py::gil_scoped_release release;
               out = reconstruct_volume(p.params, v);
             }
             return to_array(out);
           })
      .def("segment", [](const PretextModel& p, const FArray<float>& image) {
        const auto v = to_image(image, {1, 1, 1});
        SegmentationOutput out;
        {
          py::gil_scoped_release release;
          out = segment_volume(p.params, v, p.config.seg_head_norm);
        }
        py::list probs;
        for (const auto& pr : out.probabilities) probs.append(to_array(pr));
        return py::make_tuple(to_array(out.labels), probs);
      });

  m.def(
      "pretrain",
      [](const std::filesystem::path& data_dir, const Settings& s) {
        s.validate();
        const auto data = load_dataset(data_dir);
        PretextResult r;
        {
          py::gil_scoped_release release;
          r = pretrain(data, s.run);
        }
        PretextModel model{std::move(r.params), s.run.model, s.run.pretext.tasks, s.run.seed};
        return py::make_tuple(std::move(model), trace_rows(r.trace));
      },
      py::arg("data_dir"), py::arg("settings") = Settings{},
      "Pretext training on a dataset directory; returns (PretextModel, loss trace rows).");

  m.def(
      "evaluate_classification",
      [](const std::filesystem::path& data_dir, const PretextModel* encoder, const Settings& s) {
        s.validate();
        const auto data = load_dataset(data_dir);
        std::optional<Checkpoint> ckpt;
        RunConfig run = s.run;
        run.finetune.pretrained = encoder != nullptr;
        if (encoder) ckpt = snapshot(encoder->params), run.model = encoder->config;
        SplitEvaluation ev;
        {
          py::gil_scoped_release release;
          ev = repeated_split_eval(data, ckpt ? &*ckpt : nullptr, run);
        }
        return ev.values;
      },
      py::arg("data_dir"), py::arg("encoder") = nullptr, py::arg("settings") = Settings{},
      "Repeated stratified splits; metric name -> one percentage per split. "
      "With `encoder` the pretrained encoder is frozen, otherwise the model trains from scratch.");
}

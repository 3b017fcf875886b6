#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "acq/attack.hpp"
#include "acq/errors.hpp"
#include "acq/evaluate.hpp"
#include "acq/fusion.hpp"
#include "acq/harness.hpp"
#include "acq/lenet.hpp"
#include "acq/transforms.hpp"

namespace py = pybind11;
using namespace pybind11::literals;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

acq::PixelScale parse_scale(const std::string& text) {
    if (text == "unit") return acq::PixelScale::Unit;
    if (text == "byte") return acq::PixelScale::Byte;
    throw acq::ContractError("scale must be 'unit' or 'byte', got '" + text + "'");
}

acq::NoiseScale parse_noise_scale(const std::string& text) {
    if (text == "unit") return acq::NoiseScale::Unit;
    if (text == "byte") return acq::NoiseScale::Byte;
    throw acq::ContractError("noise scale must be 'unit' or 'byte', got '" + text + "'");
}

acq::Image to_image(const Array& array, const std::string& scale = "unit", std::optional<int> label = std::nullopt) {
    if (array.ndim() != 2) throw acq::ContractError("expected a 2-D image array");
    acq::Image image;
    image.rows = static_cast<std::size_t>(array.shape(0));
    image.cols = static_cast<std::size_t>(array.shape(1));
    image.pixels.assign(array.data(), array.data() + array.size());
    image.scale = parse_scale(scale);
    image.label = label;
    return image;
}

Array to_array(const acq::Image& image) {
    Array out({image.rows, image.cols});
    std::memcpy(out.mutable_data(), image.pixels.data(), image.pixels.size() * sizeof(double));
    return out;
}

Array to_array(const acq::Tensor& tensor) {
    std::vector<py::ssize_t> shape(tensor.shape().begin(), tensor.shape().end());
    Array out(shape);
    std::memcpy(out.mutable_data(), tensor.data().data(), tensor.size() * sizeof(double));
    return out;
}

std::vector<acq::Image> to_images(const Array& batch, const std::string& scale) {
    if (batch.ndim() != 3) throw acq::ContractError("expected an (N, rows, cols) image batch");
    const auto n = static_cast<std::size_t>(batch.shape(0));
    const auto rows = static_cast<std::size_t>(batch.shape(1));
    const auto cols = static_cast<std::size_t>(batch.shape(2));
    std::vector<acq::Image> images(n);
    for (std::size_t i = 0; i < n; ++i) {
        images[i].rows = rows;
        images[i].cols = cols;
        images[i].pixels.assign(batch.data() + i * rows * cols, batch.data() + (i + 1) * rows * cols);
        images[i].scale = parse_scale(scale);
    }
    return images;
}

acq::Dataset dataset_from_arrays(const Array& images, py::array_t<int> labels, const std::string& scale,
                                 const std::string& name) {
    acq::Dataset d;
    d.name = name;
    d.scale = parse_scale(scale);
    d.provenance = acq::Provenance::Transformed;
    d.images = to_images(images, scale);
    if (static_cast<std::size_t>(labels.size()) != d.images.size())
        throw acq::ConsistencyError("image and label counts differ");
    for (std::size_t i = 0; i < d.images.size(); ++i) d.images[i].label = labels.at(static_cast<py::ssize_t>(i));
    d.validate();
    return d;
}

// A row name from the grid vocabulary, or a full transform line such as "noise stddev=0.1 seed=3".
acq::TransformSpec transform_from_text(const std::string& text, std::uint64_t seed) {
    if (acq::is_grid_row(text)) {
        acq::GridConfig config;
        config.seed = seed;
        const acq::RowPlan plan = acq::plan_row(text, config);
        if (plan.fusion) throw acq::ContractError("five-crops is a fusion mode; pass fusion=True instead");
        return plan.transform ? *plan.transform : acq::TransformSpec::of(acq::TransformKind::Identity);
    }
    return acq::TransformSpec::parse(text);
}

py::dict record_to_dict(const acq::AdversarialRecord& r) {
    return py::dict("source_index"_a = r.source_index, "original"_a = to_array(r.original),
                    "perturbed"_a = to_array(r.perturbed), "true_label"_a = r.true_label,
                    "adversarial_label"_a = r.adversarial_label, "epsilon"_a = r.epsilon, "l2"_a = r.l2,
                    "linf"_a = r.linf, "method"_a = std::string(acq::to_string(r.method)));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "LeNet adversarial examples and acquisition transforms";

    py::register_exception<acq::ContractError>(m, "ContractError", PyExc_ValueError);
    py::register_exception<acq::FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<acq::IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<acq::ConsistencyError>(m, "ConsistencyError", PyExc_ValueError);
    py::register_exception<acq::ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<acq::TrainingError>(m, "TrainingError", PyExc_RuntimeError);

    py::class_<acq::Dataset>(m, "Dataset")
        .def_static("from_arrays", &dataset_from_arrays, "images"_a, "labels"_a, "scale"_a = "unit", "name"_a = "")
        .def("__len__", &acq::Dataset::size)
        .def_readwrite("name", &acq::Dataset::name)
        .def_property_readonly("scale", [](const acq::Dataset& d) { return std::string(acq::to_string(d.scale)); })
        .def_property_readonly("provenance",
                               [](const acq::Dataset& d) { return std::string(acq::to_string(d.provenance)); })
        .def_property_readonly("images",
                               [](const acq::Dataset& d) {
                                   Array out({d.size(), acq::kImageSide, acq::kImageSide});
                                   double* dst = out.mutable_data();
                                   for (const acq::Image& image : d.images) {
                                       std::memcpy(dst, image.pixels.data(), image.pixels.size() * sizeof(double));
                                       dst += image.pixels.size();
                                   }
                                   return out;
                               })
        .def_property_readonly("labels",
                               [](const acq::Dataset& d) {
                                   py::array_t<int> out(static_cast<py::ssize_t>(d.size()));
                                   for (std::size_t i = 0; i < d.size(); ++i)
                                       out.mutable_at(static_cast<py::ssize_t>(i)) = d.images[i].label.value_or(-1);
                                   return out;
                               })
        .def("label_histogram", &acq::Dataset::label_histogram)
        .def("subset",
             [](const acq::Dataset& d, std::size_t count) {
                 acq::Dataset out = d;
                 out.images.resize(std::min(count, d.size()));
                 return out;
             })
        .def("to_unit", [](const acq::Dataset& d) { return d.converted(acq::PixelScale::Unit); });

    m.def("load_idx", [](const std::filesystem::path& images, const std::filesystem::path& labels) {
        return acq::load_idx(images, labels);
    });
    m.def("load_dataset", &acq::load_dataset);
    m.def("save_dataset", &acq::save_dataset);

    py::class_<acq::LeNet>(m, "LeNet")
        .def_static("build", &acq::LeNet::build, "seed"_a = 1)
        .def_static("load", &acq::load_checkpoint)
        .def("save", [](const acq::LeNet& model, const std::filesystem::path& path) { acq::save_checkpoint(model, path); })
        .def_property_readonly("hash", &acq::checkpoint_hash)
        .def_property_readonly("parameter_count", &acq::LeNet::parameter_count)
        .def_property_readonly("metadata", [](const acq::LeNet& model) { return model.metadata(); })
        .def("predict",
             [](const acq::LeNet& model, const Array& image, const std::string& scale) {
                 const acq::Prediction p = acq::predict(model, to_image(image, scale));
                 return py::make_tuple(p.label, to_array(p.probabilities));
             },
             "image"_a, "scale"_a = "unit")
        .def("predict_batch",
             [](const acq::LeNet& model, const Array& batch, const std::string& scale) {
                 const auto images = to_images(batch, scale);
                 const auto predictions = acq::predict_batch(model, images);
                 py::array_t<int> labels(static_cast<py::ssize_t>(predictions.size()));
                 Array probabilities({predictions.size(), static_cast<std::size_t>(acq::kClassCount)});
                 for (std::size_t i = 0; i < predictions.size(); ++i) {
                     labels.mutable_at(static_cast<py::ssize_t>(i)) = predictions[i].label;
                     std::memcpy(probabilities.mutable_data(static_cast<py::ssize_t>(i)),
                                 predictions[i].probabilities.data().data(), acq::kClassCount * sizeof(double));
                 }
                 return py::make_tuple(labels, probabilities);
             },
             "images"_a, "scale"_a = "unit")
        .def("input_gradient",
             [](const acq::LeNet& model, const Array& image, int label, const std::string& scale) {
                 return to_array(acq::input_gradient(model, to_image(image, scale), label));
             },
             "image"_a, "label"_a, "scale"_a = "unit")
        .def("fused_predict",
             [](const acq::LeNet& model, const Array& image, const std::string& scale) {
                 const acq::FusedPrediction p = acq::fused_predict(model, to_image(image, scale));
                 return py::make_tuple(p.label, to_array(p.summed));
             },
             "image"_a, "scale"_a = "unit");

    m.def("train",
          [](const acq::LeNet& model, const acq::Dataset& data, int epochs, std::size_t batch_size,
             double learning_rate, std::uint64_t seed) {
              acq::TrainConfig config;
              config.epochs = epochs;
              config.batch_size = batch_size;
              config.learning_rate = learning_rate;
              config.seed = seed;
              py::gil_scoped_release release;
              return acq::train(model, data.converted(acq::PixelScale::Unit), config).model;
          },
          "model"_a, "data"_a, "epochs"_a = 1, "batch_size"_a = 64, "learning_rate"_a = 0.01, "seed"_a = 1);

    m.def("evaluate",
          [](const acq::LeNet& model, const acq::Dataset& data, std::optional<std::string> transform, bool fusion,
             std::uint64_t seed, unsigned threads) {
              acq::EvalOptions options;
              if (transform) options.transform = transform_from_text(*transform, seed);
              options.fusion = fusion;
              options.threads = threads;
              py::gil_scoped_release release;
              return acq::evaluate(model, data, options);
          },
          "model"_a, "data"_a, "transform"_a = py::none(), "fusion"_a = false, "seed"_a = 1, "threads"_a = 1);

    m.def("transform",
          [](const std::string& spec, const Array& image, std::uint64_t seed, const std::string& scale) {
              return to_array(acq::apply_transform(transform_from_text(spec, seed), to_image(image, scale)));
          },
          "spec"_a, "image"_a, "seed"_a = 1, "scale"_a = "unit",
          "Apply a grid row ('blur', 'binarize', ...) or a transform line ('noise stddev=0.1 seed=3').");
    m.def("translate_right", [](const Array& image, std::size_t shift) { return to_array(acq::translate_right(to_image(image), shift)); },
          "image"_a, "shift"_a = 1);
    m.def("add_noise",
          [](const Array& image, double mean, double stddev, std::uint64_t seed, const std::string& noise_scale) {
              return to_array(acq::add_noise(to_image(image), mean, stddev, seed, parse_noise_scale(noise_scale)));
          },
          "image"_a, "mean"_a = 0.0, "stddev"_a = 0.25, "seed"_a = 0, "noise_scale"_a = "unit");
    m.def("blur", [](const Array& image, std::size_t width, std::size_t height) { return to_array(acq::blur(to_image(image), width, height)); },
          "image"_a, "width"_a = 2, "height"_a = 1);
    m.def("crop_resize",
          [](const Array& image, std::size_t crop, const std::string& region) {
              return to_array(acq::crop_resize(to_image(image), crop, acq::parse_crop_region(region)));
          },
          "image"_a, "crop"_a = 27, "region"_a = "center");
    m.def("otsu_threshold", [](const Array& image, const std::string& scale) { return acq::otsu_threshold(to_image(image, scale)); },
          "image"_a, "scale"_a = "unit");
    m.def("binarize", [](const Array& image, const std::string& scale) { return to_array(acq::binarize(to_image(image, scale))); },
          "image"_a, "scale"_a = "unit", "Returns a byte-scale image with values in {0, 255}.");
    m.def("five_crops", [](const Array& image) {
        py::list out;
        for (const acq::Image& crop : acq::five_crops(to_image(image)).crops) out.append(to_array(crop));
        return out;
    });

    m.def("fgs_step",
          [](const acq::LeNet& model, const Array& image, int label, double epsilon, bool clip) {
              return to_array(acq::fgs_step(model, to_image(image, "unit", label), epsilon, clip));
          },
          "model"_a, "image"_a, "label"_a, "epsilon"_a, "clip"_a = true);
    m.def("fgv_step",
          [](const acq::LeNet& model, const Array& image, int label, double epsilon, bool clip) {
              return to_array(acq::fgv_step(model, to_image(image, "unit", label), epsilon, clip));
          },
          "model"_a, "image"_a, "label"_a, "epsilon"_a, "clip"_a = true);
    m.def("find_minimal_adversarial",
          [](const acq::LeNet& model, const Array& image, int label, const std::string& method, double epsilon_step,
             double epsilon_max, int fgv_multiplier) -> py::object {
              acq::AttackConfig config;
              config.method = acq::parse_attack_method(method);
              config.epsilon_start = epsilon_step;
              config.epsilon_step = epsilon_step;
              config.epsilon_max = epsilon_max;
              config.fgv_multiplier = fgv_multiplier;
              const acq::AttackOutcome outcome = acq::find_minimal_adversarial(model, to_image(image, "unit", label), config);
              if (!outcome.record) return py::none();
              return record_to_dict(*outcome.record);
          },
          "model"_a, "image"_a, "label"_a, "method"_a = "fgs", "epsilon_step"_a = 0.01, "epsilon_max"_a = 1.0,
          "fgv_multiplier"_a = 1, "Minimal-epsilon attack; None when the image is misclassified or no epsilon flips it.");
    m.def("perturbation_metrics",
          [](const Array& original, const Array& perturbed, const std::string& scale) {
              const auto metrics = acq::perturbation_metrics(to_image(original, scale), to_image(perturbed, scale));
              return py::make_tuple(metrics.l2, metrics.linf);
          },
          "original"_a, "perturbed"_a, "scale"_a = "unit", "(l2, linf) in gray levels.");

    m.def("risk_single_term", [](int n, int k, double p) { return acq::risk_single_term({n, k, p}); }, "frames"_a,
          "wrong"_a, "p"_a);
    m.def("risk_majority_tail", [](int n, int k, double p) { return acq::risk_majority_tail({n, k, p}); }, "frames"_a,
          "wrong"_a, "p"_a);

    m.attr("GRID_ROWS") = py::cast(std::vector<std::string>(acq::kGridRows.begin(), acq::kGridRows.end()));
}

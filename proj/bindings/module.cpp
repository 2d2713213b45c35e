#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "json.hpp"

#include "capsforge/affine.hpp"
#include "capsforge/capsnet.hpp"
#include "capsforge/checkpoint.hpp"
#include "capsforge/config_io.hpp"
#include "capsforge/dataset.hpp"
#include "capsforge/optimizer.hpp"
#include "capsforge/pca.hpp"

namespace py = pybind11;
using namespace capsforge;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

TensorF to_tensor(const FloatArray& a) {
    Shape shape(static_cast<std::size_t>(a.ndim()));
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<std::size_t>(i)] = a.shape(i);
    std::vector<float> data(a.data(), a.data() + a.size());
    return TensorF::from_data(std::move(shape), std::move(data));
}

py::array_t<float> to_array(const TensorF& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<float> out(shape);
    auto vals = t.values();
    std::copy(vals.begin(), vals.end(), out.mutable_data());
    return out;
}

py::array_t<double> vec_array(const std::vector<double>& v, std::vector<py::ssize_t> shape) {
    py::array_t<double> out(shape);
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

CapsNetConfig config_from_dict(const py::dict& overrides) {
    nlohmann::json j = CapsNetConfig{};
    for (auto item : overrides) {
        const std::string key = py::cast<std::string>(item.first);
        if (!j.contains(key)) throw ContractError("unknown config key: " + key);
        if (key == "decoder_hidden")
            j[key] = py::cast<std::vector<std::size_t>>(item.second);
        else if (j[key].is_number_float())
            j[key] = py::cast<double>(item.second);
        else
            j[key] = py::cast<std::size_t>(item.second);
    }
    CapsNetConfig cfg = j.get<CapsNetConfig>();
    cfg.validate();
    return cfg;
}

// Owns a config + parameter set; forward/loss run on float32 numpy batches.
class Model {
public:
    Model(const py::dict& config, std::uint64_t seed) : cfg_(config_from_dict(config)) {
        Rng rng(seed, Stream::init);
        params_ = CapsNetParams<float>::init(cfg_, rng);
    }

    py::dict forward(const FloatArray& images, std::size_t routing_iters) {
        NoGradGuard guard;
        const CapsNetOutput<float> out = capsnet_forward(cfg_, params_, to_tensor(images), routing_iters);
        py::dict r;
        r["digit_caps"] = to_array(out.digit_caps);
        r["couplings"] = to_array(out.couplings);
        r["norms"] = to_array(out.norms);
        r["predicted"] = py::cast(out.predicted);
        return r;
    }

    py::dict loss(const FloatArray& images, const std::vector<int>& labels) {
        NoGradGuard guard;
        const TensorF batch = to_tensor(images);
        const CapsNetOutput<float> out = capsnet_forward(cfg_, params_, batch);
        const CapsNetLoss<float> l = capsnet_loss(cfg_, params_, out, batch, labels);
        py::dict r;
        r["total"] = static_cast<double>(l.total.item());
        r["margin"] = static_cast<double>(l.margin.item());
        r["recon"] = static_cast<double>(l.recon.item());
        return r;
    }

    double train_step(const FloatArray& images, const std::vector<int>& labels, double lr) {
        if (!opt_ || opt_lr_ != lr) {
            Adam::Config acfg;
            acfg.lr = static_cast<float>(lr);
            opt_ = std::make_unique<Adam>(params_.all(), acfg);
            opt_lr_ = lr;
        }
        opt_->zero_grad();
        const TensorF batch = to_tensor(images);
        CapsNetOutput<float> out = capsnet_forward(cfg_, params_, batch);
        CapsNetLoss<float> l = capsnet_loss(cfg_, params_, out, batch, labels);
        const double value = l.total.item();
        backward(l.total);
        opt_->step();
        return value;
    }

    py::array_t<float> reconstruct(const FloatArray& images) {
        NoGradGuard guard;
        const TensorF batch = to_tensor(images);
        const CapsNetOutput<float> out = capsnet_forward(cfg_, params_, batch);
        return to_array(capsnet_decode(cfg_, params_, out.digit_caps, out.predicted));
    }

    void save(const std::string& path) const {
        const nlohmann::json snap = {{"arch", "capsnet"}, {"model", cfg_}};
        save_checkpoint(path, snap.dump(), params_.named());
    }

    void load(const std::string& path) {
        LoadedCheckpoint ck = load_checkpoint(path);
        const nlohmann::json snap = parse_config_json(ck.config_json);
        CapsNetConfig cfg = snap.at("model").get<CapsNetConfig>();
        cfg.validate();
        cfg_ = cfg;
        params_ = CapsNetParams<float>::zeros_like(cfg_);
        fill_named(ck, params_.named());
        opt_.reset();
    }

    std::size_t parameter_count() const { return params_.count(); }
    std::string config_json() const { return nlohmann::json(cfg_).dump(); }

private:
    CapsNetConfig cfg_;
    CapsNetParams<float> params_;
    std::unique_ptr<Adam> opt_;
    double opt_lr_ = 0.0;
};

}  // namespace

PYBIND11_MODULE(_capsforge, m) {
    m.doc() = "capsule network primitives (float32)";

    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_IOError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<IncompatibilityError>(m, "IncompatibilityError", PyExc_ValueError);

    m.def(
        "squash",
        [](const FloatArray& x, double eps) {
            NoGradGuard guard;
            return to_array(squash(to_tensor(x), static_cast<float>(eps)));
        },
        py::arg("x"), py::arg("eps") = 1e-9, "Nonlinear length scaling over the last axis.");

    m.def(
        "softmax",
        [](const FloatArray& x, std::size_t axis) {
            NoGradGuard guard;
            return to_array(softmax_axis(to_tensor(x), axis));
        },
        py::arg("x"), py::arg("axis"));

    m.def(
        "relu",
        [](const FloatArray& x) {
            NoGradGuard guard;
            return to_array(relu(to_tensor(x)));
        },
        py::arg("x"));

    m.def(
        "conv2d",
        [](const FloatArray& x, const FloatArray& kernel, const FloatArray& bias, std::size_t stride) {
            NoGradGuard guard;
            return to_array(conv2d(to_tensor(x), to_tensor(kernel), to_tensor(bias), stride));
        },
        py::arg("x"), py::arg("kernel"), py::arg("bias"), py::arg("stride") = 1,
        "Valid cross-correlation on [N,C,H,W] input with [F,C,KH,KW] kernel.");

    m.def(
        "dense",
        [](const FloatArray& x, const FloatArray& w, const FloatArray& b) {
            NoGradGuard guard;
            return to_array(dense(to_tensor(x), to_tensor(w), to_tensor(b)));
        },
        py::arg("x"), py::arg("w"), py::arg("b"));

    m.def(
        "predict_vectors",
        [](const FloatArray& u, const FloatArray& w) {
            NoGradGuard guard;
            return to_array(predict_vectors(to_tensor(u), to_tensor(w)));
        },
        py::arg("u"), py::arg("w"),
        "Per-(input,output) pair linear predictions: u [N,I,Din] x w [I,J,Din,Dout] -> [N,I,J,Dout].");

    m.def(
        "route",
        [](const FloatArray& uhat, std::size_t iters, bool trace) {
            NoGradGuard guard;
            RoutingTrace<float> tr;
            const RoutingResult<float> r = route(to_tensor(uhat), iters, trace ? &tr : nullptr);
            py::dict out;
            out["v"] = to_array(r.v);
            out["couplings"] = to_array(r.couplings);
            if (trace) {
                py::list cs, vs;
                for (const auto& c : tr.couplings) cs.append(py::cast(c));
                for (const auto& v : tr.v) vs.append(py::cast(v));
                out["trace_couplings"] = cs;
                out["trace_v"] = vs;
            }
            return out;
        },
        py::arg("uhat"), py::arg("iters") = 3, py::arg("trace") = false,
        "Agreement routing over predictions [N,I,J,D] (or [I,J,D]).");

    m.def(
        "margin_loss",
        [](const FloatArray& norms, const std::vector<int>& labels, double m_plus, double m_minus,
           double lam) {
            NoGradGuard guard;
            const TensorF t = to_tensor(norms);
            if (t.shape().size() != 2) throw DimensionError("margin_loss: norms must be [N, classes]");
            CapsNetConfig cfg;
            cfg.num_classes = t.shape()[1];
            cfg.margin_m_plus = m_plus;
            cfg.margin_m_minus = m_minus;
            cfg.margin_lambda = lam;
            return static_cast<double>(margin_loss(t, labels, cfg).item());
        },
        py::arg("norms"), py::arg("labels"), py::arg("m_plus") = 0.9, py::arg("m_minus") = 0.1,
        py::arg("lambda_") = 0.5);

    m.def(
        "pca",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& rows,
           std::size_t out_dims) {
            if (rows.ndim() != 2) throw DimensionError("pca: rows must be 2-d");
            const std::size_t n = static_cast<std::size_t>(rows.shape(0));
            const std::size_t d = static_cast<std::size_t>(rows.shape(1));
            std::vector<double> data(rows.data(), rows.data() + rows.size());
            const PcaResult r = pca_project(data, n, d, out_dims);
            py::dict out;
            out["mean"] = vec_array(r.mean, {static_cast<py::ssize_t>(d)});
            out["components"] =
                vec_array(r.components, {static_cast<py::ssize_t>(out_dims), static_cast<py::ssize_t>(d)});
            out["eigenvalues"] = vec_array(r.eigenvalues, {static_cast<py::ssize_t>(out_dims)});
            out["explained"] = vec_array(r.explained, {static_cast<py::ssize_t>(out_dims)});
            out["projected"] =
                vec_array(r.projected, {static_cast<py::ssize_t>(n), static_cast<py::ssize_t>(out_dims)});
            out["sphereized"] =
                vec_array(r.sphereized, {static_cast<py::ssize_t>(n), static_cast<py::ssize_t>(out_dims)});
            return out;
        },
        py::arg("rows"), py::arg("out_dims") = 3);

    m.def(
        "apply_affine",
        [](const FloatArray& image, double angle_deg, double shear_x, double shear_y, double tx, double ty,
           double scale) {
            if (image.ndim() != 2 && image.ndim() != 3)
                throw DimensionError("apply_affine: image must be [H,W] or [C,H,W]");
            const std::size_t c = image.ndim() == 3 ? image.shape(0) : 1;
            const std::size_t h = image.shape(image.ndim() - 2);
            const std::size_t w = image.shape(image.ndim() - 1);
            AffineSpec spec{angle_deg, shear_x, shear_y, tx, ty, scale};
            py::array_t<float> out(std::vector<py::ssize_t>(image.shape(), image.shape() + image.ndim()));
            apply_affine(image.data(), out.mutable_data(), c, h, w, spec);
            return out;
        },
        py::arg("image"), py::arg("angle_deg") = 0.0, py::arg("shear_x") = 0.0, py::arg("shear_y") = 0.0,
        py::arg("tx") = 0.0, py::arg("ty") = 0.0, py::arg("scale") = 1.0);

    m.def(
        "load_idx",
        [](const std::string& images_path, const std::string& labels_path) {
            const LabeledDataset ds = load_idx(images_path, labels_path);
            py::array_t<float> images({static_cast<py::ssize_t>(ds.size()),
                                       static_cast<py::ssize_t>(ds.channels),
                                       static_cast<py::ssize_t>(ds.height),
                                       static_cast<py::ssize_t>(ds.width)});
            std::copy(ds.images.begin(), ds.images.end(), images.mutable_data());
            py::array_t<int> labels(std::vector<py::ssize_t>{static_cast<py::ssize_t>(ds.size())});
            std::copy(ds.labels.begin(), ds.labels.end(), labels.mutable_data());
            return py::make_tuple(images, labels);
        },
        py::arg("images_path"), py::arg("labels_path"));

    py::class_<Model>(m, "Model")
        .def(py::init<const py::dict&, std::uint64_t>(), py::arg("config") = py::dict(),
             py::arg("seed") = 42)
        .def("forward", &Model::forward, py::arg("images"), py::arg("routing_iters") = 0)
        .def("loss", &Model::loss, py::arg("images"), py::arg("labels"))
        .def("train_step", &Model::train_step, py::arg("images"), py::arg("labels"), py::arg("lr") = 1e-3)
        .def("reconstruct", &Model::reconstruct, py::arg("images"))
        .def("save", &Model::save, py::arg("path"))
        .def("load", &Model::load, py::arg("path"))
        .def_property_readonly("parameter_count", &Model::parameter_count)
        .def_property_readonly("config_json", &Model::config_json);
}

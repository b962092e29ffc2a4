#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "diffedit/attention.hpp"
#include "diffedit/config.hpp"
#include "diffedit/data.hpp"
#include "diffedit/error.hpp"
#include "diffedit/guidance.hpp"
#include "diffedit/sampler.hpp"
#include "diffedit/tensor_io.hpp"
#include "diffedit/verify.hpp"

namespace py = pybind11;
using namespace diffedit;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    if (a.ndim() == 0) return Tensor::scalar(*a.data());
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
    Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
    std::copy(t.values().begin(), t.values().end(), out.mutable_data());
    return out;
}

std::optional<Tensor> opt_tensor(const std::optional<Array>& a) {
    return a ? std::optional<Tensor>(to_tensor(*a)) : std::nullopt;
}

py::dict json_to_dict(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Guided diffusion image editing with closed-form oracles";

    auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<DimensionError>(m, "DimensionError", error);
    py::register_exception<ConfigError>(m, "ConfigError", error);
    py::register_exception<RangeError>(m, "RangeError", error);
    py::register_exception<GraphError>(m, "GraphError", error);
    py::register_exception<BankError>(m, "BankError", error);
    py::register_exception<TrainingError>(m, "TrainingError", error);
    py::register_exception<IoError>(m, "IoError", error);

    py::class_<ScheduleParams>(m, "ScheduleParams")
        .def(py::init<>())
        .def_readwrite("t_train", &ScheduleParams::t_train)
        .def_readwrite("beta_min", &ScheduleParams::beta_min)
        .def_readwrite("beta_max", &ScheduleParams::beta_max)
        .def_readwrite("infer_steps", &ScheduleParams::infer_steps);

    py::class_<NoiseSchedule>(m, "NoiseSchedule")
        .def(py::init<const ScheduleParams&>(), py::arg("params") = ScheduleParams{})
        .def("alpha_bar", &NoiseSchedule::alpha_bar, py::arg("t"))
        .def("beta", &NoiseSchedule::beta, py::arg("t"))
        .def("sigma", &NoiseSchedule::sigma, py::arg("t"), py::arg("t_prev"), py::arg("eta"))
        .def("ddpm_posterior_std", &NoiseSchedule::ddpm_posterior_std, py::arg("t"), py::arg("t_prev"))
        .def_property_readonly("timesteps", &NoiseSchedule::timesteps)
        .def("prev_timestep", &NoiseSchedule::prev_timestep, py::arg("i"))
        .def(
            "q_sample",
            [](const NoiseSchedule& s, const Array& x0, int t, const Array& eps) {
                return to_array(s.q_sample(to_tensor(x0), t, to_tensor(eps)));
            },
            py::arg("x0"), py::arg("t"), py::arg("eps"));

    m.def(
        "ddim_step",
        [](const NoiseSchedule& s, const Array& z, const Array& eps, int t, int t_prev, double sigma,
           const std::optional<Array>& noise) {
            std::optional<Tensor> n = opt_tensor(noise);
            return to_array(ddim_step(s, to_tensor(z), to_tensor(eps), t, t_prev, sigma, n ? &*n : nullptr));
        },
        py::arg("schedule"), py::arg("z_t"), py::arg("eps"), py::arg("t"), py::arg("t_prev"), py::arg("sigma") = 0.0,
        py::arg("noise") = py::none());
    m.def(
        "ddim_invert_step",
        [](const NoiseSchedule& s, const Array& z, const Array& eps, int t, int t_prev) {
            return to_array(ddim_invert_step(s, to_tensor(z), to_tensor(eps), t, t_prev));
        },
        py::arg("schedule"), py::arg("z_prev"), py::arg("eps"), py::arg("t"), py::arg("t_prev"));

    py::class_<GmmPrior>(m, "GmmPrior")
        .def(py::init([](std::vector<double> w, const Array& means, double std) {
                 GmmPrior p{std::move(w), to_tensor(means), std};
                 p.validate();
                 return p;
             }),
             py::arg("weights"), py::arg("means"), py::arg("std"))
        .def_readonly("weights", &GmmPrior::weights)
        .def_property_readonly("means", [](const GmmPrior& p) { return to_array(p.means); })
        .def_readonly("std", &GmmPrior::std);

    m.def(
        "analytic_gmm_eps",
        [](const GmmPrior& p, const Array& z, double a) { return to_array(analytic_gmm_eps(p, to_tensor(z), a)); },
        py::arg("prior"), py::arg("z_t"), py::arg("alpha_bar"));
    m.def("blob_move_prior", &blob_move_prior, py::arg("size") = 32);

    py::class_<Denoiser>(m, "Denoiser");
    py::class_<GmmDenoiser, Denoiser>(m, "GmmDenoiser")
        .def(py::init<GmmPrior, NoiseSchedule>(), py::arg("prior"), py::arg("schedule"))
        .def(
            "predict_eps",
            [](const GmmDenoiser& d, const Array& z, int t) { return to_array(d.predict_eps(to_tensor(z), t, {})); },
            py::arg("z_t"), py::arg("t"));

    py::enum_<EditTask>(m, "EditTask")
        .value("move", EditTask::move)
        .value("resize", EditTask::resize)
        .value("paste", EditTask::paste)
        .value("replace", EditTask::replace)
        .value("drag", EditTask::drag);

    py::class_<RegionPair>(m, "RegionPair")
        .def(py::init<int, int, int, int>(), py::arg("src_row"), py::arg("src_col"), py::arg("dst_row"),
             py::arg("dst_col"))
        .def_readwrite("src_row", &RegionPair::src_row)
        .def_readwrite("src_col", &RegionPair::src_col)
        .def_readwrite("dst_row", &RegionPair::dst_row)
        .def_readwrite("dst_col", &RegionPair::dst_col);

    py::class_<EditSpec>(m, "EditSpec")
        .def(py::init([](EditTask task, const Array& mask, std::vector<RegionPair> pairs) {
                 return EditSpec{task, to_tensor(mask), std::move(pairs), std::nullopt};
             }),
             py::arg("task"), py::arg("mask"), py::arg("region_map") = std::vector<RegionPair>{})
        .def_readwrite("task", &EditSpec::task)
        .def_property(
            "mask", [](const EditSpec& s) { return to_array(s.mask); },
            [](EditSpec& s, const Array& a) { s.mask = to_tensor(a); })
        .def_readwrite("region_map", &EditSpec::region_map)
        .def_readwrite("reference_id", &EditSpec::reference_id)
        .def("is_identity", &EditSpec::is_identity)
        .def("validate", [](const EditSpec& s, std::vector<std::size_t> shape) { s.validate(shape); });

    m.def("make_move_spec", &make_move_spec, py::arg("size"), py::arg("src_row"), py::arg("src_col"),
          py::arg("dst_row"), py::arg("dst_col"), py::arg("radius"));
    m.def("make_resize_spec", &make_resize_spec, py::arg("size"), py::arg("row"), py::arg("col"), py::arg("radius"),
          py::arg("factor"));
    m.def("make_drag_spec", &make_drag_spec, py::arg("size"), py::arg("handle_row"), py::arg("handle_col"),
          py::arg("target_row"), py::arg("target_col"), py::arg("neighborhood") = 3.0);
    m.def("make_paste_spec", &make_paste_spec, py::arg("size"), py::arg("src_row"), py::arg("src_col"),
          py::arg("dst_row"), py::arg("dst_col"), py::arg("radius"));
    m.def("make_replace_spec", &make_replace_spec, py::arg("size"), py::arg("row"), py::arg("col"),
          py::arg("radius"));

    py::class_<SamplerConfig>(m, "SamplerConfig")
        .def(py::init<>())
        .def_readwrite("n", &SamplerConfig::n)
        .def_readwrite("guidance_stride", &SamplerConfig::guidance_stride)
        .def_readwrite("tau_sde", &SamplerConfig::tau_sde)
        .def_readwrite("tau_tt", &SamplerConfig::tau_tt)
        .def_readwrite("U", &SamplerConfig::U)
        .def_readwrite("eta1", &SamplerConfig::eta1)
        .def_readwrite("eta2", &SamplerConfig::eta2)
        .def_readwrite("guidance_lr", &SamplerConfig::guidance_lr)
        .def_readwrite("cfg_scale", &SamplerConfig::cfg_scale)
        .def_readwrite("gamma", &SamplerConfig::gamma)
        .def_readwrite("rng_seed", &SamplerConfig::rng_seed)
        .def_readwrite("visual_xattn", &SamplerConfig::visual_xattn)
        .def("to_dict", [](const SamplerConfig& c) { return json_to_dict(to_json(c)); });

    py::class_<MemoryBank>(m, "MemoryBank")
        .def("__len__", &MemoryBank::size)
        .def("__contains__", &MemoryBank::contains)
        .def("latent", [](const MemoryBank& b, int t) { return to_array(b.at(t).z_gud); }, py::arg("t"));

    py::class_<Inversion>(m, "Inversion")
        .def_property_readonly("z_T", [](const Inversion& i) { return to_array(i.z_T); })
        .def_readonly("bank", &Inversion::bank);

    m.def(
        "invert",
        [](const Array& x0, const std::optional<Array>& ref, const Denoiser& model, const NoiseSchedule& s) {
            std::optional<Tensor> r = opt_tensor(ref);
            return invert(to_tensor(x0), r ? &*r : nullptr, ConditionBundle{}, model, s);
        },
        py::arg("x0"), py::arg("reference") = py::none(), py::arg("model"), py::arg("schedule"));
    m.def(
        "reconstruct",
        [](const Array& z_T, const Denoiser& model, const NoiseSchedule& s) {
            return to_array(reconstruct(to_tensor(z_T), ConditionBundle{}, model, s));
        },
        py::arg("z_T"), py::arg("model"), py::arg("schedule"));
    m.def(
        "run_edit",
        [](const Array& x0, const EditSpec& spec, const Denoiser& model, const NoiseSchedule& s,
           const SamplerConfig& cfg, const std::optional<Array>& ref) {
            std::optional<Tensor> r = opt_tensor(ref);
            EditResult res;
            {
                py::gil_scoped_release release;
                res = run_edit(to_tensor(x0), r ? &*r : nullptr, spec, ConditionBundle{}, model, s, cfg);
            }
            py::list steps;
            for (const auto& st : res.steps) steps.append(json_to_dict(to_json(st)));
            return py::make_tuple(to_array(res.image), steps);
        },
        py::arg("x0"), py::arg("spec"), py::arg("model"), py::arg("schedule"), py::arg("config") = SamplerConfig{},
        py::arg("reference") = py::none(), "Returns (edited image, per-step log dicts).");

    m.def(
        "energy_edit",
        [](const Array& z, const Array& gud, const std::optional<Array>& ref, const EditSpec& spec) {
            MemoryBank b;
            b.put(0, BankEntry{to_tensor(gud), opt_tensor(ref), {}, {}});
            return energy_edit(to_tensor(z), b, spec, 0);
        },
        py::arg("z"), py::arg("guide"), py::arg("reference") = py::none(), py::arg("spec"));
    m.def(
        "energy_content",
        [](const Array& z, const Array& gud, const EditSpec& spec) {
            MemoryBank b;
            b.put(0, BankEntry{to_tensor(gud), std::nullopt, {}, {}});
            return energy_content(to_tensor(z), b, spec, 0);
        },
        py::arg("z"), py::arg("guide"), py::arg("spec"));
    m.def(
        "regional_gradient",
        [](const Array& z, const Array& gud, const std::optional<Array>& ref, const EditSpec& spec) {
            MemoryBank b;
            b.put(0, BankEntry{to_tensor(gud), opt_tensor(ref), {}, {}});
            EnergyReport r = regional_gradient(to_tensor(z), b, spec, 0);
            return py::make_tuple(r.e_edit, r.e_content, to_array(r.grad));
        },
        py::arg("z"), py::arg("guide"), py::arg("reference") = py::none(), py::arg("spec"),
        "Returns (e_edit, e_content, combined gradient).");

    m.def(
        "fused_attention",
        [](const Array& q, const Array& k1, const Array& v1, const std::optional<Array>& k2,
           const std::optional<Array>& v2, double gamma) {
            return to_array(fused_attention(to_tensor(q), to_tensor(k1), to_tensor(v1), opt_tensor(k2), opt_tensor(v2),
                                            gamma));
        },
        py::arg("q"), py::arg("k1"), py::arg("v1"), py::arg("k2") = py::none(), py::arg("v2") = py::none(),
        py::arg("gamma") = 0.0);

    m.def(
        "generate_blobs",
        [](std::size_t count, std::size_t size, std::uint64_t seed) {
            py::list out;
            for (const auto& s : generate_blobs(count, size, seed)) out.append(py::make_tuple(to_array(s.image), s.label));
            return out;
        },
        py::arg("count"), py::arg("size") = 32, py::arg("seed") = 0, "List of (image, label).");

    m.def(
        "load_tnsr", [](const std::filesystem::path& p) { return to_array(load_tnsr(p)); }, py::arg("path"));
    m.def(
        "save_tnsr", [](const std::filesystem::path& p, const Array& a) { save_tnsr(p, to_tensor(a)); },
        py::arg("path"), py::arg("array"));

    m.def("suite_names", &suite_names);
    m.def(
        "verify",
        [](const std::string& name, std::uint64_t seed) {
            VerifyOptions o;
            o.seed = seed;
            SuiteReport r;
            {
                py::gil_scoped_release release;
                r = run_suite(name, o);
            }
            return json_to_dict(r.to_json());
        },
        py::arg("suite"), py::arg("seed") = 0);
}

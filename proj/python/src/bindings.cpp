#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "invbench/bench.hpp"
#include "invbench/linops.hpp"
#include "invbench/metrics.hpp"
#include "invbench/priors.hpp"
#include "invbench/variational.hpp"

namespace py = pybind11;
using namespace invbench;

namespace {

linops::Shape square(int n) { return {n, n}; }

// Python holds operators through a non-const holder; they are immutable anyway.
using PyOp = std::shared_ptr<linops::LinearOperator>;
PyOp py_op(linops::OperatorPtr p) { return std::const_pointer_cast<linops::LinearOperator>(std::move(p)); }

metrics::NoiseModel noise_model(const std::string& kind, double level) {
    return {metrics::parse_noise_kind(kind), level};
}

// Runs one solver by name on (A, y); parameters use the spec-file keys.
Vector reconstruct(const std::string& method, PyOp A, const Vector& y,
                   const std::map<std::string, std::string>& params, std::shared_ptr<priors::GmmPrior> prior,
                   double sigma, std::uint64_t seed) {
    bench::SolverSpec s;
    s.id = method;
    s.method = method;
    s.params = params;
    bench::PriorRegistry reg;
    if (prior) {
        s.prior = "prior";
        reg["prior"] = prior;
    }
    s.validate();
    bench::Instance inst;
    inst.A = inst.A_data = std::move(A);
    inst.y = y;
    inst.sigma_nominal = sigma;
    inst.noise = {metrics::NoiseKind::gaussian, sigma};
    return bench::run_solver(s, s.params, inst, reg, seed);
}

}  // namespace

PYBIND11_MODULE(_invbench, m) {
    m.doc() = "Linear inverse problems: operators, GMM priors, solvers and metrics";

    py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
    py::register_exception<SolverFailure>(m, "SolverFailure", PyExc_RuntimeError);

    py::class_<linops::LinearOperator, PyOp>(m, "LinearOperator")
        .def("apply", &linops::LinearOperator::apply)
        .def("adjoint", &linops::LinearOperator::adjoint)
        .def_property_readonly("in_size", &linops::LinearOperator::in_size)
        .def_property_readonly("out_size", &linops::LinearOperator::out_size)
        .def_property_readonly("kind", [](const linops::LinearOperator& op) { return linops::to_string(op.kind()); });

    m.def("identity", [](int n) { return py_op(linops::make_identity(square(n))); }, py::arg("image_size"));
    m.def(
        "radon",
        [](int n, int angles, int detectors) {
            return py_op(linops::make_radon(linops::RadonGeometry::uniform(n, angles, detectors)));
        },
        py::arg("image_size"), py::arg("n_angles"), py::arg("n_detectors") = 0);
    m.def(
        "random_mask", [](int n, double frac, std::uint64_t seed) { return py_op(linops::make_random_mask(square(n), frac, seed)); },
        py::arg("image_size"), py::arg("missing_fraction"), py::arg("seed"));
    m.def(
        "gaussian_blur",
        [](int n, double sigma) { return py_op(linops::make_blur(square(n), linops::gaussian_kernel(sigma))); },
        py::arg("image_size"), py::arg("sigma"));
    m.def(
        "downsample", [](int n, int factor) { return py_op(linops::make_downsample(square(n), factor)); },
        py::arg("image_size"), py::arg("factor"));
    m.def("matrix", [](const Matrix& a) { return py_op(linops::make_matrix(a)); }, py::arg("a"));
    m.def("op_norm", &linops::op_norm, py::arg("op"), py::arg("iters") = 100, py::arg("seed") = 0);
    m.def("to_dense", &linops::to_dense);
    m.def(
        "fbp",
        [](const Vector& y, int image_size, int n_angles, const std::string& filter) {
            const auto g = linops::RadonGeometry::uniform(image_size, n_angles);
            return linops::fbp(Sinogram(n_angles, g.n_detectors, y), g, linops::parse_fbp_filter(filter)).data;
        },
        py::arg("y"), py::arg("image_size"), py::arg("n_angles"), py::arg("filter") = "ramp");

    py::class_<priors::GmmPrior, std::shared_ptr<priors::GmmPrior>>(m, "GmmPrior")
        .def(py::init<Vector, Matrix, Vector>(), py::arg("weights"), py::arg("means"), py::arg("variances"))
        .def_readonly("weights", &priors::GmmPrior::weights)
        .def_readonly("means", &priors::GmmPrior::means)
        .def_readonly("variances", &priors::GmmPrior::variances)
        .def_property_readonly("dim", &priors::GmmPrior::dim)
        .def_property_readonly("components", &priors::GmmPrior::components);
    m.def("gmm_log_density", &priors::gmm_log_density);
    m.def("gmm_score", &priors::gmm_grad_log_density);
    m.def(
        "gmm_sample", [](const priors::GmmPrior& p, std::uint64_t seed) { Rng rng(seed); return priors::gmm_sample(p, rng); },
        py::arg("prior"), py::arg("seed"));
    m.def("fit_gmm_em", &priors::fit_gmm_em, py::arg("samples"), py::arg("components"), py::arg("iters"),
          py::arg("seed"));
    m.def("load_gmm", &priors::load_gmm);
    m.def("save_gmm", &priors::save_gmm);
    m.def(
        "ellipse_image",
        [](int size, std::uint64_t seed, int max_ellipses) {
            priors::EllipseSceneParams p;
            p.image_size = size;
            p.max_ellipses = max_ellipses;
            Rng rng(seed);
            return priors::generate_ellipse_image(p, rng).data;
        },
        py::arg("image_size"), py::arg("seed"), py::arg("max_ellipses") = 70);

    m.def("psnr", &metrics::psnr, py::arg("x"), py::arg("x_true"));
    m.def(
        "ssim", [](const Vector& x, const Vector& t, int rows, int cols) { return metrics::ssim(x, t, {rows, cols}); },
        py::arg("x"), py::arg("x_true"), py::arg("rows"), py::arg("cols"));
    m.def(
        "data_consistency",
        [](const Vector& x, const Vector& y, const linops::LinearOperator& A, const std::string& kind, double level) {
            return metrics::data_consistency(x, y, A, noise_model(kind, level));
        },
        py::arg("x"), py::arg("y"), py::arg("op"), py::arg("noise") = "gaussian", py::arg("level"));
    m.def(
        "add_noise",
        [](const Vector& y, const std::string& kind, double level, std::uint64_t seed) {
            Rng rng(seed);
            return bench::add_noise(y, noise_model(kind, level), rng);
        },
        py::arg("y"), py::arg("noise") = "gaussian", py::arg("level"), py::arg("seed"));

    m.def("derive_seed", &bench::derive_seed, py::arg("master"), py::arg("problem"), py::arg("solver"),
          py::arg("grid_index"), py::arg("realization"));
    m.def("reconstruct", &reconstruct, py::arg("method"), py::arg("op"), py::arg("y"),
          py::arg("params") = std::map<std::string, std::string>{}, py::arg("prior") = nullptr,
          py::arg("sigma") = 0.0, py::arg("seed") = 0,
          "Run fbp, tv, smooth_reg, dps, diffpir, reddiff, dmplug or pnpflow. Parameter values are strings.");
}

#include "invbench/pnpflow.hpp"

#include <cmath>

namespace invbench::pnpflow {

Variant parse_variant(const std::string& name) {
    if (name == "explicit") return Variant::explicit_step;
    if (name == "implicit") return Variant::implicit_step;
    throw InvalidInput("unknown pnpflow variant '" + name + "'");
}

std::string to_string(Variant v) { return v == Variant::explicit_step ? "explicit" : "implicit"; }

void PnpFlowConfig::validate() const {
    require(steps >= 1, "pnpflow: N must be >= 1");
    require(realizations >= 1, "pnpflow: K must be >= 1");
    require(gamma > 0.0 && std::isfinite(gamma), "pnpflow: gamma must be positive");
    require(alpha >= 0.0, "pnpflow: alpha must be >= 0");
}

double step_weight(const PnpFlowConfig& cfg, int n) {
    const double t = double(n) / cfg.steps;
    return cfg.gamma * std::pow(1.0 - t, cfg.alpha);
}

Vector pnpflow(const Vector& y, const linops::LinearOperator& A, const priors::FlowPrior& fp, const PnpFlowConfig& cfg,
               Rng& rng, const Vector& x_init) {
    cfg.validate();
    require(y.size() == A.out_size(), "pnpflow: y has wrong length");
    require(x_init.size() == A.in_size() && A.in_size() == fp.base.dim(), "pnpflow: dimension mismatch");
    const Eigen::Index n = x_init.size();

    Vector x = x_init;
    for (int k = 0; k <= cfg.steps; ++k) {
        const double t = double(k) / cfg.steps;
        const double g = step_weight(cfg, k);
        Vector z;
        if (g == 0.0)
            z = x;
        else if (cfg.variant == Variant::explicit_step)
            z = x - g * A.adjoint(A.apply(x) - y);
        else
            z = variational::prox_data(x, A, y, g, cfg.prox);

        if (k == cfg.steps) {
            // t = 1: the interpolation collapses onto z and the velocity factor vanishes.
            x = std::move(z);
        } else {
            // Realizations are summed in draw order so the result does not depend on scheduling.
            Vector acc = Vector::Zero(n);
            for (int r = 0; r < cfg.realizations; ++r) {
                const Vector zt = (1.0 - t) * randn(n, rng) + t * z;
                acc += priors::gmm_flow_denoise(fp, zt, t);
            }
            x = acc / double(cfg.realizations);
        }
        if (!x.allFinite()) throw SolverFailure("pnpflow: iterate became non-finite at step " + std::to_string(k));
    }
    return x;
}

}  // namespace invbench::pnpflow

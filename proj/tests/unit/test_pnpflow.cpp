#include <cmath>

#include "doctest.h"
#include "invbench/pnpflow.hpp"
#include "invbench/priors.hpp"
#include "oracles.hpp"

using namespace invbench;
using invbench::pnpflow::PnpFlowConfig;
using invbench::pnpflow::Variant;
using invbench::pnpflow::step_weight;
using invbench::pnpflow::parse_variant;
using linops::make_identity;

namespace {

priors::FlowPrior separated_mixture(int n, double s2) {
    Matrix mu(n, 2);
    mu.col(0) = Vector::Constant(n, 2.0);
    mu.col(1) = Vector::Constant(n, -2.0);
    return {priors::GmmPrior(Vector::Constant(2, 0.5), mu, Vector::Constant(2, s2))};
}

}  // namespace

TEST_SUITE("pnpflow") {
    TEST_CASE("step weights") {
        PnpFlowConfig cfg;
        cfg.steps = 20;
        cfg.gamma = 3.0;
        for (double a : {1.0, 1.5, 3.0}) {
            cfg.alpha = a;
            for (int n = 1; n <= 20; ++n) CHECK(step_weight(cfg, n) <= step_weight(cfg, n - 1));
            CHECK(step_weight(cfg, 20) == 0.0);
            CHECK(step_weight(cfg, 0) == 3.0);
        }
        CHECK(parse_variant("explicit") == Variant::explicit_step);
        CHECK_THROWS_AS(parse_variant("semi"), InvalidInput);
        cfg.gamma = 0.0;
        CHECK_THROWS_AS(cfg.validate(), InvalidInput);
    }

    TEST_CASE("negligible data weight: iterates settle near a mixture mean") {
        const double s2 = 0.01;
        const auto fp = separated_mixture(4, s2);
        const auto I = make_identity({2, 2});
        for (Variant v : {Variant::explicit_step, Variant::implicit_step}) {
            PnpFlowConfig cfg;
            cfg.gamma = 1e-12;
            cfg.variant = v;
            cfg.steps = 50;
            int ok = 0;
            for (int s = 0; s < 10; ++s) {
                Rng rng(s);
                const Vector y = randn(4, rng);
                const Vector x = pnpflow::pnpflow(y, *I, fp, cfg, rng, randn(4, rng));
                const double d = std::min((x - fp.base.means.col(0)).norm(), (x - fp.base.means.col(1)).norm());
                ok += d < 3 * std::sqrt(s2);
            }
            CHECK(ok == 10);
        }
    }

    TEST_CASE("explicit and implicit agree for tiny steps") {
        Rng rng(2);
        Matrix Am(6, 4);
        for (Eigen::Index i = 0; i < Am.size(); ++i) Am.data()[i] = randn(1, rng)[0];
        const auto A = linops::make_matrix(Am);
        const double norm = Eigen::JacobiSVD<Matrix>(Am).singularValues()[0];
        const auto fp = separated_mixture(4, 0.2);
        const Vector y = randn(6, rng), x0 = randn(4, rng);
        PnpFlowConfig cfg;
        cfg.gamma = 1e-6 / (norm * norm);
        cfg.steps = 30;
        cfg.variant = Variant::explicit_step;
        Rng a(7), b(7);
        const Vector xe = pnpflow::pnpflow(y, *A, fp, cfg, a, x0);
        cfg.variant = Variant::implicit_step;
        const Vector xi = pnpflow::pnpflow(y, *A, fp, cfg, b, x0);
        CHECK((xe - xi).cwiseAbs().maxCoeff() <= 1e-4);
    }

    TEST_CASE("single realization equals the unaveraged loop") {
        Rng rng(3);
        const auto fp = separated_mixture(4, 0.3);
        const auto I = make_identity({2, 2});
        const Vector y = randn(4, rng), x0 = randn(4, rng);
        PnpFlowConfig cfg;
        cfg.realizations = 1;
        cfg.steps = 15;
        cfg.gamma = 0.7;
        Rng a(4), b(4);
        const Vector got = pnpflow::pnpflow(y, *I, fp, cfg, a, x0);
        Vector x = x0;
        for (int k = 0; k <= 15; ++k) {
            const double t = k / 15.0, g = 0.7 * (1 - t);
            const Vector z = (x + g * y) / (1 + g);
            if (k == 15) {
                x = z;
                break;
            }
            const Vector zt = (1 - t) * randn(4, b) + t * z;
            x = priors::gmm_flow_denoise(fp, zt, t);
        }
        CHECK((got - x).cwiseAbs().maxCoeff() <= 1e-12);
        Rng c(4);
        CHECK(pnpflow::pnpflow(y, *I, fp, cfg, c, x0) == got);
    }

    TEST_CASE("implicit variant stays finite for large gamma on a sparse-view problem") {
        const int n = 16;
        const auto A = linops::make_radon(linops::RadonGeometry::uniform(n, 32));
        priors::EllipseSceneParams ep;
        ep.image_size = n;
        ep.max_ellipses = 6;
        Rng rng(5);
        Matrix mu(n * n, 3);
        for (int k = 0; k < 3; ++k) mu.col(k) = priors::generate_ellipse_image(ep, rng).data;
        const priors::FlowPrior fp{priors::GmmPrior(Vector::Constant(3, 1.0 / 3), mu, Vector::Constant(3, 0.01))};
        const Vector xt = priors::gmm_sample(fp.base, rng);
        const Vector y = A->apply(xt) + 0.01 * randn(A->out_size(), rng);
        const Vector x0 = A->adjoint(y) / 100.0;
        for (double g : {1e1, 1e2, 1e3, 1e4, 1e5}) {
            PnpFlowConfig cfg;
            cfg.gamma = g;
            cfg.steps = 20;
            cfg.realizations = 2;
            cfg.prox.max_iters = 2000;
            cfg.prox.tol = 1e-8;
            Rng r(6);
            const Vector x = pnpflow::pnpflow(y, *A, fp, cfg, r, x0);
            CHECK(x.allFinite());
            cfg.variant = Variant::explicit_step;
            Rng r2(6);
            std::string outcome;
            try {
                const Vector xe = pnpflow::pnpflow(y, *A, fp, cfg, r2, x0);
                outcome = "max |x| " + std::to_string(xe.cwiseAbs().maxCoeff());
            } catch (const SolverFailure&) {
                outcome = "diverged";
            }
            MESSAGE("gamma " << g << ": implicit max |x| " << x.cwiseAbs().maxCoeff() << ", explicit " << outcome);
        }
    }
}

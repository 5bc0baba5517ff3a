#include <cmath>

#include "doctest.h"
#include "invbench/diffusion.hpp"
#include "invbench/metrics.hpp"
#include "oracles.hpp"

using namespace invbench;
using namespace invbench::diffusion;
using linops::make_identity;
using linops::make_matrix;

namespace {

const DiffusionSchedule& full_schedule() {
    static const DiffusionSchedule s = priors::make_schedule(1000, 1e-4, 0.02);
    return s;
}

EpsModel gaussian_model(const Vector& mu, double s2, int steps = 1000) {
    return EpsModel(std::make_shared<GmmPrior>(GmmPrior::single_gaussian(mu, s2)), full_schedule()).with_steps(steps);
}

EpsModel mixture_model(int n, Rng& rng, int steps = 1000) {
    Matrix mu(n, 3);
    for (int k = 0; k < 3; ++k) mu.col(k) = randn(n, rng);
    Vector w(3);
    w << 0.3, 0.5, 0.2;
    return EpsModel(std::make_shared<GmmPrior>(w, mu, Vector::Constant(3, 0.2)), full_schedule()).with_steps(steps);
}

Matrix rand_mat(int r, int c, Rng& rng) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = randn(1, rng)[0];
    return m;
}

}  // namespace

TEST_SUITE("diffusion") {
    TEST_CASE("adam: zero gradient, first step, asymptote") {
        AdamState s(3);
        CHECK(adam_step(s, Vector::Zero(3), 0.1).isZero(0.0));
        CHECK(s.step == 1);
        AdamState f(3);
        Vector g(3);
        g << 2.0, -0.5, 1e-3;
        const Vector u = adam_step(f, g, 0.01);
        for (int i = 0; i < 3; ++i) CHECK(u[i] == doctest::Approx(-0.01 * g[i] / (std::abs(g[i]) + 1e-8)).epsilon(1e-12));
        AdamState c(3);
        Vector last;
        for (int k = 0; k < 5000; ++k) last = adam_step(c, g, 0.01);
        for (int i = 0; i < 3; ++i) CHECK(last[i] == doctest::Approx(g[i] > 0 ? -0.01 : 0.01).epsilon(1e-4));
        CHECK_THROWS_AS(adam_step(c, Vector::Zero(2), 0.1), InvalidInput);
    }

    TEST_CASE("ddpm: standard normal moments, component frequencies, determinism") {
        const auto m = gaussian_model(Vector::Zero(2), 1.0, 100);
        Rng rng(1);
        const int N = 2000;
        Matrix xs(2, N);
        for (int i = 0; i < N; ++i) xs.col(i) = ddpm_sample(m, rng);
        const Vector mean = xs.rowwise().mean();
        const Vector var = (xs.colwise() - mean).array().square().rowwise().sum() / (N - 1);
        for (int i = 0; i < 2; ++i) {
            CHECK(std::abs(mean[i]) <= 3 * std::sqrt(1.0 / N));
            CHECK(std::abs(var[i] - 1.0) <= 3 * std::sqrt(2.0 / N));
        }

        Matrix mu(2, 2);
        mu.col(0) << 3, 3;
        mu.col(1) << -3, -3;
        Vector w(2);
        w << 0.3, 0.7;
        const EpsModel two(std::make_shared<GmmPrior>(w, mu, Vector::Constant(2, 0.05)), full_schedule().respaced(100));
        int first = 0;
        const int M = 1000;
        for (int i = 0; i < M; ++i) first += ddpm_sample(two, rng).sum() > 0;
        CHECK(std::abs(first - 0.3 * M) <= 4 * std::sqrt(M * 0.3 * 0.7));

        Rng a(5), b(5);
        CHECK(ddpm_sample(two, a) == ddpm_sample(two, b));
    }

    TEST_CASE("ddim: timesteps, affine for a Gaussian prior, JVP and VJP against finite differences") {
        const auto ts = ddim_timesteps(1000, 4);
        CHECK(ts == std::vector<int>{250, 500, 750, 1000});
        Rng rng(2);
        const auto g = gaussian_model(randn(5, rng), 0.3);
        const Vector z1 = randn(5, rng), z2 = randn(5, rng);
        const Vector lhs = ddim_generate(z1, g, 10) + ddim_generate(z2, g, 10) - ddim_generate(Vector::Zero(5), g, 10);
        CHECK((lhs - ddim_generate(z1 + z2, g, 10)).norm() <= 1e-8);
        CHECK(ddim_generate(z1, g, 10) == ddim_generate(z1, g, 10));

        const auto m = mixture_model(6, rng);
        const Vector z = randn(6, rng), v = randn(6, rng), w = randn(6, rng);
        const Vector fd = oracle::fd_directional([&](const Vector& q) { return ddim_generate(q, m, 4); }, z, v, 1e-5);
        CHECK(oracle::rel_err(ddim_jvp(z, m, 4, v), fd) <= 1e-4);
        // <w, J v> = <J^T w, v>
        CHECK(std::abs(w.dot(ddim_jvp(z, m, 4, v)) - v.dot(ddim_vjp(z, m, 4, w))) <=
              1e-10 * std::max(1.0, std::abs(w.dot(ddim_jvp(z, m, 4, v)))));
    }

    TEST_CASE("dps: zero guidance equals ddpm, gradient vs finite differences, beats unconditional") {
        Rng rng(3);
        const auto m = mixture_model(4, rng, 50);
        const auto I = make_identity({2, 2});
        const Vector y = randn(4, rng);
        DpsConfig cfg;
        cfg.gamma = 0.0;
        cfg.steps = 50;
        Rng a(11), b(11);
        CHECK(dps(y, *I, 0.01, m, cfg, a) == ddpm_sample(m, b));

        const auto full = mixture_model(6, rng);
        const auto A = make_matrix(rand_mat(4, 6, rng));
        const Vector y6 = randn(4, rng);
        for (int t : {20, 300, 900}) {
            const Vector x = randn(6, rng);
            const auto loss = [&](const Vector& q) { return (y6 - A->apply(full.denoise(q, t))).squaredNorm(); };
            CHECK(oracle::rel_err(dps_data_gradient(full, *A, y6, x, t), oracle::fd_gradient(loss, x, 1e-6)) <= 1e-4);
        }

        // Paired comparison on a Gaussian prior with identity A.
        const Vector mu = Vector::Constant(16, 0.5);
        const auto gm = gaussian_model(mu, 0.05, 100);
        const auto I16 = make_identity({4, 4});
        double best_mean = -1e9;
        for (double gamma : {0.5, 1.0, 2.0, 5.0}) {
            double sum_dps = 0.0, sum_unc = 0.0;
            for (int s = 0; s < 20; ++s) {
                Rng r(100 + s);
                const Vector xt = priors::gmm_sample(gm.prior(), r);
                const Vector yy = xt + 0.01 * randn(16, r);
                DpsConfig c{gamma, 100};
                Rng r1(500 + s), r2(500 + s);
                sum_dps += metrics::psnr(dps(yy, *I16, 0.01, gm, c, r1), xt);
                sum_unc += metrics::psnr(ddpm_sample(gm, r2), xt);
            }
            MESSAGE("dps gamma " << gamma << ": " << sum_dps / 20 << " dB vs unconditional " << sum_unc / 20);
            best_mean = std::max(best_mean, sum_dps / 20 - sum_unc / 20);
        }
        CHECK(best_mean > 0.0);
    }

    TEST_CASE("diffpir: zeta endpoint, huge lambda, Gaussian MMSE") {
        const auto& sch = full_schedule();
        Rng rng(4);
        const Vector xt = randn(5, rng), xh = randn(5, rng), noise = randn(5, rng);
        const Vector full = diffpir_reverse_step(sch, 300, xt, xh, 1.0, noise);
        const double abp = sch.alpha_bar(299);
        CHECK((full - (std::sqrt(abp) * xh + std::sqrt(1 - abp) * noise)).norm() <= 1e-14);
        // changing x_t (hence the effective noise) has no effect at zeta = 1
        CHECK(diffpir_reverse_step(sch, 300, 2.0 * xt, xh, 1.0, noise) == full);
        CHECK(diffpir_reverse_step(sch, 300, 2.0 * xt, xh, 0.5, noise) != diffpir_reverse_step(sch, 300, xt, xh, 0.5, noise));

        // rho_t is proportional to lambda; at this size the data step leaves the denoised point unchanged.
        const auto m = mixture_model(4, rng, 50);
        const auto I = make_identity({2, 2});
        const Vector y = randn(4, rng);
        DiffPirConfig cfg;
        cfg.lambda = 1e16;
        cfg.zeta = 0.3;
        cfg.steps = 50;
        Rng a(9), b(9);
        const Vector cond = diffpir(y, *I, 0.01, m, cfg, a);
        Vector x = randn(4, b);
        for (int t = 50; t >= 1; --t) x = diffpir_reverse_step(m.schedule(), t, x, m.denoise(x, t), 0.3, randn(4, b));
        CHECK((cond - x).norm() <= 1e-6);

        // Gaussian prior, identity A: the mean output approaches the posterior mean.
        const Vector mu = randn(16, rng) * 0.2 + Vector::Constant(16, 0.5);
        const double s2 = 0.04, sig = 0.05;
        const auto gm = gaussian_model(mu, s2, 100);
        const auto I16 = make_identity({4, 4});
        Rng truth(7);
        const Vector xtrue = priors::gmm_sample(gm.prior(), truth);
        const Vector yy = xtrue + sig * randn(16, truth);
        const Vector mmse = (s2 * yy + sig * sig * mu) / (s2 + sig * sig);
        DiffPirConfig dc;
        dc.steps = 100;
        dc.lambda = 1.0;
        Vector avg = Vector::Zero(16);
        for (int s = 0; s < 20; ++s) {
            Rng r(300 + s);
            avg += diffpir(yy, *I16, sig, gm, dc, r) / 20.0;
        }
        MESSAGE("diffpir vs mmse rel err " << oracle::rel_err(avg, mmse));
        CHECK(oracle::rel_err(avg, mmse) <= 0.05);
    }

    TEST_CASE("diffpir: data consistency no worse than the FBP start on well-posed CT") {
        const int n = 12;
        const auto A = linops::make_radon(linops::RadonGeometry::uniform(n, 36));
        const auto* g = linops::radon_geometry(*A);
        priors::EllipseSceneParams ep;
        ep.image_size = n;
        Rng rng(11);
        Matrix mu(n * n, 3);
        for (int k = 0; k < 3; ++k) mu.col(k) = priors::generate_ellipse_image(ep, rng).data;
        const EpsModel m(std::make_shared<GmmPrior>(Vector::Constant(3, 1.0 / 3), mu, Vector::Constant(3, 0.01)),
                         full_schedule());
        const metrics::NoiseModel nm{metrics::NoiseKind::gaussian, 0.01};
        DiffPirConfig cfg;
        cfg.steps = 50;
        cfg.prox.strict = false;
        cfg.prox.max_iters = 300;
        int ok = 0;
        double worst = 0.0;
        for (int s = 0; s < 20; ++s) {
            Rng r(500 + s);
            const Vector xt = priors::gmm_sample(m.prior(), r);
            const Vector y = A->apply(xt) + 0.01 * randn(A->out_size(), r);
            const Vector x0 = linops::fbp(Sinogram(36, g->n_detectors, y), *g).data;
            const Vector x = diffpir(y, *A, 0.01, m, cfg, r);
            const double d = *metrics::data_consistency(x, y, *A, nm), d0 = *metrics::data_consistency(x0, y, *A, nm);
            worst = std::max(worst, d / d0);
            ok += d <= d0;
        }
        MESSAGE("worst dc(diffpir)/dc(fbp) " << worst);
        CHECK(ok == 20);
    }

    TEST_CASE("diffpir rho rules") {
        CHECK(diffpir_rho(RhoRule::eq_form, 2.0, 0.1, 0.5) == doctest::Approx(2.0 * 0.01 * 1.0));
        CHECK(diffpir_rho(RhoRule::alg_form, 2.0, 0.1, 0.2) == doctest::Approx(2.0 * 0.01 / std::sqrt(4.0)));
        CHECK(parse_rho_rule("alg_form") == RhoRule::alg_form);
        CHECK_THROWS_AS(parse_rho_rule("other"), InvalidInput);
    }

    TEST_CASE("reddiff: least squares without regularizer, drift towards the mean, determinism") {
        Rng rng(5);
        const Matrix Am = rand_mat(12, 6, rng) + 2.0 * Matrix::Identity(12, 6);
        const auto A = make_matrix(Am);
        const auto m = mixture_model(6, rng, 1000);
        const Vector y = randn(12, rng);
        RedDiffConfig cfg;
        cfg.lambda = 0.0;
        cfg.gamma = 1.0;
        cfg.step_size = 0.01;
        cfg.steps = 1000;
        Rng r(1);
        const Vector x = reddiff(y, *A, m, cfg, Vector::Zero(6), r);
        const auto ls = variational::cg_solve([&](const Vector& v) { return Vector(Am.transpose() * (Am * v)); },
                                              Am.transpose() * y, 1e-14, 200);
        MESSAGE("reddiff lambda=0 vs least squares " << oracle::rel_err(x, ls.x));
        CHECK(oracle::rel_err(x, ls.x) <= 1e-3);

        const Vector mu = Vector::Constant(6, 2.0);
        const auto gm = gaussian_model(mu, 0.1, 200);
        RedDiffConfig drift;
        drift.gamma = 0.0;
        drift.lambda = 1.0;
        drift.step_size = 0.02;
        drift.steps = 200;
        int closer = 0;
        for (int s = 0; s < 10; ++s) {
            Rng q(40 + s);
            const Vector x0 = randn(6, q);
            const Vector xf = reddiff(Vector::Zero(12), *A, gm, drift, x0, q);
            closer += (xf - mu).norm() < (x0 - mu).norm();
        }
        CHECK(closer == 10);

        cfg.lambda = 0.2;
        Rng a(3), b(3);
        CHECK(reddiff(y, *A, m, cfg, Vector::Zero(6), a) == reddiff(y, *A, m, cfg, Vector::Zero(6), b));
    }

    TEST_CASE("dmplug: affine generator fits noiseless data, best loss monotone, gradient") {
        Rng rng(6);
        const Vector mu = Vector::Constant(6, 0.4);
        const auto gm = gaussian_model(mu, 0.05);
        const auto I = make_identity({2, 3});
        const Vector y = priors::gmm_sample(gm.prior(), rng);
        DmPlugConfig cfg;
        cfg.early_stopping = false;
        cfg.max_iters = 1500;
        Rng r(2);
        const auto res = dmplug_run(y, *I, gm, cfg, r);
        MESSAGE("dmplug final relative loss " << (res.x - y).squaredNorm() / y.squaredNorm());
        CHECK((res.x - y).squaredNorm() / y.squaredNorm() <= 1e-4);
        for (std::size_t i = 1; i < res.best_loss.size(); ++i) CHECK(res.best_loss[i] <= res.best_loss[i - 1]);

        const auto m = mixture_model(6, rng);
        const auto A = make_matrix(rand_mat(4, 6, rng));
        const Vector y4 = randn(4, rng), z = randn(6, rng);
        const auto loss = [&](const Vector& q) { return (A->apply(ddim_generate(q, m, 4)) - y4).squaredNorm(); };
        CHECK(oracle::rel_err(dmplug_loss_gradient(z, *A, y4, m, 4), oracle::fd_gradient(loss, z, 1e-6)) <= 1e-4);

        DmPlugConfig es;
        es.max_iters = 600;
        Rng a(8), b(8);
        const auto ra = dmplug_run(y4, *A, m, es, a);
        CHECK(ra.x == dmplug_run(y4, *A, m, es, b).x);
    }
}

#include <cmath>
#include <numbers>

#include "doctest.h"
#include "invbench/priors.hpp"
#include "oracles.hpp"

using namespace invbench;
using namespace invbench::priors;

namespace {

GmmPrior random_gmm(int K, int n, Rng& rng, double spread = 1.0) {
    std::uniform_real_distribution<double> u(0.2, 1.0);
    Vector w(K), var(K);
    for (int k = 0; k < K; ++k) {
        w[k] = u(rng);
        var[k] = u(rng) * 0.5;
    }
    Matrix mu(n, K);
    for (int k = 0; k < K; ++k) mu.col(k) = spread * randn(n, rng);
    return GmmPrior(w / w.sum(), mu, var);
}

// log p(x) by direct summation of the component densities.
double naive_log_density(const GmmPrior& p, const Vector& x) {
    const double n = double(x.size());
    double acc = 0.0;
    for (int k = 0; k < p.components(); ++k) {
        const double s2 = p.variances[k];
        acc += p.weights[k] * std::pow(2 * std::numbers::pi * s2, -n / 2) *
               std::exp(-(x - p.means.col(k)).squaredNorm() / (2 * s2));
    }
    return std::log(acc);
}

struct MeanSe {
    Vector mean, se;
};

// Self-normalised importance estimate of E[f(X) | obs] from prior draws and log-likelihood weights.
template <class LogLik, class F>
MeanSe importance_mean(const GmmPrior& p, int N, Rng& rng, LogLik loglik, F f) {
    std::vector<Vector> vals;
    std::vector<double> lw;
    vals.reserve(N);
    lw.reserve(N);
    for (int i = 0; i < N; ++i) {
        const Vector x = gmm_sample(p, rng);
        vals.push_back(f(x));
        lw.push_back(loglik(x));
    }
    const double mx = *std::max_element(lw.begin(), lw.end());
    double W = 0.0, W2 = 0.0;
    Vector m = Vector::Zero(vals[0].size());
    for (int i = 0; i < N; ++i) {
        const double w = std::exp(lw[i] - mx);
        W += w;
        W2 += w * w;
        m += w * vals[i];
    }
    m /= W;
    Vector var = Vector::Zero(m.size());
    for (int i = 0; i < N; ++i) {
        const double w = std::exp(lw[i] - mx) / W;
        var += (w * w) * (vals[i] - m).cwiseAbs2();
    }
    return {m, var.cwiseSqrt()};
}

}  // namespace

TEST_SUITE("priors") {
    TEST_CASE("schedule: T=1, monotone, extended-precision product") {
        CHECK(make_schedule(1, 1e-4, 0.02).alpha_bar(1) == doctest::Approx(1 - 1e-4).epsilon(1e-15));
        const auto sch = make_schedule(1000, 1e-4, 0.02);
        long double prod = 1.0L;
        for (int t = 1; t <= 1000; ++t) {
            const long double beta = 1e-4L + (0.02L - 1e-4L) * (t - 1) / 999.0L;
            prod *= 1.0L - beta;
        }
        CHECK(std::abs(double((sch.alpha_bar(1000) - prod) / prod)) <= 1e-12);
        for (int t = 1; t <= 1000; ++t) CHECK(sch.alpha_bar(t) < sch.alpha_bar(t - 1));
        const auto r = sch.respaced(10);
        CHECK(r.steps() == 10);
        CHECK(r.alpha_bar(10) == sch.alpha_bar(1000));
        CHECK(r.alpha_bar(5) == sch.alpha_bar(500));
    }

    TEST_CASE("log density: normaliser, symmetry, naive summation") {
        const auto g = GmmPrior::single_gaussian(Vector::Zero(2), 1.0);
        CHECK(gmm_log_density(g, Vector::Zero(2)) == doctest::Approx(-std::log(2 * std::numbers::pi)).epsilon(1e-15));
        Matrix mu(3, 2);
        mu.col(0) << 1, -2, 0.5;
        mu.col(1) = -mu.col(0);
        const GmmPrior sym(Vector::Constant(2, 0.5), mu, Vector::Constant(2, 0.3));
        CHECK(gmm_log_density(sym, mu.col(0)) == doctest::Approx(gmm_log_density(sym, mu.col(1))).epsilon(1e-15));
        Rng rng(1);
        const auto p = random_gmm(3, 4, rng);
        for (int i = 0; i < 10; ++i) {
            const Vector x = randn(4, rng);
            CHECK(std::abs(gmm_log_density(p, x) - naive_log_density(p, x)) <= 1e-12 * std::max(1.0, std::abs(naive_log_density(p, x))));
        }
    }

    TEST_CASE("score matches finite differences of the log density") {
        Rng rng(2);
        for (int n : {2, 5, 8}) {
            const auto p = random_gmm(3, n, rng, 0.5);
            const Vector x = 0.5 * randn(n, rng);
            const Vector fd = oracle::fd_gradient([&](const Vector& z) { return gmm_log_density(p, z); }, x, 1e-6);
            CHECK(oracle::rel_err(gmm_grad_log_density(p, x), fd) <= 1e-5);
        }
    }

    TEST_CASE("eps model: standard normal, symmetry, finite differences, continuity") {
        const auto sch = make_schedule(1000, 1e-4, 0.02);
        const auto g = GmmPrior::single_gaussian(Vector::Zero(3), 1.0);
        Rng rng(3);
        const Vector x = randn(3, rng);
        for (int t : {1, 10, 500, 1000})
            CHECK(oracle::rel_err(gmm_eps_model(g, sch, x, t), std::sqrt(1 - sch.alpha_bar(t)) * x) <= 1e-13);

        Matrix mu(2, 2);
        mu.col(0) << 1.5, -1;
        mu.col(1) = -mu.col(0);
        const GmmPrior sym(Vector::Constant(2, 0.5), mu, Vector::Constant(2, 0.2));
        CHECK(gmm_eps_model(sym, sch, Vector::Zero(2), 300).norm() <= 1e-15);

        const auto p = random_gmm(3, 6, rng, 0.7);
        for (int t : {5, 200, 800}) {
            const GmmPrior marg = diffusion_marginal(p, sch.alpha_bar(t));
            const Vector xt = randn(6, rng);
            const Vector fd = oracle::fd_gradient([&](const Vector& z) { return gmm_log_density(marg, z); }, xt, 1e-6);
            const Vector expect = -std::sqrt(1 - sch.alpha_bar(t)) * fd;
            CHECK(oracle::rel_err(gmm_eps_model(p, sch, xt, t), expect) <= 1e-5);
        }

        // Adjacent timesteps: the change is controlled by the schedule increment.
        const Vector xf = randn(6, rng);
        double worst = 0.0;
        for (int t = 2; t <= 1000; ++t) {
            const double d = (gmm_eps_model(p, sch, xf, t) - gmm_eps_model(p, sch, xf, t - 1)).norm();
            const double dab = sch.alpha_bar(t - 1) - sch.alpha_bar(t);
            const double ds = std::sqrt(1 - sch.alpha_bar(t)) - std::sqrt(1 - sch.alpha_bar(t - 1));
            worst = std::max(worst, d / (dab + ds));
        }
        MESSAGE("eps continuity ratio " << worst);
        CHECK(worst <= 100.0 * (1 + xf.norm()));
    }

    TEST_CASE("posterior mean: Gaussian closed form and Monte-Carlo") {
        const auto sch = make_schedule(1000, 1e-4, 0.02);
        Rng rng(4);
        const Vector mu = randn(4, rng);
        const double s2 = 0.3;
        const auto g = GmmPrior::single_gaussian(mu, s2);
        for (int t : {1, 100, 700}) {
            const double ab = sch.alpha_bar(t);
            const Vector xt = randn(4, rng);
            const Vector closed = mu + std::sqrt(ab) * s2 / (ab * s2 + 1 - ab) * (xt - std::sqrt(ab) * mu);
            CHECK(oracle::rel_err(gmm_posterior_mean(g, sch, xt, t), closed) <= 1e-12);
            CHECK(oracle::rel_err(gmm_posterior_mean(g, sch, std::sqrt(ab) * mu, t), mu) <= 1e-12);
        }

        const auto p = random_gmm(3, 2, rng, 1.0);
        const int t = 400;
        const double ab = sch.alpha_bar(t);
        const Vector xt = std::sqrt(ab) * p.means.col(0) + std::sqrt(1 - ab) * randn(2, rng);
        const auto est = importance_mean(
            p, 100000, rng,
            [&](const Vector& x0) { return -(xt - std::sqrt(ab) * x0).squaredNorm() / (2 * (1 - ab)); },
            [](const Vector& x0) { return x0; });
        const Vector exact = gmm_posterior_mean(p, sch, xt, t);
        for (int i = 0; i < 2; ++i) CHECK(std::abs(exact[i] - est.mean[i]) <= 3 * est.se[i]);
    }

    TEST_CASE("posterior mean JVP: scalar case, zero, linearity, finite differences") {
        const auto sch = make_schedule(1000, 1e-4, 0.02);
        Rng rng(5);
        const double s2 = 0.4;
        const auto g = GmmPrior::single_gaussian(randn(3, rng), s2);
        const Vector v = randn(3, rng), xt = randn(3, rng);
        const double ab = sch.alpha_bar(250);
        const double c = std::sqrt(ab) * s2 / (ab * s2 + 1 - ab);
        CHECK(oracle::rel_err(gmm_posterior_mean_jvp(g, sch, xt, 250, v), c * v) <= 1e-12);
        CHECK(gmm_posterior_mean_jvp(g, sch, xt, 250, Vector::Zero(3)).norm() == 0.0);

        const auto p = random_gmm(3, 6, rng, 0.5);
        for (int t : {50, 400, 900}) {
            const Vector x = randn(6, rng), v1 = randn(6, rng), v2 = randn(6, rng);
            const Vector lin = gmm_posterior_mean_jvp(p, sch, x, t, 2.0 * v1 - 3.0 * v2);
            const Vector sep = 2.0 * gmm_posterior_mean_jvp(p, sch, x, t, v1) - 3.0 * gmm_posterior_mean_jvp(p, sch, x, t, v2);
            CHECK((lin - sep).norm() <= 1e-12 * std::max(1.0, sep.norm()));
            const Vector fd = oracle::fd_directional([&](const Vector& z) { return gmm_posterior_mean(p, sch, z, t); },
                                                     x, v1, 1e-5);
            CHECK(oracle::rel_err(gmm_posterior_mean_jvp(p, sch, x, t, v1), fd) <= 1e-4);
        }
    }

    TEST_CASE("flow velocity: Gaussian closed form and Monte-Carlo denoiser") {
        const FlowPrior std_normal{GmmPrior::single_gaussian(Vector::Zero(3), 1.0)};
        CHECK(gmm_flow_velocity(std_normal, Vector::Zero(3), 0.3).norm() == 0.0);
        Rng rng(6);
        for (double t : {0.0, 0.2, 0.5, 0.9}) {
            const Vector x = randn(3, rng);
            const Vector closed = (t / (t * t + (1 - t) * (1 - t)) - 1) / (1 - t) * x;
            CHECK(oracle::rel_err(gmm_flow_velocity(std_normal, x, t), closed) <= 1e-12);
        }
        CHECK_THROWS_AS(gmm_flow_velocity(std_normal, Vector::Zero(3), 1.0), InvalidInput);

        const FlowPrior fp{random_gmm(2, 4, rng, 1.0)};
        const double t = 0.5;
        const Vector x = 0.5 * gmm_sample(fp.base, rng) + 0.5 * randn(4, rng);
        const auto est = importance_mean(
            fp.base, 100000, rng,
            [&](const Vector& x1) { return -(x - t * x1).squaredNorm() / (2 * (1 - t) * (1 - t)); },
            [](const Vector& x1) { return x1; });
        const Vector exact = gmm_flow_denoise(fp, x, t);
        for (int i = 0; i < 4; ++i) CHECK(std::abs(exact[i] - est.mean[i]) <= 3 * est.se[i]);
    }

    TEST_CASE("Euler integration of the flow reproduces the mixture moments") {
        Matrix mu(2, 2);
        mu.col(0) << 1.0, 0.5;
        mu.col(1) << -1.0, 0.0;
        const FlowPrior fp{GmmPrior(Vector::Constant(2, 0.5), mu, Vector::Constant(2, 0.1))};
        Rng rng(7);
        const int N = 5000, steps = 1000;
        Matrix xs(2, N);
        for (int i = 0; i < N; ++i) {
            Vector x = randn(2, rng);
            for (int s = 0; s < steps; ++s) x += gmm_flow_velocity(fp, x, double(s) / steps) / steps;
            xs.col(i) = x;
        }
        const Vector mean = xs.rowwise().mean();
        const Vector true_mean = mu.rowwise().mean();
        // Second moments of the mixture.
        Matrix true_cov = 0.1 * Matrix::Identity(2, 2);
        for (int k = 0; k < 2; ++k) true_cov += 0.5 * (mu.col(k) - true_mean) * (mu.col(k) - true_mean).transpose();
        const Matrix centred = xs.colwise() - mean;
        const Matrix cov = centred * centred.transpose() / (N - 1);
        for (int i = 0; i < 2; ++i) {
            CHECK(std::abs(mean[i] - true_mean[i]) <= 3 * std::sqrt(true_cov(i, i) / N));
            CHECK(std::abs(cov(i, i) - true_cov(i, i)) <= 4 * true_cov(i, i) * std::sqrt(2.0 / N) + 5e-3);
        }
    }

    TEST_CASE("sampling: degenerate limit, component frequencies, determinism") {
        Matrix mu(2, 3);
        mu << 0, 10, -10, 0, 10, 10;
        const GmmPrior tight(Vector::Constant(3, 1.0 / 3), mu, Vector::Constant(3, 1e-20));
        Rng rng(8);
        for (int i = 0; i < 20; ++i) {
            const Vector x = gmm_sample(tight, rng);
            double best = 1e300;
            for (int k = 0; k < 3; ++k) best = std::min(best, (x - mu.col(k)).norm());
            CHECK(best <= 1e-8);
        }
        Vector w(3);
        w << 0.2, 0.5, 0.3;
        const GmmPrior p(w, mu, Vector::Constant(3, 0.01));
        std::vector<int> counts(3, 0);
        const int N = 10000;
        for (int i = 0; i < N; ++i) {
            const Vector x = gmm_sample(p, rng);
            int arg = 0;
            for (int k = 1; k < 3; ++k)
                if ((x - mu.col(k)).norm() < (x - mu.col(arg)).norm()) arg = k;
            ++counts[arg];
        }
        for (int k = 0; k < 3; ++k) CHECK(std::abs(counts[k] - N * w[k]) <= 4 * std::sqrt(N * w[k] * (1 - w[k])));
        Rng a(99), b(99);
        CHECK(gmm_sample(p, a) == gmm_sample(p, b));
    }

    TEST_CASE("EM: K=1 closed form, two clusters, monotone likelihood") {
        Rng rng(9);
        Matrix data(3, 50);
        for (int i = 0; i < 50; ++i) data.col(i) = randn(3, rng) * 2.0 + Vector::Constant(3, 1.0);
        const auto one = fit_gmm_em(data, 1, 5, 1);
        const Vector m = data.rowwise().mean();
        CHECK(oracle::rel_err(one.means.col(0), m) <= 1e-12);
        CHECK(one.variances[0] == doctest::Approx((data.colwise() - m).squaredNorm() / (50.0 * 3)).epsilon(1e-12));

        Matrix two(2, 400);
        for (int i = 0; i < 400; ++i) two.col(i) = (i % 2 ? 5.0 : -5.0) * Vector::Ones(2) + 0.1 * randn(2, rng);
        const auto tr = fit_gmm_em_trace(two, 2, 50, 3);
        for (int k = 0; k < 2; ++k) {
            const double d = std::min((tr.prior.means.col(k) - 5.0 * Vector::Ones(2)).norm(),
                                      (tr.prior.means.col(k) + 5.0 * Vector::Ones(2)).norm());
            CHECK(d <= 0.1);
        }
        Matrix mixed(4, 300);
        for (int i = 0; i < 300; ++i) mixed.col(i) = randn(4, rng) + (i % 3) * Vector::Ones(4);
        const auto tr3 = fit_gmm_em_trace(mixed, 3, 40, 4);
        for (std::size_t i = 1; i < tr3.log_likelihood.size(); ++i)
            CHECK(tr3.log_likelihood[i] >= tr3.log_likelihood[i - 1] - 1e-9 * std::abs(tr3.log_likelihood[i - 1]));
        CHECK_THROWS_AS(fit_gmm_em(mixed.leftCols(2), 3, 5, 1), InvalidInput);
    }

    TEST_CASE("gmm csv round trip and header") {
        Rng rng(10);
        const auto p = random_gmm(3, 5, rng);
        const std::string text = gmm_to_csv(p);
        CHECK(text.rfind("#gmm K=3 n=5", 0) == 0);
        const auto q = gmm_from_csv(text);
        CHECK(q.weights == p.weights);
        CHECK(q.means == p.means);
        CHECK(q.variances == p.variances);
        CHECK_THROWS_AS(gmm_from_csv("#gmm K=2 n=5\n1,2\n"), InvalidInput);
    }

    TEST_CASE("ellipse scenes: blank, deterministic, in range, centres inside the circle") {
        EllipseSceneParams ep;
        ep.image_size = 32;
        ep.max_ellipses = 0;
        Rng r0(1);
        CHECK(generate_ellipse_image(ep, r0).data.isZero(0.0));
        ep.max_ellipses = 20;
        Rng a(5), b(5);
        CHECK(generate_ellipse_image(ep, a).data == generate_ellipse_image(ep, b).data);
        for (int s = 0; s < 100; ++s) {
            Rng rng(1000 + s);
            const auto sc = generate_ellipse_scene(ep, rng);
            CHECK(sc.image.data.minCoeff() >= 0.0);
            CHECK(sc.image.data.maxCoeff() <= 1.0);
            for (const auto& e : sc.ellipses) CHECK(std::hypot(e.cx, e.cy) <= 0.5 * ep.image_size);
        }
    }
}

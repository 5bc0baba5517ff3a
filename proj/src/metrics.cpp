#include "invbench/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <limits>

#include "invbench/diffusion.hpp"

namespace invbench::metrics {

double psnr(const Vector& x, const Vector& x_true) {
    require(x.size() == x_true.size() && x.size() > 0, "psnr: shape mismatch");
    const double mse = (x - x_true).squaredNorm() / double(x.size());
    if (!(mse > 0.0)) return mse == 0.0 ? kPsnrCap : std::numeric_limits<double>::quiet_NaN();
    return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

namespace {

constexpr int kWin = 11;

std::array<double, kWin> ssim_window() {
    std::array<double, kWin> w{};
    double total = 0.0;
    for (int i = 0; i < kWin; ++i) {
        const double d = i - kWin / 2;
        w[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        total += w[i];
    }
    for (auto& v : w) v /= total;
    return w;
}

// Separable weighted local mean over the valid region.
Matrix local_mean(const Matrix& img, const std::array<double, kWin>& w) {
    const Eigen::Index R = img.rows() - kWin + 1, C = img.cols() - kWin + 1;
    Matrix tmp = Matrix::Zero(R, img.cols());
    for (Eigen::Index i = 0; i < R; ++i)
        for (int k = 0; k < kWin; ++k) tmp.row(i) += w[k] * img.row(i + k);
    Matrix out = Matrix::Zero(R, C);
    for (Eigen::Index j = 0; j < C; ++j)
        for (int k = 0; k < kWin; ++k) out.col(j) += w[k] * tmp.col(j + k);
    return out;
}

}  // namespace

double ssim(const Vector& x, const Vector& x_true, linops::Shape shape) {
    require(x.size() == x_true.size() && x.size() == shape.size(), "ssim: shape mismatch");
    require(shape.rows >= kWin && shape.cols >= kWin, "ssim: image must be at least 11x11");
    constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    const auto w = ssim_window();
    // Image vectors are row-major.
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Matrix a = Eigen::Map<const RowMat>(x.data(), shape.rows, shape.cols);
    const Matrix b = Eigen::Map<const RowMat>(x_true.data(), shape.rows, shape.cols);
    const Matrix mu_a = local_mean(a, w), mu_b = local_mean(b, w);
    const Matrix saa = local_mean(a.cwiseProduct(a), w) - mu_a.cwiseProduct(mu_a);
    const Matrix sbb = local_mean(b.cwiseProduct(b), w) - mu_b.cwiseProduct(mu_b);
    const Matrix sab = local_mean(a.cwiseProduct(b), w) - mu_a.cwiseProduct(mu_b);
    const auto num = (2.0 * mu_a.cwiseProduct(mu_b).array() + C1) * (2.0 * sab.array() + C2);
    const auto den = (mu_a.array().square() + mu_b.array().square() + C1) * (saa.array() + sbb.array() + C2);
    return (num / den).mean();
}

NoiseKind parse_noise_kind(const std::string& name) {
    if (name == "gaussian") return NoiseKind::gaussian;
    if (name == "signal_dependent") return NoiseKind::signal_dependent;
    throw InvalidInput("unknown noise kind '" + name + "'");
}

std::string to_string(NoiseKind kind) { return kind == NoiseKind::gaussian ? "gaussian" : "signal_dependent"; }

NoiseModel matched_signal_dependent(double sigma, const Vector& y_clean) {
    require(sigma >= 0.0, "noise level must be >= 0");
    const double s = y_clean.cwiseAbs().sum();
    if (sigma == 0.0) return {NoiseKind::signal_dependent, 0.0};
    require(s > 0.0, "signal-dependent noise needs a nonzero signal");
    return {NoiseKind::signal_dependent, sigma * std::sqrt(double(y_clean.size()) / s)};
}

std::optional<double> data_consistency(const Vector& x, const Vector& y, const linops::LinearOperator& A,
                                       const NoiseModel& nm) {
    require(nm.level >= 0.0, "data_consistency: negative noise level");
    require(y.size() == A.out_size(), "data_consistency: y has wrong length");
    if (nm.level == 0.0) return std::nullopt;
    const double expected = nm.kind == NoiseKind::gaussian ? double(y.size()) * nm.level * nm.level
                                                           : nm.level * nm.level * y.cwiseAbs().sum();
    if (!(expected > 0.0)) return std::nullopt;
    return (A.apply(x) - y).squaredNorm() / expected;
}

MetricReport evaluate(const Vector& x, const Vector& x_true, const Vector& y, const linops::LinearOperator& A,
                      const NoiseModel& nm) {
    MetricReport r;
    r.psnr = psnr(x, x_true);
    const auto s = A.in_shape();
    r.ssim = (s.rows >= kWin && s.cols >= kWin) ? ssim(x, x_true, s) : std::numeric_limits<double>::quiet_NaN();
    r.dc = data_consistency(x, y, A, nm);
    return r;
}

namespace {

// Largest step from the feasible anchor towards x that stays inside the data ball.
Vector pull_into_ball(const Vector& x, const Vector& anchor, const linops::LinearOperator& A, const Vector& y,
                      double delta) {
    auto res = [&](const Vector& v) { return (A.apply(v) - y).norm(); };
    if (res(x) <= delta) return x;
    double lo = 0.0, hi = 1.0;
    for (int i = 0; i < 60; ++i) {
        const double mid = 0.5 * (lo + hi);
        (res(anchor + mid * (x - anchor)) <= delta ? lo : hi) = mid;
    }
    return anchor + lo * (x - anchor);
}

}  // namespace

DiameterEstimate estimate_diameter_run(const linops::LinearOperator& A, const Vector& y, double delta,
                                       const priors::GmmPrior& prior, int restarts, Rng& rng,
                                       const DiameterOptions& opt) {
    require(delta > 0.0, "estimate_diameter: delta must be > 0");
    require(restarts >= 1, "estimate_diameter: restarts must be >= 1");
    require(opt.iters >= 0, "estimate_diameter: iters must be >= 0");
    require(A.in_size() == prior.dim() && y.size() == A.out_size(), "estimate_diameter: dimension mismatch");
    prior.validate();
    const Eigen::Index n = prior.dim();
    const double d2 = delta * delta;

    double lr = opt.step_size;
    if (lr <= 0.0) {
        const Vector centre = prior.means * prior.weights;
        double spread = std::sqrt(prior.variances.maxCoeff());
        for (int k = 0; k < prior.components(); ++k)
            spread = std::max(spread, (prior.means.col(k) - centre).cwiseAbs().maxCoeff());
        lr = 0.01 * spread;
    }

    // Gradient of rho * [max(0, r^2 - delta^2)^2 - kappa log p(x)].
    auto penalty_grad = [&](const Vector& x) {
        const Vector r = A.apply(x) - y;
        const double excess = std::max(0.0, r.squaredNorm() - d2);
        Vector g = -opt.kappa * priors::gmm_grad_log_density(prior, x);
        if (excess > 0.0) g += 4.0 * excess * A.adjoint(r);
        return Vector(opt.rho * g);
    };

    DiameterEstimate out;
    for (int rs = 0; rs < restarts; ++rs) {
        Vector x1 = priors::gmm_sample(prior, rng);
        Vector x2 = priors::gmm_sample(prior, rng);
        diffusion::AdamState s1(n), s2(n);
        for (int it = 0; it < opt.iters; ++it) {
            const double step = lr * (1.0 - double(it) / opt.iters);
            const Vector d = x1 - x2;
            // Adam minimizes, so feed it the negated ascent direction.
            const Vector g1 = -(2.0 * d - penalty_grad(x1));
            const Vector g2 = -(-2.0 * d - penalty_grad(x2));
            x1 += diffusion::adam_step(s1, g1, step);
            x2 += diffusion::adam_step(s2, g2, step);
            if (!x1.allFinite() || !x2.allFinite()) throw SolverFailure("estimate_diameter: ascent diverged");
        }
        const Vector a1 = variational::prox_data(x1, A, y, std::numeric_limits<double>::infinity(), opt.repair);
        const Vector a2 = variational::prox_data(x2, A, y, std::numeric_limits<double>::infinity(), opt.repair);
        if ((A.apply(a1) - y).norm() > delta || (A.apply(a2) - y).norm() > delta) continue;
        const Vector f1 = pull_into_ball(x1, a1, A, y, delta);
        const Vector f2 = pull_into_ball(x2, a2, A, y, delta);
        ++out.feasible_restarts;
        out.diameter = std::max(out.diameter, (f1 - f2).norm());
    }
    if (out.feasible_restarts == 0)
        out.warning = "estimate_diameter: no feasible pair found (data ball is empty at this delta); reporting 0";
    return out;
}

double estimate_diameter(const linops::LinearOperator& A, const Vector& y, double delta, const priors::GmmPrior& prior,
                         int restarts, Rng& rng) {
    const auto est = estimate_diameter_run(A, y, delta, prior, restarts, rng);
    if (!est.warning.empty()) std::cerr << "warning: " << est.warning << "\n";
    return est.diameter;
}

}  // namespace invbench::metrics

#pragma once

#include <optional>
#include <string>

#include "invbench/common.hpp"
#include "invbench/linops.hpp"
#include "invbench/priors.hpp"
#include "invbench/variational.hpp"

namespace invbench::metrics {

constexpr double kPsnrCap = 300.0;

// -10 log10(MSE) for images on [0, 1]; identical inputs give kPsnrCap.
double psnr(const Vector& x, const Vector& x_true);

// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), valid region only.
double ssim(const Vector& x, const Vector& x_true, linops::Shape shape);

enum class NoiseKind { gaussian, signal_dependent };
NoiseKind parse_noise_kind(const std::string& name);
std::string to_string(NoiseKind kind);

// level is sigma_n for gaussian noise and delta for y + delta sqrt|y| eta.
struct NoiseModel {
    NoiseKind kind = NoiseKind::gaussian;
    double level = 0.0;
};

// Signal-dependent model whose total variance equals m * sigma^2 on y_clean.
NoiseModel matched_signal_dependent(double sigma, const Vector& y_clean);

// ||A x - y||^2 / E||A x_true - y||^2; nullopt when the noise level is 0.
std::optional<double> data_consistency(const Vector& x, const Vector& y, const linops::LinearOperator& A,
                                       const NoiseModel& nm);

struct MetricReport {
    double psnr = 0.0;
    double ssim = 0.0;
    std::optional<double> dc;
};

MetricReport evaluate(const Vector& x, const Vector& x_true, const Vector& y, const linops::LinearOperator& A,
                      const NoiseModel& nm);

struct DiameterOptions {
    double rho = 1e3;
    double kappa = 1e-2;
    int iters = 1500;
    double step_size = 0.0;  // <= 0: scaled from the prior spread
    variational::ProxOptions repair{};
};

struct DiameterEstimate {
    double diameter = 0.0;  // lower bound on diam(S_y^delta)
    int feasible_restarts = 0;
    std::string warning;
};

// Penalized pairwise ascent from prior samples, followed by a bisection back into
// {x : ||A x - y|| <= delta} towards the least-squares point. The reported value is
// the largest distance over restarts between two repaired, feasible points.
DiameterEstimate estimate_diameter_run(const linops::LinearOperator& A, const Vector& y, double delta,
                                       const priors::GmmPrior& prior, int restarts, Rng& rng,
                                       const DiameterOptions& opt = {});
double estimate_diameter(const linops::LinearOperator& A, const Vector& y, double delta, const priors::GmmPrior& prior,
                         int restarts, Rng& rng);

}  // namespace invbench::metrics

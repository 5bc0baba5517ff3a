#pragma once

#include <optional>
#include <string>
#include <vector>

#include "invbench/common.hpp"
#include "invbench/image.hpp"

namespace invbench::priors {

// Isotropic Gaussian mixture  sum_k w_k N(mu_k, s_k^2 I)  on R^n.
// Means are stored as the columns of an n x K matrix.
struct GmmPrior {
    Vector weights;
    Matrix means;
    Vector variances;

    GmmPrior() = default;
    GmmPrior(Vector w, Matrix mu, Vector var);

    int components() const { return int(weights.size()); }
    Eigen::Index dim() const { return means.rows(); }
    void validate() const;

    static GmmPrior single_gaussian(const Vector& mean, double variance);
};

// Linear-beta DDPM schedule. Index t runs 1..T; alpha_bar(0) == 1.
class DiffusionSchedule {
public:
    DiffusionSchedule() = default;
    // Arbitrary ordered alpha_bar table (alpha_bar[0] must be 1, strictly decreasing).
    explicit DiffusionSchedule(Vector alpha_bar);

    int steps() const { return int(alpha_bar_.size()) - 1; }
    double beta(int t) const { return 1.0 - alpha(t); }
    double alpha(int t) const { return alpha_bar_[t] / alpha_bar_[t - 1]; }
    double alpha_bar(int t) const { return alpha_bar_[t]; }
    const Vector& alpha_bar_table() const { return alpha_bar_; }

    // Keeps `steps` timesteps (uniformly spaced, always including T) and
    // re-derives beta from the retained alpha_bar values.
    DiffusionSchedule respaced(int steps) const;

private:
    Vector alpha_bar_;
};

DiffusionSchedule make_schedule(int T, double beta_first, double beta_last);

// Flow-matching target law X1 ~ base; X0 ~ N(0, I); X_t = (1-t) X0 + t X1.
struct FlowPrior {
    GmmPrior base;
};

double gmm_log_density(const GmmPrior& p, const Vector& x);
Vector gmm_grad_log_density(const GmmPrior& p, const Vector& x);
// Hessian of log p applied to v.
Vector gmm_hess_log_density_vec(const GmmPrior& p, const Vector& x, const Vector& v);

// Law of sqrt(abar) X0 + sqrt(1 - abar) eps for X0 ~ p.
GmmPrior diffusion_marginal(const GmmPrior& p, double alpha_bar);

Vector gmm_eps_model(const GmmPrior& p, const DiffusionSchedule& sch, const Vector& x_t, int t);
Vector gmm_posterior_mean(const GmmPrior& p, const DiffusionSchedule& sch, const Vector& x_t, int t);
Vector gmm_posterior_mean_jvp(const GmmPrior& p, const DiffusionSchedule& sch, const Vector& x_t, int t,
                              const Vector& v);

// E[X1 | X_t = x].
Vector gmm_flow_denoise(const FlowPrior& fp, const Vector& x, double t);
// v_t(x) = (E[X1 | X_t = x] - x) / (1 - t); t must lie in [0, 1).
Vector gmm_flow_velocity(const FlowPrior& fp, const Vector& x, double t);

Vector gmm_sample(const GmmPrior& p, Rng& rng);

struct EmResult {
    GmmPrior prior;
    std::vector<double> log_likelihood;  // total, one entry per E-step
};

// Isotropic-covariance EM. `samples` holds one sample per column.
EmResult fit_gmm_em_trace(const Matrix& samples, int K, int iters, std::uint64_t seed, double variance_floor = 1e-6);
GmmPrior fit_gmm_em(const Matrix& samples, int K, int iters, std::uint64_t seed);

// CSV block: "#gmm K=<K> n=<n>", weights row, K mean rows, variances row.
std::string gmm_to_csv(const GmmPrior& p);
GmmPrior gmm_from_csv(const std::string& text);
void save_gmm(const GmmPrior& p, const std::string& path);
GmmPrior load_gmm(const std::string& path);

// Synthetic scenes of superimposed filled ellipses.
struct EllipseSceneParams {
    int max_ellipses = 70;
    int image_size = 64;
    double intensity_min = 0.1;
    double intensity_max = 1.0;
    // minor/major axis ratio range
    double eccentricity_min = 0.2;
    double eccentricity_max = 1.0;
    // full major-axis length as a fraction of image_size
    double axis_min_frac = 0.05;
    double axis_max_frac = 0.4;

    void validate() const;
};

struct Ellipse {
    double cx, cy;  // centre, pixels relative to the image centre
    double semi_major, semi_minor;
    double angle;  // radians
    double intensity;
};

struct EllipseScene {
    std::vector<Ellipse> ellipses;
    Image image;
};

EllipseScene generate_ellipse_scene(const EllipseSceneParams& params, Rng& rng);
Image generate_ellipse_image(const EllipseSceneParams& params, Rng& rng);

}  // namespace invbench::priors

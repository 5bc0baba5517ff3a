#pragma once

#include <memory>
#include <string>
#include <vector>

#include "invbench/common.hpp"
#include "invbench/linops.hpp"
#include "invbench/priors.hpp"
#include "invbench/variational.hpp"

namespace invbench::diffusion {

using linops::LinearOperator;
using priors::DiffusionSchedule;
using priors::GmmPrior;

// Noise-prediction model backed by the exact GMM marginals.
class EpsModel {
public:
    EpsModel(std::shared_ptr<const GmmPrior> prior, DiffusionSchedule schedule);

    const GmmPrior& prior() const { return *prior_; }
    std::shared_ptr<const GmmPrior> prior_ptr() const { return prior_; }
    const DiffusionSchedule& schedule() const { return schedule_; }
    int steps() const { return schedule_.steps(); }

    Vector eps(const Vector& x, int t) const;
    // Tweedie estimate E[x0 | x_t].
    Vector denoise(const Vector& x, int t) const;
    // Jacobian of `denoise` applied to v. The Jacobian is symmetric, so this is also the VJP.
    Vector denoise_jvp(const Vector& x, int t, const Vector& v) const;

    // Same prior on a coarser timestep grid.
    EpsModel respaced(int steps) const;
    // `this` if steps == steps(), otherwise respaced(steps).
    EpsModel with_steps(int steps) const;

private:
    std::shared_ptr<const GmmPrior> prior_;
    DiffusionSchedule schedule_;
};

// --- Adam -----------------------------------------------------------------

struct AdamState {
    Vector m;
    Vector v;
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_stab = 1e-8;

    explicit AdamState(Eigen::Index n = 0) : m(Vector::Zero(n)), v(Vector::Zero(n)) {}
};

// Advances the moments and returns the bias-corrected update (to be added to the iterate).
Vector adam_step(AdamState& state, const Vector& grad, double step_size);

// --- Unconditional samplers -----------------------------------------------

// One ancestral step x_t -> x_{t-1} given the model output and a fresh N(0, I) draw.
Vector ddpm_step(const DiffusionSchedule& sch, int t, const Vector& x, const Vector& eps, const Vector& noise);

// Ancestral sampling from x_T ~ N(0, I) through every timestep of the model.
Vector ddpm_sample(const EpsModel& model, Rng& rng);

// Timesteps t_1 < ... < t_K of the K-step deterministic sampler; t_0 = 0 is implied.
std::vector<int> ddim_timesteps(int T, int K);

// Deterministic DDIM map G(z) with K steps.
Vector ddim_generate(const Vector& z, const EpsModel& model, int K);
// dG/dz applied to v (forward mode) and its transpose (reverse mode).
Vector ddim_jvp(const Vector& z, const EpsModel& model, int K, const Vector& v);
Vector ddim_vjp(const Vector& z, const EpsModel& model, int K, const Vector& w);

// --- Solvers ----------------------------------------------------------------

struct DpsConfig {
    double gamma = 1.0;
    int steps = 1000;
};

// grad_x || y - A xhat_t(x) ||^2, with the exact denoiser Jacobian.
Vector dps_data_gradient(const EpsModel& model, const LinearOperator& A, const Vector& y, const Vector& x, int t);

Vector dps(const Vector& y, const LinearOperator& A, double sigma_y, const EpsModel& model, const DpsConfig& cfg,
           Rng& rng);

enum class RhoRule { eq_form, alg_form };
RhoRule parse_rho_rule(const std::string& name);
std::string to_string(RhoRule rule);

struct DiffPirConfig {
    double lambda = 1.0;
    double zeta = 0.5;
    int steps = 1000;
    RhoRule rho_rule = RhoRule::eq_form;
    variational::ProxOptions prox{};
};

// Weight of ||x - p_t||^2 against ||A x - y||^2 in the data subproblem.
double diffpir_rho(RhoRule rule, double lambda, double sigma_y, double alpha_bar);

// x_{t-1} from x_t, the data-consistent estimate x_hat and a fresh draw `noise`.
Vector diffpir_reverse_step(const DiffusionSchedule& sch, int t, const Vector& x_t, const Vector& x_hat, double zeta,
                            const Vector& noise);

Vector diffpir(const Vector& y, const LinearOperator& A, double sigma_y, const EpsModel& model,
               const DiffPirConfig& cfg, Rng& rng);

struct RedDiffConfig {
    double gamma = 1.0;    // data weight
    double lambda = 0.1;   // regularizer weight
    double step_size = 0.05;
    int steps = 1000;
};

Vector reddiff(const Vector& y, const LinearOperator& A, const EpsModel& model, const RedDiffConfig& cfg,
               const Vector& x_init, Rng& rng);

struct DmPlugConfig {
    int unroll_steps = 4;
    double step_size = 0.01;
    int max_iters = 1500;
    bool early_stopping = true;
    int es_window = 50;
    int es_patience = 100;
};

struct DmPlugResult {
    Vector x;
    Vector z;
    int iterations = 0;
    bool stopped_early = false;
    std::vector<double> loss;
    std::vector<double> best_loss;
};

// Gradient of || A G(z) - y ||^2 with respect to z.
Vector dmplug_loss_gradient(const Vector& z, const LinearOperator& A, const Vector& y, const EpsModel& model, int K);

DmPlugResult dmplug_run(const Vector& y, const LinearOperator& A, const EpsModel& model, const DmPlugConfig& cfg,
                        Rng& rng);
Vector dmplug(const Vector& y, const LinearOperator& A, const EpsModel& model, const DmPlugConfig& cfg, Rng& rng);

}  // namespace invbench::diffusion

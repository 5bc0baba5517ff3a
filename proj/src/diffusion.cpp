#include "invbench/diffusion.hpp"

#include <cmath>
#include <deque>
#include <limits>

namespace invbench::diffusion {

EpsModel::EpsModel(std::shared_ptr<const GmmPrior> prior, DiffusionSchedule schedule)
    : prior_(std::move(prior)), schedule_(std::move(schedule)) {
    require(prior_ != nullptr, "EpsModel: null prior");
    require(schedule_.steps() >= 1, "EpsModel: empty schedule");
}

Vector EpsModel::eps(const Vector& x, int t) const { return priors::gmm_eps_model(*prior_, schedule_, x, t); }

Vector EpsModel::denoise(const Vector& x, int t) const {
    return priors::gmm_posterior_mean(*prior_, schedule_, x, t);
}

Vector EpsModel::denoise_jvp(const Vector& x, int t, const Vector& v) const {
    return priors::gmm_posterior_mean_jvp(*prior_, schedule_, x, t, v);
}

EpsModel EpsModel::respaced(int steps) const { return EpsModel(prior_, schedule_.respaced(steps)); }

EpsModel EpsModel::with_steps(int steps) const { return steps == this->steps() ? *this : respaced(steps); }

Vector adam_step(AdamState& s, const Vector& grad, double step_size) {
    if (s.m.size() == 0) {
        s.m = Vector::Zero(grad.size());
        s.v = Vector::Zero(grad.size());
    }
    require(grad.size() == s.m.size(), "adam_step: gradient shape does not match state");
    ++s.step;
    s.m = s.beta1 * s.m + (1.0 - s.beta1) * grad;
    s.v = s.beta2 * s.v + (1.0 - s.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(s.beta1, double(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, double(s.step));
    return (-step_size * (s.m / c1).array() / ((s.v / c2).array().sqrt() + s.eps_stab)).matrix();
}

Vector ddpm_step(const DiffusionSchedule& sch, int t, const Vector& x, const Vector& eps, const Vector& noise) {
    const double beta = sch.beta(t);
    return (x - beta / std::sqrt(1.0 - sch.alpha_bar(t)) * eps) / std::sqrt(sch.alpha(t)) + std::sqrt(beta) * noise;
}

Vector ddpm_sample(const EpsModel& model, Rng& rng) {
    const Eigen::Index n = model.prior().dim();
    Vector x = randn(n, rng);
    for (int t = model.steps(); t >= 1; --t) {
        const Vector e = model.eps(x, t);
        x = ddpm_step(model.schedule(), t, x, e, randn(n, rng));
    }
    return x;
}

std::vector<int> ddim_timesteps(int T, int K) {
    require(K >= 1 && K <= T, "ddim: number of steps must lie in [1, T]");
    std::vector<int> ts(K);
    for (int i = 1; i <= K; ++i) ts[i - 1] = int((std::int64_t(i) * T) / K);
    return ts;
}

namespace {

double alpha_bar_at(const DiffusionSchedule& sch, int t) { return t == 0 ? 1.0 : sch.alpha_bar(t); }

// x_t -> x_tp with the deterministic (eta = 0) update.
Vector ddim_step(const EpsModel& m, const Vector& x, int t, int tp) {
    const double ab = m.schedule().alpha_bar(t), abp = alpha_bar_at(m.schedule(), tp);
    const Vector xhat = m.denoise(x, t);
    const Vector e = (x - std::sqrt(ab) * xhat) / std::sqrt(1.0 - ab);
    return std::sqrt(abp) * xhat + std::sqrt(1.0 - abp) * e;
}

// Jacobian of ddim_step at x applied to v; symmetric.
Vector ddim_step_jvp(const EpsModel& m, const Vector& x, int t, int tp, const Vector& v) {
    const double ab = m.schedule().alpha_bar(t), abp = alpha_bar_at(m.schedule(), tp);
    const Vector jv = m.denoise_jvp(x, t, v);
    const double c = std::sqrt(1.0 - abp) / std::sqrt(1.0 - ab);
    return (std::sqrt(abp) - c * std::sqrt(ab)) * jv + c * v;
}

// States x_{t_K} = z, ..., x_{t_0}; states[i] is the input of step i.
std::vector<Vector> ddim_states(const Vector& z, const EpsModel& m, const std::vector<int>& ts) {
    std::vector<Vector> states;
    states.reserve(ts.size() + 1);
    states.push_back(z);
    for (int i = int(ts.size()) - 1; i >= 0; --i) {
        const int tp = i > 0 ? ts[i - 1] : 0;
        states.push_back(ddim_step(m, states.back(), ts[i], tp));
    }
    return states;
}

}  // namespace

Vector ddim_generate(const Vector& z, const EpsModel& model, int K) {
    require(z.size() == model.prior().dim(), "ddim_generate: latent has wrong length");
    return ddim_states(z, model, ddim_timesteps(model.steps(), K)).back();
}

Vector ddim_jvp(const Vector& z, const EpsModel& model, int K, const Vector& v) {
    require(z.size() == model.prior().dim() && v.size() == z.size(), "ddim_jvp: length mismatch");
    const auto ts = ddim_timesteps(model.steps(), K);
    Vector x = z, dx = v;
    for (int i = K - 1; i >= 0; --i) {
        const int tp = i > 0 ? ts[i - 1] : 0;
        dx = ddim_step_jvp(model, x, ts[i], tp, dx);
        x = ddim_step(model, x, ts[i], tp);
    }
    return dx;
}

Vector ddim_vjp(const Vector& z, const EpsModel& model, int K, const Vector& w) {
    require(z.size() == model.prior().dim() && w.size() == z.size(), "ddim_vjp: length mismatch");
    const auto ts = ddim_timesteps(model.steps(), K);
    const auto states = ddim_states(z, model, ts);
    Vector g = w;
    // Step i (i = K-1 .. 0) consumed states[K-1-i]; walk them in reverse.
    for (int i = 0; i < K; ++i) {
        const int tp = i > 0 ? ts[i - 1] : 0;
        g = ddim_step_jvp(model, states[K - 1 - i], ts[i], tp, g);
    }
    return g;
}

Vector dps_data_gradient(const EpsModel& model, const LinearOperator& A, const Vector& y, const Vector& x, int t) {
    const Vector xhat = model.denoise(x, t);
    const Vector r = y - A.apply(xhat);
    return -2.0 * model.denoise_jvp(x, t, A.adjoint(r));
}

Vector dps(const Vector& y, const LinearOperator& A, double sigma_y, const EpsModel& base, const DpsConfig& cfg,
           Rng& rng) {
    require(cfg.gamma >= 0.0, "dps: gamma must be >= 0");
    require(sigma_y >= 0.0, "dps: sigma_y must be >= 0");
    require(y.size() == A.out_size(), "dps: y has wrong length");
    require(A.in_size() == base.prior().dim(), "dps: operator and prior dimensions differ");
    const EpsModel model = base.with_steps(cfg.steps);
    const auto& sch = model.schedule();
    const Eigen::Index n = model.prior().dim();

    Vector x = randn(n, rng);
    for (int t = model.steps(); t >= 1; --t) {
        const Vector e = model.eps(x, t);
        Vector x_next = ddpm_step(sch, t, x, e, randn(n, rng));
        if (cfg.gamma > 0.0) {
            const double ab = sch.alpha_bar(t);
            const Vector xhat = (x - std::sqrt(1.0 - ab) * e) / std::sqrt(ab);
            const Vector r = y - A.apply(xhat);
            const Vector grad = -2.0 * model.denoise_jvp(x, t, A.adjoint(r));
            const double gamma_t = cfg.gamma / std::max(r.norm(), 1e-12);
            x_next -= gamma_t * grad;
        }
        x = std::move(x_next);
        if (!x.allFinite()) throw SolverFailure("dps: iterate became non-finite at t=" + std::to_string(t));
    }
    return x;
}

RhoRule parse_rho_rule(const std::string& name) {
    if (name == "eq_form") return RhoRule::eq_form;
    if (name == "alg_form") return RhoRule::alg_form;
    throw InvalidInput("unknown rho rule '" + name + "'");
}

std::string to_string(RhoRule rule) { return rule == RhoRule::eq_form ? "eq_form" : "alg_form"; }

double diffpir_rho(RhoRule rule, double lambda, double sigma_y, double ab) {
    const double s2 = sigma_y * sigma_y;
    if (rule == RhoRule::eq_form) return lambda * s2 * ab / (1.0 - ab);
    return lambda * s2 / std::sqrt((1.0 - ab) / ab);
}

Vector diffpir_reverse_step(const DiffusionSchedule& sch, int t, const Vector& x_t, const Vector& x_hat, double zeta,
                            const Vector& noise) {
    const double ab = sch.alpha_bar(t);
    const double abp = alpha_bar_at(sch, t - 1);
    const Vector eff = (x_t - std::sqrt(ab) * x_hat) / std::sqrt(1.0 - ab);
    if (zeta >= 1.0) return std::sqrt(abp) * x_hat + std::sqrt(1.0 - abp) * noise;
    return std::sqrt(abp) * x_hat + std::sqrt(1.0 - abp) * (std::sqrt(1.0 - zeta) * eff + std::sqrt(zeta) * noise);
}

Vector diffpir(const Vector& y, const LinearOperator& A, double sigma_y, const EpsModel& base, const DiffPirConfig& cfg,
               Rng& rng) {
    require(cfg.lambda > 0.0, "diffpir: lambda must be > 0");
    require(cfg.zeta >= 0.0 && cfg.zeta <= 1.0, "diffpir: zeta must lie in [0,1]");
    require(sigma_y >= 0.0, "diffpir: sigma_y must be >= 0");
    require(y.size() == A.out_size(), "diffpir: y has wrong length");
    require(A.in_size() == base.prior().dim(), "diffpir: operator and prior dimensions differ");
    const EpsModel model = base.with_steps(cfg.steps);
    const auto& sch = model.schedule();
    const Eigen::Index n = model.prior().dim();

    Vector x = randn(n, rng);
    for (int t = model.steps(); t >= 1; --t) {
        const Vector p = model.denoise(x, t);
        const double rho = diffpir_rho(cfg.rho_rule, cfg.lambda, sigma_y, sch.alpha_bar(t));
        const double gamma = rho > 0.0 ? 1.0 / rho : std::numeric_limits<double>::infinity();
        const Vector xhat = variational::prox_data(p, A, y, gamma, cfg.prox);
        x = diffpir_reverse_step(sch, t, x, xhat, cfg.zeta, randn(n, rng));
        if (!x.allFinite()) throw SolverFailure("diffpir: iterate became non-finite at t=" + std::to_string(t));
    }
    return x;
}

Vector reddiff(const Vector& y, const LinearOperator& A, const EpsModel& base, const RedDiffConfig& cfg,
               const Vector& x_init, Rng& rng) {
    require(cfg.step_size > 0.0, "reddiff: step size must be positive");
    require(cfg.lambda >= 0.0 && cfg.gamma >= 0.0, "reddiff: weights must be >= 0");
    require(y.size() == A.out_size(), "reddiff: y has wrong length");
    require(x_init.size() == A.in_size() && A.in_size() == base.prior().dim(), "reddiff: dimension mismatch");
    const EpsModel model = base.with_steps(cfg.steps);
    const auto& sch = model.schedule();
    const Eigen::Index n = x_init.size();

    Vector x = x_init;
    AdamState adam(n);
    for (int t = model.steps(); t >= 1; --t) {
        const double ab = sch.alpha_bar(t);
        const Vector noise = randn(n, rng);
        const Vector z = std::sqrt(ab) * x + std::sqrt(1.0 - ab) * noise;
        const double lambda_t = cfg.lambda * std::sqrt((1.0 - ab) / ab);
        // The score term is a constant w.r.t. x (stop-gradient).
        Vector grad = cfg.gamma * A.adjoint(A.apply(x) - y);
        if (lambda_t != 0.0) grad += lambda_t * (model.eps(z, t) - noise);
        x += adam_step(adam, grad, cfg.step_size);
        if (!x.allFinite()) throw SolverFailure("reddiff: iterate became non-finite at t=" + std::to_string(t));
    }
    return x;
}

Vector dmplug_loss_gradient(const Vector& z, const LinearOperator& A, const Vector& y, const EpsModel& model, int K) {
    const Vector x = ddim_generate(z, model, K);
    return ddim_vjp(z, model, K, 2.0 * A.adjoint(A.apply(x) - y));
}

DmPlugResult dmplug_run(const Vector& y, const LinearOperator& A, const EpsModel& model, const DmPlugConfig& cfg,
                        Rng& rng) {
    require(cfg.unroll_steps >= 1, "dmplug: unroll steps must be >= 1");
    require(cfg.max_iters >= 1, "dmplug: max_iters must be >= 1");
    require(cfg.step_size > 0.0, "dmplug: step size must be positive");
    require(cfg.es_window >= 2 && cfg.es_patience >= 1, "dmplug: bad early-stopping window");
    require(y.size() == A.out_size(), "dmplug: y has wrong length");
    require(A.in_size() == model.prior().dim(), "dmplug: operator and prior dimensions differ");
    const Eigen::Index n = model.prior().dim();
    const int K = cfg.unroll_steps;
    const auto ts = ddim_timesteps(model.steps(), K);

    DmPlugResult res;
    Vector z = randn(n, rng);
    AdamState adam(n);

    // Windowed moving variance of the reconstruction; keep the iterate at its minimum.
    std::deque<Vector> window;
    double best_var = std::numeric_limits<double>::infinity();
    int since_best = 0;
    Vector es_x, es_z;
    double best = std::numeric_limits<double>::infinity();

    for (int it = 0; it < cfg.max_iters; ++it) {
        const auto states = ddim_states(z, model, ts);
        const Vector& x = states.back();
        const Vector r = A.apply(x) - y;
        const double loss = r.squaredNorm();
        if (!std::isfinite(loss)) throw SolverFailure("dmplug: loss became non-finite");
        best = std::min(best, loss);
        res.loss.push_back(loss);
        res.best_loss.push_back(best);
        res.iterations = it + 1;

        if (cfg.early_stopping) {
            window.push_back(x);
            if (int(window.size()) > cfg.es_window) window.pop_front();
            if (int(window.size()) == cfg.es_window) {
                Vector mean = Vector::Zero(n);
                for (const auto& w : window) mean += w;
                mean /= double(window.size());
                double var = 0.0;
                for (const auto& w : window) var += (w - mean).squaredNorm();
                var /= double(window.size()) * double(n);
                if (var < best_var) {
                    best_var = var;
                    since_best = 0;
                    es_x = x;
                    es_z = z;
                } else if (++since_best >= cfg.es_patience) {
                    res.stopped_early = true;
                    break;
                }
            }
        }

        Vector g = 2.0 * A.adjoint(r);
        for (int i = 0; i < K; ++i) {
            const int tp = i > 0 ? ts[i - 1] : 0;
            g = ddim_step_jvp(model, states[K - 1 - i], ts[i], tp, g);
        }
        z += adam_step(adam, g, cfg.step_size);
        if (!z.allFinite()) throw SolverFailure("dmplug: latent became non-finite");
    }

    if (cfg.early_stopping && es_x.size() == n) {
        res.x = std::move(es_x);
        res.z = std::move(es_z);
    } else {
        res.z = z;
        res.x = ddim_generate(z, model, K);
    }
    return res;
}

Vector dmplug(const Vector& y, const LinearOperator& A, const EpsModel& model, const DmPlugConfig& cfg, Rng& rng) {
    return dmplug_run(y, A, model, cfg, rng).x;
}

}  // namespace invbench::diffusion

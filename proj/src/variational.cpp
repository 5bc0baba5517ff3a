#include "invbench/variational.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "invbench/image.hpp"

namespace invbench::variational {

CgResult cg_solve(const std::function<Vector(const Vector&)>& spd_apply, const Vector& b, double tol, int max_iters,
                  const Vector* x0) {
    require(tol > 0.0, "cg_solve: tol must be positive");
    require(max_iters >= 0, "cg_solve: max_iters must be >= 0");
    CgResult res;
    const double bnorm = b.norm();
    if (bnorm == 0.0) {
        res.x = Vector::Zero(b.size());
        res.converged = true;
        return res;
    }
    if (x0) {
        require(x0->size() == b.size(), "cg_solve: initial guess has wrong length");
        res.x = *x0;
    } else {
        res.x = Vector::Zero(b.size());
    }
    Vector r = x0 ? Vector(b - spd_apply(res.x)) : b;
    Vector p = r;
    double rr = r.squaredNorm();
    res.rel_residual = std::sqrt(rr) / bnorm;
    while (res.rel_residual > tol && res.iterations < max_iters) {
        const Vector mp = spd_apply(p);
        const double curv = p.dot(mp);
        if (!(curv > 0.0)) throw SolverFailure("cg_solve: breakdown (non-positive curvature " + std::to_string(curv) + ")");
        const double step = rr / curv;
        res.x += step * p;
        r -= step * mp;
        const double rr_new = r.squaredNorm();
        p = r + (rr_new / rr) * p;
        rr = rr_new;
        ++res.iterations;
        res.rel_residual = std::sqrt(rr) / bnorm;
    }
    res.converged = res.rel_residual <= tol;
    return res;
}

Vector prox_data(const Vector& z, const LinearOperator& A, const Vector& y, double gamma, const ProxOptions& opt) {
    require(gamma >= 0.0, "prox_data: gamma must be >= 0");
    require(z.size() == A.in_size(), "prox_data: z has wrong length");
    require(y.size() == A.out_size(), "prox_data: y has wrong length");
    if (gamma == 0.0) return z;

    CgResult res;
    if (std::isinf(gamma)) {
        const Vector b = A.adjoint(y);
        res = cg_solve([&A](const Vector& v) { return A.adjoint(A.apply(v)); }, b, opt.tol, opt.max_iters, &z);
    } else {
        const double inv = 1.0 / gamma;
        const Vector b = A.adjoint(y) + inv * z;
        res = cg_solve([&A, inv](const Vector& v) { return Vector(A.adjoint(A.apply(v)) + inv * v); }, b, opt.tol,
                       opt.max_iters, &z);
    }
    if (!res.x.allFinite()) throw SolverFailure("prox_data: CG produced a non-finite iterate");
    if (!res.converged && opt.strict)
        throw SolverFailure("prox_data: CG did not converge in " + std::to_string(res.iterations) +
                            " iterations (relative residual " + std::to_string(res.rel_residual) + ")");
    return res.x;
}

Vector grad2d(const Vector& x, Shape s) {
    require(x.size() == s.size(), "grad2d: length mismatch");
    const Eigen::Index n = s.size();
    Vector g = Vector::Zero(2 * n);
    for (int r = 0; r < s.rows; ++r)
        for (int c = 0; c < s.cols; ++c) {
            const Eigen::Index i = Eigen::Index(r) * s.cols + c;
            if (c + 1 < s.cols) g[i] = x[i + 1] - x[i];
            if (r + 1 < s.rows) g[n + i] = x[i + s.cols] - x[i];
        }
    return g;
}

Vector grad2d_adjoint(const Vector& p, Shape s) {
    const Eigen::Index n = s.size();
    require(p.size() == 2 * n, "grad2d_adjoint: length mismatch");
    Vector out = Vector::Zero(n);
    for (int r = 0; r < s.rows; ++r)
        for (int c = 0; c < s.cols; ++c) {
            const Eigen::Index i = Eigen::Index(r) * s.cols + c;
            if (c + 1 < s.cols) {
                out[i] -= p[i];
                out[i + 1] += p[i];
            }
            if (r + 1 < s.rows) {
                out[i] -= p[n + i];
                out[i + s.cols] += p[n + i];
            }
        }
    return out;
}

double grad2d_norm_sq(Shape s) {
    auto axis = [](int len) {
        if (len <= 1) return 0.0;
        const double v = std::sin(std::numbers::pi * (len - 1) / (2.0 * len));
        return 4.0 * v * v;
    };
    return axis(s.rows) + axis(s.cols);
}

double tv_norm(const Vector& x, Shape s) {
    const Vector g = grad2d(x, s);
    const Eigen::Index n = s.size();
    return (g.head(n).array().square() + g.tail(n).array().square()).sqrt().sum();
}

void write_trace_csv(const IterTrace& trace, const std::string& path) {
    require(trace.objective.size() == trace.residual.size(), "write_trace_csv: ragged trace");
    std::string out = "iteration,objective,residual\n";
    char buf[96];
    for (std::size_t i = 0; i < trace.objective.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", i, trace.objective[i], trace.residual[i]);
        out += buf;
    }
    io::write_file_atomic(path, out);
}

namespace {

// Pointwise projection of the 2-vector field onto the l2 ball of radius `radius`.
void project_ball(Vector& u, Eigen::Index n, double radius) {
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mag = std::hypot(u[i], u[n + i]);
        if (mag > radius) {
            const double f = radius > 0.0 ? radius / mag : 0.0;
            u[i] *= f;
            u[n + i] *= f;
        }
    }
}

double norm_or_estimate(const LinearOperator& A, double given) {
    if (given > 0.0) return given;
    // Power iteration underestimates; pad slightly.
    return 1.02 * linops::op_norm(A, 60, 0x5eed);
}

}  // namespace

DataStep parse_data_step(const std::string& name) {
    if (name == "gradient") return DataStep::gradient;
    if (name == "prox") return DataStep::prox;
    throw InvalidInput("unknown data step '" + name + "' (expected gradient or prox)");
}

SolveResult solve_tv(const Vector& y, const LinearOperator& A, double lambda, const PdParams& p, const Vector* x_init) {
    require(lambda >= 0.0, "solve_tv: lambda must be >= 0");
    require(y.size() == A.out_size(), "solve_tv: y has wrong length");
    require(p.max_iters >= 1, "solve_tv: max_iters must be >= 1");
    const Shape s = A.in_shape();
    const Eigen::Index n = s.size();
    const bool use_prox = p.data_step == DataStep::prox;

    const double dnorm2 = grad2d_norm_sq(s);
    double tau = 0.0, sigma = 0.0;
    if (use_prox) {
        // Chambolle-Pock: tau sigma ||D||^2 <= 1
        tau = p.tau > 0.0 ? p.tau : 1.0;
        sigma = p.sigma > 0.0 ? p.sigma : (dnorm2 > 0.0 ? 1.0 / (tau * dnorm2) : 1.0);
        require(tau * sigma * dnorm2 <= 1.0 + 1e-12, "solve_tv: step sizes violate tau sigma ||D||^2 <= 1");
    } else {
        const double anorm = norm_or_estimate(A, p.op_norm);
        sigma = p.sigma > 0.0 ? p.sigma : (dnorm2 > 0.0 ? 1.0 / dnorm2 : 1.0);
        tau = p.tau > 0.0 ? p.tau : 1.0 / (sigma * dnorm2 + 1.01 * anorm * anorm / 2.0);
        require(1.0 / tau - sigma * dnorm2 >= anorm * anorm / 2.0 * (1.0 - 1e-12),
                "solve_tv: step sizes violate the Condat-Vu condition");
    }

    SolveResult res;
    Vector x = x_init ? *x_init : Vector(Vector::Zero(n));
    require(x.size() == n, "solve_tv: x_init has wrong length");
    Vector u = Vector::Zero(2 * n);
    for (int k = 0; k < p.max_iters; ++k) {
        const Vector resid = A.apply(x) - y;
        const double obj = 0.5 * resid.squaredNorm() + lambda * tv_norm(x, s);
        if (!std::isfinite(obj)) throw SolverFailure("solve_tv: objective became non-finite");
        const Vector x_new = use_prox ? prox_data(Vector(x - tau * grad2d_adjoint(u, s)), A, y, tau, p.prox)
                                      : Vector(x - tau * (A.adjoint(resid) + grad2d_adjoint(u, s)));
        u += sigma * grad2d(2.0 * x_new - x, s);
        project_ball(u, n, lambda);
        const double dx = (x_new - x).norm();
        res.trace.objective.push_back(obj);
        res.trace.residual.push_back(resid.norm());
        x = x_new;
        res.iterations = k + 1;
        if (dx <= p.rel_tol * std::max(x.norm(), 1e-12)) {
            res.converged = true;
            break;
        }
    }
    if (!x.allFinite()) throw SolverFailure("solve_tv: iterate became non-finite");
    res.x = std::move(x);
    return res;
}

RegKind parse_reg_kind(const std::string& name) {
    if (name == "tikhonov_identity") return RegKind::tikhonov_identity;
    if (name == "tikhonov_gradient") return RegKind::tikhonov_gradient;
    if (name == "gmm_neglog") return RegKind::gmm_neglog;
    if (name == "tv") return RegKind::tv;
    throw InvalidInput("unknown regularizer '" + name + "'");
}

std::string to_string(RegKind kind) {
    switch (kind) {
        case RegKind::tikhonov_identity: return "tikhonov_identity";
        case RegKind::tikhonov_gradient: return "tikhonov_gradient";
        case RegKind::gmm_neglog: return "gmm_neglog";
        case RegKind::tv: return "tv";
    }
    return "unknown";
}

Regularizer::Regularizer(RegKind kind, Shape shape) : kind_(kind), shape_(shape) {
    require(kind != RegKind::gmm_neglog, "Regularizer: gmm_neglog needs a prior");
}

Regularizer::Regularizer(std::shared_ptr<const priors::GmmPrior> prior, Shape shape)
    : kind_(RegKind::gmm_neglog), shape_(shape), prior_(std::move(prior)) {
    require(prior_ != nullptr, "Regularizer: null prior");
    require(prior_->dim() == shape.size(), "Regularizer: prior dimension does not match image shape");
}

double Regularizer::value(const Vector& x) const {
    switch (kind_) {
        case RegKind::tikhonov_identity: return 0.5 * x.squaredNorm();
        case RegKind::tikhonov_gradient: return 0.5 * grad2d(x, shape_).squaredNorm();
        case RegKind::gmm_neglog: return -priors::gmm_log_density(*prior_, x);
        case RegKind::tv: return tv_norm(x, shape_);
    }
    return 0.0;
}

Vector Regularizer::gradient(const Vector& x) const {
    switch (kind_) {
        case RegKind::tikhonov_identity: return x;
        case RegKind::tikhonov_gradient: return grad2d_adjoint(grad2d(x, shape_), shape_);
        case RegKind::gmm_neglog: return -priors::gmm_grad_log_density(*prior_, x);
        case RegKind::tv: break;
    }
    throw InvalidInput("Regularizer: TV has no gradient; use solve_tv");
}

double Regularizer::lipschitz() const {
    switch (kind_) {
        case RegKind::tikhonov_identity: return 1.0;
        case RegKind::tikhonov_gradient: return grad2d_norm_sq(shape_);
        case RegKind::gmm_neglog: return 1.0 / prior_->variances.minCoeff();
        case RegKind::tv: break;
    }
    return std::numeric_limits<double>::infinity();
}

double variational_objective(const Vector& x, const Vector& y, const LinearOperator& A, double lambda,
                             const Regularizer& R) {
    return 0.5 * (A.apply(x) - y).squaredNorm() + lambda * R.value(x);
}

SolveResult solve_smooth(const Vector& y, const LinearOperator& A, double lambda, const Regularizer& R,
                         const AgdParams& p, const Vector& x_init) {
    require(R.smooth(), "solve_smooth: regularizer must be smooth");
    require(lambda >= 0.0, "solve_smooth: lambda must be >= 0");
    require(y.size() == A.out_size(), "solve_smooth: y has wrong length");
    require(x_init.size() == A.in_size(), "solve_smooth: x_init has wrong length");
    require(p.max_iters >= 1, "solve_smooth: max_iters must be >= 1");

    const double anorm = norm_or_estimate(A, p.op_norm);
    double lip = anorm * anorm + lambda * R.lipschitz();
    if (!(lip > 0.0)) lip = 1.0;

    auto objective = [&](const Vector& v) { return variational_objective(v, y, A, lambda, R); };
    auto gradient = [&](const Vector& v) {
        Vector g = A.adjoint(A.apply(v) - y);
        if (lambda != 0.0) g += lambda * R.gradient(v);
        return g;
    };

    SolveResult res;
    Vector x = x_init, x_prev = x_init;
    double fx = objective(x);
    if (!std::isfinite(fx)) throw SolverFailure("solve_smooth: initial objective is non-finite");
    double t = 1.0;
    for (int k = 0; k < p.max_iters; ++k) {
        const Vector gx = gradient(x);
        res.trace.objective.push_back(fx);
        res.trace.residual.push_back(gx.norm());
        res.iterations = k;
        if (gx.norm() / std::max(1.0, x.norm()) <= p.rel_tol) {
            res.converged = true;
            break;
        }
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        const Vector z = x + ((t - 1.0) / t_next) * (x - x_prev);
        Vector cand = z - gradient(z) / lip;
        double fc = objective(cand);
        if (!std::isfinite(fc)) throw SolverFailure("solve_smooth: objective became non-finite");
        if (fc > fx) {
            // Restart momentum: plain gradient step from x, backtracking on the Lipschitz estimate.
            t = 1.0;
            for (int bt = 0;; ++bt) {
                cand = x - gx / lip;
                fc = objective(cand);
                if (std::isfinite(fc) && fc <= fx) break;
                if (bt >= 60) throw SolverFailure("solve_smooth: no descent along the gradient");
                lip *= 2.0;
            }
        } else {
            t = t_next;
        }
        x_prev = x;
        x = std::move(cand);
        fx = fc;
        res.iterations = k + 1;
    }
    res.x = std::move(x);
    return res;
}

}  // namespace invbench::variational

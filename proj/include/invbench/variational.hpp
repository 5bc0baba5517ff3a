#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "invbench/common.hpp"
#include "invbench/linops.hpp"
#include "invbench/priors.hpp"

namespace invbench::variational {

using linops::LinearOperator;
using linops::Shape;

struct CgResult {
    Vector x;
    int iterations = 0;
    double rel_residual = 0.0;
    bool converged = false;
};

// Conjugate gradient for an SPD operator given as a callback.
// Stops when ||M x - b|| / ||b|| <= tol; raises SolverFailure on zero curvature.
CgResult cg_solve(const std::function<Vector(const Vector&)>& spd_apply, const Vector& b, double tol = 1e-10,
                  int max_iters = 500, const Vector* x0 = nullptr);

struct ProxOptions {
    double tol = 1e-10;
    int max_iters = 500;
    // false: return the last CG iterate when the budget runs out (fixed-budget inexact prox)
    bool strict = true;
};

// argmin_x 1/2 ||x - z||^2 + gamma/2 ||A x - y||^2, i.e. (A^T A + I/gamma) x = A^T y + z/gamma.
// gamma == 0 returns z; gamma == +inf returns the least-squares solution closest to z
// (CG on the normal equations started at z). Throws SolverFailure if CG does not converge, unless
// opt.strict is false. Non-finite iterates always throw.
Vector prox_data(const Vector& z, const LinearOperator& A, const Vector& y, double gamma,
                 const ProxOptions& opt = {});

// Isotropic discrete gradient with forward differences and Neumann boundary.
// Output layout: [horizontal differences (n), vertical differences (n)].
Vector grad2d(const Vector& x, Shape s);
Vector grad2d_adjoint(const Vector& p, Shape s);
// Exact ||D||^2 for the Neumann forward-difference gradient on an s.rows x s.cols grid.
double grad2d_norm_sq(Shape s);
double tv_norm(const Vector& x, Shape s);

struct IterTrace {
    std::vector<double> objective;
    std::vector<double> residual;
};

// Columns iteration,objective,residual.
void write_trace_csv(const IterTrace& trace, const std::string& path);

// gradient: explicit step on the data term (Condat-Vu), step size capped by 1/||A||^2.
// prox: the data term goes through prox_data (CG), which removes that cap; much faster on
// ill-conditioned operators such as CT, at the cost of a CG solve per iteration.
enum class DataStep { gradient, prox };

DataStep parse_data_step(const std::string& name);

struct PdParams {
    int max_iters = 2000;
    double rel_tol = 1e-6;
    DataStep data_step = DataStep::gradient;
    // Auto (<= 0): gradient mode uses the Condat-Vu rule from operator norms;
    // prox mode uses tau = 1 and sigma = 1 / (tau ||D||^2).
    double tau = 0.0;
    double sigma = 0.0;
    // Precomputed ||A|| (<= 0: estimated by power iteration). Unused in prox mode.
    double op_norm = 0.0;
    // CG settings for prox mode.
    ProxOptions prox{1e-9, 1000, true};
};

struct SolveResult {
    Vector x;
    int iterations = 0;
    bool converged = false;
    IterTrace trace;
};

// argmin 1/2 ||A x - y||^2 + lambda ||D x||_{2,1} via primal-dual splitting (see DataStep).
SolveResult solve_tv(const Vector& y, const LinearOperator& A, double lambda, const PdParams& p = {},
                     const Vector* x_init = nullptr);

enum class RegKind { tikhonov_identity, tikhonov_gradient, gmm_neglog, tv };

RegKind parse_reg_kind(const std::string& name);
std::string to_string(RegKind kind);

// R(x) for the variational objective 1/2||Ax - y||^2 + lambda R(x).
class Regularizer {
public:
    // tikhonov_identity: 1/2 ||x||^2; tikhonov_gradient: 1/2 ||D x||^2; tv: ||D x||_{2,1}.
    Regularizer(RegKind kind, Shape shape);
    // gmm_neglog: -log p(x).
    Regularizer(std::shared_ptr<const priors::GmmPrior> prior, Shape shape);

    RegKind kind() const { return kind_; }
    bool smooth() const { return kind_ != RegKind::tv; }
    double value(const Vector& x) const;
    Vector gradient(const Vector& x) const;
    // Upper bound on the Lipschitz constant of the gradient.
    double lipschitz() const;

private:
    RegKind kind_;
    Shape shape_;
    std::shared_ptr<const priors::GmmPrior> prior_;
};

struct AgdParams {
    int max_iters = 1000;
    double rel_tol = 1e-8;
    double op_norm = 0.0;  // <= 0: estimated by power iteration
};

// Accelerated gradient descent with momentum restart whenever the objective increases.
// Returns the iterate with the lowest objective seen.
SolveResult solve_smooth(const Vector& y, const LinearOperator& A, double lambda, const Regularizer& R,
                         const AgdParams& p, const Vector& x_init);

double variational_objective(const Vector& x, const Vector& y, const LinearOperator& A, double lambda,
                             const Regularizer& R);

}  // namespace invbench::variational

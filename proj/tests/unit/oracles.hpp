#pragma once
// Independent reference computations used by the unit tests.

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "invbench/common.hpp"
#include "invbench/linops.hpp"

namespace oracle {

using invbench::Matrix;
using invbench::Vector;

inline double rel_err(const Vector& a, const Vector& b) {
    const double d = std::max(b.norm(), 1e-300);
    return (a - b).norm() / d;
}

// Central differences of f along every coordinate.
template <class F>
Vector fd_gradient(F f, const Vector& x, double h) {
    Vector g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Vector xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f(xp) - f(xm)) / (2 * h);
    }
    return g;
}

template <class F>
Vector fd_directional(F f, const Vector& x, const Vector& v, double h) {
    return (f(x + h * v) - f(x - h * v)) / (2 * h);
}

// 1-D TV denoising argmin 1/2||x - y||^2 + lam * sum|x_{i+1} - x_i| by the taut-string method
// (Condat's direct algorithm).
inline std::vector<double> tv1d_taut_string(const std::vector<double>& y, double lam) {
    const int n = int(y.size());
    std::vector<double> x(n);
    if (n == 0) return x;
    int k = 0, k0 = 0, kplus = 0, kminus = 0;
    double umin = lam, umax = -lam;
    double vmin = y[0] - lam, vmax = y[0] + lam;
    const double twolam = 2 * lam, minlam = -lam;
    for (;;) {
        while (k == n - 1) {
            if (umin < 0.0) {
                do x[k0++] = vmin;
                while (k0 <= kminus);
                umax = (vmin = y[kminus = k = k0]) + (umin = lam) - vmax;
            } else if (umax > 0.0) {
                do x[k0++] = vmax;
                while (k0 <= kplus);
                umin = (vmax = y[kplus = k = k0]) + (umax = minlam) - vmin;
            } else {
                vmin += umin / (k - k0 + 1);
                do x[k0++] = vmin;
                while (k0 <= k);
                return x;
            }
        }
        if ((umin += y[k + 1] - vmin) < minlam) {
            do x[k0++] = vmin;
            while (k0 <= kminus);
            vmax = (vmin = y[kplus = kminus = k = k0]) + twolam;
            umin = lam;
            umax = minlam;
        } else if ((umax += y[k + 1] - vmax) > lam) {
            do x[k0++] = vmax;
            while (k0 <= kplus);
            vmin = (vmax = y[kplus = kminus = k = k0]) - twolam;
            umin = lam;
            umax = minlam;
        } else {
            k++;
            if (umin >= lam) {
                vmin += (umin - lam) / ((kminus = k) - k0 + 1);
                umin = lam;
            }
            if (umax <= minlam) {
                vmax += (umax + lam) / ((kplus = k) - k0 + 1);
                umax = minlam;
            }
        }
    }
}

// KKT residual of a 1-D TV solution: with u_i = sum_{j<=i}(y_j - x_j), need |u_i| <= lam,
// u_i = -lam*sign(x_{i+1}-x_i) where the jump is nonzero, and u_{n-1} = 0.
inline double tv1d_kkt_violation(const std::vector<double>& y, const std::vector<double>& x, double lam) {
    double u = 0.0, worst = 0.0;
    const int n = int(y.size());
    for (int i = 0; i < n - 1; ++i) {
        u += y[i] - x[i];
        worst = std::max(worst, std::abs(u) - lam);
        const double jump = x[i + 1] - x[i];
        if (std::abs(jump) > 1e-9) worst = std::max(worst, std::abs(u + lam * (jump > 0 ? 1.0 : -1.0)));
    }
    u += y[n - 1] - x[n - 1];
    return std::max(worst, std::abs(u));
}

// Line integrals by explicit ray marching with bilinear interpolation, one sample per unit step.
inline double ray_sum(const Vector& img, int n, double theta_deg, double offset) {
    const double th = theta_deg * M_PI / 180.0;
    const double ct = std::cos(th), st = std::sin(th);
    const double c = 0.5 * (n - 1);
    const int half = int(std::ceil(n * std::sqrt(2.0) / 2.0)) + 1;
    auto pix = [&](int r, int col) { return (r < 0 || r >= n || col < 0 || col >= n) ? 0.0 : img[r * n + col]; };
    double acc = 0.0;
    for (int k = -half; k <= half; ++k) {
        const double px = offset * ct - k * st + c;
        const double py = offset * st + k * ct + c;
        const int x0 = int(std::floor(px)), y0 = int(std::floor(py));
        const double fx = px - x0, fy = py - y0;
        acc += (1 - fx) * (1 - fy) * pix(y0, x0) + fx * (1 - fy) * pix(y0, x0 + 1) + (1 - fx) * fy * pix(y0 + 1, x0) +
               fx * fy * pix(y0 + 1, x0 + 1);
    }
    return acc;
}

}  // namespace oracle

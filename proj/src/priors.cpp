#include "invbench/priors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

namespace invbench::priors {

namespace {

constexpr double kRespFloor = 1e-300;
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

// Mixture sum_k w_k N(scale * mu_k, var_k I) evaluated at one point.
struct MixturePoint {
    Vector resp;     // posterior component probabilities
    Matrix grads;    // column k: (scale*mu_k - x) / var_k
    Vector score;    // sum_k resp_k grads_k
    double log_density = 0.0;
};

MixturePoint eval_mixture(const GmmPrior& p, double scale, const Vector& var, const Vector& x) {
    const int K = p.components();
    const double n = double(p.dim());
    MixturePoint mp;
    mp.grads.resize(p.dim(), K);
    Vector logc(K);
    for (int k = 0; k < K; ++k) {
        const Vector diff = scale * p.means.col(k) - x;
        const double sq = diff.squaredNorm();
        mp.grads.col(k) = diff / var[k];
        logc[k] = std::log(p.weights[k]) - 0.5 * n * (kLog2Pi + std::log(var[k])) - 0.5 * sq / var[k];
    }
    const double mx = logc.maxCoeff();
    const double lse = mx + std::log((logc.array() - mx).exp().sum());
    mp.log_density = lse;
    mp.resp = (logc.array() - lse).exp().max(kRespFloor).matrix();
    mp.resp /= mp.resp.sum();
    mp.score = mp.grads * mp.resp;
    return mp;
}

Vector hess_vec(const MixturePoint& mp, const Vector& var, const Vector& v) {
    // H = sum_k r_k (g_k g_k^T - I/var_k) - gbar gbar^T
    Vector out = Vector::Zero(v.size());
    for (Eigen::Index k = 0; k < mp.resp.size(); ++k) {
        const double gv = mp.grads.col(k).dot(v);
        out += mp.resp[k] * (gv * mp.grads.col(k) - v / var[k]);
    }
    out -= mp.score * mp.score.dot(v);
    return out;
}

Vector marginal_variances(const GmmPrior& p, double alpha_bar) {
    return (alpha_bar * p.variances.array() + (1.0 - alpha_bar)).matrix();
}

void check_t(const DiffusionSchedule& sch, int t) {
    require(t >= 1 && t <= sch.steps(), "timestep " + std::to_string(t) + " outside [1, T]");
}

void check_x(const GmmPrior& p, const Vector& x) {
    require(x.size() == p.dim(), "vector length does not match prior dimension");
}

}  // namespace

GmmPrior::GmmPrior(Vector w, Matrix mu, Vector var)
    : weights(std::move(w)), means(std::move(mu)), variances(std::move(var)) {
    validate();
}

void GmmPrior::validate() const {
    require(weights.size() >= 1, "GmmPrior: need at least one component");
    require(means.cols() == weights.size() && variances.size() == weights.size(),
            "GmmPrior: weights, means and variances disagree on K");
    require(std::abs(weights.sum() - 1.0) <= 1e-12, "GmmPrior: weights must sum to 1");
    require((weights.array() >= 0.0).all(), "GmmPrior: negative weight");
    require((variances.array() > 0.0).all(), "GmmPrior: variances must be positive");
    require(means.allFinite(), "GmmPrior: non-finite mean");
}

GmmPrior GmmPrior::single_gaussian(const Vector& mean, double variance) {
    return GmmPrior(Vector::Ones(1), Matrix(mean), Vector::Constant(1, variance));
}

DiffusionSchedule::DiffusionSchedule(Vector alpha_bar) : alpha_bar_(std::move(alpha_bar)) {
    require(alpha_bar_.size() >= 2, "DiffusionSchedule: need at least one step");
    require(alpha_bar_[0] == 1.0, "DiffusionSchedule: alpha_bar(0) must be 1");
    for (Eigen::Index t = 1; t < alpha_bar_.size(); ++t)
        require(alpha_bar_[t] < alpha_bar_[t - 1] && alpha_bar_[t] > 0.0,
                "DiffusionSchedule: alpha_bar must be strictly decreasing and positive");
}

DiffusionSchedule DiffusionSchedule::respaced(int new_steps) const {
    require(new_steps >= 1 && new_steps <= steps(), "respaced: steps must lie in [1, T]");
    Vector ab(new_steps + 1);
    ab[0] = 1.0;
    for (int i = 1; i <= new_steps; ++i) {
        const int t = int((std::int64_t(i) * steps() + new_steps - 1) / new_steps);
        ab[i] = alpha_bar_[t];
    }
    return DiffusionSchedule(std::move(ab));
}

DiffusionSchedule make_schedule(int T, double beta_first, double beta_last) {
    require(T >= 1, "make_schedule: T must be >= 1");
    require(beta_first > 0.0 && beta_first <= beta_last && beta_last < 1.0,
            "make_schedule: need 0 < beta_first <= beta_last < 1");
    Vector ab(T + 1);
    ab[0] = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double beta = T == 1 ? beta_first : beta_first + (beta_last - beta_first) * double(t - 1) / (T - 1);
        ab[t] = ab[t - 1] * (1.0 - beta);
    }
    return DiffusionSchedule(std::move(ab));
}

double gmm_log_density(const GmmPrior& p, const Vector& x) {
    check_x(p, x);
    return eval_mixture(p, 1.0, p.variances, x).log_density;
}

Vector gmm_grad_log_density(const GmmPrior& p, const Vector& x) {
    check_x(p, x);
    return eval_mixture(p, 1.0, p.variances, x).score;
}

Vector gmm_hess_log_density_vec(const GmmPrior& p, const Vector& x, const Vector& v) {
    check_x(p, x);
    check_x(p, v);
    return hess_vec(eval_mixture(p, 1.0, p.variances, x), p.variances, v);
}

GmmPrior diffusion_marginal(const GmmPrior& p, double alpha_bar) {
    GmmPrior m = p;
    m.means *= std::sqrt(alpha_bar);
    m.variances = marginal_variances(p, alpha_bar);
    return m;
}

Vector gmm_eps_model(const GmmPrior& p, const DiffusionSchedule& sch, const Vector& x_t, int t) {
    check_t(sch, t);
    check_x(p, x_t);
    const double ab = sch.alpha_bar(t);
    const auto mp = eval_mixture(p, std::sqrt(ab), marginal_variances(p, ab), x_t);
    return -std::sqrt(1.0 - ab) * mp.score;
}

Vector gmm_posterior_mean(const GmmPrior& p, const DiffusionSchedule& sch, const Vector& x_t, int t) {
    check_t(sch, t);
    check_x(p, x_t);
    const double ab = sch.alpha_bar(t);
    const auto mp = eval_mixture(p, std::sqrt(ab), marginal_variances(p, ab), x_t);
    return (x_t + (1.0 - ab) * mp.score) / std::sqrt(ab);
}

Vector gmm_posterior_mean_jvp(const GmmPrior& p, const DiffusionSchedule& sch, const Vector& x_t, int t,
                              const Vector& v) {
    check_t(sch, t);
    check_x(p, x_t);
    check_x(p, v);
    const double ab = sch.alpha_bar(t);
    const Vector var = marginal_variances(p, ab);
    const auto mp = eval_mixture(p, std::sqrt(ab), var, x_t);
    return (v + (1.0 - ab) * hess_vec(mp, var, v)) / std::sqrt(ab);
}

Vector gmm_flow_denoise(const FlowPrior& fp, const Vector& x, double t) {
    const GmmPrior& p = fp.base;
    check_x(p, x);
    require(t >= 0.0 && t <= 1.0, "flow: t outside [0,1]");
    const Vector var = (t * t * p.variances.array() + (1.0 - t) * (1.0 - t)).matrix();
    const auto mp = eval_mixture(p, t, var, x);
    Vector out = Vector::Zero(x.size());
    for (int k = 0; k < p.components(); ++k) {
        const double gain = t * p.variances[k] / var[k];
        out += mp.resp[k] * (p.means.col(k) + gain * (x - t * p.means.col(k)));
    }
    return out;
}

Vector gmm_flow_velocity(const FlowPrior& fp, const Vector& x, double t) {
    require(t >= 0.0 && t < 1.0, "flow velocity: t must lie in [0,1)");
    return (gmm_flow_denoise(fp, x, t) - x) / (1.0 - t);
}

Vector gmm_sample(const GmmPrior& p, Rng& rng) {
    std::discrete_distribution<int> pick(p.weights.data(), p.weights.data() + p.weights.size());
    const int k = pick(rng);
    return p.means.col(k) + std::sqrt(p.variances[k]) * randn(p.dim(), rng);
}

EmResult fit_gmm_em_trace(const Matrix& samples, int K, int iters, std::uint64_t seed, double variance_floor) {
    const Eigen::Index n = samples.rows();
    const Eigen::Index N = samples.cols();
    require(N >= 1 && n >= 1, "fit_gmm_em: empty input");
    require(K >= 1 && N >= K, "fit_gmm_em: need at least K samples");
    require(iters >= 1, "fit_gmm_em: iters must be >= 1");

    // Init: K distinct samples as means, pooled variance, uniform weights.
    std::vector<Eigen::Index> idx(N);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    for (Eigen::Index i = 0; i < K; ++i) {
        std::uniform_int_distribution<Eigen::Index> pick(i, N - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    Matrix means(n, K);
    for (int k = 0; k < K; ++k) means.col(k) = samples.col(idx[k]);
    const Vector centre = samples.rowwise().mean();
    const double pooled = std::max((samples.colwise() - centre).squaredNorm() / double(n * N), variance_floor);

    GmmPrior p;
    p.weights = Vector::Constant(K, 1.0 / K);
    p.means = means;
    p.variances = Vector::Constant(K, pooled);

    EmResult res;
    Matrix resp(K, N);
    for (int it = 0; it < iters; ++it) {
        double ll = 0.0;
        for (Eigen::Index i = 0; i < N; ++i) {
            const auto mp = eval_mixture(p, 1.0, p.variances, samples.col(i));
            resp.col(i) = mp.resp;
            ll += mp.log_density;
        }
        res.log_likelihood.push_back(ll);

        const Vector nk = resp.rowwise().sum();
        for (int k = 0; k < K; ++k) {
            if (nk[k] <= 0.0) continue;
            p.means.col(k) = samples * resp.row(k).transpose() / nk[k];
            double ss = 0.0;
            for (Eigen::Index i = 0; i < N; ++i) ss += resp(k, i) * (samples.col(i) - p.means.col(k)).squaredNorm();
            p.variances[k] = std::max(ss / (nk[k] * double(n)), variance_floor);
        }
        p.weights = nk / nk.sum();
    }
    p.weights /= p.weights.sum();
    p.validate();
    res.prior = std::move(p);
    return res;
}

GmmPrior fit_gmm_em(const Matrix& samples, int K, int iters, std::uint64_t seed) {
    return fit_gmm_em_trace(samples, K, iters, seed).prior;
}

namespace {

void append_row(std::string& out, const double* v, Eigen::Index len) {
    char buf[32];
    for (Eigen::Index i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", v[i]);
        if (i) out += ',';
        out += buf;
    }
    out += '\n';
}

std::vector<double> parse_row(const std::string& line) {
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    return row;
}

}  // namespace

std::string gmm_to_csv(const GmmPrior& p) {
    std::string out = "#gmm K=" + std::to_string(p.components()) + " n=" + std::to_string(p.dim()) + "\n";
    append_row(out, p.weights.data(), p.weights.size());
    for (int k = 0; k < p.components(); ++k) {
        const Vector col = p.means.col(k);
        append_row(out, col.data(), col.size());
    }
    append_row(out, p.variances.data(), p.variances.size());
    return out;
}

GmmPrior gmm_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string header;
    std::getline(in, header);
    int K = 0;
    long n = 0;
    if (std::sscanf(header.c_str(), "#gmm K=%d n=%ld", &K, &n) != 2 || K < 1 || n < 1)
        throw InvalidInput("gmm csv: bad header '" + header + "'");
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) rows.push_back(parse_row(line));
    if (rows.size() != std::size_t(K) + 2) throw InvalidInput("gmm csv: expected K+2 data rows");
    auto to_vec = [](const std::vector<double>& r) { return Vector(Eigen::Map<const Vector>(r.data(), Eigen::Index(r.size()))); };
    if (rows.front().size() != std::size_t(K) || rows.back().size() != std::size_t(K))
        throw InvalidInput("gmm csv: weights/variances rows must have K entries");
    Matrix means(n, K);
    for (int k = 0; k < K; ++k) {
        if (rows[k + 1].size() != std::size_t(n)) throw InvalidInput("gmm csv: mean row length != n");
        means.col(k) = to_vec(rows[k + 1]);
    }
    return GmmPrior(to_vec(rows.front()), std::move(means), to_vec(rows.back()));
}

void save_gmm(const GmmPrior& p, const std::string& path) { io::write_file_atomic(path, gmm_to_csv(p)); }

GmmPrior load_gmm(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return gmm_from_csv(ss.str());
}

void EllipseSceneParams::validate() const {
    require(max_ellipses >= 0, "ellipses: max_ellipses must be >= 0");
    require(image_size >= 1, "ellipses: image_size must be >= 1");
    require(intensity_min <= intensity_max, "ellipses: bad intensity range");
    require(eccentricity_min > 0.0 && eccentricity_min <= eccentricity_max && eccentricity_max <= 1.0,
            "ellipses: bad eccentricity range");
    require(axis_min_frac > 0.0 && axis_min_frac <= axis_max_frac, "ellipses: bad axis range");
}

EllipseScene generate_ellipse_scene(const EllipseSceneParams& params, Rng& rng) {
    params.validate();
    const int n = params.image_size;
    const double radius = 0.5 * n;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> count_dist(0, params.max_ellipses);

    EllipseScene scene;
    const int count = count_dist(rng);
    for (int e = 0; e < count; ++e) {
        Ellipse el{};
        const double r = radius * std::sqrt(unit(rng));
        const double phi = 2.0 * std::numbers::pi * unit(rng);
        el.cx = r * std::cos(phi);
        el.cy = r * std::sin(phi);
        const double axis = n * (params.axis_min_frac + (params.axis_max_frac - params.axis_min_frac) * unit(rng));
        el.semi_major = 0.5 * axis;
        el.semi_minor = el.semi_major *
                        (params.eccentricity_min + (params.eccentricity_max - params.eccentricity_min) * unit(rng));
        el.angle = std::numbers::pi * unit(rng);
        el.intensity = params.intensity_min + (params.intensity_max - params.intensity_min) * unit(rng);
        scene.ellipses.push_back(el);
    }

    Image img(n, n);
    const double centre = 0.5 * (n - 1);
    for (const auto& el : scene.ellipses) {
        const double c = std::cos(el.angle), s = std::sin(el.angle);
        for (int row = 0; row < n; ++row)
            for (int col = 0; col < n; ++col) {
                const double dx = (col - centre) - el.cx, dy = (row - centre) - el.cy;
                const double u = dx * c + dy * s, v = -dx * s + dy * c;
                if ((u * u) / (el.semi_major * el.semi_major) + (v * v) / (el.semi_minor * el.semi_minor) <= 1.0)
                    img(row, col) += el.intensity;
            }
    }
    img.data = img.data.cwiseMax(0.0).cwiseMin(1.0);
    scene.image = std::move(img);
    return scene;
}

Image generate_ellipse_image(const EllipseSceneParams& params, Rng& rng) {
    return generate_ellipse_scene(params, rng).image;
}

}  // namespace invbench::priors

#include "invbench/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>
#include <tuple>

#include "json.hpp"

#include "invbench/diffusion.hpp"
#include "invbench/pnpflow.hpp"
#include "invbench/variational.hpp"

namespace invbench::bench {

using linops::OperatorPtr;
using linops::Shape;

Vector add_noise(const Vector& y_clean, const metrics::NoiseModel& nm, Rng& rng) {
    require(nm.level >= 0.0 && std::isfinite(nm.level), "add_noise: level must be >= 0");
    if (nm.level == 0.0) return y_clean;
    const Vector eta = randn(y_clean.size(), rng);
    if (nm.kind == metrics::NoiseKind::gaussian) return y_clean + nm.level * eta;
    return y_clean + nm.level * (y_clean.cwiseAbs().cwiseSqrt().cwiseProduct(eta));
}

linops::RadonGeometry perturb_angles(const linops::RadonGeometry& geom, double max_deg, Rng& rng) {
    require(max_deg >= 0.0 && std::isfinite(max_deg), "perturb_angles: max_deg must be >= 0");
    linops::RadonGeometry out = geom;
    if (max_deg == 0.0) return out;
    std::uniform_real_distribution<double> u(-max_deg, max_deg);
    for (double& a : out.angles_deg) a += u(rng);
    return out;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::uint64_t h, std::string_view s) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    // field separator so ("ab","c") and ("a","bc") differ
    h ^= 0xff;
    h *= 0x100000001b3ULL;
    return h;
}

std::uint64_t fnv1a_u64(std::uint64_t h, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xff;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::string_view problem, std::string_view solver,
                          std::uint64_t grid_index, std::uint64_t realization) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    h = fnv1a_u64(h, master);
    h = fnv1a(h, problem);
    h = fnv1a(h, solver);
    h = fnv1a_u64(h, grid_index);
    h = fnv1a_u64(h, realization);
    return splitmix64(h);
}

// ---------------------------------------------------------------------------
// Problems and solvers

OperatorPtr build_operator(const OperatorConfig& c, std::uint64_t seed) {
    require(c.image_size >= 1, "operator: image_size must be positive");
    const Shape s{c.image_size, c.image_size};
    if (c.kind == "identity") return linops::make_identity(s);
    if (c.kind == "radon") return linops::make_radon(linops::RadonGeometry::uniform(c.image_size, c.n_angles, c.n_detectors));
    if (c.kind == "mask") return linops::make_random_mask(s, c.missing_fraction, seed);
    if (c.kind == "blur") return linops::make_blur(s, linops::gaussian_kernel(c.blur_sigma));
    if (c.kind == "motion_blur") return linops::make_blur(s, linops::motion_blur_kernel(c.motion_length, c.motion_angle));
    if (c.kind == "downsample") return linops::make_downsample(s, c.factor);
    throw InvalidInput("unknown operator kind '" + c.kind + "'");
}

void ProblemSpec::validate() const {
    require(!id.empty(), "problem: empty id");
    require(sigma >= 0.0 && std::isfinite(sigma), "problem " + id + ": sigma must be >= 0");
    require(angle_perturb_deg >= 0.0, "problem " + id + ": angle perturbation must be >= 0");
    require(angle_perturb_deg == 0.0 || op.kind == "radon", "problem " + id + ": angle perturbation needs a radon operator");
    require(truth != TruthKind::gmm || !truth_prior.empty(), "problem " + id + ": gmm truth needs a prior id");
    require(truth != TruthKind::file || !image_path.empty(), "problem " + id + ": file truth needs a path");
}

const std::vector<std::string>& known_methods() {
    static const std::vector<std::string> m{"fbp", "tv", "smooth_reg", "dps", "diffpir", "reddiff", "dmplug", "pnpflow"};
    return m;
}

void SolverSpec::validate() const {
    require(!id.empty(), "solver: empty id");
    const auto& m = known_methods();
    require(std::find(m.begin(), m.end(), method) != m.end(), "solver " + id + ": unknown method '" + method + "'");
    const bool needs_prior = method == "dps" || method == "diffpir" || method == "reddiff" || method == "dmplug" ||
                             method == "pnpflow" || (method == "smooth_reg" && params.count("reg") &&
                                                     params.at("reg") == "gmm_neglog");
    require(!needs_prior || !prior.empty(), "solver " + id + ": method '" + method + "' needs a prior");
    for (const auto& [k, vals] : grid) require(!vals.empty(), "solver " + id + ": empty grid for '" + k + "'");
}

namespace {

double num(const Params& p, const std::string& key, double def) {
    auto it = p.find(key);
    if (it == p.end()) return def;
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(it->second, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    require(used == it->second.size() && used > 0, "parameter '" + key + "' is not a number: '" + it->second + "'");
    return v;
}

int inum(const Params& p, const std::string& key, int def) {
    const double v = num(p, key, def);
    require(v == std::floor(v) && std::abs(v) < 1e9, "parameter '" + key + "' must be an integer");
    return int(v);
}

std::string text(const Params& p, const std::string& key, const std::string& def) {
    auto it = p.find(key);
    return it == p.end() ? def : it->second;
}

bool flag(const Params& p, const std::string& key, bool def) {
    const auto v = text(p, key, def ? "true" : "false");
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw InvalidInput("parameter '" + key + "' must be a boolean");
}

const priors::DiffusionSchedule& default_schedule() {
    static const priors::DiffusionSchedule s = priors::make_schedule(1000, 1e-4, 0.02);
    return s;
}

std::shared_ptr<const priors::GmmPrior> lookup_prior(const std::string& id, const PriorRegistry& reg) {
    auto it = reg.find(id);
    require(it != reg.end() && it->second, "unknown prior '" + id + "'");
    return it->second;
}

// FBP for tomography, A^T y otherwise.
Vector initial_guess(const Instance& inst) {
    if (const auto* g = linops::radon_geometry(*inst.A)) {
        const Sinogram sino(int(g->angles_deg.size()), g->n_detectors, inst.y);
        return linops::fbp(sino, *g, linops::FbpFilter::ramp).data;
    }
    return inst.A->adjoint(inst.y);
}

double clock_ms(std::chrono::steady_clock::time_point a, std::chrono::steady_clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
}

}  // namespace

Instance make_instance(const ProblemSpec& p, const PriorRegistry& priors, std::uint64_t op_seed,
                       std::uint64_t truth_seed, std::uint64_t noise_seed) {
    p.validate();
    Instance inst;
    inst.A = build_operator(p.op, op_seed);
    inst.A_data = inst.A;
    const Shape shape = inst.A->in_shape();

    Rng trng(truth_seed);
    switch (p.truth) {
        case TruthKind::ellipses: {
            auto ep = p.ellipses;
            ep.image_size = p.op.image_size;
            inst.x_true = priors::generate_ellipse_image(ep, trng).data;
            break;
        }
        case TruthKind::gmm: {
            const auto prior = lookup_prior(p.truth_prior, priors);
            require(prior->dim() == shape.size(), "problem " + p.id + ": truth prior dimension does not match the image");
            inst.x_true = priors::gmm_sample(*prior, trng);
            if (p.clip_truth) inst.x_true = inst.x_true.cwiseMax(0.0).cwiseMin(1.0);
            break;
        }
        case TruthKind::file: {
            const bool csv = p.image_path.size() >= 4 && p.image_path.substr(p.image_path.size() - 4) == ".csv";
            const Image img = csv ? io::read_image_csv(p.image_path) : io::read_pgm(p.image_path);
            require(img.width == shape.cols && img.height == shape.rows,
                    "problem " + p.id + ": image file size does not match image_size");
            inst.x_true = img.data;
            break;
        }
    }

    Rng nrng(noise_seed);
    if (p.angle_perturb_deg > 0.0) {
        const auto* g = linops::radon_geometry(*inst.A);
        require(g != nullptr, "angle perturbation needs a radon operator");
        inst.A_data = linops::make_radon(perturb_angles(*g, p.angle_perturb_deg, nrng));
    }
    const Vector y_clean = inst.A_data->apply(inst.x_true);
    inst.sigma_nominal = p.sigma;
    inst.noise = p.noise == metrics::NoiseKind::gaussian ? metrics::NoiseModel{metrics::NoiseKind::gaussian, p.sigma}
                                                          : metrics::matched_signal_dependent(p.sigma, y_clean);
    inst.y = add_noise(y_clean, inst.noise, nrng);
    return inst;
}

Instance realize(const ProblemSpec& p, const PriorRegistry& priors, std::uint64_t master, std::uint64_t image,
                 std::uint64_t draw) {
    return make_instance(p, priors, derive_seed(master, p.id, "operator", 0, 0),
                         derive_seed(master, p.id, "truth", 0, image), derive_seed(master, p.id, "noise", image, draw));
}

Vector run_solver(const SolverSpec& s, const Params& P, const Instance& inst, const PriorRegistry& priors,
                  std::uint64_t seed) {
    const auto& A = *inst.A;
    const Vector& y = inst.y;
    Rng rng(seed);
    const auto& m = s.method;

    if (m == "fbp") {
        const auto* g = linops::radon_geometry(A);
        require(g != nullptr, "fbp needs a radon operator");
        const Sinogram sino(int(g->angles_deg.size()), g->n_detectors, y);
        return linops::fbp(sino, *g, linops::parse_fbp_filter(text(P, "filter", "ramp"))).data;
    }
    if (m == "tv") {
        variational::PdParams pd;
        pd.max_iters = inum(P, "max_iters", 2000);
        pd.rel_tol = num(P, "tol", 1e-6);
        pd.data_step = variational::parse_data_step(text(P, "data_step", "prox"));
        pd.tau = num(P, "tau", 0.0);
        pd.prox.tol = num(P, "cg_tol", 1e-6);
        const Vector x0 = initial_guess(inst);
        return variational::solve_tv(y, A, num(P, "lambda", 1e-3), pd, &x0).x;
    }
    if (m == "smooth_reg") {
        const auto kind = variational::parse_reg_kind(text(P, "reg", "tikhonov_gradient"));
        require(kind != variational::RegKind::tv, "smooth_reg: use the tv method for total variation");
        const auto R = kind == variational::RegKind::gmm_neglog
                           ? variational::Regularizer(lookup_prior(s.prior, priors), A.in_shape())
                           : variational::Regularizer(kind, A.in_shape());
        variational::AgdParams ap;
        ap.max_iters = inum(P, "max_iters", 1000);
        ap.rel_tol = num(P, "tol", 1e-8);
        return variational::solve_smooth(y, A, num(P, "lambda", 1e-3), R, ap, initial_guess(inst)).x;
    }

    const auto prior = lookup_prior(s.prior, priors);
    require(prior->dim() == A.in_size(), "solver " + s.id + ": prior dimension does not match the image");
    if (m == "pnpflow") {
        pnpflow::PnpFlowConfig c;
        c.gamma = num(P, "gamma", 1.0);
        c.steps = inum(P, "N", 100);
        c.realizations = inum(P, "K", 5);
        c.alpha = num(P, "alpha", 1.0);
        c.variant = pnpflow::parse_variant(text(P, "variant", "implicit"));
        c.prox.tol = num(P, "cg_tol", 1e-8);
        c.prox.max_iters = inum(P, "cg_iters", 300);
        c.prox.strict = flag(P, "cg_strict", false);
        return pnpflow::pnpflow(y, A, priors::FlowPrior{*prior}, c, rng, initial_guess(inst));
    }

    const diffusion::EpsModel model(prior, default_schedule());
    if (m == "dps") {
        diffusion::DpsConfig c;
        c.gamma = num(P, "gamma", 1.0);
        c.steps = inum(P, "steps", 1000);
        return diffusion::dps(y, A, inst.sigma_nominal, model, c, rng);
    }
    if (m == "diffpir") {
        diffusion::DiffPirConfig c;
        c.lambda = num(P, "lambda", 1.0);
        c.zeta = num(P, "zeta", 0.5);
        c.steps = inum(P, "steps", 1000);
        c.rho_rule = diffusion::parse_rho_rule(text(P, "rho_rule", "eq_form"));
        c.prox.tol = num(P, "cg_tol", 1e-8);
        c.prox.max_iters = inum(P, "cg_iters", 300);
        c.prox.strict = flag(P, "cg_strict", false);
        return diffusion::diffpir(y, A, inst.sigma_nominal, model, c, rng);
    }
    if (m == "reddiff") {
        diffusion::RedDiffConfig c;
        c.gamma = num(P, "gamma", 1.0);
        c.lambda = num(P, "lambda", 0.1);
        c.step_size = num(P, "lr", 0.05);
        c.steps = inum(P, "steps", 1000);
        return diffusion::reddiff(y, A, model, c, initial_guess(inst), rng);
    }
    if (m == "dmplug") {
        diffusion::DmPlugConfig c;
        c.unroll_steps = inum(P, "K", 4);
        c.step_size = num(P, "lr", 0.01);
        c.max_iters = inum(P, "max_iters", 1500);
        c.early_stopping = flag(P, "early_stopping", true);
        c.es_window = inum(P, "es_window", 50);
        c.es_patience = inum(P, "es_patience", 100);
        return diffusion::dmplug(y, A, model, c, rng);
    }
    throw InvalidInput("unknown method '" + m + "'");
}

// ---------------------------------------------------------------------------
// Harness

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& task) {
    const std::size_t workers = std::min<std::size_t>(n, std::size_t(std::max(1, jobs)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) task(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    task(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!first) first = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (first) std::rethrow_exception(first);
}

std::vector<Params> expand_grid(const SolverSpec& s) {
    std::vector<Params> out{s.params};
    for (const auto& [key, values] : s.grid) {
        std::vector<Params> next;
        next.reserve(out.size() * values.size());
        for (const auto& base : out)
            for (const auto& v : values) {
                Params q = base;
                q[key] = v;
                next.push_back(std::move(q));
            }
        out = std::move(next);
    }
    return out;
}

namespace {

nlohmann::ordered_json params_object(const Params& p) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [k, v] : p) {
        char* end = nullptr;
        const double d = std::strtod(v.c_str(), &end);
        if (!v.empty() && end == v.c_str() + v.size() && std::isfinite(d))
            j[k] = d;
        else
            j[k] = v;
    }
    return j;
}

std::string record_json(const Params& p, const ProblemSpec& prob, const SolverSpec& s, const std::string& error) {
    auto j = params_object(p);
    j["method"] = s.method;
    if (!s.prior.empty()) j["prior"] = s.prior;
    j["truth"] = prob.truth == TruthKind::gmm ? "gmm:" + prob.truth_prior
                 : prob.truth == TruthKind::file ? "file:" + prob.image_path
                                                 : std::string("ellipses");
    j["sigma"] = prob.sigma;
    if (!error.empty()) j["error"] = error;
    return j.dump();
}

struct Job {
    std::size_t solver = 0;
    std::size_t grid_index = 0;
    std::size_t realization_slot = 0;
    const Params* params = nullptr;
};

RunRecord run_one(const ProblemSpec& prob, const SolverSpec& s, const Params& params, std::size_t grid_index,
                  std::uint64_t realization, const Instance& inst, const Context& ctx) {
    RunRecord r;
    r.problem = prob.id;
    r.solver = s.id;
    r.seed = derive_seed(ctx.master_seed, prob.id, s.id, grid_index, realization);
    r.realization = realization;
    r.grid_index = grid_index;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        const Vector x = run_solver(s, params, inst, *ctx.priors, r.seed);
        if (!x.allFinite()) throw SolverFailure("non-finite reconstruction");
        r.metrics = metrics::evaluate(x, inst.x_true, inst.y, *inst.A, inst.noise);
    } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
        r.metrics.psnr = r.metrics.ssim = std::numeric_limits<double>::quiet_NaN();
        r.metrics.dc.reset();
    }
    r.wall_ms = clock_ms(t0, std::chrono::steady_clock::now());
    r.params_json = record_json(params, prob, s, r.error);
    return r;
}

bool record_less(const RunRecord& a, const RunRecord& b) {
    return std::tie(a.problem, a.solver, a.grid_index, a.realization) <
           std::tie(b.problem, b.solver, b.grid_index, b.realization);
}

std::vector<Instance> make_instances(const ProblemSpec& p, const std::vector<std::uint64_t>& realizations,
                                     std::uint64_t draw_base, const Context& ctx) {
    std::vector<Instance> inst(realizations.size());
    parallel_for(realizations.size(), ctx.jobs,
                 [&](std::size_t i) { inst[i] = realize(p, *ctx.priors, ctx.master_seed, realizations[i], draw_base); });
    return inst;
}

void check_context(const Context& ctx) { require(ctx.priors != nullptr, "bench: context has no prior registry"); }

// Runs solver/parameter pairs over shared instances.
std::vector<RunRecord> run_grid(const ProblemSpec& p, const std::vector<const SolverSpec*>& solvers,
                                const std::vector<std::vector<Params>>& params,
                                const std::vector<std::vector<std::size_t>>& grid_ids,
                                const std::vector<std::uint64_t>& realizations, const std::vector<Instance>& inst,
                                const Context& ctx) {
    std::vector<Job> jobs;
    for (std::size_t s = 0; s < solvers.size(); ++s)
        for (std::size_t g = 0; g < params[s].size(); ++g)
            for (std::size_t r = 0; r < realizations.size(); ++r) jobs.push_back({s, grid_ids[s][g], r, &params[s][g]});
    std::vector<RunRecord> out(jobs.size());
    parallel_for(jobs.size(), ctx.jobs, [&](std::size_t i) {
        const Job& j = jobs[i];
        out[i] = run_one(p, *solvers[j.solver], *j.params, j.grid_index, realizations[j.realization_slot],
                         inst[j.realization_slot], ctx);
    });
    std::stable_sort(out.begin(), out.end(), record_less);
    return out;
}

double mean_of(const std::vector<double>& v) {
    std::vector<double> s = v;
    std::sort(s.begin(), s.end());
    double acc = 0.0;
    for (double x : s) acc += x;
    return s.empty() ? std::numeric_limits<double>::quiet_NaN() : acc / double(s.size());
}

double sd_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    // Shifting by the minimum makes identical values give exactly zero.
    const double lo = *std::min_element(v.begin(), v.end());
    std::vector<double> c;
    c.reserve(v.size());
    for (double x : v) c.push_back(x - lo);
    const double m = mean_of(c);
    std::vector<double> d;
    d.reserve(v.size());
    for (double x : c) d.push_back((x - m) * (x - m));
    std::sort(d.begin(), d.end());
    double acc = 0.0;
    for (double x : d) acc += x;
    return std::sqrt(acc / double(v.size() - 1));
}

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_short(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

}  // namespace

std::string params_to_json(const Params& p) { return params_object(p).dump(); }

GridResult grid_search(const ProblemSpec& p, const SolverSpec& s, int n_val, const Context& ctx, bool report_all) {
    check_context(ctx);
    require(n_val >= 1, "grid_search: need at least one validation seed");
    s.validate();
    const auto grid = expand_grid(s);
    require(!grid.empty(), "grid_search: empty grid");

    std::vector<std::uint64_t> real(n_val);
    std::iota(real.begin(), real.end(), kValidationBase);
    const auto inst = make_instances(p, real, 0, ctx);
    std::vector<std::size_t> ids(grid.size());
    std::iota(ids.begin(), ids.end(), 0);
    auto records = run_grid(p, {&s}, {grid}, {ids}, real, inst, ctx);

    GridResult res;
    std::vector<std::vector<double>> psnrs(grid.size());
    for (const auto& r : records)
        if (r.ok && std::isfinite(r.metrics.psnr)) psnrs[r.grid_index].push_back(r.metrics.psnr);

    int best_ok = 0;
    double best_mean = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        GridRow row;
        row.index = g;
        row.params = grid[g];
        row.n_ok = int(psnrs[g].size());
        row.mean_psnr = mean_of(psnrs[g]);
        row.sd_psnr = sd_of(psnrs[g]);
        res.table.push_back(row);
        if (row.n_ok == 0) continue;
        // Points that fail on some validation seed rank below points that never fail.
        if (!any || row.n_ok > best_ok || (row.n_ok == best_ok && row.mean_psnr > best_mean)) {
            any = true;
            best_ok = row.n_ok;
            best_mean = row.mean_psnr;
            res.best_index = g;
        }
    }
    if (!any) {
        std::string why = records.empty() ? "" : ": " + records.front().error;
        throw SolverFailure("grid_search: every run of solver '" + s.id + "' on '" + p.id + "' failed" + why);
    }
    res.best = grid[res.best_index];
    if (report_all) res.records = std::move(records);
    return res;
}

std::vector<RunRecord> run_experiment(const ProblemSpec& p, const std::vector<SolverSpec>& solvers,
                                      const std::vector<std::uint64_t>& realizations, const Context& ctx) {
    check_context(ctx);
    if (solvers.empty() || realizations.empty()) return {};
    for (const auto& s : solvers) s.validate();
    const auto inst = make_instances(p, realizations, 0, ctx);
    std::vector<const SolverSpec*> ptrs;
    std::vector<std::vector<Params>> params;
    std::vector<std::vector<std::size_t>> ids;
    for (const auto& s : solvers) {
        ptrs.push_back(&s);
        params.push_back({s.params});
        ids.push_back({0});
    }
    return run_grid(p, ptrs, params, ids, realizations, inst, ctx);
}

namespace {

struct Tuned {
    std::vector<SolverSpec> solvers;
    std::vector<std::size_t> grid_index;
};

Tuned tune(const ProblemSpec& p, const std::vector<SolverSpec>& solvers, int n_val, const Context& ctx) {
    Tuned t;
    for (const auto& s : solvers) {
        SolverSpec fixed = s;
        std::size_t idx = 0;
        if (!s.grid.empty()) {
            const auto g = grid_search(p, s, n_val, ctx);
            fixed.params = g.best;
            idx = g.best_index;
        }
        fixed.grid.clear();
        t.solvers.push_back(std::move(fixed));
        t.grid_index.push_back(idx);
    }
    return t;
}

std::vector<RunRecord> run_tuned(const ProblemSpec& p, const Tuned& t, int n_test, const Context& ctx) {
    if (t.solvers.empty() || n_test <= 0) return {};
    std::vector<std::uint64_t> real(n_test);
    std::iota(real.begin(), real.end(), 0);
    const auto inst = make_instances(p, real, 0, ctx);
    std::vector<const SolverSpec*> ptrs;
    std::vector<std::vector<Params>> params;
    std::vector<std::vector<std::size_t>> ids;
    for (std::size_t i = 0; i < t.solvers.size(); ++i) {
        ptrs.push_back(&t.solvers[i]);
        params.push_back({t.solvers[i].params});
        ids.push_back({t.grid_index[i]});
    }
    return run_grid(p, ptrs, params, ids, real, inst, ctx);
}

}  // namespace

std::vector<RunRecord> tune_and_run(const ProblemSpec& p, const std::vector<SolverSpec>& solvers, int n_val, int n_test,
                                    const Context& ctx) {
    check_context(ctx);
    require(n_test >= 0, "tune_and_run: negative test count");
    return run_tuned(p, tune(p, solvers, n_val, ctx), n_test, ctx);
}

SweepResult sweep_noise_to_zero(const ProblemSpec& p, const std::vector<SolverSpec>& solvers,
                                const std::vector<double>& sigmas, int n_val, int n_test, const Context& ctx) {
    require(!sigmas.empty(), "sweep: empty sigma list");
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
        require(sigmas[i] >= 0.0, "sweep: sigma must be >= 0");
        require(i == 0 || sigmas[i] < sigmas[i - 1], "sweep: sigma list must be strictly decreasing");
    }
    SweepResult res;
    for (const auto& s : solvers) res.curves.push_back({p.id, s.id, {}});
    for (double sigma : sigmas) {
        // Same id for every level keeps truths and solver seeds shared across the curve.
        ProblemSpec q = p;
        q.sigma = sigma;
        auto recs = tune_and_run(q, solvers, n_val, n_test, ctx);
        for (auto& r : recs) r.problem = p.id + "@sigma=" + fmt_short(sigma);
        for (std::size_t k = 0; k < solvers.size(); ++k) {
            std::vector<double> v;
            for (const auto& r : recs)
                if (r.solver == solvers[k].id && r.ok) v.push_back(r.metrics.psnr);
            res.curves[k].points.emplace_back(sigma, mean_of(v));
        }
        res.records.insert(res.records.end(), recs.begin(), recs.end());
    }
    return res;
}

std::vector<StabilityRow> summarize_stability(const std::vector<RunRecord>& records, int n_realizations) {
    require(n_realizations >= 1, "summarize_stability: n_realizations must be >= 1");
    using Key = std::pair<std::string, std::string>;
    // metric -> image -> values
    std::map<Key, std::map<std::string, std::map<std::uint64_t, std::vector<double>>>> groups;
    for (const auto& r : records) {
        if (!r.ok) continue;
        auto& g = groups[{r.problem, r.solver}];
        const std::uint64_t img = r.realization / std::uint64_t(n_realizations);
        g["psnr"][img].push_back(r.metrics.psnr);
        g["ssim"][img].push_back(r.metrics.ssim);
        if (r.metrics.dc) g["dc"][img].push_back(*r.metrics.dc);
    }
    std::vector<StabilityRow> out;
    for (const auto& [key, metrics_map] : groups)
        for (const char* name : {"psnr", "ssim", "dc"}) {
            auto it = metrics_map.find(name);
            if (it == metrics_map.end()) continue;
            StabilityRow row{key.first, key.second, name, 0.0, 0.0, 0.0};
            std::vector<double> all, sds;
            for (const auto& [img, vals] : it->second) {
                all.insert(all.end(), vals.begin(), vals.end());
                sds.push_back(sd_of(vals));
            }
            row.mean = mean_of(all);
            row.avg_sd = mean_of(sds);
            row.max_sd = *std::max_element(sds.begin(), sds.end());
            out.push_back(row);
        }
    return out;
}

StabilityResult stability_over_noise(const ProblemSpec& p, const SolverSpec& s, int n_realizations, int n_images,
                                     const Context& ctx) {
    check_context(ctx);
    require(n_realizations >= 2, "stability: need at least two noise realizations");
    require(n_images >= 1, "stability: need at least one image");
    s.validate();
    const std::size_t total = std::size_t(n_realizations) * std::size_t(n_images);
    std::vector<std::uint64_t> real(total);
    std::iota(real.begin(), real.end(), 0);
    std::vector<Instance> inst(total);
    parallel_for(total, ctx.jobs, [&](std::size_t i) {
        inst[i] = realize(p, *ctx.priors, ctx.master_seed, i / std::size_t(n_realizations), i % std::size_t(n_realizations));
    });
    StabilityResult res;
    res.records = run_grid(p, {&s}, {{s.params}}, {{0}}, real, inst, ctx);
    res.summary = summarize_stability(res.records, n_realizations);
    return res;
}

std::vector<RunRecord> mismatch_study(const ProblemSpec& p, const std::vector<SolverSpec>& solvers, double max_deg,
                                      int n_val, int n_test, const Context& ctx) {
    check_context(ctx);
    const Tuned t = tune(p, solvers, n_val, ctx);
    std::vector<ProblemSpec> variants{p};
    if (p.op.kind == "radon") {
        ProblemSpec a = p;
        a.id = p.id + "+angles";
        a.angle_perturb_deg = max_deg;
        variants.push_back(a);
    }
    ProblemSpec sd = p;
    sd.id = p.id + "+sdnoise";
    sd.noise = metrics::NoiseKind::signal_dependent;
    variants.push_back(sd);

    std::vector<RunRecord> out;
    for (const auto& v : variants) {
        // Same truths as the matched problem: realize() keys seeds by id, so pin them to p.id.
        ProblemSpec keyed = v;
        keyed.id = p.id;
        auto recs = run_tuned(keyed, t, n_test, ctx);
        for (auto& r : recs) r.problem = v.id;
        out.insert(out.end(), recs.begin(), recs.end());
    }
    return out;
}

std::vector<SummaryRow> summarize(const std::vector<RunRecord>& records) {
    std::map<std::pair<std::string, std::string>, std::vector<const RunRecord*>> g;
    for (const auto& r : records) g[{r.problem, r.solver}].push_back(&r);
    std::vector<SummaryRow> out;
    for (const auto& [key, rs] : g) {
        SummaryRow row{key.first, key.second, 0, 0.0, 0.0, std::nullopt};
        std::vector<double> ps, ss, dc;
        bool all_dc = true;
        for (const auto* r : rs) {
            if (!r->ok) continue;
            ps.push_back(r->metrics.psnr);
            ss.push_back(r->metrics.ssim);
            if (r->metrics.dc)
                dc.push_back(*r->metrics.dc);
            else
                all_dc = false;
        }
        row.n = int(ps.size());
        row.mean_psnr = mean_of(ps);
        row.mean_ssim = mean_of(ss);
        if (all_dc && !dc.empty()) row.mean_dc = mean_of(dc);
        out.push_back(row);
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string num_field(double v) { return std::isfinite(v) ? fmt_g(v) : std::string(); }

std::vector<std::vector<std::string>> parse_csv_rows(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false, at_start = true;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"' && field.empty()) {
            quoted = true;
            at_start = false;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
            at_start = false;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            if (!(at_start && row.empty() && field.empty())) {
                row.push_back(std::move(field));
                rows.push_back(std::move(row));
            }
            row.clear();
            field.clear();
            at_start = true;
        } else {
            field += c;
            at_start = false;
        }
    }
    if (quoted) throw InvalidInput("csv: unterminated quoted field");
    if (!at_start || !field.empty() || !row.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

double parse_num_or_nan(const std::string& s) {
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    require(used == s.size(), "csv: bad number '" + s + "'");
    return v;
}

const char* kHeader = "problem,solver,params,seed,psnr,ssim,dc,wall_ms";

}  // namespace

std::string records_to_csv(const std::vector<RunRecord>& records) {
    std::ostringstream os;
    os << kHeader << "\n";
    for (const auto& r : records) {
        os << csv_field(r.problem) << ',' << csv_field(r.solver) << ',' << csv_field(r.params_json) << ',' << r.seed
           << ',' << (r.ok ? num_field(r.metrics.psnr) : "") << ',' << (r.ok ? num_field(r.metrics.ssim) : "") << ','
           << (r.metrics.dc ? num_field(*r.metrics.dc) : "") << ',' << num_field(r.wall_ms) << "\n";
    }
    return os.str();
}

void emit_csv(const std::vector<RunRecord>& records, const std::string& path) {
    io::write_file_atomic(path, records_to_csv(records));
}

std::vector<RunRecord> parse_results_csv(const std::string& text) {
    const auto rows = parse_csv_rows(text);
    require(!rows.empty(), "results csv: missing header");
    std::string header;
    for (std::size_t i = 0; i < rows[0].size(); ++i) header += (i ? "," : "") + rows[0][i];
    require(header == kHeader, "results csv: unexpected header '" + header + "'");
    std::vector<RunRecord> out;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& f = rows[i];
        require(f.size() == 8, "results csv: row " + std::to_string(i) + " has " + std::to_string(f.size()) + " fields");
        RunRecord r;
        r.problem = f[0];
        r.solver = f[1];
        r.params_json = f[2];
        r.seed = std::stoull(f[3]);
        r.metrics.psnr = parse_num_or_nan(f[4]);
        r.metrics.ssim = parse_num_or_nan(f[5]);
        if (!f[6].empty()) r.metrics.dc = parse_num_or_nan(f[6]);
        r.wall_ms = parse_num_or_nan(f[7]);
        r.ok = !f[4].empty();
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<RunRecord> read_results_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_results_csv(ss.str());
}

void write_plot_data(const std::vector<std::pair<double, double>>& pts, const std::string& path) {
    std::ostringstream os;
    os << "x,y\n";
    for (const auto& [x, y] : pts) os << fmt_g(x) << ',' << num_field(y) << "\n";
    io::write_file_atomic(path, os.str());
}

}  // namespace invbench::bench

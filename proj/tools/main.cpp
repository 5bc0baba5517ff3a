// invbench command-line driver.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "invbench/bench.hpp"
#include "invbench/image.hpp"
#include "invbench/linops.hpp"
#include "invbench/priors.hpp"
#include "invbench/spec_file.hpp"

namespace fs = std::filesystem;
using namespace invbench;

namespace {

constexpr const char* kOutEnv = "INVBENCH_OUT_DIR";

// Missing/unreadable inputs and bad flag combinations detected after CLI11 parsing.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string out;
    int jobs = 1;
};

std::string resolve_out(const Globals& g, const std::string& default_name) {
    fs::path p;
    if (!g.out.empty()) {
        p = g.out;
    } else {
        const char* env = std::getenv(kOutEnv);
        p = fs::path(env && *env ? env : ".") / default_name;
    }
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    return p.string();
}

std::uint64_t need_seed(const Globals& g) {
    if (!g.seed) throw UsageError("--seed is required (no implicit entropy source)");
    return *g.seed;
}

// "<dir>/<stem><suffix>" next to `path`.
std::string sibling(const std::string& path, const std::string& suffix) {
    const fs::path p(path);
    return (p.parent_path() / (p.stem().string() + suffix)).string();
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

void print_summary(const std::vector<bench::RunRecord>& recs) {
    std::printf("%-28s %-14s %4s %9s %7s %9s\n", "problem", "solver", "n", "psnr", "ssim", "dc");
    for (const auto& r : bench::summarize(recs))
        std::printf("%-28s %-14s %4d %9.3f %7.4f %9s\n", r.problem.c_str(), r.solver.c_str(), r.n, r.mean_psnr,
                    r.mean_ssim, r.mean_dc ? fmt(*r.mean_dc).c_str() : "-");
}

void write_summary_csv(const std::vector<bench::RunRecord>& recs, const std::string& path) {
    std::string s = "problem,solver,n,mean_psnr,mean_ssim,mean_dc\n";
    for (const auto& r : bench::summarize(recs)) {
        char buf[256];
        std::snprintf(buf, sizeof buf, ",%d,%.17g,%.17g,", r.n, r.mean_psnr, r.mean_ssim);
        s += r.problem + "," + r.solver + buf + (r.mean_dc ? fmt(*r.mean_dc) : "") + "\n";
    }
    io::write_file_atomic(path, s);
}

struct Loaded {
    bench::Experiment exp;
    bench::PriorRegistry priors;
    bench::Context ctx;
};

Loaded load(const std::string& spec, const Globals& g) {
    if (spec.empty()) throw UsageError("--spec is required");
    if (!fs::exists(spec)) throw UsageError("spec file '" + spec + "' does not exist");
    Loaded l;
    try {
        l.exp = bench::load_experiment(spec);
    } catch (const bench::SpecError& e) {
        throw UsageError(e.what());
    }
    l.ctx.master_seed = need_seed(g);
    l.ctx.jobs = g.jobs;
    l.priors = bench::build_priors(l.exp, l.ctx.master_seed);
    l.ctx.priors = &l.priors;
    return l;
}

// Sinograms written next to the images by gen-data are skipped.
std::vector<std::string> image_files(const std::string& dir) {
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto ext = e.path().extension().string();
        if (e.path().filename().string().starts_with("sino_")) continue;
        if (e.is_regular_file() && (ext == ".pgm" || ext == ".csv")) out.push_back(e.path().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Benchmark harness for linear inverse problems with classical and generative priors"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "Master seed; all randomness is derived from it");
    app.add_option("--out", g.out, std::string("Output path (default: $") + kOutEnv + " or the working directory)");
    app.add_option("--jobs", g.jobs, "Worker threads for independent runs")->check(CLI::PositiveNumber);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Write synthetic ground-truth images (and optional sinograms)");
    int gen_count = 10, gen_size = 64, gen_angles = 0, gen_max_ellipses = 70;
    double gen_sigma = 0.0;
    std::string gen_format = "pgm", gen_prior;
    gen->add_option("--count", gen_count, "Number of images")->check(CLI::PositiveNumber);
    gen->add_option("--size", gen_size, "Image side length")->check(CLI::PositiveNumber);
    gen->add_option("--format", gen_format, "Image format")->check(CLI::IsMember({"pgm", "csv"}));
    gen->add_option("--prior", gen_prior, "Sample from this GMM CSV instead of the ellipse generator");
    gen->add_option("--max-ellipses", gen_max_ellipses, "Upper bound on ellipses per image")->check(CLI::NonNegativeNumber);
    gen->add_option("--angles", gen_angles, "Also write a parallel-beam sinogram with this many angles")
        ->check(CLI::NonNegativeNumber);
    gen->add_option("--sigma", gen_sigma, "Gaussian noise level added to the sinogram")->check(CLI::NonNegativeNumber);

    // fit-prior
    auto* fit = app.add_subcommand("fit-prior", "Fit an isotropic GMM prior by EM");
    std::string fit_data;
    int fit_samples = 400, fit_size = 32, fit_k = 4, fit_iters = 30, fit_max_ellipses = 70;
    fit->add_option("--data", fit_data, "Directory of training images (.pgm/.csv); default: fresh ellipse images");
    fit->add_option("--samples", fit_samples, "Generated training images")->check(CLI::PositiveNumber);
    fit->add_option("--size", fit_size, "Generated image side length")->check(CLI::PositiveNumber);
    fit->add_option("--max-ellipses", fit_max_ellipses, "Upper bound on ellipses per image")->check(CLI::NonNegativeNumber);
    fit->add_option("--components", fit_k, "Mixture components")->check(CLI::PositiveNumber);
    fit->add_option("--iters", fit_iters, "EM iterations")->check(CLI::NonNegativeNumber);

    std::string spec;
    auto add_spec = [&](CLI::App* sub) { sub->add_option("--spec", spec, "Experiment spec file"); };

    auto* solve = app.add_subcommand("solve", "Run every solver with its fixed parameters on the test seeds");
    add_spec(solve);
    auto* bench_cmd = app.add_subcommand("bench", "Grid-search on validation seeds, then evaluate on test seeds");
    add_spec(bench_cmd);
    auto* sweep = app.add_subcommand("sweep-noise", "PSNR as the noise level goes to zero, re-tuned per level");
    add_spec(sweep);
    std::string sweep_sigmas;
    sweep->add_option("--sigmas", sweep_sigmas, "Comma-separated, strictly decreasing noise levels");
    auto* stab = app.add_subcommand("stability", "Metric spread over independent noise realizations");
    add_spec(stab);
    int stab_real = 0, stab_images = 0;
    stab->add_option("--realizations", stab_real, "Noise draws per image (default from spec)")->check(CLI::Range(2, 100000));
    stab->add_option("--images", stab_images, "Ground-truth images (default from spec)")->check(CLI::PositiveNumber);
    auto* mism = app.add_subcommand("mismatch", "Matched vs perturbed-angle vs signal-dependent noise data");
    add_spec(mism);
    double mism_deg = -1.0;
    mism->add_option("--max-deg", mism_deg, "Angle perturbation bound in degrees (default from spec)")
        ->check(CLI::NonNegativeNumber);

    // Repeat the global flags on each subcommand so its --help lists them.
    for (auto* sub : app.get_subcommands({})) {
        sub->add_option("--seed", g.seed, "Master seed; all randomness is derived from it");
        sub->add_option("--out", g.out, std::string("Output path (default: $") + kOutEnv + " or the working directory)");
        sub->add_option("--jobs", g.jobs, "Worker threads for independent runs")->check(CLI::PositiveNumber);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*gen) {
            const std::uint64_t seed = need_seed(g);
            const std::string dir = resolve_out(g, "data");
            fs::create_directories(dir);
            Rng rng(seed);
            std::optional<priors::GmmPrior> prior;
            if (!gen_prior.empty()) {
                if (!fs::exists(gen_prior)) throw UsageError("prior file '" + gen_prior + "' does not exist");
                prior = priors::load_gmm(gen_prior);
                const auto side = Eigen::Index(std::llround(std::sqrt(double(prior->dim()))));
                if (side * side != prior->dim()) throw UsageError("prior dimension is not a square image");
                gen_size = int(side);
            }
            priors::EllipseSceneParams ep;
            ep.image_size = gen_size;
            ep.max_ellipses = gen_max_ellipses;
            std::optional<linops::RadonGeometry> geom;
            if (gen_angles > 0) geom = linops::RadonGeometry::uniform(gen_size, gen_angles);
            for (int i = 0; i < gen_count; ++i) {
                Image img(gen_size, gen_size);
                if (prior)
                    img.data = priors::gmm_sample(*prior, rng).cwiseMax(0.0).cwiseMin(1.0);
                else
                    img = priors::generate_ellipse_image(ep, rng);
                char name[64];
                std::snprintf(name, sizeof name, "img_%04d.%s", i, gen_format.c_str());
                const std::string path = (fs::path(dir) / name).string();
                if (gen_format == "pgm")
                    io::write_pgm16(img, path);
                else
                    io::write_image_csv(img, path);
                if (geom) {
                    Sinogram s = linops::radon_apply(img, *geom);
                    s.data = bench::add_noise(s.data, {metrics::NoiseKind::gaussian, gen_sigma}, rng);
                    std::snprintf(name, sizeof name, "sino_%04d.csv", i);
                    io::write_sinogram_csv(s, (fs::path(dir) / name).string());
                }
            }
            std::printf("wrote %d images to %s\n", gen_count, dir.c_str());
            return 0;
        }
        if (*fit) {
            const std::uint64_t seed = need_seed(g);
            Matrix data;
            if (!fit_data.empty()) {
                if (!fs::is_directory(fit_data)) throw UsageError("data directory '" + fit_data + "' does not exist");
                const auto files = image_files(fit_data);
                if (files.empty()) throw UsageError("no .pgm/.csv images in '" + fit_data + "'");
                for (std::size_t i = 0; i < files.size(); ++i) {
                    const auto& f = files[i];
                    const Image img = f.size() > 4 && f.substr(f.size() - 4) == ".csv" ? io::read_image_csv(f)
                                                                                       : io::read_pgm(f);
                    if (i == 0) data.resize(img.size(), Eigen::Index(files.size()));
                    if (img.size() != data.rows()) throw std::runtime_error("image '" + f + "' has a different size");
                    data.col(Eigen::Index(i)) = img.data;
                }
            } else {
                Rng rng(seed);
                priors::EllipseSceneParams ep;
                ep.image_size = fit_size;
                ep.max_ellipses = fit_max_ellipses;
                data.resize(Eigen::Index(fit_size) * fit_size, fit_samples);
                for (int i = 0; i < fit_samples; ++i) data.col(i) = priors::generate_ellipse_image(ep, rng).data;
            }
            if (data.cols() < fit_k) throw UsageError("fewer training images than components");
            const auto res = priors::fit_gmm_em_trace(data, fit_k, fit_iters, seed);
            const std::string out = resolve_out(g, "prior.csv");
            priors::save_gmm(res.prior, out);
            std::printf("fitted K=%d on %ld images; final log-likelihood %.6g; wrote %s\n", fit_k, long(data.cols()),
                        res.log_likelihood.empty() ? 0.0 : res.log_likelihood.back(), out.c_str());
            return 0;
        }

        if (*solve || *bench_cmd) {
            const auto l = load(spec, g);
            const std::string out = resolve_out(g, *solve ? "results.csv" : "bench.csv");
            std::vector<bench::RunRecord> recs;
            for (const auto& p : l.exp.problems) {
                std::vector<bench::RunRecord> r;
                if (*solve) {
                    for (const auto& s : l.exp.solvers)
                        if (!s.grid.empty())
                            std::cerr << "note: solve ignores the grid of solver '" << s.id << "'\n";
                    std::vector<std::uint64_t> real(std::size_t(l.exp.test_seeds));
                    for (std::size_t i = 0; i < real.size(); ++i) real[i] = i;
                    r = bench::run_experiment(p, l.exp.solvers, real, l.ctx);
                } else {
                    r = bench::tune_and_run(p, l.exp.solvers, l.exp.val_seeds, l.exp.test_seeds, l.ctx);
                }
                recs.insert(recs.end(), r.begin(), r.end());
            }
            bench::emit_csv(recs, out);
            write_summary_csv(recs, sibling(out, "_summary.csv"));
            print_summary(recs);
            return 0;
        }
        if (*sweep) {
            const auto l = load(spec, g);
            std::vector<double> sigmas = l.exp.sigmas;
            if (!sweep_sigmas.empty()) {
                try {
                    sigmas = bench::parse_number_list(sweep_sigmas);
                } catch (const InvalidInput& e) {
                    throw UsageError(std::string("--sigmas: ") + e.what());
                }
            }
            const std::string out = resolve_out(g, "sweep.csv");
            std::vector<bench::RunRecord> recs;
            std::vector<std::string> plots;
            for (const auto& p : l.exp.problems) {
                auto res = bench::sweep_noise_to_zero(p, l.exp.solvers, sigmas, l.exp.val_seeds, l.exp.test_seeds, l.ctx);
                for (const auto& c : res.curves) {
                    const std::string path = sibling(out, "." + c.problem + "." + c.solver + ".xy.csv");
                    bench::write_plot_data(c.points, path);
                    plots.push_back(path);
                }
                recs.insert(recs.end(), res.records.begin(), res.records.end());
            }
            bench::emit_csv(recs, out);
            print_summary(recs);
            for (const auto& p : plots) std::printf("plot data: %s\n", p.c_str());
            return 0;
        }
        if (*stab) {
            const auto l = load(spec, g);
            const int nr = stab_real > 0 ? stab_real : l.exp.realizations;
            const int ni = stab_images > 0 ? stab_images : l.exp.images;
            const std::string out = resolve_out(g, "stability.csv");
            std::vector<bench::RunRecord> recs;
            std::vector<bench::StabilityRow> rows;
            for (const auto& p : l.exp.problems)
                for (const auto& s : l.exp.solvers) {
                    bench::SolverSpec fixed = s;
                    if (!s.grid.empty()) fixed.params = bench::grid_search(p, s, l.exp.val_seeds, l.ctx).best;
                    fixed.grid.clear();
                    auto res = bench::stability_over_noise(p, fixed, nr, ni, l.ctx);
                    recs.insert(recs.end(), res.records.begin(), res.records.end());
                    rows.insert(rows.end(), res.summary.begin(), res.summary.end());
                }
            bench::emit_csv(recs, out);
            std::string s = "problem,solver,metric,mean,avg_sd,max_sd\n";
            std::printf("%-20s %-14s %-5s %10s %10s %10s\n", "problem", "solver", "metric", "mean", "avg_sd", "max_sd");
            for (const auto& r : rows) {
                char buf[256];
                std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g\n", r.mean, r.avg_sd, r.max_sd);
                s += r.problem + "," + r.solver + "," + r.metric + buf;
                std::printf("%-20s %-14s %-5s %10.4g %10.4g %10.4g\n", r.problem.c_str(), r.solver.c_str(),
                            r.metric.c_str(), r.mean, r.avg_sd, r.max_sd);
            }
            io::write_file_atomic(sibling(out, "_summary.csv"), s);
            return 0;
        }
        if (*mism) {
            const auto l = load(spec, g);
            const double deg = mism_deg >= 0.0 ? mism_deg : l.exp.angle_perturb_deg;
            const std::string out = resolve_out(g, "mismatch.csv");
            std::vector<bench::RunRecord> recs;
            for (const auto& p : l.exp.problems) {
                auto r = bench::mismatch_study(p, l.exp.solvers, deg, l.exp.val_seeds, l.exp.test_seeds, l.ctx);
                recs.insert(recs.end(), r.begin(), r.end());
            }
            bench::emit_csv(recs, out);
            write_summary_csv(recs, sibling(out, "_summary.csv"));
            print_summary(recs);
            return 0;
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

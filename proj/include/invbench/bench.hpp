#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "invbench/common.hpp"
#include "invbench/linops.hpp"
#include "invbench/metrics.hpp"
#include "invbench/priors.hpp"

namespace invbench::bench {

// Hyperparameters as text; ordered so that serialisation is stable.
using Params = std::map<std::string, std::string>;
using PriorRegistry = std::map<std::string, std::shared_ptr<const priors::GmmPrior>>;

// Gaussian: y + level * eta. Signal-dependent: y + level * sqrt|y| * eta
// (see metrics::matched_signal_dependent for the variance-matched level).
Vector add_noise(const Vector& y_clean, const metrics::NoiseModel& nm, Rng& rng);

// Independent U(-max_deg, max_deg) shift of every angle. Angle order is kept as drawn.
linops::RadonGeometry perturb_angles(const linops::RadonGeometry& geom, double max_deg, Rng& rng);

// splitmix64 over an FNV-1a digest of the ids; stable across platforms.
std::uint64_t derive_seed(std::uint64_t master, std::string_view problem, std::string_view solver,
                          std::uint64_t grid_index, std::uint64_t realization);

// Test realizations are 0..n-1; validation ones start here.
constexpr std::uint64_t kValidationBase = 1'000'000;

struct OperatorConfig {
    std::string kind = "radon";  // identity | radon | mask | blur | motion_blur | downsample
    int image_size = 32;
    int n_angles = 90;
    int n_detectors = 0;
    double missing_fraction = 0.5;
    double blur_sigma = 1.0;
    int motion_length = 7;
    double motion_angle = 0.0;
    int factor = 2;
};

linops::OperatorPtr build_operator(const OperatorConfig& cfg, std::uint64_t seed);

enum class TruthKind { gmm, ellipses, file };

struct ProblemSpec {
    std::string id;
    std::string label;  // Type I/II/III, informational
    OperatorConfig op;
    metrics::NoiseKind noise = metrics::NoiseKind::gaussian;
    double sigma = 0.01;  // Gaussian level; signal-dependent noise is variance-matched to it
    TruthKind truth = TruthKind::ellipses;
    std::string truth_prior;  // id in the registry, TruthKind::gmm
    priors::EllipseSceneParams ellipses{};
    std::string image_path;  // TruthKind::file (PGM or CSV)
    double angle_perturb_deg = 0.0;  // data generated with perturbed angles, reconstruction uses nominal ones
    bool clip_truth = true;          // clip GMM samples to [0,1]

    void validate() const;
};

struct SolverSpec {
    std::string id;
    std::string method;  // fbp | tv | smooth_reg | dps | diffpir | reddiff | dmplug | pnpflow
    Params params;
    std::string prior;  // reconstruction prior id (diffusion, flow and gmm_neglog)
    // Values to search over; each key overrides params[key].
    std::vector<std::pair<std::string, std::vector<std::string>>> grid;

    void validate() const;
};

const std::vector<std::string>& known_methods();

// The concrete triple a problem resolves to for one realization.
struct Instance {
    linops::OperatorPtr A;       // nominal operator used for reconstruction
    linops::OperatorPtr A_data;  // operator that generated y (differs under angle mismatch)
    Vector x_true;
    Vector y;
    metrics::NoiseModel noise;  // actual noise model of y
    double sigma_nominal = 0.0;
};

// The operator seed only matters for random masks.
Instance make_instance(const ProblemSpec& p, const PriorRegistry& priors, std::uint64_t op_seed,
                       std::uint64_t truth_seed, std::uint64_t noise_seed);
// Ground truth `image` with noise draw `draw`, all seeds derived from the master seed.
Instance realize(const ProblemSpec& p, const PriorRegistry& priors, std::uint64_t master, std::uint64_t image,
                 std::uint64_t draw);

Vector run_solver(const SolverSpec& s, const Params& params, const Instance& inst, const PriorRegistry& priors,
                  std::uint64_t seed);

struct RunRecord {
    std::string problem;
    std::string solver;
    std::string params_json;
    std::uint64_t seed = 0;
    std::uint64_t realization = 0;
    std::size_t grid_index = 0;
    metrics::MetricReport metrics{};
    bool ok = true;
    std::string error;
    double wall_ms = 0.0;
};

struct Context {
    std::uint64_t master_seed = 0;
    int jobs = 1;
    const PriorRegistry* priors = nullptr;
};

// Runs task(i) for i in [0, n) on up to `jobs` threads. Exceptions are rethrown after all tasks end.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& task);

// Cartesian product of the grid (first key varies slowest); a single entry when there is no grid.
std::vector<Params> expand_grid(const SolverSpec& s);
std::string params_to_json(const Params& p);

struct GridRow {
    std::size_t index = 0;
    Params params;
    double mean_psnr = 0.0;
    double sd_psnr = 0.0;
    int n_ok = 0;
};

struct GridResult {
    Params best;
    std::size_t best_index = 0;
    std::vector<GridRow> table;
    std::vector<RunRecord> records;  // only filled with report_all
};

GridResult grid_search(const ProblemSpec& p, const SolverSpec& s, int n_val, const Context& ctx,
                       bool report_all = false);

// Records are sorted by (problem, solver, grid index, realization).
std::vector<RunRecord> run_experiment(const ProblemSpec& p, const std::vector<SolverSpec>& solvers,
                                      const std::vector<std::uint64_t>& realizations, const Context& ctx);

// grid_search on validation realizations, then the selected parameters on test realizations.
std::vector<RunRecord> tune_and_run(const ProblemSpec& p, const std::vector<SolverSpec>& solvers, int n_val, int n_test,
                                    const Context& ctx);

struct Curve {
    std::string problem;
    std::string solver;
    std::vector<std::pair<double, double>> points;  // (sigma, mean PSNR)
};

struct SweepResult {
    std::vector<RunRecord> records;
    std::vector<Curve> curves;
};

// One tune_and_run per level; the problem id of each record carries the level.
SweepResult sweep_noise_to_zero(const ProblemSpec& p, const std::vector<SolverSpec>& solvers,
                                const std::vector<double>& sigmas, int n_val, int n_test, const Context& ctx);

struct StabilityRow {
    std::string problem;
    std::string solver;
    std::string metric;  // psnr | ssim | dc
    double mean = 0.0;    // over all images and realizations
    double avg_sd = 0.0;  // per-image sd across noise draws, averaged over images
    double max_sd = 0.0;
};

struct StabilityResult {
    std::vector<RunRecord> records;
    std::vector<StabilityRow> summary;
};

// Ground truths fixed per image; only the noise seed varies across realizations.
StabilityResult stability_over_noise(const ProblemSpec& p, const SolverSpec& s, int n_realizations, int n_images,
                                     const Context& ctx);
// Summary from records (realization = image * n_realizations + draw); independent of record order.
std::vector<StabilityRow> summarize_stability(const std::vector<RunRecord>& records, int n_realizations);

// Matched, angle-perturbed and signal-dependent variants of p with the parameters tuned on the matched one.
std::vector<RunRecord> mismatch_study(const ProblemSpec& p, const std::vector<SolverSpec>& solvers, double max_deg,
                                      int n_val, int n_test, const Context& ctx);

struct SummaryRow {
    std::string problem;
    std::string solver;
    int n = 0;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    std::optional<double> mean_dc;
};
std::vector<SummaryRow> summarize(const std::vector<RunRecord>& records);

// Fixed columns: problem,solver,params,seed,psnr,ssim,dc,wall_ms. Undefined values are empty fields.
std::string records_to_csv(const std::vector<RunRecord>& records);
void emit_csv(const std::vector<RunRecord>& records, const std::string& path);
std::vector<RunRecord> parse_results_csv(const std::string& text);
std::vector<RunRecord> read_results_csv(const std::string& path);

// Header "x,y" then one point per line.
void write_plot_data(const std::vector<std::pair<double, double>>& pts, const std::string& path);

}  // namespace invbench::bench

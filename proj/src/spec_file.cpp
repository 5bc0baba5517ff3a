#include "invbench/spec_file.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace invbench::bench {

namespace pt = boost::property_tree;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) throw SpecError("empty entry in list '" + s + "'");
        out.push_back(item);
    }
    if (out.empty()) throw SpecError("empty list");
    return out;
}

double to_double(const std::string& where, const std::string& v) {
    std::size_t used = 0;
    double d = 0.0;
    try {
        d = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size()) throw SpecError(where + ": expected a number, got '" + v + "'");
    return d;
}

int to_int(const std::string& where, const std::string& v) {
    const double d = to_double(where, v);
    if (d != double(long(d)) || d < -1e9 || d > 1e9) throw SpecError(where + ": expected an integer, got '" + v + "'");
    return int(d);
}

bool to_bool(const std::string& where, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw SpecError(where + ": expected a boolean, got '" + v + "'");
}

// Ellipse generator keys shared by problems and priors; returns false if `key` is not one of them.
bool ellipse_key(priors::EllipseSceneParams& e, const std::string& where, const std::string& key,
                 const std::string& v) {
    if (key == "max_ellipses") e.max_ellipses = to_int(where, v);
    else if (key == "intensity_min") e.intensity_min = to_double(where, v);
    else if (key == "intensity_max") e.intensity_max = to_double(where, v);
    else if (key == "eccentricity_min") e.eccentricity_min = to_double(where, v);
    else if (key == "eccentricity_max") e.eccentricity_max = to_double(where, v);
    else if (key == "axis_min_frac") e.axis_min_frac = to_double(where, v);
    else if (key == "axis_max_frac") e.axis_max_frac = to_double(where, v);
    else return false;
    return true;
}

ProblemSpec parse_problem(const std::string& id, const pt::ptree& sec) {
    ProblemSpec p;
    p.id = id;
    const std::string where = "[problem:" + id + "]";
    for (const auto& [key, node] : sec) {
        const std::string v = trim(node.data());
        const std::string w = where + " " + key;
        if (key == "label") p.label = v;
        else if (key == "operator") p.op.kind = v;
        else if (key == "image_size") p.op.image_size = to_int(w, v);
        else if (key == "angles") p.op.n_angles = to_int(w, v);
        else if (key == "detectors") p.op.n_detectors = to_int(w, v);
        else if (key == "missing_fraction") p.op.missing_fraction = to_double(w, v);
        else if (key == "blur_sigma") p.op.blur_sigma = to_double(w, v);
        else if (key == "motion_length") p.op.motion_length = to_int(w, v);
        else if (key == "motion_angle") p.op.motion_angle = to_double(w, v);
        else if (key == "factor") p.op.factor = to_int(w, v);
        else if (key == "noise") {
            try {
                p.noise = metrics::parse_noise_kind(v);
            } catch (const InvalidInput& e) {
                throw SpecError(w + ": " + e.what());
            }
        } else if (key == "sigma") p.sigma = to_double(w, v);
        else if (key == "angle_perturb_deg") p.angle_perturb_deg = to_double(w, v);
        else if (key == "clip_truth") p.clip_truth = to_bool(w, v);
        else if (key == "truth") {
            if (v == "ellipses") {
                p.truth = TruthKind::ellipses;
            } else if (v.rfind("gmm:", 0) == 0) {
                p.truth = TruthKind::gmm;
                p.truth_prior = v.substr(4);
            } else if (v.rfind("file:", 0) == 0) {
                p.truth = TruthKind::file;
                p.image_path = v.substr(5);
            } else {
                throw SpecError(w + ": expected ellipses, gmm:<prior> or file:<path>");
            }
        } else if (!ellipse_key(p.ellipses, w, key, v)) {
            throw SpecError(where + ": unknown key '" + key + "'");
        }
    }
    static const std::set<std::string> ops{"identity", "radon", "mask", "blur", "motion_blur", "downsample"};
    if (!ops.count(p.op.kind)) throw SpecError(where + ": unknown operator '" + p.op.kind + "'");
    try {
        p.validate();
    } catch (const InvalidInput& e) {
        throw SpecError(e.what());
    }
    return p;
}

SolverSpec parse_solver(const std::string& id, const pt::ptree& sec) {
    SolverSpec s;
    s.id = id;
    const std::string where = "[solver:" + id + "]";
    for (const auto& [key, node] : sec) {
        const std::string v = trim(node.data());
        if (key == "method") s.method = v;
        else if (key == "prior") s.prior = v;
        else if (key.rfind("grid.", 0) == 0) s.grid.emplace_back(key.substr(5), split_list(v));
        else s.params[key] = v;
    }
    if (s.method.empty()) throw SpecError(where + ": missing method");
    try {
        s.validate();
    } catch (const InvalidInput& e) {
        throw SpecError(e.what());
    }
    return s;
}

PriorSpec parse_prior(const std::string& id, const pt::ptree& sec) {
    PriorSpec p;
    p.id = id;
    for (const auto& [key, node] : sec) {
        if (key == "kind") p.kind = trim(node.data());
        else p.params[key] = trim(node.data());
    }
    static const std::set<std::string> kinds{"ellipse_fit", "file", "gaussian"};
    if (!kinds.count(p.kind)) throw SpecError("[prior:" + id + "]: kind must be ellipse_fit, file or gaussian");
    return p;
}

void parse_settings(Experiment& e, const pt::ptree& sec) {
    for (const auto& [key, node] : sec) {
        const std::string v = trim(node.data());
        const std::string w = "[experiment] " + key;
        if (key == "val_seeds") e.val_seeds = to_int(w, v);
        else if (key == "test_seeds") e.test_seeds = to_int(w, v);
        else if (key == "realizations") e.realizations = to_int(w, v);
        else if (key == "images") e.images = to_int(w, v);
        else if (key == "sigmas") {
            e.sigmas.clear();
            for (const auto& s : split_list(v)) e.sigmas.push_back(to_double(w, s));
        } else if (key == "angle_perturb_deg") e.angle_perturb_deg = to_double(w, v);
        else throw SpecError("[experiment]: unknown key '" + key + "'");
    }
    if (e.val_seeds < 1 || e.test_seeds < 1) throw SpecError("[experiment]: seed counts must be >= 1");
    if (e.realizations < 2 || e.images < 1) throw SpecError("[experiment]: need realizations >= 2 and images >= 1");
}

std::string param(const PriorSpec& p, const std::string& key, const std::string& def) {
    auto it = p.params.find(key);
    return it == p.params.end() ? def : it->second;
}

}  // namespace

std::vector<double> parse_number_list(const std::string& s) {
    std::vector<double> out;
    for (const auto& item : split_list(s)) out.push_back(to_double("list", item));
    return out;
}

Experiment parse_experiment(const std::string& text) {
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw SpecError(std::string("spec: ") + e.what());
    }
    Experiment e;
    bool have_version = false;
    std::set<std::string> ids;
    for (const auto& [key, node] : tree) {
        if (key == "spec_version") {
            if (!node.empty()) throw SpecError("spec: spec_version must be a top-level key");
            e.spec_version = to_int("spec_version", trim(node.data()));
            have_version = true;
            continue;
        }
        const auto colon = key.find(':');
        const std::string kind = key.substr(0, colon);
        const std::string id = colon == std::string::npos ? "" : trim(key.substr(colon + 1));
        if (kind == "experiment" && colon == std::string::npos) {
            parse_settings(e, node);
            continue;
        }
        if (id.empty()) throw SpecError("spec: section [" + key + "] needs the form [kind:id]");
        if (!ids.insert(key).second) throw SpecError("spec: duplicate section [" + key + "]");
        if (kind == "problem") e.problems.push_back(parse_problem(id, node));
        else if (kind == "solver") e.solvers.push_back(parse_solver(id, node));
        else if (kind == "prior") e.priors.push_back(parse_prior(id, node));
        else throw SpecError("spec: unknown section kind '" + kind + "'");
    }
    if (!have_version) throw SpecError("spec: missing spec_version");
    if (e.spec_version != kSpecVersion)
        throw SpecError("spec: unsupported spec_version " + std::to_string(e.spec_version));

    std::set<std::string> prior_ids;
    for (const auto& p : e.priors) prior_ids.insert(p.id);
    for (const auto& p : e.problems)
        if (p.truth == TruthKind::gmm && !prior_ids.count(p.truth_prior))
            throw SpecError("[problem:" + p.id + "]: unknown prior '" + p.truth_prior + "'");
    for (const auto& s : e.solvers)
        if (!s.prior.empty() && !prior_ids.count(s.prior))
            throw SpecError("[solver:" + s.id + "]: unknown prior '" + s.prior + "'");
    return e;
}

Experiment load_experiment(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SpecError("cannot read spec file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_experiment(ss.str());
}

std::shared_ptr<const priors::GmmPrior> build_prior(const PriorSpec& p, std::uint64_t seed) {
    const std::string where = "[prior:" + p.id + "]";
    if (p.kind == "file") return std::make_shared<priors::GmmPrior>(priors::load_gmm(param(p, "path", "")));
    const int size = to_int(where + " image_size", param(p, "image_size", "32"));
    if (size < 1) throw SpecError(where + ": image_size must be positive");
    const Eigen::Index n = Eigen::Index(size) * size;
    if (p.kind == "gaussian") {
        const double mean = to_double(where + " mean", param(p, "mean", "0.5"));
        const double var = to_double(where + " variance", param(p, "variance", "0.01"));
        return std::make_shared<priors::GmmPrior>(priors::GmmPrior::single_gaussian(Vector::Constant(n, mean), var));
    }
    priors::EllipseSceneParams ep;
    ep.image_size = size;
    int samples = 400, components = 4, iters = 30;
    for (const auto& [key, v] : p.params) {
        const std::string w = where + " " + key;
        if (key == "image_size") continue;
        if (key == "samples") samples = to_int(w, v);
        else if (key == "components") components = to_int(w, v);
        else if (key == "em_iters") iters = to_int(w, v);
        else if (!ellipse_key(ep, w, key, v)) throw SpecError(where + ": unknown key '" + key + "'");
    }
    if (samples < components || components < 1) throw SpecError(where + ": need samples >= components >= 1");
    Rng rng(seed);
    Matrix data(n, samples);
    for (int i = 0; i < samples; ++i) data.col(i) = priors::generate_ellipse_image(ep, rng).data;
    return std::make_shared<priors::GmmPrior>(priors::fit_gmm_em(data, components, iters, seed ^ 0x5bd1e995ULL));
}

PriorRegistry build_priors(const Experiment& e, std::uint64_t master_seed) {
    PriorRegistry reg;
    for (const auto& p : e.priors) reg[p.id] = build_prior(p, derive_seed(master_seed, "prior", p.id, 0, 0));
    return reg;
}

}  // namespace invbench::bench

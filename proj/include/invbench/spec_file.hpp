#pragma once

#include <string>
#include <vector>

#include "invbench/bench.hpp"

namespace invbench::bench {

// Malformed or unreadable experiment spec.
class SpecError : public InvalidInput {
public:
    using InvalidInput::InvalidInput;
};

struct PriorSpec {
    std::string id;
    std::string kind;  // ellipse_fit | file | gaussian
    Params params;
};

struct Experiment {
    int spec_version = 1;
    int val_seeds = 2;
    int test_seeds = 5;
    int realizations = 40;  // stability
    int images = 1;         // stability
    std::vector<double> sigmas{0.005, 0.002, 0.001, 0.0};
    double angle_perturb_deg = 0.7;
    std::vector<PriorSpec> priors;
    std::vector<ProblemSpec> problems;
    std::vector<SolverSpec> solvers;
};

constexpr int kSpecVersion = 1;

Experiment parse_experiment(const std::string& text);
Experiment load_experiment(const std::string& path);

PriorRegistry build_priors(const Experiment& e, std::uint64_t master_seed);
std::shared_ptr<const priors::GmmPrior> build_prior(const PriorSpec& p, std::uint64_t seed);

std::vector<double> parse_number_list(const std::string& s);

}  // namespace invbench::bench

#pragma once

#include <string>

#include "invbench/common.hpp"
#include "invbench/linops.hpp"
#include "invbench/priors.hpp"
#include "invbench/variational.hpp"

namespace invbench::pnpflow {

enum class Variant { explicit_step, implicit_step };
Variant parse_variant(const std::string& name);  // "explicit" | "implicit"
std::string to_string(Variant v);

struct PnpFlowConfig {
    int steps = 100;          // N
    int realizations = 5;     // K
    double alpha = 1.0;
    double gamma = 1.0;
    Variant variant = Variant::implicit_step;
    variational::ProxOptions prox{};

    void validate() const;
};

// gamma * (1 - t)^alpha with t = n / N.
double step_weight(const PnpFlowConfig& cfg, int n);

Vector pnpflow(const Vector& y, const linops::LinearOperator& A, const priors::FlowPrior& fp, const PnpFlowConfig& cfg,
               Rng& rng, const Vector& x_init);

}  // namespace invbench::pnpflow

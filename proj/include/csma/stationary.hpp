#pragma once

#include <stdexcept>
#include <vector>

#include "csma/env_chain.hpp"
#include "csma/model.hpp"

namespace csma {

// Raised when the exponential-backoff geometric form is requested with
// G_c <= H_c (the geometric level series diverges).
class GHInfeasibleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FixedPointOptions {
    double tol = 1e-10;
    int max_iter = 500;
    double damping = 0.5;
    // Extra solves from random initial rho vectors; the spread across their
    // results is reported (0 disables probing).
    int probe_initializations = 5;
    unsigned long long probe_seed = 20240811;
};

struct FixedPointResult {
    RhoVector rho;
    EnvStationary pi;
    GHI env;
    ClassMixture Q;
    std::vector<double> gamma;  // time-share units; packets/slot = gamma / L
    bool converged = false;
    int iterations = 0;
    double residual = 0.0;                // max_c |rho_c - sum_n p_n Q_c^n|
    double last_update = 0.0;             // final ||rho_k+1 - rho_k||_inf
    double big_identity_residual = 0.0;   // max_c |rho_c - p0 mu_c (G-H)/G| (exp policy)
    double truncation_tail_mass = 0.0;    // max_c mass folded into level n_max
    double probe_spread = -1.0;           // inf-norm disagreement across probe runs
    std::vector<double> update_trace;     // ||rho_k+1 - rho_k||_inf per iteration
};

// Damped iteration on rho through the environment chain and the per-class
// level balance. Exponential policies use the closed geometric form; other
// policies solve the level-chain linear system. Non-convergence is reported
// via converged=false, never thrown.
FixedPointResult solve_fixed_point(const NetworkSpec& spec, FixedPointOptions opts = {});

// Q_c^n = mu_c (G-H)/I (2H/I)^n with the geometric tail folded into level
// n_max so each class row sums to mu_c exactly. Returns the mixture and
// rho_c = sum_n p_n Q_c^n. Requires G_c > H_c for every class with mu_c > 0.
std::pair<ClassMixture, RhoVector> exp_backoff_geometric(const GHI& env, const NetworkSpec& spec);

// Generic per-class level balance: G(sum_{S(m)=n} y_m - y_n) +
// H(sum_{C(m)=n} y_m - y_n) = 0 in y_n = p_n Q_c^n, normalized by
// sum_n Q_c^n = mu_c. Works for any policy; dual route to the geometric form.
ClassMixture level_chain_solve(const GHI& env, const NetworkSpec& spec);

struct ClosedFormFullInterference {
    double rho_st = 0.0;
    double root_residual = 0.0;      // |p0 e^rho + rho - 2 p0|
    std::vector<double> q;           // stationary level distribution, sums to 1
};

// Single-class exponential backoff: rho_st solves p0 e^rho + rho - 2 p0 = 0 on
// (0, ln 2) by bisection; Q^n = (2(1-e^-rho))^n rho e^-rho / p0 with the tail
// folded into the last level. Requires 0 < p0 < ln 2.
ClosedFormFullInterference closed_form_full_interference(double p0, int n_max = 64);

// gamma_c = sum_{z clear for c} pi(z) L rho_c prod_{d in V_c}(C_d(z)(e^-rho_d - 1) + 1).
std::vector<double> throughput(const EnvStationary& st, const RhoVector& rho,
                               const NetworkSpec& spec);

}  // namespace csma

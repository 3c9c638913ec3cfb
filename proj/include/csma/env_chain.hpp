#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "csma/model.hpp"

namespace csma {

// Environment state space Z = {0,1,2}^|C|: per class, 0 = idle, 1 = one
// successful transmission, 2 = collision in progress. States are indexed by
// the mixed-radix (base-3) encoding with the first class most significant.

inline constexpr long long kMaxEnvStates = 531441;  // 3^12

long long env_state_count(const NetworkSpec& spec, long long cap = kMaxEnvStates);
std::vector<int> env_decode(long long idx, std::size_t n_classes);
long long env_encode(std::span<const int> z);

// C_c(z) = 1 iff z_d == 0 for every d in V_c (V_c includes c).
bool clear_to_send(std::span<const int> z, int c, const std::vector<std::vector<int>>& neighbors);

// Categories of the number of class-c attempts at the end of a clear slot in
// the large-N limit: none = e^-rho, one = rho e^-rho, two_plus = the rest.
struct AttemptProfile {
    double none;
    double one;
    double two_plus;
};
AttemptProfile attempt_profile(double rho_c);

enum class KernelMode { Consistent, Verbatim };

struct EnvKernel {
    Eigen::MatrixXd P;
    KernelMode mode = KernelMode::Consistent;
    RhoVector rho;
    // max_z |sum_z' P(z,z') - 1|. ~0 in consistent mode; reported as a fidelity
    // diagnostic in verbatim mode, whose product formulas admit jointly
    // inconsistent transitions.
    double max_row_sum_deviation = 0.0;
};

// Consistent mode: exact one-slot kernel of the generative step (departures at
// 1/L resp. 1/Lc, then attempts by classes clear at the pre-slot state, with
// collisions between simultaneous attempts in interfering classes).
// Verbatim mode: the literal limit product formulas, component kernels
// A1/A2/D1/D2/0 multiplied per transition.
EnvKernel build_kernel(const RhoVector& rho, const NetworkSpec& spec,
                       KernelMode mode = KernelMode::Consistent);

struct EnvStationary {
    Eigen::VectorXd pi;
    double residual_l1 = 0.0;  // ||pi K - pi||_1
};

// Direct linear solve of pi K = pi, sum(pi) = 1, restricted to the recurrent
// class reachable from the all-idle state (handles rho_c = 0 reducibility).
// Verbatim kernels are row-renormalized before solving.
EnvStationary stationary_dist(const EnvKernel& kernel);

struct GHI {
    std::vector<double> G;  // pi-averaged clear-and-success factor
    std::vector<double> H;  // pi-averaged clear-and-collision factor
    std::vector<double> I;  // pi-averaged clear probability; I = G + H
};
GHI ghi(const EnvStationary& st, const RhoVector& rho, const NetworkSpec& spec);

struct DominationReport {
    bool domination_holds = false;
    bool dominating_chain_positive_recurrent = false;
    bool pass = false;
    int grid_points_per_class = 0;
    long long checked_pairs = 0;
    // First violating (state, lower-bound state) pair, -1 if none.
    long long first_violation_state = -1;
    long long first_violation_lower = -1;
    double worst_margin = 0.0;  // min over checks of (dominating mass - kernel mass)
};

// Checks that the dominating kernel (idle clear classes activate surely,
// active classes depart at 1/L resp. 1/Lc) is positive recurrent and
// stochastically dominates the consistent kernel for a grid of rho vectors,
// under the partial order "no active class maps to idle".
DominationReport domination_check(const NetworkSpec& spec, int grid_points_per_class = 5);

}  // namespace csma

#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "csma/env_chain.hpp"
#include "csma/model.hpp"

namespace csma {

// Memoizes rho -> (G,H,I) with rho quantized at 1e-12, so repeated RHS
// evaluations at the same attempt rates reuse one stationary solve.
class EnvCache {
public:
    explicit EnvCache(const NetworkSpec& spec) : spec_(&spec) {}
    const GHI& ghi_for(const RhoVector& rho);
    std::size_t size() const { return cache_.size(); }

private:
    const NetworkSpec* spec_;
    std::map<std::vector<long long>, GHI> cache_;
};

// Averaged per-(class, level) transition rates: fs = p_n G_c, fc = p_n H_c.
struct MeanRates {
    std::size_t n_classes = 0;
    int n_levels = 0;
    std::vector<double> fs, fc;

    double success(std::size_t c, int n) const { return fs[c * n_levels + n]; }
    double collision(std::size_t c, int n) const { return fc[c * n_levels + n]; }
};

MeanRates mean_rates(const ClassMixture& mix, const NetworkSpec& spec, EnvCache* cache = nullptr);

// dQ_c^n/dt: success/collision flows through the policy maps minus the total
// outflow. Per class the entries sum to zero.
ClassMixture ode_rhs(const ClassMixture& mix, const NetworkSpec& spec, EnvCache* cache = nullptr);

struct Trajectory {
    std::vector<double> times;
    std::vector<ClassMixture> states;  // subsampled; last entry is the final state
    double dt = 0.0;
    long long steps = 0;
    double max_conservation_drift = 0.0;
    std::string method = "rk4";
};

struct IntegrateOptions {
    double dt = 1.0;
    long long max_samples = 2001;  // stored trajectory points (ends always kept)
};

// Classical fixed-step RK4. Throws on NaN/blow-up and on negative masses below
// -1e-12; entries in [-1e-12, 0) are clamped to zero with in-class
// renormalization. Requires dt <= 0.1/p0.
Trajectory integrate(const ClassMixture& q0, double T, const NetworkSpec& spec,
                     IntegrateOptions opts = {}, EnvCache* cache = nullptr);

// Single-class exponential-backoff dynamics of the full-interference system in
// the same clock as ode_rhs, with every environment quantity in closed form
// (clear probability 1/(2 - e^-rho), i.e. L = Lc = 1). Agrees with ode_rhs on
// single-class specs with L = Lc = 1.
std::vector<double> full_interference_rhs(std::span<const double> q, double p0);

}  // namespace csma

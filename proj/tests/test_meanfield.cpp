#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "csma/meanfield.hpp"
#include "csma/stationary.hpp"

using namespace csma;

namespace {

NetworkSpec single_class(double p0 = 0.0625, double L = 1, double Lc = 1, int n_max = 64) {
    NetworkSpec s;
    s.classes = {"a"};
    s.mu = {1.0};
    s.adjacency = {{1}};
    s.p0 = p0;
    s.L = L;
    s.Lc = Lc;
    s.n_max = n_max;
    s.policy = BackoffPolicy::make_exponential(p0, n_max);
    return s;
}

NetworkSpec figure1_chain(double p0 = 0.0625, double L = 100, double Lc = 100) {
    NetworkSpec s;
    s.classes = {"1", "2", "3"};
    s.mu = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    s.adjacency = {{1, 1, 0}, {1, 1, 1}, {0, 1, 1}};
    s.p0 = p0;
    s.L = L;
    s.Lc = Lc;
    s.n_max = 64;
    s.policy = BackoffPolicy::make_exponential(p0, 64);
    return s;
}

ClassMixture random_mixture(const NetworkSpec& spec, std::mt19937_64& gen, int support) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ClassMixture mix = ClassMixture::zeros(spec);
    for (std::size_t c = 0; c < spec.class_count(); ++c) {
        double s = 0.0;
        for (int n = 0; n < support; ++n) s += (mix.at(c, n) = u(gen));
        for (int n = 0; n < support; ++n) mix.at(c, n) *= spec.mu[c] / s;
    }
    return mix;
}

double tv_distance(const ClassMixture& a, const ClassMixture& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.q.size(); ++i) s += std::abs(a.q[i] - b.q[i]);
    return 0.5 * s;
}

ClassMixture closed_form_mixture(const NetworkSpec& spec) {
    const ClosedFormFullInterference cf = closed_form_full_interference(spec.p0, spec.n_max);
    ClassMixture m(1, spec.n_max + 1);
    for (int n = 0; n <= spec.n_max; ++n) m.at(0, n) = cf.q[n];
    return m;
}

}  // namespace

TEST_CASE("mean_rates at rho = 0: success rate is p_n, collision rate 0") {
    const NetworkSpec spec = figure1_chain();
    const MeanRates r = mean_rates(ClassMixture::zeros(spec), spec);
    for (std::size_t c = 0; c < 3; ++c)
        for (int n = 0; n <= spec.n_max; ++n) {
            CHECK(r.success(c, n) == doctest::Approx(spec.policy.levels[n]).epsilon(1e-14));
            CHECK(r.collision(c, n) == doctest::Approx(0.0).epsilon(1e-15));
        }
}

TEST_CASE("mean_rates: single class, all mass at level 0, hand 3-state pi") {
    const NetworkSpec spec = single_class(0.0625, 100, 100);
    const MeanRates r = mean_rates(ClassMixture::all_at_level0(spec), spec);
    const double rho = spec.p0;
    const double e = std::exp(-rho);
    const double pi0 =
        1.0 / (1.0 + spec.L * rho * e + spec.Lc * (1.0 - (1.0 + rho) * e));
    CHECK(r.success(0, 0) == doctest::Approx(spec.p0 * pi0 * e).epsilon(1e-12));
    CHECK(r.collision(0, 0) == doctest::Approx(spec.p0 * pi0 * (1.0 - e)).epsilon(1e-12));
}

TEST_CASE("mean_rates identity: fs + fc = p_n I_c") {
    const NetworkSpec spec = figure1_chain();
    std::mt19937_64 gen(3);
    const ClassMixture mix = random_mixture(spec, gen, 6);
    const RhoVector rho = rho_of(mix, spec);
    const GHI g = ghi(stationary_dist(build_kernel(rho, spec)), rho, spec);
    const MeanRates r = mean_rates(mix, spec);
    for (std::size_t c = 0; c < 3; ++c)
        for (int n = 0; n <= spec.n_max; ++n)
            CHECK(r.success(c, n) + r.collision(c, n) ==
                  doctest::Approx(spec.policy.levels[n] * g.I[c]).epsilon(1e-13));
}

TEST_CASE("ode_rhs vanishes at the stationary fixed point") {
    for (const NetworkSpec& spec : {single_class(0.0625, 100, 100), figure1_chain()}) {
        const FixedPointResult fp = solve_fixed_point(spec);
        REQUIRE(fp.converged);
        const ClassMixture d = ode_rhs(fp.Q, spec);
        for (double v : d.q) CHECK(std::abs(v) < 1e-9);
    }
}

TEST_CASE("ode_rhs: near-zero rho collapses to the all-success flow") {
    // with vanishing attempt rates G -> 1, H -> 0: dQ0/dt -> sum_n p_n Q_c^n - p0 Q_c^0
    const NetworkSpec spec = single_class(1e-9, 1, 1, 16);
    std::mt19937_64 gen(11);
    const ClassMixture mix = random_mixture(spec, gen, 8);
    const ClassMixture d = ode_rhs(mix, spec);
    double expect = 0.0;
    for (int n = 0; n <= spec.n_max; ++n) expect += spec.policy.levels[n] * mix.at(0, n);
    expect -= spec.p0 * mix.at(0, 0);
    CHECK(std::abs(d.at(0, 0) - expect) <= 1e-6 * spec.p0);
}

TEST_CASE("ode_rhs conserves per-class mass") {
    const NetworkSpec spec = figure1_chain();
    std::mt19937_64 gen(19);
    for (int rep = 0; rep < 20; ++rep) {
        const ClassMixture mix = random_mixture(spec, gen, 65);
        const ClassMixture d = ode_rhs(mix, spec);
        for (std::size_t c = 0; c < 3; ++c) {
            double s = 0.0;
            for (int n = 0; n <= spec.n_max; ++n) s += d.at(c, n);
            CHECK(std::abs(s) < 1e-15);
        }
    }
}

TEST_CASE("integrate: the closed-form equilibrium is invariant") {
    const NetworkSpec spec = single_class();
    const ClassMixture q0 = closed_form_mixture(spec);
    const Trajectory traj = integrate(q0, 50.0, spec);
    CHECK(tv_distance(traj.states.back(), q0) < 1e-8);
    CHECK(traj.max_conservation_drift < 1e-8);
}

TEST_CASE("integrate: level-0 start approaches the closed form") {
    // T = 2000 leaves ~2.7e-6 of total variation in levels 5-7 (their drain
    // rates are p_n-scale); full 1e-6 convergence needs T ~ 3500.
    const NetworkSpec spec = single_class();
    const ClassMixture qst = closed_form_mixture(spec);
    const Trajectory t2000 = integrate(ClassMixture::all_at_level0(spec), 2000.0, spec);
    CHECK(tv_distance(t2000.states.back(), qst) < 5e-6);
    const Trajectory t3500 = integrate(t2000.states.back(), 1500.0, spec);
    CHECK(tv_distance(t3500.states.back(), qst) < 1e-6);
    CHECK(t3500.max_conservation_drift < 1e-8);
}

TEST_CASE("integrate: guards") {
    const NetworkSpec spec = single_class(0.5);
    const ClassMixture q0 = ClassMixture::all_at_level0(spec);
    CHECK_THROWS_AS(integrate(q0, 10.0, spec, {.dt = 1.0}), std::invalid_argument);  // dt > 0.1/p0
    CHECK_THROWS_AS(integrate(q0, -1.0, spec), std::invalid_argument);
    CHECK_NOTHROW(integrate(q0, 10.0, spec, {.dt = 0.2}));
}

TEST_CASE("full_interference_rhs equals ode_rhs for single class, L = Lc = 1") {
    const NetworkSpec spec = single_class();
    std::mt19937_64 gen(23);
    for (int rep = 0; rep < 10; ++rep) {
        const ClassMixture mix = random_mixture(spec, gen, rep % 2 ? 65 : 5);
        const ClassMixture d = ode_rhs(mix, spec);
        const std::vector<double> f = full_interference_rhs(mix.q, spec.p0);
        for (int n = 0; n <= spec.n_max; ++n) CHECK(std::abs(d.at(0, n) - f[n]) < 1e-12);
    }
}

TEST_CASE("full_interference_rhs: equilibrium and direct substitution") {
    const double p0 = 0.0625;
    const ClosedFormFullInterference cf = closed_form_full_interference(p0);

    SUBCASE("derivative vanishes at the closed form") {
        const std::vector<double> d = full_interference_rhs(cf.q, p0);
        for (double v : d) CHECK(std::abs(v) < 1e-12);
    }
    SUBCASE("all mass at level 0") {
        std::vector<double> q(65, 0.0);
        q[0] = 1.0;
        const std::vector<double> d = full_interference_rhs(q, p0);
        const double e = std::exp(-p0);
        const double clear = 1.0 / (2.0 - e);
        CHECK(d[0] == doctest::Approx(clear * (p0 * e - p0)).epsilon(1e-13));
        CHECK(d[1] == doctest::Approx(clear * p0 * (1.0 - e)).epsilon(1e-13));
    }
    SUBCASE("conservation") {
        std::mt19937_64 gen(5);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::vector<double> q(65);
        double s = 0.0;
        for (double& v : q) s += (v = u(gen));
        for (double& v : q) v /= s;
        const std::vector<double> d = full_interference_rhs(q, p0);
        double ds = 0.0;
        for (double v : d) ds += v;
        CHECK(std::abs(ds) < 1e-15);
    }
}

TEST_CASE("monotone attraction toward the full-interference equilibrium") {
    // light version of the global-stability check (the acceptance suite runs
    // the full 20-trajectory sweep)
    const NetworkSpec spec = single_class();
    const ClassMixture qst = closed_form_mixture(spec);
    const ClosedFormFullInterference cf = closed_form_full_interference(spec.p0);
    std::mt19937_64 gen(31);
    for (int rep = 0; rep < 5; ++rep) {
        const ClassMixture q0 = random_mixture(spec, gen, 4);
        const Trajectory traj = integrate(q0, 10000.0, spec);
        CHECK(tv_distance(traj.states.back(), qst) < 1e-6);
        CHECK(std::abs(rho_of(traj.states.back(), spec)[0] - cf.rho_st) < 1e-6);
        CHECK(traj.max_conservation_drift < 1e-8);
    }
}

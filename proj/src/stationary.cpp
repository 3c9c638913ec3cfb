#include "csma/stationary.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

namespace csma {

namespace {

// splitmix64, used for the deterministic probe initializations.
std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

double u01(std::uint64_t& state) {
    state = mix64(state);
    return static_cast<double>(state >> 11) * 0x1.0p-53;
}

struct IterationOutcome {
    RhoVector rho;
    bool converged = false;
    int iterations = 0;
    double last_update = 0.0;
    std::vector<double> trace;
};

IterationOutcome iterate(const NetworkSpec& spec, const RhoVector& rho0,
                         const FixedPointOptions& opts) {
    IterationOutcome out;
    out.rho = rho0;
    for (int it = 0; it < opts.max_iter; ++it) {
        const EnvKernel K = build_kernel(out.rho, spec, KernelMode::Consistent);
        const EnvStationary st = stationary_dist(K);
        const GHI env = ghi(st, out.rho, spec);

        ClassMixture Q = spec.policy.exponential ? exp_backoff_geometric(env, spec).first
                                                 : level_chain_solve(env, spec);
        const RhoVector target = rho_of(Q, spec);

        double delta = 0.0;
        for (std::size_t c = 0; c < out.rho.size(); ++c) {
            const double next = (1.0 - opts.damping) * out.rho[c] + opts.damping * target[c];
            delta = std::max(delta, std::abs(next - out.rho[c]));
            out.rho[c] = next;
        }
        out.trace.push_back(delta);
        out.iterations = it + 1;
        out.last_update = delta;
        if (delta < opts.tol) {
            out.converged = true;
            break;
        }
    }
    return out;
}

}  // namespace

std::pair<ClassMixture, RhoVector> exp_backoff_geometric(const GHI& env, const NetworkSpec& spec) {
    const int n_max = spec.n_max;
    ClassMixture Q(spec.class_count(), n_max + 1);
    RhoVector rho(spec.class_count(), 0.0);
    for (std::size_t c = 0; c < spec.class_count(); ++c) {
        const double mu = spec.mu[c];
        if (mu == 0.0) continue;
        const double G = env.G[c], H = env.H[c], I = env.I[c];
        if (!(G > H))
            throw GHInfeasibleError("exponential geometric form requires H_c < G_c (got G/I <= 1/2)");
        const double ratio = 2.0 * H / I;
        const double head = mu * (G - H) / I;
        double r_pow = 1.0;
        for (int n = 0; n < n_max; ++n) {
            Q.at(c, n) = head * r_pow;
            r_pow *= ratio;
        }
        Q.at(c, n_max) = mu * r_pow;  // geometric tail folded into the last level
        double s = 0.0;
        for (int n = 0; n <= n_max; ++n) s += spec.policy.levels[n] * Q.at(c, n);
        rho[c] = s;
    }
    return {std::move(Q), std::move(rho)};
}

ClassMixture level_chain_solve(const GHI& env, const NetworkSpec& spec) {
    const int K = spec.level_count();
    ClassMixture Q(spec.class_count(), K);
    Eigen::MatrixXd M(K, K);
    Eigen::VectorXd rhs(K);
    for (std::size_t c = 0; c < spec.class_count(); ++c) {
        if (spec.mu[c] == 0.0) continue;
        const double G = env.G[c], H = env.H[c];
        M.setZero();
        for (int m = 0; m < K; ++m) {
            M(spec.policy.success_map[m], m) += G;
            M(spec.policy.collision_map[m], m) += H;
            M(m, m) -= G + H;
        }
        // Replace one balance row (they sum to zero) with the mass constraint
        // sum_n y_n / p_n = mu_c.
        for (int m = 0; m < K; ++m) M(0, m) = 1.0 / spec.policy.levels[m];
        rhs.setZero();
        rhs(0) = spec.mu[c];
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(M);
        Eigen::VectorXd y = lu.solve(rhs);
        y += lu.solve(rhs - M * y);
        if ((M * y - rhs).cwiseAbs().maxCoeff() > 1e-8 * (1.0 + spec.mu[c]))
            throw std::runtime_error("level_chain_solve: singular level balance system");
        for (int n = 0; n < K; ++n) Q.at(c, n) = y(n) / spec.policy.levels[n];
    }
    return Q;
}

ClosedFormFullInterference closed_form_full_interference(double p0, int n_max) {
    const double ln2 = std::numbers::ln2;
    if (!(p0 > 0.0 && p0 < ln2))
        throw std::domain_error("closed_form_full_interference requires 0 < p0 < ln 2");
    if (n_max < 0) throw std::invalid_argument("n_max must be >= 0");

    const auto f = [p0](double r) { return p0 * std::exp(r) + r - 2.0 * p0; };
    double lo = 0.0, hi = ln2;
    for (int i = 0; i < 200 && hi - lo > 1e-17; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0)
            hi = mid;
        else
            lo = mid;
    }
    ClosedFormFullInterference out;
    out.rho_st = 0.5 * (lo + hi);
    out.root_residual = std::abs(f(out.rho_st));

    const double q0 = out.rho_st * std::exp(-out.rho_st) / p0;
    const double ratio = 2.0 * -std::expm1(-out.rho_st);  // < 1 since rho_st < ln 2
    out.q.resize(n_max + 1);
    double r_pow = 1.0;
    for (int n = 0; n < n_max; ++n) {
        out.q[n] = q0 * r_pow;
        r_pow *= ratio;
    }
    out.q[n_max] = q0 * r_pow / (1.0 - ratio);  // tail mass
    return out;
}

std::vector<double> throughput(const EnvStationary& st, const RhoVector& rho,
                               const NetworkSpec& spec) {
    if (rho.size() != spec.class_count())
        throw std::invalid_argument("throughput: rho dimension does not match the spec");
    const auto V = spec.neighbors();
    const long long S = env_state_count(spec);
    if (st.pi.size() != S)
        throw std::invalid_argument("throughput: stationary vector does not match the spec");

    std::vector<double> gamma(spec.class_count(), 0.0);
    for (long long zi = 0; zi < S; ++zi) {
        const double w = st.pi(zi);
        if (w == 0.0) continue;
        const std::vector<int> z = env_decode(zi, spec.class_count());
        for (std::size_t c = 0; c < spec.class_count(); ++c) {
            if (!clear_to_send(z, static_cast<int>(c), V)) continue;
            double prod = 1.0;
            for (int d : V[c])
                if (clear_to_send(z, d, V)) prod *= std::exp(-rho[d]);
            gamma[c] += w * spec.L * rho[c] * prod;
        }
    }
    return gamma;
}

FixedPointResult solve_fixed_point(const NetworkSpec& spec, FixedPointOptions opts) {
    if (!(opts.damping > 0.0 && opts.damping <= 1.0))
        throw std::invalid_argument("solve_fixed_point: damping must lie in (0,1]");
    if (!(opts.tol > 0.0)) throw std::invalid_argument("solve_fixed_point: tol must be > 0");

    RhoVector rho0(spec.class_count());
    for (std::size_t c = 0; c < spec.class_count(); ++c) rho0[c] = spec.p0 * spec.mu[c] / 2.0;

    IterationOutcome main = iterate(spec, rho0, opts);

    FixedPointResult res;
    res.rho = main.rho;
    res.converged = main.converged;
    res.iterations = main.iterations;
    res.last_update = main.last_update;
    res.update_trace = std::move(main.trace);

    // Final consistent pass at the converged rho.
    const EnvKernel K = build_kernel(res.rho, spec, KernelMode::Consistent);
    res.pi = stationary_dist(K);
    res.env = ghi(res.pi, res.rho, spec);
    res.Q = spec.policy.exponential ? exp_backoff_geometric(res.env, spec).first
                                    : level_chain_solve(res.env, spec);
    const RhoVector target = rho_of(res.Q, spec);
    for (std::size_t c = 0; c < target.size(); ++c)
        res.residual = std::max(res.residual, std::abs(res.rho[c] - target[c]));
    res.gamma = throughput(res.pi, res.rho, spec);

    if (spec.policy.exponential) {
        for (std::size_t c = 0; c < spec.class_count(); ++c) {
            if (spec.mu[c] == 0.0) continue;
            const double big = spec.p0 * spec.mu[c] * (res.env.G[c] - res.env.H[c]) / res.env.G[c];
            res.big_identity_residual =
                std::max(res.big_identity_residual, std::abs(res.rho[c] - big));
            res.truncation_tail_mass = std::max(res.truncation_tail_mass, res.Q.at(c, spec.n_max));
        }
    }

    if (opts.probe_initializations > 0 && res.converged) {
        std::uint64_t state = opts.probe_seed;
        double spread = 0.0;
        for (int p = 0; p < opts.probe_initializations; ++p) {
            RhoVector r0(spec.class_count());
            for (std::size_t c = 0; c < spec.class_count(); ++c)
                r0[c] = spec.p0 * spec.mu[c] * u01(state);
            const IterationOutcome probe = iterate(spec, r0, opts);
            if (!probe.converged) continue;
            for (std::size_t c = 0; c < spec.class_count(); ++c)
                spread = std::max(spread, std::abs(probe.rho[c] - res.rho[c]));
        }
        res.probe_spread = spread;
    }
    return res;
}

}  // namespace csma

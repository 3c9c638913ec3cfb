#include "csma/meanfield.hpp"

#include <cmath>
#include <stdexcept>

namespace csma {

const GHI& EnvCache::ghi_for(const RhoVector& rho) {
    std::vector<long long> key(rho.size());
    for (std::size_t i = 0; i < rho.size(); ++i) key[i] = std::llround(rho[i] * 1e12);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    if (cache_.size() > 4096) cache_.clear();
    const EnvKernel K = build_kernel(rho, *spec_, KernelMode::Consistent);
    const EnvStationary st = stationary_dist(K);
    return cache_.emplace(std::move(key), ghi(st, rho, *spec_)).first->second;
}

MeanRates mean_rates(const ClassMixture& mix, const NetworkSpec& spec, EnvCache* cache) {
    EnvCache local(spec);
    EnvCache& env = cache ? *cache : local;
    const GHI& g = env.ghi_for(rho_of(mix, spec));

    MeanRates r;
    r.n_classes = spec.class_count();
    r.n_levels = spec.level_count();
    r.fs.resize(r.n_classes * r.n_levels);
    r.fc.resize(r.n_classes * r.n_levels);
    for (std::size_t c = 0; c < r.n_classes; ++c)
        for (int n = 0; n < r.n_levels; ++n) {
            r.fs[c * r.n_levels + n] = spec.policy.levels[n] * g.G[c];
            r.fc[c * r.n_levels + n] = spec.policy.levels[n] * g.H[c];
        }
    return r;
}

ClassMixture ode_rhs(const ClassMixture& mix, const NetworkSpec& spec, EnvCache* cache) {
    EnvCache local(spec);
    EnvCache& env = cache ? *cache : local;
    const GHI& g = env.ghi_for(rho_of(mix, spec));

    const int K = spec.level_count();
    ClassMixture d(spec.class_count(), K);
    for (std::size_t c = 0; c < spec.class_count(); ++c) {
        const double G = g.G[c], H = g.H[c];
        for (int n = 0; n < K; ++n) {
            const double flow = spec.policy.levels[n] * mix.at(c, n);
            d.at(c, n) -= flow * (G + H);
            d.at(c, spec.policy.success_map[n]) += flow * G;
            d.at(c, spec.policy.collision_map[n]) += flow * H;
        }
    }
    return d;
}

namespace {

void clamp_negatives(ClassMixture& q, const NetworkSpec& spec) {
    for (std::size_t c = 0; c < q.n_classes; ++c) {
        bool clamped = false;
        for (int n = 0; n < q.n_levels; ++n) {
            double& v = q.at(c, n);
            if (v < 0.0) {
                if (v < -1e-12)
                    throw std::runtime_error("integrate: negative mass beyond tolerance");
                v = 0.0;
                clamped = true;
            }
        }
        if (clamped && spec.mu[c] > 0.0) {
            double s = 0.0;
            for (int n = 0; n < q.n_levels; ++n) s += q.at(c, n);
            if (s > 0.0) {
                const double scale = spec.mu[c] / s;
                for (int n = 0; n < q.n_levels; ++n) q.at(c, n) *= scale;
            }
        }
    }
}

}  // namespace

Trajectory integrate(const ClassMixture& q0, double T, const NetworkSpec& spec,
                     IntegrateOptions opts, EnvCache* cache) {
    if (!(T > 0.0)) throw std::invalid_argument("integrate: T must be > 0");
    if (!(opts.dt > 0.0) || opts.dt > 0.1 / spec.p0 + 1e-15)
        throw std::invalid_argument("integrate: dt must lie in (0, 0.1/p0]");

    EnvCache local(spec);
    EnvCache& env = cache ? *cache : local;

    const long long steps = static_cast<long long>(std::ceil(T / opts.dt - 1e-9));
    const long long stride = std::max<long long>(1, steps / std::max<long long>(1, opts.max_samples - 1));

    Trajectory traj;
    traj.dt = opts.dt;
    traj.steps = steps;
    traj.times.push_back(0.0);
    traj.states.push_back(q0);

    ClassMixture q = q0;
    const int K = spec.level_count();
    for (long long s = 0; s < steps; ++s) {
        const double h = opts.dt;
        const ClassMixture k1 = ode_rhs(q, spec, &env);
        ClassMixture tmp = q;
        for (std::size_t i = 0; i < q.q.size(); ++i) tmp.q[i] = q.q[i] + 0.5 * h * k1.q[i];
        const ClassMixture k2 = ode_rhs(tmp, spec, &env);
        for (std::size_t i = 0; i < q.q.size(); ++i) tmp.q[i] = q.q[i] + 0.5 * h * k2.q[i];
        const ClassMixture k3 = ode_rhs(tmp, spec, &env);
        for (std::size_t i = 0; i < q.q.size(); ++i) tmp.q[i] = q.q[i] + h * k3.q[i];
        const ClassMixture k4 = ode_rhs(tmp, spec, &env);
        for (std::size_t i = 0; i < q.q.size(); ++i)
            q.q[i] += h / 6.0 * (k1.q[i] + 2.0 * k2.q[i] + 2.0 * k3.q[i] + k4.q[i]);

        clamp_negatives(q, spec);
        for (double v : q.q)
            if (!std::isfinite(v)) throw std::runtime_error("integrate: trajectory blew up");

        for (std::size_t c = 0; c < q.n_classes; ++c) {
            double sum = 0.0;
            for (int n = 0; n < K; ++n) sum += q.at(c, n);
            traj.max_conservation_drift =
                std::max(traj.max_conservation_drift, std::abs(sum - spec.mu[c]));
        }
        if ((s + 1) % stride == 0 || s + 1 == steps) {
            traj.times.push_back((s + 1) * h);
            traj.states.push_back(q);
        }
    }
    return traj;
}

std::vector<double> full_interference_rhs(std::span<const double> q, double p0) {
    if (!(p0 > 0.0 && p0 <= 1.0))
        throw std::invalid_argument("full_interference_rhs: p0 must lie in (0,1]");
    const int K = static_cast<int>(q.size());
    if (K == 0) throw std::invalid_argument("full_interference_rhs: empty level distribution");

    double rho = 0.0;
    std::vector<double> pn(K);
    for (int n = 0; n < K; ++n) {
        pn[n] = p0 * std::exp2(-static_cast<double>(n));
        rho += pn[n] * q[n];
    }
    const double e = std::exp(-rho);
    const double clear_prob = 1.0 / (2.0 - e);  // pi(idle) of the 3-state chain at L = Lc = 1
    const double G = clear_prob * e;
    const double H = clear_prob * -std::expm1(-rho);

    std::vector<double> d(K, 0.0);
    double success_in = 0.0;
    for (int n = 0; n < K; ++n) {
        const double flow = pn[n] * q[n];
        d[n] -= flow * (G + H);
        success_in += flow * G;
        d[std::min(n + 1, K - 1)] += flow * H;  // collision map saturates at the last level
    }
    d[0] += success_in;
    return d;
}

}  // namespace csma

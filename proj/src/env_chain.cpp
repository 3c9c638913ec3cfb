#include "csma/env_chain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace csma {

long long env_state_count(const NetworkSpec& spec, long long cap) {
    long long n = 1;
    for (std::size_t c = 0; c < spec.class_count(); ++c) {
        n *= 3;
        if (n > cap)
            throw std::invalid_argument("environment state space exceeds the configured cap");
    }
    return n;
}

std::vector<int> env_decode(long long idx, std::size_t n_classes) {
    std::vector<int> z(n_classes, 0);
    for (std::size_t c = n_classes; c-- > 0;) {
        z[c] = static_cast<int>(idx % 3);
        idx /= 3;
    }
    return z;
}

long long env_encode(std::span<const int> z) {
    long long idx = 0;
    for (int v : z) idx = idx * 3 + v;
    return idx;
}

bool clear_to_send(std::span<const int> z, int c, const std::vector<std::vector<int>>& neighbors) {
    for (int d : neighbors[c])
        if (z[d] != 0) return false;
    return true;
}

AttemptProfile attempt_profile(double rho_c) {
    if (rho_c < 0.0 || !std::isfinite(rho_c))
        throw std::invalid_argument("attempt_profile: rho must be finite and >= 0");
    const double e = std::exp(-rho_c);
    double two_plus;
    if (rho_c < 1e-3) {
        // 1 - (1+r)e^-r = r^2/2 - r^3/3 + r^4/8 - r^5/30 + ...
        const double r = rho_c;
        two_plus = r * r * (0.5 - r * (1.0 / 3.0) + r * r * 0.125 - r * r * r / 30.0);
    } else {
        two_plus = 1.0 - (1.0 + rho_c) * e;
    }
    return {e, rho_c * e, std::max(two_plus, 0.0)};
}

namespace {

struct Ctx {
    std::size_t n_classes;
    long long n_states;
    std::vector<std::vector<int>> V;
};

Ctx make_ctx(const NetworkSpec& spec) {
    return {spec.class_count(), env_state_count(spec), spec.neighbors()};
}

// Distribution of the attempt outcome over the clear classes of z. Classes not
// clear at z draw no attempts. Returned as (state-delta on clear coords) mass.
void accumulate_attempt_outcomes(const Ctx& ctx, const RhoVector& rho, const std::vector<int>& z,
                                 std::vector<std::pair<std::vector<int>, double>>& out) {
    std::vector<int> clear;
    for (std::size_t c = 0; c < ctx.n_classes; ++c)
        if (z[c] == 0 && clear_to_send(z, static_cast<int>(c), ctx.V)) clear.push_back((int)c);

    const std::size_t k = clear.size();
    std::vector<AttemptProfile> prof(k);
    for (std::size_t i = 0; i < k; ++i) prof[i] = attempt_profile(rho[clear[i]]);

    std::vector<int> cat(k, 0);
    std::vector<int> pos(ctx.n_classes, -1);
    for (std::size_t i = 0; i < k; ++i) pos[clear[i]] = static_cast<int>(i);

    // Enumerate all 3^k attempt-category vectors (none / one / two-plus).
    while (true) {
        double p = 1.0;
        for (std::size_t i = 0; i < k; ++i)
            p *= (cat[i] == 0 ? prof[i].none : cat[i] == 1 ? prof[i].one : prof[i].two_plus);
        if (p > 0.0) {
            std::vector<int> res(k, 0);
            for (std::size_t i = 0; i < k; ++i) {
                if (cat[i] == 0) continue;
                bool neighbor_attempt = false;
                for (int d : ctx.V[clear[i]]) {
                    if (d == clear[i]) continue;
                    int j = pos[d];
                    if (j >= 0 && cat[j] >= 1) {
                        neighbor_attempt = true;
                        break;
                    }
                }
                res[i] = (cat[i] >= 2 || neighbor_attempt) ? 2 : 1;
            }
            std::vector<int> delta(ctx.n_classes, 0);
            for (std::size_t i = 0; i < k; ++i) delta[clear[i]] = res[i];
            bool merged = false;
            for (auto& [d, q] : out)
                if (d == delta) {
                    q += p;
                    merged = true;
                    break;
                }
            if (!merged) out.emplace_back(std::move(delta), p);
        }
        std::size_t i = 0;
        for (; i < k; ++i) {
            if (++cat[i] < 3) break;
            cat[i] = 0;
        }
        if (i == k) break;
    }
}

Eigen::MatrixXd build_consistent(const Ctx& ctx, const RhoVector& rho, const NetworkSpec& spec) {
    const long long S = ctx.n_states;
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(S, S);
    std::vector<std::pair<std::vector<int>, double>> outcomes;
    for (long long zi = 0; zi < S; ++zi) {
        const std::vector<int> z = env_decode(zi, ctx.n_classes);
        std::vector<int> active;
        for (std::size_t c = 0; c < ctx.n_classes; ++c)
            if (z[c] != 0) active.push_back(static_cast<int>(c));

        outcomes.clear();
        accumulate_attempt_outcomes(ctx, rho, z, outcomes);

        // Departure patterns over active classes; attempts are gated on the
        // pre-slot state, so the two blocks touch disjoint coordinates.
        const std::size_t a = active.size();
        for (std::uint32_t mask = 0; mask < (1u << a); ++mask) {
            double pd = 1.0;
            for (std::size_t i = 0; i < a; ++i) {
                const double end = (z[active[i]] == 1) ? 1.0 / spec.L : 1.0 / spec.Lc;
                pd *= (mask >> i & 1u) ? end : 1.0 - end;
            }
            std::vector<int> base = z;
            for (std::size_t i = 0; i < a; ++i)
                if (mask >> i & 1u) base[active[i]] = 0;
            for (const auto& [delta, pa] : outcomes) {
                std::vector<int> fin = base;
                for (std::size_t c = 0; c < ctx.n_classes; ++c)
                    if (z[c] == 0 && delta[c] != 0) fin[c] = delta[c];
                K(zi, env_encode(fin)) += pd * pa;
            }
        }
    }
    return K;
}

Eigen::MatrixXd build_verbatim(const Ctx& ctx, const RhoVector& rho, const NetworkSpec& spec) {
    const long long S = ctx.n_states;
    const std::size_t C = ctx.n_classes;
    // Symmetrized interference relation, used to split newly colliding classes
    // into joint collision events.
    std::vector<std::vector<char>> sym(C, std::vector<char>(C, 0));
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t d = 0; d < C; ++d)
            sym[c][d] = (spec.adjacency[c][d] || spec.adjacency[d][c]) ? 1 : 0;

    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(S, S);
    for (long long zi = 0; zi < S; ++zi) {
        const std::vector<int> z = env_decode(zi, C);
        std::vector<char> clr(C);
        for (std::size_t c = 0; c < C; ++c)
            clr[c] = clear_to_send(z, static_cast<int>(c), ctx.V) ? 1 : 0;
        for (long long zj = 0; zj < S; ++zj) {
            const std::vector<int> zp = env_decode(zj, C);
            double p = 1.0;
            bool feasible = true;
            std::vector<int> colliding;
            for (std::size_t c = 0; c < C && feasible; ++c) {
                const int a = z[c], b = zp[c];
                if (a == 0 && b == 0) {
                    p *= clr[c] ? std::exp(-rho[c]) : 1.0;
                } else if (a == 0 && b == 1) {
                    p *= clr[c] ? rho[c] * std::exp(-rho[c]) : 0.0;
                } else if (a == 0 && b == 2) {
                    colliding.push_back(static_cast<int>(c));
                } else if (a == 1 && b == 0) {
                    p *= 1.0 / spec.L;
                } else if (a == 1 && b == 1) {
                    p *= 1.0 - 1.0 / spec.L;
                } else if (a == 2 && b == 0) {
                    p *= 1.0 / spec.Lc;
                } else if (a == 2 && b == 2) {
                    p *= 1.0 - 1.0 / spec.Lc;
                } else {
                    feasible = false;
                }
            }
            if (!feasible || p == 0.0) continue;
            // A2 events: connected components of the colliding set.
            std::vector<char> seen(C, 0);
            for (int c : colliding) {
                if (seen[c]) continue;
                std::vector<int> comp{c};
                seen[c] = 1;
                for (std::size_t head = 0; head < comp.size(); ++head)
                    for (int d : colliding)
                        if (!seen[d] && sym[comp[head]][d]) {
                            seen[d] = 1;
                            comp.push_back(d);
                        }
                if (comp.size() == 1) {
                    p *= clr[c] ? attempt_profile(rho[c]).two_plus : 0.0;
                } else {
                    for (int d : comp) p *= clr[d] ? -std::expm1(-rho[d]) : 0.0;
                }
            }
            if (p != 0.0) K(zi, zj) = p;
        }
    }
    return K;
}

}  // namespace

EnvKernel build_kernel(const RhoVector& rho, const NetworkSpec& spec, KernelMode mode) {
    if (rho.size() != spec.class_count())
        throw std::invalid_argument("build_kernel: rho dimension does not match the spec");
    for (double r : rho)
        if (r < 0.0 || !std::isfinite(r))
            throw std::invalid_argument("build_kernel: rho must be finite and >= 0");

    const Ctx ctx = make_ctx(spec);
    EnvKernel k;
    k.mode = mode;
    k.rho = rho;
    k.P = (mode == KernelMode::Consistent) ? build_consistent(ctx, rho, spec)
                                           : build_verbatim(ctx, rho, spec);
    double dev = 0.0;
    for (long long i = 0; i < k.P.rows(); ++i) dev = std::max(dev, std::abs(k.P.row(i).sum() - 1.0));
    k.max_row_sum_deviation = dev;
    return k;
}

EnvStationary stationary_dist(const EnvKernel& kernel) {
    Eigen::MatrixXd P = kernel.P;
    const long long S = P.rows();
    if (kernel.mode == KernelMode::Verbatim) {
        for (long long i = 0; i < S; ++i) {
            const double s = P.row(i).sum();
            if (s > 0.0) P.row(i) /= s;
        }
    }

    // Recurrent class reachable from the all-idle state (index 0). Departures
    // always succeed with positive probability, so this set is closed and
    // communicating for the consistent kernel.
    std::vector<long long> reach;
    {
        std::vector<char> seen(S, 0);
        seen[0] = 1;
        reach.push_back(0);
        for (std::size_t head = 0; head < reach.size(); ++head) {
            const long long i = reach[head];
            for (long long j = 0; j < S; ++j)
                if (!seen[j] && P(i, j) > 0.0) {
                    seen[j] = 1;
                    reach.push_back(j);
                }
        }
        std::sort(reach.begin(), reach.end());
    }

    const long long n = static_cast<long long>(reach.size());
    Eigen::MatrixXd M(n, n);
    for (long long a = 0; a < n; ++a)
        for (long long b = 0; b < n; ++b) M(a, b) = P(reach[b], reach[a]);  // K^T
    M -= Eigen::MatrixXd::Identity(n, n);
    M.row(0).setOnes();  // normalization replaces one balance row
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    rhs(0) = 1.0;

    Eigen::PartialPivLU<Eigen::MatrixXd> lu(M);
    Eigen::VectorXd x = lu.solve(rhs);
    x += lu.solve(rhs - M * x);  // one refinement step

    EnvStationary st;
    st.pi = Eigen::VectorXd::Zero(S);
    for (long long a = 0; a < n; ++a) st.pi(reach[a]) = x(a);
    st.residual_l1 = (st.pi.transpose() * P - st.pi.transpose()).cwiseAbs().sum();
    return st;
}

GHI ghi(const EnvStationary& st, const RhoVector& rho, const NetworkSpec& spec) {
    if (rho.size() != spec.class_count())
        throw std::invalid_argument("ghi: rho dimension does not match the spec");
    const Ctx ctx = make_ctx(spec);
    if (st.pi.size() != ctx.n_states)
        throw std::invalid_argument("ghi: stationary vector does not match the spec");

    GHI r;
    r.G.assign(ctx.n_classes, 0.0);
    r.H.assign(ctx.n_classes, 0.0);
    r.I.assign(ctx.n_classes, 0.0);
    for (long long zi = 0; zi < ctx.n_states; ++zi) {
        const double w = st.pi(zi);
        if (w == 0.0) continue;
        const std::vector<int> z = env_decode(zi, ctx.n_classes);
        std::vector<char> clr(ctx.n_classes);
        for (std::size_t c = 0; c < ctx.n_classes; ++c)
            clr[c] = clear_to_send(z, static_cast<int>(c), ctx.V) ? 1 : 0;
        for (std::size_t c = 0; c < ctx.n_classes; ++c) {
            if (!clr[c]) continue;
            double prod = 1.0;
            for (int d : ctx.V[c])
                if (clr[d]) prod *= std::exp(-rho[d]);
            r.G[c] += w * prod;
            r.H[c] += w * (1.0 - prod);
            r.I[c] += w;
        }
    }
    return r;
}

DominationReport domination_check(const NetworkSpec& spec, int grid_points_per_class) {
    const Ctx ctx = make_ctx(spec);
    const long long S = ctx.n_states;
    const std::size_t C = ctx.n_classes;

    DominationReport rep;
    rep.grid_points_per_class = grid_points_per_class;
    rep.worst_margin = std::numeric_limits<double>::infinity();

    // Dominating kernel: idle clear classes activate surely; active classes
    // depart at their usual rates; idle blocked classes stay idle.
    Eigen::MatrixXd Kd = Eigen::MatrixXd::Zero(S, S);
    for (long long zi = 0; zi < S; ++zi) {
        const std::vector<int> z = env_decode(zi, C);
        std::vector<std::vector<std::pair<int, double>>> per_class(C);
        for (std::size_t c = 0; c < C; ++c) {
            if (z[c] == 0) {
                if (clear_to_send(z, static_cast<int>(c), ctx.V))
                    per_class[c] = {{1, 1.0}};
                else
                    per_class[c] = {{0, 1.0}};
            } else {
                const double end = (z[c] == 1) ? 1.0 / spec.L : 1.0 / spec.Lc;
                per_class[c] = {{0, end}, {z[c], 1.0 - end}};
            }
        }
        std::vector<std::pair<std::vector<int>, double>> acc{{std::vector<int>{}, 1.0}};
        for (std::size_t c = 0; c < C; ++c) {
            std::vector<std::pair<std::vector<int>, double>> next;
            for (const auto& [prefix, p] : acc)
                for (const auto& [v, q] : per_class[c]) {
                    auto np = prefix;
                    np.push_back(v);
                    next.emplace_back(std::move(np), p * q);
                }
            acc = std::move(next);
        }
        for (const auto& [zz, p] : acc) Kd(zi, env_encode(zz)) += p;
    }

    // Positive recurrence: the class reachable from all-idle must be strongly
    // connected (finite chain, positive recurrent on that class).
    {
        auto reachable = [&](const Eigen::MatrixXd& M, long long from,
                             const std::vector<char>* within) {
            std::vector<char> seen(S, 0);
            std::vector<long long> stack{from};
            seen[from] = 1;
            while (!stack.empty()) {
                long long i = stack.back();
                stack.pop_back();
                for (long long j = 0; j < S; ++j)
                    if (!seen[j] && M(i, j) > 0.0 && (!within || (*within)[j])) {
                        seen[j] = 1;
                        stack.push_back(j);
                    }
            }
            return seen;
        };
        std::vector<char> fwd = reachable(Kd, 0, nullptr);
        Eigen::MatrixXd KdT = Kd.transpose();
        std::vector<char> bwd = reachable(KdT, 0, &fwd);
        bool strongly_connected = true;
        for (long long i = 0; i < S; ++i)
            if (fwd[i] && !bwd[i]) strongly_connected = false;
        rep.dominating_chain_positive_recurrent = strongly_connected;
    }

    // Up-set masses depend on the active support only: w >= z1 iff w is active
    // wherever z1 is active.
    std::vector<std::uint32_t> active_mask(S, 0);
    for (long long zi = 0; zi < S; ++zi) {
        const std::vector<int> z = env_decode(zi, C);
        for (std::size_t c = 0; c < C; ++c)
            if (z[c] != 0) active_mask[zi] |= 1u << c;
    }

    rep.domination_holds = true;
    std::vector<double> grid_axis(grid_points_per_class);
    std::vector<std::size_t> idx(C, 0);
    const long long total_grid = [&] {
        long long t = 1;
        for (std::size_t c = 0; c < C; ++c) t *= grid_points_per_class;
        return t;
    }();
    for (long long g = 0; g < total_grid && rep.domination_holds; ++g) {
        long long rem = g;
        RhoVector rho(C);
        for (std::size_t c = 0; c < C; ++c) {
            const int k = static_cast<int>(rem % grid_points_per_class);
            rem /= grid_points_per_class;
            const double hi = spec.p0 * spec.mu[c];
            rho[c] = (grid_points_per_class == 1) ? 0.0 : hi * k / (grid_points_per_class - 1);
        }
        const EnvKernel K = build_kernel(rho, spec, KernelMode::Consistent);
        for (long long zi = 0; zi < S && rep.domination_holds; ++zi) {
            for (std::uint32_t sup = 0; sup < (1u << C); ++sup) {
                double mk = 0.0, md = 0.0;
                for (long long w = 0; w < S; ++w) {
                    if ((active_mask[w] & sup) == sup) {
                        mk += K.P(zi, w);
                        md += Kd(zi, w);
                    }
                }
                ++rep.checked_pairs;
                const double margin = md - mk;
                rep.worst_margin = std::min(rep.worst_margin, margin);
                if (margin < -1e-12) {
                    rep.domination_holds = false;
                    rep.first_violation_state = zi;
                    // report a representative lower-bound state for this support
                    std::vector<int> z1(C, 0);
                    for (std::size_t c = 0; c < C; ++c)
                        if (sup >> c & 1u) z1[c] = 1;
                    rep.first_violation_lower = env_encode(z1);
                    break;
                }
            }
        }
    }
    rep.pass = rep.domination_holds && rep.dominating_chain_positive_recurrent;
    return rep;
}

}  // namespace csma

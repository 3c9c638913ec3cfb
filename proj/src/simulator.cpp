#include "csma/simulator.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "csma/env_chain.hpp"
#include "csma/table.hpp"

namespace csma {

namespace {

constexpr std::uint32_t kDrawDepart = 0;
constexpr std::uint32_t kDrawAttempt = 1;
constexpr std::uint32_t kDrawClass = 2;

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Deterministic apportionment of `total` items over weights (largest
// remainder, ties to the lower index).
std::vector<int> apportion(const std::vector<double>& weights, int total) {
    const std::size_t n = weights.size();
    double wsum = 0.0;
    for (double w : weights) wsum += w;
    std::vector<int> out(n, 0);
    if (wsum <= 0.0 || total == 0) return out;
    std::vector<std::pair<double, std::size_t>> rem(n);
    int assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double exact = weights[i] / wsum * total;
        out[i] = static_cast<int>(exact);
        assigned += out[i];
        rem[i] = {exact - out[i], i};
    }
    std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (int k = 0; assigned < total; ++k, ++assigned) out[rem[k % n].second] += 1;
    return out;
}

}  // namespace

double Simulator::draw(std::uint32_t purpose, std::uint32_t user) const {
    std::uint64_t h = mix64(opts_.seed ^ 0x5851f42d4c957f2dull);
    h = mix64(h ^ static_cast<std::uint64_t>(slot_));
    h = mix64(h ^ (static_cast<std::uint64_t>(user) << 8 | purpose));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

Simulator::Simulator(const NetworkSpec& spec, SimOptions opts) : spec_(spec), opts_(opts) {
    if (opts_.n_users < 1) throw std::invalid_argument("simulator: N must be >= 1");
    if (!(opts_.burn_in >= 0.0 && opts_.burn_in < 1.0))
        throw std::invalid_argument("simulator: burn-in fraction must lie in [0,1)");
    const int N = opts_.n_users;
    const std::size_t C = spec_.class_count();
    V_ = spec_.neighbors();

    cls_.resize(N);
    if (opts_.assignment == SimOptions::ClassAssignment::Deterministic) {
        const std::vector<int> counts = apportion(spec_.mu, N);
        int u = 0;
        for (std::size_t c = 0; c < C; ++c)
            for (int k = 0; k < counts[c]; ++k) cls_[u++] = static_cast<int>(c);
    } else {
        std::vector<double> cdf(C);
        double acc = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            acc += spec_.mu[c];
            cdf[c] = acc;
        }
        for (int i = 0; i < N; ++i) {
            const double u = draw(kDrawClass, static_cast<std::uint32_t>(i)) * acc;
            cls_[i] = static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
            if (cls_[i] >= static_cast<int>(C)) cls_[i] = static_cast<int>(C) - 1;
        }
    }

    users_by_class_.assign(C, {});
    class_counts_.assign(C, 0);
    for (int i = 0; i < N; ++i) {
        users_by_class_[cls_[i]].push_back(i);
        class_counts_[cls_[i]] += 1;
    }

    const int K = spec_.level_count();
    level_.assign(N, 0);
    if (opts_.initial_levels) {
        const ClassMixture& init = *opts_.initial_levels;
        if (init.n_classes != C || init.n_levels != K)
            throw std::invalid_argument("simulator: initial level table does not match the spec");
        for (std::size_t c = 0; c < C; ++c) {
            std::vector<double> w(K);
            for (int n = 0; n < K; ++n) w[n] = init.at(c, n);
            const std::vector<int> per_level = apportion(w, class_counts_[c]);
            int k = 0;
            for (int n = 0; n < K; ++n)
                for (int j = 0; j < per_level[n]; ++j) level_[users_by_class_[c][k++]] = n;
        }
    }

    phase_.assign(N, 0);
    z_.assign(C, 0);
    succ_users_.assign(C, 0);
    coll_users_.assign(C, 0);
    level_counts_.assign(C * static_cast<std::size_t>(K), 0);
    for (int i = 0; i < N; ++i) level_counts_[cls_[i] * K + level_[i]] += 1;

    succ_slots_.assign(C, 0);
    coll_slots_.assign(C, 0);
    level_time_.assign(C * static_cast<std::size_t>(K), 0.0);
    if (opts_.tagged_i >= 0 && opts_.tagged_j >= 0 && opts_.tagged_i < N && opts_.tagged_j < N &&
        opts_.tagged_i != opts_.tagged_j)
        pair_counts_.assign(static_cast<std::size_t>(K) * K, 0);
    const long long S = [&] {
        long long s = 1;
        for (std::size_t c = 0; c < C && s <= 6561; ++c) s *= 3;
        return s;
    }();
    if (opts_.track_occupation && S <= 6561)
        occupation_.assign(C * static_cast<std::size_t>(K) * S, 0.0);
}

void Simulator::step() {
    const int N = opts_.n_users;
    const std::size_t C = spec_.class_count();
    const int K = spec_.level_count();
    const std::vector<int> zprev = z_;

    bool tagged_transition[2] = {false, false};

    // Activity ends: per-slot Bernoulli with rates 1/L and 1/Lc (memoryless
    // geometric durations). The level map applies at the end of the activity.
    for (int i = 0; i < N; ++i) {
        const int ph = phase_[i];
        if (ph == 0) continue;
        const double end = (ph == 1) ? 1.0 / spec_.L : 1.0 / spec_.Lc;
        if (draw(kDrawDepart, static_cast<std::uint32_t>(i)) < end) {
            const int c = cls_[i];
            level_counts_[c * K + level_[i]] -= 1;
            level_[i] = (ph == 1) ? spec_.policy.success_map[level_[i]]
                                  : spec_.policy.collision_map[level_[i]];
            level_counts_[c * K + level_[i]] += 1;
            phase_[i] = 0;
            (ph == 1 ? succ_users_ : coll_users_)[c] -= 1;
            if (i == opts_.tagged_i) tagged_transition[0] = true;
            if (i == opts_.tagged_j) tagged_transition[1] = true;
        }
    }

    // Attempts are gated on the previous slot's channel state: a class attempts
    // only if every class it senses was idle for that whole slot.
    static thread_local std::vector<int> attempt_count;
    static thread_local std::vector<int> attempters;
    attempt_count.assign(C, 0);
    attempters.clear();
    for (std::size_t c = 0; c < C; ++c) {
        if (!clear_to_send(zprev, static_cast<int>(c), V_)) continue;
        for (int i : users_by_class_[c]) {
            if (phase_[i] != 0) continue;
            const double p = spec_.policy.levels[level_[i]] / N;
            if (draw(kDrawAttempt, static_cast<std::uint32_t>(i)) < p) {
                attempt_count[c] += 1;
                attempters.push_back(i);
                if (i == opts_.tagged_i) tagged_transition[0] = true;
                if (i == opts_.tagged_j) tagged_transition[1] = true;
            }
        }
    }
    for (int i : attempters) {
        const int c = cls_[i];
        int in_neighborhood = 0;
        for (int d : V_[c]) in_neighborhood += attempt_count[d];
        if (in_neighborhood >= 2) {
            phase_[i] = 2;
            coll_users_[c] += 1;
        } else {
            phase_[i] = 1;
            succ_users_[c] += 1;
        }
    }

    for (std::size_t c = 0; c < C; ++c)
        z_[c] = coll_users_[c] > 0 ? 2 : succ_users_[c] > 0 ? 1 : 0;

    if (accumulating_) {
        sampled_ += 1;
        for (std::size_t c = 0; c < C; ++c) {
            if (z_[c] == 1) succ_slots_[c] += 1;
            if (z_[c] == 2) coll_slots_[c] += 1;
        }
        for (std::size_t x = 0; x < level_time_.size(); ++x)
            level_time_[x] += static_cast<double>(level_counts_[x]);
        if (!pair_counts_.empty())
            pair_counts_[static_cast<std::size_t>(level_[opts_.tagged_i]) * K +
                         level_[opts_.tagged_j]] += 1;
        if (!occupation_.empty()) {
            const long long zi = env_encode(z_);
            const long long S = static_cast<long long>(occupation_.size()) / (C * K);
            for (std::size_t x = 0; x < level_time_.size(); ++x)
                if (level_counts_[x] > 0)
                    occupation_[x * S + zi] += static_cast<double>(level_counts_[x]);
        }
        if (tagged_transition[0] && tagged_transition[1]) double_transition_slots_ += 1;
    }
    slot_ += 1;
}

bool Simulator::check_invariants() const {
    const std::size_t C = spec_.class_count();
    std::vector<int> succ(C, 0), coll(C, 0);
    for (int i = 0; i < opts_.n_users; ++i) {
        if (phase_[i] == 1) succ[cls_[i]] += 1;
        if (phase_[i] == 2) coll[cls_[i]] += 1;
        if (level_[i] < 0 || level_[i] >= spec_.level_count()) return false;
    }
    for (std::size_t c = 0; c < C; ++c) {
        if (succ[c] != succ_users_[c] || coll[c] != coll_users_[c]) return false;
        const int want = coll[c] > 0 ? 2 : succ[c] > 0 ? 1 : 0;
        if (z_[c] != want) return false;
        if (z_[c] == 1 && succ[c] != 1) return false;
    }
    return true;
}

SimReport Simulator::run(double T_meanfield) {
    if (!(T_meanfield > 0.0)) throw std::invalid_argument("simulator: T must be > 0");
    const long long slots =
        static_cast<long long>(std::ceil(T_meanfield * opts_.n_users - 1e-9));
    const long long burn = static_cast<long long>(slots * opts_.burn_in);

    for (long long k = 0; k < slots; ++k) {
        accumulating_ = (k >= burn);
        step();
    }

    const std::size_t C = spec_.class_count();
    const int K = spec_.level_count();
    SimReport rep;
    rep.seed = opts_.seed;
    rep.n_users = opts_.n_users;
    rep.T = T_meanfield;
    rep.slots = slots;
    rep.burn_in_slots = burn;
    rep.sample_slots = sampled_;
    rep.class_counts = class_counts_;
    rep.ghat.resize(C);
    rep.collision_share.resize(C);
    for (std::size_t c = 0; c < C; ++c) {
        rep.ghat[c] = static_cast<double>(succ_slots_[c]) / sampled_;
        rep.collision_share[c] = static_cast<double>(coll_slots_[c]) / sampled_;
    }
    rep.qhat = ClassMixture(C, K);
    rep.rho_hat.assign(C, 0.0);
    for (std::size_t c = 0; c < C; ++c)
        for (int n = 0; n < K; ++n) {
            const double q = level_time_[c * K + n] / (static_cast<double>(sampled_) * opts_.n_users);
            rep.qhat.at(c, n) = q;
            rep.rho_hat[c] += spec_.policy.levels[n] * q;
        }
    if (!pair_counts_.empty()) {
        rep.pair_levels = K;
        rep.pair_joint.resize(pair_counts_.size());
        for (std::size_t x = 0; x < pair_counts_.size(); ++x)
            rep.pair_joint[x] = static_cast<double>(pair_counts_[x]) / sampled_;
    }
    if (!occupation_.empty()) {
        rep.env_states = static_cast<long long>(occupation_.size()) / (C * K);
        rep.occupation = occupation_;
        const double total = static_cast<double>(sampled_) * opts_.n_users;
        for (double& v : rep.occupation) v /= total;
    }
    rep.tagged_double_transition_slots = double_transition_slots_;
    return rep;
}

double chaos_score_from_table(std::span<const double> joint, int levels) {
    const std::size_t n = static_cast<std::size_t>(levels);
    if (joint.size() != n * n) throw std::invalid_argument("chaos score: bad table shape");
    double total = 0.0;
    for (double v : joint) total += v;
    if (total <= 0.0) return 0.0;
    std::vector<double> mi(n, 0.0), mj(n, 0.0);
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) {
            const double v = joint[a * n + b] / total;
            mi[a] += v;
            mj[b] += v;
        }
    double score = 0.0;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b)
            score += std::abs(joint[a * n + b] / total - mi[a] * mj[b]);
    return score;
}

double chaos_score(const SimReport& report) {
    if (report.pair_joint.empty()) throw std::invalid_argument("chaos score: pair not tracked");
    return chaos_score_from_table(report.pair_joint, report.pair_levels);
}

OccupationDivergence occupation_check(const SimReport& report, const NetworkSpec& spec,
                                      double mass_threshold) {
    if (report.occupation.empty())
        throw std::invalid_argument("occupation_check: occupation table not tracked");
    const std::size_t C = spec.class_count();
    const int K = spec.level_count();
    const long long S = report.env_states;
    if (S != env_state_count(spec))
        throw std::invalid_argument("occupation_check: table does not match the spec");

    const EnvKernel kernel = build_kernel(report.rho_hat, spec, KernelMode::Consistent);
    const EnvStationary st = stationary_dist(kernel);

    OccupationDivergence out;
    out.mass_threshold = mass_threshold;
    out.per_state.assign(C * K, -1.0);
    out.state_mass.assign(C * K, 0.0);
    for (std::size_t x = 0; x < C * static_cast<std::size_t>(K); ++x) {
        double w = 0.0;
        for (long long zi = 0; zi < S; ++zi) w += report.occupation[x * S + zi];
        out.state_mass[x] = w;
        if (w < mass_threshold) continue;
        double l1 = 0.0;
        for (long long zi = 0; zi < S; ++zi)
            l1 += std::abs(report.occupation[x * S + zi] / w - st.pi(zi));
        out.per_state[x] = l1;
        out.max_over_threshold = std::max(out.max_over_threshold, l1);
    }
    return out;
}

std::string SimReport::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["n_users"] = n_users;
    j["T"] = round12(T);
    j["slots"] = slots;
    j["burn_in_slots"] = burn_in_slots;
    j["sample_slots"] = sample_slots;
    j["class_counts"] = class_counts;
    auto arr12 = [](const std::vector<double>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (double x : v) a.push_back(round12(x));
        return a;
    };
    j["ghat"] = arr12(ghat);
    j["collision_share"] = arr12(collision_share);
    j["rho_hat"] = arr12(rho_hat);
    nlohmann::json q = nlohmann::json::array();
    for (std::size_t c = 0; c < qhat.n_classes; ++c) {
        nlohmann::json row = nlohmann::json::array();
        for (int n = 0; n < qhat.n_levels; ++n) row.push_back(round12(qhat.at(c, n)));
        q.push_back(std::move(row));
    }
    j["qhat"] = std::move(q);
    j["tagged_double_transition_slots"] = tagged_double_transition_slots;
    return j.dump(2);
}

}  // namespace csma

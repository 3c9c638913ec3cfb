#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csma/model.hpp"

namespace csma {

struct SimOptions {
    int n_users = 1;
    std::uint64_t seed = 0;
    enum class ClassAssignment { Deterministic, IID } assignment = ClassAssignment::Deterministic;
    double burn_in = 0.2;  // fraction of slots discarded before averaging
    // Tagged pair for the dependence score; tracked when both indices < N.
    int tagged_i = 0;
    int tagged_j = 1;
    // Optional initial per-class level distribution (row c sums to mu_c);
    // default places every user at level 0.
    std::optional<ClassMixture> initial_levels;
    bool track_occupation = true;  // joint (class-level, environment) table
};

struct SimReport {
    std::uint64_t seed = 0;
    int n_users = 0;
    double T = 0.0;
    long long slots = 0;
    long long sample_slots = 0;  // post burn-in
    long long burn_in_slots = 0;

    std::vector<int> class_counts;
    std::vector<double> ghat;             // fraction of sampled slots with z_c == 1
    std::vector<double> collision_share;  // fraction with z_c == 2
    std::vector<double> rho_hat;          // sum_n p_n Qhat_c^n
    ClassMixture qhat;                    // time-averaged level occupancy

    // Tagged-pair joint level occupancy, row-major (levels x levels),
    // normalized to sum 1 over sampled slots. Empty when not tracked.
    std::vector<double> pair_joint;
    int pair_levels = 0;

    // Joint (class-level, environment-state) occupation, row-major
    // ((c * levels + n) x 3^|C|), user-mass weighted. Empty when not tracked.
    std::vector<double> occupation;
    long long env_states = 0;

    // Slots where both tagged users had a transition (attempt or activity end).
    long long tagged_double_transition_slots = 0;

    std::string to_json() const;
};

// Slot-level simulation of the finite N-user system. One deterministic
// counter-based RNG stream per run: every draw is keyed by (seed, slot, user,
// purpose), so identical inputs give bit-identical reports and draws do not
// depend on iteration order.
class Simulator {
public:
    Simulator(const NetworkSpec& spec, SimOptions opts);

    void step();
    SimReport run(double T_meanfield);

    // Channel-consistency invariant: z derived from user phases matches the
    // tracked per-class state. Used by tests after every step.
    bool check_invariants() const;

    long long slot() const { return slot_; }
    std::span<const int> z() const { return z_; }
    int user_level(int i) const { return level_[i]; }
    int user_phase(int i) const { return phase_[i]; }
    int user_class(int i) const { return cls_[i]; }
    const std::vector<int>& class_counts() const { return class_counts_; }

private:
    void resolve_attempts(std::vector<int>& attempters_scratch);
    double draw(std::uint32_t purpose, std::uint32_t user) const;

    const NetworkSpec spec_;
    SimOptions opts_;
    std::vector<std::vector<int>> V_;
    std::vector<std::vector<int>> users_by_class_;
    std::vector<int> class_counts_;

    long long slot_ = 0;
    std::vector<int> cls_;
    std::vector<int> level_;
    std::vector<int> phase_;  // 0 idle, 1 transmitting-success, 2 in-collision
    std::vector<int> z_;
    std::vector<int> succ_users_;  // per class, users in phase 1
    std::vector<int> coll_users_;  // per class, users in phase 2
    std::vector<long long> level_counts_;  // (c, n) occupancy

    // accumulation (post burn-in)
    bool accumulating_ = false;
    long long sampled_ = 0;
    std::vector<long long> succ_slots_, coll_slots_;
    std::vector<double> level_time_;
    std::vector<long long> pair_counts_;
    std::vector<double> occupation_;
    long long double_transition_slots_ = 0;
    bool tagged_hit_[2] = {false, false};
};

// Total-variation style dependence score of a joint level table against the
// product of its marginals. `joint` is row-major (levels x levels) and is
// normalized internally.
double chaos_score_from_table(std::span<const double> joint, int levels);
double chaos_score(const SimReport& report);

struct OccupationDivergence {
    // L1 distance between the empirical conditional law of the environment
    // given the user state (c, n) and pi at the empirical rho.
    std::vector<double> per_state;        // (c, n), -1 when below the mass threshold
    std::vector<double> state_mass;       // user-mass share of (c, n)
    double mass_threshold = 0.01;
    double max_over_threshold = 0.0;
};

OccupationDivergence occupation_check(const SimReport& report, const NetworkSpec& spec,
                                      double mass_threshold = 0.01);

}  // namespace csma

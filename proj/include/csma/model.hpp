#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace csma {

// Thrown by load_spec on malformed documents or invariant violations.
class SpecError : public std::runtime_error {
public:
    enum class Kind { Parse, Validation };

    SpecError(Kind kind, std::string message, std::vector<std::string> violations = {})
        : std::runtime_error(std::move(message)), kind_(kind), violations_(std::move(violations)) {}

    Kind kind() const { return kind_; }
    const std::vector<std::string>& violations() const { return violations_; }

private:
    Kind kind_;
    std::vector<std::string> violations_;
};

// Backoff policy over a finite ordered level set. Level n carries transmission
// probability levels[n]; levels[0] == p0 and the sequence is strictly
// decreasing. success_map / collision_map give the level reached after a
// successful transmission / a collision.
struct BackoffPolicy {
    std::vector<double> levels;
    std::vector<int> success_map;
    std::vector<int> collision_map;
    bool exponential = false;

    int level_count() const { return static_cast<int>(levels.size()); }

    // p_n = p0 * 2^-n, S(n) = 0, C(n) = min(n+1, n_max).
    static BackoffPolicy make_exponential(double p0, int n_max);

    bool operator==(const BackoffPolicy&) const = default;
};

struct NetworkSpec {
    std::vector<std::string> classes;
    std::vector<double> mu;                       // per-class user proportion, sums to 1
    std::vector<std::vector<int>> adjacency;      // 0/1, A[c][c] == 1
    double p0 = 0.0;
    double L = 1.0;                               // mean success duration, slots
    double Lc = 1.0;                              // mean collision duration, slots
    BackoffPolicy policy;
    int n_max = 64;

    std::size_t class_count() const { return classes.size(); }
    int level_count() const { return policy.level_count(); }

    // V_c = { d : A[c][d] == 1 }; includes c itself.
    std::vector<std::vector<int>> neighbors() const;

    bool operator==(const NetworkSpec&) const = default;
};

// Parse + validate a JSON config document. Unknown keys are rejected.
// Optional fields: "Lc" (defaults to L), "n_max" (defaults to 64),
// "policy" (defaults to "exponential"). mu is normalized to sum exactly to 1
// when the raw sum is within 1e-9 of 1; otherwise validation fails.
NetworkSpec load_spec(const std::string& json_text);
NetworkSpec load_spec_file(const std::string& path);

// Exact inverse of load_spec modulo the mu normalization (round-trip identity).
std::string serialize_spec(const NetworkSpec& spec);

// Returns one message per violated invariant; empty means valid.
std::vector<std::string> validate_spec(const NetworkSpec& spec);

// Per-(class, level) mass table. Row c sums to mu_c for a valid mixture.
struct ClassMixture {
    std::size_t n_classes = 0;
    int n_levels = 0;
    std::vector<double> q;   // q[c * n_levels + n]

    ClassMixture() = default;
    ClassMixture(std::size_t classes, int levels)
        : n_classes(classes), n_levels(levels), q(classes * static_cast<std::size_t>(levels), 0.0) {}

    double& at(std::size_t c, int n) { return q[c * n_levels + n]; }
    double at(std::size_t c, int n) const { return q[c * n_levels + n]; }

    static ClassMixture zeros(const NetworkSpec& spec) {
        return ClassMixture(spec.class_count(), spec.level_count());
    }
    // All of class c's mass mu_c at level 0.
    static ClassMixture all_at_level0(const NetworkSpec& spec);

    bool operator==(const ClassMixture&) const = default;
};

using RhoVector = std::vector<double>;

// rho_c = sum_n p_n Q_c^n.
RhoVector rho_of(const ClassMixture& mix, const NetworkSpec& spec);

}  // namespace csma

#include "csma/model.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace csma {

using nlohmann::json;

BackoffPolicy BackoffPolicy::make_exponential(double p0, int n_max) {
    BackoffPolicy pol;
    pol.exponential = true;
    pol.levels.resize(n_max + 1);
    pol.success_map.resize(n_max + 1);
    pol.collision_map.resize(n_max + 1);
    for (int n = 0; n <= n_max; ++n) {
        pol.levels[n] = p0 * std::exp2(-static_cast<double>(n));
        pol.success_map[n] = 0;
        pol.collision_map[n] = std::min(n + 1, n_max);
    }
    return pol;
}

std::vector<std::vector<int>> NetworkSpec::neighbors() const {
    const std::size_t n = class_count();
    std::vector<std::vector<int>> v(n);
    for (std::size_t c = 0; c < n; ++c)
        for (std::size_t d = 0; d < n; ++d)
            if (adjacency[c][d] != 0) v[c].push_back(static_cast<int>(d));
    return v;
}

ClassMixture ClassMixture::all_at_level0(const NetworkSpec& spec) {
    ClassMixture m = zeros(spec);
    for (std::size_t c = 0; c < spec.class_count(); ++c) m.at(c, 0) = spec.mu[c];
    return m;
}

namespace {

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key()))
            throw SpecError(SpecError::Kind::Parse,
                            "unknown key \"" + it.key() + "\" in " + where);
    }
}

}  // namespace

NetworkSpec load_spec(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw SpecError(SpecError::Kind::Parse, std::string("config parse error: ") + e.what());
    }
    if (!doc.is_object())
        throw SpecError(SpecError::Kind::Parse, "config root must be a JSON object");

    reject_unknown_keys(doc, {"classes", "mu", "adjacency", "p0", "L", "Lc", "policy", "n_max"},
                        "config root");

    NetworkSpec spec;
    try {
        doc.at("classes").get_to(spec.classes);
        doc.at("mu").get_to(spec.mu);
        doc.at("adjacency").get_to(spec.adjacency);
        spec.p0 = doc.at("p0").get<double>();
        spec.L = doc.at("L").get<double>();
        spec.Lc = doc.contains("Lc") ? doc["Lc"].get<double>() : spec.L;
        spec.n_max = doc.contains("n_max") ? doc["n_max"].get<int>() : 64;

        if (!doc.contains("policy") || (doc["policy"].is_string() &&
                                        doc["policy"].get<std::string>() == "exponential")) {
            spec.policy = BackoffPolicy::make_exponential(spec.p0, spec.n_max);
        } else if (doc["policy"].is_object()) {
            const json& pol = doc["policy"];
            reject_unknown_keys(pol, {"levels", "success_map", "collision_map"}, "policy");
            pol.at("levels").get_to(spec.policy.levels);
            pol.at("success_map").get_to(spec.policy.success_map);
            pol.at("collision_map").get_to(spec.policy.collision_map);
            spec.policy.exponential = false;
            if (doc.contains("n_max") && spec.n_max != spec.policy.level_count() - 1)
                throw SpecError(SpecError::Kind::Parse,
                                "n_max disagrees with the custom policy's level count");
            spec.n_max = spec.policy.level_count() - 1;
        } else {
            throw SpecError(SpecError::Kind::Parse,
                            "policy must be \"exponential\" or an object");
        }
    } catch (const SpecError&) {
        throw;
    } catch (const json::exception& e) {
        throw SpecError(SpecError::Kind::Parse, std::string("config field error: ") + e.what());
    }

    auto violations = validate_spec(spec);
    if (!violations.empty()) {
        std::ostringstream msg;
        msg << "config validation failed:";
        for (const auto& v : violations) msg << "\n  - " << v;
        throw SpecError(SpecError::Kind::Validation, msg.str(), violations);
    }

    // Accepted: normalize mu to sum exactly to 1.
    double sum = 0.0;
    for (double m : spec.mu) sum += m;
    if (sum > 0.0)
        for (double& m : spec.mu) m /= sum;
    return spec;
}

NetworkSpec load_spec_file(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw SpecError(SpecError::Kind::Parse, "cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return load_spec(buf.str());
}

std::string serialize_spec(const NetworkSpec& spec) {
    json doc;
    doc["classes"] = spec.classes;
    doc["mu"] = spec.mu;
    doc["adjacency"] = spec.adjacency;
    doc["p0"] = spec.p0;
    doc["L"] = spec.L;
    doc["Lc"] = spec.Lc;
    doc["n_max"] = spec.n_max;
    if (spec.policy.exponential) {
        doc["policy"] = "exponential";
    } else {
        doc["policy"] = {{"levels", spec.policy.levels},
                         {"success_map", spec.policy.success_map},
                         {"collision_map", spec.policy.collision_map}};
    }
    return doc.dump(2);
}

std::vector<std::string> validate_spec(const NetworkSpec& spec) {
    std::vector<std::string> out;
    const std::size_t n = spec.class_count();

    if (n == 0) out.push_back("classes: must contain at least one class");
    if (spec.mu.size() != n) out.push_back("mu: size must match the number of classes");

    double sum = 0.0;
    bool mu_nonneg = true;
    for (double m : spec.mu) {
        if (!(m >= 0.0)) mu_nonneg = false;
        sum += m;
    }
    if (!mu_nonneg) out.push_back("mu: entries must be >= 0");
    if (spec.mu.size() == n && n > 0 && std::abs(sum - 1.0) > 1e-9)
        out.push_back("mu: entries must sum to 1 (within 1e-9)");

    if (spec.adjacency.size() != n) {
        out.push_back("adjacency: must be a |C| x |C| matrix");
    } else {
        for (std::size_t c = 0; c < n; ++c) {
            if (spec.adjacency[c].size() != n) {
                out.push_back("adjacency: must be a |C| x |C| matrix");
                break;
            }
            for (std::size_t d = 0; d < n; ++d) {
                int a = spec.adjacency[c][d];
                if (a != 0 && a != 1) {
                    out.push_back("adjacency: entries must be 0 or 1");
                    c = n;
                    break;
                }
            }
        }
        for (std::size_t c = 0; c < n && spec.adjacency.size() == n; ++c)
            if (spec.adjacency[c].size() == n && spec.adjacency[c][c] != 1) {
                out.push_back("adjacency: A_cc must be 1");
                break;
            }
    }

    if (!(spec.p0 > 0.0 && spec.p0 <= 1.0)) out.push_back("p0: must lie in (0,1]");
    if (!(spec.L >= 1.0)) out.push_back("L: must be >= 1");
    if (!(spec.Lc >= 1.0)) out.push_back("Lc: must be >= 1");
    if (spec.n_max < 0) out.push_back("n_max: must be >= 0");

    const BackoffPolicy& pol = spec.policy;
    const int k = pol.level_count();
    if (k == 0) {
        out.push_back("policy: must define at least one level");
        return out;
    }
    if (k != spec.n_max + 1)
        out.push_back("policy: level count must equal n_max + 1");
    if (pol.levels[0] != spec.p0)
        out.push_back("policy: level 0 must carry probability exactly p0");
    for (int i = 0; i < k; ++i) {
        if (!(pol.levels[i] > 0.0 && pol.levels[i] <= spec.p0)) {
            out.push_back("policy: levels must lie in (0, p0]");
            break;
        }
        if (i > 0 && !(pol.levels[i] < pol.levels[i - 1])) {
            out.push_back("policy: levels must be strictly decreasing");
            break;
        }
    }
    auto check_map = [&](const std::vector<int>& m, const char* name, bool up) {
        if (static_cast<int>(m.size()) != k) {
            out.push_back(std::string("policy: ") + name + " size must equal the level count");
            return;
        }
        for (int i = 0; i < k; ++i) {
            if (m[i] < 0 || m[i] >= k) {
                out.push_back(std::string("policy: ") + name + " entries must be valid levels");
                return;
            }
            double from = pol.levels[i], to = pol.levels[m[i]];
            if (up ? to < from : to > from) {
                out.push_back(std::string("policy: ") + name +
                              (up ? " must not decrease the probability"
                                  : " must not increase the probability"));
                return;
            }
        }
    };
    check_map(pol.success_map, "success_map", /*up=*/true);
    check_map(pol.collision_map, "collision_map", /*up=*/false);

    return out;
}

RhoVector rho_of(const ClassMixture& mix, const NetworkSpec& spec) {
    if (mix.n_classes != spec.class_count() || mix.n_levels != spec.level_count())
        throw std::invalid_argument("rho_of: mixture dimensions do not match the spec");
    RhoVector rho(spec.class_count(), 0.0);
    for (std::size_t c = 0; c < spec.class_count(); ++c) {
        double s = 0.0;
        for (int n = 0; n < spec.level_count(); ++n) s += spec.policy.levels[n] * mix.at(c, n);
        rho[c] = s;
    }
    return rho;
}

}  // namespace csma

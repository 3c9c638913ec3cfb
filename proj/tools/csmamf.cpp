// csmamf: performance calculator for CSMA/random-backoff networks over
// class-structured interference graphs. Three routes: exact N-user
// simulation, mean-field ODE integration, and stationary fixed-point solving.

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <thread>

#include "csma/env_chain.hpp"
#include "csma/meanfield.hpp"
#include "csma/model.hpp"
#include "csma/simulator.hpp"
#include "csma/stationary.hpp"
#include "csma/table.hpp"

using nlohmann::json;
using namespace csma;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNonConvergence = 2;
constexpr int kExitInfeasible = 3;
constexpr int kExitBlowup = 4;

json arr12(const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(round12(x));
    return a;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

void emit(const std::string& out_path, const std::string& text, bool quiet) {
    if (!out_path.empty())
        write_text(out_path, text);
    else if (!quiet)
        std::cout << text << "\n";
}

int thread_count(std::size_t jobs) {
    unsigned n = std::thread::hardware_concurrency();
    if (const char* env = std::getenv("CSMAMF_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) n = static_cast<unsigned>(v);
    }
    if (n == 0) n = 1;
    return static_cast<int>(std::min<std::size_t>(n, jobs));
}

json fixed_point_json(const NetworkSpec& spec, const FixedPointResult& fp) {
    json j;
    j["classes"] = spec.classes;
    j["converged"] = fp.converged;
    j["iterations"] = fp.iterations;
    j["residual"] = round12(fp.residual);
    j["rho"] = arr12(fp.rho);
    j["G"] = arr12(fp.env.G);
    j["H"] = arr12(fp.env.H);
    j["I"] = arr12(fp.env.I);
    j["gamma"] = arr12(fp.gamma);
    std::vector<double> per_user(fp.gamma.size()), packets(fp.gamma.size());
    for (std::size_t c = 0; c < fp.gamma.size(); ++c) {
        per_user[c] = spec.mu[c] > 0 ? fp.gamma[c] / spec.mu[c] : 0.0;
        packets[c] = fp.gamma[c] / spec.L;
    }
    j["gamma_per_user"] = arr12(per_user);
    j["gamma_packets_per_slot"] = arr12(packets);
    if (spec.class_count() >= 2 && per_user[1] > 0.0)
        j["per_user_ratio_first_to_second"] = round12(per_user[0] / per_user[1]);
    json q = json::array();
    for (std::size_t c = 0; c < fp.Q.n_classes; ++c) {
        json row = json::array();
        for (int n = 0; n < fp.Q.n_levels; ++n) row.push_back(round12(fp.Q.at(c, n)));
        q.push_back(std::move(row));
    }
    j["Q"] = std::move(q);
    j["probe_spread"] = round12(fp.probe_spread);
    j["big_identity_residual"] = round12(fp.big_identity_residual);
    j["truncation_tail_mass"] = round12(fp.truncation_tail_mass);
    return j;
}

Table fixed_point_table(const NetworkSpec& spec, const FixedPointResult& fp) {
    Table t;
    t.header = {"class", "rho", "G", "H", "I", "gamma", "gamma_per_user",
                "gamma_packets_per_slot"};
    for (std::size_t c = 0; c < spec.class_count(); ++c)
        t.rows.push_back({spec.classes[c], fmt12(fp.rho[c]), fmt12(fp.env.G[c]),
                          fmt12(fp.env.H[c]), fmt12(fp.env.I[c]), fmt12(fp.gamma[c]),
                          fmt12(spec.mu[c] > 0 ? fp.gamma[c] / spec.mu[c] : 0.0),
                          fmt12(fp.gamma[c] / spec.L)});
    return t;
}

int cmd_stationary(const std::string& config, const std::string& out, const std::string& format,
                   bool quiet, bool closed_form, double tol, int max_iter, double damping) {
    const NetworkSpec spec = load_spec_file(config);

    if (closed_form) {
        if (spec.class_count() != 1) {
            std::cerr << "error: --closed-form requires a single-class configuration\n";
            return kExitConfig;
        }
        if (!(spec.p0 < std::numbers::ln2)) {
            std::cerr << "error: the closed-form route requires p0 < ln 2 (got p0 = "
                      << fmt12(spec.p0) << ")\n";
            return kExitInfeasible;
        }
        const ClosedFormFullInterference cf = closed_form_full_interference(spec.p0, spec.n_max);
        json j;
        j["rho_st"] = round12(cf.rho_st);
        j["root_residual"] = round12(cf.root_residual);
        j["Q"] = arr12(cf.q);
        emit(out, j.dump(2), quiet);
        return kExitOk;
    }

    FixedPointOptions opts;
    opts.tol = tol;
    opts.max_iter = max_iter;
    opts.damping = damping;
    FixedPointResult fp;
    try {
        fp = solve_fixed_point(spec, opts);
    } catch (const GHInfeasibleError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInfeasible;
    }
    if (!fp.converged) {
        std::cerr << "error: fixed point did not converge after " << fp.iterations
                  << " iterations (last update " << fmt12(fp.last_update) << ")\n";
        for (std::size_t i = 0; i < fp.update_trace.size(); ++i)
            std::cerr << "  iter " << i << ": " << fmt12(fp.update_trace[i]) << "\n";
        return kExitNonConvergence;
    }
    emit(out, format == "csv" ? fixed_point_table(spec, fp).to_csv()
                              : fixed_point_json(spec, fp).dump(2),
         quiet);
    return kExitOk;
}

int cmd_ode(const std::string& config, const std::string& out, bool quiet, double T, double dt,
            const std::string& init, long long samples) {
    const NetworkSpec spec = load_spec_file(config);
    if (dt <= 0.0) dt = std::min(1.0, 0.1 / spec.p0);

    FixedPointResult fp;
    bool have_fp = false;
    try {
        fp = solve_fixed_point(spec);
        have_fp = fp.converged;
    } catch (const GHInfeasibleError&) {
        have_fp = false;
    }

    ClassMixture q0 = ClassMixture::all_at_level0(spec);
    if (init == "fixedpoint") {
        if (!have_fp) {
            std::cerr << "error: --init fixedpoint requested but the fixed point is unavailable\n";
            return kExitNonConvergence;
        }
        q0 = fp.Q;
    } else if (init != "levels0") {
        std::cerr << "error: --init must be levels0 or fixedpoint\n";
        return kExitConfig;
    }

    Trajectory traj;
    try {
        traj = integrate(q0, T, spec, {.dt = dt, .max_samples = samples});
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBlowup;
    }

    Table tr;
    tr.header = {"t", "class", "level", "mass"};
    Table summary;
    summary.header = {"t", "class", "rho"};
    for (std::size_t s = 0; s < traj.states.size(); ++s) {
        const ClassMixture& q = traj.states[s];
        const RhoVector rho = rho_of(q, spec);
        for (std::size_t c = 0; c < spec.class_count(); ++c) {
            for (int n = 0; n < q.n_levels; ++n)
                tr.rows.push_back({fmt12(traj.times[s]), spec.classes[c], std::to_string(n),
                                   fmt12(q.at(c, n))});
            summary.rows.push_back({fmt12(traj.times[s]), spec.classes[c], fmt12(rho[c])});
        }
    }
    if (!out.empty()) {
        write_text(out, tr.to_csv());
        std::string sum_path = out;
        const std::size_t dot = sum_path.rfind('.');
        sum_path.insert(dot == std::string::npos ? sum_path.size() : dot, "_summary");
        write_text(sum_path, summary.to_csv());
    }

    json j;
    j["T"] = round12(T);
    j["dt"] = round12(traj.dt);
    j["steps"] = traj.steps;
    j["conservation_drift"] = round12(traj.max_conservation_drift);
    j["fixed_point_converged"] = have_fp;
    const ClassMixture& qT = traj.states.back();
    j["final_rho"] = arr12(rho_of(qT, spec));
    if (have_fp) {
        double tv = 0.0;
        for (std::size_t i = 0; i < qT.q.size(); ++i) tv += std::abs(qT.q[i] - fp.Q.q[i]);
        tv *= 0.5;
        j["final_tv_to_fixed_point"] = round12(tv);
        j["converged_to_fixed_point"] = (tv < 1e-6);
    }
    if (!quiet) std::cout << j.dump(2) << "\n";
    return kExitOk;
}

json simulate_json(const NetworkSpec& spec, const SimReport& rep,
                   const FixedPointResult* compare) {
    json j = json::parse(rep.to_json());
    j["classes"] = spec.classes;
    if (compare) {
        json cmp;
        cmp["gamma"] = arr12(compare->gamma);
        cmp["rho"] = arr12(compare->rho);
        std::vector<double> dg(spec.class_count()), dr(spec.class_count());
        for (std::size_t c = 0; c < spec.class_count(); ++c) {
            dg[c] = rep.ghat[c] - compare->gamma[c];
            dr[c] = rep.rho_hat[c] - compare->rho[c];
        }
        cmp["ghat_minus_gamma"] = arr12(dg);
        cmp["rho_hat_minus_rho"] = arr12(dr);
        j["fixed_point"] = std::move(cmp);
    }
    return j;
}

int cmd_simulate(const std::string& config, const std::string& out, bool quiet, int N, double T,
                 std::uint64_t seed, double burnin, bool compare, bool iid) {
    const NetworkSpec spec = load_spec_file(config);
    SimOptions opts;
    opts.n_users = N;
    opts.seed = seed;
    opts.burn_in = burnin;
    if (iid) opts.assignment = SimOptions::ClassAssignment::IID;
    const SimReport rep = Simulator(spec, opts).run(T);

    FixedPointResult fp;
    const FixedPointResult* fpp = nullptr;
    if (compare) {
        fp = solve_fixed_point(spec);
        if (fp.converged) fpp = &fp;
    }
    emit(out, simulate_json(spec, rep, fpp).dump(2), quiet);
    return kExitOk;
}

int cmd_check(const std::string& config, bool quiet) {
    NetworkSpec spec;
    try {
        spec = load_spec_file(config);
    } catch (const SpecError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    const DominationReport rep = domination_check(spec);
    json j;
    j["validation_violations"] = json::array();
    j["domination_holds"] = rep.domination_holds;
    j["dominating_chain_positive_recurrent"] = rep.dominating_chain_positive_recurrent;
    j["checked_pairs"] = rep.checked_pairs;
    j["worst_margin"] = round12(rep.worst_margin);
    j["pass"] = rep.pass;
    if (!quiet) std::cout << j.dump(2) << "\n";
    return rep.pass ? kExitOk : kExitConfig;
}

struct SweepRow {
    double value = 0.0;
    std::string method;
    std::string cls;
    double gamma = 0.0, per_user = 0.0, rho = 0.0;
    std::string status = "ok";
};

struct SweepJob {
    std::string method;
    double value;
    NetworkSpec spec;
    int N;
    double T_sim, T_ode;
    std::uint64_t seed;
};

std::vector<SweepRow> run_sweep_point(const SweepJob& job) {
    std::vector<SweepRow> rows;
    auto push_all = [&](const std::vector<double>& gamma, const RhoVector& rho,
                        const std::string& status) {
        for (std::size_t c = 0; c < job.spec.class_count(); ++c) {
            SweepRow r;
            r.value = job.value;
            r.method = job.method;
            r.cls = job.spec.classes[c];
            if (status == "ok") {
                r.gamma = gamma[c];
                r.per_user = job.spec.mu[c] > 0 ? gamma[c] / job.spec.mu[c] : 0.0;
                r.rho = rho[c];
            }
            r.status = status;
            rows.push_back(std::move(r));
        }
    };
    try {
        if (job.method == "fixedpoint") {
            const FixedPointResult fp = solve_fixed_point(job.spec);
            push_all(fp.gamma, fp.rho, fp.converged ? "ok" : "non-convergence");
        } else if (job.method == "ode") {
            const double dt = std::min(1.0, 0.1 / job.spec.p0);
            const Trajectory traj =
                integrate(ClassMixture::all_at_level0(job.spec), job.T_ode, job.spec, {.dt = dt});
            const RhoVector rho = rho_of(traj.states.back(), job.spec);
            const EnvStationary st = stationary_dist(build_kernel(rho, job.spec));
            push_all(throughput(st, rho, job.spec), rho, "ok");
        } else {
            SimOptions opts;
            opts.n_users = job.N;
            opts.seed = job.seed;
            const SimReport rep = Simulator(job.spec, opts).run(job.T_sim);
            push_all(rep.ghat, rep.rho_hat, "ok");
        }
    } catch (const std::exception& e) {
        push_all({}, {}, std::string("failed: ") + e.what());
    }
    return rows;
}

int cmd_sweep(const std::string& config, const std::string& out, bool quiet,
              const std::string& param, const std::string& grid_text,
              std::vector<std::string> methods, int N, double T_sim, double T_ode,
              std::uint64_t seed, const std::string& gnuplot_path) {
    const NetworkSpec base = load_spec_file(config);

    std::vector<double> grid;
    if (grid_text.find(':') != std::string::npos) {
        double a, b;
        int k;
        if (std::sscanf(grid_text.c_str(), "%lf:%lf:%d", &a, &b, &k) != 3 || k < 1) {
            std::cerr << "error: grid must be start:end:count or a comma list\n";
            return kExitConfig;
        }
        for (int i = 0; i < k; ++i)
            grid.push_back(k == 1 ? a : a + (b - a) * i / (k - 1));
    } else {
        std::size_t pos = 0;
        while (pos < grid_text.size()) {
            std::size_t next = grid_text.find(',', pos);
            if (next == std::string::npos) next = grid_text.size();
            const std::string tok = grid_text.substr(pos, next - pos);
            if (!tok.empty()) grid.push_back(std::strtod(tok.c_str(), nullptr));
            pos = next + 1;
        }
    }
    if (grid.empty()) {
        std::cerr << "error: empty sweep grid\n";
        return kExitConfig;
    }
    if (param == "mu2" && base.class_count() != 3) {
        std::cerr << "error: a mu2 sweep requires exactly 3 classes (mu1 = mu3)\n";
        return kExitConfig;
    }
    if (methods.empty()) methods = {"fixedpoint"};
    for (const auto& m : methods)
        if (m != "fixedpoint" && m != "ode" && m != "simulate") {
            std::cerr << "error: unknown method \"" << m << "\"\n";
            return kExitConfig;
        }

    std::vector<SweepJob> jobs;
    for (double v : grid) {
        NetworkSpec spec = base;
        if (param == "mu2") {
            if (!(v > 0.0 && v < 1.0)) {
                std::cerr << "error: mu2 grid values must lie in (0,1)\n";
                return kExitConfig;
            }
            spec.mu = {(1.0 - v) / 2.0, v, (1.0 - v) / 2.0};
        } else if (param == "L") {
            spec.L = v;
            spec.Lc = v;
        } else if (param == "p0") {
            spec.p0 = v;
            spec.policy = BackoffPolicy::make_exponential(v, spec.n_max);
        } else if (param == "N") {
            // only the simulate method depends on N
        } else {
            std::cerr << "error: --param must be one of mu2, L, p0, N\n";
            return kExitConfig;
        }
        const auto violations = validate_spec(spec);
        if (!violations.empty()) {
            std::cerr << "error: grid value " << fmt12(v) << " breaks the spec:\n";
            for (const auto& msg : violations) std::cerr << "  - " << msg << "\n";
            return kExitConfig;
        }
        for (const auto& m : methods) {
            SweepJob job{m, v, spec, N, T_sim, T_ode, seed};
            if (param == "N" && m == "simulate") job.N = static_cast<int>(v);
            jobs.push_back(std::move(job));
        }
    }

    // grid points run in parallel; each job writes its own slot, rows are
    // sorted afterwards so scheduling never changes the output bytes
    std::vector<std::vector<SweepRow>> results(jobs.size());
    {
        std::atomic<std::size_t> next{0};
        const int workers = thread_count(jobs.size());
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1))
                    results[i] = run_sweep_point(jobs[i]);
            });
        for (auto& th : pool) th.join();
    }

    std::vector<SweepRow> rows;
    for (auto& r : results) rows.insert(rows.end(), r.begin(), r.end());
    std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
        if (a.value != b.value) return a.value < b.value;
        if (a.method != b.method) return a.method < b.method;
        return a.cls < b.cls;
    });

    Table t;
    t.header = {"param_value", "method", "class", "gamma", "gamma_per_user", "rho", "status"};
    for (const auto& r : rows)
        t.rows.push_back({fmt12(r.value), r.method, r.cls, fmt12(r.gamma), fmt12(r.per_user),
                          fmt12(r.rho), r.status});
    emit(out, t.to_csv(), quiet);

    if (!gnuplot_path.empty() && !out.empty()) {
        std::string script;
        script += "set datafile separator ','\n";
        script += "set key autotitle columnhead outside\n";
        script += "set xlabel '" + param + "'\n";
        script += "set ylabel 'gamma per user'\n";
        script += "plot ";
        bool first = true;
        for (const auto& m : methods)
            for (const auto& cls : base.classes) {
                if (!first) script += ", \\\n     ";
                script += "'" + out + "' using 1:($5*(strcol(2) eq '" + m +
                          "' && strcol(3) eq '" + cls + "' ? 1 : NaN)) with linespoints title '" +
                          m + " class " + cls + "'";
                first = false;
            }
        script += "\n";
        write_text(gnuplot_path, script);
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CSMA backoff network performance: simulation, mean-field ODE, fixed point"};
    app.require_subcommand(1);

    std::string config, out, format = "json", init = "levels0";
    bool quiet = false, closed_form = false, compare = false, iid = false;
    double tol = 1e-10, damping = 0.5, T = 0.0, dt = -1.0, burnin = 0.2;
    int max_iter = 500, N = 200;
    std::uint64_t seed = 0;
    long long samples = 2001;
    std::string param, grid;
    std::vector<std::string> methods;
    double T_ode = 2000.0;
    std::string gnuplot_path;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config, "configuration file (JSON)")->required();
        sub->add_option("--out", out, "output path (default: stdout)");
        sub->add_flag("--quiet", quiet, "suppress stdout output");
    };

    CLI::App* st = app.add_subcommand("stationary", "solve the stationary fixed point");
    add_common(st);
    st->add_option("--format", format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
    st->add_flag("--closed-form", closed_form,
                 "single-class full-interference closed form (requires p0 < ln 2)");
    st->add_option("--tol", tol, "fixed-point tolerance");
    st->add_option("--max-iter", max_iter, "iteration cap");
    st->add_option("--damping", damping, "damping factor in (0,1]");

    CLI::App* ode = app.add_subcommand("ode", "integrate the mean-field dynamics");
    add_common(ode);
    ode->add_option("--T", T, "horizon in mean-field time (default 2000)");
    ode->add_option("--dt", dt, "RK4 step (default min(1, 0.1/p0))");
    ode->add_option("--init", init, "initial mixture: levels0 or fixedpoint");
    ode->add_option("--samples", samples, "max stored trajectory samples");

    CLI::App* sim = app.add_subcommand("simulate", "run the N-user slot simulation");
    add_common(sim);
    sim->add_option("--N", N, "number of users")->required();
    sim->add_option("--T", T, "horizon in mean-field time (default 500)");
    sim->add_option("--seed", seed, "RNG seed (echoed in the report)");
    sim->add_option("--burnin", burnin, "burn-in fraction discarded before averaging");
    sim->add_flag("--compare", compare, "include fixed-point deltas in the report");
    sim->add_flag("--iid", iid, "draw user classes i.i.d. from mu");

    CLI::App* sw = app.add_subcommand("sweep", "sweep a parameter, long-form CSV output");
    add_common(sw);
    sw->add_option("--param", param, "one of: mu2, L, p0, N")->required();
    sw->add_option("--grid", grid, "start:end:count or comma-separated values")->required();
    sw->add_option("--methods", methods, "subset of fixedpoint,ode,simulate")->delimiter(',');
    sw->add_option("--N", N, "users for the simulate method");
    sw->add_option("--T", T, "simulate horizon (default 500)");
    sw->add_option("--T-ode", T_ode, "ode horizon (default 2000)");
    sw->add_option("--seed", seed, "simulate seed");
    sw->add_option("--gnuplot", gnuplot_path, "also emit a gnuplot script");

    CLI::App* chk = app.add_subcommand("check", "validate the config and run the domination check");
    add_common(chk);

    CLI11_PARSE(app, argc, argv);

    try {
        if (st->parsed())
            return cmd_stationary(config, out, format, quiet, closed_form, tol, max_iter, damping);
        if (ode->parsed())
            return cmd_ode(config, out, quiet, T > 0 ? T : 2000.0, dt, init, samples);
        if (sim->parsed())
            return cmd_simulate(config, out, quiet, N, T > 0 ? T : 500.0, seed, burnin, compare,
                                iid);
        if (sw->parsed())
            return cmd_sweep(config, out, quiet, param, grid, methods, N, T > 0 ? T : 500.0, T_ode,
                             seed, gnuplot_path);
        if (chk->parsed()) return cmd_check(config, quiet);
    } catch (const SpecError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const GHInfeasibleError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitOk;
}

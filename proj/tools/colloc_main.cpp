#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "colloc/batch.hpp"
#include "colloc/eval.hpp"
#include "colloc/problem_io.hpp"
#include "colloc/solver.hpp"
#include "colloc/transcribe.hpp"

namespace fs = std::filesystem;
using namespace colloc;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0, kExitNoConverge = 1, kExitUsage = 2, kExitIo = 3;

int default_workers() {
    if (const char* env = std::getenv("COLLOC_WORKERS")) {
        const int w = std::atoi(env);
        if (w >= 1) return w;
    }
    return 1;
}

Model load_model(const std::string& name, const std::string& config_path) {
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw IoError("cannot open model config: " + config_path);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return model_from_config(text);
    }
    return Model::by_name(name);
}

void read_grid_file(const std::string& path, std::vector<double>& speeds,
                    std::vector<double>& inclines) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open grid file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(path + ": " + std::string(e.what()));
    }
    speeds = j.at("speeds").get<std::vector<double>>();
    inclines = j.at("inclines").get<std::vector<double>>();
    if (speeds.empty() || inclines.empty())
        throw FormatError(path + ": grid axes must be non-empty");
}

void write_triple(const HybridSystemSpec& spec, const GaitTask& task, Scheme scheme,
                  const std::string& base) {
    auto [problem, meta] = transcribe(spec, task, scheme);
    const auto x0 = initial_guess(spec, task, meta);
    save_problem(problem, x0, ProblemPaths::from_base(base));
    save_meta(meta, base + ".meta.json");
    std::cout << base << ": vars " << problem.num_vars << ", constraints "
              << problem.num_constraints << ", nnz " << problem.jac_nnz << "\n";
}

int cmd_transcribe(const std::string& model_name, const std::string& config,
                   const std::string& task_name, double speed, double incline, double duration,
                   double clearance, double mu, int nodes, const std::string& scheme_str,
                   bool no_symmetry, const std::string& grid_path, const std::string& out,
                   double from_x, double from_v, double to_x, double to_v) {
    const Model model = load_model(model_name, config);
    const Scheme scheme = scheme_from_name(scheme_str);

    GaitTask task;
    task.speed = speed;
    task.incline = incline;
    task.step_duration = duration;
    task.clearance = clearance;
    task.friction_mu = mu;
    task.symmetric = !no_symmetry;

    if (!grid_path.empty()) {
        std::vector<double> speeds, inclines;
        read_grid_file(grid_path, speeds, inclines);
        const auto tasks = build_gait_grid(speeds, inclines, task);
        fs::create_directories(out);
        int count = 0;
        for (size_t i = 0; i < speeds.size(); ++i)
            for (size_t j = 0; j < inclines.size(); ++j) {
                const GaitTask& t = tasks[i * inclines.size() + j];
                const auto spec = gait_system(model, nodes, t);
                write_triple(spec, t, scheme,
                             out + "/gait_" + std::to_string(i) + "_" + std::to_string(j));
                ++count;
            }
        std::cout << count << " problem triples written to " << out << "\n";
        return kExitOk;
    }

    std::string tname = task_name;
    if (tname.empty()) {
        if (model.kind == ModelKind::CompassGait) tname = "gait";
        else if (model.kind == ModelKind::CartPole) tname = "swingup";
        else tname = "reach";
    }
    HybridSystemSpec spec;
    if (tname == "gait") {
        spec = gait_system(model, nodes, task);
    } else if (tname == "swingup") {
        spec = cartpole_swingup_system(model, nodes, duration);
    } else if (tname == "reach") {
        spec = integrator_reach_system(model, nodes, duration, from_x, from_v, to_x, to_v);
    } else {
        throw std::invalid_argument("unknown task: " + tname);
    }
    write_triple(spec, task, scheme, out);
    return kExitOk;
}

int cmd_solve(const std::string& base, std::string out, const SolverOptions& opts,
              const std::string& guess_from) {
    if (out.empty()) out = base + ".result.json";
    auto [problem, x0] = load_problem(ProblemPaths::from_base(base));
    if (!guess_from.empty()) {
        const SolveResult prev = load_result(guess_from);
        if (static_cast<int>(prev.x.size()) == problem.num_vars) x0 = prev.x;
    }
    const SolveResult r = solve(problem, x0, opts);
    save_result(r, out);
    std::cout << status_name(r.status) << ": objective " << r.objective << ", violation "
              << r.constraint_violation << ", kkt " << r.kkt_residual << ", iters "
              << r.iterations << "\n"
              << "timing: jacobian " << r.timing.jacobian_eval << "s, other callbacks "
              << r.timing.other_callbacks << "s, solver internal " << r.timing.solver_internal
              << "s\n";
    return r.status == SolveStatus::Converged ? kExitOk : kExitNoConverge;
}

int cmd_batch(const std::string& dir, const std::string& plan_path, int max_concurrent,
              const SolverOptions& opts, const std::string& out, const std::string& csv,
              const std::string& shell) {
    BatchPlan plan;
    plan.max_concurrent = max_concurrent;
    plan.solver = opts;
    if (!plan_path.empty()) {
        std::ifstream in(plan_path);
        if (!in) throw IoError("cannot open plan: " + plan_path);
        const json j = json::parse(in);
        for (const auto& t : j.at("tasks")) {
            BatchTask task;
            task.base = t.at("base").get<std::string>();
            task.task_id = t.value("task_id", fs::path(task.base).filename().string());
            task.result_path = t.value("result", task.base + ".result.json");
            task.guess_from = t.value("guess_from", "");
            plan.tasks.push_back(task);
        }
    } else {
        if (dir.empty()) throw std::invalid_argument("batch needs --dir or --plan");
        std::vector<std::string> bases;
        for (const auto& entry : fs::directory_iterator(dir)) {
            const std::string name = entry.path().string();
            const std::string suffix = ".prob.json";
            if (name.size() > suffix.size() &&
                name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
                bases.push_back(name.substr(0, name.size() - suffix.size()));
        }
        std::sort(bases.begin(), bases.end());
        for (const auto& b : bases) {
            BatchTask task;
            task.base = b;
            task.task_id = fs::path(b).filename().string();
            task.result_path = b + ".result.json";
            plan.tasks.push_back(task);
        }
    }
    if (!shell.empty()) {
        emit_shell_script(plan, shell);
        std::cout << "shell script written to " << shell << "\n";
    }
    const BatchReport report = run_batch(plan);
    if (!out.empty()) save_batch_report(report, out);
    if (!csv.empty()) save_batch_csv(report, csv);
    std::cout << report.converged << " converged, " << report.failed << " failed, wall "
              << report.wall_time << "s\n";
    return report.failed == 0 ? kExitOk : kExitNoConverge;
}

int cmd_bench(const std::string& base, const std::vector<int>& workers, int runs,
              const SolverOptions& opts, const std::string& out, const std::string& csv) {
    auto [problem, x0] = load_problem(ProblemPaths::from_base(base));
    const BenchReport report = bench_jacobian_scaling(problem, x0, workers, runs, opts);
    if (!out.empty()) save_bench_report(report, out);
    if (!csv.empty()) save_bench_csv(report, csv);
    std::cout << "workload: " << report.workload << "\n"
              << "jacobian bit-identical across worker counts: "
              << (report.jacobian_bit_identical ? "yes" : "no") << "\n"
              << "callback share of wall time (1 worker): " << report.callback_share << "\n";
    for (const auto& row : report.rows)
        std::cout << "workers " << row.workers << ": total " << row.t_total << "s, jacobian "
                  << row.t_jac << "s, other " << row.t_other << "s, internal " << row.t_internal
                  << "s\n";
    return kExitOk;
}

int cmd_validate(const std::string& base) {
    try {
        auto [problem, x0] = load_problem(ProblemPaths::from_base(base));
        (void)x0;
        std::cout << "valid: " << problem.num_vars << " vars, " << problem.num_constraints
                  << " constraints, nnz " << problem.jac_nnz << "\n";
        return kExitOk;
    } catch (const FormatError& e) {
        std::cout << e.what() << "\n";
        return kExitUsage;
    }
}

int cmd_export(const std::string& result_path, const std::string& meta_path,
               const std::string& out_base) {
    const SolveResult r = load_result(result_path);
    const TranscriptionMeta meta = load_meta(meta_path);
    const Trajectory traj = extract_trajectory(r.x, meta);
    for (size_t j = 0; j < traj.phases.size(); ++j) {
        const auto& pt = traj.phases[j];
        const auto& pm = meta.phases[j];
        const std::string path = out_base + "_phase" + std::to_string(j) + ".csv";
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + path);
        out << "t";
        for (int c = 0; c < pm.model.n_q; ++c) out << ",q" << c;
        for (int c = 0; c < pm.model.n_q; ++c) out << ",qd" << c;
        for (int c = 0; c < pm.model.n_q; ++c) out << ",qdd" << c;
        for (int c = 0; c < pm.model.n_u; ++c) out << ",u" << c;
        out << "\n";
        out.precision(17);
        for (size_t i = 0; i < pt.t.size(); ++i) {
            out << pt.t[i];
            for (double v : pt.q[i]) out << "," << v;
            for (double v : pt.qd[i]) out << "," << v;
            for (double v : pt.qdd[i]) out << "," << v;
            for (double v : pt.u[i]) out << "," << v;
            out << "\n";
        }
        std::cout << path << "\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"direct-collocation gait optimization toolkit"};
    app.require_subcommand(1);

    // transcribe
    auto* tr = app.add_subcommand("transcribe", "build problem files from a task");
    std::string tr_model = "compass", tr_config, tr_task, tr_scheme = "hermite-simpson";
    std::string tr_grid, tr_out = "problem";
    double tr_speed = 0, tr_incline = 0, tr_duration = 0.4, tr_clearance = 0.05, tr_mu = 0.8;
    double tr_fx = 0, tr_fv = 0, tr_tx = 1, tr_tv = 0;
    int tr_nodes = 11;
    bool tr_nosym = false;
    tr->add_option("--model", tr_model, "compass | cartpole | double_integrator");
    tr->add_option("--model-config", tr_config, "JSON model parameter file");
    tr->add_option("--task", tr_task, "gait | swingup | reach (default depends on model)");
    tr->add_option("--speed", tr_speed, "average walking speed [m/s]");
    tr->add_option("--incline", tr_incline, "touchdown height change per step [m]");
    tr->add_option("--duration", tr_duration, "phase duration T [s]");
    tr->add_option("--clearance", tr_clearance, "midstep swing clearance [m]");
    tr->add_option("--friction-mu", tr_mu, "friction coefficient");
    tr->add_option("--nodes", tr_nodes, "collocation nodes per phase");
    tr->add_option("--scheme", tr_scheme, "hermite-simpson | trapezoidal");
    tr->add_flag("--no-symmetry", tr_nosym, "drop the two-step symmetry rows");
    tr->add_option("--grid", tr_grid, "grid spec JSON (speeds, inclines)");
    tr->add_option("--out", tr_out, "output base path (or directory with --grid)");
    tr->add_option("--from-x", tr_fx, "reach task: initial position");
    tr->add_option("--from-v", tr_fv, "reach task: initial velocity");
    tr->add_option("--to-x", tr_tx, "reach task: final position");
    tr->add_option("--to-v", tr_tv, "reach task: final velocity");

    // common solver options
    SolverOptions opts;
    opts.workers = default_workers();
    auto add_solver_opts = [&](CLI::App* cmd) {
        cmd->add_option("--tol", opts.tol, "KKT tolerance");
        cmd->add_option("--max-iter", opts.max_iter, "iteration limit");
        cmd->add_option("--mu0", opts.mu0, "initial barrier parameter");
        cmd->add_option("--mu-reduction", opts.mu_reduction, "barrier shrink factor");
        cmd->add_option("--workers", opts.workers, "Jacobian evaluation workers");
        cmd->add_flag("--verbose", opts.verbose, "per-iteration log");
    };

    auto* so = app.add_subcommand("solve", "solve one problem triple");
    std::string so_base, so_out, so_guess;
    so->add_option("--problem", so_base, "problem base path")->required();
    so->add_option("--out", so_out, "result file (default <base>.result.json)");
    so->add_option("--guess-from", so_guess, "warm start from a result file");
    add_solver_opts(so);

    auto* ba = app.add_subcommand("batch", "solve many problems with a concurrency limit");
    std::string ba_dir, ba_plan, ba_out = "batch.report.json", ba_csv, ba_shell;
    int ba_conc = 1;
    ba->add_option("--dir", ba_dir, "directory of *.prob.json triples");
    ba->add_option("--plan", ba_plan, "batch plan JSON");
    ba->add_option("--max-concurrent", ba_conc, "solves in flight");
    ba->add_option("--out", ba_out, "report JSON path");
    ba->add_option("--csv", ba_csv, "report CSV path");
    ba->add_option("--emit-shell", ba_shell, "write an equivalent shell script");
    add_solver_opts(ba);

    auto* be = app.add_subcommand("bench", "jacobian scaling benchmark");
    std::string be_base, be_out = "bench.report.json", be_csv;
    std::vector<int> be_workers{1, 2, 4};
    int be_runs = 3;
    be->add_option("--problem", be_base, "problem base path")->required();
    be->add_option("--workers", be_workers, "worker counts to sweep");
    be->add_option("--runs", be_runs, "repetitions per worker count (median reported)");
    be->add_option("--out", be_out, "report JSON path");
    be->add_option("--csv", be_csv, "report CSV path");
    be->add_option("--tol", opts.tol, "KKT tolerance");
    be->add_option("--max-iter", opts.max_iter, "iteration limit");

    auto* va = app.add_subcommand("validate", "check a problem triple");
    std::string va_base;
    va->add_option("--problem", va_base, "problem base path")->required();

    auto* ex = app.add_subcommand("export", "write per-phase trajectory CSV");
    std::string ex_result, ex_meta, ex_out = "trajectory";
    ex->add_option("--result", ex_result, "result JSON")->required();
    ex->add_option("--meta", ex_meta, "transcription meta JSON")->required();
    ex->add_option("--out", ex_out, "output CSV base path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (tr->parsed())
            return cmd_transcribe(tr_model, tr_config, tr_task, tr_speed, tr_incline, tr_duration,
                                  tr_clearance, tr_mu, tr_nodes, tr_scheme, tr_nosym, tr_grid,
                                  tr_out, tr_fx, tr_fv, tr_tx, tr_tv);
        if (so->parsed()) return cmd_solve(so_base, so_out, opts, so_guess);
        if (ba->parsed())
            return cmd_batch(ba_dir, ba_plan, ba_conc, opts, ba_out, ba_csv, ba_shell);
        if (be->parsed()) return cmd_bench(be_base, be_workers, be_runs, opts, be_out, be_csv);
        if (va->parsed()) return cmd_validate(va_base);
        if (ex->parsed()) return cmd_export(ex_result, ex_meta, ex_out);
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitUsage;
}

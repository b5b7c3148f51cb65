#include "colloc/batch.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

#include "colloc/eval.hpp"
#include "colloc/problem_io.hpp"

namespace colloc {

using Clock = std::chrono::steady_clock;
using nlohmann::json;

namespace {

double secs_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

BatchTaskReport run_one(const BatchTask& task, const SolverOptions& opts) {
    BatchTaskReport rep;
    rep.task_id = task.task_id;
    const auto t0 = Clock::now();
    try {
        auto [problem, x0] = load_problem(ProblemPaths::from_base(task.base));
        if (!task.guess_from.empty()) {
            const SolveResult prev = load_result(task.guess_from);
            if (prev.status == SolveStatus::Converged &&
                static_cast<int>(prev.x.size()) == problem.num_vars)
                x0 = prev.x;
        }
        const SolveResult r = solve(problem, x0, opts);
        save_result(r, task.result_path);
        rep.status = status_name(r.status);
        rep.iterations = r.iterations;
        rep.message = r.message;
    } catch (const std::exception& e) {
        rep.status = "failed";
        rep.message = e.what();
    }
    rep.t_wall = secs_since(t0);
    return rep;
}

void finish_report(BatchReport& report) {
    std::vector<double> times;
    for (const auto& t : report.tasks) {
        times.push_back(t.t_wall);
        if (t.status == "converged")
            ++report.converged;
        else
            ++report.failed;
    }
    if (!times.empty()) {
        double sum = 0;
        for (double t : times) sum += t;
        report.mean_seconds = sum / times.size();
        std::sort(times.begin(), times.end());
        report.median_seconds = times[times.size() / 2];
    }
}

}  // namespace

BatchReport run_batch(const BatchPlan& plan) {
    BatchReport report;
    report.tasks.resize(plan.tasks.size());
    const auto t0 = Clock::now();
    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= plan.tasks.size()) return;
            report.tasks[i] = run_one(plan.tasks[i], plan.solver);
        }
    };
    const int nthreads = std::max(1, plan.max_concurrent);
    if (nthreads == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (int t = 0; t < nthreads; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    report.wall_time = secs_since(t0);
    finish_report(report);
    return report;
}

void save_batch_report(const BatchReport& r, const std::string& json_path) {
    json j{{"wall_time", r.wall_time},
           {"converged", r.converged},
           {"failed", r.failed},
           {"mean_seconds", r.mean_seconds},
           {"median_seconds", r.median_seconds}};
    j["tasks"] = json::array();
    for (const auto& t : r.tasks)
        j["tasks"].push_back({{"task_id", t.task_id},
                              {"status", t.status},
                              {"iterations", t.iterations},
                              {"t_wall", t.t_wall},
                              {"message", t.message}});
    std::ofstream out(json_path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + json_path);
    out << j.dump(2) << "\n";
}

void save_batch_csv(const BatchReport& r, const std::string& csv_path) {
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + csv_path);
    out << "task_id,status,iters,t_wall\n";
    for (const auto& t : r.tasks)
        out << t.task_id << "," << t.status << "," << t.iterations << "," << t.t_wall << "\n";
}

void emit_shell_script(const BatchPlan& plan, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "#!/bin/sh\n# one solve per line; pipe through xargs -P or GNU parallel\n";
    for (const auto& t : plan.tasks) {
        out << "colloc solve --problem " << t.base << " --out " << t.result_path;
        if (!t.guess_from.empty()) out << " --guess-from " << t.guess_from;
        out << " --tol " << plan.solver.tol << " --max-iter " << plan.solver.max_iter << "\n";
    }
}

BenchReport bench_jacobian_scaling(const NlpProblem& p, std::span<const double> x0,
                                   const std::vector<int>& worker_counts, int runs,
                                   const SolverOptions& base_opts) {
    BenchReport report;
    report.workload = "full solve, " + std::to_string(p.num_vars) + " vars, " +
                      std::to_string(p.num_constraints) + " rows, nnz " +
                      std::to_string(p.jac_nnz);

    // bit-identity of the Jacobian values across worker counts
    report.jacobian_bit_identical = true;
    const SparseTriplets ref = eval_jacobian(x0, p, 1);
    for (int wc : worker_counts) {
        const SparseTriplets t = eval_jacobian(x0, p, wc);
        if (t.values != ref.values) report.jacobian_bit_identical = false;
    }

    for (int wc : worker_counts) {
        std::vector<double> t_tot, t_jac, t_other, t_int;
        int iterations = 0;
        for (int r = 0; r < std::max(1, runs); ++r) {
            SolverOptions opts = base_opts;
            opts.workers = wc;
            const SolveResult res = solve(p, x0, opts);
            t_tot.push_back(res.timing.wall);
            t_jac.push_back(res.timing.jacobian_eval);
            t_other.push_back(res.timing.other_callbacks);
            t_int.push_back(res.timing.solver_internal);
            iterations = res.iterations;
        }
        auto median = [](std::vector<double> v) {
            std::sort(v.begin(), v.end());
            return v[v.size() / 2];
        };
        BenchRow row;
        row.workers = wc;
        row.t_total = median(t_tot);
        row.t_jac = median(t_jac);
        row.t_other = median(t_other);
        row.t_internal = median(t_int);
        row.iterations = iterations;
        report.rows.push_back(row);
        if (wc == 1 && row.t_total > 0)
            report.callback_share = (row.t_jac + row.t_other) / row.t_total;
    }
    return report;
}

void save_bench_report(const BenchReport& r, const std::string& json_path) {
    json j{{"workload", r.workload},
           {"jacobian_bit_identical", r.jacobian_bit_identical},
           {"callback_share", r.callback_share}};
    j["rows"] = json::array();
    for (const auto& row : r.rows)
        j["rows"].push_back({{"workers", row.workers},
                             {"t_total", row.t_total},
                             {"t_jac", row.t_jac},
                             {"t_other", row.t_other},
                             {"t_internal", row.t_internal},
                             {"iterations", row.iterations}});
    std::ofstream out(json_path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + json_path);
    out << j.dump(2) << "\n";
}

void save_bench_csv(const BenchReport& r, const std::string& csv_path) {
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + csv_path);
    out << "workers,t_total,t_jac,t_other,t_internal\n";
    for (const auto& row : r.rows)
        out << row.workers << "," << row.t_total << "," << row.t_jac << "," << row.t_other << ","
            << row.t_internal << "\n";
}

BatchReport run_gait_grid(const GridSweep& sweep) {
    namespace fs = std::filesystem;
    fs::create_directories(sweep.out_dir);
    const int ns = static_cast<int>(sweep.speeds.size());
    const int ni = static_cast<int>(sweep.inclines.size());

    auto base_path = [&](int i, int j) {
        return sweep.out_dir + "/gait_" + std::to_string(i) + "_" + std::to_string(j);
    };
    auto result_path = [&](int i, int j) { return base_path(i, j) + ".result.json"; };

    // transcribe the whole grid up front
    for (int i = 0; i < ns; ++i)
        for (int j = 0; j < ni; ++j) {
            GaitTask task = sweep.base;
            task.speed = sweep.speeds[i];
            task.incline = sweep.inclines[j];
            const auto spec = gait_system(sweep.model, sweep.nodes, task);
            auto [problem, meta] = transcribe(spec, task, sweep.scheme);
            const auto x0 = initial_guess(spec, task, meta);
            save_problem(problem, x0, ProblemPaths::from_base(base_path(i, j)));
            save_meta(meta, base_path(i, j) + ".meta.json");
        }

    // solve outward from the task closest to (0 speed, 0 incline), each ring
    // warm-started from its nearest solved neighbor
    auto nearest_zero = [](const std::vector<double>& v) {
        int best = 0;
        for (size_t k = 1; k < v.size(); ++k)
            if (std::abs(v[k]) < std::abs(v[best])) best = static_cast<int>(k);
        return best;
    };
    const int ci = nearest_zero(sweep.speeds), cj = nearest_zero(sweep.inclines);

    BatchReport report;
    report.tasks.resize(static_cast<size_t>(ns) * ni);
    const auto t0 = Clock::now();
    const int max_ring = std::max({ci, ns - 1 - ci, cj, ni - 1 - cj});
    for (int ring = 0; ring <= max_ring; ++ring) {
        BatchPlan plan;
        plan.max_concurrent = sweep.max_concurrent;
        plan.solver = sweep.solver;
        std::vector<size_t> slots;
        for (int i = 0; i < ns; ++i)
            for (int j = 0; j < ni; ++j) {
                if (std::max(std::abs(i - ci), std::abs(j - cj)) != ring) continue;
                BatchTask task;
                task.task_id = "gait_" + std::to_string(i) + "_" + std::to_string(j);
                task.base = base_path(i, j);
                task.result_path = result_path(i, j);
                if (ring > 0) {
                    const int pi = i + (i < ci ? 1 : (i > ci ? -1 : 0));
                    const int pj = j + (j < cj ? 1 : (j > cj ? -1 : 0));
                    task.guess_from = result_path(pi, pj);
                }
                plan.tasks.push_back(std::move(task));
                slots.push_back(static_cast<size_t>(i) * ni + j);
            }
        const BatchReport ring_report = run_batch(plan);
        for (size_t k = 0; k < slots.size(); ++k) report.tasks[slots[k]] = ring_report.tasks[k];
    }
    report.wall_time = secs_since(t0);
    finish_report(report);
    return report;
}

}  // namespace colloc

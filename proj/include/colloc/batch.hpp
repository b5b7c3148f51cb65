#pragma once

#include <string>
#include <vector>

#include "colloc/solver.hpp"
#include "colloc/transcribe.hpp"

namespace colloc {

struct BatchTask {
    std::string task_id;
    std::string base;        // problem triple base path
    std::string result_path; // output
    std::string guess_from;  // optional warm-start result file
};

struct BatchPlan {
    std::vector<BatchTask> tasks;
    int max_concurrent = 1;
    SolverOptions solver;
};

struct BatchTaskReport {
    std::string task_id;
    std::string status;
    int iterations = 0;
    double t_wall = 0;
    std::string message;
};

struct BatchReport {
    std::vector<BatchTaskReport> tasks;
    double wall_time = 0;
    int converged = 0;
    int failed = 0;
    double mean_seconds = 0;
    double median_seconds = 0;
};

// Runs every task, at most max_concurrent solves in flight; one task's
// failure never aborts the others.
BatchReport run_batch(const BatchPlan& plan);

void save_batch_report(const BatchReport& r, const std::string& json_path);
void save_batch_csv(const BatchReport& r, const std::string& csv_path);
void emit_shell_script(const BatchPlan& plan, const std::string& path);

struct BenchRow {
    int workers = 1;
    double t_total = 0, t_jac = 0, t_other = 0, t_internal = 0;
    int iterations = 0;
};

struct BenchReport {
    std::string workload;
    bool jacobian_bit_identical = false;
    double callback_share = 0;  // callback time / wall at workers = 1
    std::vector<BenchRow> rows; // medians over the requested runs
};

// Solves the same problem once per worker count (runs repetitions, medians
// reported) and checks that the Jacobian values are bit-identical.
BenchReport bench_jacobian_scaling(const NlpProblem& p, std::span<const double> x0,
                                   const std::vector<int>& worker_counts, int runs,
                                   const SolverOptions& base_opts);

void save_bench_report(const BenchReport& r, const std::string& json_path);
void save_bench_csv(const BenchReport& r, const std::string& csv_path);

// Gait-library sweep: transcribes a speed x incline grid, then solves it in
// rings around the nominal task, warm-starting each gait from its nearest
// already-solved neighbor. Problem files land in out_dir as gait_<i>_<j>.*.
struct GridSweep {
    Model model;
    int nodes = 11;
    Scheme scheme = Scheme::HermiteSimpson;
    GaitTask base;
    std::vector<double> speeds, inclines;
    std::string out_dir;
    int max_concurrent = 1;
    SolverOptions solver;
};

BatchReport run_gait_grid(const GridSweep& sweep);

}  // namespace colloc

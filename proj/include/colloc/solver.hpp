#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "colloc/nlp.hpp"

namespace colloc {

enum class SolveStatus { Converged, MaxIter, InfeasibleDetected, EvaluationError };

const char* status_name(SolveStatus s);
SolveStatus status_from_name(const std::string& name);

struct SolverOptions {
    double tol = 1e-6;          // KKT tolerance
    int max_iter = 500;
    double mu0 = 0.1;           // initial barrier parameter
    double mu_reduction = 0.2;  // monotone barrier shrink factor
    int workers = 1;            // Jacobian evaluation workers
    bool verbose = false;
};

struct SolveTiming {
    double jacobian_eval = 0;
    double other_callbacks = 0;
    double solver_internal = 0;
    double wall = 0;
};

struct SolveResult {
    SolveStatus status = SolveStatus::MaxIter;
    std::vector<double> x;
    double objective = 0;
    double constraint_violation = 0;  // inf-norm against [cl, cu]
    double kkt_residual = 0;
    int iterations = 0;
    SolveTiming timing;
    std::string message;
};

// The four-callback surface (plus structure query and dimensions) every
// attached solver consumes; the built-in solver uses exactly this interface.
class NlpCallbacks {
  public:
    virtual ~NlpCallbacks() = default;
    virtual int num_vars() const = 0;
    virtual int num_constraints() const = 0;
    virtual int jac_nnz() const = 0;
    virtual void bounds(std::vector<double>& xl, std::vector<double>& xu, std::vector<double>& cl,
                        std::vector<double>& cu) const = 0;
    virtual double objective(std::span<const double> x) = 0;
    virtual void gradient(std::span<const double> x, std::span<double> grad) = 0;
    virtual void constraints(std::span<const double> x, std::span<double> c) = 0;
    virtual void jacobian_structure(std::span<int> rows, std::span<int> cols) = 0;
    virtual void jacobian_values(std::span<const double> x, std::span<double> values) = 0;
};

// NlpProblem adapter; `workers` fans out Jacobian block evaluation
class ProblemCallbacks : public NlpCallbacks {
  public:
    ProblemCallbacks(const NlpProblem& p, int workers = 1);
    int num_vars() const override;
    int num_constraints() const override;
    int jac_nnz() const override;
    void bounds(std::vector<double>& xl, std::vector<double>& xu, std::vector<double>& cl,
                std::vector<double>& cu) const override;
    double objective(std::span<const double> x) override;
    void gradient(std::span<const double> x, std::span<double> grad) override;
    void constraints(std::span<const double> x, std::span<double> c) override;
    void jacobian_structure(std::span<int> rows, std::span<int> cols) override;
    void jacobian_values(std::span<const double> x, std::span<double> values) override;

  private:
    const NlpProblem& p_;
    int workers_;
};

// built-in primal-dual interior-point solver
SolveResult solve(NlpCallbacks& cb, std::span<const double> x0, const SolverOptions& opts = {});
SolveResult solve(const NlpProblem& p, std::span<const double> x0, const SolverOptions& opts = {});

// A pluggable solver backend; the built-in solver is one implementation.
class SolverBackend {
  public:
    virtual ~SolverBackend() = default;
    virtual SolveResult run(NlpCallbacks& cb, std::span<const double> x0,
                            const SolverOptions& opts) = 0;
};

class SolverHandle {
  public:
    explicit SolverHandle(std::shared_ptr<SolverBackend> backend) : backend_(std::move(backend)) {}
    SolveResult solve(const NlpProblem& p, std::span<const double> x0,
                      const SolverOptions& opts = {}) const;

  private:
    std::shared_ptr<SolverBackend> backend_;
};

SolverHandle attach_external_solver(std::shared_ptr<SolverBackend> backend);
SolverHandle builtin_solver();

// <name>.result.json
void save_result(const SolveResult& r, const std::string& path);
SolveResult load_result(const std::string& path);

}  // namespace colloc

#include "colloc/eval.hpp"

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <thread>

#include "colloc/kernels.hpp"

namespace colloc {

namespace {

// Persistent helper threads for block-parallel evaluation. A job drains an
// atomic chunk counter; exactly (workers - 1) helpers join the caller.
class WorkerPool {
  public:
    static WorkerPool& get() {
        static WorkerPool pool;
        return pool;
    }

    void run(int count, int workers, int chunk, const std::function<void(int)>& fn) {
        if (workers <= 1 || count <= 1) {
            for (int i = 0; i < count; ++i) fn(i);
            return;
        }
        // one multi-worker job at a time; concurrent callers run independently
        std::unique_lock job(job_mu_);
        const int helpers = workers - 1;
        {
            std::unique_lock lk(mu_);
            ensure_threads(helpers);
            fn_ = &fn;
            total_ = count;
            chunk_ = std::max(1, chunk);
            next_.store(0, std::memory_order_relaxed);
            error_ = nullptr;
            needed_ = helpers;
            claimed_ = 0;
            pending_ = helpers;
            ++generation_;
        }
        cv_.notify_all();
        drain();
        {
            std::unique_lock lk(mu_);
            done_cv_.wait(lk, [&] { return pending_ == 0; });
            fn_ = nullptr;
            if (error_) std::rethrow_exception(error_);
        }
    }

    ~WorkerPool() {
        {
            std::unique_lock lk(mu_);
            shutdown_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

  private:
    void ensure_threads(int count) {
        while (static_cast<int>(threads_.size()) < count)
            threads_.emplace_back([this] { worker_loop(); });
    }

    void drain() {
        for (;;) {
            const int begin = next_.fetch_add(chunk_, std::memory_order_relaxed);
            if (begin >= total_) break;
            const int end = std::min(total_, begin + chunk_);
            for (int i = begin; i < end; ++i) {
                try {
                    (*fn_)(i);
                } catch (...) {
                    std::unique_lock lk(mu_);
                    if (!error_) error_ = std::current_exception();
                    next_.store(total_, std::memory_order_relaxed);
                    return;
                }
            }
        }
    }

    void worker_loop() {
        std::uint64_t seen = 0;
        std::unique_lock lk(mu_);
        for (;;) {
            cv_.wait(lk, [&] {
                return shutdown_ || (fn_ && generation_ != seen && claimed_ < needed_);
            });
            if (shutdown_) return;
            seen = generation_;
            ++claimed_;
            lk.unlock();
            drain();
            lk.lock();
            if (--pending_ == 0) done_cv_.notify_all();
        }
    }

    std::mutex job_mu_;
    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    std::vector<std::thread> threads_;
    const std::function<void(int)>* fn_ = nullptr;
    std::atomic<int> next_{0};
    int total_ = 0, chunk_ = 1;
    int needed_ = 0, claimed_ = 0, pending_ = 0;
    std::uint64_t generation_ = 0;
    std::exception_ptr error_;
    bool shutdown_ = false;
};

const Kernel& kernel_for(const FunctionBlock& b, int block_index, bool objective) {
    const Kernel* k = find_kernel(b.kernel);
    if (!k) throw EvalError("unknown kernel '" + b.kernel + "'", block_index, objective);
    return *k;
}

void gather_into(std::span<const double> X, const FunctionBlock& b, std::vector<double>& xs) {
    xs.resize(b.dep_indices.size());
    for (size_t i = 0; i < b.dep_indices.size(); ++i) {
        const int d = b.dep_indices[i];
        if (d < 0 || d >= static_cast<int>(X.size()))
            throw MalformedProblem("dependent index " + std::to_string(d) + " out of range");
        xs[i] = X[d];
    }
}

bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace

std::vector<double> gather_deps(std::span<const double> X, const FunctionBlock& block) {
    std::vector<double> xs;
    gather_into(X, block, xs);
    return xs;
}

void eval_constraints(std::span<const double> X, const NlpProblem& p, std::span<double> C) {
    ensure_builtin_kernels();
    std::vector<double> xs, out;
    for (size_t bi = 0; bi < p.constraint_blocks.size(); ++bi) {
        const auto& b = p.constraint_blocks[bi];
        const Kernel& k = kernel_for(b, static_cast<int>(bi), false);
        gather_into(X, b, xs);
        out.resize(b.output_dim);
        k.eval(xs, b.aux, out);
        if (!all_finite(out))
            throw EvalError("non-finite constraint value in block " + std::to_string(bi) +
                                " (kernel " + b.kernel + ")",
                            static_cast<int>(bi));
        for (int r = 0; r < b.output_dim; ++r) C[b.row_indices[r]] = out[r];
    }
}

std::vector<double> eval_constraints(std::span<const double> X, const NlpProblem& p) {
    std::vector<double> C(p.num_constraints, 0.0);
    eval_constraints(X, p, C);
    return C;
}

double eval_objective(std::span<const double> X, const NlpProblem& p) {
    ensure_builtin_kernels();
    std::vector<double> xs, out;
    double total = 0;
    for (size_t bi = 0; bi < p.objective_blocks.size(); ++bi) {
        const auto& b = p.objective_blocks[bi];
        const Kernel& k = kernel_for(b, static_cast<int>(bi), true);
        gather_into(X, b, xs);
        out.assign(1, 0.0);
        k.eval(xs, b.aux, out);
        if (!std::isfinite(out[0]))
            throw EvalError("non-finite objective value in block " + std::to_string(bi),
                            static_cast<int>(bi), true);
        total += out[0];
    }
    return total;
}

void jacobian_structure(const NlpProblem& p, std::vector<int>& rows, std::vector<int>& cols) {
    ensure_builtin_kernels();
    rows.assign(p.jac_nnz, 0);
    cols.assign(p.jac_nnz, 0);
    std::vector<int> lr, lc;
    for (size_t bi = 0; bi < p.constraint_blocks.size(); ++bi) {
        const auto& b = p.constraint_blocks[bi];
        const Kernel& k = kernel_for(b, static_cast<int>(bi), false);
        const int nnz = k.jac_nnz(b.aux);
        if (nnz != b.jac_slot_count)
            throw MalformedProblem("block " + std::to_string(bi) + ": jac_slot_count " +
                                   std::to_string(b.jac_slot_count) + " != kernel nnz " +
                                   std::to_string(nnz));
        lr.resize(nnz);
        lc.resize(nnz);
        k.jac_structure(b.aux, lr, lc);
        for (int s = 0; s < nnz; ++s) {
            rows[b.jac_slot_offset + s] = b.row_indices[lr[s]];
            cols[b.jac_slot_offset + s] = b.dep_indices[lc[s]];
        }
    }
}

void eval_jacobian_values(std::span<const double> X, const NlpProblem& p, int workers,
                          std::span<double> values) {
    ensure_builtin_kernels();
    const int nblocks = static_cast<int>(p.constraint_blocks.size());
    const int chunk = std::max(1, nblocks / (4 * std::max(1, workers)));
    auto eval_block = [&](int bi) {
        thread_local std::vector<double> xs;
        const auto& b = p.constraint_blocks[bi];
        const Kernel& k = kernel_for(b, bi, false);
        gather_into(X, b, xs);
        auto slot = values.subspan(b.jac_slot_offset, b.jac_slot_count);
        k.jac_values(xs, b.aux, slot);
        if (!all_finite(slot))
            throw EvalError("non-finite Jacobian value in block " + std::to_string(bi) +
                                " (kernel " + b.kernel + ")",
                            bi);
    };
    WorkerPool::get().run(nblocks, workers, chunk, eval_block);
}

SparseTriplets eval_jacobian(std::span<const double> X, const NlpProblem& p, int workers) {
    SparseTriplets t;
    jacobian_structure(p, t.rows, t.cols);
    t.values.assign(p.jac_nnz, 0.0);
    eval_jacobian_values(X, p, workers, t.values);
    return t;
}

std::vector<double> eval_objective_gradient(std::span<const double> X, const NlpProblem& p) {
    ensure_builtin_kernels();
    std::vector<double> grad(p.num_vars, 0.0);
    std::vector<double> xs, vals;
    std::vector<int> lr, lc;
    for (size_t bi = 0; bi < p.objective_blocks.size(); ++bi) {
        const auto& b = p.objective_blocks[bi];
        const Kernel& k = kernel_for(b, static_cast<int>(bi), true);
        gather_into(X, b, xs);
        const int nnz = k.jac_nnz(b.aux);
        lr.resize(nnz);
        lc.resize(nnz);
        vals.resize(nnz);
        k.jac_structure(b.aux, lr, lc);
        k.jac_values(xs, b.aux, vals);
        if (!all_finite(vals))
            throw EvalError("non-finite objective gradient in block " + std::to_string(bi),
                            static_cast<int>(bi), true);
        for (int s = 0; s < nnz; ++s) grad[b.dep_indices[lc[s]]] += vals[s];
    }
    return grad;
}

}  // namespace colloc

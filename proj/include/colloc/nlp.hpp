#pragma once

#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace colloc {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// One constraint or cost unit: a kernel applied to a gathered slice of X.
struct FunctionBlock {
    std::string kernel;
    std::vector<int> dep_indices;   // indices of the block's inputs in X
    std::vector<int> row_indices;   // owned rows in C (empty for objectives)
    std::vector<double> aux;        // kernel-specific constants
    int jac_slot_offset = 0;        // slot range in the global nonzero array
    int jac_slot_count = 0;
    int output_dim = 1;
};

// Immutable sparse-NLP description:
//   min sum_i L_i(X_i)  s.t.  cl <= C(X) <= cu,  xl <= X <= xu
struct NlpProblem {
    int num_vars = 0;
    std::vector<double> var_lower, var_upper;
    std::vector<FunctionBlock> constraint_blocks;
    std::vector<FunctionBlock> objective_blocks;
    int num_constraints = 0;
    std::vector<double> constr_lower, constr_upper;
    int jac_nnz = 0;
};

struct SparseTriplets {
    std::vector<int> rows, cols;
    std::vector<double> values;
};

struct EvalError : std::runtime_error {
    int block_index;     // index into constraint_blocks / objective_blocks
    bool objective;
    EvalError(const std::string& what, int block, bool obj = false)
        : std::runtime_error(what), block_index(block), objective(obj) {}
};

struct MalformedProblem : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace colloc

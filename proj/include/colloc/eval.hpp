#pragma once

#include <span>
#include <vector>

#include "colloc/nlp.hpp"

namespace colloc {

// x_j = X[dep_indices], order preserved
std::vector<double> gather_deps(std::span<const double> X, const FunctionBlock& block);

// C(X); every row written by exactly one block
void eval_constraints(std::span<const double> X, const NlpProblem& p, std::span<double> C);
std::vector<double> eval_constraints(std::span<const double> X, const NlpProblem& p);

double eval_objective(std::span<const double> X, const NlpProblem& p);

// global (row, col) pattern; independent of X
void jacobian_structure(const NlpProblem& p, std::vector<int>& rows, std::vector<int>& cols);

// values only, into a caller-owned array of length jac_nnz; disjoint slot
// ranges make the result bit-identical for any worker count
void eval_jacobian_values(std::span<const double> X, const NlpProblem& p, int workers,
                          std::span<double> values);
SparseTriplets eval_jacobian(std::span<const double> X, const NlpProblem& p, int workers = 1);

std::vector<double> eval_objective_gradient(std::span<const double> X, const NlpProblem& p);

}  // namespace colloc

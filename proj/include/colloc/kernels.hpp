#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace colloc {

// A registered constraint/cost kernel: value function, analytic Jacobian
// values, and the Jacobian's (row, col) pattern. The pattern depends only on
// aux, never on x, so problem structure is built once.
struct Kernel {
    std::string name;
    std::function<int(std::span<const double> aux)> input_dim;
    std::function<int(std::span<const double> aux)> output_dim;
    std::function<int(std::span<const double> aux)> jac_nnz;
    std::function<void(std::span<const double> x, std::span<const double> aux,
                       std::span<double> out)>
        eval;
    std::function<void(std::span<const double> x, std::span<const double> aux,
                       std::span<double> values)>
        jac_values;
    std::function<void(std::span<const double> aux, std::span<int> rows, std::span<int> cols)>
        jac_structure;
};

// nullptr when the name is not registered
const Kernel* find_kernel(const std::string& name);

// registration happens at startup (builtins) or in test setup, before any use
void register_kernel(Kernel k);
void ensure_builtin_kernels();

std::vector<std::string> registered_kernel_names();

}  // namespace colloc

#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "colloc/nlp.hpp"

namespace colloc {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// load/parse/consistency failure, message carries block index and field
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// <base>.prob.json / <base>.bounds.json / <base>.guess.json
struct ProblemPaths {
    std::string problem, bounds, guess;
    static ProblemPaths from_base(const std::string& base);
};

// Bounds with |value| >= 1e19 are treated as unbounded on that side; files
// store that sentinel, memory uses +-infinity.
inline constexpr double kBoundInf = 1e19;

// writes all three files, or none on failure
void save_problem(const NlpProblem& p, std::span<const double> x0, const ProblemPaths& paths);

// fully validated problem + initial guess; throws FormatError / IoError
std::pair<NlpProblem, std::vector<double>> load_problem(const ProblemPaths& paths);

// empty iff all data-model invariants hold; one diagnostic per violation
std::vector<std::string> validate(const NlpProblem& p);

}  // namespace colloc

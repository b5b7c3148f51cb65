#pragma once

#include <optional>
#include <string>
#include <vector>

#include "colloc/models.hpp"
#include "colloc/nlp.hpp"

namespace colloc {

enum class Scheme { HermiteSimpson, Trapezoidal };

Scheme scheme_from_name(const std::string& name);
const char* scheme_name(Scheme s);

enum class SymmetryMode { None, Identity, Mirror };

// One continuous phase: a dynamics model collocated over `nodes` grid points
// of total length `duration`. Empty pin vectors leave that boundary free.
struct PhaseSpec {
    Model model;
    int nodes = 11;
    double duration = 0.4;
    std::vector<double> fix_q0, fix_qd0, fix_qN, fix_qdN;
    bool gait_rows = false;  // emit the walking task's path/objective rows
};

struct HybridSystemSpec {
    struct Edge {
        int from = 0, to = 0;
        int reset_edge_id = 0;  // 0 identity, 1 compass impact + relabel
    };
    std::vector<PhaseSpec> phases;
    std::vector<Edge> edges;
    bool cyclic = false;  // last edge closes the phase cycle (periodic gait)
};

struct GaitTask {
    double speed = 0.0;           // desired average hip speed per step
    double step_duration = 0.4;   // fixed T
    double incline = 0.0;         // touchdown height change per step
    double clearance = 0.05;      // swing-foot height at midstep
    double friction_mu = 0.8;
    bool symmetric = true;        // tie the two steps of the cycle together
    double min_step_angle = 0.05; // touchdown leg separation (half-angle)
};

struct PhaseMeta {
    Model model;
    int nodes = 0;
    double duration = 0;
    int var_offset = 0;  // first variable of this phase

    int vars_per_node() const { return 3 * model.n_q + model.n_u; }
    int node_base(int node) const { return var_offset + node * vars_per_node(); }
    int q_index(int node, int i) const { return node_base(node) + i; }
    int qd_index(int node, int i) const { return node_base(node) + model.n_q + i; }
    int qdd_index(int node, int i) const { return node_base(node) + 2 * model.n_q + i; }
    int u_index(int node, int k) const { return node_base(node) + 3 * model.n_q + k; }
    double node_time(int node) const { return duration * node / (nodes - 1); }
};

struct TranscriptionMeta {
    Scheme scheme = Scheme::HermiteSimpson;
    std::vector<PhaseMeta> phases;
    int num_vars = 0;
    std::vector<std::string> row_labels;  // one per constraint row
};

struct PhaseTrajectory {
    std::vector<double> t;                   // node times
    std::vector<std::vector<double>> q, qd, qdd, u;  // [node][component]
};

struct Trajectory {
    std::vector<PhaseTrajectory> phases;
};

std::pair<NlpProblem, TranscriptionMeta> transcribe(const HybridSystemSpec& spec,
                                                    const GaitTask& task, Scheme scheme);

Trajectory extract_trajectory(std::span<const double> X, const TranscriptionMeta& meta);
std::vector<double> pack_trajectory(const Trajectory& traj, const TranscriptionMeta& meta);

// closed-form size formulas, kept in sync with the builder by tests
struct TranscriptionCounts {
    int num_vars = 0, num_constraints = 0, jac_nnz = 0;
};
TranscriptionCounts expected_counts(const HybridSystemSpec& spec, const GaitTask& task,
                                    Scheme scheme);

// task builders
HybridSystemSpec gait_system(const Model& compass, int nodes_per_phase, const GaitTask& task);
HybridSystemSpec cartpole_swingup_system(const Model& cartpole, int nodes, double duration);
HybridSystemSpec integrator_reach_system(const Model& di, int nodes, double duration, double x0,
                                         double v0, double xf, double vf);

// initial guess consistent with the spec's variable layout
std::vector<double> initial_guess(const HybridSystemSpec& spec, const GaitTask& task,
                                  const TranscriptionMeta& meta);

// speed x incline Cartesian product, row-major in (speed, incline)
std::vector<GaitTask> build_gait_grid(const std::vector<double>& speeds,
                                      const std::vector<double>& inclines,
                                      const GaitTask& base);

// sidecar metadata file for trajectory extraction (<base>.meta.json)
void save_meta(const TranscriptionMeta& meta, const std::string& path);
TranscriptionMeta load_meta(const std::string& path);

}  // namespace colloc

#include "colloc/transcribe.hpp"

#include <nlohmann/json.hpp>

#include <cassert>
#include <cmath>
#include <fstream>

#include "colloc/kernels.hpp"
#include "colloc/problem_io.hpp"

namespace colloc {

using nlohmann::json;

Scheme scheme_from_name(const std::string& name) {
    if (name == "hermite-simpson" || name == "hs") return Scheme::HermiteSimpson;
    if (name == "trapezoidal" || name == "trap") return Scheme::Trapezoidal;
    throw std::invalid_argument("unknown scheme: " + name);
}

const char* scheme_name(Scheme s) {
    return s == Scheme::HermiteSimpson ? "hermite-simpson" : "trapezoidal";
}

namespace {

constexpr double kHipHeightRatio = 0.8;  // stance-angle box: hip no lower than 0.8 l
constexpr double kSwingAngleMax = 1.0;
constexpr double kLiftAmplitude = 0.4;   // swing excursion in the initial guess

class Builder {
  public:
    explicit Builder(int num_vars) {
        p_.num_vars = num_vars;
        p_.var_lower.assign(num_vars, -kInf);
        p_.var_upper.assign(num_vars, kInf);
    }

    void add_block(const std::string& kernel, std::vector<int> deps, std::vector<double> aux,
                   std::span<const double> lo, std::span<const double> hi,
                   const std::string& label) {
        const Kernel* k = find_kernel(kernel);
        assert(k != nullptr);
        FunctionBlock b;
        b.kernel = kernel;
        b.dep_indices = std::move(deps);
        b.aux = std::move(aux);
        b.output_dim = k->output_dim(b.aux);
        b.jac_slot_count = k->jac_nnz(b.aux);
        b.jac_slot_offset = next_slot_;
        next_slot_ += b.jac_slot_count;
        b.row_indices.resize(b.output_dim);
        for (int r = 0; r < b.output_dim; ++r) {
            b.row_indices[r] = next_row_++;
            p_.constr_lower.push_back(lo[r]);
            p_.constr_upper.push_back(hi[r]);
            labels_.push_back(label + "[" + std::to_string(r) + "]");
        }
        p_.constraint_blocks.push_back(std::move(b));
    }

    void add_equality(const std::string& kernel, std::vector<int> deps, std::vector<double> aux,
                      const std::string& label) {
        const Kernel* k = find_kernel(kernel);
        assert(k != nullptr);
        const int m = k->output_dim(aux);
        std::vector<double> zero(m, 0.0);
        add_block(kernel, std::move(deps), std::move(aux), zero, zero, label);
    }

    void add_objective(const std::string& kernel, std::vector<int> deps,
                       std::vector<double> aux) {
        const Kernel* k = find_kernel(kernel);
        assert(k != nullptr);
        FunctionBlock b;
        b.kernel = kernel;
        b.dep_indices = std::move(deps);
        b.aux = std::move(aux);
        b.output_dim = 1;
        b.jac_slot_offset = 0;
        b.jac_slot_count = k->jac_nnz(b.aux);
        p_.objective_blocks.push_back(std::move(b));
    }

    void set_var_bounds(int idx, double lo, double hi) {
        p_.var_lower[idx] = lo;
        p_.var_upper[idx] = hi;
    }

    NlpProblem finish(std::vector<std::string>& labels_out) {
        p_.num_constraints = next_row_;
        p_.jac_nnz = next_slot_;
        labels_out = std::move(labels_);
        return std::move(p_);
    }

  private:
    NlpProblem p_;
    int next_row_ = 0;
    int next_slot_ = 0;
    std::vector<std::string> labels_;
};

SymmetryMode symmetry_mode(const HybridSystemSpec& spec, const GaitTask& task) {
    const bool gait = spec.phases.size() == 2 && spec.phases[0].gait_rows && spec.cyclic;
    if (!gait || !task.symmetric) return SymmetryMode::None;
    return std::abs(task.speed) < 1e-12 ? SymmetryMode::Mirror : SymmetryMode::Identity;
}

std::vector<int> node_deps(const PhaseMeta& ph, int node) {
    std::vector<int> d;
    const int n = ph.vars_per_node();
    d.reserve(n);
    for (int i = 0; i < n; ++i) d.push_back(ph.node_base(node) + i);
    return d;
}

std::vector<int> state_deps(const PhaseMeta& ph, int node) {
    std::vector<int> d;
    for (int i = 0; i < 3 * ph.model.n_q; ++i) d.push_back(ph.node_base(node) + i);
    return d;
}

void check_phase(const PhaseSpec& ph, Scheme scheme) {
    if (scheme == Scheme::HermiteSimpson && (ph.nodes < 5 || ph.nodes % 2 == 0))
        throw std::invalid_argument("Hermite-Simpson needs an odd node count >= 5, got " +
                                    std::to_string(ph.nodes));
    if (scheme == Scheme::Trapezoidal && ph.nodes < 2)
        throw std::invalid_argument("trapezoidal needs at least 2 nodes");
    if (ph.duration <= 0) throw std::invalid_argument("phase duration must be positive");
}

std::vector<double> quadrature_weights(Scheme scheme, int nodes, double duration) {
    const double h = duration / (nodes - 1);
    std::vector<double> w(nodes, 0.0);
    if (scheme == Scheme::HermiteSimpson) {
        for (int i = 0; i < nodes; ++i)
            w[i] = (i == 0 || i == nodes - 1) ? h / 3 : (i % 2 == 1 ? 4 * h / 3 : 2 * h / 3);
    } else {
        for (int i = 0; i < nodes; ++i) w[i] = (i == 0 || i == nodes - 1) ? h / 2 : h;
    }
    return w;
}

}  // namespace

std::pair<NlpProblem, TranscriptionMeta> transcribe(const HybridSystemSpec& spec,
                                                    const GaitTask& task, Scheme scheme) {
    ensure_builtin_kernels();
    if (spec.phases.empty()) throw std::invalid_argument("no phases");
    if (task.step_duration <= 0) throw std::invalid_argument("step duration must be positive");

    TranscriptionMeta meta;
    meta.scheme = scheme;
    int total_vars = 0;
    for (const auto& ph : spec.phases) {
        check_phase(ph, scheme);
        PhaseMeta pm;
        pm.model = ph.model;
        pm.nodes = ph.nodes;
        pm.duration = ph.duration;
        pm.var_offset = total_vars;
        total_vars += ph.nodes * pm.vars_per_node();
        meta.phases.push_back(pm);
    }
    meta.num_vars = total_vars;

    Builder bld(total_vars);
    const SymmetryMode sym = symmetry_mode(spec, task);
    const double inf = kInf;

    for (size_t j = 0; j < spec.phases.size(); ++j) {
        const PhaseSpec& ph = spec.phases[j];
        const PhaseMeta& pm = meta.phases[j];
        const Model& mdl = ph.model;
        const int nq = mdl.n_q, N = ph.nodes;
        const auto maux = model_aux(mdl);
        const std::string pfx = "phase" + std::to_string(j) + "/";
        // under a symmetry tie, the trailing phase is an exact (possibly
        // mirrored) copy of the lead phase; its dynamics and collocation
        // equalities are implied and would make the equality Jacobian
        // rank-deficient, so only the lead phase carries them
        const bool lead_phase = !(sym != SymmetryMode::None && j > 0);

        const double h = ph.duration / (N - 1);
        if (lead_phase) {
            for (int i = 0; i < N; ++i)
                bld.add_equality("dynamics_defect", node_deps(pm, i), maux,
                                 pfx + "node" + std::to_string(i) + "/dynamics");

            if (scheme == Scheme::HermiteSimpson) {
                for (int k = 0; 2 * k + 2 <= N - 1; ++k) {
                    std::vector<int> deps;
                    for (int node : {2 * k, 2 * k + 1, 2 * k + 2}) {
                        auto s = state_deps(pm, node);
                        deps.insert(deps.end(), s.begin(), s.end());
                    }
                    bld.add_equality("hs_collocation", std::move(deps),
                                     {static_cast<double>(nq), 2 * h},
                                     pfx + "interval" + std::to_string(k) + "/collocation");
                }
            } else {
                for (int k = 0; k + 1 <= N - 1; ++k) {
                    std::vector<int> deps = state_deps(pm, k);
                    auto s = state_deps(pm, k + 1);
                    deps.insert(deps.end(), s.begin(), s.end());
                    bld.add_equality("trapezoidal_collocation", std::move(deps),
                                     {static_cast<double>(nq), h},
                                     pfx + "interval" + std::to_string(k) + "/collocation");
                }
            }
        }

        if (ph.gait_rows) {
            if (mdl.kind != ModelKind::CompassGait)
                throw std::invalid_argument("gait rows require the compass gait model");
            const double theta1_max = std::acos(kHipHeightRatio);  // hip-height lower bound
            const std::vector<double> qlo{-theta1_max, -kSwingAngleMax};
            const std::vector<double> qhi{theta1_max, kSwingAngleMax};
            const std::vector<double> ulo{-mdl.u_max}, uhi{mdl.u_max};
            const std::vector<double> glo{0, 0, 0}, ghi{inf, inf, inf};
            const bool lead = lead_phase;

            for (int i = 0; i < N; ++i) {
                std::vector<int> qdeps, udeps;
                for (int c = 0; c < nq; ++c) qdeps.push_back(pm.q_index(i, c));
                for (int c = 0; c < mdl.n_u; ++c) udeps.push_back(pm.u_index(i, c));
                bld.add_block("joint_limits", qdeps, {static_cast<double>(nq)}, qlo, qhi,
                              pfx + "node" + std::to_string(i) + "/joint_limits");
                bld.add_block("torque_limits", udeps, {static_cast<double>(mdl.n_u)}, ulo, uhi,
                              pfx + "node" + std::to_string(i) + "/torque_limits");
                std::vector<int> sdeps = state_deps(pm, i);
                std::vector<double> gaux = maux;
                gaux.push_back(task.friction_mu);
                bld.add_block("unilateral_grf", sdeps, gaux, glo, ghi,
                              pfx + "node" + std::to_string(i) + "/grf");
            }

            const int mid = (N - 1) / 2;
            {
                std::vector<int> qdeps;
                for (int c = 0; c < nq; ++c) qdeps.push_back(pm.q_index(mid, c));
                std::vector<double> caux = maux;
                caux.push_back(task.clearance);
                const double lo0 = 0, hi0 = inf;
                bld.add_block("foot_clearance", qdeps, caux, {&lo0, 1}, {&hi0, 1},
                              pfx + "midstep_clearance");
            }
            if (lead) {
                std::vector<int> qdeps;
                for (int c = 0; c < nq; ++c) qdeps.push_back(pm.q_index(N - 1, c));
                std::vector<double> taux = maux;
                taux.push_back(task.incline);
                bld.add_equality("foot_clearance", qdeps, taux, pfx + "touchdown_height");

                // keep the impact away from the collinear singularity
                const double sgn = task.speed < 0 ? -1.0 : 1.0;
                const double lo0 = 2 * task.min_step_angle, hi0 = inf;
                bld.add_block("linear_map", {pm.q_index(N - 1, 0), pm.q_index(N - 1, 1)},
                              {1, 2, sgn, -sgn, 0}, {&lo0, 1}, {&hi0, 1},
                              pfx + "touchdown_separation");

                std::vector<int> sdeps;
                for (int c = 0; c < nq; ++c) sdeps.push_back(pm.q_index(0, c));
                for (int c = 0; c < nq; ++c) sdeps.push_back(pm.q_index(N - 1, c));
                std::vector<double> vaux{ph.duration, task.speed};
                vaux.insert(vaux.end(), maux.begin(), maux.end());
                bld.add_equality("avg_speed", sdeps, vaux, pfx + "avg_speed");
            }
        }

        // variable boxes; pins override
        for (int i = 0; i < N; ++i) {
            if (ph.gait_rows) {
                for (int c = 0; c < nq; ++c) bld.set_var_bounds(pm.q_index(i, c), -1.2, 1.2);
                for (int c = 0; c < nq; ++c) bld.set_var_bounds(pm.qd_index(i, c), -15, 15);
                for (int c = 0; c < nq; ++c) bld.set_var_bounds(pm.qdd_index(i, c), -500, 500);
            } else {
                for (int c = 0; c < mdl.n_u; ++c)
                    bld.set_var_bounds(pm.u_index(i, c), -mdl.u_max, mdl.u_max);
            }
        }
        auto pin = [&](const std::vector<double>& v, int node, bool vel) {
            for (size_t c = 0; c < v.size(); ++c) {
                const int idx = vel ? pm.qd_index(node, static_cast<int>(c))
                                    : pm.q_index(node, static_cast<int>(c));
                bld.set_var_bounds(idx, v[c], v[c]);
            }
        };
        pin(ph.fix_q0, 0, false);
        pin(ph.fix_qd0, 0, true);
        pin(ph.fix_qN, N - 1, false);
        pin(ph.fix_qdN, N - 1, true);

        const auto w = quadrature_weights(scheme, N, ph.duration);
        for (int i = 0; i < N; ++i) {
            std::vector<int> udeps;
            for (int c = 0; c < mdl.n_u; ++c) udeps.push_back(pm.u_index(i, c));
            bld.add_objective("pseudo_energy", udeps, {static_cast<double>(mdl.n_u), w[i]});
        }
    }

    for (size_t e = 0; e < spec.edges.size(); ++e) {
        const auto& edge = spec.edges[e];
        const PhaseMeta& from = meta.phases[edge.from];
        const PhaseMeta& to = meta.phases[edge.to];
        if (from.model.n_q != to.model.n_q)
            throw std::invalid_argument("reset edge joins phases of different state dimension");
        std::vector<int> deps;
        for (int c = 0; c < from.model.n_q; ++c) deps.push_back(from.q_index(from.nodes - 1, c));
        for (int c = 0; c < from.model.n_q; ++c) deps.push_back(from.qd_index(from.nodes - 1, c));
        for (int c = 0; c < to.model.n_q; ++c) deps.push_back(to.q_index(0, c));
        for (int c = 0; c < to.model.n_q; ++c) deps.push_back(to.qd_index(0, c));
        std::vector<double> aux;
        if (edge.reset_edge_id == 0) {
            aux = {0, static_cast<double>(from.model.n_q)};
        } else {
            aux = {1};
            const auto maux = model_aux(from.model);
            aux.insert(aux.end(), maux.begin(), maux.end());
        }
        bld.add_equality("reset_map", std::move(deps), std::move(aux),
                         "edge" + std::to_string(e) + "/reset");
    }

    if (sym != SymmetryMode::None) {
        const PhaseMeta& p1 = meta.phases[0];
        const PhaseMeta& p2 = meta.phases[1];
        const int nq = p1.model.n_q, nu = p1.model.n_u, npv = p1.vars_per_node();
        const double sg = sym == SymmetryMode::Mirror ? 1.0 : -1.0;
        auto tie = [&](const std::vector<int>& vars2, const std::vector<int>& vars1,
                       const std::string& label) {
            const int m = static_cast<int>(vars2.size());
            std::vector<double> aux{static_cast<double>(m), static_cast<double>(2 * m)};
            std::vector<double> A(static_cast<size_t>(m) * 2 * m, 0.0);
            for (int i = 0; i < m; ++i) {
                A[static_cast<size_t>(i) * 2 * m + i] = 1.0;
                A[static_cast<size_t>(i) * 2 * m + m + i] = sg;
            }
            aux.insert(aux.end(), A.begin(), A.end());
            aux.insert(aux.end(), m, 0.0);  // b
            std::vector<int> deps = vars2;
            deps.insert(deps.end(), vars1.begin(), vars1.end());
            bld.add_equality("linear_map", std::move(deps), std::move(aux), label);
        };
        {
            // node 0: q and qd are already tied through the reset maps
            std::vector<int> v2, v1;
            for (int c = 0; c < nq; ++c) v2.push_back(p2.qdd_index(0, c));
            for (int c = 0; c < nu; ++c) v2.push_back(p2.u_index(0, c));
            for (int c = 0; c < nq; ++c) v1.push_back(p1.qdd_index(0, c));
            for (int c = 0; c < nu; ++c) v1.push_back(p1.u_index(0, c));
            tie(v2, v1, "symmetry/node0");
        }
        for (int i = 1; i < p1.nodes; ++i) {
            std::vector<int> v2, v1;
            for (int c = 0; c < npv; ++c) v2.push_back(p2.node_base(i) + c);
            for (int c = 0; c < npv; ++c) v1.push_back(p1.node_base(i) + c);
            tie(v2, v1, "symmetry/node" + std::to_string(i));
        }
    }

    NlpProblem p = bld.finish(meta.row_labels);
    return {std::move(p), std::move(meta)};
}

Trajectory extract_trajectory(std::span<const double> X, const TranscriptionMeta& meta) {
    if (static_cast<int>(X.size()) != meta.num_vars)
        throw std::invalid_argument("extract_trajectory: length mismatch");
    Trajectory traj;
    for (const auto& pm : meta.phases) {
        PhaseTrajectory pt;
        for (int i = 0; i < pm.nodes; ++i) {
            pt.t.push_back(pm.node_time(i));
            std::vector<double> q(pm.model.n_q), qd(pm.model.n_q), qdd(pm.model.n_q),
                u(pm.model.n_u);
            for (int c = 0; c < pm.model.n_q; ++c) {
                q[c] = X[pm.q_index(i, c)];
                qd[c] = X[pm.qd_index(i, c)];
                qdd[c] = X[pm.qdd_index(i, c)];
            }
            for (int c = 0; c < pm.model.n_u; ++c) u[c] = X[pm.u_index(i, c)];
            pt.q.push_back(std::move(q));
            pt.qd.push_back(std::move(qd));
            pt.qdd.push_back(std::move(qdd));
            pt.u.push_back(std::move(u));
        }
        traj.phases.push_back(std::move(pt));
    }
    return traj;
}

std::vector<double> pack_trajectory(const Trajectory& traj, const TranscriptionMeta& meta) {
    std::vector<double> X(meta.num_vars, 0.0);
    for (size_t j = 0; j < meta.phases.size(); ++j) {
        const auto& pm = meta.phases[j];
        const auto& pt = traj.phases[j];
        for (int i = 0; i < pm.nodes; ++i) {
            for (int c = 0; c < pm.model.n_q; ++c) {
                X[pm.q_index(i, c)] = pt.q[i][c];
                X[pm.qd_index(i, c)] = pt.qd[i][c];
                X[pm.qdd_index(i, c)] = pt.qdd[i][c];
            }
            for (int c = 0; c < pm.model.n_u; ++c) X[pm.u_index(i, c)] = pt.u[i][c];
        }
    }
    return X;
}

TranscriptionCounts expected_counts(const HybridSystemSpec& spec, const GaitTask& task,
                                    Scheme scheme) {
    TranscriptionCounts c;
    const SymmetryMode sym = symmetry_mode(spec, task);
    for (size_t j = 0; j < spec.phases.size(); ++j) {
        const auto& ph = spec.phases[j];
        const int N = ph.nodes, nq = ph.model.n_q, nu = ph.model.n_u;
        const bool lead = !(sym != SymmetryMode::None && j > 0);
        c.num_vars += N * (3 * nq + nu);
        if (lead) {
            c.num_constraints += N * nq;  // dynamics
            c.jac_nnz += N * nq * (3 * nq + nu);
            if (scheme == Scheme::HermiteSimpson) {
                const int K = (N - 1) / 2;
                c.num_constraints += 4 * nq * K;
                c.jac_nnz += 20 * nq * K;
            } else {
                const int K = N - 1;
                c.num_constraints += 2 * nq * K;
                c.jac_nnz += 8 * nq * K;
            }
        }
        if (ph.gait_rows) {
            c.num_constraints += N * nq + N * nu + 3 * N + 1;  // limits, grf, clearance
            c.jac_nnz += N * nq + N * nu + 9 * nq * N + nq;
            if (lead) {
                c.num_constraints += 3;  // touchdown, separation, avg speed
                c.jac_nnz += nq + 2 + 2 * nq;
            }
        }
    }
    for (const auto& e : spec.edges) {
        const int nq = spec.phases[e.from].model.n_q;
        c.num_constraints += 2 * nq;
        c.jac_nnz += e.reset_edge_id == 0 ? 4 * nq : 2 * nq + nq * (2 * nq + 1);
    }
    if (sym != SymmetryMode::None) {
        const int N = spec.phases[0].nodes, nq = spec.phases[0].model.n_q,
                  nu = spec.phases[0].model.n_u;
        c.num_constraints += (nq + nu) + (N - 1) * (3 * nq + nu);
        c.jac_nnz += 2 * (nq + nu) + 2 * (N - 1) * (3 * nq + nu);
    }
    return c;
}

HybridSystemSpec gait_system(const Model& compass, int nodes_per_phase, const GaitTask& task) {
    if (task.step_duration <= 0) throw std::invalid_argument("step duration must be positive");
    HybridSystemSpec spec;
    for (int j = 0; j < 2; ++j) {
        PhaseSpec ph;
        ph.model = compass;
        ph.nodes = nodes_per_phase;
        ph.duration = task.step_duration;
        ph.gait_rows = true;
        spec.phases.push_back(ph);
    }
    spec.edges.push_back({0, 1, 1});
    spec.edges.push_back({1, 0, 1});
    spec.cyclic = true;
    return spec;
}

HybridSystemSpec cartpole_swingup_system(const Model& cartpole, int nodes, double duration) {
    HybridSystemSpec spec;
    PhaseSpec ph;
    ph.model = cartpole;
    ph.nodes = nodes;
    ph.duration = duration;
    ph.fix_q0 = {0.0, 0.0};
    ph.fix_qd0 = {0.0, 0.0};
    ph.fix_qN = {0.0, M_PI};
    ph.fix_qdN = {0.0, 0.0};
    spec.phases.push_back(ph);
    return spec;
}

HybridSystemSpec integrator_reach_system(const Model& di, int nodes, double duration, double x0,
                                         double v0, double xf, double vf) {
    HybridSystemSpec spec;
    PhaseSpec ph;
    ph.model = di;
    ph.nodes = nodes;
    ph.duration = duration;
    ph.fix_q0 = {x0};
    ph.fix_qd0 = {v0};
    ph.fix_qN = {xf};
    ph.fix_qdN = {vf};
    spec.phases.push_back(ph);
    return spec;
}

namespace {

// least-squares input from the dynamics residual at zero input
void fit_input(const Model& m, const double* q, const double* qd, const double* qdd, double* u) {
    std::array<double, kMaxQ> r{};
    std::array<double, 1> zero{0.0};
    mech::dynamics_residual(m, q, qd, qdd, zero.data(), r.data());
    double B[kMaxQ];
    m.input_matrix(B);
    double num = 0, den = 0;
    for (int i = 0; i < m.n_q; ++i) {
        num += B[i] * r[i];
        den += B[i] * B[i];
    }
    u[0] = den > 0 ? num / den : 0.0;
}

}  // namespace

std::vector<double> initial_guess(const HybridSystemSpec& spec, const GaitTask& task,
                                  const TranscriptionMeta& meta) {
    std::vector<double> X(meta.num_vars, 0.0);
    const SymmetryMode sym = symmetry_mode(spec, task);
    for (size_t j = 0; j < spec.phases.size(); ++j) {
        const auto& ph = spec.phases[j];
        const auto& pm = meta.phases[j];
        const Model& mdl = ph.model;
        const int N = ph.nodes;
        const double T = ph.duration;

        for (int i = 0; i < N; ++i) {
            const double tau = static_cast<double>(i) / (N - 1);
            std::array<double, kMaxQ> q{}, qd{}, qdd{};
            double u[1] = {0.0};
            if (ph.gait_rows) {
                const double l = mdl.leg_length();
                const double step = std::abs(task.speed) * task.step_duration;
                const double alpha =
                    std::max(task.min_step_angle, std::asin(std::min(0.9, step / (2 * l))));
                const double A = kLiftAmplitude, pi = M_PI;
                const double flip = (sym == SymmetryMode::Mirror && j == 1) ? -1.0 : 1.0;
                if (std::abs(task.speed) < 1e-12) {
                    const double g0 = std::max(task.min_step_angle, 0.12);
                    q[0] = flip * g0;
                    q[1] = flip * (-g0 - A * std::sin(pi * tau));
                    qd[1] = flip * (-A * pi / T * std::cos(pi * tau));
                    qdd[1] = flip * (A * pi * pi / (T * T) * std::sin(pi * tau));
                } else {
                    const double sgn = task.speed < 0 ? -1.0 : 1.0;
                    q[0] = sgn * (2 * tau - 1) * alpha;
                    q[1] = sgn * (1 - 2 * tau) * alpha - sgn * A * std::sin(pi * tau);
                    qd[0] = sgn * 2 * alpha / T;
                    qd[1] = -sgn * 2 * alpha / T - sgn * A * pi / T * std::cos(pi * tau);
                    qdd[1] = sgn * A * pi * pi / (T * T) * std::sin(pi * tau);
                }
                fit_input(mdl, q.data(), qd.data(), qdd.data(), u);
            } else if (mdl.kind == ModelKind::CartPole) {
                const double s = 3 * tau * tau - 2 * tau * tau * tau;
                const double sd = (6 * tau - 6 * tau * tau) / T;
                const double sdd = (6 - 12 * tau) / (T * T);
                q[1] = M_PI * s;
                qd[1] = M_PI * sd;
                qdd[1] = M_PI * sdd;
                fit_input(mdl, q.data(), qd.data(), qdd.data(), u);
            } else {
                const double x0 = ph.fix_q0.empty() ? 0.0 : ph.fix_q0[0];
                const double xf = ph.fix_qN.empty() ? 0.0 : ph.fix_qN[0];
                const double s = 3 * tau * tau - 2 * tau * tau * tau;
                const double sd = (6 * tau - 6 * tau * tau) / T;
                const double sdd = (6 - 12 * tau) / (T * T);
                q[0] = x0 + (xf - x0) * s;
                qd[0] = (xf - x0) * sd;
                qdd[0] = (xf - x0) * sdd;
                fit_input(mdl, q.data(), qd.data(), qdd.data(), u);
            }
            for (int c = 0; c < mdl.n_q; ++c) {
                X[pm.q_index(i, c)] = q[c];
                X[pm.qd_index(i, c)] = qd[c];
                X[pm.qdd_index(i, c)] = qdd[c];
            }
            for (int c = 0; c < mdl.n_u; ++c) X[pm.u_index(i, c)] = u[c];
        }
    }
    return X;
}

std::vector<GaitTask> build_gait_grid(const std::vector<double>& speeds,
                                      const std::vector<double>& inclines,
                                      const GaitTask& base) {
    if (speeds.empty() || inclines.empty())
        throw std::invalid_argument("grid axes must be non-empty");
    std::vector<GaitTask> tasks;
    tasks.reserve(speeds.size() * inclines.size());
    for (double v : speeds)
        for (double dz : inclines) {
            GaitTask t = base;
            t.speed = v;
            t.incline = dz;
            tasks.push_back(t);
        }
    return tasks;
}

void save_meta(const TranscriptionMeta& meta, const std::string& path) {
    json j;
    j["scheme"] = scheme_name(meta.scheme);
    j["num_vars"] = meta.num_vars;
    j["phases"] = json::array();
    for (const auto& pm : meta.phases) {
        json p;
        p["model"] = pm.model.name();
        p["params"] = std::vector<double>(pm.model.params.begin(),
                                          pm.model.params.begin() + pm.model.n_params);
        p["u_max"] = pm.model.u_max;
        p["nodes"] = pm.nodes;
        p["duration"] = pm.duration;
        p["var_offset"] = pm.var_offset;
        j["phases"].push_back(p);
    }
    j["row_labels"] = meta.row_labels;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
}

TranscriptionMeta load_meta(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
    TranscriptionMeta meta;
    meta.scheme = scheme_from_name(j.at("scheme").get<std::string>());
    meta.num_vars = j.at("num_vars").get<int>();
    for (const auto& p : j.at("phases")) {
        PhaseMeta pm;
        pm.model = Model::by_name(p.at("model").get<std::string>());
        const auto params = p.at("params").get<std::vector<double>>();
        for (size_t i = 0; i < params.size() && i < pm.model.params.size(); ++i)
            pm.model.params[i] = params[i];
        pm.model.u_max = p.value("u_max", pm.model.u_max);
        pm.nodes = p.at("nodes").get<int>();
        pm.duration = p.at("duration").get<double>();
        pm.var_offset = p.at("var_offset").get<int>();
        meta.phases.push_back(pm);
    }
    if (j.contains("row_labels")) meta.row_labels = j["row_labels"].get<std::vector<std::string>>();
    return meta;
}

}  // namespace colloc

#include "colloc/solver.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>

#include "colloc/eval.hpp"
#include "colloc/kernels.hpp"

namespace colloc {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Clock = std::chrono::steady_clock;

const char* status_name(SolveStatus s) {
    switch (s) {
        case SolveStatus::Converged: return "converged";
        case SolveStatus::MaxIter: return "max-iter";
        case SolveStatus::InfeasibleDetected: return "infeasible-detected";
        case SolveStatus::EvaluationError: return "evaluation-error";
    }
    return "?";
}

SolveStatus status_from_name(const std::string& name) {
    if (name == "converged") return SolveStatus::Converged;
    if (name == "max-iter") return SolveStatus::MaxIter;
    if (name == "infeasible-detected") return SolveStatus::InfeasibleDetected;
    if (name == "evaluation-error") return SolveStatus::EvaluationError;
    throw std::invalid_argument("unknown solve status: " + name);
}

ProblemCallbacks::ProblemCallbacks(const NlpProblem& p, int workers) : p_(p), workers_(workers) {}
int ProblemCallbacks::num_vars() const { return p_.num_vars; }
int ProblemCallbacks::num_constraints() const { return p_.num_constraints; }
int ProblemCallbacks::jac_nnz() const { return p_.jac_nnz; }
void ProblemCallbacks::bounds(std::vector<double>& xl, std::vector<double>& xu,
                              std::vector<double>& cl, std::vector<double>& cu) const {
    xl = p_.var_lower;
    xu = p_.var_upper;
    cl = p_.constr_lower;
    cu = p_.constr_upper;
}
double ProblemCallbacks::objective(std::span<const double> x) { return eval_objective(x, p_); }
void ProblemCallbacks::gradient(std::span<const double> x, std::span<double> grad) {
    const auto g = eval_objective_gradient(x, p_);
    std::copy(g.begin(), g.end(), grad.begin());
}
void ProblemCallbacks::constraints(std::span<const double> x, std::span<double> c) {
    eval_constraints(x, p_, c);
}
void ProblemCallbacks::jacobian_structure(std::span<int> rows, std::span<int> cols) {
    std::vector<int> r, c;
    colloc::jacobian_structure(p_, r, c);
    std::copy(r.begin(), r.end(), rows.begin());
    std::copy(c.begin(), c.end(), cols.begin());
}
void ProblemCallbacks::jacobian_values(std::span<const double> x, std::span<double> values) {
    eval_jacobian_values(x, p_, workers_, values);
}

namespace {

constexpr double kTau = 0.995;       // fraction-to-boundary
constexpr double kKappaEps = 10.0;   // barrier subproblem tolerance factor
constexpr double kArmijo = 1e-4;
constexpr int kMeritMemory = 5;

struct SolverAbort {
    std::string message;
};

// times every callback invocation, validates finiteness, and (once enabled)
// presents the gradient-equilibrated scaled problem to the iteration
class TimedCallbacks {
  public:
    TimedCallbacks(NlpCallbacks& cb, SolveTiming& t) : cb_(cb), t_(t) {}

    // row/objective scales from the Jacobian and gradient at the start point
    void enable_scaling(const VectorXd& grad, const VectorXd& jval,
                        const std::vector<int>& jrow, int m, double gmax) {
        VectorXd norm = VectorXd::Zero(m);
        for (size_t k = 0; k < jrow.size(); ++k)
            norm[jrow[k]] = std::max(norm[jrow[k]], std::abs(jval[k]));
        c_scale_.resize(m);
        for (int j = 0; j < m; ++j) c_scale_[j] = norm[j] > gmax ? gmax / norm[j] : 1.0;
        const double g = grad.lpNorm<Eigen::Infinity>();
        f_scale_ = g > gmax ? gmax / g : 1.0;
        slot_scale_.resize(jrow.size());
        for (size_t k = 0; k < jrow.size(); ++k) slot_scale_[k] = c_scale_[jrow[k]];
        on_ = true;
    }
    double f_scale() const { return on_ ? f_scale_ : 1.0; }
    double c_scale(int j) const { return on_ ? c_scale_[j] : 1.0; }

    double objective(const VectorXd& x) {
        const auto t0 = Clock::now();
        double v = cb_.objective({x.data(), static_cast<size_t>(x.size())});
        t_.other_callbacks += secs(t0);
        if (!std::isfinite(v)) throw SolverAbort{"objective returned a non-finite value"};
        return on_ ? f_scale_ * v : v;
    }
    void gradient(const VectorXd& x, VectorXd& g) {
        const auto t0 = Clock::now();
        cb_.gradient({x.data(), static_cast<size_t>(x.size())},
                     {g.data(), static_cast<size_t>(g.size())});
        t_.other_callbacks += secs(t0);
        if (!g.allFinite()) throw SolverAbort{"gradient returned a non-finite value"};
        if (on_) g *= f_scale_;
    }
    void constraints(const VectorXd& x, VectorXd& c) {
        const auto t0 = Clock::now();
        cb_.constraints({x.data(), static_cast<size_t>(x.size())},
                        {c.data(), static_cast<size_t>(c.size())});
        t_.other_callbacks += secs(t0);
        if (!c.allFinite()) throw SolverAbort{"constraints returned a non-finite value"};
        if (on_) c.array() *= c_scale_.array();
    }
    void jacobian_values(const VectorXd& x, VectorXd& v) {
        const auto t0 = Clock::now();
        cb_.jacobian_values({x.data(), static_cast<size_t>(x.size())},
                            {v.data(), static_cast<size_t>(v.size())});
        t_.jacobian_eval += secs(t0);
        if (!v.allFinite()) throw SolverAbort{"jacobian returned a non-finite value"};
        if (on_) v.array() *= slot_scale_.array();
    }

  private:
    static double secs(Clock::time_point t0) {
        return std::chrono::duration<double>(Clock::now() - t0).count();
    }
    NlpCallbacks& cb_;
    SolveTiming& t_;
    bool on_ = false;
    double f_scale_ = 1.0;
    VectorXd c_scale_, slot_scale_;
};

// damped limited-memory BFGS in compact form: B = sigma I - U Cinv U'
class Lbfgs {
  public:
    explicit Lbfgs(int n, int mem = 32) : n_(n), mem_(mem) { reset(); }

    void reset() {
        S_.clear();
        Y_.clear();
        sigma_ = 1.0;
        rebuild();
    }

    int pairs() const { return static_cast<int>(S_.size()); }
    double sigma() const { return sigma_; }
    const MatrixXd& U() const { return U_; }
    const MatrixXd& C() const { return C_; }

    VectorXd multB(const VectorXd& v) const {
        VectorXd r = sigma_ * v;
        if (pairs() > 0) r -= U_ * Clu_.solve(U_.transpose() * v);
        return r;
    }

    void update(const VectorXd& s, const VectorXd& y_raw) {
        const double ss = s.squaredNorm();
        if (ss < 1e-20) return;
        VectorXd y = y_raw;
        const VectorXd Bs = multB(s);
        const double sBs = s.dot(Bs);
        const double sy_raw = s.dot(y);
        double sy = sy_raw;
        if (sy < 0.2 * sBs) {  // Powell damping keeps B positive definite
            const double theta = 0.8 * sBs / (sBs - sy);
            y = theta * y + (1 - theta) * Bs;
            sy = s.dot(y);
        }
        if (sy <= 1e-12 * std::sqrt(ss) * y.norm()) return;
        S_.push_back(s);
        Y_.push_back(y);
        if (static_cast<int>(S_.size()) > mem_) {
            S_.pop_front();
            Y_.pop_front();
        }
        // base scale follows the raw measured curvature, not the damped one,
        // so an early overestimate cannot lock itself in
        if (sy_raw > 1e-12 * std::sqrt(ss) * y_raw.norm())
            sigma_ = std::clamp(y_raw.squaredNorm() / sy_raw, 1e-4, 1e4);
        rebuild();
        if (!ok_) {  // degenerate pair set; start over from the newest pair
            S_ = {s};
            Y_ = {y};
            rebuild();
            if (!ok_) reset();
        }
    }

  private:
    void rebuild() {
        const int m = pairs();
        ok_ = true;
        if (m == 0) {
            U_.resize(n_, 0);
            C_.resize(0, 0);
            return;
        }
        MatrixXd S(n_, m), Y(n_, m);
        for (int i = 0; i < m; ++i) {
            S.col(i) = S_[i];
            Y.col(i) = Y_[i];
        }
        U_.resize(n_, 2 * m);
        U_.leftCols(m) = sigma_ * S;
        U_.rightCols(m) = Y;
        MatrixXd StS = S.transpose() * S;
        MatrixXd StY = S.transpose() * Y;
        MatrixXd L = StY.triangularView<Eigen::StrictlyLower>();
        MatrixXd D = StY.diagonal().asDiagonal();
        C_.resize(2 * m, 2 * m);
        C_.topLeftCorner(m, m) = sigma_ * StS;
        C_.topRightCorner(m, m) = L;
        C_.bottomLeftCorner(m, m) = L.transpose();
        C_.bottomRightCorner(m, m) = -D;
        Clu_.compute(C_);
        if (!Clu_.isInvertible()) ok_ = false;
    }

    int n_, mem_;
    double sigma_ = 1.0;
    std::deque<VectorXd> S_, Y_;
    MatrixXd U_, C_;
    Eigen::FullPivLU<MatrixXd> Clu_;
    bool ok_ = true;
};

struct Workspace {
    int n = 0;      // all variables
    int nf = 0;     // free (non-fixed) variables
    int mT = 0;     // all constraint rows
    int mI = 0;     // inequality rows (slacked)
    int nnz = 0;

    std::vector<double> xl, xu, cl, cu;
    std::vector<int> free_of_var, var_of_free;
    std::vector<int> slack_of_row, row_of_slack;  // -1 when equality
    std::vector<int> jrow, jcol;

    bool has_xlo(int i) const { return std::isfinite(xl[var_of_free[i]]); }
    bool has_xhi(int i) const { return std::isfinite(xu[var_of_free[i]]); }
    bool has_slo(int k) const { return std::isfinite(cl[row_of_slack[k]]); }
    bool has_shi(int k) const { return std::isfinite(cu[row_of_slack[k]]); }
};

class InteriorPoint {
  public:
    InteriorPoint(NlpCallbacks& cb, const SolverOptions& opts, SolveResult& result)
        : cb_(cb), opts_(opts), result_(result), timed_(cb, result.timing) {}

    void run(std::span<const double> x0);

  private:
    void setup(std::span<const double> x0);
    double kkt_error(double mu) const;
    bool compute_step(double delta_x, double delta_c);
    bool line_search();
    bool restoration();
    void reset_slacks();
    void accept(double alpha_p, double alpha_d);
    double merit(double f, const VectorXd& c, const VectorXd& x, const VectorXd& s) const;
    double barrier_terms(const VectorXd& x, const VectorXd& s) const;
    void factor_dense(double dx, double dc, const VectorXd& sigx, const VectorXd& sigs);
    bool factor_sparse(double dx, double dc, const VectorXd& sigx, const VectorXd& sigs);
    VectorXd solve_k0(const VectorXd& b);
    bool solve_kkt(const VectorXd& rhs, VectorXd& sol);
    void jt_mult(const VectorXd& y, const VectorXd& jv, VectorXd& out) const;  // J' y
    void finish(SolveStatus status, const std::string& message);

    NlpCallbacks& cb_;
    const SolverOptions& opts_;
    SolveResult& result_;
    TimedCallbacks timed_;

    Workspace w_;
    VectorXd x_, s_, y_, zl_, zu_, wl_, wu_;
    VectorXd grad_, cval_, jval_;
    double fval_ = 0;
    double mu_ = 0.1, nu_ = 1.0, mu_min_ = 1e-11;
    int iter_ = 0;
    std::deque<double> merit_hist_;
    std::unique_ptr<Lbfgs> bfgs_;
    double last_delta_ = 0;

    VectorXd dx_, ds_, dy_, dzl_, dzu_, dwl_, dwu_;
    double alpha_p_ = 1, alpha_d_ = 1;

    bool use_dense_ = true;
    MatrixXd Kd_;
    Eigen::PartialPivLU<MatrixXd> dlu_;
    Eigen::SparseMatrix<double> Ks_;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> slu_;
    bool sparse_analyzed_ = false;
};

void InteriorPoint::jt_mult(const VectorXd& y, const VectorXd& jv, VectorXd& out) const {
    out.setZero();
    for (int k = 0; k < w_.nnz; ++k) out[w_.jcol[k]] += jv[k] * y[w_.jrow[k]];
}

void InteriorPoint::setup(std::span<const double> x0) {
    w_.n = cb_.num_vars();
    w_.mT = cb_.num_constraints();
    w_.nnz = cb_.jac_nnz();
    cb_.bounds(w_.xl, w_.xu, w_.cl, w_.cu);

    w_.free_of_var.assign(w_.n, -1);
    for (int i = 0; i < w_.n; ++i) {
        if (w_.xu[i] - w_.xl[i] > 1e-12) {
            w_.free_of_var[i] = static_cast<int>(w_.var_of_free.size());
            w_.var_of_free.push_back(i);
        }
    }
    w_.nf = static_cast<int>(w_.var_of_free.size());

    w_.slack_of_row.assign(w_.mT, -1);
    for (int j = 0; j < w_.mT; ++j) {
        if (w_.cu[j] - w_.cl[j] > 1e-12) {
            w_.slack_of_row[j] = static_cast<int>(w_.row_of_slack.size());
            w_.row_of_slack.push_back(j);
        }
    }
    w_.mI = static_cast<int>(w_.row_of_slack.size());

    w_.jrow.assign(w_.nnz, 0);
    w_.jcol.assign(w_.nnz, 0);
    cb_.jacobian_structure(w_.jrow, w_.jcol);

    // dense fallback for small systems; the factorized matrix is what counts
    use_dense_ = w_.nf + w_.mI + w_.mT < 500;

    // interior start: clip the guess strictly inside the bounds
    x_.resize(w_.n);
    for (int i = 0; i < w_.n; ++i) {
        double v = x0[i];
        const double lo = w_.xl[i], hi = w_.xu[i];
        if (hi - lo <= 1e-12) {
            x_[i] = lo;
            continue;
        }
        double plo = std::isfinite(lo) ? std::min(1e-2 * std::max(1.0, std::abs(lo)),
                                                  std::isfinite(hi) ? 1e-2 * (hi - lo) : kInf)
                                       : 0;
        double phi = std::isfinite(hi) ? std::min(1e-2 * std::max(1.0, std::abs(hi)),
                                                  std::isfinite(lo) ? 1e-2 * (hi - lo) : kInf)
                                       : 0;
        if (std::isfinite(lo)) v = std::max(v, lo + plo);
        if (std::isfinite(hi)) v = std::min(v, hi - phi);
        x_[i] = v;
    }

    fval_ = timed_.objective(x_);
    grad_.resize(w_.n);
    timed_.gradient(x_, grad_);
    cval_.resize(w_.mT);
    timed_.constraints(x_, cval_);
    jval_.resize(w_.nnz);
    timed_.jacobian_values(x_, jval_);

    // equilibrate rows and objective so multiplier scales stay comparable
    timed_.enable_scaling(grad_, jval_, w_.jrow, w_.mT, 100.0);
    fval_ *= timed_.f_scale();
    grad_ *= timed_.f_scale();
    for (int j = 0; j < w_.mT; ++j) {
        cval_[j] *= timed_.c_scale(j);
        if (std::isfinite(w_.cl[j])) w_.cl[j] *= timed_.c_scale(j);
        if (std::isfinite(w_.cu[j])) w_.cu[j] *= timed_.c_scale(j);
    }
    for (int k = 0; k < w_.nnz; ++k) jval_[k] *= timed_.c_scale(w_.jrow[k]);

    mu_ = opts_.mu0;
    mu_min_ = std::max(1e-12, opts_.tol / 100);
    nu_ = 1.0;

    s_.resize(w_.mT);
    for (int j = 0; j < w_.mT; ++j) {
        if (w_.slack_of_row[j] < 0) {
            s_[j] = w_.cl[j];
            continue;
        }
        const double lo = w_.cl[j], hi = w_.cu[j];
        double v = cval_[j];
        const double span = std::isfinite(hi - lo) ? hi - lo : 1.0;
        if (std::isfinite(lo)) v = std::max(v, lo + std::min(1e-2 * std::max(1.0, std::abs(lo)), 1e-2 * span));
        if (std::isfinite(hi)) v = std::min(v, hi - std::min(1e-2 * std::max(1.0, std::abs(hi)), 1e-2 * span));
        s_[j] = v;
    }

    auto dual_init = [&](double dist) { return std::clamp(mu_ / std::max(dist, 1e-8), 1e-6, 1e6); };
    y_ = VectorXd::Zero(w_.mT);
    zl_.resize(w_.nf);
    zu_.resize(w_.nf);
    for (int i = 0; i < w_.nf; ++i) {
        const int v = w_.var_of_free[i];
        zl_[i] = w_.has_xlo(i) ? dual_init(x_[v] - w_.xl[v]) : 0;
        zu_[i] = w_.has_xhi(i) ? dual_init(w_.xu[v] - x_[v]) : 0;
    }
    wl_.resize(w_.mI);
    wu_.resize(w_.mI);
    for (int k = 0; k < w_.mI; ++k) {
        const int j = w_.row_of_slack[k];
        wl_[k] = w_.has_slo(k) ? dual_init(s_[j] - w_.cl[j]) : 0;
        wu_[k] = w_.has_shi(k) ? dual_init(w_.cu[j] - s_[j]) : 0;
    }

    bfgs_ = std::make_unique<Lbfgs>(w_.nf);
    merit_hist_.clear();
}

double InteriorPoint::kkt_error(double mu) const {
    VectorXd jty(w_.n);
    jt_mult(y_, jval_, jty);
    double dual = 0, comp = 0, prim = 0;
    double dual_scale = 0;
    int count = 0;
    for (int i = 0; i < w_.nf; ++i) {
        const int v = w_.var_of_free[i];
        dual = std::max(dual, std::abs(grad_[v] + jty[v] - zl_[i] + zu_[i]));
        if (w_.has_xlo(i)) comp = std::max(comp, std::abs((x_[v] - w_.xl[v]) * zl_[i] - mu));
        if (w_.has_xhi(i)) comp = std::max(comp, std::abs((w_.xu[v] - x_[v]) * zu_[i] - mu));
        dual_scale += std::abs(zl_[i]) + std::abs(zu_[i]);
        count += 2;
    }
    for (int k = 0; k < w_.mI; ++k) {
        const int j = w_.row_of_slack[k];
        dual = std::max(dual, std::abs(-y_[j] - wl_[k] + wu_[k]));
        if (w_.has_slo(k)) comp = std::max(comp, std::abs((s_[j] - w_.cl[j]) * wl_[k] - mu));
        if (w_.has_shi(k)) comp = std::max(comp, std::abs((w_.cu[j] - s_[j]) * wu_[k] - mu));
        dual_scale += std::abs(wl_[k]) + std::abs(wu_[k]);
        count += 2;
    }
    for (int j = 0; j < w_.mT; ++j) {
        prim = std::max(prim, std::abs(cval_[j] - s_[j]));
        dual_scale += std::abs(y_[j]);
        ++count;
    }
    const double sd = std::max(100.0, dual_scale / std::max(1, count)) / 100.0;
    return std::max({dual / sd, comp / sd, prim});
}

void InteriorPoint::factor_dense(double dx, double dc, const VectorXd& sigx,
                                 const VectorXd& sigs) {
    const int nt = w_.nf + w_.mI + w_.mT;
    Kd_.setZero(nt, nt);
    for (int i = 0; i < w_.nf; ++i) Kd_(i, i) = bfgs_->sigma() + dx + sigx[i];
    for (int k = 0; k < w_.mI; ++k) Kd_(w_.nf + k, w_.nf + k) = sigs[k] + dx;
    for (int t = 0; t < w_.nnz; ++t) {
        const int f = w_.free_of_var[w_.jcol[t]];
        if (f < 0) continue;
        const int r = w_.nf + w_.mI + w_.jrow[t];
        Kd_(r, f) += jval_[t];
        Kd_(f, r) += jval_[t];
    }
    for (int k = 0; k < w_.mI; ++k) {
        const int r = w_.nf + w_.mI + w_.row_of_slack[k];
        Kd_(r, w_.nf + k) = -1;
        Kd_(w_.nf + k, r) = -1;
    }
    for (int j = 0; j < w_.mT; ++j) Kd_(w_.nf + w_.mI + j, w_.nf + w_.mI + j) = -dc;
    dlu_.compute(Kd_);
}

bool InteriorPoint::factor_sparse(double dx, double dc, const VectorXd& sigx,
                                  const VectorXd& sigs) {
    const int nt = w_.nf + w_.mI + w_.mT;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(w_.nf + w_.mI + 2 * w_.nnz + 2 * w_.mI + w_.mT);
    for (int i = 0; i < w_.nf; ++i)
        trip.emplace_back(i, i, bfgs_->sigma() + dx + sigx[i]);
    for (int k = 0; k < w_.mI; ++k) trip.emplace_back(w_.nf + k, w_.nf + k, sigs[k] + dx);
    for (int t = 0; t < w_.nnz; ++t) {
        const int f = w_.free_of_var[w_.jcol[t]];
        if (f < 0) continue;
        const int r = w_.nf + w_.mI + w_.jrow[t];
        trip.emplace_back(r, f, jval_[t]);
        trip.emplace_back(f, r, jval_[t]);
    }
    for (int k = 0; k < w_.mI; ++k) {
        const int r = w_.nf + w_.mI + w_.row_of_slack[k];
        trip.emplace_back(r, w_.nf + k, -1.0);
        trip.emplace_back(w_.nf + k, r, -1.0);
    }
    for (int j = 0; j < w_.mT; ++j)
        trip.emplace_back(w_.nf + w_.mI + j, w_.nf + w_.mI + j, -dc - 1e-14);
    Ks_.resize(nt, nt);
    Ks_.setFromTriplets(trip.begin(), trip.end());
    Ks_.makeCompressed();
    if (!sparse_analyzed_) {
        slu_.analyzePattern(Ks_);
        sparse_analyzed_ = true;
    }
    slu_.factorize(Ks_);
    return slu_.info() == Eigen::Success;
}

VectorXd InteriorPoint::solve_k0(const VectorXd& b) {
    if (use_dense_) return dlu_.solve(b);
    return slu_.solve(b);
}

bool InteriorPoint::solve_kkt(const VectorXd& rhs, VectorXd& sol) {
    sol = solve_k0(rhs);
    if (!sol.allFinite()) return false;
    if (bfgs_->pairs() > 0) {
        const MatrixXd& U = bfgs_->U();
        const int p = static_cast<int>(U.cols());
        const int nt = static_cast<int>(rhs.size());
        MatrixXd Uhat = MatrixXd::Zero(nt, p);
        Uhat.topRows(w_.nf) = U;
        MatrixXd Z(nt, p);
        for (int c = 0; c < p; ++c) {
            Z.col(c) = solve_k0(Uhat.col(c));
            if (!Z.col(c).allFinite()) return false;
        }
        MatrixXd Wsmall = bfgs_->C() - Uhat.transpose() * Z;
        Eigen::FullPivLU<MatrixXd> wlu(Wsmall);
        if (!wlu.isInvertible()) {
            bfgs_->reset();  // fall back to sigma I this iteration
            return sol.allFinite();
        }
        sol += Z * wlu.solve(Uhat.transpose() * sol);
    }
    return sol.allFinite();
}

bool InteriorPoint::compute_step(double delta_x, double delta_c) {
    VectorXd sigx(w_.nf), sigs(w_.mI);
    for (int i = 0; i < w_.nf; ++i) {
        const int v = w_.var_of_free[i];
        double s = 0;
        if (w_.has_xlo(i)) s += zl_[i] / (x_[v] - w_.xl[v]);
        if (w_.has_xhi(i)) s += zu_[i] / (w_.xu[v] - x_[v]);
        sigx[i] = s;
    }
    for (int k = 0; k < w_.mI; ++k) {
        const int j = w_.row_of_slack[k];
        double s = 0;
        if (w_.has_slo(k)) s += wl_[k] / (s_[j] - w_.cl[j]);
        if (w_.has_shi(k)) s += wu_[k] / (w_.cu[j] - s_[j]);
        sigs[k] = std::max(s, 1e-8);
    }

    if (use_dense_)
        factor_dense(delta_x, delta_c, sigx, sigs);
    else if (!factor_sparse(delta_x, delta_c, sigx, sigs))
        return false;

    VectorXd jty(w_.n);
    jt_mult(y_, jval_, jty);
    const int nt = w_.nf + w_.mI + w_.mT;
    VectorXd rhs(nt);
    for (int i = 0; i < w_.nf; ++i) {
        const int v = w_.var_of_free[i];
        double r = grad_[v] + jty[v];
        if (w_.has_xlo(i)) r -= mu_ / (x_[v] - w_.xl[v]);
        if (w_.has_xhi(i)) r += mu_ / (w_.xu[v] - x_[v]);
        rhs[i] = -r;
    }
    for (int k = 0; k < w_.mI; ++k) {
        const int j = w_.row_of_slack[k];
        double r = -y_[j];
        if (w_.has_slo(k)) r -= mu_ / (s_[j] - w_.cl[j]);
        if (w_.has_shi(k)) r += mu_ / (w_.cu[j] - s_[j]);
        rhs[w_.nf + k] = -r;
    }
    for (int j = 0; j < w_.mT; ++j) rhs[w_.nf + w_.mI + j] = -(cval_[j] - s_[j]);

    VectorXd sol;
    if (!solve_kkt(rhs, sol)) return false;

    dx_ = sol.head(w_.nf);
    ds_ = sol.segment(w_.nf, w_.mI);
    dy_ = sol.tail(w_.mT);

    dzl_.resize(w_.nf);
    dzu_.resize(w_.nf);
    for (int i = 0; i < w_.nf; ++i) {
        const int v = w_.var_of_free[i];
        dzl_[i] = w_.has_xlo(i)
                      ? (mu_ - zl_[i] * (x_[v] - w_.xl[v])) / (x_[v] - w_.xl[v]) -
                            zl_[i] / (x_[v] - w_.xl[v]) * dx_[i]
                      : 0;
        dzu_[i] = w_.has_xhi(i)
                      ? (mu_ - zu_[i] * (w_.xu[v] - x_[v])) / (w_.xu[v] - x_[v]) +
                            zu_[i] / (w_.xu[v] - x_[v]) * dx_[i]
                      : 0;
    }
    dwl_.resize(w_.mI);
    dwu_.resize(w_.mI);
    for (int k = 0; k < w_.mI; ++k) {
        const int j = w_.row_of_slack[k];
        dwl_[k] = w_.has_slo(k)
                      ? (mu_ - wl_[k] * (s_[j] - w_.cl[j])) / (s_[j] - w_.cl[j]) -
                            wl_[k] / (s_[j] - w_.cl[j]) * ds_[k]
                      : 0;
        dwu_[k] = w_.has_shi(k)
                      ? (mu_ - wu_[k] * (w_.cu[j] - s_[j])) / (w_.cu[j] - s_[j]) +
                            wu_[k] / (w_.cu[j] - s_[j]) * ds_[k]
                      : 0;
    }

    // fraction-to-boundary step limits
    alpha_p_ = 1.0;
    for (int i = 0; i < w_.nf; ++i) {
        const int v = w_.var_of_free[i];
        if (w_.has_xlo(i) && dx_[i] < 0)
            alpha_p_ = std::min(alpha_p_, -kTau * (x_[v] - w_.xl[v]) / dx_[i]);
        if (w_.has_xhi(i) && dx_[i] > 0)
            alpha_p_ = std::min(alpha_p_, kTau * (w_.xu[v] - x_[v]) / dx_[i]);
    }
    for (int k = 0; k < w_.mI; ++k) {
        const int j = w_.row_of_slack[k];
        if (w_.has_slo(k) && ds_[k] < 0)
            alpha_p_ = std::min(alpha_p_, -kTau * (s_[j] - w_.cl[j]) / ds_[k]);
        if (w_.has_shi(k) && ds_[k] > 0)
            alpha_p_ = std::min(alpha_p_, kTau * (w_.cu[j] - s_[j]) / ds_[k]);
    }
    alpha_d_ = 1.0;
    auto dlimit = [&](double z, double dz) {
        if (dz < 0) alpha_d_ = std::min(alpha_d_, -kTau * z / dz);
    };
    for (int i = 0; i < w_.nf; ++i) {
        if (w_.has_xlo(i)) dlimit(zl_[i], dzl_[i]);
        if (w_.has_xhi(i)) dlimit(zu_[i], dzu_[i]);
    }
    for (int k = 0; k < w_.mI; ++k) {
        if (w_.has_slo(k)) dlimit(wl_[k], dwl_[k]);
        if (w_.has_shi(k)) dlimit(wu_[k], dwu_[k]);
    }
    return true;
}

double InteriorPoint::barrier_terms(const VectorXd& x, const VectorXd& s) const {
    double b = 0;
    for (int i = 0; i < w_.nf; ++i) {
        const int v = w_.var_of_free[i];
        if (w_.has_xlo(i)) b -= std::log(x[v] - w_.xl[v]);
        if (w_.has_xhi(i)) b -= std::log(w_.xu[v] - x[v]);
    }
    for (int k = 0; k < w_.mI; ++k) {
        const int j = w_.row_of_slack[k];
        if (w_.has_slo(k)) b -= std::log(s[j] - w_.cl[j]);
        if (w_.has_shi(k)) b -= std::log(w_.cu[j] - s[j]);
    }
    return b;
}

double InteriorPoint::merit(double f, const VectorXd& c, const VectorXd& x,
                            const VectorXd& s) const {
    return f + mu_ * barrier_terms(x, s) + nu_ * (c - s).lpNorm<1>();
}

bool InteriorPoint::line_search() {
    // directional derivative of the barrier part
    double dphi = 0;
    for (int i = 0; i < w_.nf; ++i) {
        const int v = w_.var_of_free[i];
        dphi += grad_[v] * dx_[i];
        if (w_.has_xlo(i)) dphi -= mu_ / (x_[v] - w_.xl[v]) * dx_[i];
        if (w_.has_xhi(i)) dphi += mu_ / (w_.xu[v] - x_[v]) * dx_[i];
    }
    for (int k = 0; k < w_.mI; ++k) {
        const int j = w_.row_of_slack[k];
        if (w_.has_slo(k)) dphi -= mu_ / (s_[j] - w_.cl[j]) * ds_[k];
        if (w_.has_shi(k)) dphi += mu_ / (w_.cu[j] - s_[j]) * ds_[k];
    }
    const double theta = (cval_ - s_).lpNorm<1>();
    if (theta > std::max(1e-9, 0.01 * opts_.tol)) {
        const double nu_min = dphi / (0.9 * theta) + 1.0;
        if (nu_min > nu_) nu_ = std::min({1e8, std::max(nu_min, 1.0), 10 * nu_ + 1.0});
    } else {
        nu_ = std::max(1.0, 0.1 * nu_);  // feasible: penalty noise would drown the objective
    }
    const double Dphi = dphi - nu_ * theta;

    const double phi0 = merit(fval_, cval_, x_, s_);
    merit_hist_.push_back(phi0);
    if (static_cast<int>(merit_hist_.size()) > kMeritMemory) merit_hist_.pop_front();
    const double phi_ref = *std::max_element(merit_hist_.begin(), merit_hist_.end());

    double alpha = alpha_p_;
    VectorXd xt = x_, st = s_, ct(w_.mT);
    for (int back = 0; back < 60; ++back) {
        for (int i = 0; i < w_.nf; ++i) xt[w_.var_of_free[i]] = x_[w_.var_of_free[i]] + alpha * dx_[i];
        for (int k = 0; k < w_.mI; ++k) st[w_.row_of_slack[k]] = s_[w_.row_of_slack[k]] + alpha * ds_[k];
        double ft;
        try {
            ft = timed_.objective(xt);
            timed_.constraints(xt, ct);
        } catch (const SolverAbort&) {
            alpha *= 0.5;  // trial point broke an evaluation; shrink
            continue;
        }
        const double phit = merit(ft, ct, xt, st);
        if (std::isfinite(phit) && phit <= phi_ref + kArmijo * alpha * std::min(Dphi, 0.0)) {
            x_ = xt;
            s_ = st;
            fval_ = ft;
            cval_ = ct;
            accept(alpha, alpha_d_);
            return true;
        }
        alpha *= 0.5;
        if (alpha < 1e-12) break;
    }
    return false;
}

void InteriorPoint::accept(double alpha_p, double alpha_d) {
    y_ += alpha_p * dy_;
    for (int i = 0; i < w_.nf; ++i) {
        zl_[i] += alpha_d * dzl_[i];
        zu_[i] += alpha_d * dzu_[i];
    }
    for (int k = 0; k < w_.mI; ++k) {
        wl_[k] += alpha_d * dwl_[k];
        wu_[k] += alpha_d * dwu_[k];
    }
    // keep bound duals compatible with the barrier (kappa-sigma safeguard)
    constexpr double kap = 1e10;
    for (int i = 0; i < w_.nf; ++i) {
        const int v = w_.var_of_free[i];
        if (w_.has_xlo(i))
            zl_[i] = std::clamp(zl_[i], mu_ / (kap * (x_[v] - w_.xl[v])),
                                kap * mu_ / (x_[v] - w_.xl[v]));
        if (w_.has_xhi(i))
            zu_[i] = std::clamp(zu_[i], mu_ / (kap * (w_.xu[v] - x_[v])),
                                kap * mu_ / (w_.xu[v] - x_[v]));
    }
    for (int k = 0; k < w_.mI; ++k) {
        const int j = w_.row_of_slack[k];
        if (w_.has_slo(k))
            wl_[k] = std::clamp(wl_[k], mu_ / (kap * (s_[j] - w_.cl[j])),
                                kap * mu_ / (s_[j] - w_.cl[j]));
        if (w_.has_shi(k))
            wu_[k] = std::clamp(wu_[k], mu_ / (kap * (w_.cu[j] - s_[j])),
                                kap * mu_ / (w_.cu[j] - s_[j]));
    }
}

bool InteriorPoint::restoration() {
    if (opts_.verbose)
        std::fprintf(stderr, "  [restoration] entering at viol %.3e\n",
                     (cval_ - s_).lpNorm<Eigen::Infinity>());
    {
        double bound_viol = 0;
        for (int j = 0; j < w_.mT; ++j)
            bound_viol = std::max(bound_viol, std::max(cval_[j] - w_.cu[j], w_.cl[j] - cval_[j]));
        if (bound_viol <= opts_.tol) {  // already feasible; only slacks need recentering
            reset_slacks();
            y_.setZero();
            bfgs_->reset();
            nu_ = 1.0;
            merit_hist_.clear();
            return true;
        }
    }
    // Levenberg-Marquardt descent on the squared bound violation of c(x).
    auto violation = [&](const VectorXd& c, VectorXd& v) {
        v.resize(w_.mT);
        for (int j = 0; j < w_.mT; ++j)
            v[j] = c[j] > w_.cu[j] ? c[j] - w_.cu[j] : (c[j] < w_.cl[j] ? c[j] - w_.cl[j] : 0.0);
    };
    VectorXd viol;
    violation(cval_, viol);
    double best = viol.squaredNorm();
    const double entry = viol.lpNorm<Eigen::Infinity>();
    double lambda = 1e-3;
    int stall = 0;
    for (int it = 0; it < 100 && iter_ < opts_.max_iter; ++it, ++iter_) {
        timed_.jacobian_values(x_, jval_);
        // normal equations on free variables
        MatrixXd JtJ = MatrixXd::Zero(w_.nf, w_.nf);
        VectorXd Jtr = VectorXd::Zero(w_.nf);
        {
            std::vector<std::vector<std::pair<int, double>>> rows(w_.mT);
            for (int t = 0; t < w_.nnz; ++t) {
                const int f = w_.free_of_var[w_.jcol[t]];
                if (f >= 0 && viol[w_.jrow[t]] != 0.0)
                    rows[w_.jrow[t]].push_back({f, jval_[t]});
            }
            for (int j = 0; j < w_.mT; ++j) {
                if (viol[j] == 0.0) continue;
                for (auto [fa, va] : rows[j]) {
                    Jtr[fa] += va * viol[j];
                    for (auto [fb, vb] : rows[j]) JtJ(fa, fb) += va * vb;
                }
            }
        }
        for (int i = 0; i < w_.nf; ++i) JtJ(i, i) += lambda;
        VectorXd dxf = JtJ.ldlt().solve(-Jtr);
        // stay strictly inside the variable box
        double amax = 1.0;
        for (int i = 0; i < w_.nf; ++i) {
            const int v = w_.var_of_free[i];
            if (w_.has_xlo(i) && dxf[i] < 0)
                amax = std::min(amax, -kTau * (x_[v] - w_.xl[v]) / dxf[i]);
            if (w_.has_xhi(i) && dxf[i] > 0)
                amax = std::min(amax, kTau * (w_.xu[v] - x_[v]) / dxf[i]);
        }
        bool improved = false;
        double alpha = amax;
        VectorXd xt = x_, ct(w_.mT), vt;
        for (int back = 0; back < 30; ++back) {
            for (int i = 0; i < w_.nf; ++i)
                xt[w_.var_of_free[i]] = x_[w_.var_of_free[i]] + alpha * dxf[i];
            try {
                timed_.constraints(xt, ct);
            } catch (const SolverAbort&) {
                alpha *= 0.5;
                continue;
            }
            violation(ct, vt);
            if (vt.squaredNorm() < best * (1 - 1e-12)) {
                x_ = xt;
                cval_ = ct;
                viol = vt;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        const double sq = viol.squaredNorm();
        if (improved) {
            lambda = std::max(1e-10, lambda / 3);
            stall = best - sq < 1e-12 ? stall + 1 : 0;
            best = sq;
        } else {
            lambda *= 10;
            ++stall;
        }
        if (stall >= 20) return false;  // infeasible: restoration stalled
        if (viol.lpNorm<Eigen::Infinity>() <= std::max(opts_.tol, 0.05 * entry)) break;
        if (lambda > 1e12) return false;
    }
    // resume the interior-point iteration from the restored point
    fval_ = timed_.objective(x_);
    timed_.gradient(x_, grad_);
    reset_slacks();
    y_.setZero();
    bfgs_->reset();
    nu_ = 1.0;
    merit_hist_.clear();
    return true;
}

void InteriorPoint::reset_slacks() {
    for (int j = 0; j < w_.mT; ++j) {
        if (w_.slack_of_row[j] < 0) continue;
        const double lo = w_.cl[j], hi = w_.cu[j];
        double v = cval_[j];
        const double span = std::isfinite(hi - lo) ? hi - lo : 1.0;
        if (std::isfinite(lo)) v = std::max(v, lo + std::min(1e-2, 1e-2 * span));
        if (std::isfinite(hi)) v = std::min(v, hi - std::min(1e-2, 1e-2 * span));
        s_[j] = v;
    }
    auto dual_init = [&](double dist) { return std::clamp(mu_ / std::max(dist, 1e-8), 1e-6, 1e6); };
    for (int i = 0; i < w_.nf; ++i) {
        const int v = w_.var_of_free[i];
        zl_[i] = w_.has_xlo(i) ? dual_init(x_[v] - w_.xl[v]) : 0;
        zu_[i] = w_.has_xhi(i) ? dual_init(w_.xu[v] - x_[v]) : 0;
    }
    for (int k = 0; k < w_.mI; ++k) {
        const int j = w_.row_of_slack[k];
        wl_[k] = w_.has_slo(k) ? dual_init(s_[j] - w_.cl[j]) : 0;
        wu_[k] = w_.has_shi(k) ? dual_init(w_.cu[j] - s_[j]) : 0;
    }
}

void InteriorPoint::finish(SolveStatus status, const std::string& message) {
    result_.status = status;
    result_.x.assign(x_.data(), x_.data() + x_.size());
    result_.iterations = iter_;
    result_.message = message;
    // final report from fresh evaluations, independent of solver bookkeeping;
    // objective and violation are reported in the problem's own units
    try {
        result_.objective = timed_.objective(x_) / timed_.f_scale();
        VectorXd c(w_.mT);
        timed_.constraints(x_, c);
        double viol = 0;
        for (int j = 0; j < w_.mT; ++j)
            viol = std::max(viol, std::max(c[j] - w_.cu[j], w_.cl[j] - c[j]) / timed_.c_scale(j));
        result_.constraint_violation = std::max(0.0, viol);
        cval_ = c;
        result_.kkt_residual = kkt_error(0.0);
    } catch (const SolverAbort&) {
        // leave whatever was last known
    }
}

void InteriorPoint::run(std::span<const double> x0) {
    setup(x0);

    int consecutive_fail = 0;
    while (iter_ < opts_.max_iter) {
        const double e0 = kkt_error(0.0);
        double raw_viol = 0;
        for (int j = 0; j < w_.mT; ++j)
            raw_viol = std::max(raw_viol, std::max(cval_[j] - w_.cu[j], w_.cl[j] - cval_[j]) /
                                              timed_.c_scale(j));
        if (opts_.verbose)
            std::fprintf(stderr,
                         "it %4d  mu %.1e  kkt %.3e  f %.6e  viol %.2e  |dx| %.1e  ap %.1e  ad "
                         "%.1e  sg %.1e  d %.1e  nu %.1e  bp %d\n",
                         iter_, mu_, e0, fval_, (cval_ - s_).lpNorm<Eigen::Infinity>(),
                         dx_.size() ? dx_.norm() : 0.0, alpha_p_, alpha_d_, bfgs_->sigma(),
                         last_delta_, nu_, bfgs_->pairs());
        if (e0 <= opts_.tol && raw_viol <= opts_.tol) {
            finish(SolveStatus::Converged, "");
            return;
        }
        if (kkt_error(mu_) <= kKappaEps * mu_ && mu_ > mu_min_) {
            mu_ = std::max(mu_min_, mu_ * opts_.mu_reduction);
            nu_ = 1.0;
            merit_hist_.clear();
            continue;
        }

        bool ok = false;
        double delta = last_delta_ == 0 ? 0.0 : std::max(1e-20, last_delta_ / 3);
        for (int tries = 0; tries < 10; ++tries) {
            ok = compute_step(delta, delta > 0 ? 1e-10 : 0.0);
            if (ok) break;
            delta = delta == 0 ? 1e-8 : delta * 100;
        }
        if (!ok) {
            finish(SolveStatus::EvaluationError, "KKT factorization failed repeatedly");
            return;
        }
        last_delta_ = delta;

        const VectorXd x_prev = x_;
        const VectorXd grad_prev = grad_;
        const VectorXd jval_prev = jval_;

        if (!line_search()) {
            if (raw_viol <= std::sqrt(opts_.tol)) {
                // near-feasible but the quasi-Newton model rejected every
                // step: recenter slacks, discard the model, regularize harder
                reset_slacks();
                bfgs_->reset();
                last_delta_ = std::max(1e-4, last_delta_ * 10);
                nu_ = 1.0;
                merit_hist_.clear();
                ++consecutive_fail;
                ++iter_;
                if (consecutive_fail > 8) {
                    finish(SolveStatus::MaxIter, "no acceptable step at a feasible point");
                    return;
                }
                continue;
            }
            if (!restoration()) {
                finish(SolveStatus::InfeasibleDetected, "feasibility restoration stalled");
                return;
            }
            timed_.jacobian_values(x_, jval_);
            ++iter_;
            continue;
        }
        ++iter_;
        consecutive_fail = 0;

        timed_.gradient(x_, grad_);
        timed_.jacobian_values(x_, jval_);

        // damped BFGS pair for the Lagrangian at the accepted multipliers
        VectorXd gl_now(w_.n), gl_prev(w_.n);
        jt_mult(y_, jval_, gl_now);
        jt_mult(y_, jval_prev, gl_prev);
        gl_now += grad_;
        gl_prev += grad_prev;
        VectorXd sf(w_.nf), yf(w_.nf);
        for (int i = 0; i < w_.nf; ++i) {
            const int v = w_.var_of_free[i];
            sf[i] = x_[v] - x_prev[v];
            yf[i] = gl_now[v] - gl_prev[v];
        }
        bfgs_->update(sf, yf);
    }
    finish(SolveStatus::MaxIter, "iteration limit reached");
}

class BuiltinBackend : public SolverBackend {
  public:
    SolveResult run(NlpCallbacks& cb, std::span<const double> x0,
                    const SolverOptions& opts) override {
        SolveResult result;
        const auto t0 = Clock::now();
        try {
            InteriorPoint ipm(cb, opts, result);
            ipm.run(x0);
        } catch (const SolverAbort& a) {
            result.status = SolveStatus::EvaluationError;
            result.message = a.message;
            if (result.x.empty()) result.x.assign(x0.begin(), x0.end());
        } catch (const EvalError& e) {
            result.status = SolveStatus::EvaluationError;
            result.message = e.what();
            if (result.x.empty()) result.x.assign(x0.begin(), x0.end());
        }
        result.timing.wall = std::chrono::duration<double>(Clock::now() - t0).count();
        result.timing.solver_internal =
            std::max(0.0, result.timing.wall - result.timing.jacobian_eval -
                              result.timing.other_callbacks);
        return result;
    }
};

}  // namespace

SolveResult solve(NlpCallbacks& cb, std::span<const double> x0, const SolverOptions& opts) {
    BuiltinBackend backend;
    return backend.run(cb, x0, opts);
}

SolveResult solve(const NlpProblem& p, std::span<const double> x0, const SolverOptions& opts) {
    ProblemCallbacks cb(p, opts.workers);
    return solve(cb, x0, opts);
}

SolveResult SolverHandle::solve(const NlpProblem& p, std::span<const double> x0,
                                const SolverOptions& opts) const {
    ProblemCallbacks cb(p, opts.workers);
    return backend_->run(cb, x0, opts);
}

SolverHandle attach_external_solver(std::shared_ptr<SolverBackend> backend) {
    return SolverHandle(std::move(backend));
}

SolverHandle builtin_solver() { return SolverHandle(std::make_shared<BuiltinBackend>()); }

void save_result(const SolveResult& r, const std::string& path) {
    nlohmann::json j;
    j["status"] = status_name(r.status);
    j["x"] = r.x;
    j["objective"] = r.objective;
    j["constraint_violation"] = r.constraint_violation;
    j["kkt_residual"] = r.kkt_residual;
    j["iterations"] = r.iterations;
    j["timing"] = {{"jacobian_eval", r.timing.jacobian_eval},
                   {"other_callbacks", r.timing.other_callbacks},
                   {"solver_internal", r.timing.solver_internal},
                   {"wall", r.timing.wall}};
    j["message"] = r.message;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
}

SolveResult load_result(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    const auto j = nlohmann::json::parse(in);
    SolveResult r;
    r.status = status_from_name(j.at("status").get<std::string>());
    r.x = j.at("x").get<std::vector<double>>();
    r.objective = j.at("objective").get<double>();
    r.constraint_violation = j.at("constraint_violation").get<double>();
    r.kkt_residual = j.at("kkt_residual").get<double>();
    r.iterations = j.at("iterations").get<int>();
    r.timing.jacobian_eval = j.at("timing").at("jacobian_eval").get<double>();
    r.timing.other_callbacks = j.at("timing").at("other_callbacks").get<double>();
    r.timing.solver_internal = j.at("timing").at("solver_internal").get<double>();
    r.timing.wall = j.at("timing").value("wall", 0.0);
    r.message = j.value("message", "");
    return r;
}

}  // namespace colloc

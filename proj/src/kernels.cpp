#include "colloc/kernels.hpp"

#include <cmath>
#include <mutex>
#include <unordered_map>

#include "colloc/dual.hpp"
#include "colloc/models.hpp"

namespace colloc {

namespace {

std::unordered_map<std::string, Kernel>& registry() {
    static std::unordered_map<std::string, Kernel> r;
    return r;
}

int iaux(std::span<const double> aux, int i) { return static_cast<int>(aux[i]); }

// dense forward-mode Jacobian of a templated core, then pattern extraction
template <class Core>
void ad_jac(const Core& core, std::span<const double> x, std::span<const double> aux, int m, int n,
            std::span<const int> prows, std::span<const int> pcols, std::span<double> out) {
    std::vector<Dual1> xd(n), od(m);
    for (int j = 0; j < n; ++j) xd[j] = {x[j], 0.0};
    std::vector<double> dense(static_cast<size_t>(m) * n);
    for (int j = 0; j < n; ++j) {
        xd[j].d = 1.0;
        core(aux, xd.data(), od.data());
        for (int i = 0; i < m; ++i) dense[static_cast<size_t>(i) * n + j] = od[i].d;
        xd[j].d = 0.0;
    }
    for (size_t k = 0; k < out.size(); ++k)
        out[k] = dense[static_cast<size_t>(prows[k]) * n + pcols[k]];
}

void dense_pattern(int m, int n, std::span<int> rows, std::span<int> cols) {
    int k = 0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            rows[k] = i;
            cols[k] = j;
            ++k;
        }
}

template <class Core>
Kernel make_ad_kernel(std::string name, std::function<int(std::span<const double>)> in_dim,
                      std::function<int(std::span<const double>)> out_dim) {
    Kernel k;
    k.name = std::move(name);
    k.input_dim = in_dim;
    k.output_dim = out_dim;
    k.jac_nnz = [in_dim, out_dim](std::span<const double> aux) {
        return in_dim(aux) * out_dim(aux);
    };
    k.eval = [](std::span<const double> x, std::span<const double> aux, std::span<double> out) {
        Core{}(aux, x.data(), out.data());
    };
    k.jac_structure = [in_dim, out_dim](std::span<const double> aux, std::span<int> rows,
                                        std::span<int> cols) {
        dense_pattern(out_dim(aux), in_dim(aux), rows, cols);
    };
    k.jac_values = [in_dim, out_dim](std::span<const double> x, std::span<const double> aux,
                                     std::span<double> vals) {
        const int m = out_dim(aux), n = in_dim(aux);
        std::vector<int> rows(static_cast<size_t>(m) * n), cols(rows.size());
        dense_pattern(m, n, rows, cols);
        ad_jac(Core{}, x, aux, m, n, rows, cols, vals);
    };
    return k;
}

// ---- cores -----------------------------------------------------------------

struct DynamicsDefectCore {
    template <class S>
    void operator()(std::span<const double> aux, const S* x, S* out) const {
        const Model m = model_from_aux(aux);
        const int n = m.n_q;
        mech::dynamics_residual(m, x, x + n, x + 2 * n, x + 3 * n, out);
    }
};

struct ResetMapCore {
    template <class S>
    void operator()(std::span<const double> aux, const S* x, S* out) const {
        const int edge = static_cast<int>(aux[0]);
        if (edge == 0) {
            const int n = static_cast<int>(aux[1]);
            for (int i = 0; i < n; ++i) {
                out[i] = x[2 * n + i] - x[i];
                out[n + i] = x[3 * n + i] - x[n + i];
            }
            return;
        }
        if (edge != 1) throw ModelError("unknown reset edge id");
        const Model m = model_from_aux(aux.subspan(1));
        const int n = m.n_q;
        S qp[kMaxQ], qdp[kMaxQ];
        mech::compass_impact(m, x, x + n, qp, qdp);
        for (int i = 0; i < n; ++i) {
            out[i] = x[2 * n + i] - qp[i];
            out[n + i] = x[3 * n + i] - qdp[i];
        }
    }
};

struct FootClearanceCore {
    template <class S>
    void operator()(std::span<const double> aux, const S* x, S* out) const {
        int used = 0;
        const Model m = model_from_aux(aux, &used);
        const double threshold = aux[used];
        out[0] = mech::swing_foot_y(m, x) - threshold;
    }
};

struct GrfCore {
    template <class S>
    void operator()(std::span<const double> aux, const S* x, S* out) const {
        int used = 0;
        const Model m = model_from_aux(aux, &used);
        const double mu = aux[used];
        const int n = m.n_q;
        S fx, fy;
        mech::support_force(m, x, x + n, x + 2 * n, &fx, &fy);
        out[0] = fy;
        out[1] = mu * fy - fx;
        out[2] = mu * fy + fx;
    }
};

struct AvgSpeedCore {
    template <class S>
    void operator()(std::span<const double> aux, const S* x, S* out) const {
        const double T = aux[0], vbar = aux[1];
        if (aux.size() == 2) {
            out[0] = (x[1] - x[0]) / T - vbar;
            return;
        }
        const Model m = model_from_aux(aux.subspan(2));
        out[0] = (mech::hip_x(m, x + m.n_q) - mech::hip_x(m, x)) / T - vbar;
    }
};

// collocation defect patterns; the value arrays are constant in x

struct HsEntry {
    int row, col;
    double val;
};

void hs_pattern(int nq, double h, std::vector<HsEntry>& e) {
    const int xk = 0, xdk = nq, xddk = 2 * nq, xm = 3 * nq, xdm = 4 * nq, xddm = 5 * nq,
              xk1 = 6 * nq, xdk1 = 7 * nq, xddk1 = 8 * nq;
    e.clear();
    e.reserve(static_cast<size_t>(20) * nq);
    for (int i = 0; i < nq; ++i) {
        const int r = i;
        e.push_back({r, xk1 + i, 1.0});
        e.push_back({r, xk + i, -1.0});
        e.push_back({r, xdk + i, -h / 6});
        e.push_back({r, xdm + i, -4 * h / 6});
        e.push_back({r, xdk1 + i, -h / 6});
    }
    for (int i = 0; i < nq; ++i) {
        const int r = nq + i;
        e.push_back({r, xdk1 + i, 1.0});
        e.push_back({r, xdk + i, -1.0});
        e.push_back({r, xddk + i, -h / 6});
        e.push_back({r, xddm + i, -4 * h / 6});
        e.push_back({r, xddk1 + i, -h / 6});
    }
    for (int i = 0; i < nq; ++i) {
        const int r = 2 * nq + i;
        e.push_back({r, xm + i, 1.0});
        e.push_back({r, xk + i, -0.5});
        e.push_back({r, xk1 + i, -0.5});
        e.push_back({r, xdk + i, -h / 8});
        e.push_back({r, xdk1 + i, h / 8});
    }
    for (int i = 0; i < nq; ++i) {
        const int r = 3 * nq + i;
        e.push_back({r, xdm + i, 1.0});
        e.push_back({r, xdk + i, -0.5});
        e.push_back({r, xdk1 + i, -0.5});
        e.push_back({r, xddk + i, -h / 8});
        e.push_back({r, xddk1 + i, h / 8});
    }
}

void trap_pattern(int nq, double h, std::vector<HsEntry>& e) {
    const int xk = 0, xdk = nq, xddk = 2 * nq, xk1 = 3 * nq, xdk1 = 4 * nq, xddk1 = 5 * nq;
    e.clear();
    e.reserve(static_cast<size_t>(8) * nq);
    for (int i = 0; i < nq; ++i) {
        const int r = i;
        e.push_back({r, xk1 + i, 1.0});
        e.push_back({r, xk + i, -1.0});
        e.push_back({r, xdk + i, -h / 2});
        e.push_back({r, xdk1 + i, -h / 2});
    }
    for (int i = 0; i < nq; ++i) {
        const int r = nq + i;
        e.push_back({r, xdk1 + i, 1.0});
        e.push_back({r, xdk + i, -1.0});
        e.push_back({r, xddk + i, -h / 2});
        e.push_back({r, xddk1 + i, -h / 2});
    }
}

// ---- registration ----------------------------------------------------------

void register_builtins() {
    // dynamics_defect: x = [q, qd, qdd, u], aux = model
    {
        auto in = [](std::span<const double> aux) {
            const Model m = model_from_aux(aux);
            return 3 * m.n_q + m.n_u;
        };
        auto out = [](std::span<const double> aux) { return model_from_aux(aux).n_q; };
        register_kernel(make_ad_kernel<DynamicsDefectCore>("dynamics_defect", in, out));
    }

    // hs_collocation: aux = [n_q, h], x = (x,xd,xdd) at k, mid, k+1
    {
        Kernel k;
        k.name = "hs_collocation";
        k.input_dim = [](std::span<const double> aux) { return 9 * iaux(aux, 0); };
        k.output_dim = [](std::span<const double> aux) { return 4 * iaux(aux, 0); };
        k.jac_nnz = [](std::span<const double> aux) { return 20 * iaux(aux, 0); };
        k.eval = [](std::span<const double> x, std::span<const double> aux, std::span<double> o) {
            const int nq = iaux(aux, 0);
            const double h = aux[1];
            const double *xk = x.data(), *xdk = xk + nq, *xddk = xk + 2 * nq, *xm = xk + 3 * nq,
                         *xdm = xk + 4 * nq, *xddm = xk + 5 * nq, *xk1 = xk + 6 * nq,
                         *xdk1 = xk + 7 * nq, *xddk1 = xk + 8 * nq;
            for (int i = 0; i < nq; ++i) {
                o[i] = xk1[i] - xk[i] - h / 6 * (xdk[i] + 4 * xdm[i] + xdk1[i]);
                o[nq + i] = xdk1[i] - xdk[i] - h / 6 * (xddk[i] + 4 * xddm[i] + xddk1[i]);
                o[2 * nq + i] = xm[i] - 0.5 * (xk[i] + xk1[i]) - h / 8 * (xdk[i] - xdk1[i]);
                o[3 * nq + i] = xdm[i] - 0.5 * (xdk[i] + xdk1[i]) - h / 8 * (xddk[i] - xddk1[i]);
            }
        };
        k.jac_structure = [](std::span<const double> aux, std::span<int> r, std::span<int> c) {
            std::vector<HsEntry> e;
            hs_pattern(iaux(aux, 0), aux[1], e);
            for (size_t i = 0; i < e.size(); ++i) r[i] = e[i].row, c[i] = e[i].col;
        };
        k.jac_values = [](std::span<const double>, std::span<const double> aux,
                          std::span<double> v) {
            std::vector<HsEntry> e;
            hs_pattern(iaux(aux, 0), aux[1], e);
            for (size_t i = 0; i < e.size(); ++i) v[i] = e[i].val;
        };
        register_kernel(std::move(k));
    }

    // trapezoidal_collocation: aux = [n_q, h], x = (x,xd,xdd) at k, k+1
    {
        Kernel k;
        k.name = "trapezoidal_collocation";
        k.input_dim = [](std::span<const double> aux) { return 6 * iaux(aux, 0); };
        k.output_dim = [](std::span<const double> aux) { return 2 * iaux(aux, 0); };
        k.jac_nnz = [](std::span<const double> aux) { return 8 * iaux(aux, 0); };
        k.eval = [](std::span<const double> x, std::span<const double> aux, std::span<double> o) {
            const int nq = iaux(aux, 0);
            const double h = aux[1];
            const double *xk = x.data(), *xdk = xk + nq, *xddk = xk + 2 * nq, *xk1 = xk + 3 * nq,
                         *xdk1 = xk + 4 * nq, *xddk1 = xk + 5 * nq;
            for (int i = 0; i < nq; ++i) {
                o[i] = xk1[i] - xk[i] - h / 2 * (xdk[i] + xdk1[i]);
                o[nq + i] = xdk1[i] - xdk[i] - h / 2 * (xddk[i] + xddk1[i]);
            }
        };
        k.jac_structure = [](std::span<const double> aux, std::span<int> r, std::span<int> c) {
            std::vector<HsEntry> e;
            trap_pattern(iaux(aux, 0), aux[1], e);
            for (size_t i = 0; i < e.size(); ++i) r[i] = e[i].row, c[i] = e[i].col;
        };
        k.jac_values = [](std::span<const double>, std::span<const double> aux,
                          std::span<double> v) {
            std::vector<HsEntry> e;
            trap_pattern(iaux(aux, 0), aux[1], e);
            for (size_t i = 0; i < e.size(); ++i) v[i] = e[i].val;
        };
        register_kernel(std::move(k));
    }

    // reset_map: aux = [0, n] identity edge, or [1, model...] compass impact;
    // x = (x-, xd-, x+, xd+)
    {
        auto state_dim = [](std::span<const double> aux) {
            return iaux(aux, 0) == 0 ? iaux(aux, 1) : model_from_aux(aux.subspan(1)).n_q;
        };
        Kernel k;
        k.name = "reset_map";
        k.input_dim = [state_dim](std::span<const double> aux) { return 4 * state_dim(aux); };
        k.output_dim = [state_dim](std::span<const double> aux) { return 2 * state_dim(aux); };
        k.jac_nnz = [state_dim](std::span<const double> aux) {
            const int n = state_dim(aux);
            if (iaux(aux, 0) == 0) return 4 * n;
            return 2 * n + n * (2 * n + 1);
        };
        k.eval = [](std::span<const double> x, std::span<const double> aux, std::span<double> o) {
            ResetMapCore{}(aux, x.data(), o.data());
        };
        auto pattern = [state_dim](std::span<const double> aux, std::span<int> r,
                                   std::span<int> c) {
            const int n = state_dim(aux);
            int idx = 0;
            if (iaux(aux, 0) == 0) {
                for (int i = 0; i < n; ++i) {
                    r[idx] = i, c[idx] = i, ++idx;
                    r[idx] = i, c[idx] = 2 * n + i, ++idx;
                }
                for (int i = 0; i < n; ++i) {
                    r[idx] = n + i, c[idx] = n + i, ++idx;
                    r[idx] = n + i, c[idx] = 3 * n + i, ++idx;
                }
                return;
            }
            for (int i = 0; i < n; ++i) {  // q+ minus relabeled q-
                r[idx] = i, c[idx] = n - 1 - i, ++idx;
                r[idx] = i, c[idx] = 2 * n + i, ++idx;
            }
            for (int i = 0; i < n; ++i) {  // qd+ minus impact(q-, qd-)
                for (int j = 0; j < 2 * n; ++j) r[idx] = n + i, c[idx] = j, ++idx;
                r[idx] = n + i, c[idx] = 3 * n + i, ++idx;
            }
        };
        k.jac_structure = pattern;
        k.jac_values = [state_dim, pattern](std::span<const double> x, std::span<const double> aux,
                                            std::span<double> v) {
            const int n = state_dim(aux);
            const int nnz = static_cast<int>(v.size());
            std::vector<int> r(nnz), c(nnz);
            pattern(aux, r, c);
            ad_jac(ResetMapCore{}, x, aux, 2 * n, 4 * n, r, c, v);
        };
        register_kernel(std::move(k));
    }

    // foot_clearance: aux = [model..., threshold], x = q
    {
        auto in = [](std::span<const double> aux) { return model_from_aux(aux).n_q; };
        auto out = [](std::span<const double>) { return 1; };
        register_kernel(make_ad_kernel<FootClearanceCore>("foot_clearance", in, out));
    }

    // joint_limits / torque_limits: identity rows boxed by the bounds file
    for (const char* name : {"joint_limits", "torque_limits"}) {
        Kernel k;
        k.name = name;
        k.input_dim = [](std::span<const double> aux) { return iaux(aux, 0); };
        k.output_dim = [](std::span<const double> aux) { return iaux(aux, 0); };
        k.jac_nnz = [](std::span<const double> aux) { return iaux(aux, 0); };
        k.eval = [](std::span<const double> x, std::span<const double>, std::span<double> o) {
            for (size_t i = 0; i < o.size(); ++i) o[i] = x[i];
        };
        k.jac_structure = [](std::span<const double> aux, std::span<int> r, std::span<int> c) {
            for (int i = 0; i < iaux(aux, 0); ++i) r[i] = i, c[i] = i;
        };
        k.jac_values = [](std::span<const double>, std::span<const double> aux,
                          std::span<double> v) {
            for (int i = 0; i < iaux(aux, 0); ++i) v[i] = 1.0;
        };
        register_kernel(std::move(k));
    }

    // unilateral_grf: aux = [model..., mu], x = (q, qd, qdd);
    // rows: normal force, mu*Fn - Ft, mu*Fn + Ft
    {
        auto in = [](std::span<const double> aux) { return 3 * model_from_aux(aux).n_q; };
        auto out = [](std::span<const double>) { return 3; };
        register_kernel(make_ad_kernel<GrfCore>("unilateral_grf", in, out));
    }

    // pseudo_energy: aux = [n, w], value w * |u|^2
    {
        Kernel k;
        k.name = "pseudo_energy";
        k.input_dim = [](std::span<const double> aux) { return iaux(aux, 0); };
        k.output_dim = [](std::span<const double>) { return 1; };
        k.jac_nnz = [](std::span<const double> aux) { return iaux(aux, 0); };
        k.eval = [](std::span<const double> x, std::span<const double> aux, std::span<double> o) {
            double s = 0;
            for (int i = 0; i < iaux(aux, 0); ++i) s += x[i] * x[i];
            o[0] = aux[1] * s;
        };
        k.jac_structure = [](std::span<const double> aux, std::span<int> r, std::span<int> c) {
            for (int i = 0; i < iaux(aux, 0); ++i) r[i] = 0, c[i] = i;
        };
        k.jac_values = [](std::span<const double> x, std::span<const double> aux,
                          std::span<double> v) {
            for (int i = 0; i < iaux(aux, 0); ++i) v[i] = 2 * aux[1] * x[i];
        };
        register_kernel(std::move(k));
    }

    // avg_speed: aux = [T, vbar] on raw positions (x = [p0, pN]), or
    // aux = [T, vbar, model...] on configurations (x = [q0, qN])
    {
        auto in = [](std::span<const double> aux) {
            return aux.size() == 2 ? 2 : 2 * model_from_aux(aux.subspan(2)).n_q;
        };
        auto out = [](std::span<const double>) { return 1; };
        register_kernel(make_ad_kernel<AvgSpeedCore>("avg_speed", in, out));
    }

    // linear_map: aux = [m, n, A (row-major), b]; pattern = nonzeros of A
    {
        Kernel k;
        k.name = "linear_map";
        k.input_dim = [](std::span<const double> aux) { return iaux(aux, 1); };
        k.output_dim = [](std::span<const double> aux) { return iaux(aux, 0); };
        k.jac_nnz = [](std::span<const double> aux) {
            const int m = iaux(aux, 0), n = iaux(aux, 1);
            int nnz = 0;
            for (int i = 0; i < m * n; ++i)
                if (aux[2 + i] != 0.0) ++nnz;
            return nnz;
        };
        k.eval = [](std::span<const double> x, std::span<const double> aux, std::span<double> o) {
            const int m = iaux(aux, 0), n = iaux(aux, 1);
            for (int i = 0; i < m; ++i) {
                double s = aux[2 + static_cast<size_t>(m) * n + i];
                for (int j = 0; j < n; ++j) s += aux[2 + static_cast<size_t>(i) * n + j] * x[j];
                o[i] = s;
            }
        };
        k.jac_structure = [](std::span<const double> aux, std::span<int> r, std::span<int> c) {
            const int m = iaux(aux, 0), n = iaux(aux, 1);
            int idx = 0;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    if (aux[2 + static_cast<size_t>(i) * n + j] != 0.0)
                        r[idx] = i, c[idx] = j, ++idx;
        };
        k.jac_values = [](std::span<const double>, std::span<const double> aux,
                          std::span<double> v) {
            const int m = iaux(aux, 0), n = iaux(aux, 1);
            int idx = 0;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const double a = aux[2 + static_cast<size_t>(i) * n + j];
                    if (a != 0.0) v[idx++] = a;
                }
        };
        register_kernel(std::move(k));
    }

    // quadratic_form: aux = [n, center (n), Q (n x n row-major)],
    // value (x-c)' Q (x-c)
    {
        Kernel k;
        k.name = "quadratic_form";
        k.input_dim = [](std::span<const double> aux) { return iaux(aux, 0); };
        k.output_dim = [](std::span<const double>) { return 1; };
        k.jac_nnz = [](std::span<const double> aux) { return iaux(aux, 0); };
        k.eval = [](std::span<const double> x, std::span<const double> aux, std::span<double> o) {
            const int n = iaux(aux, 0);
            double s = 0;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    s += aux[1 + n + static_cast<size_t>(i) * n + j] * (x[i] - aux[1 + i]) *
                         (x[j] - aux[1 + j]);
            o[0] = s;
        };
        k.jac_structure = [](std::span<const double> aux, std::span<int> r, std::span<int> c) {
            for (int i = 0; i < iaux(aux, 0); ++i) r[i] = 0, c[i] = i;
        };
        k.jac_values = [](std::span<const double> x, std::span<const double> aux,
                          std::span<double> v) {
            const int n = iaux(aux, 0);
            for (int kk = 0; kk < n; ++kk) {
                double s = 0;
                for (int j = 0; j < n; ++j)
                    s += (aux[1 + n + static_cast<size_t>(kk) * n + j] +
                          aux[1 + n + static_cast<size_t>(j) * n + kk]) *
                         (x[j] - aux[1 + j]);
                v[kk] = s;
            }
        };
        register_kernel(std::move(k));
    }
}

}  // namespace

const Kernel* find_kernel(const std::string& name) {
    ensure_builtin_kernels();
    auto it = registry().find(name);
    return it == registry().end() ? nullptr : &it->second;
}

void register_kernel(Kernel k) { registry()[k.name] = std::move(k); }

void ensure_builtin_kernels() {
    static std::once_flag flag;
    std::call_once(flag, register_builtins);
}

std::vector<std::string> registered_kernel_names() {
    ensure_builtin_kernels();
    std::vector<std::string> names;
    for (const auto& [name, _] : registry()) names.push_back(name);
    return names;
}

}  // namespace colloc

#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "colloc/dual.hpp"

namespace colloc {

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class ModelKind : int {
    DoubleIntegrator = 0,
    CartPole = 1,
    CompassGait = 2,
};

inline constexpr int kMaxQ = 2;   // largest n_q across models
inline constexpr int kMaxPts = 3; // largest point-mass count

// Planar point-mass models in minimal coordinates. Parameters (by kind):
//   DoubleIntegrator: [mass]
//   CartPole:         [cart_mass, pole_mass, pole_length, gravity]
//                     q = (cart position, pole angle from hanging-down)
//   CompassGait:      [leg_mass, hip_mass, a, b, gravity]  (leg length l = a+b,
//                     leg mass at height a above the foot)
//                     q = (stance leg angle, swing leg angle), both from vertical,
//                     positive tilts the top of the leg toward +x; stance foot at origin.
struct Model {
    ModelKind kind = ModelKind::CompassGait;
    int n_q = 2;
    int n_u = 1;
    int n_points = 3;
    int n_params = 5;
    std::array<double, 6> params{};
    double u_max = 0;  // input bound, used at transcription time (not part of aux)

    static Model double_integrator(double mass = 1.0, double u_max = 50.0);
    static Model cart_pole(double cart_mass = 1.0, double pole_mass = 0.3,
                           double pole_length = 0.5, double gravity = 9.81,
                           double u_max = 12.0);
    static Model compass_gait(double leg_mass = 5.0, double hip_mass = 10.0, double a = 0.5,
                              double b = 0.5, double gravity = 9.81, double u_max = 20.0);
    static Model by_name(const std::string& name);

    const char* name() const;
    double gravity() const;
    double leg_length() const;  // compass gait only
    // generalized-force matrix, row-major n_q x n_u
    void input_matrix(double* B) const;
};

// aux encoding shared with the kernel library: [kind, params...]
std::vector<double> model_aux(const Model& m);
Model model_from_aux(std::span<const double> aux, int* consumed = nullptr);

// JSON model config: {"model": "compass", "params": {"leg_mass": 5.0, ...}}
Model model_from_config(const std::string& json_text);

template <class S>
struct P2 {
    S x{}, y{};
};

namespace mech {

// world positions of the point masses, stance/support frame
template <class S>
inline void positions(const Model& m, const S* q, P2<S>* pos) {
    switch (m.kind) {
        case ModelKind::DoubleIntegrator:
            pos[0] = {q[0], S(0.0)};
            break;
        case ModelKind::CartPole: {
            const double l = m.params[2];
            pos[0] = {q[0], S(0.0)};
            pos[1] = {q[0] + l * sin(q[1]), -l * cos(q[1])};
            break;
        }
        case ModelKind::CompassGait: {
            const double a = m.params[2], b = m.params[3], l = a + b;
            pos[0] = {a * sin(q[0]), a * cos(q[0])};  // stance leg mass
            pos[1] = {l * sin(q[0]), l * cos(q[0])};  // hip
            pos[2] = {pos[1].x - b * sin(q[1]), pos[1].y - b * cos(q[1])};  // swing leg mass
            break;
        }
    }
}

inline void point_masses(const Model& m, double* mass) {
    switch (m.kind) {
        case ModelKind::DoubleIntegrator: mass[0] = m.params[0]; break;
        case ModelKind::CartPole: mass[0] = m.params[0]; mass[1] = m.params[1]; break;
        case ModelKind::CompassGait:
            mass[0] = m.params[0];
            mass[1] = m.params[1];
            mass[2] = m.params[0];
            break;
    }
}

template <class S>
S kinetic_energy(const Model& m, const S* q, const S* qd) {
    std::array<Dual<S>, kMaxQ> qt;
    for (int i = 0; i < m.n_q; ++i) qt[i] = {q[i], qd[i]};
    std::array<P2<Dual<S>>, kMaxPts> pos;
    positions(m, qt.data(), pos.data());
    double mass[kMaxPts];
    point_masses(m, mass);
    S T(0.0);
    for (int i = 0; i < m.n_points; ++i)
        T += 0.5 * mass[i] * (pos[i].x.d * pos[i].x.d + pos[i].y.d * pos[i].y.d);
    return T;
}

template <class S>
S potential_energy(const Model& m, const S* q) {
    std::array<P2<S>, kMaxPts> pos;
    positions(m, q, pos.data());
    double mass[kMaxPts];
    point_masses(m, mass);
    const double g = m.gravity();
    S V(0.0);
    for (int i = 0; i < m.n_points; ++i) V += mass[i] * g * pos[i].y;
    return V;
}

// generalized momentum p_i = dT/dqd_i
template <class S>
void momentum(const Model& m, const S* q, const S* qd, S* p) {
    std::array<Dual<S>, kMaxQ> qt, qdt;
    for (int i = 0; i < m.n_q; ++i) {
        for (int j = 0; j < m.n_q; ++j) {
            qt[j] = {q[j], S(0.0)};
            qdt[j] = {qd[j], S(j == i ? 1.0 : 0.0)};
        }
        p[i] = kinetic_energy(m, qt.data(), qdt.data()).d;
    }
}

// Euler-Lagrange residual r = d/dt(dL/dqd) - dL/dq - B u,
// i.e. M(q) qdd - F(q, qd) - G(q, u) stacked per coordinate.
template <class S>
void dynamics_residual(const Model& m, const S* q, const S* qd, const S* qdd, const S* u, S* r) {
    const int n = m.n_q;
    std::array<Dual<S>, kMaxQ> qt, qdt;
    std::array<Dual<S>, kMaxQ> pD;
    std::array<std::array<S, kMaxQ>, kMaxQ> dpdq, dpdqd;  // [i][j]
    for (int j = 0; j < n; ++j) {
        for (int k = 0; k < n; ++k) {
            qt[k] = {q[k], S(k == j ? 1.0 : 0.0)};
            qdt[k] = {qd[k], S(0.0)};
        }
        momentum(m, qt.data(), qdt.data(), pD.data());
        for (int i = 0; i < n; ++i) dpdq[i][j] = pD[i].d;
        for (int k = 0; k < n; ++k) {
            qt[k] = {q[k], S(0.0)};
            qdt[k] = {qd[k], S(k == j ? 1.0 : 0.0)};
        }
        momentum(m, qt.data(), qdt.data(), pD.data());
        for (int i = 0; i < n; ++i) dpdqd[i][j] = pD[i].d;
    }
    std::array<S, kMaxQ> dLdq;
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < n; ++k) {
            qt[k] = {q[k], S(k == i ? 1.0 : 0.0)};
            qdt[k] = {qd[k], S(0.0)};
        }
        dLdq[i] = (kinetic_energy(m, qt.data(), qdt.data()) -
                   potential_energy(m, qt.data()))
                      .d;
    }
    double B[kMaxQ * 1];
    m.input_matrix(B);
    for (int i = 0; i < n; ++i) {
        S acc(0.0);
        for (int j = 0; j < n; ++j) acc += dpdq[i][j] * qd[j] + dpdqd[i][j] * qdd[j];
        acc -= dLdq[i];
        for (int k = 0; k < m.n_u; ++k) acc -= B[i * m.n_u + k] * u[k];
        r[i] = acc;
    }
}

template <class S>
S hip_x(const Model& m, const S* q) {
    switch (m.kind) {
        case ModelKind::DoubleIntegrator:
        case ModelKind::CartPole:
            return q[0];
        case ModelKind::CompassGait:
            return m.leg_length() * sin(q[0]);
    }
    return S(0.0);
}

template <class S>
S swing_foot_y(const Model& m, const S* q) {
    if (m.kind != ModelKind::CompassGait)
        throw ModelError("swing foot height is only defined for the compass gait");
    const double l = m.leg_length();
    return l * (cos(q[0]) - cos(q[1]));
}

// net ground/support reaction: F = sum_i m_i a_i - sum_i m_i (0, -g)
template <class S>
void support_force(const Model& m, const S* q, const S* qd, const S* qdd, S* fx, S* fy) {
    using D2 = Dual<Dual<S>>;
    auto lift = [](const S& v) { return D2{Dual<S>{v}}; };
    const D2 t{Dual<S>{S(0.0), S(1.0)}, Dual<S>{S(1.0), S(0.0)}};
    std::array<D2, kMaxQ> qt;
    for (int i = 0; i < m.n_q; ++i)
        qt[i] = lift(q[i]) + t * lift(qd[i]) + 0.5 * t * t * lift(qdd[i]);
    std::array<P2<D2>, kMaxPts> pos;
    positions(m, qt.data(), pos.data());
    double mass[kMaxPts];
    point_masses(m, mass);
    const double g = m.gravity();
    S ax(0.0), ay(0.0);
    double total = 0;
    for (int i = 0; i < m.n_points; ++i) {
        ax += mass[i] * pos[i].x.d.d;  // second t-derivative = acceleration
        ay += mass[i] * pos[i].y.d.d;
        total += mass[i];
    }
    *fx = ax;
    *fy = ay + total * g;
}

template <class S>
void solve2(const S a11, const S a12, const S a21, const S a22, const S b1, const S b2, S* x1,
            S* x2) {
    S det = a11 * a22 - a12 * a21;
    *x1 = (b1 * a22 - b2 * a12) / det;
    *x2 = (a11 * b2 - a21 * b1) / det;
}

// Plastic impact of the compass gait at swing-foot touchdown, followed by leg
// relabeling. Two momentum conditions determine the post-impact rates:
//  (1) angular momentum of the whole biped about the new contact point,
//  (2) angular momentum of the trailing leg about the hip.
template <class S>
void compass_impact(const Model& m, const S* q, const S* qd, S* q_post, S* qd_post) {
    if (m.kind != ModelKind::CompassGait) throw ModelError("impact map requires the compass gait");
    if (std::abs(std::sin(value_of(q[0]) - value_of(q[1]))) < 1e-9)
        throw ModelError("singular impact: legs collinear");

    const double a = m.params[2], b = m.params[3], l = a + b;
    double mass[kMaxPts];
    point_masses(m, mass);

    std::array<P2<S>, kMaxPts> pos;
    positions(m, q, pos.data());
    P2<S> contact{l * (sin(q[0]) - sin(q[1])), l * (cos(q[0]) - cos(q[1]))};

    auto cross = [](const P2<S>& r, const P2<S>& v) { return r.x * v.y - r.y * v.x; };

    // point velocities for generalized rate direction e_j (stance-pinned chart)
    std::array<std::array<P2<S>, kMaxPts>, kMaxQ> vel;
    std::array<P2<S>, kMaxQ> vsw;
    for (int j = 0; j < m.n_q; ++j) {
        std::array<Dual<S>, kMaxQ> qt;
        for (int k = 0; k < m.n_q; ++k) qt[k] = {q[k], S(k == j ? 1.0 : 0.0)};
        std::array<P2<Dual<S>>, kMaxPts> pd;
        positions(m, qt.data(), pd.data());
        for (int i = 0; i < m.n_points; ++i) vel[j][i] = {pd[i].x.d, pd[i].y.d};
        Dual<S> swx = (a + b) * (sin(qt[0]) - sin(qt[1]));
        Dual<S> swy = (a + b) * (cos(qt[0]) - cos(qt[1]));
        vsw[j] = {swx.d, swy.d};
    }

    // rows: (1) total about contact, (2) trailing-leg mass about the hip
    S A_pre[2][2], A_post[2][2];
    for (int j = 0; j < m.n_q; ++j) {
        S tot_pre(0.0), tot_post(0.0);
        for (int i = 0; i < m.n_points; ++i) {
            P2<S> r{pos[i].x - contact.x, pos[i].y - contact.y};
            tot_pre += mass[i] * cross(r, vel[j][i]);
            P2<S> vpost{vel[j][i].x - vsw[j].x, vel[j][i].y - vsw[j].y};
            tot_post += mass[i] * cross(r, vpost);
        }
        A_pre[0][j] = tot_pre;
        A_post[0][j] = tot_post;
        P2<S> r_leg{pos[0].x - pos[1].x, pos[0].y - pos[1].y};
        A_pre[1][j] = mass[0] * cross(r_leg, vel[j][0]);
        P2<S> v0post{vel[j][0].x - vsw[j].x, vel[j][0].y - vsw[j].y};
        A_post[1][j] = mass[0] * cross(r_leg, v0post);
    }

    S b1 = A_pre[0][0] * qd[0] + A_pre[0][1] * qd[1];
    S b2 = A_pre[1][0] * qd[0] + A_pre[1][1] * qd[1];
    S w1, w2;
    solve2(A_post[0][0], A_post[0][1], A_post[1][0], A_post[1][1], b1, b2, &w1, &w2);

    // relabel: swing leg becomes stance
    q_post[0] = q[1];
    q_post[1] = q[0];
    qd_post[0] = w2;
    qd_post[1] = w1;
}

}  // namespace mech

// dense n_q x n_q mass matrix (row-major)
void mass_matrix(const Model& m, std::span<const double> q, double* M);

// qdd from M qdd = F + G u; throws ModelError when M is near singular
void forward_dynamics(const Model& m, std::span<const double> q, std::span<const double> qd,
                      std::span<const double> u, std::span<double> qdd);

// post-impact state (already leg-relabeled); compass gait only
void impact_map(const Model& m, std::span<const double> q, std::span<const double> qd,
                std::span<double> q_post, std::span<double> qd_post);

struct KinematicPoints {
    double hip_x = 0, hip_y = 0;
    double swing_foot_x = 0, swing_foot_y = 0;
    double com_x = 0, com_y = 0;
};
KinematicPoints kinematics(const Model& m, std::span<const double> q);

double total_energy(const Model& m, std::span<const double> q, std::span<const double> qd);

// fixed-step RK4 on the second-order dynamics; u_of_t fills the input vector
void integrate_rk4(const Model& m, std::vector<double>& q, std::vector<double>& qd, double t0,
                   double t1, double step,
                   const std::function<void(double, std::span<double>)>& u_of_t);

}  // namespace colloc

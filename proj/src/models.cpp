#include "colloc/models.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>

namespace colloc {

Model Model::double_integrator(double mass, double u_max) {
    Model m;
    m.kind = ModelKind::DoubleIntegrator;
    m.n_q = 1;
    m.n_u = 1;
    m.n_points = 1;
    m.n_params = 1;
    m.params = {mass, 0, 0, 0, 0, 0};
    m.u_max = u_max;
    return m;
}

Model Model::cart_pole(double cart_mass, double pole_mass, double pole_length, double gravity,
                       double u_max) {
    Model m;
    m.kind = ModelKind::CartPole;
    m.n_q = 2;
    m.n_u = 1;
    m.n_points = 2;
    m.n_params = 4;
    m.params = {cart_mass, pole_mass, pole_length, gravity, 0, 0};
    m.u_max = u_max;
    return m;
}

Model Model::compass_gait(double leg_mass, double hip_mass, double a, double b, double gravity,
                          double u_max) {
    Model m;
    m.kind = ModelKind::CompassGait;
    m.n_q = 2;
    m.n_u = 1;
    m.n_points = 3;
    m.n_params = 5;
    m.params = {leg_mass, hip_mass, a, b, gravity, 0};
    m.u_max = u_max;
    return m;
}

Model Model::by_name(const std::string& name) {
    if (name == "double_integrator" || name == "di") return double_integrator();
    if (name == "cartpole" || name == "cart_pole") return cart_pole();
    if (name == "compass" || name == "compass_gait") return compass_gait();
    throw ModelError("unknown model: " + name);
}

const char* Model::name() const {
    switch (kind) {
        case ModelKind::DoubleIntegrator: return "double_integrator";
        case ModelKind::CartPole: return "cartpole";
        case ModelKind::CompassGait: return "compass";
    }
    return "?";
}

double Model::gravity() const {
    switch (kind) {
        case ModelKind::DoubleIntegrator: return 0.0;
        case ModelKind::CartPole: return params[3];
        case ModelKind::CompassGait: return params[4];
    }
    return 0.0;
}

double Model::leg_length() const {
    if (kind != ModelKind::CompassGait) throw ModelError("leg_length: not a compass gait");
    return params[2] + params[3];
}

void Model::input_matrix(double* B) const {
    switch (kind) {
        case ModelKind::DoubleIntegrator: B[0] = 1.0; break;
        case ModelKind::CartPole:
            B[0] = 1.0;  // force on the cart
            B[1] = 0.0;
            break;
        case ModelKind::CompassGait:
            B[0] = -1.0;  // hip torque acts between the legs
            B[1] = 1.0;
            break;
    }
}

std::vector<double> model_aux(const Model& m) {
    std::vector<double> aux;
    aux.push_back(static_cast<double>(m.kind));
    for (int i = 0; i < m.n_params; ++i) aux.push_back(m.params[i]);
    return aux;
}

Model model_from_aux(std::span<const double> aux, int* consumed) {
    if (aux.empty()) throw ModelError("empty model aux");
    const int code = static_cast<int>(aux[0]);
    Model m;
    switch (code) {
        case 0: m = Model::double_integrator(); break;
        case 1: m = Model::cart_pole(); break;
        case 2: m = Model::compass_gait(); break;
        default: throw ModelError("unknown model code in aux: " + std::to_string(code));
    }
    if (static_cast<int>(aux.size()) < 1 + m.n_params)
        throw ModelError("model aux too short for " + std::string(m.name()));
    for (int i = 0; i < m.n_params; ++i) m.params[i] = aux[1 + i];
    if (consumed) *consumed = 1 + m.n_params;
    return m;
}

Model model_from_config(const std::string& json_text) {
    const auto j = nlohmann::json::parse(json_text);
    Model m = Model::by_name(j.at("model").get<std::string>());
    if (j.contains("params")) {
        const auto& p = j["params"];
        auto set = [&](const char* key, int idx) {
            if (p.contains(key)) m.params[idx] = p[key].get<double>();
        };
        switch (m.kind) {
            case ModelKind::DoubleIntegrator: set("mass", 0); break;
            case ModelKind::CartPole:
                set("cart_mass", 0);
                set("pole_mass", 1);
                set("pole_length", 2);
                set("gravity", 3);
                break;
            case ModelKind::CompassGait:
                set("leg_mass", 0);
                set("hip_mass", 1);
                set("a", 2);
                set("b", 3);
                set("gravity", 4);
                break;
        }
        if (p.contains("u_max")) m.u_max = p["u_max"].get<double>();
    }
    for (int i = 0; i < m.n_params; ++i)
        if (!(m.params[i] > 0) && !(m.kind == ModelKind::DoubleIntegrator && i > 0))
            throw ModelError("model parameter must be positive");
    return m;
}

void mass_matrix(const Model& m, std::span<const double> q, double* M) {
    const int n = m.n_q;
    std::array<Dual1, kMaxQ> qt, qdt;
    std::array<Dual1, kMaxQ> p;
    for (int j = 0; j < n; ++j) {
        for (int k = 0; k < n; ++k) {
            qt[k] = {q[k], 0.0};
            qdt[k] = {0.0, k == j ? 1.0 : 0.0};
        }
        mech::momentum(m, qt.data(), qdt.data(), p.data());
        for (int i = 0; i < n; ++i) M[i * n + j] = p[i].d;
    }
}

void forward_dynamics(const Model& m, std::span<const double> q, std::span<const double> qd,
                      std::span<const double> u, std::span<double> qdd) {
    const int n = m.n_q;
    // rhs = -(residual at qdd = 0): M qdd + (residual terms without qdd) = 0
    std::array<double, kMaxQ> zero{}, r{};
    mech::dynamics_residual(m, q.data(), qd.data(), zero.data(), u.data(), r.data());
    double M[kMaxQ * kMaxQ];
    mass_matrix(m, q, M);
    if (n == 1) {
        if (std::abs(M[0]) < 1e-12) throw ModelError("singular mass matrix");
        qdd[0] = -r[0] / M[0];
        return;
    }
    const double det = M[0] * M[3] - M[1] * M[2];
    const double norm = std::max({std::abs(M[0]), std::abs(M[1]), std::abs(M[2]), std::abs(M[3])});
    if (std::abs(det) < 1e-12 * norm * norm) throw ModelError("mass matrix near singular");
    qdd[0] = (-r[0] * M[3] + r[1] * M[1]) / det;
    qdd[1] = (-M[0] * r[1] + M[2] * r[0]) / det;
}

void impact_map(const Model& m, std::span<const double> q, std::span<const double> qd,
                std::span<double> q_post, std::span<double> qd_post) {
    mech::compass_impact(m, q.data(), qd.data(), q_post.data(), qd_post.data());
}

KinematicPoints kinematics(const Model& m, std::span<const double> q) {
    KinematicPoints k;
    std::array<P2<double>, kMaxPts> pos;
    mech::positions(m, q.data(), pos.data());
    double mass[kMaxPts];
    mech::point_masses(m, mass);
    double total = 0;
    for (int i = 0; i < m.n_points; ++i) {
        k.com_x += mass[i] * pos[i].x;
        k.com_y += mass[i] * pos[i].y;
        total += mass[i];
    }
    k.com_x /= total;
    k.com_y /= total;
    switch (m.kind) {
        case ModelKind::DoubleIntegrator:
        case ModelKind::CartPole:
            k.hip_x = q[0];
            k.hip_y = 0;
            k.swing_foot_x = k.hip_x;
            k.swing_foot_y = 0;
            break;
        case ModelKind::CompassGait: {
            const double l = m.leg_length();
            k.hip_x = pos[1].x;
            k.hip_y = pos[1].y;
            k.swing_foot_x = pos[1].x - l * std::sin(q[1]);
            k.swing_foot_y = pos[1].y - l * std::cos(q[1]);
            break;
        }
    }
    return k;
}

double total_energy(const Model& m, std::span<const double> q, std::span<const double> qd) {
    return mech::kinetic_energy(m, q.data(), qd.data()) + mech::potential_energy(m, q.data());
}

void integrate_rk4(const Model& m, std::vector<double>& q, std::vector<double>& qd, double t0,
                   double t1, double step,
                   const std::function<void(double, std::span<double>)>& u_of_t) {
    const int n = m.n_q;
    std::vector<double> u(m.n_u, 0.0);
    auto deriv = [&](double t, const std::vector<double>& qq, const std::vector<double>& vv,
                     std::vector<double>& dq, std::vector<double>& dv) {
        u_of_t(t, u);
        dq = vv;
        dv.resize(n);
        forward_dynamics(m, qq, vv, u, dv);
    };
    std::vector<double> k1q(n), k1v(n), k2q(n), k2v(n), k3q(n), k3v(n), k4q(n), k4v(n);
    std::vector<double> tq(n), tv(n);
    double t = t0;
    while (t < t1 - 1e-12) {
        const double h = std::min(step, t1 - t);
        deriv(t, q, qd, k1q, k1v);
        for (int i = 0; i < n; ++i) tq[i] = q[i] + 0.5 * h * k1q[i], tv[i] = qd[i] + 0.5 * h * k1v[i];
        deriv(t + 0.5 * h, tq, tv, k2q, k2v);
        for (int i = 0; i < n; ++i) tq[i] = q[i] + 0.5 * h * k2q[i], tv[i] = qd[i] + 0.5 * h * k2v[i];
        deriv(t + 0.5 * h, tq, tv, k3q, k3v);
        for (int i = 0; i < n; ++i) tq[i] = q[i] + h * k3q[i], tv[i] = qd[i] + h * k3v[i];
        deriv(t + h, tq, tv, k4q, k4v);
        for (int i = 0; i < n; ++i) {
            q[i] += h / 6.0 * (k1q[i] + 2 * k2q[i] + 2 * k3q[i] + k4q[i]);
            qd[i] += h / 6.0 * (k1v[i] + 2 * k2v[i] + 2 * k3v[i] + k4v[i]);
        }
        t += h;
    }
}

}  // namespace colloc

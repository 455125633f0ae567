#include "safeinfer/safety_filter.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "safeinfer/errors.hpp"

namespace safeinfer {

void CbfConfig::validate(std::size_t agents) const {
    if (!(d_safe > 0.0)) {
        throw InputError("cbf: d_safe must be positive");
    }
    if (!(dt > 0.0)) {
        throw InputError("cbf: dt must be positive");
    }
    if (!(kappa > 0.0)) {
        throw InputError("cbf: kappa must be positive");
    }
    if (lookahead < 0.0) {
        throw InputError("cbf: lookahead must be non-negative");
    }
    if (c_f < 0.0 || c_g < 0.0 || c_beta < 0.0 || delta_e < 0.0) {
        throw InputError("cbf: Lipschitz constants and deltas must be non-negative");
    }
    if (u_bounds.v_min > u_bounds.v_max || u_bounds.omega_max < 0.0) {
        throw InputError("cbf: empty control box");
    }
    if (c_F.size() != agents || delta_i.size() != agents) {
        throw InputError("cbf: c_F and delta_i need one entry per agent");
    }
    for (std::size_t i = 0; i < agents; ++i) {
        if (c_F[i] < 0.0 || delta_i[i] < 0.0) {
            throw InputError("cbf: c_F and delta_i must be non-negative");
        }
    }
}

Eigen::Vector2d lookahead_point(const EgoState& ego, double lookahead) {
    return ego.position() + lookahead * ego.heading();
}

double cbf_value(const EgoState& ego, const Eigen::Vector2d& agent, const CbfConfig& cfg) {
    return (lookahead_point(ego, cfg.lookahead) - agent).squaredNorm() - cfg.d_safe * cfg.d_safe;
}

CbfRow lie_derivatives(const EgoState& ego, const Eigen::Vector2d& agent, const CbfConfig& cfg) {
    const Eigen::Vector2d e = ego.heading();
    const Eigen::Vector2d n(-e(1), e(0));
    const Eigen::Vector2d r = lookahead_point(ego, cfg.lookahead) - agent;
    CbfRow row;
    row.lf = 0.0;
    row.lg = Eigen::Vector2d(2.0 * r.dot(e), 2.0 * cfg.lookahead * r.dot(n));
    row.dh_dxi = -2.0 * r;
    row.h = r.squaredNorm() - cfg.d_safe * cfg.d_safe;
    return row;
}

double worst_case_term(const Eigen::VectorXd& dh_dxi, const PredictionBox& box, double eta) {
    if (dh_dxi.size() != box.center.size()) {
        throw InputError("worst_case_term: dimension mismatch");
    }
    const double w = box.radius + eta;
    double total = 0.0;
    for (Eigen::Index r = 0; r < dh_dxi.size(); ++r) {
        const double mu = dh_dxi(r);
        total += std::min(mu * (box.center(r) - w), mu * (box.center(r) + w));
    }
    return total;
}

double control_norm_bound(const ControlBounds& bounds) { return bounds.max_norm(); }

Margin margin(const CbfConfig& cfg, std::size_t agent) {
    if (agent >= cfg.delta_i.size() || agent >= cfg.c_F.size()) {
        throw InputError("margin: agent index out of range");
    }
    const double u_max = control_norm_bound(cfg.u_bounds);
    Margin m;
    m.phi = (cfg.c_f + cfg.c_g * u_max + cfg.c_beta) * (cfg.delta_e + cfg.delta_i[agent]);
    const double all_agents = std::accumulate(cfg.delta_i.begin(), cfg.delta_i.end(), 0.0);
    m.eta = cfg.c_F[agent] * (all_agents + cfg.delta_e);
    return m;
}

std::vector<CbfRow> build_cbf_rows(const WorldState& world, std::span<const PredictionBox> boxes,
                                   const CbfConfig& cfg) {
    if (boxes.size() != world.agents.size()) {
        throw InputError("build_cbf_rows: need one prediction box per agent");
    }
    std::vector<CbfRow> rows;
    rows.reserve(boxes.size());
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        CbfRow row = lie_derivatives(world.ego, world.agents[i], cfg);
        const Margin mg = margin(cfg, i);
        row.eta = mg.eta;
        row.phi = mg.phi;
        row.m_worst = worst_case_term(row.dh_dxi, boxes[i], mg.eta);
        rows.push_back(row);
    }
    return rows;
}

QpProblem assemble_qp(std::span<const CbfRow> rows, const CbfConfig& cfg, const Eigen::Vector2d& u_ref) {
    QpProblem qp;
    qp.u_ref = u_ref;
    qp.box = cfg.u_bounds;
    qp.rows.reserve(rows.size());
    for (const auto& row : rows) {
        qp.rows.push_back({-row.lg, row.lf + row.m_worst + cfg.kappa * row.h - row.phi});
    }
    return qp;
}

QpProblem assemble_qp(const WorldState& world, std::span<const PredictionBox> boxes, const CbfConfig& cfg,
                      const Eigen::Vector2d& u_ref) {
    const auto rows = build_cbf_rows(world, boxes, cfg);
    return assemble_qp(rows, cfg, u_ref);
}

LipschitzEstimate estimate_lipschitz(const CbfConfig& cfg, double max_separation, int samples, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    constexpr double step = 1e-6;

    // f maps the 5-vector (px, py, theta, xi, yi) to (lf, lg_v, lg_w, kappa h).
    auto eval = [&](const Eigen::Matrix<double, 5, 1>& z) {
        EgoState ego{z(0), z(1), z(2)};
        const CbfRow row = lie_derivatives(ego, z.tail<2>(), cfg);
        return Eigen::Vector4d(row.lf, row.lg(0), row.lg(1), cfg.kappa * row.h);
    };

    LipschitzEstimate est;
    for (int s = 0; s < samples; ++s) {
        const double theta = angle(rng);
        const double rad = max_separation * std::sqrt(unit(rng));
        const double dir = angle(rng);
        Eigen::Matrix<double, 5, 1> z;
        z << 0.0, 0.0, theta, 0.0, 0.0;
        const Eigen::Vector2d pbar = lookahead_point(EgoState{0.0, 0.0, theta}, cfg.lookahead);
        z.tail<2>() = pbar + rad * Eigen::Vector2d(std::cos(dir), std::sin(dir));

        Eigen::Matrix<double, 4, 5> jac;
        for (int k = 0; k < 5; ++k) {
            Eigen::Matrix<double, 5, 1> zp = z;
            Eigen::Matrix<double, 5, 1> zm = z;
            zp(k) += step;
            zm(k) -= step;
            jac.col(k) = (eval(zp) - eval(zm)) / (2.0 * step);
        }
        auto block_norm = [&](int row0, int rows) {
            const Eigen::MatrixXd je = jac.block(row0, 0, rows, 3);
            const Eigen::MatrixXd ji = jac.block(row0, 3, rows, 2);
            const double ne = Eigen::JacobiSVD<Eigen::MatrixXd>(je).singularValues()(0);
            const double ni = Eigen::JacobiSVD<Eigen::MatrixXd>(ji).singularValues()(0);
            return std::max(ne, ni);
        };
        est.c_f = std::max(est.c_f, block_norm(0, 1));
        est.c_g = std::max(est.c_g, block_norm(1, 2));
        est.c_beta = std::max(est.c_beta, block_norm(3, 1));
    }
    return est;
}

}  // namespace safeinfer

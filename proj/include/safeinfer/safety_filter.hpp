#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "safeinfer/conformal.hpp"
#include "safeinfer/qp_solver.hpp"
#include "safeinfer/state.hpp"

namespace safeinfer {

/// Sampled-data barrier parameters. The barrier for agent i is
///   h = |p_bar - x_i|^2 - d_safe^2,  p_bar = p + lookahead * (cos theta, sin theta)
/// with linear decay beta(h) = kappa * h.
struct CbfConfig {
    double d_safe = 1.3;
    double lookahead = 0.3;
    double kappa = 1.0;
    // Lipschitz constants of L_f h, L_g h and beta(h) (2-norm).
    double c_f = 0.0;
    double c_g = 0.0;
    double c_beta = 0.0;
    // Per-agent Lipschitz constant of the agent dynamics.
    std::vector<double> c_F;
    // Bounds on the state change over one sampling interval.
    double delta_e = 0.0;
    std::vector<double> delta_i;
    double dt = 0.01;
    ControlBounds u_bounds;

    void validate(std::size_t agents) const;
};

struct CbfRow {
    double lf = 0.0;
    Eigen::Vector2d lg = Eigen::Vector2d::Zero();
    Eigen::Vector2d dh_dxi = Eigen::Vector2d::Zero();
    double h = 0.0;
    double m_worst = 0.0;
    double phi = 0.0;
    double eta = 0.0;
};

Eigen::Vector2d lookahead_point(const EgoState& ego, double lookahead);

double cbf_value(const EgoState& ego, const Eigen::Vector2d& agent, const CbfConfig& cfg);

/// Fills lf, lg, dh_dxi and h. The unicycle has no drift, so lf = 0.
CbfRow lie_derivatives(const EgoState& ego, const Eigen::Vector2d& agent, const CbfConfig& cfg);

/// Exact minimum of dh_dxi . xdot over the inf-norm box inflated by eta.
double worst_case_term(const Eigen::VectorXd& dh_dxi, const PredictionBox& box, double eta);

struct Margin {
    double phi = 0.0;  // sampled-data tightening
    double eta = 0.0;  // inflation of the prediction box over one interval
};

Margin margin(const CbfConfig& cfg, std::size_t agent);

/// Smallest norm bound covering the control box (its largest corner norm).
double control_norm_bound(const ControlBounds& bounds);

/// One row per agent with h, Lie derivatives, worst-case term and margin.
std::vector<CbfRow> build_cbf_rows(const WorldState& world, std::span<const PredictionBox> boxes,
                                   const CbfConfig& cfg);

/// -lg . u <= lf + m_worst + kappa h - phi for each row, inside cfg.u_bounds.
QpProblem assemble_qp(std::span<const CbfRow> rows, const CbfConfig& cfg, const Eigen::Vector2d& u_ref);

QpProblem assemble_qp(const WorldState& world, std::span<const PredictionBox> boxes, const CbfConfig& cfg,
                      const Eigen::Vector2d& u_ref);

struct LipschitzEstimate {
    double c_f = 0.0;
    double c_g = 0.0;
    double c_beta = 0.0;
};

/// Sampled estimate (not a certificate) of the Lipschitz constants of L_f h,
/// L_g h and kappa h over poses whose look-ahead point is within
/// `max_separation` of the agent. Gradients come from central differences;
/// the constant for a pair (x_e, x_i) is the larger of the two block norms.
LipschitzEstimate estimate_lipschitz(const CbfConfig& cfg, double max_separation, int samples, std::uint64_t seed);

}  // namespace safeinfer

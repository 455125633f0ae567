#pragma once

#include <vector>

#include <Eigen/Dense>

namespace safeinfer {

/// Inclusive box on the two controls (v, omega).
struct ControlBounds {
    double v_min = -1.0;
    double v_max = 1.0;
    double omega_max = 1.0;

    Eigen::Vector2d lower() const { return {v_min, -omega_max}; }
    Eigen::Vector2d upper() const { return {v_max, omega_max}; }
    Eigen::Vector2d clamp(const Eigen::Vector2d& u) const;
    /// Largest 2-norm over the box, attained at a corner.
    double max_norm() const;
};

/// a . u <= b
struct LinearRow {
    Eigen::Vector2d a;
    double b = 0.0;
};

/// minimize |u - u_ref|^2 subject to rows and box.
struct QpProblem {
    Eigen::Vector2d u_ref = Eigen::Vector2d::Zero();
    std::vector<LinearRow> rows;
    ControlBounds box;
};

enum class QpStatus { optimal, infeasible };

/// Constraint indices: rows first, then v <= v_max, -v <= -v_min,
/// omega <= omega_max, -omega <= omega_max.
struct QpSolution {
    QpStatus status = QpStatus::infeasible;
    Eigen::Vector2d u = Eigen::Vector2d::Zero();
    std::vector<int> active_set;
    /// One multiplier per constraint in the order above.
    Eigen::VectorXd multipliers;
    double objective = 0.0;
};

/// All constraints (rows then box) as a . u <= b.
std::vector<LinearRow> all_constraints(const QpProblem& problem);

/// Exact active-set enumeration for the 2-variable problem. Active sets are
/// tried by size, then lexicographically by index, so ties go to the lowest
/// indices. Throws InputError on non-finite data or an empty box.
QpSolution solve(const QpProblem& problem);

/// Max of stationarity, primal, dual and complementarity residuals.
double check_kkt(const QpProblem& problem, const QpSolution& solution);

}  // namespace safeinfer

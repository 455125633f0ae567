#include "safeinfer/qp_solver.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "safeinfer/errors.hpp"

namespace safeinfer {

namespace {

constexpr double kPrimalTol = 1e-10;
constexpr double kDualTol = 1e-12;
constexpr double kSingularTol = 1e-12;

struct Normalized {
    Eigen::Vector2d a;
    double b = 0.0;
    double scale = 0.0;  // |a| of the original row, 0 for trivial rows
};

bool satisfies(const Normalized& c, const Eigen::Vector2d& u) {
    if (c.scale == 0.0) {
        return true;
    }
    return c.a.dot(u) - c.b <= kPrimalTol * (1.0 + std::abs(c.b));
}

bool feasible(const std::vector<Normalized>& cs, const Eigen::Vector2d& u) {
    return std::all_of(cs.begin(), cs.end(), [&](const Normalized& c) { return satisfies(c, u); });
}

QpSolution make_solution(const Eigen::Vector2d& u, const Eigen::Vector2d& u_ref, std::vector<int> active,
                         const std::vector<double>& lambda_normalized, const std::vector<Normalized>& cs) {
    QpSolution sol;
    sol.status = QpStatus::optimal;
    sol.u = u;
    sol.objective = (u - u_ref).squaredNorm();
    sol.multipliers = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cs.size()));
    for (std::size_t k = 0; k < active.size(); ++k) {
        const auto& c = cs[static_cast<std::size_t>(active[k])];
        sol.multipliers(active[k]) = std::max(0.0, lambda_normalized[k]) / c.scale;
    }
    sol.active_set = std::move(active);
    return sol;
}

}  // namespace

Eigen::Vector2d ControlBounds::clamp(const Eigen::Vector2d& u) const {
    return {std::clamp(u(0), v_min, v_max), std::clamp(u(1), -omega_max, omega_max)};
}

double ControlBounds::max_norm() const {
    const double v = std::max(std::abs(v_min), std::abs(v_max));
    return std::hypot(v, omega_max);
}

std::vector<LinearRow> all_constraints(const QpProblem& problem) {
    std::vector<LinearRow> cs = problem.rows;
    const auto& box = problem.box;
    cs.push_back({Eigen::Vector2d(1.0, 0.0), box.v_max});
    cs.push_back({Eigen::Vector2d(-1.0, 0.0), -box.v_min});
    cs.push_back({Eigen::Vector2d(0.0, 1.0), box.omega_max});
    cs.push_back({Eigen::Vector2d(0.0, -1.0), box.omega_max});
    return cs;
}

QpSolution solve(const QpProblem& problem) {
    if (!problem.u_ref.allFinite()) {
        throw InputError("qp: non-finite reference control");
    }
    for (const auto& row : problem.rows) {
        if (!row.a.allFinite() || !std::isfinite(row.b)) {
            throw InputError("qp: non-finite constraint row");
        }
    }
    const auto& box = problem.box;
    if (!std::isfinite(box.v_min) || !std::isfinite(box.v_max) || !std::isfinite(box.omega_max)) {
        throw InputError("qp: non-finite control bounds");
    }
    if (box.v_min > box.v_max || box.omega_max < 0.0) {
        throw InputError("qp: empty control box");
    }

    const auto raw = all_constraints(problem);
    std::vector<Normalized> cs;
    cs.reserve(raw.size());
    for (const auto& r : raw) {
        const double n = r.a.norm();
        if (n == 0.0) {
            if (r.b < 0.0) {
                return QpSolution{};  // 0 <= b < 0
            }
            cs.push_back({Eigen::Vector2d::Zero(), 0.0, 0.0});
        } else {
            cs.push_back({r.a / n, r.b / n, n});
        }
    }
    const int m = static_cast<int>(cs.size());
    const Eigen::Vector2d& ur = problem.u_ref;

    if (feasible(cs, ur)) {
        return make_solution(ur, ur, {}, {}, cs);
    }

    for (int j = 0; j < m; ++j) {
        const auto& c = cs[static_cast<std::size_t>(j)];
        if (c.scale == 0.0) {
            continue;
        }
        const double viol = c.a.dot(ur) - c.b;
        const double lambda = 2.0 * viol;
        if (lambda < -kDualTol) {
            continue;
        }
        const Eigen::Vector2d u = ur - c.a * viol;
        if (feasible(cs, u)) {
            return make_solution(u, ur, {j}, {lambda}, cs);
        }
    }

    for (int j = 0; j < m; ++j) {
        const auto& cj = cs[static_cast<std::size_t>(j)];
        if (cj.scale == 0.0) {
            continue;
        }
        for (int l = j + 1; l < m; ++l) {
            const auto& cl = cs[static_cast<std::size_t>(l)];
            if (cl.scale == 0.0) {
                continue;
            }
            Eigen::Matrix2d n;
            n.col(0) = cj.a;
            n.col(1) = cl.a;
            const double det = n.determinant();
            if (std::abs(det) < kSingularTol) {
                continue;
            }
            // Rows of n^T are the active normals.
            const Eigen::Vector2d u = n.transpose().partialPivLu().solve(Eigen::Vector2d(cj.b, cl.b));
            // 2 (u - u_ref) + N lambda = 0
            const Eigen::Vector2d lambda = n.partialPivLu().solve(-2.0 * (u - ur));
            if (lambda(0) < -kDualTol || lambda(1) < -kDualTol) {
                continue;
            }
            if (feasible(cs, u)) {
                return make_solution(u, ur, {j, l}, {lambda(0), lambda(1)}, cs);
            }
        }
    }
    return QpSolution{};
}

double check_kkt(const QpProblem& problem, const QpSolution& solution) {
    const auto cs = all_constraints(problem);
    Eigen::Vector2d grad = 2.0 * (solution.u - problem.u_ref);
    double worst = 0.0;
    for (std::size_t j = 0; j < cs.size(); ++j) {
        const double lambda = solution.multipliers.size() > static_cast<Eigen::Index>(j)
                                  ? solution.multipliers(static_cast<Eigen::Index>(j))
                                  : 0.0;
        const double slack = cs[j].a.dot(solution.u) - cs[j].b;
        grad += lambda * cs[j].a;
        worst = std::max(worst, std::max(0.0, slack));
        worst = std::max(worst, std::max(0.0, -lambda));
        worst = std::max(worst, std::abs(lambda * slack));
    }
    return std::max(worst, grad.lpNorm<Eigen::Infinity>());
}

}  // namespace safeinfer

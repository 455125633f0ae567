#pragma once

#include <vector>

#include <Eigen/Dense>

namespace safeinfer {

/// Wrap to (-pi, pi].
double wrap_angle(double theta);

/// Unicycle pose.
struct EgoState {
    double px = 0.0;
    double py = 0.0;
    double theta = 0.0;

    Eigen::Vector2d position() const { return {px, py}; }
    Eigen::Vector2d heading() const;
};

struct WorldState {
    double t = 0.0;
    EgoState ego;
    std::vector<Eigen::Vector2d> agents;

    /// [px, py, theta, x_1, y_1, ..., x_N, y_N]
    Eigen::VectorXd stacked() const;
    Eigen::Index state_dim() const { return 3 + 2 * static_cast<Eigen::Index>(agents.size()); }
};

}  // namespace safeinfer

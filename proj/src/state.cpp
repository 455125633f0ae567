#include "safeinfer/state.hpp"

#include <cmath>
#include <numbers>

namespace safeinfer {

double wrap_angle(double theta) {
    if (theta > -std::numbers::pi && theta <= std::numbers::pi) {
        return theta;
    }
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double w = std::fmod(theta + std::numbers::pi, two_pi);
    if (w <= 0.0) {
        w += two_pi;
    }
    return w - std::numbers::pi;
}

Eigen::Vector2d EgoState::heading() const { return {std::cos(theta), std::sin(theta)}; }

Eigen::VectorXd WorldState::stacked() const {
    Eigen::VectorXd x(state_dim());
    x(0) = ego.px;
    x(1) = ego.py;
    x(2) = ego.theta;
    for (std::size_t i = 0; i < agents.size(); ++i) {
        x.segment<2>(3 + 2 * static_cast<Eigen::Index>(i)) = agents[i];
    }
    return x;
}

}  // namespace safeinfer

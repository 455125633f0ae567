#pragma once

#include <cstddef>
#include <deque>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "safeinfer/rbf_network.hpp"

namespace safeinfer {

/// Sliding calibration set holding the most recent `capacity` labelled
/// samples, oldest first.
class CalibrationWindow {
public:
    explicit CalibrationWindow(std::size_t capacity = 30);

    void push(Eigen::VectorXd state, Eigen::VectorXd derivative);

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const std::deque<TrainingSample>& entries() const { return entries_; }

private:
    std::size_t capacity_;
    std::deque<TrainingSample> entries_;
};

struct AcpState {
    double alpha_t = 0.01;
    double alpha_target = 0.01;
    double gamma = 0.002;
    double r_max = 1.0;
    std::vector<int> err_history;

    void validate() const;
};

/// Inf-norm ball { xdot : |xdot - center|_inf <= radius }.
struct PredictionBox {
    Eigen::VectorXd center;
    double radius = 0.0;
};

/// Inf-norm residuals of the network on the window, oldest first.
std::vector<double> scores(const RbfNetwork& net, const CalibrationWindow& window);

/// ceil((1 - alpha_t)(L + 1))-th smallest score, with r_max below 1/(L+1)
/// and 0 at or above 1. L is the number of scores supplied.
double quantile_width(double alpha_t, std::span<const double> scores, double r_max);

/// alpha_t += gamma (alpha_target - err). alpha_t is left unclamped.
AcpState update_alpha(AcpState state, int err);

/// 1 when `actual` falls outside the box (a miss), 0 otherwise. The boundary
/// counts as covered.
int covered(const PredictionBox& box, const Eigen::VectorXd& actual);

/// Fraction of zero (covered) entries.
double coverage_rate(std::span<const int> err_history);

/// Lower bound 1 - alpha - (alpha_0 + gamma) / (K gamma) on average coverage
/// after K updates.
double coverage_bound(double alpha_target, double alpha_initial, double gamma, std::size_t horizon);

}  // namespace safeinfer

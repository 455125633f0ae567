#include "safeinfer/conformal.hpp"

#include <algorithm>
#include <cmath>

#include "safeinfer/errors.hpp"

namespace safeinfer {

CalibrationWindow::CalibrationWindow(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) {
        throw InputError("calibration window capacity must be at least 1");
    }
}

void CalibrationWindow::push(Eigen::VectorXd state, Eigen::VectorXd derivative) {
    if (entries_.size() == capacity_) {
        entries_.pop_front();
    }
    entries_.push_back(TrainingSample{std::move(state), std::move(derivative), 0.0});
}

void AcpState::validate() const {
    if (!(alpha_target > 0.0 && alpha_target < 1.0)) {
        throw InputError("alpha_target must lie in (0, 1)");
    }
    if (!(gamma > 0.0)) {
        throw InputError("gamma must be positive");
    }
    if (!(r_max >= 0.0)) {
        throw InputError("r_max must be non-negative");
    }
    for (int e : err_history) {
        if (e != 0 && e != 1) {
            throw InputError("err_history entries must be 0 or 1");
        }
    }
}

std::vector<double> scores(const RbfNetwork& net, const CalibrationWindow& window) {
    if (window.empty()) {
        throw InsufficientDataError("scores: calibration window is empty");
    }
    std::vector<double> out;
    out.reserve(window.size());
    for (const auto& entry : window.entries()) {
        out.push_back((entry.derivative - predict(net, entry.state)).lpNorm<Eigen::Infinity>());
    }
    return out;
}

double quantile_width(double alpha_t, std::span<const double> scores, double r_max) {
    if (scores.empty()) {
        throw InsufficientDataError("quantile_width: no calibration scores");
    }
    const auto count = static_cast<double>(scores.size());
    if (alpha_t < 1.0 / (count + 1.0)) {
        return r_max;
    }
    if (alpha_t >= 1.0) {
        return 0.0;
    }
    auto rank = static_cast<std::size_t>(std::ceil((1.0 - alpha_t) * (count + 1.0)));
    rank = std::clamp<std::size_t>(rank, 1, scores.size());
    std::vector<double> sorted(scores.begin(), scores.end());
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank - 1), sorted.end());
    return sorted[rank - 1];
}

AcpState update_alpha(AcpState state, int err) {
    if (err != 0 && err != 1) {
        throw InputError("update_alpha: err must be 0 or 1");
    }
    state.alpha_t += state.gamma * (state.alpha_target - static_cast<double>(err));
    state.err_history.push_back(err);
    return state;
}

int covered(const PredictionBox& box, const Eigen::VectorXd& actual) {
    if (actual.size() != box.center.size()) {
        throw InputError("covered: dimension mismatch");
    }
    return (actual - box.center).lpNorm<Eigen::Infinity>() <= box.radius ? 0 : 1;
}

double coverage_rate(std::span<const int> err_history) {
    if (err_history.empty()) {
        throw InsufficientDataError("coverage_rate: empty history");
    }
    const auto hits = std::count(err_history.begin(), err_history.end(), 0);
    return static_cast<double>(hits) / static_cast<double>(err_history.size());
}

double coverage_bound(double alpha_target, double alpha_initial, double gamma, std::size_t horizon) {
    if (horizon == 0 || !(gamma > 0.0)) {
        throw InputError("coverage_bound: need horizon >= 1 and gamma > 0");
    }
    return 1.0 - alpha_target - (alpha_initial + gamma) / (static_cast<double>(horizon) * gamma);
}

}  // namespace safeinfer

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "safeinfer/rbf_network.hpp"

namespace testing {

// Small seeded generator used by the property tests.
class Gen {
public:
    explicit Gen(std::uint64_t seed) : rng_(seed) {}

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
    bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(rng_); }

    Eigen::VectorXd vector(Eigen::Index n, double lo, double hi) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            v(i) = uniform(lo, hi);
        }
        return v;
    }

    Eigen::MatrixXd matrix(Eigen::Index r, Eigen::Index c, double lo, double hi) {
        Eigen::MatrixXd m(r, c);
        for (Eigen::Index j = 0; j < c; ++j) {
            m.col(j) = vector(r, lo, hi);
        }
        return m;
    }

    safeinfer::RbfNetwork network(Eigen::Index n, Eigen::Index m, Eigen::Index out) {
        Eigen::VectorXd widths(m);
        for (Eigen::Index j = 0; j < m; ++j) {
            widths(j) = uniform(0.3, 2.0);
        }
        return safeinfer::RbfNetwork(matrix(n, m, -3.0, 3.0), widths, matrix(m + 1, out, -2.0, 2.0));
    }

    std::mt19937_64& engine() { return rng_; }

private:
    std::mt19937_64 rng_;
};

}  // namespace testing

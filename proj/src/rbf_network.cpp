#include "safeinfer/rbf_network.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "safeinfer/errors.hpp"

namespace safeinfer {

namespace {

void check_dim(Eigen::Index got, Eigen::Index want, const char* what) {
    if (got != want) {
        throw InputError(std::string(what) + ": expected dimension " + std::to_string(want) + ", got " +
                         std::to_string(got));
    }
}

Eigen::MatrixXd basis_rows(const Eigen::MatrixXd& centers, const Eigen::VectorXd& widths,
                           std::span<const TrainingSample> dataset) {
    const Eigen::Index m = centers.cols();
    Eigen::MatrixXd phi(static_cast<Eigen::Index>(dataset.size()), m + 1);
    for (std::size_t k = 0; k < dataset.size(); ++k) {
        const auto& x = dataset[k].state;
        check_dim(x.size(), centers.rows(), "training sample state");
        for (Eigen::Index j = 0; j < m; ++j) {
            const double d2 = (x - centers.col(j)).squaredNorm();
            phi(static_cast<Eigen::Index>(k), j) = std::exp(-d2 / (2.0 * widths(j) * widths(j)));
        }
        phi(static_cast<Eigen::Index>(k), m) = 1.0;
    }
    return phi;
}

// k-means++ seeding.
Eigen::MatrixXd seed_centers(const Eigen::MatrixXd& points, Eigen::Index k, std::mt19937_64& rng) {
    const Eigen::Index n = points.cols();
    Eigen::MatrixXd centers(points.rows(), k);
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    centers.col(0) = points.col(pick(rng));
    Eigen::VectorXd d2 = (points.colwise() - centers.col(0)).colwise().squaredNorm().transpose();
    for (Eigen::Index c = 1; c < k; ++c) {
        const double total = d2.sum();
        Eigen::Index chosen = pick(rng);
        if (total > 0.0) {
            std::uniform_real_distribution<double> u(0.0, total);
            double target = u(rng);
            chosen = n - 1;
            for (Eigen::Index i = 0; i < n; ++i) {
                target -= d2(i);
                if (target <= 0.0 && d2(i) > 0.0) {
                    chosen = i;
                    break;
                }
            }
        }
        centers.col(c) = points.col(chosen);
        d2 = d2.cwiseMin((points.colwise() - centers.col(c)).colwise().squaredNorm().transpose());
    }
    return centers;
}

}  // namespace

RbfNetwork::RbfNetwork(Eigen::MatrixXd centers, Eigen::VectorXd widths, Eigen::MatrixXd weights)
    : centers_(std::move(centers)), widths_(std::move(widths)), weights_(std::move(weights)) {
    if (widths_.size() != centers_.cols()) {
        throw InputError("widths must have one entry per center column");
    }
    if (weights_.rows() != centers_.cols() + 1) {
        throw InputError("weights must have neurons + 1 rows");
    }
    for (Eigen::Index j = 0; j < widths_.size(); ++j) {
        if (!(widths_(j) > 0.0)) {
            throw InputError("widths must be strictly positive");
        }
    }
}

RbfNetwork RbfNetwork::zeros(Eigen::MatrixXd centers, double width, Eigen::Index output_dim) {
    const Eigen::Index m = centers.cols();
    return RbfNetwork(std::move(centers), Eigen::VectorXd::Constant(m, width), Eigen::MatrixXd::Zero(m + 1, output_dim));
}

void RbfNetwork::set_weights(Eigen::MatrixXd weights) {
    if (weights.rows() != weights_.rows() || weights.cols() != weights_.cols()) {
        throw InputError("set_weights: shape mismatch");
    }
    weights_ = std::move(weights);
}

Eigen::VectorXd basis(const RbfNetwork& net, const Eigen::VectorXd& x) {
    check_dim(x.size(), net.input_dim(), "basis input");
    const Eigen::Index m = net.neurons();
    Eigen::VectorXd phi(m + 1);
    for (Eigen::Index j = 0; j < m; ++j) {
        const double rho = net.widths()(j);
        phi(j) = std::exp(-(x - net.centers().col(j)).squaredNorm() / (2.0 * rho * rho));
    }
    phi(m) = 1.0;
    return phi;
}

Eigen::VectorXd predict(const RbfNetwork& net, const Eigen::VectorXd& x) {
    return net.weights().transpose() * basis(net, x);
}

Eigen::VectorXd estimation_error(const RbfNetwork& net, const TrainingSample& sample) {
    check_dim(sample.derivative.size(), net.output_dim(), "sample derivative");
    return predict(net, sample.state) - sample.derivative;
}

Eigen::MatrixXd kmeans(const Eigen::MatrixXd& points, const Eigen::MatrixXd& initial_centers, int max_iterations,
                       double* inertia) {
    const Eigen::Index n = points.cols();
    const Eigen::Index k = initial_centers.cols();
    Eigen::MatrixXd centers = initial_centers;
    std::vector<Eigen::Index> label(static_cast<std::size_t>(n), -1);
    double total = 0.0;
    for (int iter = 0; iter < max_iterations; ++iter) {
        bool changed = false;
        total = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (Eigen::Index c = 0; c < k; ++c) {
                const double d = (points.col(i) - centers.col(c)).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            total += best_d;
            if (label[static_cast<std::size_t>(i)] != best) {
                label[static_cast<std::size_t>(i)] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) {
            break;
        }
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(points.rows(), k);
        Eigen::VectorXi counts = Eigen::VectorXi::Zero(k);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto c = label[static_cast<std::size_t>(i)];
            sums.col(c) += points.col(i);
            ++counts(c);
        }
        for (Eigen::Index c = 0; c < k; ++c) {
            if (counts(c) == 0) {
                throw DegenerateDataError("k-means produced an empty cluster");
            }
            centers.col(c) = sums.col(c) / counts(c);
        }
        if (!changed) {
            break;
        }
    }
    if (inertia != nullptr) {
        *inertia = total;
    }
    return centers;
}

Eigen::MatrixXd fit_weights(const Eigen::MatrixXd& centers, const Eigen::VectorXd& widths,
                            std::span<const TrainingSample> dataset, double ridge) {
    if (dataset.empty()) {
        throw InsufficientDataError("fit_weights: empty dataset");
    }
    if (ridge < 0.0) {
        throw InputError("ridge must be non-negative");
    }
    const Eigen::Index out = dataset.front().derivative.size();
    const Eigen::Index rows = static_cast<Eigen::Index>(dataset.size());
    const Eigen::Index p = centers.cols() + 1;
    const Eigen::MatrixXd phi = basis_rows(centers, widths, dataset);
    Eigen::MatrixXd y(rows, out);
    for (Eigen::Index k = 0; k < rows; ++k) {
        check_dim(dataset[static_cast<std::size_t>(k)].derivative.size(), out, "training sample derivative");
        y.row(k) = dataset[static_cast<std::size_t>(k)].derivative.transpose();
    }
    if (ridge == 0.0) {
        return phi.completeOrthogonalDecomposition().solve(y);
    }
    // Augmented least squares: [phi; sqrt(l) I] W = [y; 0].
    Eigen::MatrixXd a(rows + p, p);
    a << phi, std::sqrt(ridge) * Eigen::MatrixXd::Identity(p, p);
    Eigen::MatrixXd b(rows + p, out);
    b << y, Eigen::MatrixXd::Zero(p, out);
    return a.completeOrthogonalDecomposition().solve(b);
}

RbfNetwork train_offline(std::span<const TrainingSample> dataset, const OfflineTrainingOptions& options) {
    if (options.neurons < 1) {
        throw InputError("train_offline: need at least one neuron");
    }
    if (!(options.width > 0.0)) {
        throw InputError("train_offline: width must be positive");
    }
    if (static_cast<Eigen::Index>(dataset.size()) < options.neurons) {
        throw InsufficientDataError("train_offline: dataset has " + std::to_string(dataset.size()) +
                                    " samples, fewer than " + std::to_string(options.neurons) + " neurons");
    }
    const Eigen::Index n = dataset.front().state.size();
    Eigen::MatrixXd points(n, static_cast<Eigen::Index>(dataset.size()));
    for (std::size_t k = 0; k < dataset.size(); ++k) {
        check_dim(dataset[k].state.size(), n, "training sample state");
        points.col(static_cast<Eigen::Index>(k)) = dataset[k].state;
    }
    if (options.initial_centers && (options.initial_centers->rows() != n ||
                                    options.initial_centers->cols() != options.neurons)) {
        throw InputError("train_offline: initial centers must be n x neurons");
    }

    std::mt19937_64 rng(options.seed);
    Eigen::MatrixXd best_centers;
    double best_inertia = std::numeric_limits<double>::infinity();
    int failures = 0;
    int completed = 0;
    const int restarts = options.initial_centers ? 1 : std::max(1, options.restarts);
    bool use_given = options.initial_centers.has_value();
    while (completed < restarts) {
        Eigen::MatrixXd init = use_given ? *options.initial_centers : seed_centers(points, options.neurons, rng);
        try {
            double inertia = 0.0;
            Eigen::MatrixXd c = kmeans(points, init, options.max_iterations, &inertia);
            if (inertia < best_inertia) {
                best_inertia = inertia;
                best_centers = std::move(c);
            }
            ++completed;
        } catch (const DegenerateDataError&) {
            use_given = false;
            if (++failures >= 10) {
                throw DegenerateDataError("train_offline: k-means failed to produce non-empty clusters after 10 reseeds");
            }
        }
    }

    Eigen::VectorXd widths = Eigen::VectorXd::Constant(options.neurons, options.width);
    Eigen::MatrixXd weights = fit_weights(best_centers, widths, dataset, options.ridge);
    return RbfNetwork(std::move(best_centers), std::move(widths), std::move(weights));
}

double rms_residual(const RbfNetwork& net, std::span<const TrainingSample> dataset) {
    if (dataset.empty()) {
        return 0.0;
    }
    double sum = 0.0;
    for (const auto& s : dataset) {
        sum += estimation_error(net, s).squaredNorm();
    }
    return std::sqrt(sum / static_cast<double>(dataset.size()));
}

Eigen::Index numerical_rank(const Eigen::MatrixXd& m, double tolerance) {
    if (m.size() == 0) {
        return 0;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const auto& s = svd.singularValues();
    if (s.size() == 0 || s(0) == 0.0) {
        return 0;
    }
    const double cutoff = tolerance * s(0);
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (s(i) > cutoff) {
            ++r;
        }
    }
    return r;
}

RecordedDataStore::RecordedDataStore(Eigen::Index basis_dim)
    : capacity_(basis_dim), basis_matrix_(basis_dim, 0) {}

bool RecordedDataStore::try_admit(const RbfNetwork& net, const TrainingSample& sample) {
    if (capacity_ != net.neurons() + 1) {
        throw InputError("recorded data store capacity does not match the network");
    }
    if (rank_ >= capacity_) {
        return false;
    }
    const Eigen::VectorXd phi = basis(net, sample.state);
    Eigen::MatrixXd candidate(capacity_, basis_matrix_.cols() + 1);
    candidate << basis_matrix_, phi;
    const Eigen::Index r = safeinfer::numerical_rank(candidate);
    if (r <= rank_) {
        return false;
    }
    basis_matrix_ = std::move(candidate);
    samples_.push_back(sample);
    rank_ = r;
    return true;
}

RbfNetwork update_online(const RbfNetwork& net, const RecordedDataStore& store, const TrainingSample& latest,
                         const LearningRates& rates, double dt) {
    if (!(dt > 0.0)) {
        throw InputError("update_online: dt must be positive");
    }
    const Eigen::VectorXd eps = estimation_error(net, latest);
    Eigen::MatrixXd step = rates.gamma1 * basis(net, latest.state) * eps.transpose();
    if (store.saturated()) {
        for (const auto& s : store.samples()) {
            step += rates.gamma2 * basis(net, s.state) * estimation_error(net, s).transpose();
        }
    }
    RbfNetwork next = net;
    if (step.isZero(0.0)) {
        return next;
    }
    next.set_weights(net.weights() - step * dt);
    return next;
}

}  // namespace safeinfer

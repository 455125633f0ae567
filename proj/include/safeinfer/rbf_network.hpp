#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace safeinfer {

/// Gaussian radial-basis network with a constant bias feature:
///   xdot_hat = W^T [exp(-|x - c_j|^2 / (2 rho_j^2))_{j=1..M}, 1]
/// centers is n x M, widths has M entries, weights is (M+1) x n_out.
class RbfNetwork {
public:
    RbfNetwork() = default;
    RbfNetwork(Eigen::MatrixXd centers, Eigen::VectorXd widths, Eigen::MatrixXd weights);

    /// Zero weights, shared width.
    static RbfNetwork zeros(Eigen::MatrixXd centers, double width, Eigen::Index output_dim);

    Eigen::Index input_dim() const { return centers_.rows(); }
    Eigen::Index output_dim() const { return weights_.cols(); }
    Eigen::Index neurons() const { return centers_.cols(); }

    const Eigen::MatrixXd& centers() const { return centers_; }
    const Eigen::VectorXd& widths() const { return widths_; }
    const Eigen::MatrixXd& weights() const { return weights_; }

    void set_weights(Eigen::MatrixXd weights);

private:
    Eigen::MatrixXd centers_;
    Eigen::VectorXd widths_;
    Eigen::MatrixXd weights_;
};

struct TrainingSample {
    Eigen::VectorXd state;
    Eigen::VectorXd derivative;
    double timestamp = 0.0;
};

Eigen::VectorXd basis(const RbfNetwork& net, const Eigen::VectorXd& x);
Eigen::VectorXd predict(const RbfNetwork& net, const Eigen::VectorXd& x);
Eigen::VectorXd estimation_error(const RbfNetwork& net, const TrainingSample& sample);

struct OfflineTrainingOptions {
    Eigen::Index neurons = 8;
    double width = 0.85;
    double ridge = 0.0;
    std::uint64_t seed = 0;
    int restarts = 5;
    int max_iterations = 200;
    /// Start every restart from these centers (n x M) instead of k-means++ seeding.
    std::optional<Eigen::MatrixXd> initial_centers;
};

/// k-means centers (best of `restarts` by inertia) followed by ridge least
/// squares on the weights. Throws InsufficientDataError when the dataset has
/// fewer samples than neurons and DegenerateDataError when k-means keeps
/// producing empty clusters.
RbfNetwork train_offline(std::span<const TrainingSample> dataset, const OfflineTrainingOptions& options);

/// Ridge-regularized least-squares output weights for fixed centers/widths.
/// The ridge term applies to every row, including the bias row.
Eigen::MatrixXd fit_weights(const Eigen::MatrixXd& centers, const Eigen::VectorXd& widths,
                            std::span<const TrainingSample> dataset, double ridge);

/// Lloyd's k-means. Returns the n x k centers; throws DegenerateDataError on
/// an empty cluster.
Eigen::MatrixXd kmeans(const Eigen::MatrixXd& points, const Eigen::MatrixXd& initial_centers,
                       int max_iterations, double* inertia = nullptr);

double rms_residual(const RbfNetwork& net, std::span<const TrainingSample> dataset);

/// Recorded data for concurrent learning: samples are admitted only while
/// they raise the numerical rank of the stacked basis vectors.
class RecordedDataStore {
public:
    static constexpr double kRankTolerance = 1e-8;

    explicit RecordedDataStore(Eigen::Index basis_dim = 0);

    bool try_admit(const RbfNetwork& net, const TrainingSample& sample);

    Eigen::Index capacity() const { return capacity_; }
    Eigen::Index numerical_rank() const { return rank_; }
    bool saturated() const { return rank_ >= capacity_; }
    const std::vector<TrainingSample>& samples() const { return samples_; }
    const Eigen::MatrixXd& basis_matrix() const { return basis_matrix_; }

private:
    Eigen::Index capacity_ = 0;
    Eigen::Index rank_ = 0;
    std::vector<TrainingSample> samples_;
    Eigen::MatrixXd basis_matrix_;
};

Eigen::Index numerical_rank(const Eigen::MatrixXd& m, double tolerance = RecordedDataStore::kRankTolerance);

struct LearningRates {
    double gamma1 = 1.0;
    double gamma2 = 1.0;
};

/// One step of the offline-online weight adaptation. Uses only the latest
/// sample until the store reaches full rank, then adds the recorded-data
/// term. Stored residuals are evaluated with the current weights. Centers and
/// widths are carried over unchanged.
RbfNetwork update_online(const RbfNetwork& net, const RecordedDataStore& store, const TrainingSample& latest,
                         const LearningRates& rates, double dt);

}  // namespace safeinfer

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "safeinfer/conformal.hpp"
#include "safeinfer/qp_solver.hpp"
#include "safeinfer/rbf_network.hpp"
#include "safeinfer/safety_filter.hpp"
#include "safeinfer/state.hpp"

namespace safeinfer {

enum class PolicyKind { pursue_ego, approach_ego_avoid_other, waypoint, parametric };

/// Ground-truth behaviour of a single-integrator agent. Hidden from the
/// controller; only positions are observed.
///   pursue_ego:               v = sat(gain (p_ego - x))
///   approach_ego_avoid_other: v = sat(gain (p_ego - x) + repulsion (x - x_other) / |x - x_other|^2)
///   waypoint:                 v = sat(gain (waypoint - x))
///   parametric:               v = sat(gain (p_ego - x) + drift)
/// where sat scales the vector back to speed_cap when it is longer.
struct AgentPolicy {
    PolicyKind kind = PolicyKind::pursue_ego;
    double speed_cap = 0.5;
    double gain = 1.0;
    double repulsion = 0.0;
    std::size_t other = 0;
    Eigen::Vector2d waypoint = Eigen::Vector2d::Zero();
    Eigen::Vector2d drift = Eigen::Vector2d::Zero();
};

Eigen::Vector2d agent_velocity(const AgentPolicy& policy, const WorldState& world, std::size_t self);

/// Euler step with the policy velocity held over dt (exact for single integrators).
Eigen::Vector2d step_agent(const AgentPolicy& policy, const WorldState& world, std::size_t self, double dt);

/// RK4 over [0, dt] with constant (v, omega); theta is rewrapped.
EgoState step_ego(const EgoState& ego, const Eigen::Vector2d& u, double dt);

Eigen::Vector2d finite_difference(const Eigen::Vector2d& previous, const Eigen::Vector2d& current, double dt);

enum class ReferenceKind { circle, sine, spiral, waypoints };

/// Parametric reference trajectory for the ego.
///   circle:    center + radius (cos, sin)(phase + rate t)
///   sine:      origin + speed t d + amplitude sin(frequency t) n,  d = (cos heading, sin heading)
///   spiral:    center + (radius + growth t)(cos, sin)(phase + rate t)
///   waypoints: polyline traversed at `speed`, holding the last point
struct Reference {
    ReferenceKind kind = ReferenceKind::circle;
    Eigen::Vector2d center = Eigen::Vector2d::Zero();
    double radius = 1.0;
    double rate = 0.2;
    double phase = 0.0;
    double speed = 0.5;
    double heading = 0.0;
    double amplitude = 1.0;
    double frequency = 0.5;
    double growth = 0.05;
    std::vector<Eigen::Vector2d> points;

    Eigen::Vector2d point(double t) const;
    Eigen::Vector2d velocity(double t) const;
};

struct TrackerGains {
    double k_v = 1.0;
    double k_omega = 2.0;
};

/// v = k_v |e| cos(a) + v_ff,  omega = k_omega a, both clamped to bounds,
/// where e = ref_point - p, a is the wrapped bearing error and v_ff is the
/// reference velocity projected on the heading.
Eigen::Vector2d reference_tracker(const EgoState& ego, const Eigen::Vector2d& ref_point,
                                  const Eigen::Vector2d& ref_velocity, const TrackerGains& gains,
                                  const ControlBounds& bounds);

struct StartBox {
    Eigen::Vector2d min = Eigen::Vector2d::Zero();
    Eigen::Vector2d max = Eigen::Vector2d::Zero();
};

struct AgentConfig {
    Eigen::Vector2d initial = Eigen::Vector2d::Zero();
    AgentPolicy policy;
    double r_max = 1.0;
    double c_F = 0.0;
    StartBox start_box;
};

struct NetworkSettings {
    Eigen::Index neurons = 8;
    double width = 0.85;
    double ridge = 1e-6;
    std::uint64_t seed = 0;
};

struct ConformalSettings {
    std::size_t window = 30;
    double alpha = 0.01;
    double alpha0 = 0.01;
    double gamma = 0.002;
};

struct LipschitzSettings {
    bool automatic = true;
    double max_separation = 4.0;
    int samples = 4000;
    std::uint64_t seed = 7;
};

struct CollectionSettings {
    std::vector<Reference> references;
    /// Observed states per collection episode (one label fewer).
    std::size_t horizon = 1000;
};

enum class InferenceMode { combined, offline_only, online_only };

std::string to_string(InferenceMode mode);
InferenceMode inference_mode_from_string(const std::string& name);
std::string to_string(PolicyKind kind);
PolicyKind policy_kind_from_string(const std::string& name);
std::string to_string(ReferenceKind kind);
ReferenceKind reference_kind_from_string(const std::string& name);

struct EpisodeConfig {
    double dt = 0.01;
    /// Control steps per episode.
    std::size_t horizon = 1000;
    std::uint64_t seed = 0;
    Reference reference;
    TrackerGains tracker;
    EgoState ego_initial;
    StartBox ego_start_box;
    double ego_start_theta_spread = 0.0;
    std::vector<AgentConfig> agents;
    NetworkSettings network;
    LearningRates learning;
    ConformalSettings conformal;
    /// d_safe, lookahead, kappa, Lipschitz constants and control bounds are
    /// read from here; dt, delta_e, delta_i and c_F are derived by resolve().
    CbfConfig cbf;
    LipschitzSettings lipschitz;
    /// Centre-distance threshold defining a collision.
    double collision_radius = 1.0;
    InferenceMode inference = InferenceMode::combined;
    CollectionSettings collection;

    void validate() const;
};

/// Fills the derived CbfConfig fields: dt, delta_e = u_max dt,
/// delta_i = speed_cap dt, c_F, and the Lipschitz constants when automatic.
EpisodeConfig resolve(EpisodeConfig cfg);

/// Copy of cfg whose ego and agent starts are drawn uniformly from the
/// configured start boxes.
EpisodeConfig randomized_start(const EpisodeConfig& cfg, std::uint64_t seed);

WorldState initial_world(const EpisodeConfig& cfg);

struct AgentTrace {
    Eigen::Vector2d position = Eigen::Vector2d::Zero();
    Eigen::Vector2d xdot_hat = Eigen::Vector2d::Zero();
    Eigen::Vector2d xdot = Eigen::Vector2d::Zero();
    double alpha = 0.0;
    double q = 0.0;
    double eta = 0.0;
    int err = 0;
    double coverage = 1.0;
    double h = 0.0;
    double phi = 0.0;
    double m_worst = 0.0;
    double residual = 0.0;
    double distance = 0.0;
    double est_err = 0.0;
};

struct TraceRecord {
    std::size_t step = 0;
    double t = 0.0;
    EgoState ego;
    Eigen::Vector2d u = Eigen::Vector2d::Zero();
    Eigen::Vector2d u_ref = Eigen::Vector2d::Zero();
    bool feasible = true;
    std::vector<int> active_set;
    std::vector<AgentTrace> agents;
};

struct AgentSummary {
    double min_distance = 0.0;
    double coverage = 1.0;
    double mean_est_err = 0.0;
    std::size_t collision_steps = 0;
};

struct EpisodeSummary {
    std::size_t steps = 0;
    std::size_t infeasible_steps = 0;
    bool collision = false;
    double min_distance = 0.0;
    std::vector<AgentSummary> agents;
};

struct EpisodeResult {
    std::vector<TraceRecord> trace;
    std::vector<AcpState> acp;
    std::vector<RbfNetwork> networks;
    WorldState final_world;
    EpisodeSummary summary;
};

/// Closed loop: predict, quantify, filter, apply under ZOH, observe, learn.
/// `cfg` must be resolved. One network per agent; in online_only mode the
/// weights are zeroed and in offline_only mode they are frozen.
EpisodeResult run_episode(const EpisodeConfig& cfg, std::span<const RbfNetwork> networks);

/// Filtered control for the current world. Infeasible problems fall back to
/// stopping and turning away from the nearest agent.
struct ControlDecision {
    Eigen::Vector2d u = Eigen::Vector2d::Zero();
    Eigen::Vector2d u_ref = Eigen::Vector2d::Zero();
    std::vector<CbfRow> rows;
    QpSolution solution;
    bool feasible = true;
};

ControlDecision decide_control(const WorldState& world, std::span<const PredictionBox> boxes, const EpisodeConfig& cfg);

Eigen::Vector2d fallback_control(const WorldState& world, const EpisodeConfig& cfg);

struct DatasetRow {
    double t = 0.0;
    Eigen::VectorXd state;
    std::vector<Eigen::Vector2d> derivatives;
};

/// Runs one collection episode per configured reference with a barrier
/// filter that uses the constant box (0, speed_cap) in place of inference.
/// Agent starts are randomized per episode from the start boxes.
std::vector<DatasetRow> collect_offline(const EpisodeConfig& cfg);

std::vector<TrainingSample> agent_samples(std::span<const DatasetRow> rows, std::size_t agent);

EpisodeSummary summarize(const EpisodeConfig& cfg, std::span<const TraceRecord> trace, const WorldState& final_world);

}  // namespace safeinfer

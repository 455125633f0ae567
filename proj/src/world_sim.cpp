#include "safeinfer/world_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "safeinfer/errors.hpp"

namespace safeinfer {

namespace {

Eigen::Vector2d saturate(const Eigen::Vector2d& v, double cap) {
    const double n = v.norm();
    if (n > cap && n > 0.0) {
        return v * (cap / n);
    }
    return v;
}

Eigen::Vector3d unicycle_rate(const Eigen::Vector3d& s, const Eigen::Vector2d& u) {
    return {u(0) * std::cos(s(2)), u(0) * std::sin(s(2)), u(1)};
}

Eigen::Vector2d uniform_in(const StartBox& box, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double a = u(rng);
    const double b = u(rng);
    return {box.min(0) + a * (box.max(0) - box.min(0)), box.min(1) + b * (box.max(1) - box.min(1))};
}

}  // namespace

Eigen::Vector2d agent_velocity(const AgentPolicy& policy, const WorldState& world, std::size_t self) {
    const Eigen::Vector2d x = world.agents.at(self);
    const Eigen::Vector2d to_ego = world.ego.position() - x;
    Eigen::Vector2d v = Eigen::Vector2d::Zero();
    switch (policy.kind) {
        case PolicyKind::pursue_ego:
            v = policy.gain * to_ego;
            break;
        case PolicyKind::approach_ego_avoid_other: {
            v = policy.gain * to_ego;
            const Eigen::Vector2d away = x - world.agents.at(policy.other);
            const double d2 = away.squaredNorm();
            if (d2 > 1e-12) {
                v += policy.repulsion * away / d2;
            }
            break;
        }
        case PolicyKind::waypoint:
            v = policy.gain * (policy.waypoint - x);
            break;
        case PolicyKind::parametric:
            v = policy.gain * to_ego + policy.drift;
            break;
    }
    return saturate(v, policy.speed_cap);
}

Eigen::Vector2d step_agent(const AgentPolicy& policy, const WorldState& world, std::size_t self, double dt) {
    return world.agents.at(self) + agent_velocity(policy, world, self) * dt;
}

EgoState step_ego(const EgoState& ego, const Eigen::Vector2d& u, double dt) {
    // Substeps keep the heading change per RK4 stage small, so long steps stay on the exact arc.
    const int n = std::max(1, static_cast<int>(std::ceil(std::abs(u(1)) * dt / 0.03 - 1e-9)));
    const double h = dt / n;
    Eigen::Vector3d s(ego.px, ego.py, ego.theta);
    for (int k = 0; k < n; ++k) {
        const Eigen::Vector3d k1 = unicycle_rate(s, u);
        const Eigen::Vector3d k2 = unicycle_rate(s + 0.5 * h * k1, u);
        const Eigen::Vector3d k3 = unicycle_rate(s + 0.5 * h * k2, u);
        const Eigen::Vector3d k4 = unicycle_rate(s + h * k3, u);
        s += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (n == 1) {
        return {s(0), s(1), wrap_angle(s(2))};
    }
    return {s(0), s(1), wrap_angle(ego.theta + dt * u(1))};
}

Eigen::Vector2d finite_difference(const Eigen::Vector2d& previous, const Eigen::Vector2d& current, double dt) {
    if (!(dt > 0.0)) {
        throw InputError("finite_difference: dt must be positive");
    }
    return (current - previous) / dt;
}

Eigen::Vector2d Reference::point(double t) const {
    switch (kind) {
        case ReferenceKind::circle: {
            const double a = phase + rate * t;
            return center + radius * Eigen::Vector2d(std::cos(a), std::sin(a));
        }
        case ReferenceKind::sine: {
            const Eigen::Vector2d d(std::cos(heading), std::sin(heading));
            const Eigen::Vector2d n(-d(1), d(0));
            return center + speed * t * d + amplitude * std::sin(frequency * t) * n;
        }
        case ReferenceKind::spiral: {
            const double a = phase + rate * t;
            return center + (radius + growth * t) * Eigen::Vector2d(std::cos(a), std::sin(a));
        }
        case ReferenceKind::waypoints: {
            if (points.empty()) {
                return center;
            }
            double remaining = speed * t;
            for (std::size_t i = 0; i + 1 < points.size(); ++i) {
                const Eigen::Vector2d seg = points[i + 1] - points[i];
                const double len = seg.norm();
                if (remaining <= len && len > 0.0) {
                    return points[i] + seg * (remaining / len);
                }
                remaining -= len;
            }
            return points.back();
        }
    }
    return center;
}

Eigen::Vector2d Reference::velocity(double t) const {
    switch (kind) {
        case ReferenceKind::circle: {
            const double a = phase + rate * t;
            return radius * rate * Eigen::Vector2d(-std::sin(a), std::cos(a));
        }
        case ReferenceKind::sine: {
            const Eigen::Vector2d d(std::cos(heading), std::sin(heading));
            const Eigen::Vector2d n(-d(1), d(0));
            return speed * d + amplitude * frequency * std::cos(frequency * t) * n;
        }
        case ReferenceKind::spiral: {
            const double a = phase + rate * t;
            const Eigen::Vector2d radial(std::cos(a), std::sin(a));
            const Eigen::Vector2d tangent(-std::sin(a), std::cos(a));
            return growth * radial + (radius + growth * t) * rate * tangent;
        }
        case ReferenceKind::waypoints: {
            double remaining = speed * t;
            for (std::size_t i = 0; i + 1 < points.size(); ++i) {
                const Eigen::Vector2d seg = points[i + 1] - points[i];
                const double len = seg.norm();
                if (remaining < len && len > 0.0) {
                    return seg * (speed / len);
                }
                remaining -= len;
            }
            return Eigen::Vector2d::Zero();
        }
    }
    return Eigen::Vector2d::Zero();
}

Eigen::Vector2d reference_tracker(const EgoState& ego, const Eigen::Vector2d& ref_point,
                                  const Eigen::Vector2d& ref_velocity, const TrackerGains& gains,
                                  const ControlBounds& bounds) {
    const Eigen::Vector2d e = ref_point - ego.position();
    const double dist = e.norm();
    const double bearing = dist > 1e-9 ? wrap_angle(std::atan2(e(1), e(0)) - ego.theta) : 0.0;
    const double v_ff = ref_velocity.dot(ego.heading());
    const double v = gains.k_v * dist * std::cos(bearing) + v_ff;
    const double w = gains.k_omega * bearing;
    return bounds.clamp(Eigen::Vector2d(v, w));
}

std::string to_string(InferenceMode mode) {
    switch (mode) {
        case InferenceMode::combined: return "combined";
        case InferenceMode::offline_only: return "offline-only";
        case InferenceMode::online_only: return "online-only";
    }
    return "combined";
}

InferenceMode inference_mode_from_string(const std::string& name) {
    if (name == "combined") return InferenceMode::combined;
    if (name == "offline-only") return InferenceMode::offline_only;
    if (name == "online-only") return InferenceMode::online_only;
    throw InputError("unknown inference mode '" + name + "'");
}

std::string to_string(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::pursue_ego: return "pursue_ego";
        case PolicyKind::approach_ego_avoid_other: return "approach_ego_avoid_other";
        case PolicyKind::waypoint: return "waypoint";
        case PolicyKind::parametric: return "parametric";
    }
    return "pursue_ego";
}

PolicyKind policy_kind_from_string(const std::string& name) {
    if (name == "pursue_ego") return PolicyKind::pursue_ego;
    if (name == "approach_ego_avoid_other") return PolicyKind::approach_ego_avoid_other;
    if (name == "waypoint") return PolicyKind::waypoint;
    if (name == "parametric") return PolicyKind::parametric;
    throw InputError("unknown policy kind '" + name + "'");
}

std::string to_string(ReferenceKind kind) {
    switch (kind) {
        case ReferenceKind::circle: return "circle";
        case ReferenceKind::sine: return "sine";
        case ReferenceKind::spiral: return "spiral";
        case ReferenceKind::waypoints: return "waypoints";
    }
    return "circle";
}

ReferenceKind reference_kind_from_string(const std::string& name) {
    if (name == "circle") return ReferenceKind::circle;
    if (name == "sine") return ReferenceKind::sine;
    if (name == "spiral") return ReferenceKind::spiral;
    if (name == "waypoints") return ReferenceKind::waypoints;
    throw InputError("unknown reference kind '" + name + "'");
}

void EpisodeConfig::validate() const {
    if (!(dt > 0.0)) {
        throw InputError("config: dt must be positive");
    }
    if (horizon < 1) {
        throw InputError("config: horizon must be at least 1");
    }
    for (std::size_t i = 0; i < agents.size(); ++i) {
        const auto& p = agents[i].policy;
        if (!(p.speed_cap >= 0.0)) {
            throw InputError("config: agent speed cap must be non-negative");
        }
        if (p.kind == PolicyKind::approach_ego_avoid_other && (p.other >= agents.size() || p.other == i)) {
            throw InputError("config: approach_ego_avoid_other needs a valid other agent index");
        }
        if (agents[i].r_max < 0.0 || agents[i].c_F < 0.0) {
            throw InputError("config: r_max and c_F must be non-negative");
        }
    }
    if (network.neurons < 1 || !(network.width > 0.0) || network.ridge < 0.0) {
        throw InputError("config: invalid network settings");
    }
    if (!(learning.gamma1 > 0.0) || !(learning.gamma2 > 0.0)) {
        throw InputError("config: learning rates must be positive");
    }
    if (conformal.window < 1) {
        throw InputError("config: calibration window must hold at least one sample");
    }
    AcpState probe{conformal.alpha0, conformal.alpha, conformal.gamma, 0.0, {}};
    probe.validate();
    if (!(cbf.d_safe > 0.0) || !(cbf.kappa > 0.0) || cbf.lookahead < 0.0) {
        throw InputError("config: invalid barrier settings");
    }
    if (cbf.u_bounds.v_min > cbf.u_bounds.v_max || cbf.u_bounds.omega_max < 0.0) {
        throw InputError("config: empty control box");
    }
}

EpisodeConfig resolve(EpisodeConfig cfg) {
    cfg.validate();
    cfg.cbf.dt = cfg.dt;
    cfg.cbf.delta_e = control_norm_bound(cfg.cbf.u_bounds) * cfg.dt;
    cfg.cbf.delta_i.clear();
    cfg.cbf.c_F.clear();
    for (const auto& a : cfg.agents) {
        cfg.cbf.delta_i.push_back(a.policy.speed_cap * cfg.dt);
        cfg.cbf.c_F.push_back(a.c_F);
    }
    if (cfg.lipschitz.automatic) {
        const auto est = estimate_lipschitz(cfg.cbf, cfg.lipschitz.max_separation, cfg.lipschitz.samples,
                                            cfg.lipschitz.seed);
        cfg.cbf.c_f = est.c_f;
        cfg.cbf.c_g = est.c_g;
        cfg.cbf.c_beta = est.c_beta;
    }
    cfg.cbf.validate(cfg.agents.size());
    return cfg;
}

EpisodeConfig randomized_start(const EpisodeConfig& cfg, std::uint64_t seed) {
    EpisodeConfig out = cfg;
    std::mt19937_64 rng(seed);
    const Eigen::Vector2d p = uniform_in(cfg.ego_start_box, rng);
    std::uniform_real_distribution<double> spread(-1.0, 1.0);
    const double dtheta = cfg.ego_start_theta_spread * spread(rng);
    out.ego_initial = EgoState{p(0), p(1), wrap_angle(cfg.ego_initial.theta + dtheta)};
    for (auto& a : out.agents) {
        a.initial = uniform_in(a.start_box, rng);
    }
    out.seed = seed;
    return out;
}

WorldState initial_world(const EpisodeConfig& cfg) {
    WorldState w;
    w.t = 0.0;
    w.ego = cfg.ego_initial;
    w.ego.theta = wrap_angle(w.ego.theta);
    for (const auto& a : cfg.agents) {
        w.agents.push_back(a.initial);
    }
    return w;
}

Eigen::Vector2d fallback_control(const WorldState& world, const EpisodeConfig& cfg) {
    const auto& bounds = cfg.cbf.u_bounds;
    if (world.agents.empty()) {
        return bounds.clamp(Eigen::Vector2d::Zero());
    }
    std::size_t nearest = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < world.agents.size(); ++i) {
        const double d = (world.agents[i] - world.ego.position()).norm();
        if (d < best) {
            best = d;
            nearest = i;
        }
    }
    const Eigen::Vector2d away = world.ego.position() - world.agents[nearest];
    const double bearing = wrap_angle(std::atan2(away(1), away(0)) - world.ego.theta);
    const double w = bearing >= 0.0 ? bounds.omega_max : -bounds.omega_max;
    return bounds.clamp(Eigen::Vector2d(0.0, w));
}

ControlDecision decide_control(const WorldState& world, std::span<const PredictionBox> boxes,
                               const EpisodeConfig& cfg) {
    ControlDecision d;
    d.u_ref = reference_tracker(world.ego, cfg.reference.point(world.t), cfg.reference.velocity(world.t),
                                cfg.tracker, cfg.cbf.u_bounds);
    d.rows = build_cbf_rows(world, boxes, cfg.cbf);
    const QpProblem qp = assemble_qp(d.rows, cfg.cbf, d.u_ref);
    d.solution = solve(qp);
    if (d.solution.status == QpStatus::optimal) {
        d.u = d.solution.u;
        d.feasible = true;
    } else {
        d.u = fallback_control(world, cfg);
        d.feasible = false;
    }
    return d;
}

namespace {

WorldState advance(const WorldState& world, const EpisodeConfig& cfg, const Eigen::Vector2d& u) {
    WorldState next;
    next.t = world.t + cfg.dt;
    next.ego = step_ego(world.ego, u, cfg.dt);
    next.agents.reserve(world.agents.size());
    for (std::size_t i = 0; i < world.agents.size(); ++i) {
        next.agents.push_back(step_agent(cfg.agents[i].policy, world, i, cfg.dt));
    }
    return next;
}

}  // namespace

EpisodeResult run_episode(const EpisodeConfig& cfg, std::span<const RbfNetwork> networks) {
    const std::size_t n_agents = cfg.agents.size();
    if (networks.size() != n_agents) {
        throw InputError("run_episode: need one network per agent");
    }
    cfg.cbf.validate(n_agents);

    WorldState world = initial_world(cfg);
    const Eigen::Index state_dim = world.state_dim();

    std::vector<RbfNetwork> nets(networks.begin(), networks.end());
    std::vector<RecordedDataStore> stores;
    std::vector<CalibrationWindow> windows;
    std::vector<AcpState> acp;
    for (std::size_t i = 0; i < n_agents; ++i) {
        if (nets[i].input_dim() != state_dim || nets[i].output_dim() != 2) {
            throw InputError("run_episode: network " + std::to_string(i + 1) + " has dimensions " +
                             std::to_string(nets[i].input_dim()) + "->" + std::to_string(nets[i].output_dim()) +
                             ", expected " + std::to_string(state_dim) + "->2");
        }
        if (cfg.inference == InferenceMode::online_only) {
            nets[i].set_weights(Eigen::MatrixXd::Zero(nets[i].weights().rows(), nets[i].weights().cols()));
        }
        stores.emplace_back(nets[i].neurons() + 1);
        windows.emplace_back(cfg.conformal.window);
        AcpState s{cfg.conformal.alpha0, cfg.conformal.alpha, cfg.conformal.gamma, cfg.agents[i].r_max, {}};
        s.validate();
        acp.push_back(std::move(s));
    }

    EpisodeResult result;
    result.trace.reserve(cfg.horizon);
    std::vector<PredictionBox> boxes(n_agents);
    std::vector<int> misses(n_agents, 0);

    for (std::size_t k = 0; k < cfg.horizon; ++k) {
        const Eigen::VectorXd x_k = world.stacked();
        for (std::size_t i = 0; i < n_agents; ++i) {
            boxes[i].center = predict(nets[i], x_k);
            boxes[i].radius = windows[i].empty()
                                  ? acp[i].r_max
                                  : quantile_width(acp[i].alpha_t, scores(nets[i], windows[i]), acp[i].r_max);
        }

        const ControlDecision decision = decide_control(world, boxes, cfg);
        const QpProblem applied = assemble_qp(decision.rows, cfg.cbf, decision.u_ref);

        TraceRecord rec;
        rec.step = k;
        rec.t = world.t;
        rec.ego = world.ego;
        rec.u = decision.u;
        rec.u_ref = decision.u_ref;
        rec.feasible = decision.feasible;
        rec.active_set = decision.solution.active_set;
        rec.agents.resize(n_agents);

        const WorldState next = advance(world, cfg, decision.u);

        for (std::size_t i = 0; i < n_agents; ++i) {
            const Eigen::Vector2d xdot = finite_difference(world.agents[i], next.agents[i], cfg.dt);
            const int err = covered(boxes[i], xdot);
            misses[i] += err;

            AgentTrace& at = rec.agents[i];
            at.position = world.agents[i];
            at.xdot_hat = boxes[i].center;
            at.xdot = xdot;
            at.alpha = acp[i].alpha_t;
            at.q = boxes[i].radius;
            at.eta = decision.rows[i].eta;
            at.err = err;
            at.coverage = 1.0 - static_cast<double>(misses[i]) / static_cast<double>(k + 1);
            at.h = decision.rows[i].h;
            at.phi = decision.rows[i].phi;
            at.m_worst = decision.rows[i].m_worst;
            at.residual = applied.rows[i].a.dot(decision.u) - applied.rows[i].b;
            at.distance = (world.agents[i] - world.ego.position()).norm();
            at.est_err = (boxes[i].center - xdot).lpNorm<Eigen::Infinity>();

            const TrainingSample sample{x_k, xdot, world.t};
            if (cfg.inference != InferenceMode::offline_only) {
                stores[i].try_admit(nets[i], sample);
                nets[i] = update_online(nets[i], stores[i], sample, cfg.learning, cfg.dt);
            }
            windows[i].push(x_k, xdot);
            acp[i] = update_alpha(std::move(acp[i]), err);
        }
        result.trace.push_back(std::move(rec));
        world = next;
    }

    result.acp = std::move(acp);
    result.networks = std::move(nets);
    result.final_world = world;
    result.summary = summarize(cfg, result.trace, world);
    return result;
}

EpisodeSummary summarize(const EpisodeConfig& cfg, std::span<const TraceRecord> trace, const WorldState& final_world) {
    EpisodeSummary s;
    s.steps = trace.size();
    const std::size_t n_agents = cfg.agents.size();
    s.agents.resize(n_agents);
    s.min_distance = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n_agents; ++i) {
        auto& a = s.agents[i];
        a.min_distance = std::numeric_limits<double>::infinity();
        double err_sum = 0.0;
        std::size_t hits = 0;
        for (const auto& rec : trace) {
            const auto& at = rec.agents[i];
            a.min_distance = std::min(a.min_distance, at.distance);
            err_sum += at.est_err;
            hits += at.err == 0 ? 1 : 0;
            if (at.distance < cfg.collision_radius) {
                ++a.collision_steps;
            }
        }
        if (i < final_world.agents.size()) {
            const double d = (final_world.agents[i] - final_world.ego.position()).norm();
            a.min_distance = std::min(a.min_distance, d);
            if (d < cfg.collision_radius) {
                ++a.collision_steps;
            }
        }
        if (!trace.empty()) {
            a.mean_est_err = err_sum / static_cast<double>(trace.size());
            a.coverage = static_cast<double>(hits) / static_cast<double>(trace.size());
        }
        s.min_distance = std::min(s.min_distance, a.min_distance);
        s.collision = s.collision || a.collision_steps > 0;
    }
    for (const auto& rec : trace) {
        s.infeasible_steps += rec.feasible ? 0 : 1;
    }
    return s;
}

std::vector<DatasetRow> collect_offline(const EpisodeConfig& cfg) {
    cfg.cbf.validate(cfg.agents.size());
    std::vector<DatasetRow> rows;
    const auto& refs = cfg.collection.references;
    for (std::size_t e = 0; e < refs.size(); ++e) {
        EpisodeConfig ep = randomized_start(cfg, cfg.seed * 7919 + 1000 + e);
        ep.reference = refs[e];
        WorldState world = initial_world(ep);
        std::vector<PredictionBox> boxes;
        for (const auto& a : ep.agents) {
            boxes.push_back(PredictionBox{Eigen::Vector2d::Zero(), a.policy.speed_cap});
        }
        for (std::size_t k = 0; k + 1 < cfg.collection.horizon; ++k) {
            const ControlDecision d = decide_control(world, boxes, ep);
            const WorldState next = advance(world, ep, d.u);
            DatasetRow row;
            row.t = world.t;
            row.state = world.stacked();
            for (std::size_t i = 0; i < world.agents.size(); ++i) {
                row.derivatives.push_back(finite_difference(world.agents[i], next.agents[i], ep.dt));
            }
            rows.push_back(std::move(row));
            world = next;
        }
    }
    return rows;
}

std::vector<TrainingSample> agent_samples(std::span<const DatasetRow> rows, std::size_t agent) {
    std::vector<TrainingSample> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
        if (agent >= r.derivatives.size()) {
            throw InputError("agent_samples: agent index out of range");
        }
        out.push_back(TrainingSample{r.state, r.derivatives[agent], r.t});
    }
    return out;
}

}  // namespace safeinfer

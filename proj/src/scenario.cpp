#include "safeinfer/scenario.hpp"

#include <numbers>

namespace safeinfer {

EpisodeConfig case_study_config() {
    EpisodeConfig cfg;
    cfg.dt = 0.01;
    cfg.horizon = 5000;
    cfg.seed = 1;

    cfg.reference.kind = ReferenceKind::circle;
    cfg.reference.center = {0.0, 0.0};
    cfg.reference.radius = 4.0;
    cfg.reference.rate = 0.2;
    cfg.reference.phase = 0.0;
    cfg.tracker = {1.0, 2.0};

    cfg.ego_initial = {4.0, 0.0, std::numbers::pi / 2};
    cfg.ego_start_box = {{3.5, -0.5}, {4.5, 0.5}};
    cfg.ego_start_theta_spread = 0.3;

    AgentConfig a1;
    a1.initial = {-4.0, 3.0};
    a1.policy.kind = PolicyKind::pursue_ego;
    a1.policy.speed_cap = 0.4;
    a1.policy.gain = 0.5;
    a1.r_max = 0.4;
    a1.c_F = 0.5;
    a1.start_box = {{-5.0, 2.0}, {-3.0, 4.0}};

    AgentConfig a2;
    a2.initial = {-4.0, -3.0};
    a2.policy.kind = PolicyKind::approach_ego_avoid_other;
    a2.policy.speed_cap = 0.4;
    a2.policy.gain = 0.5;
    a2.policy.repulsion = 1.0;
    a2.policy.other = 0;
    a2.r_max = 0.4;
    a2.c_F = 1.0;
    a2.start_box = {{-5.0, -4.0}, {-3.0, -2.0}};
    cfg.agents = {a1, a2};

    cfg.network = {8, 0.85, 1e-6, 3};
    cfg.learning = {2.0, 0.5};
    cfg.conformal = {30, 0.01, 0.01, 0.002};

    cfg.cbf.d_safe = 1.3;
    cfg.cbf.lookahead = 0.3;
    cfg.cbf.kappa = 1.0;
    cfg.cbf.u_bounds = {-1.0, 1.5, 3.0};
    cfg.lipschitz = {true, 4.0, 4000, 7};
    // Collisions are scored against the barrier distance itself.
    cfg.collision_radius = cfg.cbf.d_safe;

    Reference circle;
    circle.kind = ReferenceKind::circle;
    circle.radius = 3.0;
    circle.rate = 0.25;
    Reference sine;
    sine.kind = ReferenceKind::sine;
    sine.center = {-6.0, 0.0};
    sine.speed = 0.6;
    sine.amplitude = 2.0;
    sine.frequency = 0.4;
    Reference spiral;
    spiral.kind = ReferenceKind::spiral;
    spiral.radius = 1.5;
    spiral.rate = 0.3;
    spiral.growth = 0.15;
    cfg.collection.references = {circle, sine, spiral};
    cfg.collection.horizon = 2000;
    return cfg;
}

EpisodeConfig novel_behavior_config() {
    EpisodeConfig cfg = case_study_config();
    cfg.agents[0].policy.speed_cap = 0.5;
    cfg.agents[0].policy.gain = 0.8;
    cfg.agents[0].r_max = 0.5;
    cfg.agents[1].policy.repulsion = 2.0;
    cfg.agents[1].policy.speed_cap = 0.5;
    cfg.agents[1].r_max = 0.5;
    return cfg;
}

}  // namespace safeinfer

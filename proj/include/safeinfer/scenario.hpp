#pragma once

#include "safeinfer/world_sim.hpp"

namespace safeinfer {

/// Ego on a circular reference with two reactive agents: agent 1 pursues the
/// ego, agent 2 approaches the ego while keeping away from agent 1. Networks
/// have 8 neurons of width 0.85; ACP uses alpha = alpha_0 = 0.01 and
/// gamma = 0.002. Offline collection uses circle, sine and spiral references.
EpisodeConfig case_study_config();

/// Same world with agent behaviours absent from the collection data, for
/// comparing inference modes.
EpisodeConfig novel_behavior_config();

}  // namespace safeinfer

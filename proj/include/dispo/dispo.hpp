#pragma once

// Desk-scale RLVR laboratory: decoupled importance-sampling policy
// optimization (DISPO) and its baseline family over synthetic verifiable
// tasks, with oracle-checked gradients throughout.

#include "dispo/advantage.hpp"
#include "dispo/config.hpp"
#include "dispo/experiment.hpp"
#include "dispo/metrics.hpp"
#include "dispo/objectives.hpp"
#include "dispo/policy.hpp"
#include "dispo/rng.hpp"
#include "dispo/rollout.hpp"
#include "dispo/sampler.hpp"
#include "dispo/task.hpp"
#include "dispo/trainer.hpp"
#include "dispo/vocab.hpp"

#pragma once

// Umbrella header: the whole library in one include.

#include "smx/errors.hpp"       // error taxonomy shared with the CLI
#include "smx/rng.hpp"          // deterministic RNG + hashing
#include "smx/tensor.hpp"       // dense row-major arrays
#include "smx/tape.hpp"         // reverse-mode autodiff
#include "smx/param_store.hpp"  // named parameters + optimizers
#include "smx/finite_diff.hpp"  // gradient audit
#include "smx/scene.hpp"        // scenes and transformations
#include "smx/render.hpp"       // raster renderer (domain A)
#include "smx/tokens.hpp"       // symbolic renderer (domain B)
#include "smx/dataset.hpp"      // generation, serialization, manifests
#include "smx/augment.hpp"      // reversal / transitivity / on-the-fly
#include "smx/encoders.hpp"     // per-domain encoders + fusion
#include "smx/objective.hpp"    // contrastive losses
#include "smx/trainer.hpp"      // regimes, training loop, checkpoints
#include "smx/retrieval.hpp"    // indexes, recall, baselines, matrix
#include "smx/experiment.hpp"   // experiment configs + CLI commands

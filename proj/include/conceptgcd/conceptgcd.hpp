#pragma once
// Umbrella header for the whole library.

#include "conceptgcd/binio.hpp"
#include "conceptgcd/checkpoint.hpp"
#include "conceptgcd/dataset.hpp"
#include "conceptgcd/errors.hpp"
#include "conceptgcd/eval.hpp"
#include "conceptgcd/gradcheck.hpp"
#include "conceptgcd/heads.hpp"
#include "conceptgcd/losses.hpp"
#include "conceptgcd/manifest.hpp"
#include "conceptgcd/matrix.hpp"
#include "conceptgcd/rng.hpp"
#include "conceptgcd/trainer.hpp"

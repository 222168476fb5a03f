#ifndef BLINDEQ_BLINDEQ_HPP
#define BLINDEQ_BLINDEQ_HPP

// Umbrella header for the blind-equalization library.

#include "blindeq/channels.hpp"
#include "blindeq/cli_config.hpp"
#include "blindeq/diff.hpp"
#include "blindeq/dsp.hpp"
#include "blindeq/elbo.hpp"
#include "blindeq/equalizers.hpp"
#include "blindeq/experiments.hpp"
#include "blindeq/gradcheck.hpp"
#include "blindeq/rng.hpp"
#include "blindeq/trainers.hpp"
#include "blindeq/vae_trainers.hpp"

#endif

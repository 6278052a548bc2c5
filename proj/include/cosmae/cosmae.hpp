#pragma once

// Umbrella header.

#include "cosmae/augment.hpp"
#include "cosmae/autodiff.hpp"
#include "cosmae/checkpoint.hpp"
#include "cosmae/config.hpp"
#include "cosmae/distill.hpp"
#include "cosmae/error.hpp"
#include "cosmae/eval.hpp"
#include "cosmae/io.hpp"
#include "cosmae/mae.hpp"
#include "cosmae/manifest.hpp"
#include "cosmae/metrics.hpp"
#include "cosmae/mixup.hpp"
#include "cosmae/nn.hpp"
#include "cosmae/optim.hpp"
#include "cosmae/rng.hpp"
#include "cosmae/sequence.hpp"
#include "cosmae/synth.hpp"
#include "cosmae/tensor.hpp"
#include "cosmae/trainer.hpp"

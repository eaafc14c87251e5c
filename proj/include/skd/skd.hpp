// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "skd/autodiff.hpp"
#include "skd/config.hpp"
#include "skd/corpus.hpp"
#include "skd/distill.hpp"
#include "skd/distribution.hpp"
#include "skd/divergence.hpp"
#include "skd/error.hpp"
#include "skd/eval.hpp"
#include "skd/lm.hpp"
#include "skd/optim.hpp"
#include "skd/rng.hpp"
#include "skd/runner.hpp"
#include "skd/sampler.hpp"

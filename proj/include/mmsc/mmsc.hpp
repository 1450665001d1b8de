#pragma once

#include "mmsc/autograd.hpp"
#include "mmsc/behavior.hpp"
#include "mmsc/coldstart.hpp"
#include "mmsc/config.hpp"
#include "mmsc/content.hpp"
#include "mmsc/errors.hpp"
#include "mmsc/eval.hpp"
#include "mmsc/fusion.hpp"
#include "mmsc/graph.hpp"
#include "mmsc/judge.hpp"
#include "mmsc/model.hpp"
#include "mmsc/optim.hpp"
#include "mmsc/rng.hpp"
#include "mmsc/sweep.hpp"
#include "mmsc/synth.hpp"
#include "mmsc/tensor.hpp"
#include "mmsc/trainer.hpp"

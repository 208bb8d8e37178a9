#pragma once

#include "pmmn/tensor.hpp"
#include "pmmn/params.hpp"
#include "pmmn/tape.hpp"
#include "pmmn/optim.hpp"
#include "pmmn/gradcheck.hpp"
#include "pmmn/io.hpp"
#include "pmmn/graph.hpp"
#include "pmmn/dataset.hpp"
#include "pmmn/prepare.hpp"
#include "pmmn/patterns.hpp"
#include "pmmn/gru.hpp"
#include "pmmn/gcmem.hpp"
#include "pmmn/model.hpp"
#include "pmmn/checkpoint.hpp"
#include "pmmn/metrics.hpp"
#include "pmmn/train.hpp"
#include "pmmn/synth.hpp"
#include "pmmn/config.hpp"
#include "pmmn/commands.hpp"

#pragma once

#include "pairlab/dataset.hpp"
#include "pairlab/diagnostics.hpp"
#include "pairlab/error.hpp"
#include "pairlab/experiment.hpp"
#include "pairlab/forward_models.hpp"
#include "pairlab/lbfgs.hpp"
#include "pairlab/linalg.hpp"
#include "pairlab/linear_pair.hpp"
#include "pairlab/lsi.hpp"
#include "pairlab/pair_model.hpp"
#include "pairlab/random.hpp"
#include "pairlab/tape.hpp"
#include "pairlab/train.hpp"

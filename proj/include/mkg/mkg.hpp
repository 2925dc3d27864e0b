#pragma once

#include "mkg/ensemble.hpp"
#include "mkg/error.hpp"
#include "mkg/eval.hpp"
#include "mkg/features.hpp"
#include "mkg/graph.hpp"
#include "mkg/io.hpp"
#include "mkg/kge.hpp"
#include "mkg/linalg.hpp"
#include "mkg/optim.hpp"
#include "mkg/random.hpp"
#include "mkg/stats.hpp"
#include "mkg/synth.hpp"

#pragma once

#include "rearm/common.hpp"
#include "rearm/dataset.hpp"
#include "rearm/graph.hpp"
#include "rearm/hetero.hpp"
#include "rearm/fusion.hpp"
#include "rearm/refine.hpp"
#include "rearm/model.hpp"
#include "rearm/eval.hpp"
#include "rearm/train.hpp"
#include "rearm/checkpoint.hpp"
#include "rearm/synthetic.hpp"
#include "rearm/config.hpp"
#include "rearm/runner.hpp"

#pragma once

#include "perlearn/common.hpp"
#include "perlearn/config.hpp"
#include "perlearn/container.hpp"
#include "perlearn/dataset.hpp"
#include "perlearn/density.hpp"
#include "perlearn/experiment.hpp"
#include "perlearn/idx.hpp"
#include "perlearn/linalg.hpp"
#include "perlearn/metrics.hpp"
#include "perlearn/model.hpp"
#include "perlearn/optim.hpp"
#include "perlearn/perturb.hpp"
#include "perlearn/protocol.hpp"
#include "perlearn/rng.hpp"

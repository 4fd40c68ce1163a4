#pragma once

#include "perfmpg/environments.hpp"
#include "perfmpg/equilibrium.hpp"
#include "perfmpg/errors.hpp"
#include "perfmpg/experiment.hpp"
#include "perfmpg/game.hpp"
#include "perfmpg/learners.hpp"
#include "perfmpg/occupancy_opt.hpp"
#include "perfmpg/oracle_verify.hpp"
#include "perfmpg/response.hpp"
#include "perfmpg/rng.hpp"
#include "perfmpg/run.hpp"
#include "perfmpg/sampling.hpp"
#include "perfmpg/serialization.hpp"

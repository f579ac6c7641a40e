#pragma once

#include "memnav/rl/ppo.hpp"
#include "memnav/rl/rewards.hpp"
#include "memnav/rl/rollout.hpp"
#include "memnav/rl/stages.hpp"
#include "memnav/rl/verify.hpp"

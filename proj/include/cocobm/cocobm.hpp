#pragma once
// Umbrella header for the library. The network backends are separate
// (cocobm/http_backends.hpp, pulled in by cocobm/commands.hpp).

#include "cocobm/core.hpp"
#include "cocobm/bank.hpp"
#include "cocobm/encoders.hpp"
#include "cocobm/prompts.hpp"
#include "cocobm/llm.hpp"
#include "cocobm/dataset.hpp"
#include "cocobm/embedding_cache.hpp"
#include "cocobm/model.hpp"
#include "cocobm/dictionary.hpp"
#include "cocobm/kmeans.hpp"
#include "cocobm/actions.hpp"
#include "cocobm/planner.hpp"
#include "cocobm/agent.hpp"
#include "cocobm/synthetic_world.hpp"
#include "cocobm/evaluate.hpp"
#include "cocobm/config.hpp"

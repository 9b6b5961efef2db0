#pragma once

// Umbrella header.

#include "chest/alias.hpp"
#include "chest/common.hpp"
#include "chest/curriculum.hpp"
#include "chest/embed.hpp"
#include "chest/eval.hpp"
#include "chest/hin.hpp"
#include "chest/io.hpp"
#include "chest/model.hpp"
#include "chest/pipeline.hpp"
#include "chest/stages.hpp"
#include "chest/subgraph.hpp"

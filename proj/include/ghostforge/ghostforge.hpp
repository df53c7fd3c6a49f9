// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ghostforge/analysis.hpp"
#include "ghostforge/arch.hpp"
#include "ghostforge/blocks.hpp"
#include "ghostforge/config.hpp"
#include "ghostforge/cost.hpp"
#include "ghostforge/ghost.hpp"
#include "ghostforge/gghost.hpp"
#include "ghostforge/model.hpp"
#include "ghostforge/module.hpp"
#include "ghostforge/ops.hpp"
#include "ghostforge/parallel.hpp"
#include "ghostforge/random.hpp"
#include "ghostforge/tensor.hpp"
#include "ghostforge/train.hpp"

#pragma once

/// @brief Umbrella header: the whole library in one include.

#include "tsselect/core_data.hpp"
#include "tsselect/error.hpp"
#include "tsselect/forecasters.hpp"
#include "tsselect/harness.hpp"
#include "tsselect/llm_client.hpp"
#include "tsselect/meta_features.hpp"
#include "tsselect/model_space.hpp"
#include "tsselect/performance_matrix.hpp"
#include "tsselect/prompting.hpp"
#include "tsselect/random.hpp"
#include "tsselect/selectors.hpp"

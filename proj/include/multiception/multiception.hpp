// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "multiception/accounting.hpp"
#include "multiception/batchnorm.hpp"
#include "multiception/bench.hpp"
#include "multiception/conv.hpp"
#include "multiception/data.hpp"
#include "multiception/errors.hpp"
#include "multiception/gemm.hpp"
#include "multiception/gradcheck.hpp"
#include "multiception/model.hpp"
#include "multiception/model_config.hpp"
#include "multiception/ops.hpp"
#include "multiception/plan.hpp"
#include "multiception/random.hpp"
#include "multiception/tensor.hpp"
#include "multiception/training.hpp"
#include "multiception/variants.hpp"
#include "multiception/verify.hpp"

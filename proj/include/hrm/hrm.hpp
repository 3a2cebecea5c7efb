// Copyright 2026 The hrm-vision Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "hrm/checkpoint.hpp"
#include "hrm/cnn.hpp"
#include "hrm/conv.hpp"
#include "hrm/data.hpp"
#include "hrm/error.hpp"
#include "hrm/experiment.hpp"
#include "hrm/hrm_model.hpp"
#include "hrm/nn.hpp"
#include "hrm/ops.hpp"
#include "hrm/optim.hpp"
#include "hrm/random.hpp"
#include "hrm/report.hpp"
#include "hrm/runtime.hpp"
#include "hrm/tensor.hpp"
